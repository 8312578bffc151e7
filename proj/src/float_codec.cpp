// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/float_codec.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace taskmerge {
namespace {

// Binary interchange format with `mantissa` stored fraction bits and
// `exponent` exponent bits (binary16: 10/5, bfloat16: 7/8).
struct Format {
    int mantissa;
    int exponent;

    int bias() const { return (1 << (exponent - 1)) - 1; }
    std::uint32_t exp_mask() const { return (1u << exponent) - 1; }
};

double decode(std::uint32_t bits, Format f) {
    const bool negative = (bits >> (f.mantissa + f.exponent)) & 1u;
    const std::uint32_t exp = (bits >> f.mantissa) & f.exp_mask();
    const std::uint32_t frac = bits & ((1u << f.mantissa) - 1);
    double magnitude;
    if (exp == f.exp_mask()) {
        magnitude = frac == 0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
    } else if (exp == 0) {
        magnitude = std::ldexp(static_cast<double>(frac), 1 - f.bias() - f.mantissa);
    } else {
        magnitude = std::ldexp(static_cast<double>(frac | (1u << f.mantissa)),
                               static_cast<int>(exp) - f.bias() - f.mantissa);
    }
    return negative ? -magnitude : magnitude;
}

std::uint32_t encode(double value, Format f) {
    const std::uint32_t sign = std::signbit(value) ? (1u << (f.mantissa + f.exponent)) : 0u;
    const std::uint32_t inf = f.exp_mask() << f.mantissa;
    if (std::isnan(value)) {
        return sign | inf | (1u << (f.mantissa - 1));
    }
    const double a = std::fabs(value);
    if (a == 0.0) {
        return sign;
    }
    if (std::isinf(a)) {
        return sign | inf;
    }

    const int emin = 1 - f.bias();
    const int emax = f.bias();
    int e2 = 0;
    std::frexp(a, &e2);
    int e = e2 - 1; // a = 1.f * 2^e

    // nearbyint follows the default rounding mode: nearest, ties to even.
    if (e < emin) {
        const double q = std::nearbyint(std::ldexp(a, f.mantissa - emin));
        // q == 2^mantissa carries into the smallest normal, which has the same encoding.
        return sign | static_cast<std::uint32_t>(q);
    }
    double q = std::nearbyint(std::ldexp(a, f.mantissa - e));
    if (q == std::ldexp(1.0, f.mantissa + 1)) {
        q = std::ldexp(1.0, f.mantissa);
        ++e;
    }
    if (e > emax) {
        return sign | inf;
    }
    const auto frac = static_cast<std::uint32_t>(q) - (1u << f.mantissa);
    return sign | (static_cast<std::uint32_t>(e + f.bias()) << f.mantissa) | frac;
}

constexpr Format kHalf{10, 5};
constexpr Format kBf16{7, 8};

} // namespace

double half_to_double(std::uint16_t bits) { return decode(bits, kHalf); }

std::uint16_t double_to_half(double value) { return static_cast<std::uint16_t>(encode(value, kHalf)); }

double bf16_to_double(std::uint16_t bits) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16));
}

std::uint16_t double_to_bf16(double value) { return static_cast<std::uint16_t>(encode(value, kBf16)); }

} // namespace taskmerge
