// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace taskmerge {

/// Philox4x32-10 (Salmon et al., Random123). Stateless: each call maps a
/// 128-bit counter and 64-bit key to 128 random bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// 64-bit FNV-1a, used to fold stream labels and tensor names into counters.
std::uint64_t fnv1a64(std::string_view text);

/// Uniform double in [0, 1) for (seed, stream, index). The seed is the key;
/// the counter is {index lo, index hi, fnv1a64(stream) lo, fnv1a64(stream) hi}.
/// The top 53 bits of the first two output words form the mantissa.
double counter_uniform(std::uint64_t seed, std::string_view stream, std::uint64_t index);

/// Standard normal via Box-Muller on two consecutive counter draws
/// (indices 2*index and 2*index+1).
double counter_normal(std::uint64_t seed, std::string_view stream, std::uint64_t index);

} // namespace taskmerge
