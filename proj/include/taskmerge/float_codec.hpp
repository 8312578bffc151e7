// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace taskmerge {

// IEEE binary16 and bfloat16 codecs. Encoding rounds directly from double
// (round-to-nearest-even) so there is exactly one rounding step regardless of
// the source precision.

double half_to_double(std::uint16_t bits);
std::uint16_t double_to_half(double value);

double bf16_to_double(std::uint16_t bits);
std::uint16_t double_to_bf16(double value);

} // namespace taskmerge
