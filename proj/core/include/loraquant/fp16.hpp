#pragma once

#include <cstdint>

namespace loraquant {

// IEEE 754 binary16 <-> binary32 conversions. Narrowing uses
// round-to-nearest-even, including the subnormal range; values beyond the
// binary16 range saturate to infinity.
uint16_t fp16_from_float(float v);
float fp16_to_float(uint16_t h);

// Narrow-then-widen in one step: the value a binary16 store would decode to.
inline float fp16_round(float v) { return fp16_to_float(fp16_from_float(v)); }

// Smallest positive binary16 subnormal (2^-24).
inline constexpr float kFp16SmallestSubnormal = 5.9604644775390625e-8f;
// Largest finite binary16 value.
inline constexpr float kFp16Max = 65504.0f;

} // namespace loraquant
