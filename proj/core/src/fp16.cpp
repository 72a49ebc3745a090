#include "loraquant/fp16.hpp"

#include <bit>

namespace loraquant {

uint16_t fp16_from_float(float v) {
    const uint32_t x = std::bit_cast<uint32_t>(v);
    const uint16_t sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
    const int32_t exp = static_cast<int32_t>((x >> 23) & 0xffu);
    uint32_t mant = x & 0x7fffffu;

    if (exp == 0xff) { // inf / nan, keep a nan payload bit so nan stays nan
        if (mant == 0) return static_cast<uint16_t>(sign | 0x7c00u);
        return static_cast<uint16_t>(sign | 0x7c00u | 0x200u | (mant >> 13));
    }

    const int32_t e = exp - 127 + 15;
    if (e >= 31) return static_cast<uint16_t>(sign | 0x7c00u); // overflow -> inf
    if (e <= 0) {
        // Subnormal target (or underflow to zero). Shift the full significand
        // right and round to nearest even on the dropped bits.
        if (e < -10) return sign;
        mant |= 0x800000u;
        const uint32_t shift = static_cast<uint32_t>(14 - e); // in [14, 24]
        uint32_t half = mant >> shift;
        const uint32_t rem = mant & ((1u << shift) - 1u);
        const uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half & 1u))) half++;
        // A carry out of the mantissa lands on the smallest normal, which is
        // exactly the right encoding.
        return static_cast<uint16_t>(sign | half);
    }

    uint16_t half = static_cast<uint16_t>((e << 10) | (mant >> 13));
    const uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) half++; // carry may bump the exponent
    return static_cast<uint16_t>(sign | half);
}

float fp16_to_float(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t e = (h >> 10) & 0x1fu;
    uint32_t m = h & 0x3ffu;

    if (e == 0) {
        if (m == 0) return std::bit_cast<float>(sign); // +-0
        // Subnormal: normalise the mantissa into an implicit leading one.
        int32_t exp32 = 127 - 15 + 1;
        while ((m & 0x400u) == 0) {
            m <<= 1;
            exp32--;
        }
        m &= 0x3ffu;
        return std::bit_cast<float>(sign | (static_cast<uint32_t>(exp32) << 23) | (m << 13));
    }
    if (e == 31) {
        return std::bit_cast<float>(sign | 0x7f800000u | (m << 13)); // inf / nan
    }
    return std::bit_cast<float>(sign | ((e - 15 + 127) << 23) | (m << 13));
}

} // namespace loraquant
