#include <cmath>
#include <cstdint>
#include <limits>

#include "doctest.h"
#include "loraquant/fp16.hpp"

using namespace loraquant;

TEST_CASE("every binary16 pattern survives a widen-narrow round trip") {
    for (uint32_t bits = 0; bits <= 0xffff; ++bits) {
        const uint16_t h = static_cast<uint16_t>(bits);
        const float f = fp16_to_float(h);
        if (std::isnan(f)) {
            // NaN payloads may change; the result must stay NaN.
            CHECK(std::isnan(fp16_to_float(fp16_from_float(f))));
        } else {
            CHECK(fp16_from_float(f) == h);
        }
    }
}

TEST_CASE("narrowing rounds to nearest even") {
    // Step above 1.0 is 2^-10; halfway points resolve to the even mantissa.
    CHECK(fp16_round(1.0f + 0x1.0p-11f) == 1.0f);
    CHECK(fp16_round(1.0f + 3.0f * 0x1.0p-11f) == 1.001953125f);
    CHECK(fp16_round(1.0f + 0x1.0p-10f) == 1.0009765625f);
    CHECK(fp16_to_float(fp16_from_float(4.0f / 3.0f)) == 1.3330078125f);
    CHECK(fp16_round(0.25f) == 0.25f);
    CHECK(fp16_round(2.5f) == 2.5f);
}

TEST_CASE("narrowing saturates to infinity past the binary16 range") {
    CHECK(fp16_round(65504.0f) == 65504.0f);
    CHECK(fp16_round(65519.0f) == 65504.0f);
    // 65520 is halfway between 65504 and the next step; even rounding
    // lands on 2^16, which overflows.
    CHECK(std::isinf(fp16_round(65520.0f)));
    CHECK(std::isinf(fp16_round(1e30f)));
    CHECK(fp16_round(-65519.0f) == -65504.0f);
    CHECK(std::isinf(fp16_round(-1e30f)));
    CHECK(fp16_round(std::numeric_limits<float>::infinity()) ==
          std::numeric_limits<float>::infinity());
}

TEST_CASE("subnormal range narrows correctly") {
    CHECK(fp16_round(kFp16SmallestSubnormal) == kFp16SmallestSubnormal);
    CHECK(fp16_to_float(1) == kFp16SmallestSubnormal);
    // Halfway below the smallest subnormal rounds to even zero.
    CHECK(fp16_round(kFp16SmallestSubnormal * 0.5f) == 0.0f);
    CHECK(fp16_round(kFp16SmallestSubnormal * 0.75f) == kFp16SmallestSubnormal);
    // Smallest normal, 2^-14.
    CHECK(fp16_round(6.103515625e-5f) == 6.103515625e-5f);
    CHECK(fp16_round(1e-12f) == 0.0f);
}

TEST_CASE("signed zero is preserved") {
    CHECK(fp16_from_float(-0.0f) == 0x8000);
    CHECK(fp16_from_float(0.0f) == 0x0000);
    CHECK(std::signbit(fp16_to_float(0x8000)));
    CHECK(!std::signbit(fp16_to_float(0x0000)));
}
