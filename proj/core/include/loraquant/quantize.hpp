#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loraquant/matrix.hpp"

namespace loraquant {

// `raw` is the debug escape hatch: values stored as binary32 with no
// quantization at all (32 bits per element in the accounting).
enum class Scheme { rtn, binary, raw };

// Groups run along contiguous stretches of one line: down each column
// (`column`) or across each row (`row`). Groups never span lines; the last
// group of a line may be short.
enum class GroupOrientation { column, row };

// Affine round-to-nearest parameters for one group. The stored scale is
// binary16; codes and zero point live in [0, 2^bits - 1].
struct GroupRtnParams {
    uint16_t scale_fp16 = 0;
    int32_t zero_point = 0;
};

// Sign quantization parameters for one group: the scale is the group's mean
// absolute value (the Frobenius-optimal choice), stored as binary16.
struct GroupBinParams {
    uint16_t scale_fp16 = 0;
};

struct RtnGroup {
    std::vector<int32_t> codes;
    GroupRtnParams params;
};

struct BinGroup {
    std::vector<int8_t> signs; // +1 or -1, sign(0) = +1
    GroupBinParams params;
};

// Round-to-nearest quantization of one group, bits in [1, 8]:
//   S = max(max - min, 1e-12) / (2^bits - 1)
//   Z = clamp(round(-min / S), 0, 2^bits - 1)
//   code = clamp(round(v / S) + Z, 0, 2^bits - 1)
// Rounding is half away from zero. Codes are computed with the full-precision
// scale; the stored scale is its binary16 rounding (floored to the smallest
// positive binary16 subnormal so dequantization never divides by zero).
RtnGroup rtn_quantize(std::span<const float> values, int bits);

// S * (code - Z) per element, with the binary16-rounded stored scale.
std::vector<float> rtn_dequantize(std::span<const int32_t> codes, const GroupRtnParams &params,
                                  int bits);

BinGroup bin_quantize(std::span<const float> values);
std::vector<float> bin_dequantize(std::span<const int8_t> signs, const GroupBinParams &params);

// Codes packed LSB-first within each byte, little-endian across bytes; codes
// may straddle byte boundaries and the final byte is zero-padded. Codes must
// lie in [0, 2^bits) with bits in [1, 8].
std::vector<uint8_t> pack_bits(std::span<const int32_t> codes, int bits);
std::vector<int32_t> unpack_bits(std::span<const uint8_t> bytes, int bits, int64_t count);

struct QuantizedMatrix {
    int64_t rows = 0;
    int64_t cols = 0;
    Scheme scheme = Scheme::rtn;
    int bits = 2;
    int64_t group_size = 128;
    GroupOrientation orientation = GroupOrientation::column;

    // All codes of the matrix in one stream, line-major in group scan order.
    std::vector<uint8_t> packed_codes;
    // One binary16 scale per group, in scan order (empty for raw).
    std::vector<uint16_t> scales;
    // One zero point per group for rtn, in scan order (empty otherwise).
    std::vector<uint8_t> zero_points;

    int64_t line_count() const {
        return orientation == GroupOrientation::column ? cols : rows;
    }
    int64_t line_length() const {
        return orientation == GroupOrientation::column ? rows : cols;
    }
    int64_t groups_per_line() const { return (line_length() + group_size - 1) / group_size; }
    int64_t group_count() const {
        return scheme == Scheme::raw ? 0 : line_count() * groups_per_line();
    }
};

// Group-wise quantization of a whole matrix. binary requires bits == 1,
// rtn accepts bits in [1, 8], raw requires bits == 32.
QuantizedMatrix quantize_matrix(const Matrix &m, Scheme scheme, int bits, int64_t group_size,
                                GroupOrientation orientation);
Matrix dequantize_matrix(const QuantizedMatrix &q);

// Quantize-then-dequantize a vector treated as a single line with contiguous
// groups of `group_size`. This matches exactly what quantize_matrix does to
// one column (column orientation) or one row (row orientation).
std::vector<float> fake_quantize_vector(std::span<const float> values, Scheme scheme, int bits,
                                        int64_t group_size);

// Structural consistency of counts, packed length and parameter ranges;
// throws std::invalid_argument on violation.
void validate_quantized_matrix(const QuantizedMatrix &q);

} // namespace loraquant
