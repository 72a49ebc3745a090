#include "loraquant/quantize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "loraquant/fp16.hpp"

namespace loraquant {

namespace {

constexpr float kRangeEpsilon = 1e-12f;

int32_t qmax_for(int bits) { return (1 << bits) - 1; }

uint16_t store_scale(float s) {
    // Saturate instead of overflowing to inf, floor instead of flushing to
    // zero: dequantization divides by nothing, but a zero scale would make
    // requantization divide by zero.
    s = std::min(s, kFp16Max);
    uint16_t bits = fp16_from_float(s);
    if (fp16_to_float(bits) == 0.0f) bits = fp16_from_float(kFp16SmallestSubnormal);
    return bits;
}

void check_group_input(std::span<const float> values) {
    if (values.empty()) throw std::invalid_argument("quantize: empty group");
    for (float v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("quantize: non-finite value");
    }
}

} // namespace

RtnGroup rtn_quantize(std::span<const float> values, int bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("rtn_quantize: bits outside [1, 8]");
    check_group_input(values);

    float lo = values[0], hi = values[0];
    for (float v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const int32_t qmax = qmax_for(bits);
    const float scale = std::max(hi - lo, kRangeEpsilon) / static_cast<float>(qmax);

    RtnGroup out;
    out.params.scale_fp16 = store_scale(scale);
    out.params.zero_point = static_cast<int32_t>(std::clamp<long>(
        std::lround(-static_cast<double>(lo) / scale), 0L, static_cast<long>(qmax)));

    out.codes.resize(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        const long code = std::lround(static_cast<double>(values[i]) / scale) +
                          out.params.zero_point;
        out.codes[i] = static_cast<int32_t>(std::clamp<long>(code, 0L, static_cast<long>(qmax)));
    }
    return out;
}

std::vector<float> rtn_dequantize(std::span<const int32_t> codes, const GroupRtnParams &params,
                                  int bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("rtn_dequantize: bits outside [1, 8]");
    const int32_t qmax = qmax_for(bits);
    if (params.zero_point < 0 || params.zero_point > qmax) {
        throw std::invalid_argument("rtn_dequantize: zero point out of range");
    }
    const float scale = fp16_to_float(params.scale_fp16);
    std::vector<float> out(codes.size());
    for (size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] < 0 || codes[i] > qmax) {
            throw std::invalid_argument("rtn_dequantize: code out of range");
        }
        out[i] = scale * static_cast<float>(codes[i] - params.zero_point);
    }
    return out;
}

BinGroup bin_quantize(std::span<const float> values) {
    check_group_input(values);
    double acc = 0.0;
    for (float v : values) acc += std::abs(static_cast<double>(v));
    const float scale = static_cast<float>(acc / static_cast<double>(values.size()));

    BinGroup out;
    out.params.scale_fp16 = fp16_from_float(std::min(scale, kFp16Max));
    out.signs.resize(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        out.signs[i] = values[i] >= 0.0f ? int8_t{1} : int8_t{-1}; // sign(0) = +1
    }
    return out;
}

std::vector<float> bin_dequantize(std::span<const int8_t> signs, const GroupBinParams &params) {
    const float scale = fp16_to_float(params.scale_fp16);
    std::vector<float> out(signs.size());
    for (size_t i = 0; i < signs.size(); ++i) {
        if (signs[i] != 1 && signs[i] != -1) {
            throw std::invalid_argument("bin_dequantize: sign not +-1");
        }
        out[i] = signs[i] > 0 ? scale : -scale;
    }
    return out;
}

std::vector<uint8_t> pack_bits(std::span<const int32_t> codes, int bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("pack_bits: bits outside [1, 8]");
    const int32_t limit = 1 << bits;
    std::vector<uint8_t> out((codes.size() * static_cast<size_t>(bits) + 7) / 8, 0);
    size_t pos = 0;
    for (int32_t c : codes) {
        if (c < 0 || c >= limit) throw std::invalid_argument("pack_bits: code out of range");
        const size_t byte = pos >> 3;
        const unsigned off = pos & 7u;
        out[byte] = static_cast<uint8_t>(out[byte] | ((static_cast<uint32_t>(c) << off) & 0xffu));
        if (off + static_cast<unsigned>(bits) > 8) {
            out[byte + 1] =
                static_cast<uint8_t>(out[byte + 1] | (static_cast<uint32_t>(c) >> (8 - off)));
        }
        pos += static_cast<size_t>(bits);
    }
    return out;
}

std::vector<int32_t> unpack_bits(std::span<const uint8_t> bytes, int bits, int64_t count) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("unpack_bits: bits outside [1, 8]");
    if (count < 0) throw std::invalid_argument("unpack_bits: negative count");
    const size_t need = (static_cast<size_t>(count) * static_cast<size_t>(bits) + 7) / 8;
    if (bytes.size() < need) throw std::invalid_argument("unpack_bits: truncated byte array");

    std::vector<int32_t> out(static_cast<size_t>(count));
    const uint32_t mask = (1u << bits) - 1u;
    size_t pos = 0;
    for (int64_t i = 0; i < count; ++i) {
        const size_t byte = pos >> 3;
        const unsigned off = pos & 7u;
        uint32_t v = static_cast<uint32_t>(bytes[byte]) >> off;
        if (off + static_cast<unsigned>(bits) > 8) {
            v |= static_cast<uint32_t>(bytes[byte + 1]) << (8 - off);
        }
        out[static_cast<size_t>(i)] = static_cast<int32_t>(v & mask);
        pos += static_cast<size_t>(bits);
    }
    return out;
}

namespace {

// Visit each (line, group) of the scan order with a gather/scatter buffer.
template <typename Fn>
void for_each_group(int64_t rows, int64_t cols, GroupOrientation orientation, int64_t group_size,
                    Fn &&fn) {
    const bool by_column = orientation == GroupOrientation::column;
    const int64_t lines = by_column ? cols : rows;
    const int64_t line_len = by_column ? rows : cols;
    for (int64_t line = 0; line < lines; ++line) {
        for (int64_t start = 0; start < line_len; start += group_size) {
            const int64_t len = std::min(group_size, line_len - start);
            fn(line, start, len);
        }
    }
}

size_t element_index(int64_t rows, int64_t cols, GroupOrientation orientation, int64_t line,
                     int64_t pos) {
    (void)rows;
    if (orientation == GroupOrientation::column) {
        return static_cast<size_t>(pos * cols + line); // element (pos, line)
    }
    return static_cast<size_t>(line * cols + pos); // element (line, pos)
}

std::vector<uint8_t> raw_bytes(const Matrix &m) {
    std::vector<uint8_t> out;
    out.reserve(m.values.size() * 4);
    for (float v : m.values) {
        const uint32_t bits = std::bit_cast<uint32_t>(v);
        out.push_back(static_cast<uint8_t>(bits));
        out.push_back(static_cast<uint8_t>(bits >> 8));
        out.push_back(static_cast<uint8_t>(bits >> 16));
        out.push_back(static_cast<uint8_t>(bits >> 24));
    }
    return out;
}

} // namespace

QuantizedMatrix quantize_matrix(const Matrix &m, Scheme scheme, int bits, int64_t group_size,
                                GroupOrientation orientation) {
    if (m.rows < 1 || m.cols < 1) throw std::invalid_argument("quantize_matrix: empty matrix");
    if (group_size < 1) throw std::invalid_argument("quantize_matrix: group_size must be >= 1");
    require_finite(m, "quantize_matrix input");

    QuantizedMatrix q;
    q.rows = m.rows;
    q.cols = m.cols;
    q.scheme = scheme;
    q.bits = bits;
    q.group_size = group_size;
    q.orientation = orientation;

    if (scheme == Scheme::raw) {
        if (bits != 32) throw std::invalid_argument("quantize_matrix: raw scheme requires 32 bits");
        q.packed_codes = raw_bytes(m);
        return q;
    }
    if (scheme == Scheme::binary && bits != 1) {
        throw std::invalid_argument("quantize_matrix: binary scheme requires 1 bit");
    }
    if (scheme == Scheme::rtn && (bits < 1 || bits > 8)) {
        throw std::invalid_argument("quantize_matrix: rtn bits outside [1, 8]");
    }

    std::vector<int32_t> all_codes;
    all_codes.reserve(static_cast<size_t>(m.size()));
    std::vector<float> buf;

    for_each_group(m.rows, m.cols, orientation, group_size,
                   [&](int64_t line, int64_t start, int64_t len) {
        buf.resize(static_cast<size_t>(len));
        for (int64_t k = 0; k < len; ++k) {
            buf[static_cast<size_t>(k)] =
                m.values[element_index(m.rows, m.cols, orientation, line, start + k)];
        }
        if (scheme == Scheme::rtn) {
            RtnGroup g = rtn_quantize(buf, bits);
            all_codes.insert(all_codes.end(), g.codes.begin(), g.codes.end());
            q.scales.push_back(g.params.scale_fp16);
            q.zero_points.push_back(static_cast<uint8_t>(g.params.zero_point));
        } else {
            BinGroup g = bin_quantize(buf);
            for (int8_t s : g.signs) all_codes.push_back(s > 0 ? 1 : 0);
            q.scales.push_back(g.params.scale_fp16);
        }
    });

    q.packed_codes = pack_bits(all_codes, bits);
    return q;
}

Matrix dequantize_matrix(const QuantizedMatrix &q) {
    validate_quantized_matrix(q);
    Matrix m(q.rows, q.cols);

    if (q.scheme == Scheme::raw) {
        for (size_t i = 0; i < m.values.size(); ++i) {
            const uint8_t *p = &q.packed_codes[4 * i];
            const uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                                  (static_cast<uint32_t>(p[2]) << 16) |
                                  (static_cast<uint32_t>(p[3]) << 24);
            m.values[i] = std::bit_cast<float>(bits);
        }
        return m;
    }

    const std::vector<int32_t> codes = unpack_bits(q.packed_codes, q.bits, q.rows * q.cols);
    size_t cursor = 0;
    size_t group = 0;
    for_each_group(q.rows, q.cols, q.orientation, q.group_size,
                   [&](int64_t line, int64_t start, int64_t len) {
        std::vector<float> vals;
        if (q.scheme == Scheme::rtn) {
            GroupRtnParams params{q.scales[group], q.zero_points[group]};
            vals = rtn_dequantize(std::span(codes).subspan(cursor, static_cast<size_t>(len)),
                                  params, q.bits);
        } else {
            std::vector<int8_t> signs(static_cast<size_t>(len));
            for (int64_t k = 0; k < len; ++k) {
                signs[static_cast<size_t>(k)] =
                    codes[cursor + static_cast<size_t>(k)] != 0 ? int8_t{1} : int8_t{-1};
            }
            vals = bin_dequantize(signs, GroupBinParams{q.scales[group]});
        }
        for (int64_t k = 0; k < len; ++k) {
            m.values[element_index(q.rows, q.cols, q.orientation, line, start + k)] =
                vals[static_cast<size_t>(k)];
        }
        cursor += static_cast<size_t>(len);
        group++;
    });
    return m;
}

std::vector<float> fake_quantize_vector(std::span<const float> values, Scheme scheme, int bits,
                                        int64_t group_size) {
    if (group_size < 1) throw std::invalid_argument("fake_quantize_vector: group_size must be >= 1");
    std::vector<float> out(values.size());
    if (scheme == Scheme::raw) {
        std::copy(values.begin(), values.end(), out.begin());
        return out;
    }
    for (size_t start = 0; start < values.size(); start += static_cast<size_t>(group_size)) {
        const size_t len = std::min(static_cast<size_t>(group_size), values.size() - start);
        const std::span<const float> group = values.subspan(start, len);
        std::vector<float> deq;
        if (scheme == Scheme::rtn) {
            RtnGroup g = rtn_quantize(group, bits);
            deq = rtn_dequantize(g.codes, g.params, bits);
        } else {
            BinGroup g = bin_quantize(group);
            deq = bin_dequantize(g.signs, g.params);
        }
        std::copy(deq.begin(), deq.end(), out.begin() + static_cast<int64_t>(start));
    }
    return out;
}

void validate_quantized_matrix(const QuantizedMatrix &q) {
    if (q.rows < 1 || q.cols < 1) throw std::invalid_argument("quantized matrix: empty shape");
    if (q.group_size < 1) throw std::invalid_argument("quantized matrix: bad group size");

    if (q.scheme == Scheme::raw) {
        if (q.bits != 32) throw std::invalid_argument("quantized matrix: raw scheme requires 32 bits");
        if (q.packed_codes.size() != static_cast<size_t>(q.rows * q.cols) * 4) {
            throw std::invalid_argument("quantized matrix: corrupt raw payload size");
        }
        if (!q.scales.empty() || !q.zero_points.empty()) {
            throw std::invalid_argument("quantized matrix: raw scheme carries no group params");
        }
        return;
    }

    if (q.scheme == Scheme::binary && q.bits != 1) {
        throw std::invalid_argument("quantized matrix: binary scheme requires 1 bit");
    }
    if (q.bits < 1 || q.bits > 8) throw std::invalid_argument("quantized matrix: bits outside [1, 8]");

    const size_t want_packed =
        (static_cast<size_t>(q.rows * q.cols) * static_cast<size_t>(q.bits) + 7) / 8;
    if (q.packed_codes.size() != want_packed) {
        throw std::invalid_argument("quantized matrix: corrupt packed code size");
    }
    const size_t groups = static_cast<size_t>(q.group_count());
    if (q.scales.size() != groups) {
        throw std::invalid_argument("quantized matrix: scale count differs from group count");
    }
    if (q.scheme == Scheme::rtn) {
        if (q.zero_points.size() != groups) {
            throw std::invalid_argument("quantized matrix: zero point count differs from group count");
        }
        const int32_t qmax = qmax_for(q.bits);
        for (uint8_t z : q.zero_points) {
            if (static_cast<int32_t>(z) > qmax) {
                throw std::invalid_argument("quantized matrix: zero point out of range");
            }
        }
    } else if (!q.zero_points.empty()) {
        throw std::invalid_argument("quantized matrix: binary scheme carries no zero points");
    }
}

} // namespace loraquant
