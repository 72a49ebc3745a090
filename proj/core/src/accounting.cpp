#include "loraquant/accounting.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace loraquant {

namespace {

struct MatrixBitCost {
    int64_t code = 0;
    int64_t scale = 0;
    int64_t zero_point = 0;
};

MatrixBitCost matrix_cost(int64_t rows, int64_t cols, Scheme scheme, int bits, int64_t group_size,
                          GroupOrientation orientation) {
    MatrixBitCost cost;
    if (rows == 0 || cols == 0) return cost;
    if (scheme == Scheme::raw) {
        cost.code = rows * cols * 32;
        return cost;
    }
    const int64_t lines = orientation == GroupOrientation::column ? cols : rows;
    const int64_t line_length = orientation == GroupOrientation::column ? rows : cols;
    const int64_t groups = lines * ((line_length + group_size - 1) / group_size);
    cost.code = rows * cols * bits;
    cost.scale = groups * 16;
    if (scheme == Scheme::rtn) cost.zero_point = groups * bits;
    return cost;
}

void add_cost(LayerBits &bits, const MatrixBitCost &cost) {
    bits.code_bits += cost.code;
    bits.scale_bits += cost.scale;
    bits.zero_point_bits += cost.zero_point;
}

BitReport accumulate(std::vector<LayerBits> layers) {
    BitReport report;
    for (const LayerBits &l : layers) {
        report.total_weights += l.weight_count;
        report.total_code_bits += l.code_bits;
        report.total_scale_bits += l.scale_bits;
        report.total_zero_point_bits += l.zero_point_bits;
    }
    report.layers = std::move(layers);
    return report;
}

// Per-group walk of one stored matrix; throws if a buffer length disagrees.
MatrixBitCost walk_matrix(const QuantizedMatrix &q, const std::string &layer) {
    MatrixBitCost cost;
    if (q.scheme == Scheme::raw) {
        if (static_cast<int64_t>(q.packed_codes.size()) != q.rows * q.cols * 4)
            throw std::invalid_argument("payload walk: raw byte count mismatch in '" + layer + "'");
        cost.code = static_cast<int64_t>(q.packed_codes.size()) * 8;
        return cost;
    }
    int64_t groups = 0;
    for (int64_t line = 0; line < q.line_count(); ++line) {
        for (int64_t pos = 0; pos < q.line_length(); pos += q.group_size) {
            const int64_t len = std::min(q.group_size, q.line_length() - pos);
            cost.code += len * q.bits;
            cost.scale += 16;
            if (q.scheme == Scheme::rtn) cost.zero_point += q.bits;
            ++groups;
        }
    }
    if (static_cast<int64_t>(q.packed_codes.size()) != (cost.code + 7) / 8)
        throw std::invalid_argument("payload walk: packed code bytes mismatch in '" + layer + "'");
    if (static_cast<int64_t>(q.scales.size()) != groups)
        throw std::invalid_argument("payload walk: scale count mismatch in '" + layer + "'");
    // In memory each group's zero point occupies one byte; the container
    // packs them down to `bits` on write, which is what zero_point_bits counts.
    const int64_t zp_count = q.scheme == Scheme::rtn ? groups : 0;
    if (static_cast<int64_t>(q.zero_points.size()) != zp_count)
        throw std::invalid_argument("payload walk: zero point count mismatch in '" + layer + "'");
    return cost;
}

} // namespace

LayerBits layer_bits(const QuantizedAdapter &qa) {
    LayerBits bits;
    bits.layer = qa.layer_name;
    bits.m = qa.m;
    bits.n = qa.n;
    bits.r = qa.r;
    bits.h = qa.h;
    bits.weight_count = qa.r * (qa.m + qa.n);
    for (const auto &mat : {qa.B_high, qa.A_high, qa.B_low, qa.A_low})
        if (mat)
            add_cost(bits, matrix_cost(mat->rows, mat->cols, mat->scheme, mat->bits,
                                       mat->group_size, mat->orientation));
    return bits;
}

BitReport bit_report(std::span<const QuantizedAdapter> adapters) {
    std::vector<LayerBits> layers;
    layers.reserve(adapters.size());
    for (const QuantizedAdapter &qa : adapters) layers.push_back(layer_bits(qa));
    return accumulate(std::move(layers));
}

LayerBits predicted_layer_bits(const LayerShape &shape, const QuantConfig &cfg) {
    cfg.validate();
    if (shape.m < 1 || shape.n < 1 || shape.r < 1)
        throw std::invalid_argument("predicted_layer_bits: dimensions must be positive");
    if (shape.h < 0 || shape.h > shape.r)
        throw std::invalid_argument("predicted_layer_bits: h outside [0, r]");

    LayerBits bits;
    bits.layer = shape.layer;
    bits.m = shape.m;
    bits.n = shape.n;
    bits.r = shape.r;
    bits.h = shape.h;
    bits.weight_count = shape.r * (shape.m + shape.n);

    const bool baseline =
        cfg.strategy == Strategy::baseline_rtn || cfg.strategy == Strategy::baseline_bin;
    if (baseline) {
        const Scheme scheme =
            cfg.strategy == Strategy::baseline_bin ? Scheme::binary : Scheme::rtn;
        const int b = cfg.strategy == Strategy::baseline_bin ? 1 : cfg.bits_high;
        add_cost(bits, matrix_cost(shape.m, shape.r, scheme, b, cfg.group_size, cfg.b_orientation));
        add_cost(bits, matrix_cost(shape.r, shape.n, scheme, b, cfg.group_size, cfg.a_orientation));
        return bits;
    }

    const Scheme high = cfg.bits_high == 16 ? Scheme::raw : Scheme::rtn;
    const int high_bits = cfg.bits_high == 16 ? 32 : cfg.bits_high;
    add_cost(bits,
             matrix_cost(shape.m, shape.h, high, high_bits, cfg.group_size, cfg.b_orientation));
    add_cost(bits,
             matrix_cost(shape.h, shape.n, high, high_bits, cfg.group_size, cfg.a_orientation));
    if (cfg.strategy != Strategy::prune) {
        const Scheme low = cfg.strategy == Strategy::low_rtn1 ? Scheme::rtn : Scheme::binary;
        const int64_t rest = shape.r - shape.h;
        add_cost(bits, matrix_cost(shape.m, rest, low, 1, cfg.group_size, cfg.b_orientation));
        add_cost(bits, matrix_cost(rest, shape.n, low, 1, cfg.group_size, cfg.a_orientation));
    }
    return bits;
}

BitReport predicted_bit_report(std::span<const LayerShape> shapes, const QuantConfig &cfg) {
    std::vector<LayerBits> layers;
    layers.reserve(shapes.size());
    for (const LayerShape &s : shapes) layers.push_back(predicted_layer_bits(s, cfg));
    return accumulate(std::move(layers));
}

int64_t payload_bit_walk(const QuantizedAdapter &qa) {
    int64_t total = 0;
    for (const auto &mat : {qa.B_high, qa.A_high, qa.B_low, qa.A_low})
        if (mat) {
            const MatrixBitCost c = walk_matrix(*mat, qa.layer_name);
            total += c.code + c.scale + c.zero_point;
        }
    return total;
}

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

std::string bit_report_csv(const BitReport &report) {
    std::string csv = "layer,weights,code_bits,scale_bits,zp_bits,avg_bits\n";
    auto row = [&csv](const std::string &layer, int64_t weights, int64_t code, int64_t scale,
                      int64_t zp, double avg) {
        csv += layer;
        for (int64_t v : {weights, code, scale, zp}) csv += "," + std::to_string(v);
        csv += "," + format_double(avg) + "\n";
    };
    for (const LayerBits &l : report.layers)
        row(l.layer, l.weight_count, l.code_bits, l.scale_bits, l.zero_point_bits, l.avg_bits());
    if (!report.layers.empty())
        row("TOTAL", report.total_weights, report.total_code_bits, report.total_scale_bits,
            report.total_zero_point_bits, report.avg_bits());
    return csv;
}

std::vector<ProjectionPoint> memory_projection(const ProjectionSpec &spec,
                                               std::span<const int64_t> adapter_counts) {
    std::vector<ProjectionPoint> points;
    points.reserve(adapter_counts.size());
    const uint64_t fp16_per_adapter = 2 * spec.adapter_weights + spec.per_adapter_overhead_bytes;
    const uint64_t quant_per_adapter =
        (spec.adapter_payload_bits + 7) / 8 + spec.per_adapter_overhead_bytes;
    for (int64_t count : adapter_counts) {
        if (count < 0) throw std::invalid_argument("memory_projection: negative adapter count");
        ProjectionPoint p;
        p.adapter_count = count;
        p.fp16_bytes = spec.base_model_bytes + static_cast<uint64_t>(count) * fp16_per_adapter;
        p.quantized_bytes =
            spec.base_model_bytes + static_cast<uint64_t>(count) * quant_per_adapter;
        points.push_back(p);
    }
    return points;
}

std::string memory_projection_csv(std::span<const ProjectionPoint> points) {
    std::string csv = "n_adapters,bytes_fp16,bytes_quantized\n";
    for (const ProjectionPoint &p : points)
        csv += std::to_string(p.adapter_count) + "," + std::to_string(p.fp16_bytes) + "," +
               std::to_string(p.quantized_bytes) + "\n";
    return csv;
}

} // namespace loraquant
