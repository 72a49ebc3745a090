#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loraquant/pipeline.hpp"

namespace loraquant {

// Stored-size accounting. Bits are counted semantically: a code costs exactly
// `bits` regardless of byte padding, a scale costs 16, an rtn zero point costs
// `bits`. avg_bits divides by the source adapter's parameter count r*(m+n),
// not by the number of stored values, so dropped components (prune) lower it.
struct LayerBits {
    std::string layer;
    int64_t m = 0, n = 0, r = 0, h = 0;
    int64_t weight_count = 0; // r * (m + n)
    int64_t code_bits = 0;
    int64_t scale_bits = 0;
    int64_t zero_point_bits = 0;

    int64_t total_bits() const { return code_bits + scale_bits + zero_point_bits; }
    double avg_bits() const {
        return weight_count == 0 ? 0.0
                                 : static_cast<double>(total_bits()) / static_cast<double>(weight_count);
    }
};

struct BitReport {
    std::vector<LayerBits> layers;
    int64_t total_weights = 0;
    int64_t total_code_bits = 0;
    int64_t total_scale_bits = 0;
    int64_t total_zero_point_bits = 0;

    int64_t total_bits() const { return total_code_bits + total_scale_bits + total_zero_point_bits; }
    double avg_bits() const {
        return total_weights == 0 ? 0.0
                                  : static_cast<double>(total_bits()) / static_cast<double>(total_weights);
    }
};

// Counts from the stored matrices' shapes and group layout.
LayerBits layer_bits(const QuantizedAdapter &qa);
BitReport bit_report(std::span<const QuantizedAdapter> adapters);

// Closed-form prediction from shapes alone, no quantization run. Must agree
// exactly with layer_bits of the corresponding quantized adapter.
struct LayerShape {
    std::string layer;
    int64_t m = 0, n = 0, r = 0, h = 0;
};
LayerBits predicted_layer_bits(const LayerShape &shape, const QuantConfig &cfg);
BitReport predicted_bit_report(std::span<const LayerShape> shapes, const QuantConfig &cfg);

// Independent re-count that walks every group of every stored matrix and sums
// its cost, cross-checking the packed byte-array lengths along the way.
// Throws std::invalid_argument if a buffer length disagrees with the walk.
int64_t payload_bit_walk(const QuantizedAdapter &qa);

// layer,weights,code_bits,scale_bits,zp_bits,avg_bits, one row per layer plus
// a TOTAL row (header only when the report is empty). Shortest round-trip
// number formatting.
std::string bit_report_csv(const BitReport &report);

// Memory for a pool of adapters served next to one base model:
//   fp16 bytes      = base + N * (2 * weights + overhead)
//   quantized bytes = base + N * (ceil(payload_bits / 8) + overhead)
struct ProjectionSpec {
    uint64_t base_model_bytes = 0;
    uint64_t adapter_weights = 0;      // parameters per adapter
    uint64_t adapter_payload_bits = 0; // stored bits per quantized adapter
    uint64_t per_adapter_overhead_bytes = 0;
};

struct ProjectionPoint {
    int64_t adapter_count = 0;
    uint64_t fp16_bytes = 0;
    uint64_t quantized_bytes = 0;
};

std::vector<ProjectionPoint> memory_projection(const ProjectionSpec &spec,
                                               std::span<const int64_t> adapter_counts);

// n_adapters,bytes_fp16,bytes_quantized
std::string memory_projection_csv(std::span<const ProjectionPoint> points);

// Shortest round-trip decimal rendering (std::to_chars).
std::string format_double(double value);

} // namespace loraquant
