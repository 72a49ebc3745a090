#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loraquant/quantize.hpp"
#include "loraquant/ste.hpp"
#include "loraquant/svd.hpp"
#include "loraquant/tensor_store.hpp"

namespace loraquant {

// svd_ratio is the main method: SVD split at energy ratio rho, high sub-LoRA
// at bits_high RTN, low sub-LoRA binarized. The others are ablations and
// baselines sharing the same machinery:
//   svd_static_h  SVD split at a fixed h instead of an energy ratio
//   random_split  h native components chosen uniformly at random (seeded)
//   norm_split    h native components with the largest |b_i| * |a_i|
//   prune         SVD split, low sub-LoRA dropped instead of binarized
//   low_rtn1      SVD split, low sub-LoRA through 1-bit RTN instead of signs
//   baseline_rtn  whole factors through RTN at bits_high, no split
//   baseline_bin  whole factors binarized, no split
enum class Strategy {
    svd_ratio,
    svd_static_h,
    random_split,
    norm_split,
    prune,
    low_rtn1,
    baseline_rtn,
    baseline_bin,
};

const char *strategy_name(Strategy strategy);
Strategy strategy_from_name(const std::string &name);

struct QuantConfig {
    Strategy strategy = Strategy::svd_ratio;
    double rho = 0.9;
    // 2, 3 or 4; 16 is the debug escape hatch that stores the high pair
    // unquantized (binary32). baseline_rtn additionally accepts 1..8.
    int bits_high = 2;
    int bits_low = 1; // the low sub-LoRA is always 1 bit
    int64_t group_size = 128;
    int64_t opt_steps = 100;
    double learning_rate = 1e-3;
    uint64_t seed = 0;     // consumed only by random_split
    int64_t static_h = -1; // required by svd_static_h / random_split / norm_split
    GroupOrientation b_orientation = GroupOrientation::column;
    GroupOrientation a_orientation = GroupOrientation::row;

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    // Short human-readable tag, e.g. "2@0.9" for the default strategy.
    std::string label() const;
};

struct QuantizedAdapter {
    std::string layer_name;
    int64_t m = 0;
    int64_t n = 0;
    int64_t r = 0; // rank of the source adapter
    int64_t h = 0; // components kept at high precision
    // Absent pairs contribute nothing to the reconstruction: the low pair is
    // absent when h = r (and for prune), the high pair when h = 0.
    std::optional<QuantizedMatrix> B_high, A_high;
    std::optional<QuantizedMatrix> B_low, A_low;
    QuantConfig config;
};

// The main method (Algorithm: split, per-pair straight-through optimisation,
// group quantization). Honors cfg.strategy for the split flavour; baselines
// are rejected here (use baseline_quantize or quantize_adapter).
QuantizedAdapter quantize_lora(const LoraAdapter &adapter, const QuantConfig &cfg);

enum class BaselineMethod { rtn1, rtn2, bin };

// Direct group quantization of B and A with no split and no optimisation,
// h = r semantics.
QuantizedAdapter baseline_quantize(const LoraAdapter &adapter, BaselineMethod method,
                                   int64_t group_size);

// Dispatches on cfg.strategy across the main method, ablations and baselines.
QuantizedAdapter quantize_adapter(const LoraAdapter &adapter, const QuantConfig &cfg);

// Dequantized concatenated factor pair (C, D) with C (m x k), D (k x n) and
// reconstruction C * D. A fully empty adapter yields rank-1 zero factors.
std::pair<Matrix, Matrix> reconstruct_factors(const QuantizedAdapter &qa);
// The dense m x n reconstruction.
Matrix reconstruct_dense(const QuantizedAdapter &qa);

struct LayerError {
    std::string layer;
    int64_t m = 0, n = 0, r = 0, h = 0;
    double abs_error = 0.0;
    std::optional<double> rel_error; // absent when |B*A| = 0
    double avg_bits = 0.0;
};

struct ErrorReport {
    std::vector<LayerError> layers; // sorted by layer name
    double mean_abs_error = 0.0;
    double max_abs_error = 0.0;
    double mean_rel_error = 0.0; // over layers with a defined relative error
    double max_rel_error = 0.0;
    int64_t rel_layer_count = 0;
    double mean_h = 0.0;
    double avg_bits = 0.0; // aggregate: total stored bits / total weights
};

// || B*A - reconstruction ||_F without forming any m x n matrix: the
// difference of two low-rank products reduces to Gram matrices of the
// factors. Binary64 throughout.
double factored_error(const LoraAdapter &adapter, const QuantizedAdapter &qa);

ErrorReport measure_errors(std::span<const LoraAdapter> adapters,
                           std::span<const QuantizedAdapter> quantized);

// Quantizes every adapter of the container (sorted by layer name) with
// `threads` workers; results are bitwise independent of the thread count.
// threads <= 0 picks the hardware concurrency.
std::vector<QuantizedAdapter> quantize_container(const AdapterContainer &container,
                                                 const QuantConfig &cfg, int threads = 1);

struct CompareResult {
    QuantConfig config;
    ErrorReport report;
};

std::vector<CompareResult> compare_methods(const AdapterContainer &container,
                                           std::span<const QuantConfig> configs, int threads = 1);

} // namespace loraquant
