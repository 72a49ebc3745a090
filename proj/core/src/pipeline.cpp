#include "loraquant/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string_view>
#include <thread>
#include <utility>

#include "loraquant/accounting.hpp"

namespace loraquant {

namespace {

constexpr std::pair<Strategy, const char *> kStrategyNames[] = {
    {Strategy::svd_ratio, "svd_ratio"},       {Strategy::svd_static_h, "svd_static_h"},
    {Strategy::random_split, "random_split"}, {Strategy::norm_split, "norm_split"},
    {Strategy::prune, "prune"},               {Strategy::low_rtn1, "low_rtn1"},
    {Strategy::baseline_rtn, "baseline_rtn"}, {Strategy::baseline_bin, "baseline_bin"},
};

bool uses_rho(Strategy s) {
    return s == Strategy::svd_ratio || s == Strategy::prune || s == Strategy::low_rtn1;
}

bool uses_static_h(Strategy s) {
    return s == Strategy::svd_static_h || s == Strategy::random_split || s == Strategy::norm_split;
}

bool is_baseline(Strategy s) {
    return s == Strategy::baseline_rtn || s == Strategy::baseline_bin;
}

Scheme high_scheme(const QuantConfig &cfg) {
    return cfg.bits_high == 16 ? Scheme::raw : Scheme::rtn;
}

int high_storage_bits(const QuantConfig &cfg) { return cfg.bits_high == 16 ? 32 : cfg.bits_high; }

Scheme low_scheme(const QuantConfig &cfg) {
    return cfg.strategy == Strategy::low_rtn1 ? Scheme::rtn : Scheme::binary;
}

uint64_t fnv1a(std::string_view s) {
    uint64_t hash = 14695981039346656037ull;
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::vector<int64_t> iota_indices(int64_t n) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    return idx;
}

// Uniform h-subset of [0, r), a deterministic function of (seed, layer name).
// std::uniform_int_distribution is implementation-defined, so the draw uses
// the raw engine output directly.
std::vector<int64_t> random_indices(int64_t r, int64_t h, uint64_t seed,
                                    const std::string &layer_name) {
    std::mt19937_64 rng(fnv1a(layer_name) ^ (seed + 0x9e3779b97f4a7c15ull));
    std::vector<int64_t> idx = iota_indices(r);
    for (int64_t i = 0; i < h; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng() % static_cast<uint64_t>(r - i));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(h));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Largest |b_i|_2 * |a_i|_2 components; ties resolved toward the lower index.
std::vector<int64_t> norm_indices(const LoraAdapter &adapter, int64_t h) {
    const int64_t r = adapter.rank();
    std::vector<double> importance(static_cast<size_t>(r), 0.0);
    for (int64_t i = 0; i < r; ++i) {
        double bn = 0.0;
        for (int64_t row = 0; row < adapter.m(); ++row) {
            const double v = adapter.B.at(row, i);
            bn += v * v;
        }
        double an = 0.0;
        for (int64_t col = 0; col < adapter.n(); ++col) {
            const double v = adapter.A.at(i, col);
            an += v * v;
        }
        importance[static_cast<size_t>(i)] = std::sqrt(bn) * std::sqrt(an);
    }
    std::vector<int64_t> idx = iota_indices(r);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return importance[static_cast<size_t>(a)] > importance[static_cast<size_t>(b)];
    });
    idx.resize(static_cast<size_t>(h));
    std::sort(idx.begin(), idx.end());
    return idx;
}

Matrix select_columns(const Matrix &m, std::span<const int64_t> idx) {
    Matrix out(m.rows, static_cast<int64_t>(idx.size()));
    for (int64_t i = 0; i < m.rows; ++i)
        for (size_t k = 0; k < idx.size(); ++k)
            out.at(i, static_cast<int64_t>(k)) = m.at(i, idx[k]);
    return out;
}

Matrix select_rows(const Matrix &m, std::span<const int64_t> idx) {
    Matrix out(static_cast<int64_t>(idx.size()), m.cols);
    for (size_t k = 0; k < idx.size(); ++k)
        for (int64_t j = 0; j < m.cols; ++j) out.at(static_cast<int64_t>(k), j) = m.at(idx[k], j);
    return out;
}

std::vector<int64_t> complement_indices(int64_t r, std::span<const int64_t> selected) {
    std::vector<int64_t> rest;
    rest.reserve(static_cast<size_t>(r) - selected.size());
    size_t k = 0;
    for (int64_t i = 0; i < r; ++i) {
        if (k < selected.size() && selected[k] == i) {
            ++k;
        } else {
            rest.push_back(i);
        }
    }
    return rest;
}

// Splits on native components (no SVD): the selected columns of B / rows of A
// become the high sub-LoRA as they are.
SubLoraSplit native_split(const LoraAdapter &adapter, std::span<const int64_t> selected) {
    const std::vector<int64_t> rest = complement_indices(adapter.rank(), selected);
    SubLoraSplit split;
    split.h = static_cast<int64_t>(selected.size());
    split.B_high = select_columns(adapter.B, selected);
    split.A_high = select_rows(adapter.A, selected);
    split.B_low = select_columns(adapter.B, rest);
    split.A_low = select_rows(adapter.A, rest);
    return split;
}

int64_t checked_static_h(const LoraAdapter &adapter, const QuantConfig &cfg) {
    if (cfg.static_h > adapter.rank())
        throw std::invalid_argument("static_h " + std::to_string(cfg.static_h) +
                                    " exceeds rank of layer '" + adapter.layer_name + "'");
    return cfg.static_h;
}

SubLoraSplit make_split(const LoraAdapter &adapter, const QuantConfig &cfg) {
    switch (cfg.strategy) {
    case Strategy::svd_ratio:
    case Strategy::prune:
    case Strategy::low_rtn1:
        return split_subloras(adapter, cfg.rho);
    case Strategy::svd_static_h:
        return split_subloras_static(adapter, checked_static_h(adapter, cfg));
    case Strategy::random_split:
        return native_split(
            adapter, random_indices(adapter.rank(), checked_static_h(adapter, cfg), cfg.seed,
                                    adapter.layer_name));
    case Strategy::norm_split:
        return native_split(adapter, norm_indices(adapter, checked_static_h(adapter, cfg)));
    default:
        throw std::invalid_argument("quantize_lora: baseline strategies have no split");
    }
}

// Sum over (i, j) of (B1^T B2)[i,j] * (A1 A2^T)[i,j]; equals tr(A1^T B1^T B2 A2)
// = <B1 A1, B2 A2>_F without forming either m x n product.
double gram_dot(const Matrix &B1, const Matrix &A1, const Matrix &B2, const Matrix &A2) {
    if (B1.empty() || B2.empty()) return 0.0;
    const int64_t r1 = B1.cols;
    const int64_t r2 = B2.cols;
    std::vector<double> g(static_cast<size_t>(r1 * r2), 0.0);
    for (int64_t row = 0; row < B1.rows; ++row)
        for (int64_t i = 0; i < r1; ++i) {
            const double bi = B1.at(row, i);
            if (bi == 0.0) continue;
            for (int64_t j = 0; j < r2; ++j)
                g[static_cast<size_t>(i * r2 + j)] += bi * static_cast<double>(B2.at(row, j));
        }
    double total = 0.0;
    for (int64_t i = 0; i < r1; ++i)
        for (int64_t j = 0; j < r2; ++j) {
            double dot = 0.0;
            for (int64_t col = 0; col < A1.cols; ++col)
                dot += static_cast<double>(A1.at(i, col)) * static_cast<double>(A2.at(j, col));
            total += g[static_cast<size_t>(i * r2 + j)] * dot;
        }
    return total;
}

} // namespace

const char *strategy_name(Strategy strategy) {
    for (const auto &[value, name] : kStrategyNames)
        if (value == strategy) return name;
    throw std::invalid_argument("unknown strategy value");
}

Strategy strategy_from_name(const std::string &name) {
    for (const auto &[value, candidate] : kStrategyNames)
        if (name == candidate) return value;
    throw std::invalid_argument("unknown strategy '" + name + "'");
}

void QuantConfig::validate() const {
    if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
    if (opt_steps < 0) throw std::invalid_argument("opt_steps must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("learning_rate must be positive and finite");
    if (bits_low != 1) throw std::invalid_argument("bits_low must be 1");
    if (strategy == Strategy::baseline_rtn) {
        if (bits_high < 1 || bits_high > 8)
            throw std::invalid_argument("baseline_rtn needs bits_high in [1, 8]");
    } else if (strategy != Strategy::baseline_bin) {
        if (bits_high != 2 && bits_high != 3 && bits_high != 4 && bits_high != 16)
            throw std::invalid_argument("bits_high must be 2, 3, 4 or 16");
    }
    if (uses_rho(strategy) && (!std::isfinite(rho) || rho <= 0.0 || rho > 1.0))
        throw std::invalid_argument("rho must lie in (0, 1]");
    if (uses_static_h(strategy) && static_h < 0)
        throw std::invalid_argument(std::string(strategy_name(strategy)) +
                                    " needs static_h >= 0");
}

std::string QuantConfig::label() const {
    const std::string bits = std::to_string(bits_high);
    switch (strategy) {
    case Strategy::svd_ratio:
        return bits + "@" + format_double(rho);
    case Strategy::svd_static_h:
        return bits + "@h" + std::to_string(static_h);
    case Strategy::random_split:
        return "random:" + bits + "@h" + std::to_string(static_h);
    case Strategy::norm_split:
        return "norm:" + bits + "@h" + std::to_string(static_h);
    case Strategy::prune:
        return "prune:" + bits + "@" + format_double(rho);
    case Strategy::low_rtn1:
        return "lowrtn1:" + bits + "@" + format_double(rho);
    case Strategy::baseline_rtn:
        return "rtn" + bits;
    case Strategy::baseline_bin:
        return "bin";
    }
    throw std::invalid_argument("unknown strategy value");
}

QuantizedAdapter quantize_lora(const LoraAdapter &adapter, const QuantConfig &cfg) {
    cfg.validate();
    validate_adapter(adapter);
    if (is_baseline(cfg.strategy))
        throw std::invalid_argument("quantize_lora: use baseline_quantize for baselines");

    SubLoraSplit split = make_split(adapter, cfg);
    if (cfg.strategy == Strategy::prune) {
        // The low sub-LoRA is dropped, so optimizing it would be wasted work.
        split.B_low = Matrix(adapter.m(), 0);
        split.A_low = Matrix(0, adapter.n());
    }

    const OptConfig high_opt{cfg.opt_steps, cfg.learning_rate, high_scheme(cfg),
                             high_storage_bits(cfg), cfg.group_size};
    const OptConfig low_opt{cfg.opt_steps, cfg.learning_rate, low_scheme(cfg), cfg.bits_low,
                            cfg.group_size};
    const SubLoraSplit tuned = optimize_split(split, high_opt, low_opt);

    QuantizedAdapter qa;
    qa.layer_name = adapter.layer_name;
    qa.m = adapter.m();
    qa.n = adapter.n();
    qa.r = adapter.rank();
    qa.h = tuned.h;
    qa.config = cfg;
    if (tuned.h > 0) {
        qa.B_high = quantize_matrix(tuned.B_high, high_scheme(cfg), high_storage_bits(cfg),
                                    cfg.group_size, cfg.b_orientation);
        qa.A_high = quantize_matrix(tuned.A_high, high_scheme(cfg), high_storage_bits(cfg),
                                    cfg.group_size, cfg.a_orientation);
    }
    if (cfg.strategy != Strategy::prune && qa.r - tuned.h > 0) {
        qa.B_low = quantize_matrix(tuned.B_low, low_scheme(cfg), cfg.bits_low, cfg.group_size,
                                   cfg.b_orientation);
        qa.A_low = quantize_matrix(tuned.A_low, low_scheme(cfg), cfg.bits_low, cfg.group_size,
                                   cfg.a_orientation);
    }
    return qa;
}

QuantizedAdapter baseline_quantize(const LoraAdapter &adapter, BaselineMethod method,
                                   int64_t group_size) {
    QuantConfig cfg;
    cfg.group_size = group_size;
    cfg.opt_steps = 0;
    switch (method) {
    case BaselineMethod::rtn1:
        cfg.strategy = Strategy::baseline_rtn;
        cfg.bits_high = 1;
        break;
    case BaselineMethod::rtn2:
        cfg.strategy = Strategy::baseline_rtn;
        cfg.bits_high = 2;
        break;
    case BaselineMethod::bin:
        cfg.strategy = Strategy::baseline_bin;
        cfg.bits_high = 1;
        break;
    }
    return quantize_adapter(adapter, cfg);
}

QuantizedAdapter quantize_adapter(const LoraAdapter &adapter, const QuantConfig &cfg) {
    cfg.validate();
    if (!is_baseline(cfg.strategy)) return quantize_lora(adapter, cfg);

    validate_adapter(adapter);
    const Scheme scheme = cfg.strategy == Strategy::baseline_bin ? Scheme::binary : Scheme::rtn;
    const int bits = cfg.strategy == Strategy::baseline_bin ? 1 : cfg.bits_high;
    QuantizedAdapter qa;
    qa.layer_name = adapter.layer_name;
    qa.m = adapter.m();
    qa.n = adapter.n();
    qa.r = adapter.rank();
    qa.h = adapter.rank(); // everything kept, nothing split
    qa.config = cfg;
    qa.B_high = quantize_matrix(adapter.B, scheme, bits, cfg.group_size, cfg.b_orientation);
    qa.A_high = quantize_matrix(adapter.A, scheme, bits, cfg.group_size, cfg.a_orientation);
    return qa;
}

std::pair<Matrix, Matrix> reconstruct_factors(const QuantizedAdapter &qa) {
    Matrix c;
    Matrix d;
    if (qa.B_high) c = hconcat(c, dequantize_matrix(*qa.B_high));
    if (qa.B_low) c = hconcat(c, dequantize_matrix(*qa.B_low));
    if (qa.A_high) d = vconcat(d, dequantize_matrix(*qa.A_high));
    if (qa.A_low) d = vconcat(d, dequantize_matrix(*qa.A_low));
    if (c.empty() || d.empty()) {
        // Nothing stored (prune with h = 0): the reconstruction is zero.
        c = Matrix(qa.m, 1);
        d = Matrix(1, qa.n);
    }
    if (c.cols != d.rows)
        throw std::invalid_argument("stored factor ranks disagree for layer '" + qa.layer_name +
                                    "'");
    return {std::move(c), std::move(d)};
}

Matrix reconstruct_dense(const QuantizedAdapter &qa) {
    auto [c, d] = reconstruct_factors(qa);
    return matmul(c, d);
}

double factored_error(const LoraAdapter &adapter, const QuantizedAdapter &qa) {
    if (adapter.m() != qa.m || adapter.n() != qa.n)
        throw std::invalid_argument("factored_error: shape mismatch for layer '" + qa.layer_name +
                                    "'");
    const auto [c, d] = reconstruct_factors(qa);
    const double ref = gram_dot(adapter.B, adapter.A, adapter.B, adapter.A);
    const double cross = gram_dot(adapter.B, adapter.A, c, d);
    const double rec = gram_dot(c, d, c, d);
    return std::sqrt(std::max(0.0, ref - 2.0 * cross + rec));
}

ErrorReport measure_errors(std::span<const LoraAdapter> adapters,
                           std::span<const QuantizedAdapter> quantized) {
    ErrorReport report;
    double sum_abs = 0.0;
    double sum_rel = 0.0;
    double sum_h = 0.0;
    int64_t total_weights = 0;
    int64_t total_bits = 0;
    for (const QuantizedAdapter &qa : quantized) {
        const LoraAdapter *src = nullptr;
        for (const LoraAdapter &a : adapters)
            if (a.layer_name == qa.layer_name) {
                src = &a;
                break;
            }
        if (src == nullptr)
            throw std::invalid_argument("no source adapter for layer '" + qa.layer_name + "'");

        LayerError e;
        e.layer = qa.layer_name;
        e.m = qa.m;
        e.n = qa.n;
        e.r = qa.r;
        e.h = qa.h;
        e.abs_error = factored_error(*src, qa);
        const double ref_norm = std::sqrt(std::max(0.0, gram_dot(src->B, src->A, src->B, src->A)));
        if (ref_norm > 0.0) e.rel_error = e.abs_error / ref_norm;

        const LayerBits bits = layer_bits(qa);
        e.avg_bits = bits.avg_bits();
        total_weights += bits.weight_count;
        total_bits += bits.total_bits();

        sum_abs += e.abs_error;
        sum_h += static_cast<double>(e.h);
        report.max_abs_error = std::max(report.max_abs_error, e.abs_error);
        if (e.rel_error) {
            sum_rel += *e.rel_error;
            report.max_rel_error = std::max(report.max_rel_error, *e.rel_error);
            ++report.rel_layer_count;
        }
        report.layers.push_back(std::move(e));
    }
    std::sort(report.layers.begin(), report.layers.end(),
              [](const LayerError &a, const LayerError &b) { return a.layer < b.layer; });
    const auto count = static_cast<double>(report.layers.size());
    if (!report.layers.empty()) {
        report.mean_abs_error = sum_abs / count;
        report.mean_h = sum_h / count;
    }
    if (report.rel_layer_count > 0)
        report.mean_rel_error = sum_rel / static_cast<double>(report.rel_layer_count);
    if (total_weights > 0)
        report.avg_bits = static_cast<double>(total_bits) / static_cast<double>(total_weights);
    return report;
}

std::vector<QuantizedAdapter> quantize_container(const AdapterContainer &container,
                                                 const QuantConfig &cfg, int threads) {
    cfg.validate();
    std::vector<const LoraAdapter *> sources;
    sources.reserve(container.adapters.size());
    for (const LoraAdapter &a : container.adapters) sources.push_back(&a);
    std::sort(sources.begin(), sources.end(),
              [](const LoraAdapter *a, const LoraAdapter *b) { return a->layer_name < b->layer_name; });

    std::vector<QuantizedAdapter> out(sources.size());
    if (sources.empty()) return out;

    int worker_count = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    worker_count = std::clamp(worker_count, 1, static_cast<int>(sources.size()));

    std::atomic<size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= sources.size()) return;
            try {
                out[i] = quantize_adapter(*sources[i], cfg);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (worker_count == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(worker_count));
        for (int t = 0; t < worker_count; ++t) pool.emplace_back(worker);
        for (std::thread &t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::vector<CompareResult> compare_methods(const AdapterContainer &container,
                                           std::span<const QuantConfig> configs, int threads) {
    std::vector<CompareResult> results;
    results.reserve(configs.size());
    for (const QuantConfig &cfg : configs) {
        CompareResult r;
        r.config = cfg;
        const std::vector<QuantizedAdapter> quantized = quantize_container(container, cfg, threads);
        r.report = measure_errors(container.adapters, quantized);
        results.push_back(std::move(r));
    }
    return results;
}

} // namespace loraquant
