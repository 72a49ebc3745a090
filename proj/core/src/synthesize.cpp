#include "loraquant/synthesize.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "dense.hpp"

namespace loraquant {

namespace {

// mt19937_64 is specified by the standard; the distributions are not, so the
// uniform and normal draws are spelled out here to keep outputs portable.
class Sampler {
public:
    explicit Sampler(uint64_t seed) : eng_(seed) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * 3.141592653589793 * u2);
        has_spare_ = true;
        return mag * std::cos(2.0 * 3.141592653589793 * u2);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

detail::DMat gaussian(Sampler &rng, int64_t rows, int64_t cols) {
    detail::DMat out(rows, cols);
    for (double &v : out.v) v = rng.normal();
    return out;
}

detail::DMat orthonormal_columns(Sampler &rng, int64_t rows, int64_t cols) {
    detail::DMat q, r;
    detail::householder_qr(gaussian(rng, rows, cols), q, r);
    return q;
}

} // namespace

LoraAdapter synthesize_adapter(const std::string &layer_name, const SynthSpec &spec,
                               uint64_t layer_seed) {
    if (spec.m < 1 || spec.n < 1 || spec.r < 1) {
        throw std::invalid_argument("synthesize: dimensions must be >= 1");
    }
    if (spec.r > std::min(spec.m, spec.n)) {
        throw std::invalid_argument("synthesize: rank exceeds min(m, n)");
    }
    if (!(spec.decay > 0.0) || spec.decay > 1.0) {
        throw std::invalid_argument("synthesize: decay must lie in (0, 1]");
    }
    if (!(spec.scale > 0.0)) throw std::invalid_argument("synthesize: scale must be > 0");

    Sampler rng(layer_seed);
    const detail::DMat u = orthonormal_columns(rng, spec.m, spec.r);
    const detail::DMat v = orthonormal_columns(rng, spec.n, spec.r);
    const detail::DMat mix = orthonormal_columns(rng, spec.r, spec.r);

    std::vector<double> root_s(static_cast<size_t>(spec.r));
    for (int64_t i = 0; i < spec.r; ++i) {
        root_s[static_cast<size_t>(i)] =
            std::sqrt(spec.scale * std::pow(spec.decay, static_cast<double>(i)));
    }

    // B = U diag(sqrt(s)) M^T, A = M diag(sqrt(s)) V^T; the orthogonal mixer M
    // cancels in the product, so B*A = U diag(s) V^T exactly.
    detail::DMat b(spec.m, spec.r), a(spec.r, spec.n);
    for (int64_t i = 0; i < spec.m; ++i) {
        for (int64_t j = 0; j < spec.r; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < spec.r; ++k) {
                acc += u.at(i, k) * root_s[static_cast<size_t>(k)] * mix.at(j, k);
            }
            b.at(i, j) = acc;
        }
    }
    for (int64_t i = 0; i < spec.r; ++i) {
        for (int64_t j = 0; j < spec.n; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < spec.r; ++k) {
                acc += mix.at(i, k) * root_s[static_cast<size_t>(k)] * v.at(j, k);
            }
            a.at(i, j) = acc;
        }
    }

    LoraAdapter adapter{layer_name, detail::to_float(b), detail::to_float(a)};
    validate_adapter(adapter);
    return adapter;
}

AdapterContainer synthesize_adapters(const SynthSpec &spec) {
    if (spec.layers < 1) throw std::invalid_argument("synthesize: layer count must be >= 1");
    AdapterContainer container;
    for (int64_t i = 0; i < spec.layers; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "layer_%03lld", static_cast<long long>(i));
        container.add(synthesize_adapter(name, spec, spec.seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(i + 1)));
    }
    container.metadata["generator"] = "synthetic";
    container.metadata["seed"] = std::to_string(spec.seed);
    container.metadata["decay"] = std::to_string(spec.decay);
    return container;
}

} // namespace loraquant
