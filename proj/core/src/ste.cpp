#include "loraquant/ste.hpp"

#include <cmath>
#include <stdexcept>

namespace loraquant {

namespace {

double dot(std::span<const float> x, std::span<const float> y) {
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    }
    return acc;
}

double norm2(std::span<const float> x) { return dot(x, x); }

bool all_finite(std::span<const float> x) {
    for (float v : x) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

struct Forward {
    std::vector<float> bq; // D(Q(b*))
    std::vector<float> aq; // D(Q(a*))
    double loss_sq = 0.0;
};

Forward forward_pass(std::span<const float> b, std::span<const float> a,
                     std::span<const float> b_star, std::span<const float> a_star,
                     const OptConfig &cfg) {
    Forward f;
    f.bq = fake_quantize_vector(b_star, cfg.scheme, cfg.bits, cfg.group_size);
    f.aq = fake_quantize_vector(a_star, cfg.scheme, cfg.bits, cfg.group_size);
    f.loss_sq = norm2(b) * norm2(a) - 2.0 * dot(b, f.bq) * dot(a, f.aq) +
                norm2(f.bq) * norm2(f.aq);
    return f;
}

void check_opt_config(const OptConfig &cfg) {
    if (cfg.steps < 0) throw std::invalid_argument("optimize: negative step count");
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("optimize: learning rate must be > 0");
}

} // namespace

double reconstruction_loss(std::span<const float> b, std::span<const float> a,
                           std::span<const float> b_star, std::span<const float> a_star,
                           const OptConfig &cfg) {
    if (b.size() != b_star.size() || a.size() != a_star.size()) {
        throw std::invalid_argument("reconstruction_loss: size mismatch");
    }
    const double l2 = forward_pass(b, a, b_star, a_star, cfg).loss_sq;
    return std::sqrt(std::max(l2, 0.0));
}

OptResult optimize_rank_one_pair(std::span<const float> b, std::span<const float> a,
                                 const OptConfig &cfg) {
    check_opt_config(cfg);
    if (b.empty() || a.empty()) throw std::invalid_argument("optimize: empty vector");
    if (!all_finite(b) || !all_finite(a)) throw std::invalid_argument("optimize: non-finite input");

    const size_t m = b.size(), n = a.size();
    std::vector<float> bs(b.begin(), b.end());
    std::vector<float> as(a.begin(), a.end());

    OptResult best;
    best.b_star = bs;
    best.a_star = as;
    {
        const Forward f0 = forward_pass(b, a, bs, as, cfg);
        best.initial_loss = std::sqrt(std::max(f0.loss_sq, 0.0));
        best.final_loss = best.initial_loss;
        best.best_step = 0;
    }

    const double eta = cfg.learning_rate;
    for (int64_t t = 1; t <= cfg.steps; ++t) {
        const Forward f = forward_pass(b, a, bs, as, cfg);

        // d(loss^2)/d bq = 2 (bq |aq|^2 - b (a . aq)); straight-through passes
        // it to b* unchanged. Same with roles swapped for a*. Both updates use
        // the quantized values from before either moves.
        const double aq2 = norm2(f.aq), a_aq = dot(a, f.aq);
        const double bq2 = norm2(f.bq), b_bq = dot(b, f.bq);
        for (size_t i = 0; i < m; ++i) {
            const double g = 2.0 * (static_cast<double>(f.bq[i]) * aq2 -
                                    static_cast<double>(b[i]) * a_aq);
            bs[i] = static_cast<float>(static_cast<double>(bs[i]) - eta * g);
        }
        for (size_t i = 0; i < n; ++i) {
            const double g = 2.0 * (static_cast<double>(f.aq[i]) * bq2 -
                                    static_cast<double>(a[i]) * b_bq);
            as[i] = static_cast<float>(static_cast<double>(as[i]) - eta * g);
        }

        if (!all_finite(bs) || !all_finite(as)) break;
        const double l2 = forward_pass(b, a, bs, as, cfg).loss_sq;
        const double l = std::sqrt(std::max(l2, 0.0));
        if (!std::isfinite(l)) break;
        if (l < best.final_loss) {
            best.final_loss = l;
            best.best_step = t;
            best.b_star = bs;
            best.a_star = as;
        }
    }
    return best;
}

namespace {

void optimize_pairs(Matrix &bmat, Matrix &amat, const OptConfig &cfg) {
    if (bmat.empty()) return;
    const int64_t m = bmat.rows, n = amat.cols, k = bmat.cols;
    std::vector<float> b(static_cast<size_t>(m));
    for (int64_t j = 0; j < k; ++j) {
        for (int64_t i = 0; i < m; ++i) b[static_cast<size_t>(i)] = bmat.at(i, j);
        const std::span<const float> a(&amat.values[static_cast<size_t>(j * n)],
                                       static_cast<size_t>(n));
        OptResult res = optimize_rank_one_pair(b, a, cfg);
        for (int64_t i = 0; i < m; ++i) bmat.at(i, j) = res.b_star[static_cast<size_t>(i)];
        for (int64_t i = 0; i < n; ++i) amat.at(j, i) = res.a_star[static_cast<size_t>(i)];
    }
}

} // namespace

SubLoraSplit optimize_split(const SubLoraSplit &split, const OptConfig &high,
                            const OptConfig &low) {
    check_opt_config(high);
    check_opt_config(low);
    SubLoraSplit out = split;
    optimize_pairs(out.B_high, out.A_high, high);
    optimize_pairs(out.B_low, out.A_low, low);
    return out;
}

} // namespace loraquant
