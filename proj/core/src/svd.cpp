#include "loraquant/svd.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "dense.hpp"

namespace loraquant {

namespace {

using detail::DMat;

constexpr double kJacobiTol = 1e-12;
constexpr int kJacobiMaxSweeps = 60;

// One-sided Jacobi on the square core: right-rotations orthogonalise the
// columns of w; at convergence the column norms are the singular values.
// Rotations are accumulated into vacc so that core = u * diag(s) * vacc^T.
void one_sided_jacobi(DMat &w, DMat &vacc) {
    const int64_t k = w.cols;
    vacc = DMat(k, k);
    for (int64_t i = 0; i < k; ++i) vacc.at(i, i) = 1.0;
    if (k < 2) return;

    for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
        double worst = 0.0;
        for (int64_t p = 0; p < k - 1; ++p) {
            for (int64_t q = p + 1; q < k; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int64_t i = 0; i < k; ++i) {
                    const double wp = w.at(i, p), wq = w.at(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                const double ratio = std::abs(gamma) / std::sqrt(alpha * beta);
                worst = std::max(worst, ratio);
                if (ratio <= kJacobiTol) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int64_t i = 0; i < k; ++i) {
                    const double wp = w.at(i, p), wq = w.at(i, q);
                    w.at(i, p) = c * wp - s * wq;
                    w.at(i, q) = s * wp + c * wq;
                }
                for (int64_t i = 0; i < k; ++i) {
                    const double vp = vacc.at(i, p), vq = vacc.at(i, q);
                    vacc.at(i, p) = c * vp - s * vq;
                    vacc.at(i, q) = s * vp + c * vq;
                }
            }
        }
        if (worst <= kJacobiTol) return;
    }
    throw std::runtime_error("svd: jacobi sweep did not converge");
}

// Replace the columns of u whose singular value is (numerically) zero with an
// orthonormal completion, so u stays a full set of orthonormal columns.
void complete_orthonormal(DMat &u, const std::vector<bool> &degenerate) {
    const int64_t k = u.cols;
    for (int64_t j = 0; j < k; ++j) {
        if (!degenerate[static_cast<size_t>(j)]) continue;
        for (int64_t cand = 0; cand < k; ++cand) {
            std::vector<double> col(static_cast<size_t>(k), 0.0);
            col[static_cast<size_t>(cand)] = 1.0;
            for (int pass = 0; pass < 2; ++pass) { // MGS twice for clean orthogonality
                for (int64_t o = 0; o < k; ++o) {
                    if (o == j || degenerate[static_cast<size_t>(o)]) continue;
                    double dot = 0.0;
                    for (int64_t i = 0; i < k; ++i) dot += col[static_cast<size_t>(i)] * u.at(i, o);
                    for (int64_t i = 0; i < k; ++i) col[static_cast<size_t>(i)] -= dot * u.at(i, o);
                }
                for (int64_t o = 0; o < j; ++o) {
                    if (!degenerate[static_cast<size_t>(o)]) continue; // already filled earlier
                    double dot = 0.0;
                    for (int64_t i = 0; i < k; ++i) dot += col[static_cast<size_t>(i)] * u.at(i, o);
                    for (int64_t i = 0; i < k; ++i) col[static_cast<size_t>(i)] -= dot * u.at(i, o);
                }
            }
            double norm2 = 0.0;
            for (double x : col) norm2 += x * x;
            if (norm2 > 0.25) { // candidate not swallowed by the existing span
                const double inv = 1.0 / std::sqrt(norm2);
                for (int64_t i = 0; i < k; ++i) u.at(i, j) = col[static_cast<size_t>(i)] * inv;
                break;
            }
        }
    }
}

} // namespace

SvdFactors economy_svd_of_product(const LoraAdapter &adapter) {
    validate_adapter(adapter);
    const int64_t r = adapter.rank();

    DMat qb, rb, qa, ra;
    detail::householder_qr(detail::to_double(adapter.B), qb, rb);
    detail::householder_qr(detail::to_double(transpose(adapter.A)), qa, ra);

    // r x r core: B*A = qb * (rb * ra^T) * qa^T.
    DMat core = detail::dmatmul(rb, detail::dtranspose(ra));

    DMat w = core, vcore;
    one_sided_jacobi(w, vcore);

    std::vector<double> sigma(static_cast<size_t>(r), 0.0);
    double smax = 0.0;
    for (int64_t j = 0; j < r; ++j) {
        double norm2 = 0.0;
        for (int64_t i = 0; i < r; ++i) norm2 += w.at(i, j) * w.at(i, j);
        sigma[static_cast<size_t>(j)] = std::sqrt(norm2);
        smax = std::max(smax, sigma[static_cast<size_t>(j)]);
    }

    DMat ucore(r, r);
    std::vector<bool> degenerate(static_cast<size_t>(r), false);
    const double cutoff = smax * 1e-12;
    for (int64_t j = 0; j < r; ++j) {
        const double s = sigma[static_cast<size_t>(j)];
        if (s <= cutoff) {
            degenerate[static_cast<size_t>(j)] = true;
            continue;
        }
        for (int64_t i = 0; i < r; ++i) ucore.at(i, j) = w.at(i, j) / s;
    }
    complete_orthonormal(ucore, degenerate);

    // Sort descending, carrying the core columns along.
    std::vector<int64_t> order(static_cast<size_t>(r));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return sigma[static_cast<size_t>(a)] > sigma[static_cast<size_t>(b)];
    });

    DMat ucore_sorted(r, r), vcore_sorted(r, r);
    std::vector<double> s_sorted(static_cast<size_t>(r));
    for (int64_t j = 0; j < r; ++j) {
        const int64_t src = order[static_cast<size_t>(j)];
        s_sorted[static_cast<size_t>(j)] = sigma[static_cast<size_t>(src)];
        for (int64_t i = 0; i < r; ++i) {
            ucore_sorted.at(i, j) = ucore.at(i, src);
            vcore_sorted.at(i, j) = vcore.at(i, src);
        }
    }

    DMat u = detail::dmatmul(qb, ucore_sorted);
    DMat v = detail::dmatmul(qa, vcore_sorted);

    // Sign convention: largest-magnitude entry of each U column non-negative.
    for (int64_t j = 0; j < r; ++j) {
        int64_t arg = 0;
        double best = -1.0;
        for (int64_t i = 0; i < u.rows; ++i) {
            const double mag = std::abs(u.at(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (u.at(arg, j) < 0.0) {
            for (int64_t i = 0; i < u.rows; ++i) u.at(i, j) = -u.at(i, j);
            for (int64_t i = 0; i < v.rows; ++i) v.at(i, j) = -v.at(i, j);
        }
    }

    SvdFactors out;
    out.U = detail::to_float(u);
    out.V = detail::to_float(v);
    out.singular_values = std::move(s_sorted);
    return out;
}

std::pair<Matrix, Matrix> reparameterize(const SvdFactors &factors) {
    const int64_t m = factors.U.rows, r = factors.U.cols, n = factors.V.rows;
    if (static_cast<int64_t>(factors.singular_values.size()) != r || factors.V.cols != r) {
        throw std::invalid_argument("reparameterize: inconsistent factor shapes");
    }
    Matrix bp(m, r), ap(r, n);
    for (int64_t j = 0; j < r; ++j) {
        const double root = std::sqrt(factors.singular_values[static_cast<size_t>(j)]);
        for (int64_t i = 0; i < m; ++i) {
            bp.at(i, j) = static_cast<float>(factors.U.at(i, j) * root);
        }
        for (int64_t i = 0; i < n; ++i) {
            ap.at(j, i) = static_cast<float>(factors.V.at(i, j) * root);
        }
    }
    return {std::move(bp), std::move(ap)};
}

int64_t select_rank_h(std::span<const double> singular_values, double rho) {
    if (!(rho > 0.0) || rho > 1.0) {
        throw std::invalid_argument("select_rank_h: rho must lie in (0, 1]");
    }
    if (singular_values.empty()) {
        throw std::invalid_argument("select_rank_h: empty spectrum");
    }
    double total = 0.0;
    for (size_t i = 0; i < singular_values.size(); ++i) {
        const double s = singular_values[i];
        if (s < 0.0) throw std::invalid_argument("select_rank_h: negative singular value");
        if (i > 0 && s > singular_values[i - 1]) {
            throw std::invalid_argument("select_rank_h: spectrum not sorted descending");
        }
        total += s * s;
    }
    if (total == 0.0) {
        throw std::invalid_argument("select_rank_h: all-zero singular values");
    }
    double cum = 0.0;
    for (size_t i = 0; i < singular_values.size(); ++i) {
        cum += singular_values[i] * singular_values[i];
        if (cum / total >= rho) return static_cast<int64_t>(i) + 1;
    }
    return static_cast<int64_t>(singular_values.size());
}

namespace {

SubLoraSplit slice_split(const SvdFactors &factors, int64_t h) {
    auto [bp, ap] = reparameterize(factors);
    SubLoraSplit split;
    split.h = h;
    split.singular_values = factors.singular_values;
    split.B_high = column_range(bp, 0, h);
    split.A_high = row_range(ap, 0, h);
    split.B_low = column_range(bp, h, bp.cols);
    split.A_low = row_range(ap, h, ap.rows);
    return split;
}

} // namespace

SubLoraSplit split_subloras(const LoraAdapter &adapter, double rho) {
    if (!(rho > 0.0) || rho > 1.0) {
        throw std::invalid_argument("split_subloras: rho must lie in (0, 1]");
    }
    SvdFactors factors = economy_svd_of_product(adapter);
    double total = 0.0;
    for (double s : factors.singular_values) total += s * s;

    int64_t h;
    if (total == 0.0) {
        std::cerr << "warning: adapter '" << adapter.layer_name
                  << "' is all-zero; keeping one high component\n";
        h = std::min<int64_t>(1, adapter.rank());
    } else {
        h = select_rank_h(factors.singular_values, rho);
    }
    return slice_split(factors, h);
}

SubLoraSplit split_subloras_static(const LoraAdapter &adapter, int64_t h) {
    if (h < 0 || h > adapter.rank()) {
        throw std::invalid_argument("split_subloras_static: h outside [0, rank]");
    }
    return slice_split(economy_svd_of_product(adapter), h);
}

} // namespace loraquant
