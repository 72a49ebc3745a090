#pragma once

// Internal binary64 dense helpers shared by the SVD path and the synthetic
// adapter generator. Not installed; binary32 is the precision at module
// boundaries, binary64 is used in between to keep the factorisations well
// inside the stated tolerances.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "loraquant/matrix.hpp"

namespace loraquant::detail {

struct DMat {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> v;

    DMat() = default;
    DMat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}

    double &at(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols + j)]; }
    double at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols + j)]; }
};

inline DMat to_double(const Matrix &m) {
    DMat out(m.rows, m.cols);
    for (size_t i = 0; i < m.values.size(); ++i) out.v[i] = m.values[i];
    return out;
}

inline Matrix to_float(const DMat &m) {
    Matrix out(m.rows, m.cols);
    for (size_t i = 0; i < m.v.size(); ++i) out.values[i] = static_cast<float>(m.v[i]);
    return out;
}

inline DMat dmatmul(const DMat &a, const DMat &b) {
    if (a.cols != b.rows) throw std::invalid_argument("dmatmul: inner dimensions disagree");
    DMat out(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int64_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

inline DMat dtranspose(const DMat &m) {
    DMat out(m.cols, m.rows);
    for (int64_t i = 0; i < m.rows; ++i) {
        for (int64_t j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    }
    return out;
}

// Economy Householder QR of a (m x k, m >= k): q gets the thin m x k
// orthonormal factor, r the k x k upper triangle.
inline void householder_qr(const DMat &a, DMat &q, DMat &r) {
    const int64_t m = a.rows, k = a.cols;
    if (m < k) throw std::invalid_argument("householder_qr: more columns than rows");

    DMat w = a; // reduced in place
    std::vector<std::vector<double>> reflectors;
    reflectors.reserve(static_cast<size_t>(k));

    for (int64_t c = 0; c < k; ++c) {
        double norm2 = 0.0;
        for (int64_t i = c; i < m; ++i) norm2 += w.at(i, c) * w.at(i, c);
        const double norm = std::sqrt(norm2);

        std::vector<double> v(static_cast<size_t>(m - c), 0.0);
        double vnorm2 = 0.0;
        if (norm > 0.0) {
            const double alpha = w.at(c, c) >= 0.0 ? -norm : norm;
            v[0] = w.at(c, c) - alpha;
            for (int64_t i = c + 1; i < m; ++i) v[static_cast<size_t>(i - c)] = w.at(i, c);
            for (double x : v) vnorm2 += x * x;
            if (vnorm2 > 0.0) {
                for (int64_t j = c; j < k; ++j) {
                    double dot = 0.0;
                    for (int64_t i = c; i < m; ++i) dot += v[static_cast<size_t>(i - c)] * w.at(i, j);
                    const double f = 2.0 * dot / vnorm2;
                    for (int64_t i = c; i < m; ++i) w.at(i, j) -= f * v[static_cast<size_t>(i - c)];
                }
            }
        }
        reflectors.push_back(std::move(v));
    }

    r = DMat(k, k);
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = i; j < k; ++j) r.at(i, j) = w.at(i, j);
    }

    // Accumulate the thin Q by applying the reflectors in reverse to the
    // first k identity columns.
    q = DMat(m, k);
    for (int64_t j = 0; j < k; ++j) q.at(j, j) = 1.0;
    for (int64_t c = k - 1; c >= 0; --c) {
        const std::vector<double> &v = reflectors[static_cast<size_t>(c)];
        double vnorm2 = 0.0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 == 0.0) continue;
        for (int64_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (int64_t i = c; i < m; ++i) dot += v[static_cast<size_t>(i - c)] * q.at(i, j);
            const double f = 2.0 * dot / vnorm2;
            for (int64_t i = c; i < m; ++i) q.at(i, j) -= f * v[static_cast<size_t>(i - c)];
        }
    }
}

} // namespace loraquant::detail
