#include "loraquant/matrix.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace loraquant {

void require_finite(const Matrix &m, const std::string &what) {
    for (float v : m.values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(what + ": non-finite value");
        }
    }
}

Matrix transpose(const Matrix &m) {
    Matrix out(m.cols, m.rows);
    for (int64_t i = 0; i < m.rows; ++i) {
        for (int64_t j = 0; j < m.cols; ++j) {
            out.at(j, i) = m.at(i, j);
        }
    }
    return out;
}

Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions disagree");
    }
    Matrix out(a.rows, b.cols);
    std::vector<double> acc(static_cast<size_t>(b.cols));
    for (int64_t i = 0; i < a.rows; ++i) {
        std::memset(acc.data(), 0, acc.size() * sizeof(double));
        for (int64_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            const float *brow = &b.values[static_cast<size_t>(k * b.cols)];
            for (int64_t j = 0; j < b.cols; ++j) {
                acc[static_cast<size_t>(j)] += aik * brow[j];
            }
        }
        float *orow = &out.values[static_cast<size_t>(i * out.cols)];
        for (int64_t j = 0; j < b.cols; ++j) {
            orow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
        }
    }
    return out;
}

Matrix add(const Matrix &a, const Matrix &b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument("add: shapes disagree");
    }
    Matrix out(a.rows, a.cols);
    for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
    return out;
}

Matrix subtract(const Matrix &a, const Matrix &b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument("subtract: shapes disagree");
    }
    Matrix out(a.rows, a.cols);
    for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] - b.values[i];
    return out;
}

double frobenius_norm(const Matrix &m) {
    double acc = 0.0;
    for (float v : m.values) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
}

double frobenius_distance(const Matrix &a, const Matrix &b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument("frobenius_distance: shapes disagree");
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double d = static_cast<double>(a.values[i]) - static_cast<double>(b.values[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

Matrix column_range(const Matrix &m, int64_t c0, int64_t c1) {
    if (c0 < 0 || c1 < c0 || c1 > m.cols) {
        throw std::invalid_argument("column_range: bad range");
    }
    Matrix out(m.rows, c1 - c0);
    for (int64_t i = 0; i < m.rows; ++i) {
        for (int64_t j = c0; j < c1; ++j) {
            out.at(i, j - c0) = m.at(i, j);
        }
    }
    return out;
}

Matrix row_range(const Matrix &m, int64_t r0, int64_t r1) {
    if (r0 < 0 || r1 < r0 || r1 > m.rows) {
        throw std::invalid_argument("row_range: bad range");
    }
    Matrix out(r1 - r0, m.cols);
    std::memcpy(out.values.data(), &m.values[static_cast<size_t>(r0 * m.cols)],
                static_cast<size_t>((r1 - r0) * m.cols) * sizeof(float));
    return out;
}

Matrix hconcat(const Matrix &a, const Matrix &b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.rows != b.rows) throw std::invalid_argument("hconcat: row counts disagree");
    Matrix out(a.rows, a.cols + b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t j = 0; j < a.cols; ++j) out.at(i, j) = a.at(i, j);
        for (int64_t j = 0; j < b.cols; ++j) out.at(i, a.cols + j) = b.at(i, j);
    }
    return out;
}

Matrix vconcat(const Matrix &a, const Matrix &b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.cols != b.cols) throw std::invalid_argument("vconcat: column counts disagree");
    Matrix out(a.rows + b.rows, a.cols);
    std::memcpy(out.values.data(), a.values.data(), a.values.size() * sizeof(float));
    std::memcpy(&out.values[a.values.size()], b.values.data(), b.values.size() * sizeof(float));
    return out;
}

} // namespace loraquant
