#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace loraquant {

// Dense row-major binary32 matrix. Binary32 is the working precision
// everywhere; narrower storage formats widen into this type on load.
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> values; // rows * cols, row-major

    Matrix() = default;
    Matrix(int64_t r, int64_t c) : rows(r), cols(c), values(static_cast<size_t>(r * c), 0.0f) {}

    float &at(int64_t i, int64_t j) { return values[static_cast<size_t>(i * cols + j)]; }
    float at(int64_t i, int64_t j) const { return values[static_cast<size_t>(i * cols + j)]; }
    int64_t size() const { return rows * cols; }
    bool empty() const { return rows == 0 || cols == 0; }
};

// Throws std::invalid_argument naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix &m, const std::string &what);

Matrix transpose(const Matrix &m);
// Product computed with binary64 accumulation, rounded once to binary32.
Matrix matmul(const Matrix &a, const Matrix &b);
Matrix add(const Matrix &a, const Matrix &b);
Matrix subtract(const Matrix &a, const Matrix &b);

double frobenius_norm(const Matrix &m);
double frobenius_distance(const Matrix &a, const Matrix &b);

// Half-open column range [c0, c1) as a new matrix.
Matrix column_range(const Matrix &m, int64_t c0, int64_t c1);
// Half-open row range [r0, r1) as a new matrix.
Matrix row_range(const Matrix &m, int64_t r0, int64_t r1);
// [a | b] side by side; row counts must match.
Matrix hconcat(const Matrix &a, const Matrix &b);
// a stacked on top of b; column counts must match.
Matrix vconcat(const Matrix &a, const Matrix &b);

} // namespace loraquant
