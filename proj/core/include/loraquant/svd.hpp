#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "loraquant/matrix.hpp"
#include "loraquant/tensor_store.hpp"

namespace loraquant {

// Rank-r factorisation of an adapter product: B*A = U * diag(s) * V^T with
// orthonormal U (m x r), V (n x r) and s sorted descending. The
// largest-magnitude entry of each U column is non-negative, which pins the
// otherwise arbitrary column signs.
struct SvdFactors {
    Matrix U;
    std::vector<double> singular_values;
    Matrix V;
};

// The split adapter: B*A ~= B_high*A_high + B_low*A_low, with the high pair
// carrying the h strongest directions. Shapes: B_high (m x h), A_high (h x n),
// B_low (m x (r-h)), A_low ((r-h) x n); a part with zero columns/rows is an
// empty matrix.
struct SubLoraSplit {
    Matrix B_high;
    Matrix A_high;
    Matrix B_low;
    Matrix A_low;
    int64_t h = 0;
    std::vector<double> singular_values;
};

// Factors the product of the two low-rank matrices without ever forming the
// m x n product: economy QR of both factors compresses the problem to an
// r x r core that a one-sided Jacobi iteration decomposes. Throws
// std::invalid_argument on non-finite input and std::runtime_error if the
// Jacobi sweep fails to converge (60-sweep cap).
SvdFactors economy_svd_of_product(const LoraAdapter &adapter);

// Balanced reparameterisation: B' = U * diag(sqrt(s)), A' = diag(sqrt(s)) * V^T.
// Column i of B' and row i of A' both carry norm sqrt(s_i).
std::pair<Matrix, Matrix> reparameterize(const SvdFactors &factors);

// Smallest h such that the top-h share of the squared singular mass reaches
// `rho` (rho in (0, 1]). Throws std::invalid_argument on an empty or all-zero
// spectrum, on unsorted input, and on rho outside (0, 1].
int64_t select_rank_h(std::span<const double> singular_values, double rho);

// SVD -> reparameterise -> select h by energy ratio -> slice. An all-zero
// adapter gets h = 1 and a warning on stderr instead of select_rank_h's error.
SubLoraSplit split_subloras(const LoraAdapter &adapter, double rho);

// Same split with a caller-fixed h in [0, r].
SubLoraSplit split_subloras_static(const LoraAdapter &adapter, int64_t h);

} // namespace loraquant
