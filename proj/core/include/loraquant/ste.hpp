#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loraquant/quantize.hpp"
#include "loraquant/svd.hpp"

namespace loraquant {

struct OptConfig {
    int64_t steps = 100;
    double learning_rate = 1e-3;
    Scheme scheme = Scheme::rtn;
    int bits = 2;
    int64_t group_size = 128;
};

// Frobenius distance || b a^T - D(Q(b*)) D(Q(a*))^T ||, computed through the
// rank-one identity ||x y^T - u v^T||^2 = |x|^2 |y|^2 - 2 (x.u)(y.v) + |u|^2 |v|^2
// so the m x n outer products are never materialised. Unsquared.
double reconstruction_loss(std::span<const float> b, std::span<const float> a,
                           std::span<const float> b_star, std::span<const float> a_star,
                           const OptConfig &cfg);

struct OptResult {
    std::vector<float> b_star;
    std::vector<float> a_star;
    double initial_loss = 0.0;
    double final_loss = 0.0; // loss of the returned (best) iterate
    int64_t best_step = 0;   // 0 = the untouched input won
};

// Plain gradient descent on the squared loss with the straight-through
// convention: rounding and sign are treated as the identity in the backward
// pass and the group parameters are recomputed each forward pass but carry no
// gradient. Descends the squared loss, reports the unsquared one, and returns
// the best iterate seen (step 0 included), so the result never loses to the
// input. Aborts early, keeping the best finite iterate, if the loss or an
// iterate stops being finite.
OptResult optimize_rank_one_pair(std::span<const float> b, std::span<const float> a,
                                 const OptConfig &cfg);

// Runs the rank-one optimizer over every column/row pair of both sub-LoRAs
// (high pair with `high`, low pair with `low`) and returns the adjusted split.
SubLoraSplit optimize_split(const SubLoraSplit &split, const OptConfig &high, const OptConfig &low);

} // namespace loraquant
