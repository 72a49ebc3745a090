#pragma once

#include <cstdint>

#include "loraquant/tensor_store.hpp"

namespace loraquant {

// Synthetic adapters with a controllable geometric singular spectrum:
// B*A = U diag(s) V^T with orthonormal U, V, s_i = scale * decay^i, and a
// random orthogonal mixing of the native components so that column norms of B
// do not trivially coincide with the principal directions. Fully determined
// by `seed`; the generator uses its own portable sampler, so outputs are
// identical across platforms.
struct SynthSpec {
    int64_t m = 64;
    int64_t n = 64;
    int64_t r = 8;
    int64_t layers = 1;
    uint64_t seed = 0;
    double decay = 0.7; // in (0, 1]; 1 = flat spectrum
    double scale = 1.0; // largest singular value
};

LoraAdapter synthesize_adapter(const std::string &layer_name, const SynthSpec &spec,
                               uint64_t layer_seed);
AdapterContainer synthesize_adapters(const SynthSpec &spec);

} // namespace loraquant
