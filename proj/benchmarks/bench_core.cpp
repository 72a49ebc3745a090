// Microbenchmarks for the hot paths: group quantization, the product SVD,
// rank-one descent steps and bit packing.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "loraquant/matrix.hpp"
#include "loraquant/pipeline.hpp"
#include "loraquant/quantize.hpp"
#include "loraquant/ste.hpp"
#include "loraquant/svd.hpp"
#include "loraquant/tensor_store.hpp"

namespace {

using namespace loraquant;

uint64_t splitmix(uint64_t &state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

float uniform_pm1(uint64_t &state) {
    return static_cast<float>(static_cast<double>(splitmix(state) >> 11) * 0x1.0p-52 - 1.0);
}

Matrix filled_matrix(int64_t rows, int64_t cols, uint64_t seed) {
    Matrix m(rows, cols);
    uint64_t state = seed;
    for (float &v : m.values) v = uniform_pm1(state);
    return m;
}

void bench_quantize_matrix(benchmark::State &state) {
    const int bits = static_cast<int>(state.range(0));
    const Matrix m = filled_matrix(4096, 16, 1);
    for (auto _ : state) {
        QuantizedMatrix q =
            quantize_matrix(m, bits == 1 ? Scheme::binary : Scheme::rtn, bits, 128,
                            GroupOrientation::column);
        benchmark::DoNotOptimize(q.packed_codes.data());
    }
    state.SetItemsProcessed(state.iterations() * m.size());
}
BENCHMARK(bench_quantize_matrix)->Arg(1)->Arg(2)->Arg(4);

void bench_dequantize_matrix(benchmark::State &state) {
    const Matrix m = filled_matrix(4096, 16, 2);
    const QuantizedMatrix q = quantize_matrix(m, Scheme::rtn, 2, 128, GroupOrientation::column);
    for (auto _ : state) {
        Matrix out = dequantize_matrix(q);
        benchmark::DoNotOptimize(out.values.data());
    }
    state.SetItemsProcessed(state.iterations() * m.size());
}
BENCHMARK(bench_dequantize_matrix);

void bench_product_svd(benchmark::State &state) {
    const int64_t side = state.range(0);
    const LoraAdapter adapter{"bench", filled_matrix(side, 16, 3), filled_matrix(16, side, 4)};
    for (auto _ : state) {
        SvdFactors f = economy_svd_of_product(adapter);
        benchmark::DoNotOptimize(f.singular_values.data());
    }
}
BENCHMARK(bench_product_svd)->Arg(256)->Arg(1024)->Arg(4096);

void bench_rank_one_descent(benchmark::State &state) {
    std::vector<float> b(4096), a(4096);
    uint64_t seed = 5;
    for (float &v : b) v = uniform_pm1(seed);
    for (float &v : a) v = uniform_pm1(seed);
    OptConfig cfg;
    cfg.steps = state.range(0);
    cfg.scheme = Scheme::rtn;
    cfg.bits = 2;
    for (auto _ : state) {
        OptResult res = optimize_rank_one_pair(b, a, cfg);
        benchmark::DoNotOptimize(res.final_loss);
    }
    state.SetItemsProcessed(state.iterations() * cfg.steps);
}
BENCHMARK(bench_rank_one_descent)->Arg(10)->Arg(100);

void bench_pack_bits(benchmark::State &state) {
    const int bits = static_cast<int>(state.range(0));
    std::vector<int32_t> codes(1 << 20);
    uint64_t seed = 6;
    for (int32_t &c : codes)
        c = static_cast<int32_t>(splitmix(seed) & ((uint64_t{1} << bits) - 1));
    for (auto _ : state) {
        std::vector<uint8_t> packed = pack_bits(codes, bits);
        benchmark::DoNotOptimize(packed.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(codes.size()));
}
BENCHMARK(bench_pack_bits)->Arg(2)->Arg(3)->Arg(8);

} // namespace

BENCHMARK_MAIN();
