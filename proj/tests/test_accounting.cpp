#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "loraquant/accounting.hpp"
#include "loraquant/pipeline.hpp"
#include "oracles.hpp"

using namespace loraquant;

namespace {

QuantConfig fast_config(Strategy s) {
    QuantConfig cfg;
    cfg.strategy = s;
    cfg.opt_steps = 0;
    return cfg;
}

} // namespace

TEST_CASE("group-aligned shapes give the exact published averages") {
    // Lines of length 128 with group size 128: one scale per 128 codes. The
    // sign baseline stores 128 + 16 bits per group (9/8 bits per weight), the
    // 2-bit baseline 256 + 16 + 2 (137/64 bits per weight).
    oracle::Rng rng(233);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 128, 256, 8);

    const QuantizedAdapter bin = baseline_quantize(adapter, BaselineMethod::bin, 128);
    const LayerBits lb = layer_bits(bin);
    CHECK(lb.weight_count == 8 * (128 + 256));
    CHECK(8 * lb.total_bits() == 9 * lb.weight_count);
    CHECK(lb.avg_bits() == 1.125);
    CHECK(std::round(lb.avg_bits() * 100.0) / 100.0 == doctest::Approx(1.13));

    const QuantizedAdapter rtn2 = baseline_quantize(adapter, BaselineMethod::rtn2, 128);
    const LayerBits l2 = layer_bits(rtn2);
    CHECK(64 * l2.total_bits() == 137 * l2.weight_count);
    CHECK(l2.avg_bits() == 2.140625);
    CHECK(std::round(l2.avg_bits() * 100.0) / 100.0 == doctest::Approx(2.14));

    const QuantizedAdapter rtn1 = baseline_quantize(adapter, BaselineMethod::rtn1, 128);
    const LayerBits l1 = layer_bits(rtn1);
    CHECK(128 * l1.total_bits() == 145 * l1.weight_count);
    CHECK(l1.avg_bits() == 1.1328125);
}

TEST_CASE("per-matrix costs follow the group layout") {
    // B 128 x 8 column groups: 8 columns x 1 group; A 8 x 256 row groups:
    // 8 rows x 2 groups. Signs: codes 1024 + 2048, scales 16 * 24.
    oracle::Rng rng(239);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 128, 256, 8);
    const LayerBits lb = layer_bits(baseline_quantize(adapter, BaselineMethod::bin, 128));
    CHECK(lb.code_bits == 1024 + 2048);
    CHECK(lb.scale_bits == 16 * 24);
    CHECK(lb.zero_point_bits == 0);

    const LayerBits l2 = layer_bits(baseline_quantize(adapter, BaselineMethod::rtn2, 128));
    CHECK(l2.code_bits == 2 * 3072);
    CHECK(l2.scale_bits == 16 * 24);
    CHECK(l2.zero_point_bits == 2 * 24);
}

TEST_CASE("the closed form matches the artifact bit for bit") {
    oracle::Rng rng(241);
    const std::vector<Strategy> strategies = {Strategy::svd_ratio,   Strategy::prune,
                                              Strategy::low_rtn1,    Strategy::svd_static_h,
                                              Strategy::baseline_rtn, Strategy::baseline_bin};
    for (int trial = 0; trial < 24; ++trial) {
        const int64_t m = rng.uniform_int(5, 140);
        const int64_t n = rng.uniform_int(5, 140);
        const int64_t r = rng.uniform_int(1, std::min<int64_t>(6, std::min(m, n)));
        const LoraAdapter adapter = oracle::random_adapter(rng, "l", m, n, r);

        QuantConfig cfg = fast_config(strategies[static_cast<size_t>(trial) % strategies.size()]);
        cfg.group_size = rng.uniform_int(1, 3) * 16;
        cfg.rho = 0.75;
        if (cfg.strategy == Strategy::svd_static_h) cfg.static_h = rng.uniform_int(0, r);
        if (cfg.strategy == Strategy::baseline_rtn) cfg.bits_high = 3;
        if (trial % 5 == 0 && cfg.strategy == Strategy::svd_ratio) cfg.bits_high = 16;

        const QuantizedAdapter qa = quantize_adapter(adapter, cfg);
        const LayerBits actual = layer_bits(qa);
        const LayerBits predicted =
            predicted_layer_bits(LayerShape{"l", qa.m, qa.n, qa.r, qa.h}, cfg);
        CHECK(actual.code_bits == predicted.code_bits);
        CHECK(actual.scale_bits == predicted.scale_bits);
        CHECK(actual.zero_point_bits == predicted.zero_point_bits);
        CHECK(actual.weight_count == predicted.weight_count);
        CHECK(payload_bit_walk(qa) == actual.total_bits());
    }
}

TEST_CASE("the escape hatch accounts 32 bits per stored element") {
    oracle::Rng rng(251);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 10, 6, 3);
    QuantConfig cfg = fast_config(Strategy::svd_ratio);
    cfg.bits_high = 16;
    cfg.rho = 1.0; // everything in the high pair
    const QuantizedAdapter qa = quantize_adapter(adapter, cfg);
    const LayerBits lb = layer_bits(qa);
    CHECK(lb.code_bits == 32 * 3 * (10 + 6));
    CHECK(lb.scale_bits == 0);
    CHECK(lb.zero_point_bits == 0);
}

TEST_CASE("boundary splits match the corresponding baselines") {
    oracle::Rng rng(257);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 48, 36, 4);

    // h = r: the high pair covers everything, so the count equals the rtn
    // baseline at the same width.
    QuantConfig all_high = fast_config(Strategy::svd_static_h);
    all_high.static_h = 4;
    const LayerBits high = layer_bits(quantize_adapter(adapter, all_high));
    const LayerBits rtn = layer_bits(baseline_quantize(adapter, BaselineMethod::rtn2, 128));
    CHECK(high.total_bits() == rtn.total_bits());

    // h = 0: the low pair covers everything, matching the sign baseline.
    QuantConfig all_low = fast_config(Strategy::svd_static_h);
    all_low.static_h = 0;
    const LayerBits low = layer_bits(quantize_adapter(adapter, all_low));
    const LayerBits bin = layer_bits(baseline_quantize(adapter, BaselineMethod::bin, 128));
    CHECK(low.total_bits() == bin.total_bits());

    // Pruning simply subtracts the dropped pair's cost.
    QuantConfig pruned = fast_config(Strategy::prune);
    pruned.rho = 0.7;
    const QuantizedAdapter qp = quantize_adapter(adapter, pruned);
    QuantConfig kept = fast_config(Strategy::svd_ratio);
    kept.rho = 0.7;
    const QuantizedAdapter qk = quantize_adapter(adapter, kept);
    REQUIRE(qp.h == qk.h);
    const int64_t low_cost = layer_bits(qk).total_bits() - layer_bits(qp).total_bits();
    QuantConfig only_low = fast_config(Strategy::svd_static_h);
    only_low.static_h = 0;
    LoraAdapter tail = adapter; // same shapes with rank r - h
    tail.B = Matrix(48, 4 - qp.h);
    tail.A = Matrix(4 - qp.h, 36);
    tail.B.at(0, 0) = 1.0f; // keep the adapter non-degenerate
    tail.A.at(0, 0) = 1.0f;
    const int64_t tail_cost =
        layer_bits(quantize_adapter(tail, only_low)).total_bits();
    CHECK(low_cost == tail_cost);
}

TEST_CASE("report totals are order-invariant and sum over layers") {
    oracle::Rng rng(263);
    std::vector<QuantizedAdapter> quantized;
    QuantConfig cfg = fast_config(Strategy::svd_ratio);
    for (const char *name : {"zeta", "alpha", "mid"})
        quantized.push_back(quantize_lora(oracle::random_adapter(rng, name, 12, 10, 3), cfg));

    const BitReport fwd = bit_report(quantized);
    std::vector<QuantizedAdapter> reversed(quantized.rbegin(), quantized.rend());
    const BitReport rev = bit_report(reversed);
    CHECK(fwd.total_bits() == rev.total_bits());
    CHECK(fwd.total_weights == rev.total_weights);
    REQUIRE(fwd.layers.size() == 3);
    // Layer rows mirror the input order; the container pipeline hands the
    // report pre-sorted adapters.
    CHECK(fwd.layers[0].layer == "zeta");
    CHECK(rev.layers[0].layer == "mid");

    int64_t sum = 0;
    for (const LayerBits &l : fwd.layers) sum += l.total_bits();
    CHECK(sum == fwd.total_bits());
}

TEST_CASE("the bit report csv pins its columns") {
    const BitReport empty = bit_report(std::vector<QuantizedAdapter>{});
    CHECK(bit_report_csv(empty) == "layer,weights,code_bits,scale_bits,zp_bits,avg_bits\n");

    oracle::Rng rng(269);
    const LoraAdapter adapter = oracle::random_adapter(rng, "solo", 128, 128, 4);
    const std::vector<QuantizedAdapter> one{baseline_quantize(adapter, BaselineMethod::bin, 128)};
    const std::string csv = bit_report_csv(bit_report(one));
    CHECK(csv.find("layer,weights,code_bits,scale_bits,zp_bits,avg_bits\n") == 0);
    CHECK(csv.find("solo,1024,1024,128,0,1.125\n") != std::string::npos);
    CHECK(csv.find("TOTAL,1024,1024,128,0,1.125\n") != std::string::npos);
}

TEST_CASE("the memory projection is anchored at the base model and linear") {
    ProjectionSpec spec;
    spec.base_model_bytes = 1000000;
    spec.adapter_weights = 3072;
    spec.adapter_payload_bits = 3456; // the 9/8 artifact
    spec.per_adapter_overhead_bytes = 100;

    const std::vector<int64_t> counts = {0, 1, 2, 10};
    const auto points = memory_projection(spec, counts);
    REQUIRE(points.size() == 4);
    CHECK(points[0].adapter_count == 0);
    CHECK(points[0].fp16_bytes == 1000000);
    CHECK(points[0].quantized_bytes == 1000000);

    const uint64_t fp16_step = 2 * 3072 + 100;
    const uint64_t quant_step = 3456 / 8 + 100;
    for (size_t i = 0; i < points.size(); ++i) {
        const uint64_t n = static_cast<uint64_t>(points[i].adapter_count);
        CHECK(points[i].fp16_bytes == 1000000 + n * fp16_step);
        CHECK(points[i].quantized_bytes == 1000000 + n * quant_step);
    }

    // Non-byte-aligned payloads round up once per adapter.
    spec.adapter_payload_bits = 3457;
    const auto rounded = memory_projection(spec, std::vector<int64_t>{1});
    CHECK(rounded[0].quantized_bytes == 1000000 + 433 + 100);

    const std::string csv = memory_projection_csv(points);
    CHECK(csv.find("n_adapters,bytes_fp16,bytes_quantized\n") == 0);
    CHECK(csv.find("0,1000000,1000000\n") != std::string::npos);
    CHECK(csv.find("10,1062440,1005320\n") != std::string::npos);
}

TEST_CASE("shortest round-trip formatting") {
    CHECK(format_double(1.125) == "1.125");
    CHECK(format_double(0.9) == "0.9");
    CHECK(format_double(2.140625) == "2.140625");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(0.001) == "0.001");
}

TEST_CASE("the payload walk notices corrupted buffers") {
    oracle::Rng rng(271);
    QuantizedAdapter qa =
        quantize_lora(oracle::random_adapter(rng, "l", 16, 12, 3), fast_config(Strategy::svd_ratio));
    CHECK_NOTHROW(payload_bit_walk(qa));
    qa.B_high->packed_codes.push_back(0);
    CHECK_THROWS_AS(payload_bit_walk(qa), std::invalid_argument);
}
