#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "loraquant/lqz.hpp"
#include "loraquant/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace loraquant;
using testutil::TempDir;

namespace {

bool same_quantized(const QuantizedMatrix &a, const QuantizedMatrix &b) {
    return a.rows == b.rows && a.cols == b.cols && a.scheme == b.scheme && a.bits == b.bits &&
           a.group_size == b.group_size && a.orientation == b.orientation &&
           a.packed_codes == b.packed_codes && a.scales == b.scales &&
           a.zero_points == b.zero_points;
}

bool same_adapter(const QuantizedAdapter &x, const QuantizedAdapter &y) {
    if (x.layer_name != y.layer_name || x.m != y.m || x.n != y.n || x.r != y.r || x.h != y.h)
        return false;
    auto same_opt = [](const std::optional<QuantizedMatrix> &a,
                       const std::optional<QuantizedMatrix> &b) {
        if (a.has_value() != b.has_value()) return false;
        return !a.has_value() || same_quantized(*a, *b);
    };
    return same_opt(x.B_high, y.B_high) && same_opt(x.A_high, y.A_high) &&
           same_opt(x.B_low, y.B_low) && same_opt(x.A_low, y.A_low);
}

struct Fixture {
    QuantConfig cfg;
    std::vector<QuantizedAdapter> adapters;

    Fixture() {
        cfg.rho = 0.8;
        cfg.opt_steps = 2;
        cfg.group_size = 16;
        oracle::Rng rng(223);
        adapters.push_back(
            quantize_lora(oracle::random_adapter(rng, "layer_b", 20, 12, 4), cfg));
        adapters.push_back(
            quantize_lora(oracle::random_adapter(rng, "layer_a", 9, 31, 3), cfg));

        QuantConfig prune_cfg = cfg; // a layer with no low pair
        prune_cfg.strategy = Strategy::prune;
        adapters.push_back(
            quantize_lora(oracle::random_adapter(rng, "layer_c", 16, 8, 4), prune_cfg));

        QuantConfig raw_cfg = cfg; // a layer with a raw high pair
        raw_cfg.bits_high = 16;
        adapters.push_back(
            quantize_lora(oracle::random_adapter(rng, "layer_d", 7, 7, 2), raw_cfg));

        QuantConfig low_cfg = cfg; // a layer with no high pair
        low_cfg.strategy = Strategy::svd_static_h;
        low_cfg.static_h = 0;
        adapters.push_back(
            quantize_lora(oracle::random_adapter(rng, "layer_e", 11, 13, 3), low_cfg));
    }
};

} // namespace

TEST_CASE("the artifact container round-trips bitwise") {
    TempDir dir;
    const Fixture fx;
    const auto p = dir.file("pack.lqz");
    write_lqz(p, fx.adapters, fx.cfg);
    const LqzFile back = read_lqz(p);

    CHECK(back.config.strategy == fx.cfg.strategy);
    CHECK(back.config.rho == fx.cfg.rho);
    CHECK(back.config.group_size == fx.cfg.group_size);
    CHECK(back.config.opt_steps == fx.cfg.opt_steps);
    REQUIRE(back.adapters.size() == fx.adapters.size());
    CHECK(back.adapters[0].layer_name == "layer_a"); // sorted in the file
    for (const QuantizedAdapter &qa : fx.adapters) {
        bool found = false;
        for (const QuantizedAdapter &got : back.adapters) {
            if (got.layer_name != qa.layer_name) continue;
            // The reader stamps the file-level config onto every adapter, so
            // compare the payload fields only.
            QuantizedAdapter patched = got;
            patched.config = qa.config;
            found = same_adapter(patched, qa);
        }
        CHECK(found);
    }
}

TEST_CASE("writes are byte-identical across calls and input order") {
    TempDir dir;
    const Fixture fx;
    write_lqz(dir.file("x1.lqz"), fx.adapters, fx.cfg);
    write_lqz(dir.file("x2.lqz"), fx.adapters, fx.cfg);
    CHECK(testutil::read_bytes(dir.file("x1.lqz")) == testutil::read_bytes(dir.file("x2.lqz")));

    std::vector<QuantizedAdapter> reversed(fx.adapters.rbegin(), fx.adapters.rend());
    write_lqz(dir.file("x3.lqz"), reversed, fx.cfg);
    CHECK(testutil::read_bytes(dir.file("x1.lqz")) == testutil::read_bytes(dir.file("x3.lqz")));
}

TEST_CASE("an empty adapter list still carries the configuration") {
    TempDir dir;
    QuantConfig cfg;
    cfg.rho = 0.65;
    const auto p = dir.file("empty.lqz");
    write_lqz(p, std::vector<QuantizedAdapter>{}, cfg);
    const LqzFile back = read_lqz(p);
    CHECK(back.adapters.empty());
    CHECK(back.config.rho == 0.65);
}

TEST_CASE("duplicate layer names are rejected on write") {
    TempDir dir;
    const Fixture fx;
    std::vector<QuantizedAdapter> dupes{fx.adapters[0], fx.adapters[0]};
    CHECK_THROWS_AS(write_lqz(dir.file("dupe.lqz"), dupes, fx.cfg), std::invalid_argument);
}

TEST_CASE("the header pins the format layout") {
    TempDir dir;
    const Fixture fx;
    const auto p = dir.file("layout.lqz");
    write_lqz(p, fx.adapters, fx.cfg);
    const auto bytes = testutil::read_bytes(p);
    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
        header_len |= static_cast<uint64_t>(bytes[static_cast<size_t>(i)]) << (8 * i);
    const std::string header(bytes.begin() + 8,
                             bytes.begin() + 8 + static_cast<int64_t>(header_len));
    const nlohmann::json j = nlohmann::json::parse(header);
    REQUIRE(j.contains("config"));
    REQUIRE(j.contains("layers"));
    CHECK(j["config"]["format_version"].is_number());
    CHECK(j["config"]["strategy"] == "svd_ratio");

    // Sections tile the payload contiguously in declaration order.
    const uint64_t payload_size = bytes.size() - 8 - header_len;
    uint64_t cursor = 0;
    std::vector<std::string> names;
    for (const auto &[name, layer] : j["layers"].items()) {
        names.push_back(name);
        for (const char *part : {"B_high", "A_high", "B_low", "A_low"}) {
            if (!layer.contains(part)) continue;
            const auto &mat = layer[part];
            for (const char *section : {"codes", "scales", "zero_points"}) {
                if (!mat.contains(section)) continue;
                const auto range = mat[section].get<std::vector<uint64_t>>();
                REQUIRE(range.size() == 2);
                CHECK(range[0] == cursor);
                CHECK(range[1] >= range[0]);
                cursor = range[1];
            }
        }
    }
    CHECK(cursor == payload_size);
    CHECK(std::is_sorted(names.begin(), names.end()));

    // Raw matrices carry no scales; prune layers have no low matrices.
    CHECK(j["layers"]["layer_d"]["B_high"]["scheme"] == "raw");
    CHECK_FALSE(j["layers"]["layer_d"]["B_high"].contains("scales"));
    CHECK_FALSE(j["layers"]["layer_c"].contains("B_low"));
    CHECK_FALSE(j["layers"]["layer_e"].contains("B_high"));
}

TEST_CASE("the config json echoes every knob") {
    QuantConfig cfg;
    cfg.strategy = Strategy::norm_split;
    cfg.static_h = 5;
    cfg.seed = 42;
    const nlohmann::json j = nlohmann::json::parse(quant_config_to_json_string(cfg));
    CHECK(j["strategy"] == "norm_split");
    CHECK(j["rho"] == 0.9);
    CHECK(j["bits_high"] == 2);
    CHECK(j["bits_low"] == 1);
    CHECK(j["group_size"] == 128);
    CHECK(j["opt_steps"] == 100);
    CHECK(j["learning_rate"] == 1e-3);
    CHECK(j["seed"] == 42);
    CHECK(j["static_h"] == 5);
    CHECK(j["b_orientation"] == "column");
    CHECK(j["a_orientation"] == "row");
}

TEST_CASE("malformed artifacts are rejected") {
    TempDir dir;
    const Fixture fx;
    const auto good_path = dir.file("good.lqz");
    write_lqz(good_path, fx.adapters, fx.cfg);
    const auto good = testutil::read_bytes(good_path);
    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
        header_len |= static_cast<uint64_t>(good[static_cast<size_t>(i)]) << (8 * i);
    const std::string header(good.begin() + 8,
                             good.begin() + 8 + static_cast<int64_t>(header_len));
    const std::vector<uint8_t> payload(good.begin() + 8 + static_cast<int64_t>(header_len),
                                       good.end());
    const auto p = dir.file("bad.lqz");

    auto rewrite = [&](nlohmann::json j, std::vector<uint8_t> pay) {
        testutil::write_bytes(p, testutil::frame_file(j.dump(), pay));
        CHECK_THROWS_AS(read_lqz(p), std::runtime_error);
    };

    SUBCASE("truncated payload") {
        std::vector<uint8_t> cut(good.begin(), good.end() - 3);
        testutil::write_bytes(p, cut);
        CHECK_THROWS_AS(read_lqz(p), std::runtime_error);
    }
    SUBCASE("trailing payload bytes") {
        std::vector<uint8_t> extra = good;
        extra.push_back(0);
        testutil::write_bytes(p, extra);
        CHECK_THROWS_AS(read_lqz(p), std::runtime_error);
    }
    SUBCASE("header is not JSON") {
        testutil::write_bytes(p, testutil::frame_file("shrug", payload));
        CHECK_THROWS_AS(read_lqz(p), std::runtime_error);
    }
    SUBCASE("missing config") {
        auto j = nlohmann::json::parse(header);
        j.erase("config");
        rewrite(j, payload);
    }
    SUBCASE("unknown scheme") {
        auto j = nlohmann::json::parse(header);
        j["layers"]["layer_b"]["B_high"]["scheme"] = "ternary";
        rewrite(j, payload);
    }
    SUBCASE("unknown strategy") {
        auto j = nlohmann::json::parse(header);
        j["config"]["strategy"] = "mystery";
        rewrite(j, payload);
    }
    SUBCASE("wrong format version") {
        auto j = nlohmann::json::parse(header);
        j["config"]["format_version"] = 9999;
        rewrite(j, payload);
    }
    SUBCASE("non-contiguous sections") {
        auto j = nlohmann::json::parse(header);
        auto &codes = j["layers"]["layer_a"]["B_high"]["codes"];
        const uint64_t begin = codes[0].get<uint64_t>();
        codes[0] = begin + 1; // leaves a gap before this section
        rewrite(j, payload);
    }
    SUBCASE("section beyond the payload") {
        auto j = nlohmann::json::parse(header);
        nlohmann::json &last = j["layers"]["layer_e"]["A_low"]["scales"];
        last[1] = last[1].get<uint64_t>() + 64;
        rewrite(j, payload);
    }
    SUBCASE("h above the rank") {
        auto j = nlohmann::json::parse(header);
        j["layers"]["layer_b"]["h"] = 99;
        rewrite(j, payload);
    }
    SUBCASE("high matrix shape disagrees with h") {
        auto j = nlohmann::json::parse(header);
        j["layers"]["layer_b"]["h"] = j["layers"]["layer_b"]["h"].get<int64_t>() + 1;
        rewrite(j, payload);
    }
    SUBCASE("orphaned B without A") {
        auto j = nlohmann::json::parse(header);
        j["layers"]["layer_b"].erase("A_high");
        rewrite(j, payload);
    }
    SUBCASE("adapter container instead of artifact") {
        CHECK_THROWS_AS(read_lqz(dir.file("absent.lqz")), std::runtime_error);
        AdapterContainer c;
        oracle::Rng rng(229);
        c.add(oracle::random_adapter(rng, "l", 4, 4, 2));
        write_container(c, dir.file("plain.qla"), StorageDtype::f32);
        CHECK_THROWS_AS(read_lqz(dir.file("plain.qla")), std::runtime_error);
    }
}

TEST_CASE("reading a rewritten file reproduces the original artifacts") {
    // Write, read, write again: the second file must equal the first.
    TempDir dir;
    const Fixture fx;
    const auto p1 = dir.file("first.lqz");
    write_lqz(p1, fx.adapters, fx.cfg);
    const LqzFile back = read_lqz(p1);
    const auto p2 = dir.file("second.lqz");
    write_lqz(p2, back.adapters, back.config);
    CHECK(testutil::read_bytes(p1) == testutil::read_bytes(p2));
}
