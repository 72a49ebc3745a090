#include <cmath>
#include <vector>

#include "doctest.h"
#include "loraquant/matrix.hpp"
#include "loraquant/svd.hpp"
#include "oracles.hpp"

using namespace loraquant;

namespace {

Matrix filled(int64_t rows, int64_t cols, std::initializer_list<float> vals) {
    Matrix m(rows, cols);
    size_t k = 0;
    for (float v : vals) m.values[k++] = v;
    return m;
}

// max |M^T M - I| over the leading block, M read as columns.
double orthonormality_defect(const Matrix &m) {
    double worst = 0.0;
    for (int64_t p = 0; p < m.cols; ++p)
        for (int64_t q = p; q < m.cols; ++q) {
            double dot = 0.0;
            for (int64_t i = 0; i < m.rows; ++i)
                dot += static_cast<double>(m.at(i, p)) * static_cast<double>(m.at(i, q));
            worst = std::max(worst, std::fabs(dot - (p == q ? 1.0 : 0.0)));
        }
    return worst;
}

} // namespace

TEST_CASE("rank selection picks the smallest h reaching the energy share") {
    const std::vector<double> s1 = {2.0, 1.0, 1.0};
    CHECK(select_rank_h(s1, 0.5) == 1); // 4/6 >= 0.5
    CHECK(select_rank_h(s1, 0.7) == 2);
    const std::vector<double> s2 = {3.0, 2.0, 2.0, 1.0};
    CHECK(select_rank_h(s2, 0.7) == 2); // 13/18 >= 0.7
    CHECK(select_rank_h(s2, 0.72) == 2);
    CHECK(select_rank_h(s2, 0.73) == 3);
    CHECK(select_rank_h(s2, 1.0) == 4);
    CHECK(select_rank_h(s2, 1e-9) == 1);
}

TEST_CASE("rank selection is exact on boundary ratios") {
    // Cumulative share 4/5 must satisfy rho = 0.8 exactly.
    const std::vector<double> s = {2.0, 1.0};
    CHECK(select_rank_h(s, 0.8) == 1);
    CHECK(select_rank_h(s, std::nextafter(0.8, 1.0)) == 2);
}

TEST_CASE("rank selection rejects bad input") {
    const std::vector<double> s = {2.0, 1.0};
    CHECK_THROWS_AS(select_rank_h(s, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(select_rank_h(s, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(select_rank_h(std::vector<double>{}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(select_rank_h(std::vector<double>{0.0, 0.0}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(select_rank_h(std::vector<double>{1.0, 2.0}, 0.5), std::invalid_argument);
}

TEST_CASE("orthogonal two-column example factors exactly") {
    const LoraAdapter adapter{"l", filled(3, 2, {1, 0, 0, 1, 0, 0}),
                              filled(2, 4, {2, 0, 0, 0, 0, 1, 0, 0})};
    const SvdFactors f = economy_svd_of_product(adapter);
    REQUIRE(f.singular_values.size() == 2);
    CHECK(f.singular_values[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(f.singular_values[1] == doctest::Approx(1.0).epsilon(1e-12));
    // Singular vectors are +/- standard basis vectors; the sign convention
    // makes the dominant entry positive.
    CHECK(f.U.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.U.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(f.U.at(2, 0)) < 1e-12);
    CHECK(f.V.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.V.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));

    const auto [bp, ap] = reparameterize(f);
    CHECK(bp.at(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
    CHECK(bp.at(1, 1) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(std::fabs(bp.at(2, 0)) < 1e-7);
    CHECK(ap.at(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
    CHECK(ap.at(1, 1) == doctest::Approx(1.0).epsilon(1e-7));

    const SubLoraSplit split = split_subloras(adapter, 0.8);
    CHECK(split.h == 1); // 4/5 reaches 0.8 exactly
    REQUIRE(split.B_high.cols == 1);
    CHECK(split.B_high.at(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
    CHECK(split.B_low.cols == 1);
    CHECK(split.A_low.rows == 1);
}

TEST_CASE("singular values match the dense oracle") {
    oracle::Rng rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t m = rng.uniform_int(8, 64);
        const int64_t n = rng.uniform_int(8, 64);
        const int64_t r = rng.uniform_int(1, std::min<int64_t>(12, std::min(m, n)));
        const LoraAdapter adapter = oracle::random_adapter(rng, "l", m, n, r);

        const SvdFactors f = economy_svd_of_product(adapter);
        const Matrix product = matmul(adapter.B, adapter.A);
        const auto ref = oracle::dense_singular_values(product);

        REQUIRE(f.singular_values.size() == static_cast<size_t>(r));
        // The oracle reports min(m, n) values; everything past r is noise at
        // binary32 resolution of the dense product.
        for (size_t i = 0; i < static_cast<size_t>(r); ++i)
            CHECK(f.singular_values[i] ==
                  doctest::Approx(ref[i]).epsilon(1e-5).scale(ref[0]));
        for (size_t i = static_cast<size_t>(r); i < ref.size(); ++i)
            CHECK(ref[i] <= 1e-4 * ref[0]);
    }
}

TEST_CASE("factors are orthonormal and reconstruct the product") {
    oracle::Rng rng(37);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t m = rng.uniform_int(4, 48);
        const int64_t n = rng.uniform_int(4, 48);
        const int64_t r = rng.uniform_int(1, std::min<int64_t>(10, std::min(m, n)));
        const LoraAdapter adapter = oracle::random_adapter(rng, "l", m, n, r);

        const SvdFactors f = economy_svd_of_product(adapter);
        // The factors are stored as binary32, so the defect floor is the
        // float rounding of orthonormal columns, around 2^-24 * sqrt(m).
        CHECK(orthonormality_defect(f.U) < 1e-6);
        CHECK(orthonormality_defect(f.V) < 1e-6);
        for (size_t i = 1; i < f.singular_values.size(); ++i)
            CHECK(f.singular_values[i] <= f.singular_values[i - 1]);

        const auto [bp, ap] = reparameterize(f);
        const auto ref = oracle::dense_product(adapter.B, adapter.A);
        const auto rec = oracle::dense_product(bp, ap);
        CHECK(oracle::dense_distance(ref, rec) <= 1e-5 * (1.0 + oracle::dense_norm(ref)));
    }
}

TEST_CASE("dropping the tail loses exactly the tail energy") {
    oracle::Rng rng(41);
    for (int trial = 0; trial < 15; ++trial) {
        const int64_t m = rng.uniform_int(8, 40);
        const int64_t n = rng.uniform_int(8, 40);
        const int64_t r = rng.uniform_int(2, std::min<int64_t>(8, std::min(m, n)));
        const LoraAdapter adapter = oracle::random_adapter(rng, "l", m, n, r);
        const int64_t h = rng.uniform_int(1, r - 1);

        const SubLoraSplit split = split_subloras_static(adapter, h);
        double tail = 0.0;
        for (size_t i = static_cast<size_t>(h); i < split.singular_values.size(); ++i)
            tail += split.singular_values[i] * split.singular_values[i];

        const auto ref = oracle::dense_product(adapter.B, adapter.A);
        const auto high = oracle::dense_product(split.B_high, split.A_high);
        const double err = oracle::dense_distance(ref, high);
        CHECK(err == doctest::Approx(std::sqrt(tail)).epsilon(1e-4));
    }
}

TEST_CASE("the two split halves sum back to the product") {
    oracle::Rng rng(43);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 30, 22, 6);
    const SubLoraSplit split = split_subloras(adapter, 0.75);
    REQUIRE(split.h >= 1);
    REQUIRE(split.h <= 6);
    CHECK(split.B_high.cols == split.h);
    CHECK(split.A_high.rows == split.h);
    CHECK(split.B_low.cols == 6 - split.h);
    CHECK(split.A_low.rows == 6 - split.h);

    const auto ref = oracle::dense_product(adapter.B, adapter.A);
    auto rec = oracle::dense_product(split.B_high, split.A_high);
    if (!split.B_low.empty()) {
        const auto low = oracle::dense_product(split.B_low, split.A_low);
        for (size_t i = 0; i < rec.size(); ++i) rec[i] += low[i];
    }
    CHECK(oracle::dense_distance(ref, rec) <= 1e-5 * (1.0 + oracle::dense_norm(ref)));
}

TEST_CASE("selected h is monotone in the energy ratio") {
    oracle::Rng rng(47);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 40, 40, 8);
    const SvdFactors f = economy_svd_of_product(adapter);
    int64_t prev = 0;
    for (double rho = 0.05; rho <= 1.0001; rho += 0.05) {
        const int64_t h = select_rank_h(f.singular_values, std::min(rho, 1.0));
        CHECK(h >= prev);
        CHECK(h >= 1);
        prev = h;
    }
    CHECK(prev == 8); // rho = 1 keeps everything
}

TEST_CASE("static split accepts the h = 0 and h = r extremes") {
    oracle::Rng rng(53);
    const LoraAdapter adapter = oracle::random_adapter(rng, "l", 12, 10, 4);
    const SubLoraSplit none = split_subloras_static(adapter, 0);
    CHECK(none.B_high.empty());
    CHECK(none.B_low.cols == 4);
    const SubLoraSplit all = split_subloras_static(adapter, 4);
    CHECK(all.B_low.empty());
    CHECK(all.B_high.cols == 4);
    CHECK_THROWS_AS(split_subloras_static(adapter, 5), std::invalid_argument);
    CHECK_THROWS_AS(split_subloras_static(adapter, -1), std::invalid_argument);
}

TEST_CASE("an all-zero adapter splits with h = 1 instead of failing") {
    const LoraAdapter adapter{"z", Matrix(6, 2), Matrix(2, 5)};
    const SubLoraSplit split = split_subloras(adapter, 0.9);
    CHECK(split.h == 1);
    CHECK(frobenius_norm(split.B_high) == 0.0);
    CHECK(frobenius_norm(split.A_low) == 0.0);
}

TEST_CASE("non-finite input is rejected") {
    LoraAdapter adapter{"l", Matrix(3, 2), Matrix(2, 3)};
    adapter.B.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(economy_svd_of_product(adapter), std::invalid_argument);
}
