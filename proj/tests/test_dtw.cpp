#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ccnn/dtw.hpp"
#include "ccnn/rng.hpp"
#include "oracles.hpp"

using namespace ccnn;

namespace {

DtwConfig raw(std::size_t w, StepCost cost = StepCost::squared_difference) {
    DtwConfig cfg;
    cfg.window = w;
    cfg.cost = cost;
    cfg.znormalize = false;
    return cfg;
}

std::vector<double> random_series(Rng& rng, std::size_t len) {
    std::vector<double> x(len);
    for (auto& v : x) v = rng.normal();
    return x;
}

} // namespace

TEST(ZNormalize, Examples) {
    const std::vector<double> x{1, 2, 3};
    const auto z = znormalize(x);
    EXPECT_NEAR(z[0], -std::sqrt(1.5), 1e-12);
    EXPECT_NEAR(z[1], 0.0, 1e-12);
    EXPECT_NEAR(z[2], std::sqrt(1.5), 1e-12);

    const std::vector<double> c{5, 5, 5};
    EXPECT_EQ(znormalize(c), (std::vector<double>{0, 0, 0}));
}

TEST(ZNormalize, MomentsAndIdempotence) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_series(rng, 2 + rng.below(200));
        for (auto& v : x) v = 3.0 * v + 7.0;
        const auto z = znormalize(x);
        const double n = static_cast<double>(z.size());
        const double mean = std::accumulate(z.begin(), z.end(), 0.0) / n;
        double ss = 0;
        for (double v : z) ss += (v - mean) * (v - mean);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(std::sqrt(ss / n), 1.0, 1e-12);
        const auto zz = znormalize(z);
        for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(zz[i], z[i], 1e-12);
    }
}

TEST(DtwDistance, Examples) {
    const std::vector<double> a{1, 2, 3};
    EXPECT_EQ(dtw_distance(a, a, raw(3)), 0.0);
    EXPECT_EQ(dtw_distance(std::vector<double>{1, 2}, std::vector<double>{2, 2}, raw(0)), 1.0);
    const std::vector<double> x1{0, 1, 0}, x2{0, 0, 1};
    EXPECT_EQ(dtw_distance(x1, x2, raw(2)), 1.0);
    EXPECT_EQ(dtw_distance(x1, x2, raw(2)), oracle::dtw(x1, x2, 2));
}

TEST(DtwDistance, InfeasibleBandIsAnError) {
    const std::vector<double> a{1, 2, 3, 4}, b{1, 2};
    EXPECT_THROW((void)dtw_distance(a, b, raw(1)), DataError);
    EXPECT_NO_THROW((void)dtw_distance(a, b, raw(2)));
}

TEST(DtwDistance, WindowLargerThanSeriesIsClamped) {
    const std::vector<double> a{0, 1, 0, 2}, b{0, 0, 1, 2};
    EXPECT_EQ(dtw_distance(a, b, raw(100)), dtw_distance(a, b, raw(4)));
}

TEST(DtwDistance, MatchesBruteForceOracle) {
    Rng rng(2024);
    int checked = 0;
    for (int trial = 0; trial < 1500; ++trial) {
        const std::size_t l1 = 1 + rng.below(6), l2 = 1 + rng.below(6);
        const auto a = random_series(rng, l1), b = random_series(rng, l2);
        const std::size_t gap = l1 > l2 ? l1 - l2 : l2 - l1;
        const std::size_t w = gap + rng.below(std::max(l1, l2) - gap + 1);
        const bool squared = rng.below(2) == 0;
        const auto cfg = raw(w, squared ? StepCost::squared_difference : StepCost::absolute_difference);

        const auto acc = dtw_fill(a, b, cfg);
        const double expected = oracle::dtw(a, b, w, squared);
        ASSERT_EQ(acc.distance(), expected) << "trial " << trial;
        const auto path = reconstruct_path(acc);
        ASSERT_EQ(path_cost(path, a, b, cfg.cost), expected) << "trial " << trial;
        ++checked;
    }
    EXPECT_EQ(checked, 1500);
}

TEST(DtwDistance, SymmetricForEqualLengths) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t l = 2 + rng.below(40);
        const auto a = random_series(rng, l), b = random_series(rng, l);
        const auto cfg = raw(rng.below(l + 1));
        EXPECT_EQ(dtw_distance(a, b, cfg), dtw_distance(b, a, cfg));
    }
}

TEST(DtwDistance, NonIncreasingInWindow) {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t l = 2 + rng.below(30);
        const auto a = random_series(rng, l), b = random_series(rng, l);
        double prev = dtw_distance(a, b, raw(0));
        for (std::size_t w = 1; w <= l; ++w) {
            const double d = dtw_distance(a, b, raw(w));
            EXPECT_LE(d, prev);
            prev = d;
        }
    }
}

TEST(DtwDistance, ZNormalizationDefaultsOn) {
    const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40};
    DtwConfig cfg;
    cfg.window = 4;
    EXPECT_TRUE(cfg.znormalize);
    EXPECT_NEAR(dtw_distance(a, b, cfg), 0.0, 1e-24);
    EXPECT_GT(dtw_distance(a, b, raw(4)), 100.0);
}

TEST(WarpingPath, Examples) {
    const std::vector<double> x1{0, 1, 0}, x2{0, 0, 1};
    const auto r = dtw(x1, x2, raw(2));
    const WarpingPath expected{{1, 1}, {1, 2}, {2, 3}, {3, 3}};
    EXPECT_EQ(r.path, expected);
    EXPECT_EQ(r.path_length_raw, 4u);
    EXPECT_EQ(r.path_length_excess, 1u);
    EXPECT_NEAR(r.path_length_relative, 1.0 / 3.0, 1e-15);

    std::vector<double> s(120);
    std::iota(s.begin(), s.end(), 0.0);
    const auto same = dtw(s, s, raw(10));
    EXPECT_EQ(same.path.size(), 120u);
    EXPECT_EQ(same.path_length_excess, 0u);
    EXPECT_EQ(same.path_length_relative, 0.0);
    for (std::size_t i = 0; i < same.path.size(); ++i) EXPECT_EQ(same.path[i], std::make_pair(i + 1, i + 1));
}

TEST(WarpingPath, StructuralProperties) {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t l = 2 + rng.below(25);
        const auto a = random_series(rng, l), b = random_series(rng, l);
        const std::size_t w = rng.below(l + 1);
        const auto r = dtw(a, b, raw(w));
        ASSERT_EQ(r.path.front(), std::make_pair(std::size_t{1}, std::size_t{1}));
        ASSERT_EQ(r.path.back(), std::make_pair(l, l));
        for (std::size_t k = 1; k < r.path.size(); ++k) {
            const auto di = r.path[k].first - r.path[k - 1].first;
            const auto dj = r.path[k].second - r.path[k - 1].second;
            ASSERT_TRUE(di <= 1 && dj <= 1 && di + dj >= 1);
        }
        for (const auto& [i, j] : r.path) ASSERT_LE(i > j ? i - j : j - i, w);
        ASSERT_LE(r.path.size(), 2 * l - 1);
        ASSERT_EQ(path_cost(r.path, a, b, StepCost::squared_difference), r.distance);
    }
}

TEST(PathLength, Examples) {
    WarpingPath diag;
    for (std::size_t i = 1; i <= 120; ++i) diag.emplace_back(i, i);
    EXPECT_EQ(path_length_metric(diag, 120, 120).excess, 0u);

    const std::size_t l = 9;
    WarpingPath lshape;
    for (std::size_t j = 1; j <= l; ++j) lshape.emplace_back(1, j);
    for (std::size_t i = 2; i <= l; ++i) lshape.emplace_back(i, l);
    const auto m = path_length_metric(lshape, l, l);
    EXPECT_EQ(m.excess, l - 1);
    EXPECT_NEAR(m.relative, (l - 1.0) / l, 1e-15);
}

TEST(PathLength, IdentityHasNoExcess) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_series(rng, 2 + rng.below(60));
        const auto r = dtw(x, x, raw(rng.below(x.size() + 1)));
        EXPECT_EQ(r.distance, 0.0);
        EXPECT_EQ(r.path_length_excess, 0u);
    }
}

TEST(AccumulatedCost, BandStorageIsLinear) {
    const AccumulatedCost acc(1000, 1000, 5);
    EXPECT_LE(acc.stored_cells(), 1000u * 11u);
    EXPECT_TRUE(std::isinf(acc.at(0, 500)));
}
