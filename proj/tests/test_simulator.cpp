#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "ccnn/rng.hpp"
#include "ccnn/simulator.hpp"

using namespace ccnn;

namespace {

ConnectivityMatrix random_symmetric(std::size_t n, Rng& rng) {
    std::vector<double> v(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = v[j * n + i] = rng.normal();
    }
    return {n, Metric::correlation, std::move(v)};
}

} // namespace

TEST(BasePair, ValidCorrelationMatrices) {
    const auto [h, p] = synthesize_base_pair(17, 30, 60, 4);
    for (const auto* m : {&h, &p}) {
        EXPECT_EQ(m->metric(), Metric::correlation);
        for (std::size_t i = 0; i < 30; ++i) {
            EXPECT_EQ((*m)(i, i), 1.0);
            for (std::size_t j = 0; j < 30; ++j) {
                EXPECT_EQ((*m)(i, j), (*m)(j, i));
                EXPECT_LE(std::abs((*m)(i, j)), 1.0);
            }
        }
    }
    double max_diff = 0.0;
    for (std::size_t c = 0; c < h.values().size(); ++c) max_diff = std::max(max_diff, std::abs(h.values()[c] - p.values()[c]));
    EXPECT_GT(max_diff, 0.0);

    const auto again = synthesize_base_pair(17, 30, 60, 4);
    EXPECT_EQ(again.first, h);
    EXPECT_EQ(again.second, p);
    EXPECT_THROW((void)synthesize_base_pair(1, 10, 4, 4), ConfigError);
}

TEST(ImplantRows, DefinitionOnSmallMatrix) {
    const ConnectivityMatrix base(3, Metric::correlation, {1, 0.1, 0.2, 0.1, 1, 0.3, 0.2, 0.3, 1});
    const ConnectivityMatrix donor(3, Metric::correlation, {1, 0.7, 0.8, 0.7, 1, 0.9, 0.8, 0.9, 1});
    const auto out = implant_rows(base, donor, GroundTruth{{0}});
    EXPECT_EQ(out(0, 1), 0.7);
    EXPECT_EQ(out(2, 0), 0.8);
    EXPECT_EQ(out(1, 2), 0.3);
    EXPECT_EQ(implant_rows(base, donor, GroundTruth{{0, 1, 2}}), donor);
}

TEST(ImplantRows, PreservesSymmetryAndTouchesOnlyChosenRows) {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 3 + rng.below(20);
        const auto base = random_symmetric(n, rng), donor = random_symmetric(n, rng);
        const auto rois = choose_rois(n, 1 + rng.below(n - 1), rng.next_u64());
        const std::set<std::size_t> chosen(rois.begin(), rois.end());
        const auto out = implant_rows(base, donor, GroundTruth{rois}); // constructor re-checks symmetry
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const bool touched = chosen.count(i) || chosen.count(j);
                ASSERT_EQ(out(i, j), touched ? donor(i, j) : base(i, j));
            }
        }
    }
    EXPECT_THROW((void)implant_rows(random_symmetric(4, rng), random_symmetric(5, rng), GroundTruth{{0}}), DataError);
}

TEST(SymmetricNoise, MaxAbsOneSymmetricZeroDiagonal) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t n = 2 + seed * 7;
        const auto s = symmetric_noise(n, seed);
        double max_abs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_EQ(s[i * n + i], 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                EXPECT_EQ(s[i * n + j], s[j * n + i]);
                max_abs = std::max(max_abs, std::abs(s[i * n + j]));
            }
        }
        EXPECT_EQ(max_abs, 1.0);
    }
}

// Expected off-diagonal std at N=499: 0.17 +/- 0.02.
TEST(SymmetricNoise, OffDiagonalStdAt499Rois) {
    const std::size_t n = 499;
    double mean_std = 0.0;
    const int seeds = 5;
    for (int seed = 0; seed < seeds; ++seed) {
        const auto s = symmetric_noise(n, derive_seed(1234, "noise", static_cast<std::uint64_t>(seed)));
        double sum = 0.0, sq = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                sum += s[i * n + j];
                sq += s[i * n + j] * s[i * n + j];
                ++count;
            }
        }
        const double mean = sum / static_cast<double>(count);
        mean_std += std::sqrt(sq / static_cast<double>(count) - mean * mean);
    }
    mean_std /= seeds;
    EXPECT_NEAR(mean_std, 0.17, 0.02);
}

TEST(ChooseRois, DistinctSortedInRange) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const std::size_t n = 2 + seed % 50;
        const std::size_t k = 1 + seed % (n - 1);
        const auto rois = choose_rois(n, k, seed);
        ASSERT_EQ(rois.size(), k);
        ASSERT_TRUE(std::is_sorted(rois.begin(), rois.end()));
        ASSERT_EQ(std::set<std::size_t>(rois.begin(), rois.end()).size(), k);
        ASSERT_LT(rois.back(), n);
    }
}

TEST(GenerateDataset, FullConfigurationShape) {
    SimulationConfig cfg;
    cfg.roi_count = 40;
    cfg.modified_roi_count = 5;
    cfg.noise_weight = 3.0;
    cfg.seed = 9;
    const auto out = generate_dataset(cfg);
    ASSERT_EQ(out.dataset.size(), 150u);
    int ones = 0;
    std::set<std::string> subjects;
    for (const auto& inst : out.dataset.instances) {
        ones += inst.label;
        subjects.insert(inst.subject_id);
        ASSERT_EQ(inst.channels.size(), 1u);
        EXPECT_EQ(inst.channels[0].metric(), Metric::correlation);
    }
    EXPECT_EQ(ones, 75);
    EXPECT_EQ(subjects.size(), 150u);
    EXPECT_EQ(out.truth.modified_roi_indices.size(), 5u);
    EXPECT_NO_THROW(out.dataset.validate());
}

TEST(GenerateDataset, ZeroNoiseReproducesTemplates) {
    SimulationConfig cfg;
    cfg.roi_count = 25;
    cfg.modified_roi_count = 3;
    cfg.noise_weight = 0.0;
    cfg.replicas_per_class = 4;
    cfg.seed = 5;
    const auto out = generate_dataset(cfg);
    const auto [healthy, patient] = synthesize_base_pair(cfg.seed, 25, cfg.synthetic.timepoints, cfg.synthetic.factors);
    const std::set<std::size_t> chosen(out.truth.modified_roi_indices.begin(), out.truth.modified_roi_indices.end());
    for (const auto& inst : out.dataset.instances) {
        const auto& m = inst.channels[0];
        if (inst.label == 0) {
            EXPECT_EQ(m, healthy);
            continue;
        }
        for (std::size_t i = 0; i < 25; ++i) {
            for (std::size_t j = 0; j < 25; ++j) {
                const bool touched = chosen.count(i) || chosen.count(j);
                ASSERT_EQ(m(i, j), touched ? patient(i, j) : healthy(i, j));
            }
        }
    }
}

TEST(GenerateDataset, DeterministicForAnyWorkerCount) {
    SimulationConfig cfg;
    cfg.roi_count = 30;
    cfg.modified_roi_count = 2;
    cfg.noise_weight = 2.5;
    cfg.replicas_per_class = 10;
    cfg.seed = 77;
    const auto a = generate_dataset(cfg, 1);
    const auto b = generate_dataset(cfg, 4);
    ASSERT_EQ(a.dataset.size(), b.dataset.size());
    EXPECT_EQ(a.truth.modified_roi_indices, b.truth.modified_roi_indices);
    for (std::size_t i = 0; i < a.dataset.size(); ++i) {
        EXPECT_EQ(a.dataset.instances[i].id, b.dataset.instances[i].id);
        EXPECT_EQ(a.dataset.instances[i].channels, b.dataset.instances[i].channels);
    }
    cfg.seed = 78;
    const auto c = generate_dataset(cfg, 1);
    EXPECT_NE(c.dataset.instances[0].channels, a.dataset.instances[0].channels);
}

TEST(GenerateDataset, UserSuppliedBasePair) {
    Rng rng(1);
    SimulationConfig cfg;
    cfg.roi_count = 6;
    cfg.modified_roi_count = 1;
    cfg.noise_weight = 0.0;
    cfg.replicas_per_class = 2;
    cfg.base_pair.emplace(random_symmetric(6, rng), random_symmetric(6, rng));
    const auto out = generate_dataset(cfg);
    EXPECT_EQ(out.dataset.instances[0].channels[0], cfg.base_pair->first);
    cfg.roi_count = 7;
    EXPECT_THROW((void)generate_dataset(cfg), ConfigError);
}

TEST(SimulationConfig, Validation) {
    SimulationConfig cfg;
    cfg.roi_count = 10;
    cfg.modified_roi_count = 10;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.modified_roi_count = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.modified_roi_count = 1;
    cfg.replicas_per_class = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.replicas_per_class = 1;
    cfg.noise_weight = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(GroundTruth, JsonRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "ccnn_test_truth.json";
    save_ground_truth(GroundTruth{{3, 8, 42}}, path);
    EXPECT_EQ(load_ground_truth(path).modified_roi_indices, (std::vector<std::size_t>{3, 8, 42}));
    std::filesystem::remove(path);
}
