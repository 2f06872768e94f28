#pragma once

// Simulated connectome classification datasets.
//
// Two class templates are built from a healthy/patient pair: class 0 is the
// healthy matrix, class 1 is the healthy matrix with the rows and columns of
// k randomly chosen ROIs taken from the patient matrix. Each instance is its
// class template plus noise_weight times a symmetric noise matrix that is
// scaled to a maximal absolute entry of one.
//
// Sub-seeds (see rng.hpp):
//   derive_seed(seed, "base.healthy") / "base.patient"   synthetic base pair
//   derive_seed(seed, "rois")                            ROI selection
//   derive_seed(seed, "noise", i)                        noise of instance i

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccnn/connectivity.hpp"
#include "ccnn/core.hpp"
#include "ccnn/parallel.hpp"
#include "ccnn/rng.hpp"

namespace ccnn {

struct SyntheticBase {
    std::size_t timepoints = 120;
    std::size_t factors = 5;
};

struct SimulationConfig {
    std::size_t roi_count = 499;
    std::size_t modified_roi_count = 1;
    double noise_weight = 1.0;
    std::size_t replicas_per_class = 75;
    std::uint64_t seed = 0;
    SyntheticBase synthetic;
    /// When set, used instead of the synthetic generator.
    std::optional<std::pair<ConnectivityMatrix, ConnectivityMatrix>> base_pair;

    void validate() const {
        if (roi_count < 2) throw ConfigError("simulation needs roi_count >= 2");
        if (modified_roi_count < 1 || modified_roi_count >= roi_count) {
            throw ConfigError("modified_roi_count must satisfy 1 <= k < N");
        }
        if (replicas_per_class < 1) throw ConfigError("replicas_per_class must be >= 1");
        if (!(noise_weight >= 0.0) || !std::isfinite(noise_weight)) throw ConfigError("noise_weight must be >= 0");
        if (base_pair) {
            if (base_pair->first.size() != roi_count || base_pair->second.size() != roi_count) {
                throw ConfigError("base matrices do not match roi_count");
            }
        } else if (synthetic.factors < 1 || synthetic.timepoints <= synthetic.factors) {
            throw ConfigError("synthetic base needs factors >= 1 and timepoints > factors");
        }
    }
};

struct GroundTruth {
    std::vector<std::size_t> modified_roi_indices; // sorted
};

struct SimulatedDataset {
    Dataset dataset;
    GroundTruth truth;
};

/// Correlation matrix of T samples from x = L^T f + e, with f (factors) and
/// e, L entries i.i.d. standard normal.
[[nodiscard]] inline ConnectivityMatrix latent_factor_correlation(std::uint64_t seed, std::size_t n,
                                                                  std::size_t timepoints, std::size_t factors) {
    Rng rng(seed);
    std::vector<double> loadings(factors * n);
    for (auto& l : loadings) l = rng.normal();
    RoiTimeSeries ts;
    ts.roi_count = n;
    ts.timepoint_count = timepoints;
    ts.values.assign(n * timepoints, 0.0);
    std::vector<double> f(factors);
    for (std::size_t t = 0; t < timepoints; ++t) {
        for (auto& v : f) v = rng.normal();
        for (std::size_t r = 0; r < n; ++r) {
            double x = rng.normal();
            for (std::size_t k = 0; k < factors; ++k) x += loadings[k * n + r] * f[k];
            ts.values[t * n + r] = x;
        }
    }
    return connectivity_matrix(ts, ConnectivityJob{.metric = Metric::correlation});
}

[[nodiscard]] inline std::pair<ConnectivityMatrix, ConnectivityMatrix>
synthesize_base_pair(std::uint64_t seed, std::size_t n, std::size_t timepoints, std::size_t factors) {
    if (factors < 1 || timepoints <= factors) throw ConfigError("synthetic base needs factors >= 1 and T > factors");
    return {latent_factor_correlation(derive_seed(seed, "base.healthy"), n, timepoints, factors),
            latent_factor_correlation(derive_seed(seed, "base.patient"), n, timepoints, factors)};
}

/// Rows and columns listed in `rois` come from donor, everything else from base.
[[nodiscard]] inline ConnectivityMatrix implant_rows(const ConnectivityMatrix& base, const ConnectivityMatrix& donor,
                                                     const GroundTruth& rois) {
    const std::size_t n = base.size();
    if (donor.size() != n) throw DataError("implant_rows: dimension mismatch");
    if (base.metric() != donor.metric()) throw DataError("implant_rows: metric mismatch");
    std::vector<bool> modified(n, false);
    for (auto r : rois.modified_roi_indices) {
        if (r >= n) throw DataError("implant_rows: ROI index out of range");
        modified[r] = true;
    }
    std::vector<double> values(base.values().begin(), base.values().end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (modified[i] || modified[j]) values[i * n + j] = donor(i, j);
        }
    }
    return ConnectivityMatrix(n, base.metric(), std::move(values));
}

/// S = M + M^T with standard normal M, zero diagonal, scaled so max|S| == 1.
/// Row-major N x N.
[[nodiscard]] inline std::vector<double> symmetric_noise(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw ConfigError("symmetric_noise needs N >= 2");
    Rng rng(seed);
    std::vector<double> m(n * n);
    for (auto& v : m) v = rng.normal();
    std::vector<double> s(n * n, 0.0);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = m[i * n + j] + m[j * n + i];
            s[i * n + j] = v;
            s[j * n + i] = v;
            max_abs = std::max(max_abs, std::abs(v));
        }
    }
    if (max_abs > 0.0) {
        for (auto& v : s) v /= max_abs;
    }
    return s;
}

/// k distinct indices in [0, n), sorted; partial Fisher-Yates.
[[nodiscard]] inline std::vector<std::size_t> choose_rois(std::size_t n, std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Instances 0..R-1 are class 0 ("h0000"...), R..2R-1 class 1 ("m0000"...).
/// Every instance is its own subject.
[[nodiscard]] inline SimulatedDataset generate_dataset(const SimulationConfig& cfg, std::size_t workers = 1) {
    cfg.validate();
    const std::size_t n = cfg.roi_count;
    auto [healthy, patient] = cfg.base_pair ? *cfg.base_pair
                                            : synthesize_base_pair(cfg.seed, n, cfg.synthetic.timepoints,
                                                                   cfg.synthetic.factors);
    SimulatedDataset out;
    out.truth.modified_roi_indices = choose_rois(n, cfg.modified_roi_count, derive_seed(cfg.seed, "rois"));
    const ConnectivityMatrix modified = implant_rows(healthy, patient, out.truth);
    const ConnectivityMatrix* templates[2] = {&healthy, &modified};

    const std::size_t total = 2 * cfg.replicas_per_class;
    out.dataset.roi_count = n;
    out.dataset.channel_metrics = {Metric::correlation};
    out.dataset.instances.resize(total);
    parallel_for(total, workers, [&](std::size_t idx) {
        const int label = idx < cfg.replicas_per_class ? 0 : 1;
        const std::size_t replica = idx % cfg.replicas_per_class;
        const auto& base = *templates[label];
        std::vector<double> values(base.values().begin(), base.values().end());
        if (cfg.noise_weight != 0.0) {
            const auto noise = symmetric_noise(n, derive_seed(cfg.seed, "noise", idx));
            for (std::size_t c = 0; c < values.size(); ++c) values[c] += cfg.noise_weight * noise[c];
        }
        char id[32];
        std::snprintf(id, sizeof id, "%c%04zu", label == 0 ? 'h' : 'm', replica);
        auto& inst = out.dataset.instances[idx];
        inst.id = id;
        inst.label = label;
        inst.subject_id = id;
        inst.channels.emplace_back(n, Metric::correlation, std::move(values));
    });
    return out;
}

inline void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["modified_roi_indices"] = truth.modified_roi_indices;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

[[nodiscard]] inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        GroundTruth truth;
        truth.modified_roi_indices = nlohmann::json::parse(in).at("modified_roi_indices").get<std::vector<std::size_t>>();
        std::sort(truth.modified_roi_indices.begin(), truth.modified_roi_indices.end());
        return truth;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace ccnn
