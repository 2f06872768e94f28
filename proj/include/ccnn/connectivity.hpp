#pragma once

// All-pairs connectivity matrices from ROI time series.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ccnn/core.hpp"
#include "ccnn/dtw.hpp"
#include "ccnn/parallel.hpp"

namespace ccnn {

enum class PathVariant { excess, relative };

/// What to do with a constant ROI series under the correlation metric.
enum class DegeneratePolicy { error, zero };

struct ConnectivityJob {
    Metric metric = Metric::correlation;
    DtwConfig dtw;                                  // ignored for correlation
    PathVariant path_variant = PathVariant::excess; // only for path_length
    DegeneratePolicy degenerate = DegeneratePolicy::error;
};

class DegenerateSeriesError : public DataError {
public:
    explicit DegenerateSeriesError(std::vector<std::size_t> rois)
        : DataError(make_message(rois)), rois_(std::move(rois)) {}
    [[nodiscard]] const std::vector<std::size_t>& rois() const noexcept { return rois_; }

private:
    static std::string make_message(const std::vector<std::size_t>& rois) {
        std::string msg = "constant ROI series (correlation undefined) at ROI indices:";
        for (auto r : rois) msg += " " + std::to_string(r);
        return msg;
    }
    std::vector<std::size_t> rois_;
};

[[nodiscard]] inline bool is_constant(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

/// Pearson product-moment correlation, clamped to [-1, 1].
[[nodiscard]] inline double pearson(std::span<const double> x1, std::span<const double> x2) {
    if (x1.size() != x2.size()) throw DataError("pearson: series lengths differ");
    if (x1.size() < 2) throw DataError("pearson: need at least 2 samples");
    const auto n = static_cast<double>(x1.size());
    const double m1 = std::accumulate(x1.begin(), x1.end(), 0.0) / n;
    const double m2 = std::accumulate(x2.begin(), x2.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t t = 0; t < x1.size(); ++t) {
        const double a = x1[t] - m1;
        const double b = x2[t] - m2;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateSeriesError({});
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Scalar metric for one ROI pair.
[[nodiscard]] inline double pair_connectivity(std::span<const double> a, std::span<const double> b,
                                              const ConnectivityJob& job) {
    switch (job.metric) {
    case Metric::correlation:
        return pearson(a, b);
    case Metric::dtw_distance:
        return dtw_distance(a, b, job.dtw);
    case Metric::path_length: {
        const auto acc = dtw_fill(a, b, job.dtw);
        const auto metric = path_length_metric(reconstruct_path(acc), a.size(), b.size());
        return job.path_variant == PathVariant::excess ? static_cast<double>(metric.excess) : metric.relative;
    }
    }
    throw ConfigError("unknown metric");
}

/// Each unordered pair i<j is evaluated once (possibly on worker threads,
/// each writing its own cell) and then mirrored serially, so the result is
/// bit-identical for any worker count.
[[nodiscard]] inline ConnectivityMatrix connectivity_matrix(const RoiTimeSeries& ts, const ConnectivityJob& job,
                                                            std::size_t workers = 1) {
    ts.validate();
    const std::size_t n = ts.roi_count;
    std::vector<std::vector<double>> series(n);
    for (std::size_t r = 0; r < n; ++r) series[r] = ts.roi_series(r);

    std::vector<bool> constant(n, false);
    if (job.metric == Metric::correlation) {
        std::vector<std::size_t> bad;
        for (std::size_t r = 0; r < n; ++r) {
            if (is_constant(series[r])) {
                constant[r] = true;
                bad.push_back(r);
            }
        }
        if (!bad.empty() && job.degenerate == DegeneratePolicy::error) throw DegenerateSeriesError(bad);
    }

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(upper_triangle_size(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }

    std::vector<double> values(n * n, 0.0);
    parallel_for(pairs.size(), workers, [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        values[i * n + j] =
            (constant[i] || constant[j]) ? 0.0 : pair_connectivity(series[i], series[j], job);
    });
    for (std::size_t i = 0; i < n; ++i) {
        values[i * n + i] = diagonal_value(job.metric);
        for (std::size_t j = i + 1; j < n; ++j) values[j * n + i] = values[i * n + j];
    }
    return ConnectivityMatrix(n, job.metric, std::move(values));
}

} // namespace ccnn
