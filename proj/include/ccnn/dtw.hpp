#pragma once

// Banded dynamic time warping.
//
// Indices in WarpingPath are 1-based to match the usual DTW notation; every
// other index in this header is 0-based.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/error.hpp"

namespace ccnn {

enum class StepCost { squared_difference, absolute_difference };

struct DtwConfig {
    std::size_t window = 0;                  // max |i - j| of matched timepoints
    StepCost cost = StepCost::squared_difference;
    bool znormalize = true;
};

using WarpingPath = std::vector<std::pair<std::size_t, std::size_t>>;

struct PathLengthMetric {
    std::size_t excess = 0;
    double relative = 0.0;
};

struct DtwResult {
    double distance = 0.0;
    WarpingPath path;
    std::size_t path_length_raw = 0;
    std::size_t path_length_excess = 0;
    double path_length_relative = 0.0;
};

/// Mean 0, population standard deviation 1. A constant series maps to zeros.
[[nodiscard]] inline std::vector<double> znormalize(std::span<const double> series) {
    const auto n = static_cast<double>(series.size());
    std::vector<double> out(series.size(), 0.0);
    if (series.empty()) return out;
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : series) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / n);
    if (sd == 0.0 || !std::isfinite(sd)) return out;
    for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - mean) / sd;
    return out;
}

[[nodiscard]] inline double step_cost(double a, double b, StepCost cost) noexcept {
    const double d = a - b;
    return cost == StepCost::squared_difference ? d * d : std::abs(d);
}

/// Accumulated cost restricted to the band |i - j| <= window. Only band cells
/// are stored: row i holds columns [i - w, i + w] clipped to [0, cols).
class AccumulatedCost {
public:
    static constexpr double infinity = std::numeric_limits<double>::infinity();

    AccumulatedCost(std::size_t rows, std::size_t cols, std::size_t window)
        : rows_(rows), cols_(cols), window_(window), stride_(std::min(2 * window + 1, cols + window)),
          cells_(rows * stride_, infinity) {}

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t window() const noexcept { return window_; }
    [[nodiscard]] std::size_t stored_cells() const noexcept { return cells_.size(); }

    [[nodiscard]] bool in_band(std::size_t i, std::size_t j) const noexcept {
        return i < rows_ && j < cols_ && (i > j ? i - j : j - i) <= window_;
    }

    /// +infinity outside the band.
    [[nodiscard]] double at(std::size_t i, std::size_t j) const noexcept {
        return in_band(i, j) ? cells_[slot(i, j)] : infinity;
    }

    void set(std::size_t i, std::size_t j, double value) noexcept { cells_[slot(i, j)] = value; }

    [[nodiscard]] std::size_t first_col(std::size_t i) const noexcept { return i > window_ ? i - window_ : 0; }
    [[nodiscard]] std::size_t last_col(std::size_t i) const noexcept { return std::min(cols_ - 1, i + window_); }

    [[nodiscard]] double distance() const noexcept { return at(rows_ - 1, cols_ - 1); }

    /// Series actually compared (after optional z-normalization), kept so the
    /// path cost can be re-summed.
    std::vector<double> x1;
    std::vector<double> x2;
    StepCost cost = StepCost::squared_difference;

private:
    [[nodiscard]] std::size_t slot(std::size_t i, std::size_t j) const noexcept {
        return i * stride_ + (j + window_ - i);
    }

    std::size_t rows_;
    std::size_t cols_;
    std::size_t window_;
    std::size_t stride_;
    std::vector<double> cells_;
};

/// D(i,j) = cost(i,j) + min{D(i,j-1), D(i-1,j), D(i-1,j-1)} inside the band.
/// Windows wider than max(l1, l2) are clamped to it.
[[nodiscard]] inline AccumulatedCost dtw_fill(std::span<const double> x1, std::span<const double> x2,
                                              const DtwConfig& cfg) {
    const std::size_t l1 = x1.size();
    const std::size_t l2 = x2.size();
    if (l1 == 0 || l2 == 0) throw DataError("DTW needs non-empty series");
    const std::size_t w = std::min(cfg.window, std::max(l1, l2));
    const std::size_t gap = l1 > l2 ? l1 - l2 : l2 - l1;
    if (gap > w) {
        throw DataError("infeasible band: |l1 - l2| = " + std::to_string(gap) + " exceeds window " + std::to_string(w));
    }

    AccumulatedCost acc(l1, l2, w);
    acc.cost = cfg.cost;
    if (cfg.znormalize) {
        acc.x1 = znormalize(x1);
        acc.x2 = znormalize(x2);
    } else {
        acc.x1.assign(x1.begin(), x1.end());
        acc.x2.assign(x2.begin(), x2.end());
    }
    const auto& a = acc.x1;
    const auto& b = acc.x2;

    for (std::size_t i = 0; i < l1; ++i) {
        for (std::size_t j = acc.first_col(i); j <= acc.last_col(i); ++j) {
            const double c = step_cost(a[i], b[j], cfg.cost);
            double best;
            if (i == 0 && j == 0) {
                acc.set(i, j, c);
                continue;
            } else if (i == 0) {
                best = acc.at(0, j - 1);
            } else if (j == 0) {
                best = acc.at(i - 1, 0);
            } else {
                best = std::min({acc.at(i, j - 1), acc.at(i - 1, j), acc.at(i - 1, j - 1)});
            }
            acc.set(i, j, c + best);
        }
    }
    return acc;
}

[[nodiscard]] inline double dtw_distance(std::span<const double> x1, std::span<const double> x2,
                                         const DtwConfig& cfg) {
    return dtw_fill(x1, x2, cfg).distance();
}

/// Backtracks from (l1,l2) to (1,1). Among predecessors with the minimal
/// accumulated value the diagonal wins, then (i-1,j), then (i,j-1).
[[nodiscard]] inline WarpingPath reconstruct_path(const AccumulatedCost& acc) {
    WarpingPath path;
    std::size_t i = acc.rows() - 1;
    std::size_t j = acc.cols() - 1;
    path.emplace_back(i + 1, j + 1);
    while (i > 0 || j > 0) {
        if (i == 0) {
            --j;
        } else if (j == 0) {
            --i;
        } else {
            const double diag = acc.at(i - 1, j - 1);
            const double up = acc.at(i - 1, j);
            const double left = acc.at(i, j - 1);
            if (diag <= up && diag <= left) {
                --i;
                --j;
            } else if (up <= left) {
                --i;
            } else {
                --j;
            }
        }
        path.emplace_back(i + 1, j + 1);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

/// Sum of per-step costs along a path, accumulated from (1,1) forwards.
[[nodiscard]] inline double path_cost(const WarpingPath& path, std::span<const double> x1,
                                      std::span<const double> x2, StepCost cost) {
    double total = 0.0;
    bool first = true;
    for (const auto& [i, j] : path) {
        const double c = step_cost(x1[i - 1], x2[j - 1], cost);
        total = first ? c : c + total;
        first = false;
    }
    return total;
}

/// excess = |path| - max(l1,l2); relative = excess / max(l1,l2).
[[nodiscard]] inline PathLengthMetric path_length_metric(const WarpingPath& path, std::size_t l1, std::size_t l2) {
    const std::size_t diagonal = std::max(l1, l2);
    if (path.size() < diagonal) throw DataError("warping path shorter than the main diagonal");
    PathLengthMetric out;
    out.excess = path.size() - diagonal;
    out.relative = static_cast<double>(out.excess) / static_cast<double>(diagonal);
    return out;
}

[[nodiscard]] inline DtwResult dtw(std::span<const double> x1, std::span<const double> x2, const DtwConfig& cfg) {
    const auto acc = dtw_fill(x1, x2, cfg);
    DtwResult r;
    r.distance = acc.distance();
    r.path = reconstruct_path(acc);
    const auto metric = path_length_metric(r.path, x1.size(), x2.size());
    r.path_length_raw = r.path.size();
    r.path_length_excess = metric.excess;
    r.path_length_relative = metric.relative;
    return r;
}

} // namespace ccnn
