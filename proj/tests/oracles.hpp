#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace oracle {

/// Minimum over all monotone warping paths from (0,0) to (l1-1,l2-1) whose
/// cells satisfy |i-j| <= w. Path sums accumulate forward: total = c + total.
struct BruteForceDtw {
    const std::vector<double>& a;
    const std::vector<double>& b;
    std::size_t w;
    bool squared = true;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::pair<std::size_t, std::size_t>> best_path;
    std::vector<std::pair<std::size_t, std::size_t>> path;
    std::size_t paths_seen = 0;

    double cost(std::size_t i, std::size_t j) const {
        const double d = a[i] - b[j];
        return squared ? d * d : std::abs(d);
    }

    void walk(std::size_t i, std::size_t j, double total) {
        const std::size_t gap = i > j ? i - j : j - i;
        if (gap > w) return;
        total = path.empty() ? cost(i, j) : cost(i, j) + total;
        path.emplace_back(i, j);
        if (i + 1 == a.size() && j + 1 == b.size()) {
            ++paths_seen;
            if (total < best) {
                best = total;
                best_path = path;
            }
        } else {
            if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, total);
            if (i + 1 < a.size()) walk(i + 1, j, total);
            if (j + 1 < b.size()) walk(i, j + 1, total);
        }
        path.pop_back();
    }

    double run() {
        walk(0, 0, 0.0);
        return best;
    }
};

inline double dtw(const std::vector<double>& a, const std::vector<double>& b, std::size_t w, bool squared = true) {
    BruteForceDtw bf{a, b, w, squared};
    return bf.run();
}

/// Textbook two-pass Pearson correlation.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx) * (x[i] - mx);
        dy += (y[i] - my) * (y[i] - my);
    }
    return num / std::sqrt(dx * dy);
}

/// Exhaustive pairwise AUC: P(score_pos > score_neg) + 0.5 P(tie).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0;
    double pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1;
            if (scores[i] > scores[j]) wins += 1;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

/// Direct binomial tail P(X <= k), X ~ Bin(n, 1/2), by summing exact
/// coefficients in long double.
inline double binomial_cdf_half(unsigned n, unsigned k) {
    long double coef = 1.0L;
    long double sum = 0.0L;
    for (unsigned i = 0; i <= k && i <= n; ++i) {
        if (i > 0) coef = coef * static_cast<long double>(n - i + 1) / static_cast<long double>(i);
        sum += coef;
    }
    return static_cast<double>(sum * std::pow(0.5L, static_cast<long double>(n)));
}

/// Two-sided exact sign-test p-value: 2 * min tail, clamped to 1.
inline double sign_test(unsigned successes, unsigned trials) {
    if (trials == 0) return 1.0;
    const unsigned lo = std::min(successes, trials - successes);
    return std::min(1.0, 2.0 * binomial_cdf_half(trials, lo));
}

} // namespace oracle
