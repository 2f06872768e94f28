#pragma once

// Cross-validation, accuracy/AUC, the binomial significance baseline and the
// paired binomial classifier comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccnn/core.hpp"
#include "ccnn/nn.hpp"
#include "ccnn/parallel.hpp"
#include "ccnn/rng.hpp"

namespace ccnn {

/// Distinct subjects are shuffled and dealt round-robin to k folds; every
/// instance follows its subject.
[[nodiscard]] inline FoldAssignment grouped_kfold(std::span<const std::string> ids,
                                                  std::span<const std::string> subject_ids, std::size_t k,
                                                  std::uint64_t seed) {
    if (ids.size() != subject_ids.size()) throw ConfigError("grouped_kfold: ids and subject ids differ in length");
    std::vector<std::string> subjects(subject_ids.begin(), subject_ids.end());
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (k == 0 || k > subjects.size()) {
        throw ConfigError("cannot split " + std::to_string(subjects.size()) + " subjects into " + std::to_string(k) +
                          " folds");
    }
    Rng rng(seed);
    rng.shuffle(std::span(subjects));
    std::map<std::string, std::size_t> fold_of_subject;
    for (std::size_t s = 0; s < subjects.size(); ++s) fold_of_subject[subjects[s]] = s % k;

    FoldAssignment folds;
    folds.fold_count = k;
    folds.ids.assign(ids.begin(), ids.end());
    for (const auto& subject : subject_ids) folds.fold_of.push_back(fold_of_subject.at(subject));
    folds.validate();
    return folds;
}

[[nodiscard]] inline FoldAssignment grouped_kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& inst : ds.instances) ids.push_back(inst.id);
    const auto subjects = ds.subject_ids();
    return grouped_kfold(ids, subjects, k, seed);
}

/// Seeded shuffle of 0..n-1 dealt round-robin, so fold sizes differ by at most one.
[[nodiscard]] inline FoldAssignment plain_kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k == 0 || k > n) throw ConfigError("cannot split " + std::to_string(n) + " instances into " + std::to_string(k) + " folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span(order));
    FoldAssignment folds;
    folds.fold_count = k;
    folds.fold_of.assign(n, 0);
    for (std::size_t pos = 0; pos < n; ++pos) folds.fold_of[order[pos]] = pos % k;
    for (std::size_t i = 0; i < n; ++i) folds.ids.push_back(std::to_string(i));
    folds.validate();
    return folds;
}

[[nodiscard]] inline FoldAssignment plain_kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    auto folds = plain_kfold(ds.size(), k, seed);
    for (std::size_t i = 0; i < ds.size(); ++i) folds.ids[i] = ds.instances[i].id;
    return folds;
}

[[nodiscard]] inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.empty()) throw DataError("accuracy of an empty prediction set");
    if (predictions.size() != labels.size()) throw DataError("accuracy: length mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Mann-Whitney formulation with midranks: P(score_pos > score_neg) + P(tie)/2.
[[nodiscard]] inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DataError("auc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = midrank;
        i = j + 1;
    }
    double positives = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == 1) {
            positives += 1.0;
            rank_sum += rank[i];
        }
    }
    const double negatives = static_cast<double>(n) - positives;
    if (positives == 0.0 || negatives == 0.0) throw DataError("auc needs both classes");
    return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

/// P(X <= k) for X ~ Binomial(n, p), summed in the log domain.
[[nodiscard]] inline double binomial_cdf(std::uint64_t n, std::uint64_t k, double p) {
    if (k > n) throw ConfigError("binomial_cdf: k must be <= n");
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("binomial_cdf: p must be in [0, 1]");
    if (k == n) return 1.0;
    if (p == 0.0) return 1.0;
    if (p == 1.0) return 0.0;
    const double nn = static_cast<double>(n);
    const double log_p = std::log(p);
    const double log_q = std::log1p(-p);
    const double log_n_fact = std::lgamma(nn + 1.0);
    double total = 0.0;
    for (std::uint64_t i = 0; i <= k; ++i) {
        const double ii = static_cast<double>(i);
        const double log_term =
            log_n_fact - std::lgamma(ii + 1.0) - std::lgamma(nn - ii + 1.0) + ii * log_p + (nn - ii) * log_q;
        total += std::exp(log_term);
    }
    return std::min(total, 1.0);
}

struct Baseline {
    std::uint64_t k = 0;
    double accuracy = 0.0;
};

/// Smallest k with binomial_cdf(n, k, 0.5) >= 0.95; accuracy k/n.
[[nodiscard]] inline Baseline baseline_accuracy(std::uint64_t n) {
    if (n == 0) throw ConfigError("baseline_accuracy needs n >= 1");
    const double nn = static_cast<double>(n);
    const double log_half_n = nn * std::log(0.5);
    const double log_n_fact = std::lgamma(nn + 1.0);
    double cdf = 0.0;
    for (std::uint64_t k = 0; k < n; ++k) {
        const double kk = static_cast<double>(k);
        cdf += std::exp(log_n_fact - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0) + log_half_n);
        if (cdf >= 0.95) return {k, kk / nn};
    }
    return {n, 1.0};
}

struct Comparison {
    std::size_t discordant = 0; // instances where exactly one classifier is right
    std::size_t wins_a = 0;     // ... of which A is right
    double p_value = 1.0;
};

/// Two-sided exact binomial test on the discordant predictions.
[[nodiscard]] inline Comparison compare_classifiers(std::span<const int> preds_a, std::span<const int> preds_b,
                                                    std::span<const int> labels) {
    if (preds_a.size() != labels.size() || preds_b.size() != labels.size()) {
        throw DataError("compare_classifiers: length mismatch");
    }
    Comparison c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool a = preds_a[i] == labels[i];
        const bool b = preds_b[i] == labels[i];
        if (a != b) {
            ++c.discordant;
            c.wins_a += a;
        }
    }
    if (c.discordant == 0) return c;
    const double lower = binomial_cdf(c.discordant, c.wins_a, 0.5);
    const double upper = c.wins_a == 0 ? 1.0 : 1.0 - binomial_cdf(c.discordant, c.wins_a - 1, 0.5);
    c.p_value = std::min(1.0, 2.0 * std::min(lower, upper));
    return c;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct EvalReport {
    std::string model;
    std::vector<double> fold_accuracy;
    double mean_fold_accuracy = 0.0;
    double pooled_accuracy = 0.0;
    double pooled_auc = 0.0;
    std::size_t n = 0;
    Baseline baseline;
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<int> predictions;
    std::vector<double> scores;
    std::vector<std::size_t> fold_of;
    std::vector<std::pair<std::string, double>> comparisons; // other model -> p-value
};

/// Trains fold f on every instance outside f (training seed
/// derive_seed(cfg.seed, "fold", f)) and predicts the held-out instances.
/// Folds may run on separate workers; the report is assembled in instance order.
[[nodiscard]] inline EvalReport run_crossval(const Dataset& ds, const ModelSpec& spec, const TrainConfig& cfg,
                                             const FoldAssignment& folds, std::size_t workers = 1) {
    ds.validate();
    folds.validate();
    if (folds.fold_of.size() != ds.size()) throw ConfigError("fold assignment does not cover the dataset");
    const InputBatch all = encode_inputs(ds, spec);

    EvalReport report;
    report.model = std::string(to_string(spec.kind));
    report.n = ds.size();
    report.labels = all.labels;
    report.fold_of = folds.fold_of;
    report.predictions.assign(ds.size(), 0);
    report.scores.assign(ds.size(), 0.0);
    for (const auto& inst : ds.instances) report.ids.push_back(inst.id);

    parallel_for(folds.fold_count, workers, [&](std::size_t f) {
        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t i = 0; i < ds.size(); ++i) (folds.fold_of[i] == f ? test_rows : train_rows).push_back(i);
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, "fold", f);
        const auto trained = train(spec, all.gather(train_rows), fold_cfg);
        const auto preds = predict_batch(trained.params, spec, all.gather(test_rows));
        for (std::size_t k = 0; k < test_rows.size(); ++k) {
            report.predictions[test_rows[k]] = preds[k].label;
            report.scores[test_rows[k]] = preds[k].score;
        }
    });

    for (std::size_t f = 0; f < folds.fold_count; ++f) {
        std::vector<int> p, l;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (folds.fold_of[i] == f) {
                p.push_back(report.predictions[i]);
                l.push_back(report.labels[i]);
            }
        }
        report.fold_accuracy.push_back(accuracy(p, l));
    }
    report.mean_fold_accuracy = std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(), 0.0) /
                                static_cast<double>(folds.fold_count);
    report.pooled_accuracy = accuracy(report.predictions, report.labels);
    report.pooled_auc = auc(report.scores, report.labels);
    report.baseline = baseline_accuracy(report.n);
    return report;
}

inline nlohmann::ordered_json to_json(const EvalReport& r, bool include_predictions = true) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["n"] = r.n;
    j["pooled_accuracy"] = r.pooled_accuracy;
    j["pooled_auc"] = r.pooled_auc;
    j["fold_accuracy"] = r.fold_accuracy;
    j["mean_fold_accuracy"] = r.mean_fold_accuracy;
    j["baseline_k"] = r.baseline.k;
    j["baseline_accuracy"] = r.baseline.accuracy;
    j["above_baseline"] = r.pooled_accuracy > r.baseline.accuracy;
    auto& comps = j["comparisons"] = nlohmann::ordered_json::array();
    for (const auto& [other, p] : r.comparisons) comps.push_back({{"other", other}, {"p_value", p}});
    if (include_predictions) {
        auto& rows = j["predictions"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < r.n; ++i) {
            rows.push_back({{"id", r.ids[i]},
                            {"fold", r.fold_of[i]},
                            {"label", r.labels[i]},
                            {"prediction", r.predictions[i]},
                            {"score", r.scores[i]}});
        }
    }
    return j;
}

} // namespace ccnn
