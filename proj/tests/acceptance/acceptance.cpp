// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance [--full] [--only 3,4] [--workers N] [--scratch DIR] [--config FILE]
//
// --full runs the N=499 variants of criteria 5 and 7 in addition to the
// N=100 ones.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccnn/pipeline.hpp"

#include "../gradcheck.hpp"
#include "../oracles.hpp"

using namespace ccnn;
namespace fs = std::filesystem;

namespace {

struct Options {
    bool full = false;
    std::size_t workers = 1;
    fs::path scratch = fs::temp_directory_path() / "ccnn_acceptance";
    fs::path config;
    nlohmann::json train; // per-model training overrides from the config
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << std::fixed << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path fresh_dir(const Options& opt, const std::string& name) {
    const auto dir = opt.scratch / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PipelineConfig sweep_config(const Options& opt, std::uint64_t seed, std::size_t n, std::vector<std::size_t> ks,
                            std::vector<double> ws, std::vector<std::string> models, const fs::path& out) {
    nlohmann::json j = {{"seed", seed},
                        {"workers", opt.workers},
                        {"out_dir", out.string()},
                        {"models", models},
                        {"cv", {{"folds", 10}}},
                        {"train", opt.train},
                        {"simulation",
                         {{"roi_count", n}, {"modified_roi_counts", ks}, {"noise_weights", ws}, {"replicas_per_class", 75}}}};
    return parse_pipeline_config(j);
}

// 1 -------------------------------------------------------------------------

Outcome param_counts(const Options&) {
    const std::pair<ModelSpec, ParamCount> cases[] = {
        {ModelSpec::ccnn(499, 1), {4132224, 290}},      {ModelSpec::ccnn(499, 2), {4164160, 290}},
        {ModelSpec::simple(124251), {15904384, 130}},   {ModelSpec::simple(248502), {31808512, 130}},
        {ModelSpec::deep(124251), {15916608, 226}},     {ModelSpec::deep(248502), {31820736, 226}},
    };
    Outcome o{true, ""};
    for (const auto& [spec, expected] : cases) {
        const auto got = param_count(spec);
        if (!(got == expected)) o.pass = false;
        o.detail += std::string(o.detail.empty() ? "" : ", ") + std::string(to_string(spec.kind)) + " " +
                    std::to_string(got.weights) + "+" + std::to_string(got.biases);
    }
    return o;
}

// 2 -------------------------------------------------------------------------

Outcome baseline_anchors(const Options&) {
    const auto b150 = baseline_accuracy(150), b146 = baseline_accuracy(146);
    const double f150 = binomial_cdf(150, 85, 0.5), f146 = binomial_cdf(146, 83, 0.5);
    const bool ks = b150.k == 85 && b146.k == 83 && std::abs(b150.accuracy - 0.5667) < 5e-5 &&
                    std::abs(b146.accuracy - 0.5685) < 5e-5;
    const bool cdfs = std::abs(f150 - 0.959) <= 0.001 && std::abs(f146 - 0.959) <= 0.001;
    return {ks && cdfs, "baseline(150)=(" + std::to_string(b150.k) + ", " + fmt(b150.accuracy) + ") baseline(146)=(" +
                            std::to_string(b146.k) + ", " + fmt(b146.accuracy) + ") F(150,85)=" + fmt(f150, 5) +
                            " F(146,83)=" + fmt(f146, 5) + " target 0.959+-0.001"};
}

// 3 -------------------------------------------------------------------------

Outcome dtw_oracle(const Options&) {
    Rng rng(3);
    std::size_t trials = 0, mismatches = 0;
    for (; trials < 2000; ++trials) {
        const std::size_t l1 = 1 + rng.below(6), l2 = 1 + rng.below(6);
        std::vector<double> a(l1), b(l2);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        DtwConfig cfg;
        cfg.window = std::max(l1, l2);
        cfg.znormalize = false;
        cfg.cost = rng.below(2) ? StepCost::squared_difference : StepCost::absolute_difference;
        const auto r = dtw(a, b, cfg);
        const double expected = oracle::dtw(a, b, cfg.window, cfg.cost == StepCost::squared_difference);
        if (r.distance != expected || path_cost(r.path, a, b, cfg.cost) != expected) ++mismatches;
    }
    return {mismatches == 0, std::to_string(trials) + " pairs, " + std::to_string(mismatches) + " mismatches"};
}

// 4 -------------------------------------------------------------------------

Outcome gradients(const Options&) {
    Outcome o{true, ""};
    std::uint64_t seed = 40;
    for (const auto& spec : gradcheck::toy_specs()) {
        double worst = 0.0;
        std::string where;
        std::size_t checked = 0;
        for (int rep = 0; rep < 3; ++rep, seed += 4) {
            const auto p = gradcheck::jitter(init_params(spec, seed), seed + 1);
            const auto batch = gradcheck::random_batch(spec, 5, seed + 2);
            Rng rng(seed + 3);
            const auto masks = sample_dropout(spec, batch.count, 0.6, DropoutPlacement{}, rng);
            const auto r = gradcheck::run(spec, p, batch, masks, 1e-5);
            checked += r.checked;
            if (r.max_rel_error >= worst) {
                worst = r.max_rel_error;
                where = r.worst;
            }
        }
        if (!(worst < 1e-5)) o.pass = false;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s%s: %zu params, max rel err %.2e at %s", o.detail.empty() ? "" : "; ",
                      std::string(to_string(spec.kind)).c_str(), checked, worst, where.c_str());
        o.detail += buf;
    }
    return o;
}

// 5 -------------------------------------------------------------------------

Outcome low_noise(const Options& opt) {
    std::vector<std::size_t> sizes{100};
    if (opt.full) sizes.push_back(499);
    Outcome o{true, ""};
    for (auto n : sizes) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = fresh_dir(opt, "low_noise_" + std::to_string(n));
        const auto r = cmd_sweep(sweep_config(opt, 1, n, {10}, {1.0}, {"ccnn"}, out));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto& cell = r.cells.at(0);
        const double acc = cell.status == "ok" ? cell.reports.at("ccnn").pooled_accuracy : 0.0;
        if (!(acc >= 0.95)) o.pass = false;
        o.detail += std::string(o.detail.empty() ? "" : "; ") + "N=" + std::to_string(n) + " ccnn accuracy " + fmt(acc) +
                    " (" + fmt(secs, 0) + " s)";
    }
    return o;
}

// 6 -------------------------------------------------------------------------

Outcome ordering(const Options& opt) {
    std::map<std::string, std::vector<double>> acc;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto out = fresh_dir(opt, "ordering_" + std::to_string(seed));
        const auto r = cmd_sweep(sweep_config(opt, seed, 100, {5}, {4, 5, 6, 7}, {"simple", "deep", "ccnn"}, out));
        for (const auto& cell : r.cells) {
            if (cell.status != "ok") return {false, "cell failed: " + cell.status};
            for (const auto& [name, report] : cell.reports) acc[name].push_back(report.pooled_accuracy);
        }
    }
    auto mean = [&](const std::string& m) {
        return std::accumulate(acc[m].begin(), acc[m].end(), 0.0) / static_cast<double>(acc[m].size());
    };
    const double c = mean("ccnn"), d = mean("deep"), s = mean("simple");
    return {c >= d && d >= s - 0.02, "mean accuracy ccnn " + fmt(c) + ", deep " + fmt(d) + ", simple " + fmt(s) +
                                         " over " + std::to_string(acc["ccnn"].size()) + " runs"};
}

// 7 -------------------------------------------------------------------------

// Seed s (1..10): simulation seed derive_seed(s, "recovery.simulate", k),
// training seed derive_seed(s, "recovery.train", k).
std::size_t recovery_hits(const Options& opt, std::size_t n, std::size_t k, std::uint64_t s) {
    SimulationConfig sim;
    sim.roi_count = n;
    sim.modified_roi_count = k;
    sim.noise_weight = 5.0;
    sim.replicas_per_class = 75;
    sim.seed = derive_seed(s, "recovery.simulate", k);
    const auto data = generate_dataset(sim, opt.workers);

    PipelineConfig pc;
    pc.train = opt.train;
    const auto spec = pc.model_spec(ModelKind::ccnn, n, 1);
    auto tc = pc.train_config(ModelKind::ccnn);
    tc.seed = derive_seed(s, "recovery.train", k);
    const auto trained = train(spec, encode_inputs(data.dataset, spec), tc);
    const auto profile = importance_profile(trained.params);
    return recovery_score(profile.roi[0], data.truth, k).hits;
}

Outcome recovery(const Options& opt) {
    std::vector<std::size_t> sizes{100};
    if (opt.full) sizes.push_back(499);
    Outcome o{true, ""};
    for (auto n : sizes) {
        std::size_t single = 0, multi = 0;
        std::string hits5;
        for (std::uint64_t s = 1; s <= 10; ++s) {
            if (recovery_hits(opt, n, 1, s) == 1) ++single;
            const auto h = recovery_hits(opt, n, 5, s);
            if (h >= 3) ++multi;
            hits5 += std::to_string(h);
        }
        if (single < 8 || multi < 7) o.pass = false;
        o.detail += std::string(o.detail.empty() ? "" : "; ") + "N=" + std::to_string(n) + " k=1 argmax correct " +
                    std::to_string(single) + "/10, k=5 top-5 hits>=3 " + std::to_string(multi) + "/10 (hits " +
                    hits5 + ")";
    }
    return o;
}

// 8 -------------------------------------------------------------------------

// 49 subjects, 146 sessions (48 with three sessions, 1 with two), random
// time series with a weak label-dependent coupling between ROI 0 and 1.
fs::path write_cohort(const fs::path& dir, std::size_t rois, std::size_t timepoints) {
    Rng rng(8);
    nlohmann::json manifest;
    manifest["sessions"] = nlohmann::json::array();
    for (std::size_t s = 0; s < 49; ++s) {
        const int label = static_cast<int>(s % 2);
        const std::size_t sessions = s < 48 ? 3 : 2;
        for (std::size_t r = 0; r < sessions; ++r) {
            const std::string id = "sub" + std::to_string(s) + "_ses" + std::to_string(r);
            std::ofstream csv(dir / (id + ".csv"));
            for (std::size_t k = 0; k < rois; ++k) csv << (k ? "," : "") << "roi" << k;
            csv << '\n';
            for (std::size_t t = 0; t < timepoints; ++t) {
                std::vector<double> row(rois);
                for (auto& v : row) v = rng.normal();
                if (label == 1) row[1] += 0.8 * row[0];
                for (std::size_t k = 0; k < rois; ++k) csv << (k ? "," : "") << row[k];
                csv << '\n';
            }
            manifest["sessions"].push_back(
                {{"id", id}, {"subject_id", "sub" + std::to_string(s)}, {"label", label}, {"timeseries", id + ".csv"}});
        }
    }
    std::ofstream(dir / "sessions.json") << manifest.dump(2);
    return dir / "sessions.json";
}

Outcome real_pipeline(const Options& opt) {
    const auto dir = fresh_dir(opt, "cohort");
    const auto sessions = write_cohort(dir, 12, 60);
    nlohmann::json j = {{"seed", 8},
                        {"workers", opt.workers},
                        {"out_dir", (dir / "out").string()},
                        {"sessions", sessions.string()},
                        {"models", {"simple", "deep", "ccnn"}},
                        {"cv", {{"folds", 7}, {"grouped", true}}},
                        {"connectivity", {{"channel_sets", {{"correlation"}, {"dtw"}, {"dtw", "path"}}}, {"window", 6}}},
                        {"train",
                         {{"default", {{"epochs", 20}}},
                          {"ccnn", {{"conv1_filters", 8}, {"conv2_filters", 16}, {"hidden", 8}, {"learning_rate", 1e-3}}},
                          {"deep", {{"first_hidden", 32}, {"hidden", 16}, {"learning_rate", 1e-3}}},
                          {"simple", {{"hidden", 32}}}}}};
    const auto result = cmd_pipeline_real(parse_pipeline_config(j));

    std::vector<std::string> problems;
    std::map<std::string, std::string> subject_of;
    for (const auto& s : load_sessions(sessions)) subject_of[s.id] = s.subject_id;
    std::map<std::string, std::set<std::size_t>> folds_of_subject;
    for (std::size_t i = 0; i < result.folds.ids.size(); ++i) {
        folds_of_subject[subject_of.at(result.folds.ids[i])].insert(result.folds.fold_of[i]);
    }
    std::size_t split = 0;
    for (const auto& [subject, folds] : folds_of_subject) split += folds.size() != 1;
    if (split) problems.push_back(std::to_string(split) + " subjects split");
    if (folds_of_subject.size() != 49) problems.push_back("subject count");
    if (result.folds.fold_count != 7) problems.push_back("fold count");
    for (const auto& run : result.runs) {
        if (run.n != 146 || run.predictions.size() != 146) problems.push_back(run.model + " n=" + std::to_string(run.n));
    }

    const auto report = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
    const auto& table = report.at("table");
    if (table.size() != 9) problems.push_back("table rows " + std::to_string(table.size()));
    for (const auto& row : table) {
        for (const char* key : {"model", "channels", "accuracy", "auc"}) {
            if (!row.contains(key)) problems.push_back(std::string("missing ") + key);
        }
    }
    if (report.at("baseline").at("k") != 83) problems.push_back("baseline");

    std::string best;
    double best_acc = -1.0;
    for (const auto& row : table) {
        if (row["accuracy"].get<double>() > best_acc) {
            best_acc = row["accuracy"].get<double>();
            best = row["model"].get<std::string>() + ":" + row["channels"].dump();
        }
    }
    std::string detail = "n=146, 49 subjects, 7 grouped folds, " + std::to_string(table.size()) +
                         " table rows, best " + best + " " + fmt(best_acc);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

// 9 -------------------------------------------------------------------------

Outcome evaluation_invariants(const Options&) {
    std::vector<std::string> problems;
    const std::vector<int> labels{1, 0, 1, 0, 1, 0};
    if (auc(std::vector<double>(6, 0.3), labels) != 0.5) problems.push_back("tie auc");
    if (auc(std::vector<double>{0.9, 0.1, 0.8, 0.2, 0.7, 0.3}, labels) != 1.0) problems.push_back("perfect auc");

    Rng rng(9);
    double worst_flip = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.below(100);
        std::vector<double> scores(n);
        std::vector<int> l(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.below(20)) / 20.0;
            l[i] = static_cast<int>(i == 0 ? 0 : i == 1 ? 1 : rng.below(2));
            flipped[i] = 1 - l[i];
        }
        worst_flip = std::max(worst_flip, std::abs(auc(scores, l) + auc(scores, flipped) - 1.0));
    }
    if (!(worst_flip <= 1e-12)) problems.push_back("flip identity");

    std::vector<int> preds(40), truth(40);
    for (int i = 0; i < 40; ++i) {
        preds[i] = static_cast<int>(rng.below(2));
        truth[i] = static_cast<int>(rng.below(2));
    }
    if (compare_classifiers(preds, preds, truth).p_value != 1.0) problems.push_back("identical comparison");

    std::size_t bad_partitions = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const bool grouped = trial % 2 == 1;
        FoldAssignment f;
        std::size_t n = 0, k = 0;
        if (grouped) {
            const std::size_t subjects = 1 + rng.below(60);
            std::vector<std::string> ids, subj;
            for (std::size_t s = 0; s < subjects; ++s) {
                for (std::size_t r = 0, m = 1 + rng.below(4); r < m; ++r) {
                    subj.push_back("s" + std::to_string(s));
                    ids.push_back("s" + std::to_string(s) + "_" + std::to_string(r));
                }
            }
            n = ids.size();
            k = 1 + rng.below(subjects);
            f = grouped_kfold(ids, subj, k, rng.next_u64());
        } else {
            n = 1 + rng.below(300);
            k = 1 + rng.below(n);
            f = plain_kfold(n, k, rng.next_u64());
        }
        // disjoint and exhaustive: every index appears in exactly one fold's member list
        std::vector<int> seen(n, 0);
        bool ok = f.fold_of.size() == n && f.fold_count == k;
        for (std::size_t fold = 0; ok && fold < k; ++fold) {
            const auto members = f.members(fold);
            if (members.empty()) ok = false;
            for (auto i : members) ok = ok && i < n && ++seen[i] == 1;
        }
        ok = ok && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
        bad_partitions += !ok;
    }
    if (bad_partitions) problems.push_back(std::to_string(bad_partitions) + " bad partitions");

    char buf[96];
    std::snprintf(buf, sizeof buf, "max flip deviation %.1e, 1000 partitions checked", worst_flip);
    std::string detail = buf;
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty(), detail};
}

// 10 ------------------------------------------------------------------------

Outcome determinism(const Options& opt) {
    std::string first;
    for (int run = 0; run < 2; ++run) {
        const auto out = fresh_dir(opt, "determinism_" + std::to_string(run));
        auto cfg = sweep_config(opt, 10, 30, {1, 3}, {2, 6}, {"simple", "deep", "ccnn"}, out);
        cfg.replicas_per_class = 20;
        cfg.folds = 5;
        cfg.workers = run == 0 ? 1 : std::max<std::size_t>(2, opt.workers);
        (void)cmd_sweep(cfg);
        const auto text = slurp(out / "summary.json");
        if (run == 0) {
            first = text;
        } else {
            return {!first.empty() && text == first,
                    "summary.json " + std::to_string(text.size()) + " bytes, " +
                        (text == first ? "identical" : "different") + " across reruns (workers 1 and " +
                        std::to_string(cfg.workers) + ")"};
        }
    }
    return {false, "unreachable"};
}

} // namespace

int main(int argc, char** argv) {
    Options opt;
    std::string only;
    opt.config = fs::path(CCNN_SOURCE_DIR) / "configs" / "simulated_n100.json";
    CLI::App app{"Acceptance suite"};
    app.add_flag("--full", opt.full, "Also run the N=499 variants");
    app.add_option("--only", only, "Comma-separated criterion numbers");
    app.add_option("--workers", opt.workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--scratch", opt.scratch, "Scratch directory");
    app.add_option("--config", opt.config, "Pipeline config providing the training hyperparameters");
    CLI11_PARSE(app, argc, argv);

    try {
        opt.train = load_pipeline_config(opt.config).train;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria = {
        {"parameter counts", param_counts},
        {"binomial baseline anchors", baseline_anchors},
        {"DTW brute-force oracle", dtw_oracle},
        {"finite-difference gradients", gradients},
        {"low-noise accuracy", low_noise},
        {"model ordering at high noise", ordering},
        {"ROI recovery", recovery},
        {"grouped real-data pipeline", real_pipeline},
        {"evaluation invariants", evaluation_invariants},
        {"sweep determinism", determinism},
    };
    std::set<std::size_t> selected;
    for (std::size_t pos = 0; pos < only.size();) {
        const auto next = only.find(',', pos);
        selected.insert(std::stoul(only.substr(pos, next - pos)));
        pos = next == std::string::npos ? only.size() : next + 1;
    }

    fs::create_directories(opt.scratch);
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected.empty() && !selected.count(i + 1)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second(opt);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("%s  %2zu  %-30s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
