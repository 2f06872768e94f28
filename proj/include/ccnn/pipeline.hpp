#pragma once

// End-to-end orchestration: the simulated noise/modification sweep and the
// real-data pipeline (time series -> connectivity channels -> grouped CV).
//
// Stage seeds fan out from the master seed:
//   sweep cell c       simulate  derive_seed(seed, "simulate", c)
//                      folds     derive_seed(seed, "folds", c)
//                      training  derive_seed(seed, "train.<model>", c)
//   real pipeline      folds     derive_seed(seed, "folds")
//                      training  derive_seed(seed, "train.<model>", r)  for run r

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccnn/analysis.hpp"
#include "ccnn/connectivity.hpp"
#include "ccnn/core.hpp"
#include "ccnn/evaluation.hpp"
#include "ccnn/nn.hpp"
#include "ccnn/pipeline_schema.hpp"
#include "ccnn/schema.hpp"
#include "ccnn/simulator.hpp"

namespace ccnn {

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::filesystem::path out_dir = "out";
    std::vector<ModelKind> models = {ModelKind::simple, ModelKind::deep, ModelKind::ccnn};

    std::size_t folds = 10;
    bool grouped = false;

    // simulation
    std::size_t roi_count = 499;
    std::vector<std::size_t> modified_roi_counts = {1, 5, 10};
    std::vector<double> noise_weights = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::size_t replicas_per_class = 75;
    SyntheticBase synthetic;
    std::optional<std::filesystem::path> base_healthy;
    std::optional<std::filesystem::path> base_patient;

    // connectivity
    std::vector<std::vector<Metric>> channel_sets = {{Metric::correlation}};
    ConnectivityJob connectivity;

    std::optional<std::filesystem::path> sessions;

    /// Raw per-model training overrides, applied on top of "default".
    nlohmann::json train = nlohmann::json::object();

    [[nodiscard]] TrainConfig train_config(ModelKind kind) const {
        TrainConfig cfg = default_train_config(kind);
        if (train.contains("default")) cfg = train_config_from_json(train["default"], cfg);
        const std::string key(to_string(kind));
        if (train.contains(key)) cfg = train_config_from_json(train[key], cfg);
        return cfg;
    }

    [[nodiscard]] ModelSpec model_spec(ModelKind kind, std::size_t n, std::size_t channels) const {
        nlohmann::json j = {{"model", to_string(kind)}, {"roi_count", n}, {"channels", channels}};
        for (const char* section : {"default", to_string(kind).data()}) {
            if (!train.contains(section)) continue;
            for (const char* key : {"conv1_filters", "conv2_filters", "first_hidden", "hidden"}) {
                if (train[section].contains(key)) j[key] = train[section][key];
            }
        }
        return model_spec_from_json(j);
    }
};

[[nodiscard]] inline nlohmann::json pipeline_schema_json() { return nlohmann::json::parse(pipeline_config_schema); }

/// Validates against the published schema, then converts. Paths in the
/// config are resolved relative to `base_dir`.
[[nodiscard]] inline PipelineConfig parse_pipeline_config(const nlohmann::json& j,
                                                          const std::filesystem::path& base_dir = {}) {
    const auto errors = schema_errors(j, pipeline_schema_json());
    if (!errors.empty()) {
        std::string msg = "invalid pipeline config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    PipelineConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = j.value("workers", cfg.workers);
    if (j.contains("out_dir")) cfg.out_dir = resolve(j["out_dir"].get<std::string>());
    if (j.contains("models")) {
        cfg.models.clear();
        for (const auto& m : j["models"]) cfg.models.push_back(model_kind_from_string(m.get<std::string>()));
    }
    if (j.contains("cv")) {
        cfg.folds = j["cv"].value("folds", cfg.folds);
        cfg.grouped = j["cv"].value("grouped", cfg.grouped);
    }
    if (j.contains("train")) cfg.train = j["train"];
    if (j.contains("simulation")) {
        const auto& s = j["simulation"];
        cfg.roi_count = s.value("roi_count", cfg.roi_count);
        cfg.modified_roi_counts = s.value("modified_roi_counts", cfg.modified_roi_counts);
        cfg.noise_weights = s.value("noise_weights", cfg.noise_weights);
        cfg.replicas_per_class = s.value("replicas_per_class", cfg.replicas_per_class);
        cfg.synthetic.timepoints = s.value("timepoints", cfg.synthetic.timepoints);
        cfg.synthetic.factors = s.value("factors", cfg.synthetic.factors);
        if (s.contains("base_healthy")) cfg.base_healthy = resolve(s["base_healthy"].get<std::string>());
        if (s.contains("base_patient")) cfg.base_patient = resolve(s["base_patient"].get<std::string>());
        if (cfg.base_healthy.has_value() != cfg.base_patient.has_value()) {
            throw ConfigError("base_healthy and base_patient must be given together");
        }
    }
    if (j.contains("connectivity")) {
        const auto& c = j["connectivity"];
        if (c.contains("channel_sets")) {
            cfg.channel_sets.clear();
            for (const auto& set : c["channel_sets"]) {
                std::vector<Metric> metrics;
                for (const auto& m : set) metrics.push_back(metric_from_string(m.get<std::string>()));
                cfg.channel_sets.push_back(std::move(metrics));
            }
        }
        cfg.connectivity.dtw.window = c.value("window", cfg.connectivity.dtw.window);
        cfg.connectivity.dtw.cost = c.value("cost", std::string("squared")) == "absolute" ? StepCost::absolute_difference
                                                                                          : StepCost::squared_difference;
        cfg.connectivity.path_variant =
            c.value("path_variant", std::string("excess")) == "relative" ? PathVariant::relative : PathVariant::excess;
        cfg.connectivity.dtw.znormalize = c.value("znorm", true);
        cfg.connectivity.degenerate =
            c.value("degenerate", std::string("error")) == "zero" ? DegeneratePolicy::zero : DegeneratePolicy::error;
    }
    if (j.contains("sessions")) cfg.sessions = resolve(j["sessions"].get<std::string>());
    for (auto k : cfg.modified_roi_counts) {
        if (k >= cfg.roi_count) throw ConfigError("modified ROI count must be below roi_count");
    }
    // Surface training-config errors before any work starts.
    for (auto kind : cfg.models) (void)cfg.train_config(kind);
    return cfg;
}

[[nodiscard]] inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_pipeline_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepCell {
    std::size_t modified_roi_count = 0;
    double noise_weight = 0.0;
    std::string status = "ok";
    std::vector<std::size_t> truth;
    std::map<std::string, EvalReport> reports;
};

struct SweepResult {
    nlohmann::ordered_json summary;
    std::vector<SweepCell> cells;
};

namespace detail {

inline std::string cell_name(std::size_t k, double w) {
    std::ostringstream s;
    s << "k" << k << "_w" << w;
    return s.str();
}

} // namespace detail

/// Generates every (k, noise weight) dataset, cross-validates each model on
/// it with a shared fold partition, and writes
///   <out>/summary.json, <out>/accuracy_k<k>.svg, <out>/cells/<cell>/<model>.json
[[nodiscard]] inline SweepResult cmd_sweep(const PipelineConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    std::optional<std::pair<ConnectivityMatrix, ConnectivityMatrix>> base;
    if (cfg.base_healthy) base.emplace(load_matrix(*cfg.base_healthy), load_matrix(*cfg.base_patient));

    SweepResult result;
    const auto baseline = baseline_accuracy(2 * cfg.replicas_per_class);
    auto& summary = result.summary;
    summary["master_seed"] = cfg.seed;
    summary["roi_count"] = cfg.roi_count;
    summary["replicas_per_class"] = cfg.replicas_per_class;
    summary["folds"] = cfg.folds;
    summary["baseline"] = {{"n", 2 * cfg.replicas_per_class}, {"k", baseline.k}, {"accuracy", baseline.accuracy}};
    auto& models = summary["models"] = nlohmann::ordered_json::array();
    for (auto m : cfg.models) {
        models.push_back({{"model", to_string(m)}, {"train", to_json(cfg.train_config(m))}});
    }
    auto& cells_json = summary["cells"] = nlohmann::ordered_json::array();

    std::size_t cell_index = 0;
    for (auto k : cfg.modified_roi_counts) {
        for (double w : cfg.noise_weights) {
            const std::size_t c = cell_index++;
            SweepCell cell;
            cell.modified_roi_count = k;
            cell.noise_weight = w;
            nlohmann::ordered_json cj;
            cj["modified_roi_count"] = k;
            cj["noise_weight"] = w;
            try {
                SimulationConfig sim;
                sim.roi_count = cfg.roi_count;
                sim.modified_roi_count = k;
                sim.noise_weight = w;
                sim.replicas_per_class = cfg.replicas_per_class;
                sim.seed = derive_seed(cfg.seed, "simulate", c);
                sim.synthetic = cfg.synthetic;
                sim.base_pair = base;
                const auto data = generate_dataset(sim, cfg.workers);
                cell.truth = data.truth.modified_roi_indices;
                const auto folds = plain_kfold(data.dataset, cfg.folds, derive_seed(cfg.seed, "folds", c));
                for (auto kind : cfg.models) {
                    const std::string name(to_string(kind));
                    auto tc = cfg.train_config(kind);
                    tc.seed = derive_seed(cfg.seed, "train." + name, c);
                    const auto spec = cfg.model_spec(kind, cfg.roi_count, 1);
                    cell.reports[name] = run_crossval(data.dataset, spec, tc, folds, cfg.workers);
                }
            } catch (const std::exception& e) {
                cell.status = std::string("failed: ") + e.what();
            }

            cj["status"] = cell.status;
            cj["modified_rois"] = cell.truth;
            auto& res = cj["results"] = nlohmann::ordered_json::object();
            const auto cell_dir = cfg.out_dir / "cells" / detail::cell_name(k, w);
            for (auto& [name, report] : cell.reports) {
                for (const auto& [other, other_report] : cell.reports) {
                    if (other == name) continue;
                    report.comparisons.emplace_back(
                        other, compare_classifiers(report.predictions, other_report.predictions, report.labels).p_value);
                }
                res[name] = {{"pooled_accuracy", report.pooled_accuracy},
                             {"pooled_auc", report.pooled_auc},
                             {"mean_fold_accuracy", report.mean_fold_accuracy}};
                std::filesystem::create_directories(cell_dir);
                emit_report(to_json(report), cell_dir / (name + ".json"));
            }
            if (cell.reports.count("ccnn") && cell.reports.count("deep")) {
                const auto& a = cell.reports.at("ccnn");
                const auto& b = cell.reports.at("deep");
                cj["ccnn_vs_deep_p"] = compare_classifiers(a.predictions, b.predictions, a.labels).p_value;
            }
            cells_json.push_back(std::move(cj));
            result.cells.push_back(std::move(cell));
        }
    }

    for (auto k : cfg.modified_roi_counts) {
        AccuracySeries series;
        for (const auto& cell : result.cells) {
            if (cell.modified_roi_count != k) continue;
            for (const auto& [name, report] : cell.reports) series[name][cell.noise_weight] = report.pooled_accuracy;
        }
        if (series.empty()) continue;
        emit_accuracy_plot(series, baseline.accuracy, cfg.out_dir / ("accuracy_k" + std::to_string(k) + ".svg"),
                           std::to_string(k) + " modified ROI" + (k == 1 ? "" : "s"));
    }
    emit_report(summary, cfg.out_dir / "summary.json");
    return result;
}

/// Accuracy-vs-noise series (model -> noise weight -> accuracy) for one k from a summary.
[[nodiscard]] inline AccuracySeries series_from_summary(const nlohmann::json& summary, std::size_t k) {
    AccuracySeries series;
    for (const auto& cell : summary.at("cells")) {
        if (cell.at("modified_roi_count").get<std::size_t>() != k) continue;
        for (const auto& [model, r] : cell.at("results").items()) {
            series[model][cell.at("noise_weight").get<double>()] = r.at("pooled_accuracy").get<double>();
        }
    }
    return series;
}

// ---------------------------------------------------------------------------
// Real-data pipeline

struct Session {
    std::string id;
    std::string subject_id;
    int label = 0;
    std::filesystem::path timeseries;
};

/// {"sessions":[{"id","subject_id","label","timeseries"}]}; paths relative to the manifest.
[[nodiscard]] inline std::vector<Session> load_sessions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open session manifest " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        std::vector<Session> out;
        for (const auto& e : j.at("sessions")) {
            Session s;
            s.id = e.at("id").get<std::string>();
            s.subject_id = e.at("subject_id").get<std::string>();
            s.label = e.at("label").get<int>();
            s.timeseries = e.at("timeseries").get<std::string>();
            if (s.timeseries.is_relative()) s.timeseries = path.parent_path() / s.timeseries;
            out.push_back(std::move(s));
        }
        if (out.empty()) throw DataError("session manifest lists no sessions");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

struct PipelineResult {
    nlohmann::ordered_json report;
    FoldAssignment folds;
    std::vector<EvalReport> runs;
};

/// Computes the requested connectivity channels per session, then runs
/// grouped k-fold CV (one shared partition) for every model x channel set.
/// Writes <out>/report.json and <out>/runs/<model>_<channels>.json.
[[nodiscard]] inline PipelineResult cmd_pipeline_real(const PipelineConfig& cfg) {
    if (!cfg.sessions) throw ConfigError("pipeline needs a 'sessions' manifest");
    const auto sessions = load_sessions(*cfg.sessions);

    std::set<Metric> needed;
    for (const auto& set : cfg.channel_sets) needed.insert(set.begin(), set.end());

    std::vector<std::map<Metric, ConnectivityMatrix>> matrices(sessions.size());
    std::size_t roi_count = 0;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
        const auto ts = load_timeseries(sessions[s].timeseries, sessions[s].subject_id, sessions[s].id);
        if (s == 0) roi_count = ts.roi_count;
        if (ts.roi_count != roi_count) {
            throw DataError("session " + sessions[s].id + " has " + std::to_string(ts.roi_count) + " ROIs, expected " +
                            std::to_string(roi_count));
        }
        for (auto metric : needed) {
            auto job = cfg.connectivity;
            job.metric = metric;
            matrices[s].emplace(metric, connectivity_matrix(ts, job, cfg.workers));
        }
    }

    PipelineResult result;
    std::vector<std::string> ids, subjects;
    for (const auto& s : sessions) {
        ids.push_back(s.id);
        subjects.push_back(s.subject_id);
    }
    result.folds = grouped_kfold(ids, subjects, cfg.folds, derive_seed(cfg.seed, "folds"));

    auto& report = result.report;
    const auto baseline = baseline_accuracy(sessions.size());
    report["n"] = sessions.size();
    report["subjects"] = std::set<std::string>(subjects.begin(), subjects.end()).size();
    report["folds"] = cfg.folds;
    report["roi_count"] = roi_count;
    report["baseline"] = {{"k", baseline.k}, {"accuracy", baseline.accuracy}};
    nlohmann::ordered_json assignment = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) assignment[ids[i]] = result.folds.fold_of[i];
    report["fold_assignment"] = assignment;
    auto& table = report["table"] = nlohmann::ordered_json::array();

    const auto runs_dir = cfg.out_dir / "runs";
    std::size_t run = 0;
    for (const auto& set : cfg.channel_sets) {
        Dataset ds;
        ds.roi_count = roi_count;
        ds.channel_metrics = set;
        for (std::size_t s = 0; s < sessions.size(); ++s) {
            LabeledInstance inst;
            inst.id = sessions[s].id;
            inst.label = sessions[s].label;
            inst.subject_id = sessions[s].subject_id;
            for (auto m : set) inst.channels.push_back(matrices[s].at(m));
            ds.instances.push_back(std::move(inst));
        }
        std::string set_name;
        nlohmann::ordered_json channel_names = nlohmann::ordered_json::array();
        for (auto m : set) {
            set_name += (set_name.empty() ? "" : "+") + std::string(to_string(m));
            channel_names.push_back(to_string(m));
        }
        for (auto kind : cfg.models) {
            const std::string name(to_string(kind));
            auto tc = cfg.train_config(kind);
            tc.seed = derive_seed(cfg.seed, "train." + name, run++);
            auto r = run_crossval(ds, cfg.model_spec(kind, roi_count, set.size()), tc, result.folds, cfg.workers);
            r.model = name + ":" + set_name;
            table.push_back({{"model", name},
                             {"channels", channel_names},
                             {"accuracy", r.pooled_accuracy},
                             {"auc", r.pooled_auc},
                             {"mean_fold_accuracy", r.mean_fold_accuracy},
                             {"above_baseline", r.pooled_accuracy > baseline.accuracy}});
            std::filesystem::create_directories(runs_dir);
            emit_report(to_json(r), runs_dir / (name + "_" + set_name + ".json"));
            result.runs.push_back(std::move(r));
        }
    }
    emit_report(report, cfg.out_dir / "report.json");
    return result;
}

} // namespace ccnn
