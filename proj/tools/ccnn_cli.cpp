// ccnn: command line front end.
//
// Exit codes: 0 success, 2 configuration/validation error, 3 data error,
// 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccnn/analysis.hpp"
#include "ccnn/connectivity.hpp"
#include "ccnn/core.hpp"
#include "ccnn/evaluation.hpp"
#include "ccnn/nn.hpp"
#include "ccnn/pipeline.hpp"
#include "ccnn/simulator.hpp"

namespace fs = std::filesystem;
using namespace ccnn;

namespace {

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::string out;
};

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

fs::path require_out(const GlobalOptions& g, const std::string& what) {
    if (g.out.empty()) throw ConfigError(what + " needs --out");
    return g.out;
}

PipelineConfig pipeline_config(const GlobalOptions& g) {
    if (g.config.empty()) throw ConfigError("this subcommand needs --config <pipeline.json>");
    auto cfg = load_pipeline_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (g.workers > 1) cfg.workers = g.workers;
    if (!g.out.empty()) cfg.out_dir = g.out;
    return cfg;
}

/// Training config file: {model, learning_rate, batch_size, ...}; architecture
/// fields are optional. The model is required unless `fallback` is given.
std::pair<ModelKind, nlohmann::json> training_json(const GlobalOptions& g) {
    if (g.config.empty()) throw ConfigError("this subcommand needs --config <train.json>");
    auto j = read_json(g.config);
    if (!j.contains("model")) throw ConfigError(g.config + ": missing 'model'");
    return {model_kind_from_string(j["model"].get<std::string>()), j};
}

ModelSpec spec_for(ModelKind kind, const nlohmann::json& j, const Dataset& ds) {
    nlohmann::json s = {{"model", to_string(kind)},
                        {"roi_count", ds.roi_count},
                        {"channels", ds.channel_metrics.size()}};
    for (const char* key : {"conv1_filters", "conv2_filters", "first_hidden", "hidden"}) {
        if (j.contains(key)) s[key] = j[key];
    }
    return model_spec_from_json(s);
}

std::vector<int> read_int_array(const fs::path& path) {
    const auto j = read_json(path);
    try {
        if (j.is_object() && j.contains("predictions")) {
            std::vector<int> out;
            for (const auto& row : j["predictions"]) out.push_back(row.is_object() ? row.at("prediction").get<int>() : row.get<int>());
            return out;
        }
        return j.get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": expected an array of integers (" + e.what() + ")");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Connectome classification toolkit: connectivity metrics, simulated datasets, CCNN/MLP training "
                 "and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config, "JSON config (pipeline config for sweep/pipeline, training config for "
                                         "train/crossval)");
    app.add_option("--seed", g.seed, "Master seed (overrides the config)");
    app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory (or file for crossval/plot)");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Generate a simulated connectome dataset");
    SimulationConfig sim;
    std::string base_healthy, base_patient, out_dir;
    simulate->add_option("--n", sim.roi_count, "Number of ROIs")->required();
    simulate->add_option("--k", sim.modified_roi_count, "Number of modified ROIs")->required();
    simulate->add_option("--noise-weight", sim.noise_weight, "Noise weight")->required();
    simulate->add_option("--replicas", sim.replicas_per_class, "Replicas per class")->capture_default_str();
    simulate->add_option("--timepoints", sim.synthetic.timepoints, "Synthetic base: timepoints")->capture_default_str();
    simulate->add_option("--factors", sim.synthetic.factors, "Synthetic base: latent factors")->capture_default_str();
    simulate->add_option("--base-healthy", base_healthy, "Healthy base connectome (.cmx)");
    simulate->add_option("--base-patient", base_patient, "Patient base connectome (.cmx)");
    simulate->add_option("--out-dir", out_dir, "Output directory (defaults to --out)");

    // connect
    auto* connect = app.add_subcommand("connect", "Compute a connectivity matrix from ROI time series");
    std::string input, output, metric = "correlation", cost = "squared", variant = "excess", znorm = "on",
                degenerate = "error", csv;
    std::size_t window = 0;
    connect->add_option("--input", input, "Time-series CSV")->required()->check(CLI::ExistingFile);
    connect->add_option("--metric", metric, "correlation|dtw|path")
        ->check(CLI::IsMember({"correlation", "corr", "dtw", "dtw_distance", "path", "path_length"}))
        ->capture_default_str();
    connect->add_option("--window", window, "DTW warping window (max |i-j|)");
    connect->add_option("--cost", cost, "squared|absolute")->check(CLI::IsMember({"squared", "absolute"}))->capture_default_str();
    connect->add_option("--path-variant", variant, "excess|relative")
        ->check(CLI::IsMember({"excess", "relative"}))
        ->capture_default_str();
    connect->add_option("--znorm", znorm, "on|off: z-normalize series before DTW")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    connect->add_option("--degenerate", degenerate, "error|zero: constant series under correlation")
        ->check(CLI::IsMember({"error", "zero"}))
        ->capture_default_str();
    connect->add_option("--output", output, "Output matrix (.cmx)")->required();
    connect->add_option("--csv", csv, "Also export the matrix as CSV for inspection");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset manifest (--config train.json)");
    std::string manifest;
    train_cmd->add_option("--manifest", manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);

    // crossval
    auto* crossval = app.add_subcommand("crossval", "Cross-validate a model on a dataset manifest");
    std::size_t folds = 10;
    bool grouped = false;
    crossval->add_option("--manifest", manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
    crossval->add_option("--folds", folds, "Number of folds")->capture_default_str();
    crossval->add_flag("--grouped", grouped, "Keep all instances of a subject in one fold");

    // sweep / pipeline
    auto* sweep = app.add_subcommand("sweep", "Simulated modification x noise sweep (--config pipeline.json)");
    auto* pipeline = app.add_subcommand("pipeline", "Time series -> connectivity -> grouped CV (--config pipeline.json)");

    // baseline
    auto* baseline = app.add_subcommand("baseline", "Binomial significance baseline for n test predictions");
    std::uint64_t baseline_n = 0;
    baseline->add_option("--n", baseline_n, "Number of predictions")->required()->check(CLI::PositiveNumber);

    // compare
    auto* compare = app.add_subcommand("compare", "Paired binomial test between two classifiers");
    std::string preds_a, preds_b, labels_path;
    compare->add_option("--a", preds_a, "Predictions of A (JSON int array or crossval report)")->required();
    compare->add_option("--b", preds_b, "Predictions of B")->required();
    compare->add_option("--labels", labels_path, "True labels (JSON int array)")->required();

    // analyze
    auto* analyze = app.add_subcommand("analyze", "First-layer ROI/filter importance of a trained CCNN");
    std::string params_path, spec_path, truth_path;
    std::size_t top = 5;
    analyze->add_option("--params", params_path, "Trained parameters (.prm)")->required()->check(CLI::ExistingFile);
    analyze->add_option("--spec", spec_path, "Model spec JSON (model.json written by train)")->required();
    analyze->add_option("--truth", truth_path, "ground_truth.json from simulate");
    analyze->add_option("--top-k", top, "Size of the top-ROI list")->capture_default_str();

    // plot
    auto* plot = app.add_subcommand("plot", "Accuracy vs. noise SVG from a sweep summary");
    std::string summary_path;
    std::optional<std::size_t> plot_k;
    plot->add_option("--summary", summary_path, "summary.json written by sweep")->required()->check(CLI::ExistingFile);
    plot->add_option("--k", plot_k, "Modified-ROI level to plot (default: first in the summary)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (simulate->parsed()) {
            const fs::path dir = out_dir.empty() ? require_out(g, "simulate") : fs::path(out_dir);
            if (g.seed) sim.seed = *g.seed;
            if (base_healthy.empty() != base_patient.empty()) {
                throw ConfigError("--base-healthy and --base-patient must be given together");
            }
            if (!base_healthy.empty()) sim.base_pair.emplace(load_matrix(base_healthy), load_matrix(base_patient));
            const auto data = generate_dataset(sim, g.workers);
            save_dataset(data.dataset, dir);
            save_ground_truth(data.truth, dir / "ground_truth.json");
            std::cout << "wrote " << data.dataset.size() << " instances to " << dir.string() << '\n';
        } else if (connect->parsed()) {
            ConnectivityJob job;
            job.metric = metric_from_string(metric);
            job.dtw.window = window;
            job.dtw.cost = cost == "absolute" ? StepCost::absolute_difference : StepCost::squared_difference;
            job.dtw.znormalize = znorm == "on";
            job.path_variant = variant == "relative" ? PathVariant::relative : PathVariant::excess;
            job.degenerate = degenerate == "zero" ? DegeneratePolicy::zero : DegeneratePolicy::error;
            const auto m = connectivity_matrix(load_timeseries(input), job, g.workers);
            save_matrix(m, output);
            if (!csv.empty()) {
                std::ofstream out(csv);
                export_matrix_csv(m, out);
            }
        } else if (train_cmd->parsed()) {
            const auto [kind, j] = training_json(g);
            const auto ds = load_dataset(manifest);
            ds.validate();
            const auto spec = spec_for(kind, j, ds);
            auto tc = train_config_from_json(j, default_train_config(kind));
            if (g.seed) tc.seed = *g.seed;
            const auto result = train(spec, encode_inputs(ds, spec), tc);
            const fs::path dir = require_out(g, "train");
            fs::create_directories(dir);
            save_params(result.params, dir / "params.prm");
            emit_report(to_json(spec), dir / "model.json");
            nlohmann::ordered_json hist;
            hist["train"] = to_json(tc);
            hist["loss_history"] = result.loss_history;
            emit_report(hist, dir / "loss_history.json");
        } else if (crossval->parsed()) {
            const auto [kind, j] = training_json(g);
            const auto ds = load_dataset(manifest);
            const auto spec = spec_for(kind, j, ds);
            auto tc = train_config_from_json(j, default_train_config(kind));
            if (g.seed) tc.seed = *g.seed;
            const auto fold_seed = derive_seed(tc.seed, "folds");
            const auto assignment = grouped ? grouped_kfold(ds, folds, fold_seed) : plain_kfold(ds, folds, fold_seed);
            const auto report = run_crossval(ds, spec, tc, assignment, g.workers);
            const auto text = to_json(report).dump(2) + "\n";
            if (g.out.empty()) {
                std::cout << text;
            } else {
                write_text_file(g.out, text);
            }
        } else if (sweep->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto result = cmd_sweep(cfg);
            std::cout << "sweep: " << result.cells.size() << " cells, summary at "
                      << (cfg.out_dir / "summary.json").string() << '\n';
        } else if (pipeline->parsed()) {
            const auto cfg = pipeline_config(g);
            const auto result = cmd_pipeline_real(cfg);
            std::cout << result.report.dump(2) << '\n';
        } else if (baseline->parsed()) {
            const auto b = baseline_accuracy(baseline_n);
            std::cout << "k=" << b.k << " accuracy=" << b.accuracy << '\n';
        } else if (compare->parsed()) {
            const auto c = compare_classifiers(read_int_array(preds_a), read_int_array(preds_b),
                                               read_int_array(labels_path));
            std::cout << "discordant=" << c.discordant << " wins_a=" << c.wins_a << " p_value=" << c.p_value << '\n';
        } else if (analyze->parsed()) {
            const auto params = load_params(params_path);
            const auto spec = model_spec_from_json(read_json(spec_path));
            if (spec.kind != ModelKind::ccnn) throw ConfigError("analyze needs a CCNN model");
            check_shapes(spec, params);
            const auto profile = importance_profile(params);
            const fs::path dir = require_out(g, "analyze");
            emit_report(profile, dir / "importance.json", ReportFormat::json);
            emit_report(profile, dir / "importance.csv", ReportFormat::csv);
            nlohmann::ordered_json summary;
            auto& channels = summary["channels"] = nlohmann::ordered_json::array();
            std::optional<GroundTruth> truth;
            if (!truth_path.empty()) truth = load_ground_truth(truth_path);
            for (std::size_t c = 0; c < profile.roi.size(); ++c) {
                nlohmann::ordered_json entry;
                entry["channel"] = c;
                entry["top_rois"] = top_k(profile.roi[c], top);
                if (truth) {
                    const auto rec = recovery_score(profile.roi[c], *truth, top);
                    entry["hits"] = rec.hits;
                    entry["modified_rois"] = truth->modified_roi_indices;
                }
                channels.push_back(std::move(entry));
            }
            emit_report(summary, dir / "recovery.json");
            std::cout << summary.dump(2) << '\n';
        } else if (plot->parsed()) {
            const auto summary = read_json(summary_path);
            const auto k = plot_k ? *plot_k : summary.at("cells").at(0).at("modified_roi_count").get<std::size_t>();
            const double base = summary.at("baseline").at("accuracy").get<double>();
            const fs::path out = g.out.empty() ? fs::path("accuracy_k" + std::to_string(k) + ".svg") : fs::path(g.out);
            emit_accuracy_plot(series_from_summary(summary, k), base, out);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
