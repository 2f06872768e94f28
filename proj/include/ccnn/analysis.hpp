#pragma once

// First-layer weight introspection for trained CCNNs, plus report and SVG
// emission.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccnn/error.hpp"
#include "ccnn/nn.hpp"
#include "ccnn/simulator.hpp"

namespace ccnn {

/// Per-channel summaries of |W1|: roi[c][j] sums over filters, filter[c][f]
/// sums over ROI positions. Channels are never pooled.
struct ImportanceProfile {
    std::vector<std::vector<double>> roi;
    std::vector<std::vector<double>> filter;
};

namespace detail {

inline const Tensor& first_layer(const ParamStore& p) {
    const auto& w1 = p.at("W1");
    if (w1.dims.size() != 3) throw DataError("W1 is not a convolution weight (expected f1 x C x N)");
    return w1;
}

} // namespace detail

[[nodiscard]] inline std::vector<std::vector<double>> roi_importance(const Tensor& w1) {
    const std::size_t f1 = w1.dims[0], c = w1.dims[1], n = w1.dims[2];
    std::vector<std::vector<double>> out(c, std::vector<double>(n, 0.0));
    for (std::size_t f = 0; f < f1; ++f) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t j = 0; j < n; ++j) out[ch][j] += std::abs(w1.data[(f * c + ch) * n + j]);
        }
    }
    return out;
}

[[nodiscard]] inline std::vector<std::vector<double>> filter_importance(const Tensor& w1) {
    const std::size_t f1 = w1.dims[0], c = w1.dims[1], n = w1.dims[2];
    std::vector<std::vector<double>> out(c, std::vector<double>(f1, 0.0));
    for (std::size_t f = 0; f < f1; ++f) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t j = 0; j < n; ++j) out[ch][f] += std::abs(w1.data[(f * c + ch) * n + j]);
        }
    }
    return out;
}

[[nodiscard]] inline ImportanceProfile importance_profile(const ParamStore& p) {
    const auto& w1 = detail::first_layer(p);
    return {roi_importance(w1), filter_importance(w1)};
}

/// Indices of the k largest entries, descending; ties go to the lower index.
[[nodiscard]] inline std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
    idx.resize(k);
    return idx;
}

struct Recovery {
    std::size_t hits = 0;
    std::vector<std::size_t> top_indices;
};

[[nodiscard]] inline Recovery recovery_score(std::span<const double> importance, const GroundTruth& truth,
                                             std::size_t k) {
    Recovery r;
    r.top_indices = top_k(importance, k);
    for (auto idx : r.top_indices) {
        r.hits += std::binary_search(truth.modified_roi_indices.begin(), truth.modified_roi_indices.end(), idx);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::ordered_json to_json(const ImportanceProfile& p) {
    nlohmann::ordered_json j;
    j["roi_importance"] = p.roi;
    j["filter_importance"] = p.filter;
    return j;
}

/// Header "roi_index,channel,importance"; channel-major, ROI ascending.
inline void write_importance_csv(const ImportanceProfile& p, std::ostream& out) {
    out << "roi_index,channel,importance\n";
    out.precision(17);
    for (std::size_t c = 0; c < p.roi.size(); ++c) {
        for (std::size_t j = 0; j < p.roi[c].size(); ++j) out << j << ',' << c << ',' << p.roi[c][j] << '\n';
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

enum class ReportFormat { json, csv };

inline void emit_report(const ImportanceProfile& p, const std::filesystem::path& path, ReportFormat format) {
    if (format == ReportFormat::json) {
        write_text_file(path, to_json(p).dump(2) + "\n");
    } else {
        std::ostringstream out;
        write_importance_csv(p, out);
        write_text_file(path, out.str());
    }
}

inline void emit_report(const nlohmann::ordered_json& report, const std::filesystem::path& path) {
    write_text_file(path, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// SVG

/// model name -> (noise weight -> accuracy)
using AccuracySeries = std::map<std::string, std::map<double, double>>;

namespace detail {

inline std::string svg_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string model_color(std::string_view model, std::size_t fallback) {
    if (model == "simple") return "#2ca02c";
    if (model == "deep") return "#1f77b4";
    if (model == "ccnn") return "#d62728";
    static const char* palette[] = {"#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[fallback % 6];
}

} // namespace detail

/// Accuracy against noise weight, one polyline per model and a dashed
/// baseline. Y axis spans [0, 1].
[[nodiscard]] inline std::string render_accuracy_svg(const AccuracySeries& series, double baseline,
                                                     std::string_view title = "Accuracy vs. noise weight") {
    if (series.empty()) throw DataError("accuracy plot needs at least one series");
    constexpr double width = 640, height = 420, left = 70, right = 140, top = 40, bottom = 60;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    double xmin = INFINITY, xmax = -INFINITY;
    for (const auto& [_, pts] : series) {
        for (const auto& [x, __] : pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
    }
    if (!std::isfinite(xmin)) throw DataError("accuracy plot series are empty");
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return top + (1.0 - std::clamp(y, 0.0, 1.0)) * plot_h; };

    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << detail::svg_escape(title) << "</text>\n";

    // axes and ticks
    s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 10; t += 2) {
        const double y = py(t / 10.0);
        s << "<line x1=\"" << left - 5 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
          << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << t / 10.0 << "</text>\n";
    }
    std::vector<double> xs;
    for (const auto& [_, pts] : series) {
        for (const auto& [x, __] : pts) xs.push_back(x);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double x : xs) {
        s << "<line x1=\"" << px(x) << "\" y1=\"" << top + plot_h << "\" x2=\"" << px(x) << "\" y2=\""
          << top + plot_h + 5 << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << px(x) << "\" y=\"" << top + plot_h + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x << "</text>\n";
    }
    s << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">Noise weight</text>\n"
      << "<text x=\"18\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" transform=\"rotate(-90 18 " << top + plot_h / 2 << ")\">Accuracy</text>\n";

    s << "<line class=\"baseline\" x1=\"" << left << "\" y1=\"" << py(baseline) << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << py(baseline) << "\" stroke=\"black\" stroke-dasharray=\"6,4\" data-value=\"";
    s.precision(4);
    s << baseline << "\"/>\n";
    s.precision(2);

    std::size_t idx = 0;
    double legend_y = top + 10;
    for (const auto& [model, pts] : series) {
        const auto color = detail::model_color(model, idx++);
        if (pts.size() > 1) {
            s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            bool first = true;
            for (const auto& [x, y] : pts) {
                s << (first ? "" : " ") << px(x) << ',' << py(y);
                first = false;
            }
            s << "\"/>\n";
        }
        for (const auto& [x, y] : pts) {
            s << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
        }
        s << "<line x1=\"" << left + plot_w + 15 << "\" y1=\"" << legend_y << "\" x2=\"" << left + plot_w + 35
          << "\" y2=\"" << legend_y << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
          << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << legend_y + 4
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::svg_escape(model) << "</text>\n";
        legend_y += 20;
    }
    s << "<line x1=\"" << left + plot_w + 15 << "\" y1=\"" << legend_y << "\" x2=\"" << left + plot_w + 35
      << "\" y2=\"" << legend_y << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n"
      << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << legend_y + 4
      << "\" font-family=\"sans-serif\" font-size=\"12\">baseline</text>\n";
    s << "</svg>\n";
    return s.str();
}

inline void emit_accuracy_plot(const AccuracySeries& series, double baseline, const std::filesystem::path& path,
                               std::string_view title = "Accuracy vs. noise weight") {
    write_text_file(path, render_accuracy_svg(series, baseline, title));
}

} // namespace ccnn
