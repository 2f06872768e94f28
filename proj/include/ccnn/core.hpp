#pragma once

// Domain types and file formats shared by every module.
//
//   time-series CSV  first row ROI identifiers, then one row per timepoint
//   .cmx             "CMX1", u32 N, u8 metric code, N*N little-endian f64, row-major
//   manifest JSON    {roi_count, channel_metrics, instances:[{id,label,subject_id,channel_files}]}

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ccnn/error.hpp"

namespace ccnn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

enum class Metric : std::uint8_t { correlation = 0, dtw_distance = 1, path_length = 2 };

[[nodiscard]] inline std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::correlation: return "correlation";
    case Metric::dtw_distance: return "dtw_distance";
    case Metric::path_length: return "path_length";
    }
    throw FormatError("unknown metric");
}

/// Accepts the canonical names plus the short CLI spellings (corr, dtw, path).
[[nodiscard]] inline Metric metric_from_string(std::string_view name) {
    if (name == "correlation" || name == "corr") return Metric::correlation;
    if (name == "dtw_distance" || name == "dtw") return Metric::dtw_distance;
    if (name == "path_length" || name == "path") return Metric::path_length;
    throw ConfigError("unknown metric '" + std::string(name) + "'");
}

[[nodiscard]] inline Metric metric_from_code(std::uint8_t code) {
    if (code > 2) throw FormatError("unknown metric code " + std::to_string(code));
    return static_cast<Metric>(code);
}

/// Self-connectivity convention: 1 for correlation, 0 for the distance metrics.
[[nodiscard]] constexpr double diagonal_value(Metric m) noexcept {
    return m == Metric::correlation ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Time series

struct RoiTimeSeries {
    std::size_t timepoint_count = 0;
    std::size_t roi_count = 0;
    std::vector<double> values; // row-major T x N
    std::vector<std::string> roi_names;
    std::string subject_id;
    std::string session_id;

    [[nodiscard]] double at(std::size_t t, std::size_t roi) const { return values[t * roi_count + roi]; }

    [[nodiscard]] std::vector<double> roi_series(std::size_t roi) const {
        std::vector<double> out(timepoint_count);
        for (std::size_t t = 0; t < timepoint_count; ++t) out[t] = at(t, roi);
        return out;
    }

    void validate() const {
        if (roi_count < 2) throw FormatError("time series needs at least 2 ROIs");
        if (timepoint_count < 2) throw FormatError("time series needs at least 2 timepoints");
        if (values.size() != roi_count * timepoint_count) throw FormatError("time series value count mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) {
                throw FormatError("non-finite value at timepoint " + std::to_string(i / roi_count) + ", ROI " +
                                  std::to_string(i % roi_count));
            }
        }
    }
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

} // namespace detail

/// Parses the time-series CSV layout. Data rows are 1-based in error messages
/// counting the header as row 1, so they match what an editor shows.
[[nodiscard]] inline RoiTimeSeries parse_timeseries_csv(std::istream& in, std::string subject_id = {},
                                                        std::string session_id = {}) {
    RoiTimeSeries ts;
    ts.subject_id = std::move(subject_id);
    ts.session_id = std::move(session_id);

    std::string line;
    std::size_t row = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++row;
        std::string_view view = line;
        if (row == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
        if (detail::trim(view).empty()) continue;
        const auto cells = detail::split_csv_line(view);
        if (!header_seen) {
            for (auto c : cells) ts.roi_names.emplace_back(detail::trim(c));
            ts.roi_count = ts.roi_names.size();
            header_seen = true;
            continue;
        }
        if (cells.size() != ts.roi_count) {
            throw FormatError("row " + std::to_string(row) + ": expected " + std::to_string(ts.roi_count) +
                              " columns, found " + std::to_string(cells.size()));
        }
        for (std::size_t col = 0; col < cells.size(); ++col) {
            const auto cell = detail::trim(cells[col]);
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
                throw FormatError("row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                                  ": non-numeric cell '" + std::string(cell) + "'");
            }
            if (!std::isfinite(value)) {
                throw FormatError("row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                                  ": non-finite value '" + std::string(cell) + "'");
            }
            ts.values.push_back(value);
        }
        ++ts.timepoint_count;
    }
    if (!header_seen) throw FormatError("empty time-series file");
    if (ts.roi_count < 2) throw FormatError("time series needs at least 2 ROIs, found " + std::to_string(ts.roi_count));
    if (ts.timepoint_count < 2) {
        throw FormatError("time series needs at least 2 timepoints, found " + std::to_string(ts.timepoint_count));
    }
    return ts;
}

[[nodiscard]] inline RoiTimeSeries load_timeseries(const std::filesystem::path& path, std::string subject_id = {},
                                                   std::string session_id = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open time-series file " + path.string());
    try {
        return parse_timeseries_csv(in, std::move(subject_id), std::move(session_id));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Connectivity matrix

/// N x N, exactly symmetric, finite, with the metric's diagonal convention.
/// Instances are validated on construction and immutable afterwards.
class ConnectivityMatrix {
public:
    ConnectivityMatrix() = default;

    ConnectivityMatrix(std::size_t n, Metric metric, std::vector<double> values)
        : n_(n), metric_(metric), values_(std::move(values)) {
        validate();
    }

    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] Metric metric() const noexcept { return metric_; }
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const { return {values_.data() + i * n_, n_}; }

    friend bool operator==(const ConnectivityMatrix&, const ConnectivityMatrix&) = default;

private:
    void validate() const {
        if (n_ < 2) throw FormatError("connectivity matrix needs N >= 2");
        if (values_.size() != n_ * n_) throw FormatError("connectivity matrix payload is not N*N");
        const double diag = diagonal_value(metric_);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < n_; ++j) {
                const double v = values_[i * n_ + j];
                if (!std::isfinite(v)) {
                    throw FormatError("non-finite entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
                }
                if (j > i && std::bit_cast<std::uint64_t>(v) != std::bit_cast<std::uint64_t>(values_[j * n_ + i])) {
                    throw FormatError("matrix is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) +
                                      ")");
                }
            }
            if (values_[i * n_ + i] != diag) {
                throw FormatError("diagonal entry " + std::to_string(i) + " violates the " +
                                  std::string(to_string(metric_)) + " convention");
            }
        }
    }

    std::size_t n_ = 0;
    Metric metric_ = Metric::correlation;
    std::vector<double> values_;
};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError(std::string("truncated ") + what);
    return value;
}

} // namespace detail

inline void write_matrix(std::ostream& out, const ConnectivityMatrix& m) {
    out.write("CMX1", 4);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.size()));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(m.metric()));
    out.write(reinterpret_cast<const char*>(m.values().data()),
              static_cast<std::streamsize>(m.values().size() * sizeof(double)));
}

[[nodiscard]] inline ConnectivityMatrix read_matrix(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CMX1", 4) != 0) throw FormatError("bad magic, expected CMX1");
    const auto n = detail::get_le<std::uint32_t>(in, "header");
    const auto metric = metric_from_code(detail::get_le<std::uint8_t>(in, "header"));
    if (n < 2) throw FormatError("matrix size must be at least 2");
    const std::size_t count = static_cast<std::size_t>(n) * n;
    std::vector<double> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
        throw FormatError("payload shorter than N*N*8 bytes");
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("payload longer than N*N*8 bytes");
    return ConnectivityMatrix(n, metric, std::move(values));
}

inline void save_matrix(const ConnectivityMatrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_matrix(out, m);
    if (!out) throw DataError("write failed for " + path.string());
}

[[nodiscard]] inline ConnectivityMatrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open matrix file " + path.string());
    try {
        return read_matrix(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

/// Inspection-only export; not read back by the toolkit.
inline void export_matrix_csv(const ConnectivityMatrix& m, std::ostream& out) {
    out.precision(17);
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m.size(); ++j) out << (j ? "," : "") << m(i, j);
        out << '\n';
    }
}

[[nodiscard]] constexpr std::size_t upper_triangle_size(std::size_t n) noexcept { return n * (n - 1) / 2; }

/// Strict upper triangle, row-major: (0,1), (0,2), ..., (0,N-1), (1,2), ...
[[nodiscard]] inline std::vector<double> vectorize_upper_triangle(const ConnectivityMatrix& m) {
    std::vector<double> out;
    out.reserve(upper_triangle_size(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = i + 1; j < m.size(); ++j) out.push_back(m(i, j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Datasets

struct LabeledInstance {
    std::string id;
    int label = 0;
    std::string subject_id;
    std::vector<ConnectivityMatrix> channels;
};

struct Dataset {
    std::size_t roi_count = 0;
    std::vector<Metric> channel_metrics;
    std::vector<LabeledInstance> instances;

    [[nodiscard]] std::size_t size() const noexcept { return instances.size(); }

    [[nodiscard]] std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(instances.size());
        for (const auto& inst : instances) out.push_back(inst.label);
        return out;
    }

    [[nodiscard]] std::vector<std::string> subject_ids() const {
        std::vector<std::string> out;
        out.reserve(instances.size());
        for (const auto& inst : instances) out.push_back(inst.subject_id);
        return out;
    }

    void validate(bool require_both_labels = true) const {
        if (roi_count < 2) throw DataError("dataset roi_count must be at least 2");
        if (channel_metrics.empty()) throw DataError("dataset declares no channels");
        bool seen[2] = {false, false};
        std::map<std::string, int> ids;
        for (const auto& inst : instances) {
            if (inst.label != 0 && inst.label != 1) throw DataError("instance " + inst.id + ": label must be 0 or 1");
            seen[inst.label] = true;
            if (!ids.emplace(inst.id, 0).second) throw DataError("duplicate instance id " + inst.id);
            if (inst.channels.size() != channel_metrics.size()) {
                throw DataError("instance " + inst.id + ": channel count does not match the dataset");
            }
            for (std::size_t c = 0; c < inst.channels.size(); ++c) {
                if (inst.channels[c].size() != roi_count) throw DataError("instance " + inst.id + ": ROI count mismatch");
                if (inst.channels[c].metric() != channel_metrics[c]) {
                    throw DataError("instance " + inst.id + ": channel " + std::to_string(c) + " metric mismatch");
                }
            }
        }
        if (require_both_labels && !(seen[0] && seen[1])) throw DataError("dataset must contain both labels");
    }
};

/// Instance i belongs to fold fold_of[i]; ids mirror the dataset order.
struct FoldAssignment {
    std::size_t fold_count = 0;
    std::vector<std::string> ids;
    std::vector<std::size_t> fold_of;

    [[nodiscard]] std::map<std::string, std::size_t> assignment() const {
        std::map<std::string, std::size_t> out;
        for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], fold_of[i]);
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> members(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i) {
            if (fold_of[i] == fold) out.push_back(i);
        }
        return out;
    }

    void validate() const {
        if (fold_count == 0) throw ConfigError("fold count must be positive");
        if (ids.size() != fold_of.size()) throw ConfigError("fold assignment size mismatch");
        std::vector<std::size_t> sizes(fold_count, 0);
        for (auto f : fold_of) {
            if (f >= fold_count) throw ConfigError("fold index out of range");
            ++sizes[f];
        }
        for (std::size_t f = 0; f < fold_count; ++f) {
            if (sizes[f] == 0) throw ConfigError("fold " + std::to_string(f) + " is empty");
        }
    }
};

/// Writes one .cmx per instance channel next to the manifest and returns the
/// manifest path. File names are "<id>_<metric>.cmx".
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                                          std::string_view manifest_name = "manifest.json") {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["roi_count"] = ds.roi_count;
    manifest["channel_metrics"] = nlohmann::json::array();
    for (auto m : ds.channel_metrics) manifest["channel_metrics"].push_back(to_string(m));
    manifest["instances"] = nlohmann::json::array();
    for (const auto& inst : ds.instances) {
        nlohmann::ordered_json entry;
        entry["id"] = inst.id;
        entry["label"] = inst.label;
        entry["subject_id"] = inst.subject_id;
        entry["channel_files"] = nlohmann::json::array();
        for (const auto& ch : inst.channels) {
            const std::string file = inst.id + "_" + std::string(to_string(ch.metric())) + ".cmx";
            save_matrix(ch, dir / file);
            entry["channel_files"].push_back(file);
        }
        manifest["instances"].push_back(std::move(entry));
    }
    const auto path = dir / manifest_name;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    return path;
}

/// Channel file paths are resolved relative to the manifest's directory.
[[nodiscard]] inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
        Dataset ds;
        ds.roi_count = manifest.at("roi_count").get<std::size_t>();
        for (const auto& m : manifest.at("channel_metrics")) ds.channel_metrics.push_back(metric_from_string(m.get<std::string>()));
        const auto base = manifest_path.parent_path();
        for (const auto& entry : manifest.at("instances")) {
            LabeledInstance inst;
            inst.id = entry.at("id").get<std::string>();
            inst.label = entry.at("label").get<int>();
            inst.subject_id = entry.value("subject_id", inst.id);
            for (const auto& file : entry.at("channel_files")) {
                inst.channels.push_back(load_matrix(base / file.get<std::string>()));
            }
            ds.instances.push_back(std::move(inst));
        }
        ds.validate(false);
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
}

} // namespace ccnn
