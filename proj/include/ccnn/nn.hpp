#pragma once

// Forward/backward passes, optimizers and training for the three classifiers:
//
//   ccnn    row-wise 1xN convolution (f1 filters, one output per ROI), column-wise
//           Nx1 convolution (f2 outputs), ReLU hidden layer, softmax output
//   simple  one sigmoid hidden layer, softmax output
//   deep    two ReLU hidden layers, softmax output
//
// Activations are stored column-per-instance. CCNN inputs are laid out per
// instance as [roi i][channel c][position j], so the first layer of one
// instance is a single (N x C*N) * (C*N x f1) product. Its output is kept as a
// column-major N x f1 block, which flattens to [filter][roi], the order W2
// expects.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ccnn/core.hpp"
#include "ccnn/error.hpp"
#include "ccnn/rng.hpp"

namespace ccnn {

using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

using ColMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using ColMap = Eigen::Map<ColMatrix>;
using ConstColMap = Eigen::Map<const ColMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

enum class ModelKind { ccnn, simple, deep };

[[nodiscard]] inline std::string_view to_string(ModelKind k) {
    switch (k) {
    case ModelKind::ccnn: return "ccnn";
    case ModelKind::simple: return "simple";
    case ModelKind::deep: return "deep";
    }
    return "?";
}

[[nodiscard]] inline ModelKind model_kind_from_string(std::string_view s) {
    if (s == "ccnn") return ModelKind::ccnn;
    if (s == "simple") return ModelKind::simple;
    if (s == "deep") return ModelKind::deep;
    throw ConfigError("unknown model '" + std::string(s) + "' (expected ccnn, simple or deep)");
}

/// Architecture descriptor. `hidden` is the last hidden layer (96 for ccnn and
/// deep, 128 for simple); `first_hidden` is the deep net's first layer.
struct ModelSpec {
    ModelKind kind = ModelKind::ccnn;
    std::size_t roi_count = 0;
    std::size_t channels = 1;
    std::size_t conv1_filters = 64;
    std::size_t conv2_filters = 128;
    std::size_t first_hidden = 128;
    std::size_t hidden = 96;
    std::size_t classes = 2;
    std::size_t input_features = 0;

    static ModelSpec ccnn(std::size_t n, std::size_t c, std::size_t f1 = 64, std::size_t f2 = 128,
                          std::size_t h = 96, std::size_t classes = 2) {
        ModelSpec s;
        s.kind = ModelKind::ccnn;
        s.roi_count = n;
        s.channels = c;
        s.conv1_filters = f1;
        s.conv2_filters = f2;
        s.hidden = h;
        s.classes = classes;
        s.input_features = c * n * n;
        return s;
    }

    static ModelSpec simple(std::size_t in, std::size_t h = 128, std::size_t classes = 2) {
        ModelSpec s;
        s.kind = ModelKind::simple;
        s.hidden = h;
        s.classes = classes;
        s.input_features = in;
        return s;
    }

    static ModelSpec deep(std::size_t in, std::size_t h1 = 128, std::size_t h2 = 96, std::size_t classes = 2) {
        ModelSpec s;
        s.kind = ModelKind::deep;
        s.first_hidden = h1;
        s.hidden = h2;
        s.classes = classes;
        s.input_features = in;
        return s;
    }

    /// Default architecture for a dataset with N ROIs and C channels; MLPs
    /// consume the concatenated upper triangles.
    static ModelSpec for_dataset(ModelKind kind, std::size_t n, std::size_t c) {
        switch (kind) {
        case ModelKind::ccnn: return ccnn(n, c);
        case ModelKind::simple: {
            auto s = simple(c * upper_triangle_size(n));
            s.roi_count = n;
            s.channels = c;
            return s;
        }
        case ModelKind::deep: {
            auto s = deep(c * upper_triangle_size(n));
            s.roi_count = n;
            s.channels = c;
            return s;
        }
        }
        throw ConfigError("unknown model kind");
    }

    void validate() const {
        if (classes < 2) throw ConfigError("model needs at least 2 classes");
        if (hidden == 0) throw ConfigError("hidden layer size must be positive");
        if (kind == ModelKind::ccnn) {
            if (roi_count < 2 || channels < 1 || conv1_filters < 1 || conv2_filters < 1) {
                throw ConfigError("ccnn needs N >= 2, C >= 1 and positive filter counts");
            }
            if (input_features != channels * roi_count * roi_count) throw ConfigError("ccnn input size mismatch");
        } else {
            if (input_features == 0) throw ConfigError("MLP needs input_features > 0");
            if (kind == ModelKind::deep && first_hidden == 0) throw ConfigError("deep net needs first_hidden > 0");
        }
    }
};

struct ParamCount {
    std::size_t weights = 0;
    std::size_t biases = 0;
    friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

[[nodiscard]] inline ParamCount param_count(const ModelSpec& s) {
    switch (s.kind) {
    case ModelKind::ccnn:
        return {s.channels * s.roi_count * s.conv1_filters + s.roi_count * s.conv1_filters * s.conv2_filters +
                    s.conv2_filters * s.hidden + s.hidden * s.classes,
                s.conv1_filters + s.conv2_filters + s.hidden + s.classes};
    case ModelKind::simple:
        return {s.input_features * s.hidden + s.hidden * s.classes, s.hidden + s.classes};
    case ModelKind::deep:
        return {s.input_features * s.first_hidden + s.first_hidden * s.hidden + s.hidden * s.classes,
                s.first_hidden + s.hidden + s.classes};
    }
    return {};
}

// ---------------------------------------------------------------------------
// Parameters

struct Tensor {
    std::string name;
    std::vector<std::size_t> dims;
    AlignedVector data;

    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
};

using Gradients = std::vector<AlignedVector>;

/// Named parameter arrays in a fixed order (W1, b1, W2, b2, ...) plus Adam
/// moments and step counter.
struct ParamStore {
    std::vector<Tensor> tensors;
    std::vector<AlignedVector> adam_m;
    std::vector<AlignedVector> adam_v;
    std::uint64_t step = 0;

    [[nodiscard]] const Tensor& at(std::string_view name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return t;
        }
        throw DataError("no parameter named " + std::string(name));
    }
    [[nodiscard]] Tensor& at(std::string_view name) {
        return const_cast<Tensor&>(std::as_const(*this).at(name));
    }
    [[nodiscard]] const double* data(std::size_t i) const { return tensors[i].data.data(); }

    [[nodiscard]] Gradients zeros_like() const {
        Gradients g;
        for (const auto& t : tensors) g.emplace_back(t.size(), 0.0);
        return g;
    }

    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (const auto& t : tensors) {
            for (double v : t.data) m = std::max(m, std::abs(v));
        }
        return m;
    }

    [[nodiscard]] bool all_finite() const {
        for (const auto& t : tensors) {
            for (double v : t.data) {
                if (!std::isfinite(v)) return false;
            }
        }
        return true;
    }
};

namespace detail {

struct LayerShape {
    const char* name;
    std::vector<std::size_t> dims;
    std::size_t fan_in;
    double gain; // init std = sqrt(gain / fan_in); 0 for biases
};

inline std::vector<LayerShape> layer_shapes(const ModelSpec& s) {
    const std::size_t n = s.roi_count;
    switch (s.kind) {
    case ModelKind::ccnn:
        return {{"W1", {s.conv1_filters, s.channels, n}, s.channels * n, 2.0},
                {"b1", {s.conv1_filters}, 0, 0.0},
                {"W2", {s.conv2_filters, s.conv1_filters, n}, s.conv1_filters * n, 2.0},
                {"b2", {s.conv2_filters}, 0, 0.0},
                {"W3", {s.hidden, s.conv2_filters}, s.conv2_filters, 2.0},
                {"b3", {s.hidden}, 0, 0.0},
                {"W4", {s.classes, s.hidden}, s.hidden, 1.0},
                {"b4", {s.classes}, 0, 0.0}};
    case ModelKind::simple:
        return {{"W1", {s.hidden, s.input_features}, s.input_features, 1.0},
                {"b1", {s.hidden}, 0, 0.0},
                {"W2", {s.classes, s.hidden}, s.hidden, 1.0},
                {"b2", {s.classes}, 0, 0.0}};
    case ModelKind::deep:
        return {{"W1", {s.first_hidden, s.input_features}, s.input_features, 2.0},
                {"b1", {s.first_hidden}, 0, 0.0},
                {"W2", {s.hidden, s.first_hidden}, s.first_hidden, 2.0},
                {"b2", {s.hidden}, 0, 0.0},
                {"W3", {s.classes, s.hidden}, s.hidden, 1.0},
                {"b3", {s.classes}, 0, 0.0}};
    }
    return {};
}

} // namespace detail

/// Weights ~ N(0, gain/fan_in): gain 2 for ReLU layers, 1 for the sigmoid
/// layer and the softmax output layer. Biases start at zero.
[[nodiscard]] inline ParamStore init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParamStore p;
    for (const auto& shape : detail::layer_shapes(spec)) {
        Tensor t;
        t.name = shape.name;
        t.dims = shape.dims;
        const std::size_t size =
            std::accumulate(shape.dims.begin(), shape.dims.end(), std::size_t{1}, std::multiplies<>());
        t.data.assign(size, 0.0);
        if (shape.gain > 0.0) {
            const double sd = std::sqrt(shape.gain / static_cast<double>(shape.fan_in));
            for (auto& v : t.data) v = sd * rng.normal();
        }
        p.adam_m.emplace_back(size, 0.0);
        p.adam_v.emplace_back(size, 0.0);
        p.tensors.push_back(std::move(t));
    }
    return p;
}

/// Zero-valued parameters with the right shapes.
[[nodiscard]] inline ParamStore zero_params(const ModelSpec& spec) {
    auto p = init_params(spec, 0);
    for (auto& t : p.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
    return p;
}

inline void check_shapes(const ModelSpec& spec, const ParamStore& p) {
    const auto shapes = detail::layer_shapes(spec);
    if (shapes.size() != p.tensors.size()) throw DataError("parameter count does not match the model");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (p.tensors[i].name != shapes[i].name || p.tensors[i].dims != shapes[i].dims) {
            throw DataError("parameter " + p.tensors[i].name + " has the wrong shape for this model");
        }
    }
}

// ---------------------------------------------------------------------------
// Inputs

/// Contiguous instances, `width` doubles each.
struct InputBatch {
    std::size_t count = 0;
    std::size_t width = 0;
    AlignedVector data;
    std::vector<int> labels;

    [[nodiscard]] const double* row(std::size_t i) const { return data.data() + i * width; }

    [[nodiscard]] InputBatch gather(std::span<const std::size_t> rows) const {
        InputBatch out;
        out.count = rows.size();
        out.width = width;
        out.data.resize(rows.size() * width);
        out.labels.reserve(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            std::copy_n(row(rows[k]), width, out.data.data() + k * width);
            out.labels.push_back(labels[rows[k]]);
        }
        return out;
    }
};

/// CCNN: [roi][channel][position] per instance. MLPs: upper triangle of
/// each channel, concatenated in channel order.
[[nodiscard]] inline InputBatch encode_inputs(const Dataset& ds, const ModelSpec& spec) {
    const std::size_t n = ds.roi_count;
    const std::size_t c = ds.channel_metrics.size();
    InputBatch batch;
    batch.count = ds.size();
    batch.labels = ds.labels();
    if (spec.kind == ModelKind::ccnn) {
        if (spec.roi_count != n || spec.channels != c) throw DataError("dataset shape does not match the CCNN spec");
        batch.width = c * n * n;
        batch.data.resize(batch.count * batch.width);
        for (std::size_t b = 0; b < batch.count; ++b) {
            double* dst = batch.data.data() + b * batch.width;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const auto row = ds.instances[b].channels[ch].row(i);
                    std::copy(row.begin(), row.end(), dst + (i * c + ch) * n);
                }
            }
        }
    } else {
        const std::size_t per = upper_triangle_size(n);
        if (spec.input_features != c * per) throw DataError("dataset shape does not match the MLP input size");
        batch.width = c * per;
        batch.data.resize(batch.count * batch.width);
        for (std::size_t b = 0; b < batch.count; ++b) {
            double* dst = batch.data.data() + b * batch.width;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const auto v = vectorize_upper_triangle(ds.instances[b].channels[ch]);
                std::copy(v.begin(), v.end(), dst + ch * per);
            }
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct DropoutPlacement {
    bool conv_output = true; // ccnn: output of the second convolution
    bool hidden = true;      // ccnn: fully connected hidden layer; deep: both hidden layers
};

/// Inverted-dropout masks, entries 0 or 1/keep_prob. An empty matrix means
/// no dropout at that site. Sites: ccnn {conv2 output, hidden}; deep {hidden1,
/// hidden2}; simple none.
struct DropoutMasks {
    std::vector<ColMatrix> sites;
};

[[nodiscard]] inline DropoutMasks sample_dropout(const ModelSpec& spec, std::size_t batch, double keep_prob,
                                                 const DropoutPlacement& placement, Rng& rng) {
    DropoutMasks masks;
    auto draw = [&](std::size_t rows, bool enabled) {
        if (!enabled || keep_prob >= 1.0) {
            masks.sites.emplace_back();
            return;
        }
        ColMatrix m(rows, batch);
        const double scale = 1.0 / keep_prob;
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.bernoulli(keep_prob) ? scale : 0.0;
        masks.sites.push_back(std::move(m));
    };
    switch (spec.kind) {
    case ModelKind::ccnn:
        draw(spec.conv2_filters, placement.conv_output);
        draw(spec.hidden, placement.hidden);
        break;
    case ModelKind::deep:
        draw(spec.first_hidden, placement.hidden);
        draw(spec.hidden, placement.hidden);
        break;
    case ModelKind::simple:
        break;
    }
    return masks;
}

struct ForwardCache {
    const double* inputs = nullptr;
    std::size_t batch = 0;
    std::size_t width = 0;
    std::vector<ColMatrix> activations; // post-nonlinearity, pre-dropout
    std::vector<ColMatrix> dropped;     // post-dropout (empty if none at that site)
    ColMatrix probs;                    // classes x batch
};

namespace detail {

inline void softmax_columns(ColMatrix& z) {
    for (Eigen::Index b = 0; b < z.cols(); ++b) {
        auto col = z.col(b);
        const double mx = col.maxCoeff();
        col = (col.array() - mx).exp();
        col /= col.sum();
    }
}

inline void relu(ColMatrix& m) { m = m.cwiseMax(0.0); }

inline const ColMatrix& apply_dropout(const ColMatrix& a, const DropoutMasks* masks, std::size_t site,
                                      ColMatrix& out) {
    if (masks == nullptr || site >= masks->sites.size() || masks->sites[site].size() == 0) return a;
    out = a.cwiseProduct(masks->sites[site]);
    return out;
}

inline ConstRowMap weights(const ParamStore& p, std::size_t idx, Eigen::Index rows, Eigen::Index cols) {
    return ConstRowMap(p.data(idx), rows, cols);
}

inline ConstVecMap bias(const ParamStore& p, std::size_t idx) {
    return ConstVecMap(p.data(idx), static_cast<Eigen::Index>(p.tensors[idx].size()));
}

} // namespace detail

/// `x` points at `batch` contiguous instances in the CCNN input layout.
/// Pass masks == nullptr for evaluation mode.
[[nodiscard]] inline ForwardCache ccnn_forward(const ModelSpec& s, const ParamStore& p, const double* x,
                                               std::size_t batch, const DropoutMasks* masks) {
    using detail::bias;
    using detail::weights;
    const auto n = static_cast<Eigen::Index>(s.roi_count);
    const auto cn = static_cast<Eigen::Index>(s.channels * s.roi_count);
    const auto f1 = static_cast<Eigen::Index>(s.conv1_filters);
    const auto f2 = static_cast<Eigen::Index>(s.conv2_filters);
    const auto h = static_cast<Eigen::Index>(s.hidden);
    const auto cls = static_cast<Eigen::Index>(s.classes);
    const auto bsz = static_cast<Eigen::Index>(batch);

    ForwardCache cache;
    cache.inputs = x;
    cache.batch = batch;
    cache.width = s.input_features;
    cache.activations.resize(3);
    cache.dropped.resize(3);

    const auto w1 = weights(p, 0, f1, cn);
    const auto b1 = bias(p, 1);
    ColMatrix& a1 = cache.activations[0];
    a1.resize(n * f1, bsz);
    for (Eigen::Index b = 0; b < bsz; ++b) {
        ConstRowMap xb(x + b * n * cn, n, cn);
        ColMap a1b(a1.col(b).data(), n, f1);
        a1b.noalias() = xb * w1.transpose();
        a1b.rowwise() += b1.transpose();
    }
    detail::relu(a1);

    ColMatrix& a2 = cache.activations[1];
    a2.noalias() = weights(p, 2, f2, n * f1) * a1;
    a2.colwise() += bias(p, 3);
    detail::relu(a2);
    const ColMatrix& d2 = detail::apply_dropout(a2, masks, 0, cache.dropped[1]);

    ColMatrix& a3 = cache.activations[2];
    a3.noalias() = weights(p, 4, h, f2) * d2;
    a3.colwise() += bias(p, 5);
    detail::relu(a3);
    const ColMatrix& d3 = detail::apply_dropout(a3, masks, 1, cache.dropped[2]);

    cache.probs.noalias() = weights(p, 6, cls, h) * d3;
    cache.probs.colwise() += bias(p, 7);
    detail::softmax_columns(cache.probs);
    return cache;
}

/// Simple: softmax(W2 sigmoid(W1 x + b1) + b2). Deep: two ReLU layers with
/// optional dropout on both.
[[nodiscard]] inline ForwardCache mlp_forward(const ModelSpec& s, const ParamStore& p, const double* x,
                                              std::size_t batch, const DropoutMasks* masks) {
    using detail::bias;
    using detail::weights;
    const auto in = static_cast<Eigen::Index>(s.input_features);
    const auto cls = static_cast<Eigen::Index>(s.classes);
    const auto bsz = static_cast<Eigen::Index>(batch);
    ConstColMap xs(x, in, bsz);

    ForwardCache cache;
    cache.inputs = x;
    cache.batch = batch;
    cache.width = s.input_features;

    if (s.kind == ModelKind::simple) {
        const auto h = static_cast<Eigen::Index>(s.hidden);
        cache.activations.resize(1);
        cache.dropped.resize(1);
        ColMatrix& a1 = cache.activations[0];
        a1.noalias() = weights(p, 0, h, in) * xs;
        a1.colwise() += bias(p, 1);
        a1 = (1.0 + (-a1.array()).exp()).inverse().matrix();
        cache.probs.noalias() = weights(p, 2, cls, h) * a1;
        cache.probs.colwise() += bias(p, 3);
    } else {
        const auto h1 = static_cast<Eigen::Index>(s.first_hidden);
        const auto h2 = static_cast<Eigen::Index>(s.hidden);
        cache.activations.resize(2);
        cache.dropped.resize(2);
        ColMatrix& a1 = cache.activations[0];
        a1.noalias() = weights(p, 0, h1, in) * xs;
        a1.colwise() += bias(p, 1);
        detail::relu(a1);
        const ColMatrix& d1 = detail::apply_dropout(a1, masks, 0, cache.dropped[0]);
        ColMatrix& a2 = cache.activations[1];
        a2.noalias() = weights(p, 2, h2, h1) * d1;
        a2.colwise() += bias(p, 3);
        detail::relu(a2);
        const ColMatrix& d2 = detail::apply_dropout(a2, masks, 1, cache.dropped[1]);
        cache.probs.noalias() = weights(p, 4, cls, h2) * d2;
        cache.probs.colwise() += bias(p, 5);
    }
    detail::softmax_columns(cache.probs);
    return cache;
}

[[nodiscard]] inline ForwardCache forward(const ModelSpec& s, const ParamStore& p, const double* x,
                                          std::size_t batch, const DropoutMasks* masks) {
    return s.kind == ModelKind::ccnn ? ccnn_forward(s, p, x, batch, masks) : mlp_forward(s, p, x, batch, masks);
}

inline constexpr double probability_floor = 1e-12;

[[nodiscard]] inline double cross_entropy_loss(std::span<const double> probs, int label) {
    return -std::log(std::max(probs[static_cast<std::size_t>(label)], probability_floor));
}

/// Mean cross-entropy over the batch.
[[nodiscard]] inline double batch_loss(const ForwardCache& cache, std::span<const int> labels) {
    double total = 0.0;
    for (std::size_t b = 0; b < cache.batch; ++b) {
        total += cross_entropy_loss({cache.probs.col(static_cast<Eigen::Index>(b)).data(),
                                     static_cast<std::size_t>(cache.probs.rows())},
                                    labels[b]);
    }
    return total / static_cast<double>(cache.batch);
}

/// Exact gradient of the mean cross-entropy with the masks used in forward.
[[nodiscard]] inline Gradients backward(const ModelSpec& s, const ParamStore& p, const ForwardCache& cache,
                                        std::span<const int> labels, const DropoutMasks* masks) {
    using detail::weights;
    const auto bsz = static_cast<Eigen::Index>(cache.batch);
    Gradients grads = p.zeros_like();
    auto grad_w = [&](std::size_t idx, Eigen::Index rows, Eigen::Index cols) {
        return RowMap(grads[idx].data(), rows, cols);
    };
    auto grad_b = [&](std::size_t idx) {
        return VecMap(grads[idx].data(), static_cast<Eigen::Index>(grads[idx].size()));
    };
    auto mask_of = [&](std::size_t site) -> const ColMatrix* {
        if (masks == nullptr || site >= masks->sites.size() || masks->sites[site].size() == 0) return nullptr;
        return &masks->sites[site];
    };
    auto dropped_or = [&](std::size_t layer) -> const ColMatrix& {
        return cache.dropped[layer].size() ? cache.dropped[layer] : cache.activations[layer];
    };

    ColMatrix delta = cache.probs;
    for (Eigen::Index b = 0; b < bsz; ++b) delta(labels[static_cast<std::size_t>(b)], b) -= 1.0;
    delta /= static_cast<double>(cache.batch);

    // Propagates delta (dL/dz of a dense layer) to the layer's input and
    // records the layer's weight and bias gradients.
    auto dense_back = [&](std::size_t w_idx, const ColMatrix& input, Eigen::Index rows, Eigen::Index cols) {
        grad_w(w_idx, rows, cols).noalias() = delta * input.transpose();
        grad_b(w_idx + 1) = delta.rowwise().sum();
        ColMatrix upstream = weights(p, w_idx, rows, cols).transpose() * delta;
        return upstream;
    };
    auto through_relu = [&](ColMatrix& d, std::size_t layer, const ColMatrix* mask) {
        if (mask) d = d.cwiseProduct(*mask);
        d = (cache.activations[layer].array() > 0.0).select(d, 0.0);
    };

    const auto cls = static_cast<Eigen::Index>(s.classes);
    if (s.kind == ModelKind::ccnn) {
        const auto n = static_cast<Eigen::Index>(s.roi_count);
        const auto cn = static_cast<Eigen::Index>(s.channels * s.roi_count);
        const auto f1 = static_cast<Eigen::Index>(s.conv1_filters);
        const auto f2 = static_cast<Eigen::Index>(s.conv2_filters);
        const auto h = static_cast<Eigen::Index>(s.hidden);

        delta = dense_back(6, dropped_or(2), cls, h);
        through_relu(delta, 2, mask_of(1));
        delta = dense_back(4, dropped_or(1), h, f2);
        through_relu(delta, 1, mask_of(0));
        delta = dense_back(2, cache.activations[0], f2, n * f1);
        through_relu(delta, 0, nullptr);

        auto gw1 = grad_w(0, f1, cn);
        auto gb1 = grad_b(1);
        for (Eigen::Index b = 0; b < bsz; ++b) {
            ConstRowMap xb(cache.inputs + b * n * cn, n, cn);
            ConstColMap db(delta.col(b).data(), n, f1);
            gw1.noalias() += db.transpose() * xb;
            gb1 += db.colwise().sum().transpose();
        }
    } else {
        const auto in = static_cast<Eigen::Index>(s.input_features);
        const ColMatrix xs = ConstColMap(cache.inputs, in, bsz);
        if (s.kind == ModelKind::simple) {
            const auto h = static_cast<Eigen::Index>(s.hidden);
            const auto& a1 = cache.activations[0];
            delta = dense_back(2, a1, cls, h);
            delta = delta.cwiseProduct((a1.array() * (1.0 - a1.array())).matrix());
            grad_w(0, h, in).noalias() = delta * xs.transpose();
            grad_b(1) = delta.rowwise().sum();
        } else {
            const auto h1 = static_cast<Eigen::Index>(s.first_hidden);
            const auto h2 = static_cast<Eigen::Index>(s.hidden);
            delta = dense_back(4, dropped_or(1), cls, h2);
            through_relu(delta, 1, mask_of(1));
            delta = dense_back(2, dropped_or(0), h2, h1);
            through_relu(delta, 0, mask_of(0));
            grad_w(0, h1, in).noalias() = delta * xs.transpose();
            grad_b(1) = delta.rowwise().sum();
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Optimizers and training

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 16;
    std::size_t epochs = 100;
    double keep_prob = 0.6;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    DropoutPlacement dropout;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must be in (0, 1]");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
            throw ConfigError("Adam betas must be in [0, 1)");
        }
        if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
    }
};

/// Optimizer and learning-rate defaults per architecture: SGD at 1e-2 for
/// the simple net, Adam at 1e-4 otherwise.
[[nodiscard]] inline TrainConfig default_train_config(ModelKind kind) {
    TrainConfig cfg;
    if (kind == ModelKind::simple) {
        cfg.optimizer = OptimizerKind::sgd;
        cfg.learning_rate = 1e-2;
        cfg.keep_prob = 1.0;
    }
    return cfg;
}

/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; theta <- theta - lr mhat / (sqrt(vhat) + eps).
inline void adam_step(ParamStore& p, const Gradients& g, const TrainConfig& cfg) {
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t k = 0; k < p.tensors.size(); ++k) {
        VecMap theta(p.tensors[k].data.data(), static_cast<Eigen::Index>(p.tensors[k].size()));
        VecMap m(p.adam_m[k].data(), theta.size());
        VecMap v(p.adam_v[k].data(), theta.size());
        ConstVecMap grad(g[k].data(), theta.size());
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
        theta.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_epsilon);
    }
}

inline void sgd_step(ParamStore& p, const Gradients& g, const TrainConfig& cfg) {
    ++p.step;
    for (std::size_t k = 0; k < p.tensors.size(); ++k) {
        VecMap theta(p.tensors[k].data.data(), static_cast<Eigen::Index>(p.tensors[k].size()));
        theta -= cfg.learning_rate * ConstVecMap(g[k].data(), theta.size());
    }
}

struct TrainResult {
    ParamStore params;
    std::vector<double> loss_history; // mean training loss per epoch
};

/// Mini-batch training. Initialization, shuffling and dropout masks draw
/// from derive_seed(cfg.seed, "init" | "shuffle" | "dropout").
[[nodiscard]] inline TrainResult train(const ModelSpec& spec, const InputBatch& data, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (data.count == 0) throw DataError("no training instances");
    if (data.width != spec.input_features) throw DataError("training inputs do not match the model input size");

    TrainResult result;
    result.params = init_params(spec, derive_seed(cfg.seed, "init"));
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

    std::vector<std::size_t> order(data.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch_no = 0; start < data.count; start += cfg.batch_size, ++batch_no) {
            const std::size_t len = std::min(cfg.batch_size, data.count - start);
            const auto batch = data.gather(std::span(order).subspan(start, len));
            const auto masks = sample_dropout(spec, len, cfg.keep_prob, cfg.dropout, dropout_rng);
            const auto cache = forward(spec, result.params, batch.data.data(), len, &masks);
            const double loss = batch_loss(cache, batch.labels);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite training loss at epoch " << epoch << ", batch " << batch_no
                    << " (max |parameter| = " << result.params.max_abs() << ")";
                throw NumericalError(msg.str());
            }
            epoch_loss += loss * static_cast<double>(len);
            const auto grads = backward(spec, result.params, cache, batch.labels, &masks);
            if (cfg.optimizer == OptimizerKind::adam) {
                adam_step(result.params, grads, cfg);
            } else {
                sgd_step(result.params, grads, cfg);
            }
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(data.count));
    }
    if (!result.params.all_finite()) throw NumericalError("training produced non-finite parameters");
    return result;
}

struct Prediction {
    int label = 0;
    double score = 0.0; // probability of class 1
};

/// Eval-mode forward; ties in probability go to the lower class index.
[[nodiscard]] inline std::vector<Prediction> predict_batch(const ParamStore& p, const ModelSpec& spec,
                                                           const InputBatch& data, std::size_t chunk = 32) {
    std::vector<Prediction> out;
    out.reserve(data.count);
    for (std::size_t start = 0; start < data.count; start += chunk) {
        const std::size_t len = std::min(chunk, data.count - start);
        const auto cache = forward(spec, p, data.row(start), len, nullptr);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(len); ++b) {
            Prediction pred;
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < cache.probs.rows(); ++c) {
                if (cache.probs(c, b) > cache.probs(best, b)) best = c;
            }
            pred.label = static_cast<int>(best);
            pred.score = cache.probs.rows() > 1 ? cache.probs(1, b) : 0.0;
            out.push_back(pred);
        }
    }
    return out;
}

[[nodiscard]] inline Prediction predict(const ParamStore& p, const ModelSpec& spec, std::span<const double> instance) {
    InputBatch one;
    one.count = 1;
    one.width = instance.size();
    one.data.assign(instance.begin(), instance.end());
    one.labels = {0};
    return predict_batch(p, spec, one).front();
}

// ---------------------------------------------------------------------------
// Persistence

/// .prm: "PRM1", u32 array count, then per array u16 name length, name,
/// u8 ndim, u32 dims, f64 payload (all little-endian, row-major).
inline void save_params(const ParamStore& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write("PRM1", 4);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensors.size()));
    for (const auto& t : p.tensors) {
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw DataError("write failed for " + path.string());
}

[[nodiscard]] inline ParamStore load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "PRM1", 4) != 0) throw FormatError("bad magic, expected PRM1");
    ParamStore p;
    const auto count = detail::get_le<std::uint32_t>(in, "header");
    for (std::uint32_t k = 0; k < count; ++k) {
        Tensor t;
        t.name.resize(detail::get_le<std::uint16_t>(in, "array name length"));
        if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) throw FormatError("truncated name");
        const auto ndim = detail::get_le<std::uint8_t>(in, "ndim");
        std::size_t size = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            t.dims.push_back(detail::get_le<std::uint32_t>(in, "dims"));
            size *= t.dims.back();
        }
        t.data.resize(size);
        if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(size * sizeof(double)))) {
            throw FormatError("payload of " + t.name + " is truncated");
        }
        p.adam_m.emplace_back(size, 0.0);
        p.adam_v.emplace_back(size, 0.0);
        p.tensors.push_back(std::move(t));
    }
    return p;
}

inline nlohmann::ordered_json to_json(const ModelSpec& s) {
    nlohmann::ordered_json j;
    j["model"] = to_string(s.kind);
    j["roi_count"] = s.roi_count;
    j["channels"] = s.channels;
    j["conv1_filters"] = s.conv1_filters;
    j["conv2_filters"] = s.conv2_filters;
    j["first_hidden"] = s.first_hidden;
    j["hidden"] = s.hidden;
    j["classes"] = s.classes;
    j["input_features"] = s.input_features;
    return j;
}

/// Missing fields take the architecture defaults for (model, roi_count, channels).
[[nodiscard]] inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    try {
        const auto kind = model_kind_from_string(j.at("model").get<std::string>());
        const auto n = j.at("roi_count").get<std::size_t>();
        const auto c = j.value("channels", std::size_t{1});
        ModelSpec s = ModelSpec::for_dataset(kind, n, c);
        s.conv1_filters = j.value("conv1_filters", s.conv1_filters);
        s.conv2_filters = j.value("conv2_filters", s.conv2_filters);
        s.first_hidden = j.value("first_hidden", s.first_hidden);
        s.hidden = j.value("hidden", kind == ModelKind::simple ? std::size_t{128} : s.hidden);
        s.classes = j.value("classes", s.classes);
        s.input_features = j.value("input_features", s.input_features);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model spec: ") + e.what());
    }
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["keep_prob"] = c.keep_prob;
    j["optimizer"] = c.optimizer == OptimizerKind::adam ? "adam" : "sgd";
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_epsilon"] = c.adam_epsilon;
    j["seed"] = c.seed;
    j["dropout_conv"] = c.dropout.conv_output;
    j["dropout_hidden"] = c.dropout.hidden;
    return j;
}

/// Fields absent from `j` keep the values of `base`.
[[nodiscard]] inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
    try {
        base.learning_rate = j.value("learning_rate", base.learning_rate);
        base.batch_size = j.value("batch_size", base.batch_size);
        base.epochs = j.value("epochs", base.epochs);
        base.keep_prob = j.value("keep_prob", base.keep_prob);
        if (j.contains("optimizer")) {
            const auto opt = j.at("optimizer").get<std::string>();
            if (opt == "adam") {
                base.optimizer = OptimizerKind::adam;
            } else if (opt == "sgd") {
                base.optimizer = OptimizerKind::sgd;
            } else {
                throw ConfigError("unknown optimizer '" + opt + "'");
            }
        }
        base.adam_beta1 = j.value("adam_beta1", base.adam_beta1);
        base.adam_beta2 = j.value("adam_beta2", base.adam_beta2);
        base.adam_epsilon = j.value("adam_epsilon", base.adam_epsilon);
        base.seed = j.value("seed", base.seed);
        base.dropout.conv_output = j.value("dropout_conv", base.dropout.conv_output);
        base.dropout.hidden = j.value("dropout_hidden", base.dropout.hidden);
        base.validate();
        return base;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
}

} // namespace ccnn
