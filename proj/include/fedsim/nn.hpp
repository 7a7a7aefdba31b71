#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Activation { relu, sigmoid, tanh, identity };
enum class Head { softmax_nll, linear_mse };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "?";
}

// Dense multi-layer perceptron description. layer_sizes runs input -> output;
// activations apply to the hidden layers only (the output layer is linear,
// the head decides what happens after it).
struct ModelSpec {
    std::vector<std::size_t> layer_sizes;
    std::vector<Activation> activations;
    Head head = Head::softmax_nll;

    ModelSpec() = default;
    ModelSpec(std::vector<std::size_t> sizes, Activation uniform_act, Head h)
        : layer_sizes(std::move(sizes)), head(h) {
        if (layer_sizes.size() >= 2)
            activations.assign(layer_sizes.size() - 2, uniform_act);
    }

    std::size_t n_weight_layers() const { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
    std::size_t n_hidden() const { return n_weight_layers() == 0 ? 0 : n_weight_layers() - 1; }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }

    void validate() const {
        if (layer_sizes.size() < 2)
            throw SpecError("ModelSpec: need at least 2 layers (input and output)");
        for (std::size_t s : layer_sizes)
            if (s == 0) throw SpecError("ModelSpec: layer size 0 is invalid");
        if (activations.size() != n_hidden())
            throw SpecError("ModelSpec: need one activation per hidden layer");
    }
};

// Dense model parameters. Weight matrices are (out x in).
struct Model {
    ModelSpec spec;
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;

    std::size_t n_layers() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l)
            n += weights[l].size() + biases[l].size();
        return n;
    }

    bool all_finite() const {
        for (const auto& w : weights)
            if (!w.all_finite()) return false;
        for (const auto& b : biases)
            for (double v : b)
                if (!std::isfinite(v)) return false;
        return true;
    }

    // Visit every parameter in a fixed order (layer, weights then bias).
    template <typename F>
    void for_each_param(F&& f) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (double& v : weights[l].data()) f(v);
            for (double& v : biases[l]) f(v);
        }
    }

    template <typename F>
    void for_each_param(F&& f) const {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (double v : weights[l].data()) f(v);
            for (double v : biases[l]) f(v);
        }
    }

    bool operator==(const Model& o) const {
        return weights == o.weights && biases == o.biases;
    }
};

// Pairwise zip over two models' parameters (shapes must agree).
template <typename F>
inline void zip_params(Model& a, const Model& b, F&& f) {
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
        auto& aw = a.weights[l].data();
        const auto& bw = b.weights[l].data();
        for (std::size_t i = 0; i < aw.size(); ++i) f(aw[i], bw[i]);
        for (std::size_t i = 0; i < a.biases[l].size(); ++i) f(a.biases[l][i], b.biases[l][i]);
    }
}

// Training or evaluation batch. Classification batches carry integer labels,
// regression batches a (n x out) target matrix.
struct Batch {
    Matrix features;
    std::vector<int> labels;
    Matrix targets;

    std::size_t size() const { return features.rows(); }
    bool is_classification() const { return !labels.empty(); }
};

enum class CaptureStage { pre_activation, post_activation };
enum class Fusion { none, sum_all };

// Which representation to capture during a forward pass.
struct CaptureSelector {
    std::size_t layer = 0;
    CaptureStage stage = CaptureStage::pre_activation;
    Fusion fusion = Fusion::none;

    void validate(const ModelSpec& spec) const {
        if (layer >= spec.n_weight_layers())
            throw SpecError("CaptureSelector: layer index out of range");
    }

    std::size_t captured_width(const ModelSpec& spec) const {
        validate(spec);
        return fusion == Fusion::sum_all ? 1 : spec.layer_sizes[layer + 1];
    }
};

// weights ~ N(0, 1/fan_in), biases zero. Identical (spec, seed) pairs produce
// bit-identical models.
inline Model init_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng = Rng(mix_seed(0xfed51a1dULL, seed));
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const std::size_t in = spec.layer_sizes[l];
        const std::size_t out = spec.layer_sizes[l + 1];
        Matrix w(out, in);
        const double stddev = std::sqrt(1.0 / static_cast<double>(in));
        for (double& v : w.data()) v = rng.normal(0.0, stddev);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(out, 0.0);
    }
    return m;
}

namespace detail {

inline double apply_activation(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::tanh: return std::tanh(z);
        case Activation::identity: return z;
    }
    return z;
}

// Derivative expressed through pre-activation z and post-activation a.
inline double activation_grad(Activation act, double z, double a) {
    switch (act) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: return a * (1.0 - a);
        case Activation::tanh: return 1.0 - a * a;
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

// Z = X * W^T + b
inline Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
    Matrix z = matmul_bt(x, w);
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += b[j];
    return z;
}

struct ForwardTrace {
    std::vector<Matrix> inputs;  // inputs[l] = activation fed into layer l
    std::vector<Matrix> pre;     // pre[l]    = pre-activation output of layer l
    std::vector<Matrix> post;    // post[l]   = activation(pre[l]); output layer: == pre
};

inline ForwardTrace forward_trace(const Model& m, const Matrix& x) {
    if (x.cols() != m.spec.input_dim())
        throw ContractError("forward: feature dimension does not match model input");
    ForwardTrace t;
    Matrix a = x;
    const std::size_t L = m.n_layers();
    for (std::size_t l = 0; l < L; ++l) {
        t.inputs.push_back(a);
        Matrix z = affine(a, m.weights[l], m.biases[l]);
        Matrix p = z;
        if (l + 1 < L) {
            const Activation act = m.spec.activations[l];
            for (double& v : p.data()) v = apply_activation(act, v);
        }
        a = p;
        t.pre.push_back(std::move(z));
        t.post.push_back(std::move(p));
    }
    return t;
}

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            p(i, j) = std::exp(logits(i, j) - mx);
            sum += p(i, j);
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) p(i, j) /= sum;
    }
    return p;
}

}  // namespace detail

// Model outputs for a feature matrix: softmax probabilities for the
// softmax_nll head, raw linear outputs for linear_mse.
inline Matrix forward(const Model& m, const Matrix& x) {
    detail::ForwardTrace t = detail::forward_trace(m, x);
    const Matrix& out = t.post.back();
    return m.spec.head == Head::softmax_nll ? detail::softmax_rows(out) : out;
}

struct CaptureResult {
    Matrix outputs;
    Matrix captured;  // (n x q); q = 1 when fused
};

inline CaptureResult forward_capture(const Model& m, const Batch& batch,
                                     const CaptureSelector& sel) {
    sel.validate(m.spec);
    detail::ForwardTrace t = detail::forward_trace(m, batch.features);
    const Matrix& raw =
        sel.stage == CaptureStage::pre_activation ? t.pre[sel.layer] : t.post[sel.layer];
    Matrix captured;
    if (sel.fusion == Fusion::sum_all) {
        captured = Matrix(raw.rows(), 1);
        for (std::size_t i = 0; i < raw.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < raw.cols(); ++j) s += raw(i, j);
            captured(i, 0) = s;
        }
    } else {
        captured = raw;
    }
    const Matrix& out = t.post.back();
    Matrix outputs = m.spec.head == Head::softmax_nll ? detail::softmax_rows(out) : out;
    return {std::move(outputs), std::move(captured)};
}

struct ProxTerm {
    double mu = 0.0;
    const Model* anchor = nullptr;
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

namespace detail {

// Mean-batch loss and its parameter gradients.
inline std::pair<double, Gradients> loss_and_gradients(const Model& m, const Batch& batch,
                                                       const std::optional<ProxTerm>& prox) {
    const std::size_t n = batch.size();
    if (n == 0) throw ContractError("train_step: empty batch");
    ForwardTrace t = forward_trace(m, batch.features);
    const std::size_t L = m.n_layers();
    const Matrix& out = t.post.back();
    const double inv_n = 1.0 / static_cast<double>(n);

    double loss = 0.0;
    Matrix delta;  // dLoss/dPreActivation of the output layer
    if (m.spec.head == Head::softmax_nll) {
        if (!batch.is_classification())
            throw ContractError("train_step: softmax head needs class labels");
        Matrix p = softmax_rows(out);
        delta = p;
        for (std::size_t i = 0; i < n; ++i) {
            const int y = batch.labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= out.cols())
                throw ContractError("train_step: label out of range");
            loss += -std::log(std::max(p(i, static_cast<std::size_t>(y)), 1e-300));
            delta(i, static_cast<std::size_t>(y)) -= 1.0;
        }
        loss *= inv_n;
        for (double& v : delta.data()) v *= inv_n;
    } else {
        if (batch.targets.rows() != n || batch.targets.cols() != out.cols())
            throw ContractError("train_step: target shape does not match model output");
        delta = Matrix(out.rows(), out.cols());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) {
                const double d = out(i, j) - batch.targets(i, j);
                loss += d * d;
                delta(i, j) = 2.0 * d * inv_n;
            }
        }
        loss *= inv_n;
    }

    Gradients g;
    g.weights.resize(L);
    g.biases.resize(L);
    for (std::size_t li = L; li-- > 0;) {
        g.weights[li] = matmul_at(delta, t.inputs[li]);  // (out x in)
        g.biases[li].assign(m.biases[li].size(), 0.0);
        for (std::size_t i = 0; i < delta.rows(); ++i)
            for (std::size_t j = 0; j < delta.cols(); ++j) g.biases[li][j] += delta(i, j);
        if (li > 0) {
            Matrix prev = matmul(delta, m.weights[li]);  // (n x in)
            const Activation act = m.spec.activations[li - 1];
            for (std::size_t i = 0; i < prev.rows(); ++i)
                for (std::size_t j = 0; j < prev.cols(); ++j)
                    prev(i, j) *= activation_grad(act, t.pre[li - 1](i, j), t.post[li - 1](i, j));
            delta = std::move(prev);
        }
    }

    if (prox && prox->mu > 0.0) {
        const Model& anchor = *prox->anchor;
        for (std::size_t l = 0; l < L; ++l) {
            if (anchor.weights[l].rows() != m.weights[l].rows() ||
                anchor.weights[l].cols() != m.weights[l].cols())
                throw ContractError("train_step: proximal anchor shape mismatch");
            auto& gw = g.weights[l].data();
            const auto& mw = m.weights[l].data();
            const auto& aw = anchor.weights[l].data();
            for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += prox->mu * (mw[i] - aw[i]);
            for (std::size_t i = 0; i < g.biases[l].size(); ++i)
                g.biases[l][i] += prox->mu * (m.biases[l][i] - anchor.biases[l][i]);
        }
    }
    return {loss, std::move(g)};
}

}  // namespace detail

// One SGD step on the mean batch loss. Returns the updated model and the
// pre-step loss. A proximal term mu/2 ||theta - anchor||^2 is added when given.
inline std::pair<Model, double> train_step(const Model& m, const Batch& batch, double lr,
                                           const std::optional<ProxTerm>& prox = std::nullopt) {
    if (lr < 0.0) throw ContractError("train_step: negative learning rate");
    auto [loss, g] = detail::loss_and_gradients(m, batch, prox);
    if (!std::isfinite(loss))
        throw NumericError("train_step: non-finite loss", "loss=" + std::to_string(loss));
    Model next = m;
    for (std::size_t l = 0; l < next.n_layers(); ++l) {
        auto& w = next.weights[l].data();
        const auto& gw = g.weights[l].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!std::isfinite(gw[i]))
                throw NumericError("train_step: non-finite gradient",
                                   "layer=" + std::to_string(l));
            w[i] -= lr * gw[i];
        }
        for (std::size_t i = 0; i < next.biases[l].size(); ++i) {
            if (!std::isfinite(g.biases[l][i]))
                throw NumericError("train_step: non-finite gradient",
                                   "layer=" + std::to_string(l) + " bias");
            next.biases[l][i] -= lr * g.biases[l][i];
        }
    }
    return {std::move(next), loss};
}

// Loss without taking a step (used for loss reporting).
inline double batch_loss(const Model& m, const Batch& batch) {
    return detail::loss_and_gradients(m, batch, std::nullopt).first;
}

enum class Metric { accuracy, mse };

// Accuracy is the argmax match rate with ties broken toward the lowest class
// index; mse is the mean over samples of the squared error summed over output
// dimensions.
inline double evaluate(const Model& m, const Batch& dataset, Metric metric) {
    if (dataset.size() == 0) throw ContractError("evaluate: empty dataset");
    Matrix out = forward(m, dataset.features);
    const std::size_t n = dataset.size();
    if (metric == Metric::accuracy) {
        if (!dataset.is_classification())
            throw ContractError("evaluate: accuracy needs class labels");
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < out.cols(); ++j)
                if (out(i, j) > out(i, best)) best = j;
            if (static_cast<int>(best) == dataset.labels[i]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(n);
    }
    if (dataset.targets.rows() != n || dataset.targets.cols() != out.cols())
        throw ContractError("evaluate: target shape does not match model output");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) {
            const double d = out(i, j) - dataset.targets(i, j);
            sum += d * d;
        }
    return sum / static_cast<double>(n);
}

}  // namespace fedsim
