#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/layers.hpp"
#include "mstcn/rng.hpp"
#include "mstcn/tensor.hpp"

namespace mstcn {

/// Architecture description. Defaults follow the reference configuration:
/// 4 stages of 10 dilated layers with 64 filters each.
struct ModelConfig {
    int num_stages = 4;
    int num_layers = 10;
    int num_filters = 64;
    int num_classes = 0;
    int input_dim = 0;
    double dropout = 0.5;
    // Optional per-layer dilation override. Empty means the doubling
    // schedule 1, 2, 4, ..., 2^(L-1); a 48-layer single stage with a
    // wrapping schedule is expressed by listing the dilations explicitly.
    std::vector<int> dilations;
    // Feed each stage's last trunk features to the next stage alongside the
    // probabilities. Off by default: refinement stages see probabilities
    // only.
    bool pass_features = false;

    int dilation_for(int layer) const {
        if (!dilations.empty()) return dilations.at(static_cast<std::size_t>(layer));
        if (layer >= 31) throw ConfigError("doubling dilation schedule overflows at layer " +
                                           std::to_string(layer));
        return 1 << layer;
    }

    // Channel width seen by stage s (0-based).
    int stage_input_dim(int stage) const {
        if (stage == 0) return input_dim;
        return num_classes + (pass_features ? num_filters : 0);
    }

    void validate() const {
        if (num_stages < 1) throw ConfigError("model: need at least one stage");
        if (num_layers < 1) throw ConfigError("model: need at least one layer per stage");
        if (num_filters < 1) throw ConfigError("model: filter count must be positive");
        if (num_classes < 2) throw ConfigError("model: need at least two classes");
        if (input_dim < 1) throw ConfigError("model: input dimension must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
        if (!dilations.empty() && dilations.size() != static_cast<std::size_t>(num_layers)) {
            throw ConfigError("model: dilation override must list one value per layer");
        }
        for (int d : dilations) {
            if (d < 1) throw ConfigError("model: dilations must be >= 1");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

/// One stage: input projection, L dilated residual layers, classifier head.
struct StageParams {
    Conv1x1Params input_proj;
    std::vector<DilatedResidualLayerParams> layers;
    ClassifierHeadParams head;
};

/// The full multi-stage network. Stage 0 consumes features; later stages
/// consume the previous stage's frame-wise probabilities.
struct ModelParams {
    ModelConfig config;
    std::vector<StageParams> stages;
};

namespace detail {

inline Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape), 0.0);
    double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

} // namespace detail

/// Fresh model with every tensor drawn uniformly from +-sqrt(1/fan_in).
inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    ModelParams m;
    m.config = config;
    std::size_t d = static_cast<std::size_t>(config.num_filters);
    std::size_t c = static_cast<std::size_t>(config.num_classes);
    for (int s = 0; s < config.num_stages; ++s) {
        StageParams stage;
        std::size_t in = static_cast<std::size_t>(config.stage_input_dim(s));
        stage.input_proj.w = detail::uniform_init({d, in}, in, rng);
        stage.input_proj.b = detail::uniform_init({d}, in, rng);
        for (int l = 0; l < config.num_layers; ++l) {
            DilatedResidualLayerParams layer;
            layer.w1 = detail::uniform_init({3, d, d}, 3 * d, rng);
            layer.b1 = detail::uniform_init({d}, 3 * d, rng);
            layer.w2 = detail::uniform_init({d, d}, d, rng);
            layer.b2 = detail::uniform_init({d}, d, rng);
            layer.dilation = config.dilation_for(l);
            stage.layers.push_back(std::move(layer));
        }
        stage.head.w = detail::uniform_init({c, d}, d, rng);
        stage.head.b = detail::uniform_init({c}, d, rng);
        m.stages.push_back(std::move(stage));
    }
    return m;
}

/// Same structure as `like`, all values zero. Used for gradients.
inline ModelParams zeros_like(const ModelParams& like) {
    ModelParams z;
    z.config = like.config;
    for (const StageParams& s : like.stages) {
        StageParams zs;
        zs.input_proj.w = Tensor::zeros(s.input_proj.w.shape);
        zs.input_proj.b = Tensor::zeros(s.input_proj.b.shape);
        for (const DilatedResidualLayerParams& l : s.layers) {
            DilatedResidualLayerParams zl;
            zl.w1 = Tensor::zeros(l.w1.shape);
            zl.b1 = Tensor::zeros(l.b1.shape);
            zl.w2 = Tensor::zeros(l.w2.shape);
            zl.b2 = Tensor::zeros(l.b2.shape);
            zl.dilation = l.dilation;
            zs.layers.push_back(std::move(zl));
        }
        zs.head.w = Tensor::zeros(s.head.w.shape);
        zs.head.b = Tensor::zeros(s.head.b.shape);
        z.stages.push_back(std::move(zs));
    }
    return z;
}

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

/// All learnable tensors in declaration order. The order is the contract
/// for the optimizer state and the checkpoint layout.
inline std::vector<NamedTensor> parameter_list(ModelParams& m) {
    std::vector<NamedTensor> out;
    for (std::size_t s = 0; s < m.stages.size(); ++s) {
        std::string prefix = "stage" + std::to_string(s + 1) + "/";
        StageParams& st = m.stages[s];
        out.push_back({prefix + "proj.w", &st.input_proj.w});
        out.push_back({prefix + "proj.b", &st.input_proj.b});
        for (std::size_t l = 0; l < st.layers.size(); ++l) {
            std::string lp = prefix + "layer" + std::to_string(l + 1) + "/";
            out.push_back({lp + "w1", &st.layers[l].w1});
            out.push_back({lp + "b1", &st.layers[l].b1});
            out.push_back({lp + "w2", &st.layers[l].w2});
            out.push_back({lp + "b2", &st.layers[l].b2});
        }
        out.push_back({prefix + "head.w", &st.head.w});
        out.push_back({prefix + "head.b", &st.head.b});
    }
    return out;
}

struct StageCache {
    Tensor input;
    Tensor projected;
    std::vector<ResidualLayerCache> layers;
    Tensor trunk; // output of the last residual layer
    HeadCache head;
};

struct StageForward {
    Tensor probs;
    StageCache cache;
};

/// Single-stage TCN: 1x1 input projection, L dilated residual layers,
/// classifier head. Every output column is a probability distribution.
inline StageForward ss_tcn_forward(const Tensor& features, const StageParams& stage,
                                   double dropout_rate, bool training, Rng& rng) {
    if (features.ndim() != 2 || features.rows() != stage.input_proj.w.cols()) {
        throw ShapeError("stage: feature dimension " + features.shape_str() +
                         " does not match projection " + stage.input_proj.w.shape_str());
    }
    StageForward r;
    r.cache.input = features;
    Tensor h = conv1x1_forward(features, stage.input_proj);
    r.cache.projected = h;
    for (const DilatedResidualLayerParams& layer : stage.layers) {
        ResidualLayerResult lr = dilated_residual_layer_forward(h, layer, dropout_rate, training, rng);
        r.cache.layers.push_back(std::move(lr.cache));
        h = std::move(lr.output);
    }
    r.cache.trunk = h;
    HeadResult head = classifier_head_forward(h, stage.head);
    r.probs = head.probs;
    r.cache.head = std::move(head.cache);
    return r;
}

inline StageForward ss_tcn_forward(const Tensor& features, const StageParams& stage,
                                   double dropout_rate, bool training, std::uint64_t seed) {
    Rng rng(seed);
    return ss_tcn_forward(features, stage, dropout_rate, training, rng);
}

struct StageGrads {
    Tensor input_grad;
    StageParams params;
};

/// Adjoint of one stage. `probs_grad` is the gradient on the stage's
/// softmax output; `trunk_extra_grad`, when non-empty, is an additional
/// gradient on the trunk output (used by the feature-passthrough mode).
inline StageGrads ss_tcn_backward(const StageParams& stage, const StageCache& cache,
                                  const Tensor& probs_grad, const Tensor& trunk_extra_grad) {
    HeadGrads hg = classifier_head_backward(stage.head, cache.head, probs_grad);
    Tensor h_grad = std::move(hg.input_grad);
    if (trunk_extra_grad.numel() > 0) {
        require_shape(trunk_extra_grad, h_grad, "trunk extra grad");
        for (std::size_t i = 0; i < h_grad.numel(); ++i) h_grad[i] += trunk_extra_grad[i];
    }

    StageGrads out;
    out.params.head.w = std::move(hg.w_grad);
    out.params.head.b = std::move(hg.b_grad);
    out.params.layers.resize(stage.layers.size());
    for (std::size_t l = stage.layers.size(); l-- > 0;) {
        ResidualLayerGrads lg = layer_backward(stage.layers[l], cache.layers[l], h_grad);
        out.params.layers[l] = std::move(lg.param_grads);
        h_grad = std::move(lg.input_grad);
    }
    Conv1x1Grads pg = conv1x1_backward(cache.input, stage.input_proj, h_grad);
    out.params.input_proj.w = std::move(pg.w_grad);
    out.params.input_proj.b = std::move(pg.b_grad);
    out.input_grad = std::move(pg.input_grad);
    return out;
}

struct ModelCache {
    std::vector<StageCache> stages;
};

struct ModelForward {
    std::vector<Tensor> stage_probs; // one (C, T) tensor per stage
    ModelCache cache;
};

namespace detail {

inline Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
    Tensor out({top.rows() + bottom.rows(), top.cols()}, 0.0);
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + top.data.size());
    return out;
}

} // namespace detail

/// Multi-stage forward pass. Stage 1 consumes the features; each further
/// stage consumes the previous stage's probabilities (plus, optionally, its
/// trunk features). Returns every stage's output so a loss can be attached
/// to each.
inline ModelForward ms_tcn_forward(const Tensor& features, const ModelParams& model,
                                   bool training, std::uint64_t seed) {
    if (model.stages.empty()) {
        throw ConfigError("model has no stages");
    }
    ModelForward r;
    Rng rng(mix_seed(seed, 0x64726f70ULL));
    Tensor stage_input = features;
    for (std::size_t s = 0; s < model.stages.size(); ++s) {
        StageForward sf =
            ss_tcn_forward(stage_input, model.stages[s], model.config.dropout, training, rng);
        if (s + 1 < model.stages.size()) {
            stage_input = model.config.pass_features
                              ? detail::stack_rows(sf.probs, sf.cache.trunk)
                              : sf.probs;
        }
        r.stage_probs.push_back(sf.probs);
        r.cache.stages.push_back(std::move(sf.cache));
    }
    return r;
}

/// Adjoint of ms_tcn_forward. Accumulates every stage's loss gradient;
/// parameters of stage s receive contributions from the losses of stages
/// s..S because later stages consume earlier outputs.
inline ModelParams ms_tcn_backward(const ModelParams& model, const ModelCache& cache,
                                   const std::vector<Tensor>& per_stage_loss_grads) {
    std::size_t n = model.stages.size();
    if (per_stage_loss_grads.size() != n || cache.stages.size() != n) {
        throw ShapeError("ms_tcn_backward: need one loss gradient per stage");
    }
    ModelParams grads = zeros_like(model);
    Tensor carry_probs;  // gradient flowing into stage s's probs from stage s+1
    Tensor carry_trunk;  // gradient flowing into stage s's trunk (passthrough mode)
    for (std::size_t s = n; s-- > 0;) {
        Tensor probs_grad = per_stage_loss_grads[s];
        require_shape(probs_grad, cache.stages[s].head.probs, "per-stage loss grad");
        if (carry_probs.numel() > 0) {
            for (std::size_t i = 0; i < probs_grad.numel(); ++i) probs_grad[i] += carry_probs[i];
        }
        StageGrads sg = ss_tcn_backward(model.stages[s], cache.stages[s], probs_grad, carry_trunk);
        grads.stages[s] = std::move(sg.params);
        if (s > 0) {
            std::size_t c = static_cast<std::size_t>(model.config.num_classes);
            std::size_t t_len = sg.input_grad.cols();
            if (model.config.pass_features) {
                carry_probs = Tensor({c, t_len}, 0.0);
                std::copy(sg.input_grad.data.begin(),
                          sg.input_grad.data.begin() + static_cast<std::ptrdiff_t>(c * t_len),
                          carry_probs.data.begin());
                carry_trunk = Tensor({sg.input_grad.rows() - c, t_len}, 0.0);
                std::copy(sg.input_grad.data.begin() + static_cast<std::ptrdiff_t>(c * t_len),
                          sg.input_grad.data.end(), carry_trunk.data.begin());
            } else {
                carry_probs = std::move(sg.input_grad);
                carry_trunk = Tensor();
            }
        }
    }
    return grads;
}

} // namespace mstcn
