#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/rng.hpp"
#include "mstcn/tensor.hpp"

namespace mstcn {

// Probabilities are clamped to this floor before any log is taken.
inline constexpr double kProbFloor = 1e-8;

/// Parameters of one dilated residual layer.
/// w1 is the 3-tap dilated kernel, indexed (tap, in, out) with taps at
/// offsets {-dilation, 0, +dilation}. w2/b2 form the 1x1 convolution on the
/// branch, indexed (out, in). Input and output widths match so the residual
/// addition is well defined.
struct DilatedResidualLayerParams {
    Tensor w1; // (3, D, D)
    Tensor b1; // (D)
    Tensor w2; // (D, D)
    Tensor b2; // (D)
    int dilation = 1;
};

/// 1x1 convolution, i.e. a per-frame linear map, indexed (out, in).
struct Conv1x1Params {
    Tensor w; // (out, in)
    Tensor b; // (out)
};

/// Per-frame linear classifier followed by a softmax over classes.
struct ClassifierHeadParams {
    Tensor w; // (C, D)
    Tensor b; // (C)
};

/// Receptive field, in frames, of layer l under the doubling dilation
/// schedule with kernel width 3: 2^(l+1) - 1.
inline std::int64_t receptive_field(int layer) {
    if (layer < 1) {
        throw DomainError("receptive_field: layer index must be >= 1");
    }
    if (layer > 62) {
        throw DomainError("receptive_field: layer index too large");
    }
    return (std::int64_t{1} << (layer + 1)) - 1;
}

/// Acausal dilated convolution with kernel width 3 and symmetric zero
/// padding of width `dilation`, so the output length equals the input
/// length:
///   out[o, t] = bias[o] + sum_k sum_i kernel[k+1, i, o] * in[i, t + k*d]
/// with k in {-1, 0, +1} and out-of-range input frames read as zero.
inline Tensor dilated_conv1d_forward(const Tensor& input, const Tensor& kernel,
                                     const Tensor& bias, int dilation) {
    if (input.ndim() != 2) {
        throw ShapeError("dilated_conv1d: input must be (channels, time)");
    }
    if (kernel.ndim() != 3 || kernel.shape[0] != 3 || kernel.shape[1] != input.rows()) {
        throw ShapeError("dilated_conv1d: kernel must be (3, in, out) with in = " +
                         std::to_string(input.rows()) + ", got " + kernel.shape_str());
    }
    std::size_t d_in = input.rows();
    std::size_t d_out = kernel.shape[2];
    std::size_t t_len = input.cols();
    if (bias.ndim() != 1 || bias.shape[0] != d_out) {
        throw ShapeError("dilated_conv1d: bias shape mismatch");
    }
    if (dilation < 1) {
        throw DomainError("dilated_conv1d: dilation must be >= 1");
    }
    std::size_t d = static_cast<std::size_t>(dilation);

    Tensor out({d_out, t_len}, 0.0);
    for (std::size_t o = 0; o < d_out; ++o) {
        double* row = out.data.data() + o * t_len;
        std::fill(row, row + t_len, bias[o]);
    }
    for (int k = -1; k <= 1; ++k) {
        // Output positions t with t + k*d inside [0, T).
        std::size_t t0 = (k < 0) ? std::min(d, t_len) : 0;
        std::size_t t1 = (k > 0) ? (t_len > d ? t_len - d : 0) : t_len;
        if (t0 >= t1) continue;
        for (std::size_t i = 0; i < d_in; ++i) {
            const double* in_row = input.data.data() + i * t_len;
            for (std::size_t o = 0; o < d_out; ++o) {
                double w = kernel.at(static_cast<std::size_t>(k + 1), i, o);
                if (w == 0.0) continue;
                double* out_row = out.data.data() + o * t_len;
                const double* src = in_row + static_cast<std::ptrdiff_t>(k) * static_cast<std::ptrdiff_t>(d);
                for (std::size_t t = t0; t < t1; ++t) {
                    out_row[t] += w * src[t];
                }
            }
        }
    }
    return out;
}

struct DilatedConvGrads {
    Tensor input_grad;  // (D_in, T)
    Tensor kernel_grad; // (3, D_in, D_out)
    Tensor bias_grad;   // (D_out)
};

/// Adjoint of dilated_conv1d_forward.
inline DilatedConvGrads dilated_conv1d_backward(const Tensor& input, const Tensor& kernel,
                                                int dilation, const Tensor& upstream) {
    std::size_t d_in = input.rows();
    std::size_t d_out = kernel.shape[2];
    std::size_t t_len = input.cols();
    if (upstream.ndim() != 2 || upstream.rows() != d_out || upstream.cols() != t_len) {
        throw ShapeError("dilated_conv1d_backward: upstream shape mismatch");
    }
    std::size_t d = static_cast<std::size_t>(dilation);

    DilatedConvGrads g{Tensor::zeros(input.shape), Tensor::zeros(kernel.shape),
                       Tensor::zeros({d_out})};
    for (std::size_t o = 0; o < d_out; ++o) {
        const double* up_row = upstream.data.data() + o * t_len;
        double s = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) s += up_row[t];
        g.bias_grad[o] = s;
    }
    for (int k = -1; k <= 1; ++k) {
        std::size_t t0 = (k < 0) ? std::min(d, t_len) : 0;
        std::size_t t1 = (k > 0) ? (t_len > d ? t_len - d : 0) : t_len;
        if (t0 >= t1) continue;
        for (std::size_t i = 0; i < d_in; ++i) {
            const double* in_row = input.data.data() + i * t_len;
            double* gin_row = g.input_grad.data.data() + i * t_len;
            for (std::size_t o = 0; o < d_out; ++o) {
                const double* up_row = upstream.data.data() + o * t_len;
                double w = kernel.at(static_cast<std::size_t>(k + 1), i, o);
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) * static_cast<std::ptrdiff_t>(d);
                double wsum = 0.0;
                for (std::size_t t = t0; t < t1; ++t) {
                    wsum += up_row[t] * in_row[t + off];
                    gin_row[t + off] += w * up_row[t];
                }
                g.kernel_grad.at(static_cast<std::size_t>(k + 1), i, o) = wsum;
            }
        }
    }
    return g;
}

inline Tensor conv1x1_forward(const Tensor& input, const Conv1x1Params& p) {
    if (input.ndim() != 2) {
        throw ShapeError("conv1x1: input must be (channels, time)");
    }
    std::size_t d_out = p.w.rows();
    std::size_t d_in = p.w.cols();
    std::size_t t_len = input.cols();
    if (input.rows() != d_in) {
        throw ShapeError("conv1x1: input has " + std::to_string(input.rows()) +
                         " channels, weight expects " + std::to_string(d_in));
    }
    if (p.b.numel() != d_out) {
        throw ShapeError("conv1x1: bias shape mismatch");
    }
    Tensor out({d_out, t_len}, 0.0);
    for (std::size_t o = 0; o < d_out; ++o) {
        double* out_row = out.data.data() + o * t_len;
        std::fill(out_row, out_row + t_len, p.b[o]);
        for (std::size_t i = 0; i < d_in; ++i) {
            double w = p.w.at(o, i);
            if (w == 0.0) continue;
            const double* in_row = input.data.data() + i * t_len;
            for (std::size_t t = 0; t < t_len; ++t) {
                out_row[t] += w * in_row[t];
            }
        }
    }
    return out;
}

struct Conv1x1Grads {
    Tensor input_grad;
    Tensor w_grad;
    Tensor b_grad;
};

inline Conv1x1Grads conv1x1_backward(const Tensor& input, const Conv1x1Params& p,
                                     const Tensor& upstream) {
    std::size_t d_out = p.w.rows();
    std::size_t d_in = p.w.cols();
    std::size_t t_len = input.cols();
    if (upstream.ndim() != 2 || upstream.rows() != d_out || upstream.cols() != t_len) {
        throw ShapeError("conv1x1_backward: upstream shape mismatch");
    }
    Conv1x1Grads g{Tensor::zeros(input.shape), Tensor::zeros(p.w.shape), Tensor::zeros(p.b.shape)};
    for (std::size_t o = 0; o < d_out; ++o) {
        const double* up_row = upstream.data.data() + o * t_len;
        double s = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) s += up_row[t];
        g.b_grad[o] = s;
        for (std::size_t i = 0; i < d_in; ++i) {
            const double* in_row = input.data.data() + i * t_len;
            double* gin_row = g.input_grad.data.data() + i * t_len;
            double w = p.w.at(o, i);
            double wsum = 0.0;
            for (std::size_t t = 0; t < t_len; ++t) {
                wsum += up_row[t] * in_row[t];
                gin_row[t] += w * up_row[t];
            }
            g.w_grad.at(o, i) = wsum;
        }
    }
    return g;
}

/// Everything layer_backward needs to replay the forward computation.
struct ResidualLayerCache {
    Tensor input;    // (D, T)
    Tensor pre_act;  // conv output before ReLU
    Tensor branch;   // ReLU output after dropout, input of the 1x1 conv
    Tensor mask;     // dropout keep/scale factors; empty when dropout was off
};

struct ResidualLayerResult {
    Tensor output;
    ResidualLayerCache cache;
};

/// One dilated residual layer:
///   branch = dropout(ReLU(dilated_conv(x)));  out = x + conv1x1(branch).
/// Dropout is inverted (surviving activations scaled by 1/keep) and only
/// applied when training is set.
inline ResidualLayerResult dilated_residual_layer_forward(const Tensor& input,
                                                          const DilatedResidualLayerParams& params,
                                                          double dropout_rate, bool training,
                                                          Rng& rng) {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw DomainError("dropout rate must be in [0, 1)");
    }
    ResidualLayerResult r;
    r.cache.input = input;
    r.cache.pre_act = dilated_conv1d_forward(input, params.w1, params.b1, params.dilation);
    if (r.cache.pre_act.rows() != input.rows()) {
        throw ShapeError("residual layer: branch width differs from input width");
    }

    Tensor branch = r.cache.pre_act;
    for (double& v : branch.data) v = v > 0.0 ? v : 0.0;

    if (training && dropout_rate > 0.0) {
        double keep = 1.0 - dropout_rate;
        double scale = 1.0 / keep;
        r.cache.mask = Tensor::zeros(branch.shape);
        for (std::size_t i = 0; i < branch.numel(); ++i) {
            double m = rng.bernoulli(keep) ? scale : 0.0;
            r.cache.mask[i] = m;
            branch[i] *= m;
        }
    }
    r.cache.branch = branch;

    Conv1x1Params p2{params.w2, params.b2};
    r.output = conv1x1_forward(branch, p2);
    require_shape(r.output, input, "residual layer output");
    for (std::size_t i = 0; i < r.output.numel(); ++i) {
        r.output[i] += input[i];
    }
    return r;
}

inline ResidualLayerResult dilated_residual_layer_forward(const Tensor& input,
                                                          const DilatedResidualLayerParams& params,
                                                          double dropout_rate, bool training,
                                                          std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    return dilated_residual_layer_forward(input, params, dropout_rate, training, rng);
}

struct ResidualLayerGrads {
    Tensor input_grad;
    DilatedResidualLayerParams param_grads;
};

/// Exact adjoint of dilated_residual_layer_forward, replaying the dropout
/// mask from the cache. ReLU uses subgradient 0 at exactly zero.
inline ResidualLayerGrads layer_backward(const DilatedResidualLayerParams& params,
                                         const ResidualLayerCache& cache,
                                         const Tensor& upstream) {
    require_shape(upstream, cache.input, "layer_backward upstream");

    Conv1x1Params p2{params.w2, params.b2};
    Conv1x1Grads g2 = conv1x1_backward(cache.branch, p2, upstream);

    Tensor branch_grad = std::move(g2.input_grad);
    if (cache.mask.numel() > 0) {
        for (std::size_t i = 0; i < branch_grad.numel(); ++i) {
            branch_grad[i] *= cache.mask[i];
        }
    }
    for (std::size_t i = 0; i < branch_grad.numel(); ++i) {
        if (!(cache.pre_act[i] > 0.0)) branch_grad[i] = 0.0;
    }

    DilatedConvGrads g1 =
        dilated_conv1d_backward(cache.input, params.w1, params.dilation, branch_grad);

    ResidualLayerGrads out;
    out.input_grad = std::move(g1.input_grad);
    for (std::size_t i = 0; i < out.input_grad.numel(); ++i) {
        out.input_grad[i] += upstream[i]; // residual path
    }
    out.param_grads.w1 = std::move(g1.kernel_grad);
    out.param_grads.b1 = std::move(g1.bias_grad);
    out.param_grads.w2 = std::move(g2.w_grad);
    out.param_grads.b2 = std::move(g2.b_grad);
    out.param_grads.dilation = params.dilation;
    return out;
}

/// Column-wise softmax with the usual max-shift for stability. Each output
/// column sums to 1.
inline Tensor softmax_columns(const Tensor& logits) {
    Tensor probs = logits;
    std::size_t c_len = logits.rows();
    std::size_t t_len = logits.cols();
    for (std::size_t t = 0; t < t_len; ++t) {
        double hi = probs.at(0, t);
        for (std::size_t c = 1; c < c_len; ++c) hi = std::max(hi, probs.at(c, t));
        double sum = 0.0;
        for (std::size_t c = 0; c < c_len; ++c) {
            double e = std::exp(probs.at(c, t) - hi);
            probs.at(c, t) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < c_len; ++c) probs.at(c, t) /= sum;
    }
    return probs;
}

struct HeadCache {
    Tensor input; // (D, T)
    Tensor probs; // (C, T)
};

struct HeadResult {
    Tensor probs;
    HeadCache cache;
};

/// Classifier head: per-frame linear map followed by softmax over classes.
inline HeadResult classifier_head_forward(const Tensor& h, const ClassifierHeadParams& params) {
    Conv1x1Params p{params.w, params.b};
    Tensor logits = conv1x1_forward(h, p);
    HeadResult r;
    r.probs = softmax_columns(logits);
    r.cache.input = h;
    r.cache.probs = r.probs;
    return r;
}

struct HeadGrads {
    Tensor input_grad;
    Tensor w_grad;
    Tensor b_grad;
};

/// Adjoint of the head. `probs_grad` is the gradient with respect to the
/// softmax output; the softmax Jacobian folds it back onto the logits.
inline HeadGrads classifier_head_backward(const ClassifierHeadParams& params,
                                          const HeadCache& cache, const Tensor& probs_grad) {
    require_shape(probs_grad, cache.probs, "classifier_head_backward");
    std::size_t c_len = cache.probs.rows();
    std::size_t t_len = cache.probs.cols();

    Tensor logits_grad({c_len, t_len}, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        double dot = 0.0;
        for (std::size_t c = 0; c < c_len; ++c) {
            dot += probs_grad.at(c, t) * cache.probs.at(c, t);
        }
        for (std::size_t c = 0; c < c_len; ++c) {
            logits_grad.at(c, t) = cache.probs.at(c, t) * (probs_grad.at(c, t) - dot);
        }
    }

    Conv1x1Params p{params.w, params.b};
    Conv1x1Grads g = conv1x1_backward(cache.input, p, logits_grad);
    return HeadGrads{std::move(g.input_grad), std::move(g.w_grad), std::move(g.b_grad)};
}

} // namespace mstcn
