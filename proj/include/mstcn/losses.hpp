#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/layers.hpp"
#include "mstcn/tensor.hpp"

namespace mstcn {

enum class Smoothing { none, t_mse, kl };

inline std::string to_string(Smoothing s) {
    switch (s) {
        case Smoothing::none: return "none";
        case Smoothing::t_mse: return "t-mse";
        case Smoothing::kl: return "kl";
    }
    throw ConfigError("unknown smoothing kind");
}

inline Smoothing smoothing_from_string(const std::string& s) {
    if (s == "none") return Smoothing::none;
    if (s == "t-mse" || s == "tmse" || s == "t_mse") return Smoothing::t_mse;
    if (s == "kl") return Smoothing::kl;
    throw ConfigError("unknown smoothing kind '" + s + "' (expected none, t-mse or kl)");
}

struct LossConfig {
    Smoothing smoothing = Smoothing::t_mse;
    double lambda = 0.15;
    double tau = 4.0;
};

struct LossResult {
    double value = 0.0;
    Tensor probs_grad; // gradient with respect to the probability tensor
};

namespace detail {

inline double clamped(double p) { return p < kProbFloor ? kProbFloor : p; }

} // namespace detail

/// Mean negative log-likelihood of the labelled class per frame.
/// Probabilities below the floor contribute a finite penalty with zero
/// gradient, so collapsed columns cannot produce infinities.
inline LossResult cross_entropy_loss(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.ndim() != 2) throw ShapeError("cross entropy: probabilities must be 2-d");
    std::size_t c = probs.rows(), t_len = probs.cols();
    if (labels.size() != t_len) {
        throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(t_len) + " frames");
    }
    LossResult r;
    r.probs_grad = Tensor::zeros(probs.shape);
    double sum = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        int y = labels[t];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw DomainError("cross entropy: label " + std::to_string(y) + " at frame " +
                              std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
        }
        double p = probs.at(static_cast<std::size_t>(y), t);
        sum += -std::log(detail::clamped(p));
        if (p >= kProbFloor) {
            r.probs_grad.at(static_cast<std::size_t>(y), t) =
                -1.0 / (static_cast<double>(t_len) * p);
        }
    }
    r.value = sum / static_cast<double>(t_len);
    return r;
}

/// Truncated mean squared difference of successive log-probabilities.
/// The previous frame enters as a constant (stop-gradient), so only the
/// current frame's probabilities receive gradient. Differences beyond tau
/// are clipped to tau and carry no gradient.
inline LossResult truncated_mse_loss(const Tensor& probs, double tau) {
    if (probs.ndim() != 2) throw ShapeError("t-mse: probabilities must be 2-d");
    if (!(tau > 0.0)) throw DomainError("t-mse: tau must be positive");
    std::size_t c = probs.rows(), t_len = probs.cols();
    LossResult r;
    r.probs_grad = Tensor::zeros(probs.shape);
    if (t_len < 2) return r;
    double denom = static_cast<double>(t_len) * static_cast<double>(c);
    double sum = 0.0;
    for (std::size_t t = 1; t < t_len; ++t) {
        for (std::size_t i = 0; i < c; ++i) {
            double cur = detail::clamped(probs.at(i, t));
            double prev = detail::clamped(probs.at(i, t - 1));
            double d = std::log(cur) - std::log(prev);
            double mag = std::fabs(d);
            if (mag <= tau) {
                sum += d * d;
                if (probs.at(i, t) >= kProbFloor) {
                    r.probs_grad.at(i, t) += 2.0 * d / (denom * cur);
                }
            } else {
                sum += tau * tau;
            }
        }
    }
    r.value = sum / denom;
    return r;
}

/// KL-divergence smoothing variant: D(p_{t-1} || p_t) averaged over frames,
/// with the previous frame treated as a constant target.
inline LossResult kl_smoothing_loss(const Tensor& probs) {
    if (probs.ndim() != 2) throw ShapeError("kl smoothing: probabilities must be 2-d");
    std::size_t c = probs.rows(), t_len = probs.cols();
    LossResult r;
    r.probs_grad = Tensor::zeros(probs.shape);
    if (t_len < 2) return r;
    double sum = 0.0;
    for (std::size_t t = 1; t < t_len; ++t) {
        for (std::size_t i = 0; i < c; ++i) {
            double cur = detail::clamped(probs.at(i, t));
            double prev = detail::clamped(probs.at(i, t - 1));
            sum += prev * (std::log(prev) - std::log(cur));
            if (probs.at(i, t) >= kProbFloor) {
                r.probs_grad.at(i, t) += -prev / (static_cast<double>(t_len) * cur);
            }
        }
    }
    r.value = sum / static_cast<double>(t_len);
    return r;
}

inline LossResult smoothing_loss(const Tensor& probs, const LossConfig& config) {
    switch (config.smoothing) {
        case Smoothing::none: {
            LossResult r;
            r.probs_grad = Tensor::zeros(probs.shape);
            return r;
        }
        case Smoothing::t_mse: return truncated_mse_loss(probs, config.tau);
        case Smoothing::kl: return kl_smoothing_loss(probs);
    }
    throw ConfigError("unknown smoothing kind");
}

struct StageLoss {
    double classification = 0.0;
    double smoothing = 0.0;
    double total() const { return classification + smoothing; }
};

struct CombinedLoss {
    double total = 0.0;
    std::vector<StageLoss> per_stage; // smoothing entries already scaled by lambda
    std::vector<Tensor> probs_grads;  // one gradient per stage's probabilities
};

/// Training objective: sum over stages of cross-entropy plus
/// lambda-weighted smoothing.
inline CombinedLoss combined_loss(const std::vector<Tensor>& stage_probs,
                                  const std::vector<int>& labels, const LossConfig& config) {
    if (stage_probs.empty()) throw ShapeError("combined loss: no stage outputs");
    CombinedLoss out;
    for (const Tensor& probs : stage_probs) {
        LossResult ce = cross_entropy_loss(probs, labels);
        LossResult sm = smoothing_loss(probs, config);
        StageLoss sl;
        sl.classification = ce.value;
        sl.smoothing = config.lambda * sm.value;
        out.per_stage.push_back(sl);
        out.total += sl.total();
        Tensor g = std::move(ce.probs_grad);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += config.lambda * sm.probs_grad[i];
        out.probs_grads.push_back(std::move(g));
    }
    return out;
}

} // namespace mstcn
