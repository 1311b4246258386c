#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/finite_diff.hpp"
#include "mstcn/losses.hpp"
#include "mstcn/model.hpp"
#include "mstcn/rng.hpp"
#include "mstcn/tensor.hpp"

// Finite-difference verification of the full training gradient. The
// smoothing losses treat the previous frame as a constant, so the numeric
// oracle evaluates a frozen-reference objective: previous-frame operands
// are pinned to the unperturbed forward pass. At the base point the two
// objectives coincide, and the frozen objective's true derivative equals
// the training gradient. The objective below is written out long-hand, on
// purpose, so it shares no code with the loss implementations it checks.

namespace mstcn {

struct GradcheckEntry {
    std::string name;
    double rel_error = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double max_rel_error = 0.0;
    std::string worst_tensor;
    double tolerance = 1e-4;
    bool pass = false;
};

namespace detail {

inline double floored(double p) { return p < kProbFloor ? kProbFloor : p; }

/// Training objective with frozen previous-frame smoothing operands.
inline double frozen_objective(const std::vector<Tensor>& stage_probs,
                               const std::vector<Tensor>& base_probs,
                               const std::vector<int>& labels, const LossConfig& config) {
    double total = 0.0;
    for (std::size_t s = 0; s < stage_probs.size(); ++s) {
        const Tensor& p = stage_probs[s];
        const Tensor& base = base_probs[s];
        std::size_t c = p.rows(), t_len = p.cols();
        double ce = 0.0;
        for (std::size_t t = 0; t < t_len; ++t) {
            ce -= std::log(floored(p.at(static_cast<std::size_t>(labels[t]), t)));
        }
        total += ce / static_cast<double>(t_len);
        if (config.smoothing == Smoothing::t_mse && t_len >= 2) {
            double sum = 0.0;
            for (std::size_t t = 1; t < t_len; ++t) {
                for (std::size_t i = 0; i < c; ++i) {
                    double d = std::log(floored(p.at(i, t))) - std::log(floored(base.at(i, t - 1)));
                    double m = std::min(std::fabs(d), config.tau);
                    sum += m * m;
                }
            }
            total += config.lambda * sum / (static_cast<double>(t_len) * static_cast<double>(c));
        } else if (config.smoothing == Smoothing::kl && t_len >= 2) {
            double sum = 0.0;
            for (std::size_t t = 1; t < t_len; ++t) {
                for (std::size_t i = 0; i < c; ++i) {
                    double prev = floored(base.at(i, t - 1));
                    sum += prev * (std::log(prev) - std::log(floored(p.at(i, t))));
                }
            }
            total += config.lambda * sum / static_cast<double>(t_len);
        }
    }
    return total;
}

} // namespace detail

/// Per-tensor relative error between two gradient sets with identical
/// layout. Exposed separately so tests can feed it corrupted gradients and
/// confirm the offending tensor gets named.
inline std::vector<GradcheckEntry> compare_gradients(ModelParams& analytic, ModelParams& numeric) {
    std::vector<NamedTensor> a = parameter_list(analytic);
    std::vector<NamedTensor> n = parameter_list(numeric);
    if (a.size() != n.size()) throw ShapeError("gradient layouts disagree");
    std::vector<GradcheckEntry> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.push_back({a[i].name, gradient_rel_error(*a[i].tensor, *n[i].tensor)});
    }
    return out;
}

/// Build a seeded model on random data, compute the analytic training
/// gradient, and verify every parameter tensor against central differences
/// of the frozen-reference objective.
inline GradcheckReport run_gradcheck(const ModelConfig& model_config, const LossConfig& loss_config,
                                     std::size_t time_steps, std::uint64_t seed, double eps = 1e-5,
                                     double tolerance = 1e-4) {
    model_config.validate();
    if (time_steps == 0) throw DomainError("gradcheck: need at least one frame");

    ModelParams model = init_model(model_config, mix_seed(seed, 0x6d6f64ULL));
    Rng data_rng(mix_seed(seed, 0x64617461ULL));
    Tensor features({static_cast<std::size_t>(model_config.input_dim), time_steps}, 0.0);
    for (double& v : features.data) v = data_rng.normal();
    std::vector<int> labels(time_steps);
    for (int& y : labels) y = static_cast<int>(data_rng.below(static_cast<std::uint64_t>(model_config.num_classes)));

    std::uint64_t forward_seed = mix_seed(seed, 0x666f7277ULL);
    ModelForward base = ms_tcn_forward(features, model, true, forward_seed);
    CombinedLoss loss = combined_loss(base.stage_probs, labels, loss_config);
    ModelParams analytic = ms_tcn_backward(model, base.cache, loss.probs_grads);

    auto objective = [&](ModelParams& candidate) {
        ModelForward fwd = ms_tcn_forward(features, candidate, true, forward_seed);
        return detail::frozen_objective(fwd.stage_probs, base.stage_probs, labels, loss_config);
    };

    ModelParams numeric = zeros_like(model);
    std::vector<NamedTensor> params = parameter_list(model);
    std::vector<NamedTensor> numeric_slots = parameter_list(numeric);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& theta = *params[i].tensor;
        Tensor& slot = *numeric_slots[i].tensor;
        for (std::size_t j = 0; j < theta.numel(); ++j) {
            double saved = theta[j];
            theta[j] = saved + eps;
            double up = objective(model);
            theta[j] = saved - eps;
            double down = objective(model);
            theta[j] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("gradcheck: non-finite objective at " + params[i].name);
            }
            slot[j] = (up - down) / (2.0 * eps);
        }
    }

    GradcheckReport report;
    report.tolerance = tolerance;
    report.entries = compare_gradients(analytic, numeric);
    for (const GradcheckEntry& e : report.entries) {
        if (e.rel_error > report.max_rel_error) {
            report.max_rel_error = e.rel_error;
            report.worst_tensor = e.name;
        }
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

inline std::string gradcheck_report_text(const GradcheckReport& r) {
    std::ostringstream os;
    os.setf(std::ios::scientific);
    os.precision(3);
    for (const GradcheckEntry& e : r.entries) {
        os << std::left << std::setw(28) << e.name << " rel_error " << e.rel_error << "\n";
    }
    os << "max rel_error " << r.max_rel_error;
    if (!r.worst_tensor.empty()) os << " (" << r.worst_tensor << ")";
    os << ", tolerance " << r.tolerance << ": " << (r.pass ? "PASS" : "FAIL") << "\n";
    return os.str();
}

} // namespace mstcn
