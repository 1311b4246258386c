#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mstcn/data_io.hpp"
#include "mstcn/errors.hpp"
#include "mstcn/losses.hpp"
#include "mstcn/model.hpp"
#include "mstcn/optimizer.hpp"
#include "mstcn/rng.hpp"

namespace mstcn {

struct TrainSettings {
    LossConfig loss;
    AdamConfig adam;
    int epochs = 50;
    std::uint64_t seed = 1;
};

struct EpochStats {
    double loss = 0.0; // mean combined loss per video
    std::vector<StageLoss> per_stage;
};

struct TrainResult {
    ModelParams model;      // after the final epoch
    ModelParams best_model; // lowest mean epoch loss
    int best_epoch = 0;     // 1-based
    double best_loss = 0.0;
    AdamState adam;
    std::vector<EpochStats> history;
};

namespace detail {

inline std::string epoch_log_line(int epoch, int total_epochs, const EpochStats& s) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os << "epoch " << epoch << "/" << total_epochs << " loss " << std::setprecision(6) << s.loss;
    for (std::size_t i = 0; i < s.per_stage.size(); ++i) {
        os << " | stage" << (i + 1) << " cls " << s.per_stage[i].classification << " smooth "
           << s.per_stage[i].smoothing;
    }
    return os.str();
}

} // namespace detail

/// Conservative divergence check: one bad loss value aborts the run rather
/// than silently training on garbage.
inline void require_finite_loss(double value, int epoch, const std::string& video) {
    if (!std::isfinite(value)) {
        throw NumericError("non-finite loss (" + std::to_string(value) + ") at epoch " +
                           std::to_string(epoch) + ", video " + video);
    }
}

/// Full training loop: one video per step, Adam updates, deterministic
/// seeded shuffling. Every random draw derives from `settings.seed`, so two
/// runs with the same inputs produce bitwise-identical models.
inline TrainResult train_model(ModelParams model, const std::vector<SequenceSample>& data,
                               const TrainSettings& settings, std::ostream* log = nullptr) {
    if (data.empty()) throw DataError("training set is empty");
    if (settings.epochs < 1) throw ConfigError("training needs at least one epoch");
    settings.adam.validate();

    TrainResult result;
    AdamState adam = init_adam_state(model);
    std::size_t n_stages = model.stages.size();

    for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
        std::vector<std::size_t> order(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(settings.seed, 0x7368756666ULL, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        EpochStats stats;
        stats.per_stage.assign(n_stages, StageLoss{});
        for (std::size_t idx : order) {
            const SequenceSample& video = data[idx];
            std::uint64_t video_seed = mix_seed(settings.seed, static_cast<std::uint64_t>(epoch),
                                                static_cast<std::uint64_t>(idx));
            ModelForward fwd = ms_tcn_forward(video.features, model, true, video_seed);
            CombinedLoss loss = combined_loss(fwd.stage_probs, video.labels, settings.loss);
            require_finite_loss(loss.total, epoch, video.id);
            ModelParams grads = ms_tcn_backward(model, fwd.cache, loss.probs_grads);
            adam_step(model, grads, adam, settings.adam);

            stats.loss += loss.total;
            for (std::size_t s = 0; s < n_stages; ++s) {
                stats.per_stage[s].classification += loss.per_stage[s].classification;
                stats.per_stage[s].smoothing += loss.per_stage[s].smoothing;
            }
        }
        double n = static_cast<double>(data.size());
        stats.loss /= n;
        for (StageLoss& s : stats.per_stage) {
            s.classification /= n;
            s.smoothing /= n;
        }
        result.history.push_back(stats);
        if (log) (*log) << detail::epoch_log_line(epoch, settings.epochs, stats) << "\n";

        if (result.best_epoch == 0 || stats.loss < result.best_loss) {
            result.best_epoch = epoch;
            result.best_loss = stats.loss;
            result.best_model = model;
        }
    }
    result.model = std::move(model);
    result.adam = std::move(adam);
    return result;
}

/// Inference: final-stage argmax labels for one video.
inline std::vector<int> predict_labels(const ModelParams& model, const Tensor& features,
                                       std::size_t stage_index) {
    ModelForward fwd = ms_tcn_forward(features, model, false, 0);
    if (stage_index >= fwd.stage_probs.size()) {
        throw ConfigError("stage index " + std::to_string(stage_index + 1) + " out of range (" +
                          std::to_string(fwd.stage_probs.size()) + " stages)");
    }
    const Tensor& probs = fwd.stage_probs[stage_index];
    std::vector<int> labels(probs.cols());
    for (std::size_t t = 0; t < probs.cols(); ++t) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.rows(); ++c) {
            if (probs.at(c, t) > probs.at(best, t)) best = c;
        }
        labels[t] = static_cast<int>(best);
    }
    return labels;
}

inline std::vector<int> predict_labels(const ModelParams& model, const Tensor& features) {
    return predict_labels(model, features, model.stages.size() - 1);
}

} // namespace mstcn
