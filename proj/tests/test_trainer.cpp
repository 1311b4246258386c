#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "mstcn/data_io.hpp"
#include "mstcn/errors.hpp"
#include "mstcn/losses.hpp"
#include "mstcn/model.hpp"
#include "mstcn/trainer.hpp"

using namespace mstcn;

namespace {

std::vector<SequenceSample> tiny_dataset(int classes, int dim, int videos,
                                         std::uint64_t seed) {
    SynthConfig cfg;
    cfg.num_classes = classes;
    cfg.feature_dim = dim;
    cfg.num_videos = videos;
    cfg.mean_video_length = 60.0;
    cfg.transitions = uniform_transitions(classes);
    cfg.duration_mean.assign(static_cast<std::size_t>(classes), 10.0);
    cfg.duration_std.assign(static_cast<std::size_t>(classes), 2.0);
    cfg.class_means = random_class_means(classes, dim, 3.0, seed);
    cfg.noise_std = 0.8;
    cfg.seed = seed;
    return generate_synthetic(cfg).samples;
}

ModelConfig tiny_model(int classes, int dim) {
    ModelConfig cfg;
    cfg.num_stages = 2;
    cfg.num_layers = 3;
    cfg.num_filters = 8;
    cfg.num_classes = classes;
    cfg.input_dim = dim;
    return cfg;
}

TrainSettings fast_settings(int epochs, std::uint64_t seed) {
    TrainSettings s;
    s.epochs = epochs;
    s.seed = seed;
    s.adam.lr = 0.005; // small data, few epochs: move fast
    return s;
}

std::vector<double> flatten(ModelParams& m) {
    std::vector<double> out;
    for (NamedTensor nt : parameter_list(m)) {
        out.insert(out.end(), nt.tensor->data.begin(), nt.tensor->data.end());
    }
    return out;
}

} // namespace

TEST_CASE("training reduces the mean loss on a learnable dataset") {
    std::vector<SequenceSample> data = tiny_dataset(3, 6, 5, 400);
    ModelParams model = init_model(tiny_model(3, 6), 401);
    std::ostringstream log;
    TrainResult r = train_model(model, data, fast_settings(4, 402), &log);

    REQUIRE(r.history.size() == 4);
    REQUIRE(r.history.back().loss < r.history.front().loss);
    REQUIRE(r.best_loss <= r.history.front().loss);
    // log mirrors every epoch with the stage decomposition
    std::string text = log.str();
    REQUIRE(text.find("epoch 1/4") != std::string::npos);
    REQUIRE(text.find("epoch 4/4") != std::string::npos);
    REQUIRE(text.find("stage1") != std::string::npos);
    REQUIRE(text.find("stage2") != std::string::npos);
}

TEST_CASE("best checkpoint tracks the lowest epoch loss") {
    std::vector<SequenceSample> data = tiny_dataset(3, 5, 4, 500);
    ModelParams model = init_model(tiny_model(3, 5), 501);
    TrainResult r = train_model(model, data, fast_settings(5, 502), nullptr);
    double min_loss = std::numeric_limits<double>::infinity();
    int min_epoch = 0;
    for (std::size_t e = 0; e < r.history.size(); ++e) {
        if (r.history[e].loss < min_loss) {
            min_loss = r.history[e].loss;
            min_epoch = static_cast<int>(e) + 1;
        }
    }
    REQUIRE(r.best_loss == min_loss);
    REQUIRE(r.best_epoch == min_epoch);
}

TEST_CASE("loss decomposition: lambda zero removes the smoothing term") {
    std::vector<SequenceSample> data = tiny_dataset(3, 5, 3, 600);
    ModelParams model = init_model(tiny_model(3, 5), 601);

    TrainSettings plain = fast_settings(2, 602);
    plain.loss.lambda = 0.0;
    TrainResult r = train_model(model, data, plain, nullptr);
    for (const EpochStats& e : r.history) {
        double cls_total = 0.0;
        for (const StageLoss& s : e.per_stage) {
            REQUIRE(s.smoothing == 0.0);
            cls_total += s.classification;
        }
        REQUIRE(e.loss == Catch::Approx(cls_total).margin(1e-9));
    }

    TrainSettings smooth = fast_settings(2, 602);
    smooth.loss.lambda = 0.15;
    TrainResult r2 = train_model(model, data, smooth, nullptr);
    for (const EpochStats& e : r2.history) {
        double total = 0.0;
        for (const StageLoss& s : e.per_stage) {
            REQUIRE(s.smoothing > 0.0);
            total += s.classification + s.smoothing;
        }
        REQUIRE(e.loss == Catch::Approx(total).margin(1e-9));
    }
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    std::vector<SequenceSample> data = tiny_dataset(3, 5, 4, 700);
    ModelParams m1 = init_model(tiny_model(3, 5), 701);
    ModelParams m2 = init_model(tiny_model(3, 5), 701);
    TrainResult r1 = train_model(m1, data, fast_settings(3, 702), nullptr);
    TrainResult r2 = train_model(m2, data, fast_settings(3, 702), nullptr);
    REQUIRE(flatten(r1.model) == flatten(r2.model));
    REQUIRE(flatten(r1.best_model) == flatten(r2.best_model));
    for (std::size_t e = 0; e < r1.history.size(); ++e) {
        REQUIRE(r1.history[e].loss == r2.history[e].loss);
    }

    ModelParams m3 = init_model(tiny_model(3, 5), 701);
    TrainResult r3 = train_model(m3, data, fast_settings(3, 703), nullptr);
    REQUIRE(flatten(r1.model) != flatten(r3.model));
}

TEST_CASE("non-finite losses abort with a clear error") {
    std::vector<SequenceSample> data = tiny_dataset(3, 5, 2, 800);
    ModelParams model = init_model(tiny_model(3, 5), 801);
    model.stages[1].head.b[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(train_model(model, data, fast_settings(1, 802), nullptr), NumericError);
}

TEST_CASE("rejects empty data and nonsensical settings") {
    ModelParams model = init_model(tiny_model(3, 5), 900);
    REQUIRE_THROWS_AS(train_model(model, {}, fast_settings(1, 1), nullptr), DataError);
    std::vector<SequenceSample> data = tiny_dataset(3, 5, 1, 901);
    TrainSettings s = fast_settings(0, 1);
    REQUIRE_THROWS_AS(train_model(model, data, s, nullptr), ConfigError);
}

TEST_CASE("prediction returns one argmax label per frame") {
    std::vector<SequenceSample> data = tiny_dataset(3, 5, 3, 1000);
    ModelParams model = init_model(tiny_model(3, 5), 1001);
    TrainResult r = train_model(model, data, fast_settings(3, 1002), nullptr);

    const SequenceSample& v = data.front();
    std::vector<int> pred = predict_labels(r.model, v.features);
    REQUIRE(pred.size() == v.labels.size());
    for (int y : pred) {
        REQUIRE(y >= 0);
        REQUIRE(y < 3);
    }
    // prediction is deterministic (inference mode ignores dropout)
    REQUIRE(predict_labels(r.model, v.features) == pred);
    // the labels match a hand argmax over the final stage probabilities
    ModelForward fwd = ms_tcn_forward(v.features, r.model, false, 0);
    const Tensor& probs = fwd.stage_probs.back();
    for (std::size_t t = 0; t < probs.cols(); ++t) {
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            REQUIRE(probs.at(static_cast<std::size_t>(pred[t]), t) >= probs.at(i, t));
        }
    }
    // per-stage access works and rejects out-of-range stages
    std::vector<int> s1 = predict_labels(r.model, v.features, 0);
    REQUIRE(s1.size() == v.labels.size());
    REQUIRE_THROWS_AS(predict_labels(r.model, v.features, 2), ConfigError);
}

TEST_CASE("a few epochs lift accuracy well above chance") {
    std::vector<SequenceSample> data = tiny_dataset(3, 6, 6, 1100);
    ModelParams model = init_model(tiny_model(3, 6), 1101);
    TrainResult r = train_model(model, data, fast_settings(8, 1102), nullptr);
    std::size_t hits = 0, total = 0;
    for (const SequenceSample& v : data) {
        std::vector<int> pred = predict_labels(r.best_model, v.features);
        for (std::size_t t = 0; t < pred.size(); ++t) {
            hits += pred[t] == v.labels[t] ? 1 : 0;
        }
        total += pred.size();
    }
    double acc = 100.0 * static_cast<double>(hits) / static_cast<double>(total);
    INFO("train accuracy " << acc);
    REQUIRE(acc > 55.0); // chance is 33%
}
