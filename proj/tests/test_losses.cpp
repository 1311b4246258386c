#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/finite_diff.hpp"
#include "mstcn/losses.hpp"
#include "mstcn/rng.hpp"

using namespace mstcn;

namespace {

Tensor columns(std::vector<std::vector<double>> cols) {
    std::size_t c = cols.at(0).size(), t_len = cols.size();
    Tensor out({c, t_len}, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t i = 0; i < c; ++i) out.at(i, t) = cols[t][i];
    }
    return out;
}

Tensor random_prob_columns(std::size_t c, std::size_t t_len, Rng& rng) {
    Tensor out({c, t_len}, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        double sum = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            out.at(i, t) = -std::log(1.0 - rng.uniform()); // exponential
            sum += out.at(i, t);
        }
        for (std::size_t i = 0; i < c; ++i) out.at(i, t) /= sum;
    }
    return out;
}

// Frozen-reference value of the truncated smoothing term: the t-1 operand
// of every pair is taken from `base`, so central differences of this
// function reproduce the stop-gradient training gradient.
double frozen_tmse(const Tensor& probs, const Tensor& base, double tau) {
    std::size_t c = probs.rows(), t_len = probs.cols();
    auto clamp = [](double p) { return p < 1e-8 ? 1e-8 : p; };
    double sum = 0.0;
    for (std::size_t t = 1; t < t_len; ++t) {
        for (std::size_t i = 0; i < c; ++i) {
            double d = std::log(clamp(probs.at(i, t))) - std::log(clamp(base.at(i, t - 1)));
            double m = std::min(std::fabs(d), tau);
            sum += m * m;
        }
    }
    return sum / (static_cast<double>(t_len) * static_cast<double>(c));
}

double frozen_kl(const Tensor& probs, const Tensor& base) {
    std::size_t c = probs.rows(), t_len = probs.cols();
    auto clamp = [](double p) { return p < 1e-8 ? 1e-8 : p; };
    double sum = 0.0;
    for (std::size_t t = 1; t < t_len; ++t) {
        for (std::size_t i = 0; i < c; ++i) {
            double prev = clamp(base.at(i, t - 1));
            sum += prev * (std::log(prev) - std::log(clamp(probs.at(i, t))));
        }
    }
    return sum / static_cast<double>(t_len);
}

} // namespace

TEST_CASE("cross entropy: perfect prediction is (near) zero") {
    Tensor probs = columns({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}});
    LossResult r = cross_entropy_loss(probs, {0, 1, 0});
    REQUIRE(r.value == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("cross entropy: uniform probabilities give ln C") {
    Tensor probs({3, 4}, 1.0 / 3.0);
    LossResult r = cross_entropy_loss(probs, {0, 2, 1, 1});
    REQUIRE(r.value == Catch::Approx(std::log(3.0)).margin(1e-12));
}

TEST_CASE("cross entropy: hand-evaluated two-frame example") {
    Tensor probs = columns({{0.5, 0.25, 0.25}, {0.1, 0.6, 0.3}});
    LossResult r = cross_entropy_loss(probs, {0, 2});
    REQUIRE(r.value == Catch::Approx(0.9485599924429406).margin(1e-12));
    // gradient: -1/(T p) at the labelled entry, zero elsewhere
    REQUIRE(r.probs_grad.at(0, 0) == Catch::Approx(-1.0 / (2.0 * 0.5)).margin(1e-12));
    REQUIRE(r.probs_grad.at(2, 1) == Catch::Approx(-1.0 / (2.0 * 0.3)).margin(1e-12));
    REQUIRE(r.probs_grad.at(1, 0) == 0.0);
    REQUIRE(r.probs_grad.at(0, 1) == 0.0);
}

TEST_CASE("cross entropy: gradient matches plain finite differences") {
    Rng rng(5);
    Tensor probs = random_prob_columns(4, 6, rng);
    std::vector<int> labels = {1, 3, 0, 2, 2, 1};
    LossResult r = cross_entropy_loss(probs, labels);
    Tensor fd = finite_diff_grad(
        [&](const Tensor& p) { return cross_entropy_loss(p, labels).value; }, probs);
    REQUIRE(gradient_rel_error(r.probs_grad, fd) < 1e-6);
}

TEST_CASE("cross entropy: validation errors") {
    Tensor probs({2, 3}, 0.5);
    REQUIRE_THROWS_AS(cross_entropy_loss(probs, {0, 1}), ShapeError);
    REQUIRE_THROWS_AS(cross_entropy_loss(probs, {0, 1, 2}), DomainError);
    REQUIRE_THROWS_AS(cross_entropy_loss(probs, {0, -1, 1}), DomainError);
}

TEST_CASE("t-mse: constant sequence has zero loss and gradient") {
    Tensor probs = columns({{0.7, 0.3}, {0.7, 0.3}, {0.7, 0.3}});
    LossResult r = truncated_mse_loss(probs, 4.0);
    REQUIRE(r.value == 0.0);
    for (double v : r.probs_grad.data) REQUIRE(v == 0.0);
}

TEST_CASE("t-mse: truncation caps each pair at tau^2 with zero gradient") {
    // both channels jump by more than tau in log space
    double tau = 0.1;
    Tensor probs = columns({{0.2, 0.8}, {0.2 * std::exp(1.0), 1.0 - 0.2 * std::exp(1.0)}});
    LossResult r = truncated_mse_loss(probs, tau);
    // two truncated terms, each tau^2, normalized by T*C = 4
    REQUIRE(r.value == Catch::Approx(2.0 * tau * tau / 4.0).margin(1e-12));
    for (double v : r.probs_grad.data) REQUIRE(v == 0.0);
}

TEST_CASE("t-mse: loss never exceeds tau^2") {
    Rng rng(7);
    for (int k = 0; k < 200; ++k) {
        Tensor probs = random_prob_columns(3, 5, rng);
        REQUIRE(truncated_mse_loss(probs, 4.0).value <= 16.0);
    }
}

TEST_CASE("t-mse: hand example with stop-gradient finite differences") {
    Tensor probs = columns({{0.9, 0.1}, {0.5, 0.5}, {0.2, 0.8}});
    LossResult r = truncated_mse_loss(probs, 4.0);
    REQUIRE(r.value == Catch::Approx(0.6660459457066046).margin(1e-12));
    // independently derived entries: 2*(ln p_t - ln p_{t-1})/(T*C*p_t)
    REQUIRE(r.probs_grad.at(0, 1) == Catch::Approx(-0.3918577766014127).margin(1e-12));
    REQUIRE(r.probs_grad.at(1, 1) == Catch::Approx(1.0729586082894).margin(1e-12));
    REQUIRE(r.probs_grad.at(0, 2) == Catch::Approx(-1.5271512197902581).margin(1e-12));
    REQUIRE(r.probs_grad.at(1, 2) == Catch::Approx(0.19583484551905647).margin(1e-12));
    REQUIRE(r.probs_grad.at(0, 0) == 0.0);
    REQUIRE(r.probs_grad.at(1, 0) == 0.0);

    Tensor fd = finite_diff_grad(
        [&](const Tensor& p) { return frozen_tmse(p, probs, 4.0); }, probs);
    REQUIRE(gradient_rel_error(r.probs_grad, fd) < 1e-6);
}

TEST_CASE("t-mse: random instances against the frozen-reference oracle") {
    Rng rng(11);
    for (int k = 0; k < 20; ++k) {
        Tensor probs = random_prob_columns(3, 6, rng);
        LossResult r = truncated_mse_loss(probs, 4.0);
        REQUIRE(r.value == Catch::Approx(frozen_tmse(probs, probs, 4.0)).margin(1e-12));
        Tensor fd = finite_diff_grad(
            [&](const Tensor& p) { return frozen_tmse(p, probs, 4.0); }, probs);
        REQUIRE(gradient_rel_error(r.probs_grad, fd) < 1e-5);
    }
}

TEST_CASE("t-mse: value is symmetric in the pair order") {
    Rng rng(13);
    for (int k = 0; k < 100; ++k) {
        Tensor pq = random_prob_columns(4, 2, rng);
        Tensor qp({4, 2}, 0.0);
        for (std::size_t i = 0; i < 4; ++i) {
            qp.at(i, 0) = pq.at(i, 1);
            qp.at(i, 1) = pq.at(i, 0);
        }
        REQUIRE(truncated_mse_loss(pq, 4.0).value ==
                Catch::Approx(truncated_mse_loss(qp, 4.0).value).margin(1e-15));
    }
}

TEST_CASE("t-mse: degenerate cases") {
    Tensor one_frame({3, 1}, 1.0 / 3.0);
    LossResult r = truncated_mse_loss(one_frame, 4.0);
    REQUIRE(r.value == 0.0);
    for (double v : r.probs_grad.data) REQUIRE(v == 0.0);
    REQUIRE_THROWS_AS(truncated_mse_loss(one_frame, 0.0), DomainError);
}

TEST_CASE("kl smoothing: constant sequence is zero, general is nonnegative") {
    Tensor constant = columns({{0.6, 0.4}, {0.6, 0.4}});
    REQUIRE(kl_smoothing_loss(constant).value == Catch::Approx(0.0).margin(1e-15));
    Rng rng(17);
    for (int k = 0; k < 200; ++k) {
        Tensor probs = random_prob_columns(3, 4, rng);
        REQUIRE(kl_smoothing_loss(probs).value >= -1e-12);
    }
}

TEST_CASE("kl smoothing: hand-evaluated example and gradient") {
    Tensor probs = columns({{0.75, 0.25}, {0.5, 0.5}});
    LossResult r = kl_smoothing_loss(probs);
    REQUIRE(r.value ==
            Catch::Approx((0.75 * std::log(1.5) + 0.25 * std::log(0.5)) / 2.0).margin(1e-15));
    REQUIRE(r.value == Catch::Approx(0.06540601797056848).margin(1e-12));
    // gradient at frame 2: -p_prev / (T * p_cur)
    REQUIRE(r.probs_grad.at(0, 1) == Catch::Approx(-0.75 / (2.0 * 0.5)).margin(1e-12));
    REQUIRE(r.probs_grad.at(1, 1) == Catch::Approx(-0.25 / (2.0 * 0.5)).margin(1e-12));
    REQUIRE(r.probs_grad.at(0, 0) == 0.0);

    Tensor fd = finite_diff_grad([&](const Tensor& p) { return frozen_kl(p, probs); }, probs);
    REQUIRE(gradient_rel_error(r.probs_grad, fd) < 1e-6);
}

TEST_CASE("kl smoothing: single frame is zero") {
    Tensor probs({4, 1}, 0.25);
    LossResult r = kl_smoothing_loss(probs);
    REQUIRE(r.value == 0.0);
    for (double v : r.probs_grad.data) REQUIRE(v == 0.0);
}

TEST_CASE("combined loss: lambda zero reduces to summed cross entropies") {
    Rng rng(19);
    std::vector<Tensor> stages = {random_prob_columns(3, 5, rng), random_prob_columns(3, 5, rng)};
    std::vector<int> labels = {0, 2, 1, 1, 0};
    LossConfig cfg;
    cfg.lambda = 0.0;
    cfg.smoothing = Smoothing::t_mse;
    CombinedLoss r = combined_loss(stages, labels, cfg);
    double expected = cross_entropy_loss(stages[0], labels).value +
                      cross_entropy_loss(stages[1], labels).value;
    REQUIRE(r.total == Catch::Approx(expected).margin(1e-12));
    REQUIRE(r.per_stage[0].smoothing == 0.0);
    REQUIRE(r.per_stage[1].smoothing == 0.0);
}

TEST_CASE("combined loss: single stage equals its stage loss") {
    Rng rng(23);
    std::vector<Tensor> stages = {random_prob_columns(4, 6, rng)};
    std::vector<int> labels = {0, 1, 2, 3, 0, 1};
    LossConfig cfg; // defaults: t-mse, lambda 0.15, tau 4
    CombinedLoss r = combined_loss(stages, labels, cfg);
    double expected = cross_entropy_loss(stages[0], labels).value +
                      0.15 * truncated_mse_loss(stages[0], 4.0).value;
    REQUIRE(r.total == Catch::Approx(expected).margin(1e-12));
    REQUIRE(r.per_stage.size() == 1);
    REQUIRE(r.per_stage[0].total() == Catch::Approx(r.total).margin(1e-12));
}

TEST_CASE("combined loss: gradient is cross entropy plus scaled smoothing") {
    Rng rng(29);
    std::vector<Tensor> stages = {random_prob_columns(3, 4, rng), random_prob_columns(3, 4, rng)};
    std::vector<int> labels = {2, 0, 1, 2};
    LossConfig cfg;
    cfg.smoothing = Smoothing::kl;
    cfg.lambda = 0.15;
    CombinedLoss r = combined_loss(stages, labels, cfg);
    for (std::size_t s = 0; s < 2; ++s) {
        Tensor ce = cross_entropy_loss(stages[s], labels).probs_grad;
        Tensor sm = kl_smoothing_loss(stages[s]).probs_grad;
        for (std::size_t i = 0; i < ce.numel(); ++i) {
            REQUIRE(r.probs_grads[s][i] == Catch::Approx(ce[i] + 0.15 * sm[i]).margin(1e-12));
        }
    }
}
