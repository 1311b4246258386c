#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/finite_diff.hpp"
#include "mstcn/layers.hpp"
#include "mstcn/rng.hpp"

using namespace mstcn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape), 0.0);
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

DilatedResidualLayerParams random_layer(std::size_t d, int dilation, Rng& rng) {
    DilatedResidualLayerParams p;
    p.w1 = random_tensor({3, d, d}, rng, 0.4);
    p.b1 = random_tensor({d}, rng, 0.2);
    p.w2 = random_tensor({d, d}, rng, 0.4);
    p.b2 = random_tensor({d}, rng, 0.2);
    p.dilation = dilation;
    return p;
}

} // namespace

TEST_CASE("receptive field formula") {
    REQUIRE(receptive_field(1) == 3);
    REQUIRE(receptive_field(6) == 127);
    REQUIRE(receptive_field(10) == 2047);
    REQUIRE_THROWS_AS(receptive_field(0), DomainError);
    REQUIRE_THROWS_AS(receptive_field(-3), DomainError);
}

TEST_CASE("dilated conv: identity kernel reproduces input") {
    std::size_t d = 3, t_len = 9;
    Tensor kernel({3, d, d}, 0.0);
    for (std::size_t i = 0; i < d; ++i) kernel.at(1, i, i) = 1.0; // center tap = identity
    Tensor bias({d}, 0.0);
    Rng rng(11);
    Tensor input = random_tensor({d, t_len}, rng);
    Tensor out = dilated_conv1d_forward(input, kernel, bias, 2);
    for (std::size_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == input[i]);
}

TEST_CASE("dilated conv: zero input yields bias columns") {
    std::size_t d_in = 2, d_out = 2, t_len = 5;
    Tensor kernel({3, d_in, d_out}, 0.7);
    Tensor bias({d_out}, 0.0);
    bias[0] = -1.5;
    bias[1] = 2.25;
    Tensor input({d_in, t_len}, 0.0);
    Tensor out = dilated_conv1d_forward(input, kernel, bias, 1);
    for (std::size_t t = 0; t < t_len; ++t) {
        REQUIRE(out.at(0, t) == -1.5);
        REQUIRE(out.at(1, t) == 2.25);
    }
}

TEST_CASE("dilated conv: hand-summed dilation-2 example") {
    // one channel, taps (1,1,1), dilation 2, zero padding:
    // out[t] = in[t-2] + in[t] + in[t+2]
    Tensor kernel({3, 1, 1}, 1.0);
    Tensor bias({1}, 0.0);
    Tensor input({1, 5}, 0.0);
    for (std::size_t t = 0; t < 5; ++t) input[t] = static_cast<double>(t + 1);
    Tensor out = dilated_conv1d_forward(input, kernel, bias, 2);
    std::vector<double> expected = {4.0, 6.0, 9.0, 6.0, 8.0};
    for (std::size_t t = 0; t < 5; ++t) REQUIRE(out[t] == Catch::Approx(expected[t]).margin(1e-12));
}

TEST_CASE("dilated conv: gradients match finite differences") {
    Rng rng(21);
    std::size_t d = 3, t_len = 12;
    int dilation = 2;
    Tensor kernel = random_tensor({3, d, d}, rng, 0.5);
    Tensor bias = random_tensor({d}, rng, 0.5);
    Tensor input = random_tensor({d, t_len}, rng);
    Tensor weights = random_tensor({d, t_len}, rng); // random projection to a scalar

    auto value = [&](const Tensor& k, const Tensor& b, const Tensor& x) {
        Tensor out = dilated_conv1d_forward(x, k, b, dilation);
        double s = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) s += weights[i] * out[i];
        return s;
    };

    DilatedConvGrads g = dilated_conv1d_backward(input, kernel, dilation, weights);
    Tensor fd_kernel = finite_diff_grad([&](const Tensor& k) { return value(k, bias, input); }, kernel);
    Tensor fd_bias = finite_diff_grad([&](const Tensor& b) { return value(kernel, b, input); }, bias);
    Tensor fd_input = finite_diff_grad([&](const Tensor& x) { return value(kernel, bias, x); }, input);
    REQUIRE(gradient_rel_error(g.kernel_grad, fd_kernel) < 1e-7);
    REQUIRE(gradient_rel_error(g.bias_grad, fd_bias) < 1e-7);
    REQUIRE(gradient_rel_error(g.input_grad, fd_input) < 1e-7);
}

TEST_CASE("residual layer: zero parameters act as identity") {
    DilatedResidualLayerParams p;
    std::size_t d = 4, t_len = 7;
    p.w1 = Tensor::zeros({3, d, d});
    p.b1 = Tensor::zeros({d});
    p.w2 = Tensor::zeros({d, d});
    p.b2 = Tensor::zeros({d});
    p.dilation = 2;
    Rng rng(31);
    Tensor input = random_tensor({d, t_len}, rng);
    ResidualLayerResult r = dilated_residual_layer_forward(input, p, 0.5, true, 99);
    for (std::size_t i = 0; i < input.numel(); ++i) REQUIRE(r.output[i] == input[i]);
}

TEST_CASE("residual layer: dropout rate zero matches eval mode") {
    Rng rng(41);
    std::size_t d = 4, t_len = 10;
    DilatedResidualLayerParams p = random_layer(d, 4, rng);
    Tensor input = random_tensor({d, t_len}, rng);
    ResidualLayerResult train_mode = dilated_residual_layer_forward(input, p, 0.0, true, 7);
    ResidualLayerResult eval_mode = dilated_residual_layer_forward(input, p, 0.0, false, 8);
    for (std::size_t i = 0; i < input.numel(); ++i) {
        REQUIRE(train_mode.output[i] == eval_mode.output[i]);
    }
}

TEST_CASE("residual layer: seeded dropout is reproducible") {
    Rng rng(51);
    std::size_t d = 6, t_len = 14;
    DilatedResidualLayerParams p = random_layer(d, 2, rng);
    Tensor input = random_tensor({d, t_len}, rng);
    ResidualLayerResult a = dilated_residual_layer_forward(input, p, 0.5, true, 12345);
    ResidualLayerResult b = dilated_residual_layer_forward(input, p, 0.5, true, 12345);
    ResidualLayerResult c = dilated_residual_layer_forward(input, p, 0.5, true, 54321);
    bool identical = true, differs = false;
    for (std::size_t i = 0; i < input.numel(); ++i) {
        identical = identical && (a.output[i] == b.output[i]);
        differs = differs || (a.output[i] != c.output[i]);
    }
    REQUIRE(identical);
    REQUIRE(differs);
    REQUIRE_THROWS_AS(dilated_residual_layer_forward(input, p, 1.0, true, 1), DomainError);
}

TEST_CASE("residual layer: gradients match finite differences at shape (4,16)") {
    Rng rng(61);
    std::size_t d = 4, t_len = 16;
    DilatedResidualLayerParams params = random_layer(d, 2, rng);
    Tensor input = random_tensor({d, t_len}, rng);
    const std::uint64_t seed = 2024;
    const double rate = 0.5;

    // scalar objective: sum of outputs, dropout mask fixed by the seed
    auto value = [&](const DilatedResidualLayerParams& p, const Tensor& x) {
        ResidualLayerResult r = dilated_residual_layer_forward(x, p, rate, true, seed);
        double s = 0.0;
        for (double v : r.output.data) s += v;
        return s;
    };

    ResidualLayerResult base = dilated_residual_layer_forward(input, params, rate, true, seed);
    Tensor upstream(base.output.shape, 1.0);
    ResidualLayerGrads g = layer_backward(params, base.cache, upstream);

    auto fd_param = [&](Tensor DilatedResidualLayerParams::* field) {
        DilatedResidualLayerParams probe = params;
        return finite_diff_grad(
            [&](const Tensor& t) {
                probe.*field = t;
                return value(probe, input);
            },
            params.*field);
    };
    REQUIRE(gradient_rel_error(g.param_grads.w1, fd_param(&DilatedResidualLayerParams::w1)) < 1e-4);
    REQUIRE(gradient_rel_error(g.param_grads.b1, fd_param(&DilatedResidualLayerParams::b1)) < 1e-4);
    REQUIRE(gradient_rel_error(g.param_grads.w2, fd_param(&DilatedResidualLayerParams::w2)) < 1e-4);
    REQUIRE(gradient_rel_error(g.param_grads.b2, fd_param(&DilatedResidualLayerParams::b2)) < 1e-4);
    Tensor fd_input = finite_diff_grad([&](const Tensor& x) { return value(params, x); }, input);
    REQUIRE(gradient_rel_error(g.input_grad, fd_input) < 1e-4);
}

TEST_CASE("layer backward: zero upstream gives zero gradients") {
    Rng rng(71);
    std::size_t d = 3, t_len = 8;
    DilatedResidualLayerParams p = random_layer(d, 1, rng);
    Tensor input = random_tensor({d, t_len}, rng);
    ResidualLayerResult r = dilated_residual_layer_forward(input, p, 0.5, true, 17);
    ResidualLayerGrads g = layer_backward(p, r.cache, Tensor::zeros(r.output.shape));
    for (double v : g.input_grad.data) REQUIRE(v == 0.0);
    for (double v : g.param_grads.w1.data) REQUIRE(v == 0.0);
    for (double v : g.param_grads.b1.data) REQUIRE(v == 0.0);
    for (double v : g.param_grads.w2.data) REQUIRE(v == 0.0);
    for (double v : g.param_grads.b2.data) REQUIRE(v == 0.0);
}

TEST_CASE("layer backward: zero parameters pass upstream through") {
    std::size_t d = 3, t_len = 8;
    DilatedResidualLayerParams p;
    p.w1 = Tensor::zeros({3, d, d});
    p.b1 = Tensor::zeros({d});
    p.w2 = Tensor::zeros({d, d});
    p.b2 = Tensor::zeros({d});
    p.dilation = 2;
    Rng rng(81);
    Tensor input = random_tensor({d, t_len}, rng);
    ResidualLayerResult r = dilated_residual_layer_forward(input, p, 0.0, false, 0);
    Tensor upstream = random_tensor({d, t_len}, rng);
    ResidualLayerGrads g = layer_backward(p, r.cache, upstream);
    for (std::size_t i = 0; i < upstream.numel(); ++i) REQUIRE(g.input_grad[i] == upstream[i]);
}

TEST_CASE("classifier head: zero weights give uniform columns") {
    ClassifierHeadParams head;
    head.w = Tensor::zeros({4, 6});
    head.b = Tensor::zeros({4});
    Rng rng(91);
    Tensor h = random_tensor({6, 5}, rng);
    HeadResult r = classifier_head_forward(h, head);
    for (std::size_t t = 0; t < 5; ++t) {
        double col = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            REQUIRE(r.probs.at(c, t) == Catch::Approx(0.25).margin(1e-12));
            col += r.probs.at(c, t);
        }
        REQUIRE(col == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("classifier head: closed-form softmax of [ln 2, 0]") {
    ClassifierHeadParams head;
    head.w = Tensor({2, 1}, 0.0);
    head.w.at(0, 0) = std::log(2.0);
    head.w.at(1, 0) = 0.0;
    head.b = Tensor::zeros({2});
    Tensor h({1, 1}, 1.0); // logits column = [ln 2, 0]
    HeadResult r = classifier_head_forward(h, head);
    REQUIRE(r.probs.at(0, 0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(r.probs.at(1, 0) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("classifier head: softmax columns are distributions") {
    Rng rng(101);
    Tensor h = random_tensor({4, 8}, rng, 2.0);
    ClassifierHeadParams head;
    head.w = random_tensor({5, 4}, rng);
    head.b = random_tensor({5}, rng);
    HeadResult r = classifier_head_forward(h, head);
    for (std::size_t t = 0; t < 8; ++t) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            double p = r.probs.at(c, t);
            REQUIRE(p > 0.0);
            REQUIRE(p < 1.0);
            sum += p;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("classifier head: gradients match finite differences at shape (4,8)") {
    Rng rng(111);
    Tensor h = random_tensor({4, 8}, rng);
    ClassifierHeadParams head;
    head.w = random_tensor({3, 4}, rng, 0.6);
    head.b = random_tensor({3}, rng, 0.3);
    Tensor weights = random_tensor({3, 8}, rng); // projection to a scalar

    auto value = [&](const ClassifierHeadParams& p, const Tensor& x) {
        HeadResult r = classifier_head_forward(x, p);
        double s = 0.0;
        for (std::size_t i = 0; i < r.probs.numel(); ++i) s += weights[i] * r.probs[i];
        return s;
    };

    HeadResult base = classifier_head_forward(h, head);
    HeadGrads g = classifier_head_backward(head, base.cache, weights);
    ClassifierHeadParams probe = head;
    Tensor fd_w = finite_diff_grad(
        [&](const Tensor& t) {
            probe.w = t;
            return value(probe, h);
        },
        head.w);
    probe = head;
    Tensor fd_b = finite_diff_grad(
        [&](const Tensor& t) {
            probe.b = t;
            return value(probe, h);
        },
        head.b);
    Tensor fd_h = finite_diff_grad([&](const Tensor& x) { return value(head, x); }, h);
    REQUIRE(gradient_rel_error(g.w_grad, fd_w) < 1e-4);
    REQUIRE(gradient_rel_error(g.b_grad, fd_b) < 1e-4);
    REQUIRE(gradient_rel_error(g.input_grad, fd_h) < 1e-4);
}

TEST_CASE("impulse response stays inside the receptive field") {
    // all-positive weights and inputs keep every ReLU active, so the
    // difference support is exactly the receptive-field window
    for (int L = 1; L <= 3; ++L) {
        std::size_t d = 2;
        int window = receptive_field(L);
        std::size_t t_len = static_cast<std::size_t>(2 * window + 9);
        std::size_t center = t_len / 2;

        std::vector<DilatedResidualLayerParams> layers;
        for (int l = 0; l < L; ++l) {
            DilatedResidualLayerParams p;
            p.w1 = Tensor::full({3, d, d}, 1.0);
            p.b1 = Tensor::zeros({d});
            p.w2 = Tensor::full({d, d}, 1.0);
            p.b2 = Tensor::zeros({d});
            p.dilation = 1 << l;
            layers.push_back(p);
        }
        auto run = [&](const Tensor& input) {
            Tensor h = input;
            for (const auto& p : layers) {
                h = dilated_residual_layer_forward(h, p, 0.0, false, 0).output;
            }
            return h;
        };
        Tensor base({d, t_len}, 1.0);
        Tensor bumped = base;
        for (std::size_t i = 0; i < d; ++i) bumped.at(i, center) += 1.0;
        Tensor out_a = run(base);
        Tensor out_b = run(bumped);
        int half = (window - 1) / 2;
        for (std::size_t t = 0; t < t_len; ++t) {
            double diff = std::fabs(out_b.at(0, t) - out_a.at(0, t));
            bool inside = std::llabs(static_cast<long long>(t) - static_cast<long long>(center)) <= half;
            if (inside) {
                REQUIRE(diff > 1e-6);
            } else {
                REQUIRE(diff == 0.0);
            }
        }
    }
}
