#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fallfuse/layers.hpp"
#include "oracles.hpp"

using namespace fallfuse;

namespace {

std::unique_ptr<Layer> built(const LayerSpec& spec, const Shape& input_shape,
                             std::uint64_t seed = 1) {
    auto layer = make_layer(spec);
    Rng rng(seed);
    layer->init(input_shape, rng);
    return layer;
}

}  // namespace

TEST_CASE("relu forward and backward") {
    auto relu = built(LayerSpec::relu(), Shape{3});
    Tensor in(Shape{1, 3}, {-1.0, 0.0, 2.0});
    Tensor out = relu->forward(in, Mode::Train);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);

    auto relu2 = built(LayerSpec::relu(), Shape{2});
    relu2->forward(Tensor(Shape{1, 2}, {-1.0, 2.0}), Mode::Train);
    Tensor grad = relu2->backward(Tensor(Shape{1, 2}, {5.0, 7.0}));
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 7.0);
}

TEST_CASE("backward without forward is a state error") {
    auto relu = built(LayerSpec::relu(), Shape{2});
    CHECK_THROWS_AS(relu->backward(Tensor(Shape{1, 2})), StateError);
}

TEST_CASE("dense examples") {
    auto dense = built(LayerSpec::dense(3), Shape{4});
    // One-sample batch: weight gradient is the outer product of input and
    // output gradient.
    Tensor in(Shape{1, 4}, {1.0, -2.0, 0.5, 3.0});
    dense->forward(in, Mode::Train);
    Tensor gout(Shape{1, 3}, {2.0, -1.0, 4.0});
    dense->backward(gout);
    const Tensor& wgrad = *dense->gradients()[0].tensor;
    for (int d = 0; d < 4; ++d) {
        for (int h = 0; h < 3; ++h) {
            CHECK(wgrad.at(d, h) == doctest::Approx(in[d] * gout[h]).epsilon(1e-12));
        }
    }
    const Tensor& bgrad = *dense->gradients()[1].tensor;
    for (int h = 0; h < 3; ++h) CHECK(bgrad[h] == gout[h]);

    CHECK_THROWS_AS(dense->forward(Tensor(Shape{1, 5}), Mode::Train), ShapeError);
}

TEST_CASE("dropout degenerate and eval modes") {
    Rng rng(3);
    auto drop = built(LayerSpec::dropout(0.0), Shape{8});
    drop->attach_rng(&rng);
    Tensor in = oracle::random_tensor(Shape{2, 8}, rng);
    Tensor out_train = drop->forward(in, Mode::Train);
    Tensor out_eval = drop->forward(in, Mode::Eval);
    for (std::int64_t i = 0; i < in.size(); ++i) {
        CHECK(out_train[i] == in[i]);
        CHECK(out_eval[i] == in[i]);
    }

    auto drop_half = built(LayerSpec::dropout(0.5), Shape{8});
    drop_half->attach_rng(&rng);
    Tensor eval_out = drop_half->forward(in, Mode::Eval);
    for (std::int64_t i = 0; i < in.size(); ++i) CHECK(eval_out[i] == in[i]);

    CHECK_THROWS_AS(LayerSpec::dropout(1.0), ConfigError);
    CHECK_THROWS_AS(LayerSpec::dropout(-0.1), ConfigError);
}

TEST_CASE("inverted dropout is unbiased over many masks") {
    const double p = 0.4;
    Rng rng(77);
    auto drop = built(LayerSpec::dropout(p), Shape{16});
    drop->attach_rng(&rng);
    Tensor in(Shape{1, 16}, 1.0);
    std::vector<double> mean(16, 0.0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        Tensor out = drop->forward(in, Mode::Train);
        for (int i = 0; i < 16; ++i) mean[static_cast<std::size_t>(i)] += out[i];
    }
    for (double m : mean) {
        CHECK(std::abs(m / draws - 1.0) <= 0.02);  // scaling by 1/(1-p) is unbiased
    }
}

TEST_CASE("batchnorm train normalizes to batch statistics") {
    auto bn = built(LayerSpec::batchnorm(), Shape{3});
    Rng rng(5);
    // Spread >> epsilon so normalized variance sits within 1e-6 of 1.
    Tensor in = oracle::random_tensor(Shape{32, 3}, rng, -12.0, 14.0);
    Tensor out = bn->forward(in, Mode::Train);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (int i = 0; i < 32; ++i) mean += out.at(i, c);
        mean /= 32.0;
        double var = 0.0;
        for (int i = 0; i < 32; ++i) var += (out.at(i, c) - mean) * (out.at(i, c) - mean);
        var /= 32.0;
        CHECK(std::abs(mean) <= 1e-10);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("batchnorm eval uses running stats and stays bit-deterministic") {
    auto bn = built(LayerSpec::batchnorm(), Shape{2});
    Rng rng(9);
    // Before any training step the running stats are mean 0 / var 1, so
    // Eval is a near-identity affine map.
    Tensor in(Shape{1, 2}, {0.25, -1.5});
    Tensor fresh = bn->forward(in, Mode::Eval);
    CHECK(fresh[0] == doctest::Approx(0.25).epsilon(1e-4));
    CHECK(fresh[1] == doctest::Approx(-1.5).epsilon(1e-4));

    for (int step = 0; step < 5; ++step) {
        bn->forward(oracle::random_tensor(Shape{16, 2}, rng, -2.0, 5.0), Mode::Train);
    }
    Tensor batch = oracle::random_tensor(Shape{4, 2}, rng);
    Tensor a = bn->forward(batch, Mode::Eval);
    Tensor b = bn->forward(batch, Mode::Eval);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    // Eval forward does not populate the training cache.
    CHECK_THROWS_AS(bn->backward(Tensor(Shape{4, 2})), StateError);

    const Tensor& running_var = *bn->buffers()[1].tensor;
    for (std::int64_t i = 0; i < running_var.size(); ++i) CHECK(running_var[i] >= 0.0);
}

TEST_CASE("batchnorm handles channel-spatial layouts") {
    auto bn = built(LayerSpec::batchnorm(), Shape{2, 4, 4});
    Rng rng(6);
    Tensor in = oracle::random_tensor(Shape{3, 2, 4, 4}, rng, -2.0, 2.0);
    Tensor out = bn->forward(in, Mode::Train);
    // Per channel over batch and spatial positions.
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (int n = 0; n < 3; ++n)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) mean += out.at(n, c, y, x);
        mean /= 48.0;
        CHECK(std::abs(mean) <= 1e-10);
    }
}

TEST_CASE("softmax examples") {
    Tensor z(Shape{1, 2}, {0.0, 0.0});
    Tensor p = softmax(z);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor huge(Shape{1, 2}, {1000.0, 1000.0});
    Tensor ph = softmax(huge);
    CHECK(ph.all_finite());
    CHECK(ph[0] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor one_two(Shape{1, 2}, {1.0, 2.0});
    Tensor p12 = softmax(one_two);
    const double e = std::exp(1.0);
    CHECK(p12[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-9));
    CHECK(p12[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-9));
    CHECK(p12[0] == doctest::Approx(0.26894).epsilon(1e-4));
    CHECK(p12[1] == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one for wild logits") {
    Rng rng(15);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor logits = oracle::random_tensor(Shape{8, 2}, rng, -50.0, 50.0);
        Tensor p = softmax(logits);
        for (int i = 0; i < 8; ++i) {
            CHECK(std::abs(p.at(i, 0) + p.at(i, 1) - 1.0) <= 1e-12);
            CHECK(p.at(i, 0) >= 0.0);
        }
    }
}

TEST_CASE("cross entropy examples") {
    Tensor sure(Shape{1, 2}, {1.0, 0.0});
    CrossEntropyResult r = cross_entropy(sure, {0});
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-11));

    Tensor even(Shape{1, 2}, {0.5, 0.5});
    CHECK(cross_entropy(even, {0}).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy(even, {1}).loss == doctest::Approx(0.69315).epsilon(1e-4));

    CHECK_THROWS_AS(cross_entropy(even, {2}), InputError);
    CHECK_THROWS_AS(cross_entropy(even, {-1}), InputError);
    CHECK_THROWS_AS(cross_entropy(even, std::vector<int>{}), InputError);
}

TEST_CASE("sgd step") {
    OptimizerConfig cfg;
    cfg.algorithm = OptimizerConfig::Algorithm::SGD;
    cfg.lr = 0.1;
    cfg.momentum = 0.0;
    Optimizer opt(cfg);
    Tensor param(Shape{1}, {1.0});
    Tensor grad(Shape{1}, {2.0});
    opt.step({{"p", &param}}, {{"p", &grad}});
    CHECK(param[0] == doctest::Approx(0.8).epsilon(1e-15));

    Tensor zero_grad(Shape{1}, {0.0});
    opt.step({{"p", &param}}, {{"p", &zero_grad}});
    CHECK(param[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("adam steps") {
    OptimizerConfig cfg;
    cfg.algorithm = OptimizerConfig::Algorithm::Adam;
    cfg.lr = 1e-3;
    Optimizer opt(cfg);
    Tensor param(Shape{3}, {0.5, -0.25, 2.0});
    Tensor grad(Shape{3}, {1.0, 1.0, 1.0});
    Tensor before = param;
    opt.step({{"p", &param}}, {{"p", &grad}});
    // Hand-stepped: m=0.1, v=0.001, mhat=1, vhat=1 -> update = lr/(1+eps).
    const double update = 1e-3 * 1.0 / (1.0 + 1e-8);
    for (int i = 0; i < 3; ++i) {
        CHECK(param[i] == doctest::Approx(before[i] - update).epsilon(1e-14));
    }

    // Zero gradients move nothing beyond roundoff even with state built up.
    Optimizer opt2(cfg);
    Tensor p2(Shape{2}, {1.0, -1.0});
    Tensor z(Shape{2}, {0.0, 0.0});
    opt2.step({{"p", &p2}}, {{"p", &z}});
    CHECK(std::abs(p2[0] - 1.0) <= 1e-12);
    CHECK(std::abs(p2[1] + 1.0) <= 1e-12);
}

TEST_CASE("optimizer config validation") {
    OptimizerConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(Optimizer{bad}, ConfigError);
    bad.lr = -1.0;
    CHECK_THROWS_AS(Optimizer{bad}, ConfigError);
}

TEST_CASE("loss strictly decreases on a toy dense stack") {
    Rng rng(2026);
    auto d1 = built(LayerSpec::dense(8), Shape{4}, 11);
    auto act = built(LayerSpec::relu(), Shape{8});
    auto d2 = built(LayerSpec::dense(2), Shape{8}, 12);

    Tensor x = oracle::random_tensor(Shape{16, 4}, rng);
    std::vector<int> labels;
    for (int i = 0; i < 16; ++i) labels.push_back(x.at(i, 0) > 0.0 ? 1 : 0);

    OptimizerConfig ocfg;
    ocfg.algorithm = OptimizerConfig::Algorithm::SGD;
    ocfg.lr = 0.05;
    Optimizer opt(ocfg);

    std::vector<NamedTensor> params = {{"w1", d1->parameters()[0].tensor},
                                       {"b1", d1->parameters()[1].tensor},
                                       {"w2", d2->parameters()[0].tensor},
                                       {"b2", d2->parameters()[1].tensor}};
    std::vector<NamedTensor> grads = {{"w1", d1->gradients()[0].tensor},
                                      {"b1", d1->gradients()[1].tensor},
                                      {"w2", d2->gradients()[0].tensor},
                                      {"b2", d2->gradients()[1].tensor}};

    double prev = 1e300;
    for (int step = 0; step < 5; ++step) {
        Tensor h = d2->forward(act->forward(d1->forward(x, Mode::Train), Mode::Train),
                               Mode::Train);
        CrossEntropyResult ce = cross_entropy(softmax(h), labels);
        CHECK(ce.loss < prev);
        prev = ce.loss;
        d1->backward(act->backward(d2->backward(ce.grad_logits)));
        opt.step(params, grads);
    }
}
