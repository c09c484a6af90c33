// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include "gmu/metrics.hpp"
#include "gmu/optim.hpp"
#include "gmu/regularize.hpp"
#include "gmu/training.hpp"
#include "test_util.hpp"

using namespace gmu;
using gmu::testing::make_dataset;
using gmu::testing::max_abs_diff;
using gmu::testing::random_tensor;

namespace {

Parameter scalar_param(double v, double g) {
    Parameter p("p", Tensor::scalar(v));
    p.grad = Tensor::scalar(g);
    return p;
}

// Two Gaussian blobs separated by a margin along x0 + x1.
MultilabelDataset separable_toy(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x({n, 2}), y({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const bool pos = i % 2 == 0;
        double a, b;
        do {
            a = rng.uniform(-2.0, 2.0);
            b = rng.uniform(-2.0, 2.0);
        } while (std::abs(a + b) < 0.5 || (a + b > 0) != pos);
        x(i, 0) = a;
        x(i, 1) = b;
        y(i, 0) = pos;
    }
    return make_dataset({x}, y);
}

MultilabelDataset random_multimodal(std::size_t n, std::size_t q, std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor({n, 3}, rng), b = random_tensor({n, 2}, rng), y({n, q});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) y(i, j) = (a(i, j % 3) + b(i, j % 2) > 0) ? 1.0 : 0.0;
    return make_dataset({a, b}, y);
}

ModelSpec spec_for(ModelKind kind, const MultilabelDataset& d) {
    ModelSpec s;
    s.kind = kind;
    s.input_dims = d.dims();
    s.labels = d.label_count();
    s.hidden_layers = kind == ModelKind::gmu || kind == ModelKind::logistic ? 0 : 1;
    s.expert_layers = 1;
    return s;
}

}  // namespace

TEST_CASE("adam: first step moves by about the learning rate") {
    for (double g : {3.0, -0.02, 1e3}) {
        auto p = scalar_param(1.0, g);
        AdamState s;
        s.alpha = 0.1;
        Parameter* ps[] = {&p};
        adam_step(ps, s);
        const double step = 1.0 - p.value.item();
        CHECK(s.t == 1);
        CHECK(std::abs(step - 0.1 * g / (std::abs(g) + 1e-8)) < 1e-15);
        CHECK(std::abs(std::abs(step) - 0.1) < 1e-6);
    }
}

TEST_CASE("adam: zero gradient on fresh state is an exact no-op") {
    Rng rng(2);
    Parameter p("w", random_tensor({3, 4}, rng));
    const Tensor before = p.value;
    AdamState s;
    Parameter* ps[] = {&p};
    adam_step(ps, s);
    CHECK(p.value == before);
}

TEST_CASE("adam: two steps with a constant gradient match the unrolled recurrence") {
    const double a = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.7;
    auto p = scalar_param(2.0, g);
    AdamState s;
    s.alpha = a;
    Parameter* ps[] = {&p};
    adam_step(ps, s);
    adam_step(ps, s);

    double theta = 2.0;
    const double m1 = (1 - b1) * g, v1 = (1 - b2) * g * g;
    theta -= a * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
    const double m2 = b1 * m1 + (1 - b1) * g, v2 = b2 * v1 + (1 - b2) * g * g;
    theta -= a * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
    CHECK(std::abs(p.value.item() - theta) < 1e-15);
    CHECK(s.t == 2);
    CHECK(s.v[0].item() >= 0.0);
}

TEST_CASE("adam: non-finite gradient aborts before any change") {
    auto p = scalar_param(1.0, 0.5), q = scalar_param(1.0, NAN);
    AdamState s;
    Parameter* ps[] = {&p, &q};
    CHECK_THROWS_AS(adam_step(ps, s), NonFiniteError);
    CHECK(s.t == 0);
    CHECK(p.value.item() == 1.0);
}

TEST_CASE("batch norm: constant column, standardized column, random statistics") {
    BatchNorm bn("bn", 2);
    bn.beta.value = Tensor::vector({0.25, -1.5});
    const Tensor c = Tensor::matrix({{3.0, -1.0}, {3.0, -1.0}, {3.0, -1.0}});
    const auto out = batch_norm_forward(c, bn, Mode::train);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.normalized(i, 0) == 0.0);
        CHECK(out.out(i, 0) == 0.25);
        CHECK(out.out(i, 1) == -1.5);
    }

    BatchNorm id("id", 1);
    const Tensor z = Tensor::matrix({{1.0}, {-1.0}, {1.0}, {-1.0}});
    const auto zo = batch_norm_forward(z, id, Mode::train);
    CHECK(max_abs_diff(zo.out, z) < 1e-5);

    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        BatchNorm b("b", 5);
        const Tensor x = random_tensor({8 + rng.uniform_index(40), 5}, rng, -10.0, 30.0);
        const Tensor n = batch_norm_forward(x, b, Mode::train).normalized;
        for (std::size_t j = 0; j < 5; ++j) {
            double mean = 0.0, var = 0.0;
            for (std::size_t i = 0; i < n.rows(); ++i) mean += n(i, j);
            mean /= static_cast<double>(n.rows());
            for (std::size_t i = 0; i < n.rows(); ++i) var += (n(i, j) - mean) * (n(i, j) - mean);
            var /= static_cast<double>(n.rows());
            CHECK(std::abs(mean) < 1e-7);
            CHECK(std::abs(var - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("batch norm: running statistics and eval mode") {
    BatchNorm bn("bn", 1);
    const Tensor x = Tensor::matrix({{1.0}, {3.0}});
    batch_norm_forward(x, bn, Mode::train);
    CHECK(bn.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
    const Tensor e = batch_norm_forward(Tensor::matrix({{0.2}}), bn, Mode::eval).out;
    CHECK(e(0, 0) == doctest::Approx((0.2 - 0.2) / std::sqrt(1.1 + 1e-5)));
    CHECK_THROWS_AS(batch_norm_forward(Tensor::matrix({{1.0}}), bn, Mode::train), std::invalid_argument);
}

TEST_CASE("dropout: identity cases, expectation and rate checks") {
    Rng rng(4);
    const Tensor x = random_tensor({10, 10}, rng);
    CHECK(dropout_forward(x, 0.0, rng, Mode::train) == x);
    CHECK(dropout_forward(x, 0.9, rng, Mode::eval) == x);

    const Tensor ones({1000000}, 1.0);
    const Tensor d = dropout_forward(ones, 0.5, rng, Mode::train);
    double mean = 0.0;
    for (double v : d.data()) {
        CHECK((v == 0.0 || v == 2.0));
        mean += v;
    }
    mean /= 1e6;
    CHECK(mean >= 0.99);
    CHECK(mean <= 1.01);

    CHECK_THROWS_AS(dropout_forward(x, 1.0, rng, Mode::train), std::invalid_argument);
    CHECK_THROWS_AS(dropout_forward(x, -0.1, rng, Mode::train), std::invalid_argument);
}

TEST_CASE("max-norm projection") {
    const Tensor w = Tensor::matrix({{6.0, 8.0}, {1.0, 1.0}});
    const Tensor p = max_norm_project(w, 5.0);
    CHECK(p == Tensor::matrix({{3.0, 4.0}, {1.0, 1.0}}));
    CHECK(max_norm_project(w, 10.0) == w);

    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor r = random_tensor({7, 30}, rng, -5.0, 5.0);
        const double c = rng.uniform(0.5, 20.0);
        const Tensor q = max_norm_project(r, c);
        for (std::size_t i = 0; i < q.rows(); ++i) {
            double ss = 0.0, orig = 0.0;
            for (std::size_t j = 0; j < q.cols(); ++j) {
                ss += q(i, j) * q(i, j);
                orig += r(i, j) * r(i, j);
            }
            CHECK(std::sqrt(ss) <= c + 1e-9);
            if (std::sqrt(orig) > c) CHECK(std::abs(std::sqrt(ss) - c) < 1e-9);
        }
    }
    CHECK_THROWS_AS(max_norm_project(w, 0.0), std::invalid_argument);
}

TEST_CASE("models: every kind builds, predicts probabilities and round-trips its state") {
    const auto d = random_multimodal(12, 3, 1);
    for (auto kind : {ModelKind::gmu, ModelKind::maxout_mlp, ModelKind::logistic, ModelKind::moe_tied,
                      ModelKind::moe_untied, ModelKind::concat, ModelKind::linear_sum, ModelKind::avg_probs}) {
        CAPTURE(model_kind_name(kind));
        CHECK(model_kind_from_name(model_kind_name(kind)) == kind);
        auto spec = spec_for(kind, d);
        spec.hidden_layers = kind == ModelKind::logistic ? 0 : 1;
        Rng rng(3);
        Model m(spec, 8, 0.3, rng);
        const Tensor p = m.predict(d.features);
        REQUIRE(p.shape() == Shape{12, 3});
        for (double v : p.data()) CHECK((v > 0.0 && v < 1.0));

        Rng rng2(99);
        Model other(spec, 8, 0.3, rng2);
        CHECK(state_digest(other.state()) != state_digest(m.state()));
        other.load_state(m.state());
        CHECK(other.predict(d.features) == p);
        CHECK(state_digest(other.state()) == state_digest(m.state()));
    }
    CHECK_THROWS_AS(model_kind_from_name("nope"), std::invalid_argument);
}

TEST_CASE("models: gmu with three modalities and direct output") {
    Rng rng(5);
    const auto d = make_dataset({random_tensor({6, 2}, rng), random_tensor({6, 3}, rng), random_tensor({6, 1}, rng)},
                                Tensor({6, 2}, 1.0));
    auto spec = spec_for(ModelKind::gmu, d);
    spec.hidden_layers = 1;
    Model m(spec, 4, 0.2, rng);
    CHECK(m.predict(d.features).shape() == Shape{6, 2});
    CHECK_THROWS_AS(m.gate_activations(d.features), std::logic_error);

    auto direct = spec_for(ModelKind::gmu, random_multimodal(4, 1, 2));
    direct.gmu_direct = true;
    Model md(direct, 64, 0.2, rng);
    CHECK(md.hidden_size() == 1);
    CHECK(md.state().size() == 3);
}

TEST_CASE("models: state loading rejects bad entries") {
    const auto d = random_multimodal(4, 1, 3);
    Rng rng(1);
    Model m(spec_for(ModelKind::gmu, d), 4, 0.1, rng);
    auto st = m.state();
    st.begin()->second = Tensor({1}, 0.0);
    CHECK_THROWS_AS(m.load_state(st), std::invalid_argument);
    st = m.state();
    st["extra"] = Tensor::scalar(1.0);
    CHECK_THROWS_AS(m.load_state(st), std::invalid_argument);
}

TEST_CASE("train: logistic regression separates a separable toy problem") {
    const auto d = separable_toy(200, 8);
    HyperConfig c;
    c.learning_rate = 0.05;
    c.dropout = 0.0;
    c.max_norm = 20.0;
    c.init_range = 0.01;
    c.batch_size = 32;
    c.max_epochs = 200;
    c.seed = 3;
    const auto r = train_model(spec_for(ModelKind::logistic, d), d, nullptr, c);
    const Tensor p = r.model.predict(d.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) correct += (p(i, 0) >= 0.5) == (d.labels(i, 0) == 1.0);
    CHECK(correct == d.size());
    CHECK(r.report.train_loss.back() < r.report.train_loss.front());
}

TEST_CASE("train: zero learning rate leaves parameters and loss unchanged") {
    const auto d = random_multimodal(40, 2, 4);
    HyperConfig c;
    c.learning_rate = 0.0;
    c.dropout = 0.0;
    c.batch_size = 40;
    c.max_epochs = 5;
    auto spec = spec_for(ModelKind::gmu, d);
    spec.batch_norm = false;
    Rng rng(derive_seed(c.seed, 0));
    const Model fresh(spec, c.hidden_size, c.init_range, rng);
    const auto r = train_model(spec, d, nullptr, c);
    CHECK(r.model.state() == fresh.state());
    // Rows arrive in a different order each epoch, so the mean may differ in the last bits.
    for (double l : r.report.train_loss) CHECK(std::abs(l - r.report.train_loss.front()) < 1e-14);
}

TEST_CASE("train: identical seed and config give identical reports") {
    const auto d = random_multimodal(90, 3, 5), dev = random_multimodal(30, 3, 6);
    HyperConfig c;
    c.hidden_size = 16;
    c.max_epochs = 6;
    c.batch_size = 16;
    c.seed = 77;
    auto spec = spec_for(ModelKind::gmu, d);
    spec.hidden_layers = 1;
    const auto a = train_model(spec, d, &dev, c), b = train_model(spec, d, &dev, c);
    CHECK(a.report.train_loss == b.report.train_loss);
    CHECK(a.report.dev_macro_f1 == b.report.dev_macro_f1);
    CHECK(a.report.snapshot_id == b.report.snapshot_id);
    CHECK(a.report.best_epoch == b.report.best_epoch);
    c.seed = 78;
    CHECK(train_model(spec, d, &dev, c).report.snapshot_id != a.report.snapshot_id);
}

TEST_CASE("train: best epoch holds the maximum dev score and its parameters are kept") {
    const auto d = random_multimodal(120, 3, 7), dev = random_multimodal(40, 3, 8);
    HyperConfig c;
    c.hidden_size = 16;
    c.max_epochs = 15;
    c.batch_size = 32;
    c.learning_rate = 0.03;
    auto spec = spec_for(ModelKind::concat, d);
    const auto r = train_model(spec, d, &dev, c);
    const auto& f = r.report.dev_macro_f1;
    CHECK(r.report.best_dev_macro_f1 == *std::max_element(f.begin(), f.end()));
    CHECK(f[r.report.best_epoch] == r.report.best_dev_macro_f1);
    const auto pred = threshold_probs(r.model.predict(dev.features), 0.5, dev.label_names);
    CHECK(multilabel_f1(pred, LabelMatrix::from_tensor(dev.labels, dev.label_names)).f1_macro ==
          r.report.best_dev_macro_f1);
}

TEST_CASE("train: max-norm holds after every step") {
    const auto d = random_multimodal(64, 2, 9);
    HyperConfig c;
    c.hidden_size = 8;
    c.max_epochs = 10;
    c.batch_size = 8;
    c.learning_rate = 0.1;
    c.max_norm = 0.5;
    c.init_range = 0.1;
    std::size_t checked = 0;
    double worst = 0.0;
    TrainOptions opts;
    opts.after_step = [&](const Model& m) {
        for (const auto* p : m.parameters()) worst = std::max(worst, max_constrained_norm(*p));
        ++checked;
    };
    for (auto kind : {ModelKind::gmu, ModelKind::linear_sum, ModelKind::moe_untied})
        train_model(spec_for(kind, d), d, nullptr, c, opts);
    CHECK(checked == 3 * 10 * 8);
    CHECK(worst <= 0.5 + 1e-9);
}

TEST_CASE("train: divergence stops with a report") {
    // Identical huge features: every weight moves the same way until the logits overflow.
    Tensor y({32, 1});
    for (std::size_t i = 0; i < 32; i += 2) y[i] = 1.0;
    const auto d = make_dataset({Tensor({32, 4}, 1e154)}, y);
    HyperConfig c;
    c.learning_rate = 1e160;
    c.max_norm = 1e300;
    c.init_range = 0.01;
    c.max_epochs = 50;
    c.dropout = 0.0;
    auto spec = spec_for(ModelKind::logistic, d);
    const auto r = train_model(spec, d, nullptr, c);
    CHECK(r.report.diverged);
    CHECK(!r.report.failure.empty());
    CHECK(r.report.epochs_run < 50);
}

TEST_CASE("train: a trailing batch of one joins the previous batch") {
    const auto d = random_multimodal(33, 1, 11);
    HyperConfig c;
    c.batch_size = 16;
    c.max_epochs = 2;
    auto spec = spec_for(ModelKind::concat, d);
    CHECK(train_model(spec, d, nullptr, c).report.steps == 4);
}

TEST_CASE("search: sampled configs stay inside the search space") {
    SearchSpace s;
    Rng rng(123);
    std::map<std::size_t, int> sizes;
    double lr_lo = 1, lr_hi = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto c = sample_hyper_config(s, rng);
        CHECK(s.contains(c));
        ++sizes[c.hidden_size];
        lr_lo = std::min(lr_lo, c.learning_rate);
        lr_hi = std::max(lr_hi, c.learning_rate);
    }
    CHECK(sizes.size() == 4);
    CHECK(lr_lo < 1.2e-3);
    CHECK(lr_hi > 0.08);
    HyperConfig outside;
    outside.dropout = 0.2;
    CHECK(!s.contains(outside));
}

TEST_CASE("search: one trial, forced winner, jobs independence") {
    const auto d = random_multimodal(80, 2, 12), dev = random_multimodal(40, 2, 13);
    auto spec = spec_for(ModelKind::concat, d);
    SearchSpace s;
    s.hidden_sizes = {8};
    s.max_epochs = 3;
    s.batch_size = 32;

    const auto one = random_hyperparameter_search(spec, d, dev, 1, 5, s);
    CHECK(one.trials.size() == 1);
    CHECK(one.best_index == 0);

    std::vector<HyperConfig> configs(4);
    for (std::size_t i = 0; i < configs.size(); ++i) {
        configs[i].hidden_size = 8;
        configs[i].max_epochs = 8;
        configs[i].learning_rate = 0.0;
        configs[i].init_range = 1e-3;
        configs[i].seed = i;
    }
    configs[2].learning_rate = 0.05;
    const auto forced = search_over_configs(spec, d, dev, configs, 3);
    CHECK(forced.best_index == 2);
    for (std::size_t i = 0; i < 4; ++i)
        if (i != 2) CHECK(forced.trials[i].best_dev_macro_f1 < forced.trials[2].best_dev_macro_f1);

    const auto serial = random_hyperparameter_search(spec, d, dev, 5, 17, s, 1);
    const auto threaded = random_hyperparameter_search(spec, d, dev, 5, 17, s, 4);
    CHECK(serial.best_index == threaded.best_index);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(serial.trials[i].config == threaded.trials[i].config);
        CHECK(serial.trials[i].snapshot_id == threaded.trials[i].snapshot_id);
    }
    CHECK_THROWS_AS(random_hyperparameter_search(spec, d, dev, 0, 1, s), std::invalid_argument);
}
