#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "ktune/perf_model.hpp"
#include "ktune/sampler.hpp"

using namespace ktune;

namespace {

// Central finite difference of the batch MSE with respect to every weight and
// bias, for checking mlp_backward against an independent oracle.
MlpWeights fd_gradient(const MlpWeights& w, const TrainingSet& batch,
                       double h = 1e-6) {
    MlpWeights g = w;
    MlpWeights probe = w;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        for (std::size_t i = 0; i < w.layers[l].w.size(); ++i) {
            probe.layers[l].w[i] = w.layers[l].w[i] + h;
            const double up = mlp_evaluate(probe, batch);
            probe.layers[l].w[i] = w.layers[l].w[i] - h;
            const double down = mlp_evaluate(probe, batch);
            probe.layers[l].w[i] = w.layers[l].w[i];
            g.layers[l].w[i] = (up - down) / (2 * h);
        }
        for (std::size_t i = 0; i < w.layers[l].b.size(); ++i) {
            probe.layers[l].b[i] = w.layers[l].b[i] + h;
            const double up = mlp_evaluate(probe, batch);
            probe.layers[l].b[i] = w.layers[l].b[i] - h;
            const double down = mlp_evaluate(probe, batch);
            probe.layers[l].b[i] = w.layers[l].b[i];
            g.layers[l].b[i] = (up - down) / (2 * h);
        }
    }
    return g;
}

double max_rel_error(const MlpWeights& a, const MlpWeights& b) {
    double worst = 0.0;
    auto cmp = [&](double x, double y) {
        const double denom = std::max({std::abs(x), std::abs(y), 1e-8});
        worst = std::max(worst, std::abs(x - y) / denom);
    };
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        for (std::size_t i = 0; i < a.layers[l].w.size(); ++i) {
            cmp(a.layers[l].w[i], b.layers[l].w[i]);
        }
        for (std::size_t i = 0; i < a.layers[l].b.size(); ++i) {
            cmp(a.layers[l].b[i], b.layers[l].b[i]);
        }
    }
    return worst;
}

TrainingSet random_batch(int dim, int rows, std::uint64_t seed,
                         bool positive_features) {
    std::mt19937_64 rng(seed);
    TrainingSet s;
    std::vector<double> x(std::size_t(dim), 0.0);
    for (int r = 0; r < rows; ++r) {
        for (auto& v : x) {
            const double u = 2.0 * unit_real(rng) - 1.0;
            v = positive_features ? std::exp(u) : u;
        }
        s.add(x, 2.0 * unit_real(rng) - 1.0);
    }
    return s;
}

}  // namespace

TEST_CASE("forward pass matches the hand-computed single-hidden example") {
    // One hidden unit: W0 = [1, -1], b0 = 0, relu, W1 = [1], b1 = 0.
    // Features (e^2, e^1) log-transform to (2, 1), so z0 = 1, out = 1.
    MlpWeights w;
    w.log_inputs = true;
    w.layers.push_back({2, 1, {1.0, -1.0}, {0.0}});
    w.layers.push_back({1, 1, {1.0}, {0.0}});
    w.validate();

    const double e1 = std::exp(1.0), e2 = std::exp(2.0);
    CHECK(mlp_forward(w, std::vector<double>{e2, e1}) ==
          doctest::Approx(1.0).epsilon(1e-12));
    // Swapped inputs drive the pre-activation negative; relu clamps to 0.
    CHECK(mlp_forward(w, std::vector<double>{e1, e2}) == 0.0);

    // The same network without the log transform sees the raw features.
    w.log_inputs = false;
    CHECK(mlp_forward(w, std::vector<double>{3.0, 0.5}) ==
          doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("log transform rejects non-positive features") {
    MlpWeights w;
    w.log_inputs = true;
    w.layers.push_back({2, 1, {1.0, 1.0}, {0.0}});
    CHECK_THROWS_AS(mlp_forward(w, std::vector<double>{1.0, 0.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(mlp_forward(w, std::vector<double>{-1.0, 1.0}),
                    std::invalid_argument);
}

TEST_CASE("weight shapes are validated") {
    MlpWeights w;
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    w.layers.push_back({2, 3, std::vector<double>(6, 0.1), {0, 0, 0}});
    w.layers.push_back({3, 1, {0.1, 0.1, 0.1}, {0}});
    CHECK_NOTHROW(w.validate());
    SUBCASE("widths must chain") {
        w.layers[1].in = 2;
        w.layers[1].w = {0.1, 0.1};
        CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    }
    SUBCASE("single output unit") {
        w.layers[1] = {3, 2, std::vector<double>(6, 0.1), {0, 0}};
        CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    }
    SUBCASE("flat size must match in*out") {
        w.layers[0].w.pop_back();
        CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    }
}

TEST_CASE("glorot init is seeded, bounded and zero-biased") {
    MlpArchitecture arch{6, {5, 4}, true};
    MlpWeights a = init_weights(arch, 2024);
    MlpWeights b = init_weights(arch, 2024);
    MlpWeights c = init_weights(arch, 2025);

    REQUIRE(a.layers.size() == 3);
    CHECK(a.layers[0].in == 6);
    CHECK(a.layers[2].out == 1);
    bool all_same = true;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(a.layers[l].w == b.layers[l].w);
        all_same = all_same && a.layers[l].w == c.layers[l].w;
        const double bound =
            std::sqrt(6.0 / double(a.layers[l].in + a.layers[l].out));
        for (double x : a.layers[l].w) {
            CHECK(std::abs(x) <= bound);
        }
        for (double x : a.layers[l].b) CHECK(x == 0.0);
    }
    CHECK_FALSE(all_same);
}

TEST_CASE("backward gradient matches finite differences") {
    struct Case {
        MlpArchitecture arch;
        const char* label;
    };
    // Includes the deep five-hidden-layer stack and a raw-feature network.
    const Case cases[] = {
        {{3, {}, false}, "linear, raw features"},
        {{4, {6}, true}, "one hidden layer"},
        {{3, {4, 3, 4, 3, 4}, true}, "five hidden layers"},
    };
    std::mt19937_64 rng(13);
    for (const auto& c : cases) {
        CAPTURE(c.label);
        MlpWeights w = init_weights(c.arch, 7);
        // Zero-bias init can leave deep units exactly at the relu kink (a
        // whole dead layer propagates exact zeros), where central differences
        // measure the half-slope instead of the subgradient. Random biases
        // move the check to a generic, differentiable point.
        for (auto& layer : w.layers) {
            for (auto& b : layer.b) b = 0.4 * unit_real(rng) + 0.05;
        }
        TrainingSet batch =
            random_batch(c.arch.input_dim, 8, 99, c.arch.log_inputs);
        MlpWeights analytic = mlp_backward(w, batch);
        MlpWeights numeric = fd_gradient(w, batch);
        CHECK(max_rel_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("gradient of a known quadratic is exact") {
    // Single linear unit, one row, raw features: loss = (w*x + b - y)^2.
    // At w=0.5, b=0, x=2, y=3: pred=1, dL/dw = 2(pred-y)x = -8, dL/db = -4.
    MlpWeights w;
    w.log_inputs = false;
    w.layers.push_back({1, 1, {0.5}, {0.0}});
    TrainingSet batch;
    batch.add(std::vector<double>{2.0}, 3.0);
    MlpWeights g = mlp_backward(w, batch);
    CHECK(g.layers[0].w[0] == doctest::Approx(-8.0).epsilon(1e-12));
    CHECK(g.layers[0].b[0] == doctest::Approx(-4.0).epsilon(1e-12));
}

TEST_CASE("evaluate is order-invariant and guarded") {
    MlpArchitecture arch{3, {4}, true};
    MlpWeights w = init_weights(arch, 3);
    TrainingSet data = random_batch(3, 64, 5, true);

    TrainingSet reversed;
    for (std::size_t i = data.size(); i-- > 0;) {
        reversed.add(data.row(i), data.targets[i]);
    }
    CHECK(mlp_evaluate(w, data) ==
          doctest::Approx(mlp_evaluate(w, reversed)).epsilon(1e-12));

    TrainingSet empty;
    CHECK_THROWS_AS(mlp_evaluate(w, empty), std::invalid_argument);
    TrainingSet wrong = random_batch(2, 4, 5, true);
    CHECK_THROWS_AS(mlp_evaluate(w, wrong), std::invalid_argument);
}

TEST_CASE("training fits a noiseless log-linear target") {
    // y = 2*log(x0) - log(x1) + 0.5 is exactly representable by the linear
    // model on log features, so SGD should drive the MSE near zero.
    std::mt19937_64 rng(17);
    TrainingSet data;
    for (int i = 0; i < 512; ++i) {
        const double x0 = std::exp(2.0 * unit_real(rng) - 1.0);
        const double x1 = std::exp(2.0 * unit_real(rng) - 1.0);
        data.add(std::vector<double>{x0, x1},
                 2.0 * std::log(x0) - std::log(x1) + 0.5);
    }
    MlpArchitecture arch{2, {}, true};
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 32;
    cfg.epochs = 200;
    cfg.rng_seed = 1;

    TrainResult res = mlp_train(data, arch, cfg);
    CHECK(res.best_val_mse < 1e-4);
    CHECK(res.history.size() == 200);
    CHECK(res.best_epoch >= 0);
    // best_val_mse is the minimum of the recorded history.
    for (const auto& e : res.history) CHECK(res.best_val_mse <= e.val_mse);
    CHECK(res.history[std::size_t(res.best_epoch)].val_mse == res.best_val_mse);

    // The returned weights are the ones from the best epoch.
    TrainingSet probe;
    probe.add(std::vector<double>{1.0, 1.0}, 0.5);
    CHECK(mlp_forward(res.weights, probe.row(0)) ==
          doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("training is deterministic under a fixed seed") {
    TrainingSet data = random_batch(3, 100, 21, true);
    MlpArchitecture arch{3, {8}, true};
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.rng_seed = 42;
    TrainResult a = mlp_train(data, arch, cfg);
    TrainResult b = mlp_train(data, arch, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_mse == b.history[i].train_mse);
        CHECK(a.history[i].val_mse == b.history[i].val_mse);
    }
    for (std::size_t l = 0; l < a.weights.layers.size(); ++l) {
        CHECK(a.weights.layers[l].w == b.weights.layers[l].w);
    }
}

TEST_CASE("training reports divergence instead of returning garbage") {
    TrainingSet data = random_batch(2, 64, 1, true);
    // Targets huge and learning rate absurd: weights explode immediately.
    for (auto& t : data.targets) t = 1e12;
    MlpArchitecture arch{2, {4}, true};
    TrainConfig cfg;
    cfg.learning_rate = 1e6;
    cfg.epochs = 50;
    cfg.clip_grad_norm = 1e300;  // without the clip the explosion is genuine
    CHECK_THROWS_WITH_AS(mlp_train(data, arch, cfg),
                         doctest::Contains("training diverged"),
                         std::runtime_error);
}

TEST_CASE("training configuration is validated") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("learning rate") {
        cfg.learning_rate = 0.0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("batch size") {
        cfg.batch_size = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("epochs") {
        cfg.epochs = 0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("validation fraction") {
        cfg.validation_fraction = 1.0;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("needs two rows to split") {
        TrainingSet tiny;
        tiny.add(std::vector<double>{1.0}, 0.0);
        MlpArchitecture arch{1, {}, true};
        CHECK_THROWS_AS(mlp_train(tiny, arch, TrainConfig{}),
                        std::invalid_argument);
    }
}

TEST_CASE("training set bookkeeping") {
    TrainingSet s;
    s.add(std::vector<double>{1, 2, 3}, 0.5);
    CHECK(s.dim == 3);
    CHECK_THROWS_AS(s.add(std::vector<double>{1, 2}, 0.5), std::invalid_argument);
    s.add(std::vector<double>{4, 5, 6}, 1.5);
    CHECK(s.size() == 2);
    CHECK(s.row(1)[0] == 4.0);
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("model JSON round-trips bit-identically") {
    MlpArchitecture arch{14, {5, 3}, true};
    MlpModel m;
    m.feature_version = "gemm.v1";
    m.weights = init_weights(arch, 31);

    const std::string text = m.to_json_text();
    MlpModel back = MlpModel::from_json_text(text);
    CHECK(back.to_json_text() == text);
    CHECK(back.feature_version == "gemm.v1");

    std::vector<double> x(std::size_t(arch.input_dim));
    std::mt19937_64 rng(8);
    for (auto& v : x) v = std::exp(unit_real(rng));
    CHECK(back.predict(x) == m.predict(x));  // bitwise

    std::vector<std::vector<double>> rows = {x, x, x};
    std::vector<double> out;
    back.predict_batch(rows, out);
    for (double o : out) CHECK(o == m.predict(x));
}

TEST_CASE("model JSON rejects malformed input") {
    CHECK_THROWS_AS(MlpModel::from_json_text("{"), std::runtime_error);
    CHECK_THROWS_AS(MlpModel::from_json_text(R"({"format": "other"})"),
                    std::runtime_error);
    CHECK_THROWS_AS(MlpModel::load("no/such/file.json"), std::runtime_error);
}
