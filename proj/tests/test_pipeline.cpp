#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "ktune/backends.hpp"
#include "ktune/param_space.hpp"
#include "ktune/pipeline.hpp"
#include "ktune/sampler.hpp"

using namespace ktune;

namespace {

const HardwareDescriptor kHw;  // synthetic device defaults

CategoricalModel default_gemm_sampler() {
    static const CategoricalModel model = [] {
        const GemmInput in{512, 512, 512, Dtype::f32, false, false};
        return calibrate(make_legality(in, kHw), GemmBounds::defaults().as_lists(),
                         5000, 11);
    }();
    return model;
}

GemmDataset small_dataset(int n, std::uint64_t seed) {
    AnalyticalBackend backend(kHw);
    GemmInputDistribution dist;
    dist.m_hi = 256;
    dist.n_hi = 256;
    dist.k_hi = 4096;
    return generate_gemm_dataset(backend, default_gemm_sampler(), dist,
                                 GemmBounds::defaults(), kHw, n, seed);
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ktune-test-" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("dataset CSV round-trips exactly") {
    GemmDataset ds = small_dataset(300, 42);
    for (auto& s : ds.samples) s.timestamp_ms = 0;  // not persisted

    const std::string text = to_csv_text(ds);
    GemmDataset back = gemm_dataset_from_csv_text(text);
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.samples == ds.samples);
    // Shortest round-trip formatting: a second pass is byte-identical.
    CHECK(to_csv_text(back) == text);

    TempDir dir;
    save_gemm_dataset(ds, dir.file("d.csv"));
    CHECK(load_gemm_dataset(dir.file("d.csv")).samples == ds.samples);
}

TEST_CASE("dataset CSV rejects the wrong kind and malformed rows") {
    ConvDataset conv;
    conv.samples.push_back({ConvInput{2, 4, 4, 2, 2, 1, 1, Dtype::f32},
                            ConvTuning{}, 1.5, "analytical", 0});
    const std::string conv_text = to_csv_text(conv);
    CHECK_THROWS_WITH_AS(gemm_dataset_from_csv_text(conv_text),
                         doctest::Contains("dataset header mismatch"),
                         std::runtime_error);

    GemmDataset ds = small_dataset(2, 1);
    std::string text = to_csv_text(ds);
    SUBCASE("truncated row") {
        text += "1,2,3\n";
        CHECK_THROWS_AS(gemm_dataset_from_csv_text(text), std::runtime_error);
    }
    SUBCASE("bad number") {
        text += "8,8,8,f32,0,0,1,1,1,1,1,1,1,1,fast,analytical\n";
        CHECK_THROWS_AS(gemm_dataset_from_csv_text(text), std::runtime_error);
    }
    SUBCASE("non-positive gflops") {
        text += "8,8,8,f32,0,0,1,1,1,1,1,1,1,1,0,analytical\n";
        CHECK_THROWS_AS(gemm_dataset_from_csv_text(text), std::runtime_error);
    }
    SUBCASE("backend tag that would corrupt the format") {
        ds.samples[0].backend = "a,b";
        CHECK_THROWS_AS(to_csv_text(ds), std::invalid_argument);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_gemm_dataset("no/such/file.csv"), std::runtime_error);
    }
}

TEST_CASE("dataset validation enforces legality, positivity and uniqueness") {
    GemmDataset ds = small_dataset(50, 7);
    CHECK_NOTHROW(validate_dataset(ds, kHw));

    SUBCASE("duplicate row") {
        ds.samples.push_back(ds.samples.front());
        CHECK_THROWS_AS(validate_dataset(ds, kHw), std::runtime_error);
    }
    SUBCASE("illegal tuning") {
        ds.samples[0].tuning = GemmTuning{4, 4, 4, 4, 1, 1, 1, 1};
        CHECK_THROWS_AS(validate_dataset(ds, kHw), std::runtime_error);
    }
    SUBCASE("non-finite gflops") {
        ds.samples[0].gflops = std::nan("");
        CHECK_THROWS_AS(validate_dataset(ds, kHw), std::runtime_error);
    }
}

TEST_CASE("training-set conversion encodes features and log targets") {
    GemmDataset ds = small_dataset(20, 3);
    TrainingSet set = to_training_set(ds);
    CHECK(set.dim == kGemmFeatureDim);
    CHECK(set.size() == 20);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto expect =
            encode_features(ds.samples[i].input, ds.samples[i].tuning);
        for (int d = 0; d < set.dim; ++d) {
            CHECK(set.row(i)[std::size_t(d)] == expect[std::size_t(d)]);
        }
        CHECK(set.targets[i] == std::log(ds.samples[i].gflops));
    }
}

TEST_CASE("log-uniform draws stay in range and hit both ends") {
    std::mt19937_64 rng(5);
    bool lo_seen = false, hi_seen = false;
    for (int i = 0; i < 2000; ++i) {
        const int v = log_uniform_int(rng, 3, 17);
        CHECK(v >= 3);
        CHECK(v <= 17);
        lo_seen = lo_seen || v == 3;
        hi_seen = hi_seen || v == 17;
    }
    CHECK(lo_seen);
    CHECK(hi_seen);
    CHECK(log_uniform_int(rng, 9, 9) == 9);
    CHECK_THROWS_AS(log_uniform_int(rng, 0, 4), std::invalid_argument);
    CHECK_THROWS_AS(log_uniform_int(rng, 5, 4), std::invalid_argument);
}

TEST_CASE("input distributions") {
    std::mt19937_64 rng(8);

    SUBCASE("list-only draws come from the list, honoring zero weights") {
        GemmInputDistribution dist;
        dist.use_ranges = false;
        dist.shapes = {{64, 64, 64, Dtype::f32, false, false},
                       {32, 32, 32, Dtype::f32, false, true}};
        dist.weights = {0.0, 1.0};
        dist.validate();
        for (int i = 0; i < 100; ++i) CHECK(dist.draw(rng) == dist.shapes[1]);
    }
    SUBCASE("range-only draws stay inside the configured box") {
        GemmInputDistribution dist;
        dist.m_lo = 16;
        dist.m_hi = 32;
        dist.n_lo = 8;
        dist.n_hi = 8;
        dist.k_lo = 100;
        dist.k_hi = 200;
        dist.dtype = Dtype::f64;
        dist.randomize_transpose = false;
        bool trans_seen = false;
        for (int i = 0; i < 200; ++i) {
            const GemmInput in = dist.draw(rng);
            CHECK(in.m >= 16);
            CHECK(in.m <= 32);
            CHECK(in.n == 8);
            CHECK(in.k >= 100);
            CHECK(in.k <= 200);
            CHECK(in.dtype == Dtype::f64);
            trans_seen = trans_seen || in.trans_a || in.trans_b;
        }
        CHECK_FALSE(trans_seen);
    }
    SUBCASE("fixed_fraction mixes the two sources") {
        GemmInputDistribution dist;
        dist.shapes = {{4096, 4096, 4096, Dtype::f32, false, false}};
        dist.fixed_fraction = 0.5;
        int list_hits = 0;
        for (int i = 0; i < 400; ++i) {
            if (dist.draw(rng) == dist.shapes[0]) ++list_hits;
        }
        CHECK(list_hits > 120);  // well away from 0 and 400
        CHECK(list_hits < 280);
    }
    SUBCASE("conv draws choose among the listed filter footprints") {
        ConvInputDistribution dist;
        for (int i = 0; i < 100; ++i) {
            const ConvInput in = dist.draw(rng);
            const bool one = in.r == 1 && in.s == 1;
            const bool three = in.r == 3 && in.s == 3;
            CHECK((one || three));
        }
    }
    SUBCASE("validation failures") {
        GemmInputDistribution dist;
        dist.use_ranges = false;
        CHECK_THROWS_AS(dist.validate(), std::invalid_argument);
        dist.shapes = {{4, 4, 4, Dtype::f32, false, false}};
        dist.weights = {1.0, 2.0};
        CHECK_THROWS_AS(dist.validate(), std::invalid_argument);
        dist.weights = {-1.0};
        CHECK_THROWS_AS(dist.validate(), std::invalid_argument);
        dist.weights.clear();
        dist.fixed_fraction = 1.5;
        CHECK_THROWS_AS(dist.validate(), std::invalid_argument);
    }
}

TEST_CASE("dataset generation is deterministic and duplicate-free") {
    GemmDataset a = small_dataset(200, 99);
    GemmDataset b = small_dataset(200, 99);
    GemmDataset c = small_dataset(200, 100);
    for (auto& s : a.samples) s.timestamp_ms = 0;
    for (auto& s : b.samples) s.timestamp_ms = 0;
    for (auto& s : c.samples) s.timestamp_ms = 0;
    CHECK(a.samples == b.samples);
    CHECK(a.samples != c.samples);
    CHECK_NOTHROW(validate_dataset(a, kHw));  // implies pairwise distinct
    for (const auto& s : a.samples) CHECK(s.backend == "analytical");
}

TEST_CASE("generation on a single-point space") {
    // One shape, one legal tuning: asking for one sample works, asking for
    // two exhausts the space and reports the stall.
    GemmBounds bounds;
    for (auto* list : {&bounds.m_s, &bounds.n_s, &bounds.m_l, &bounds.n_l,
                       &bounds.u, &bounds.k_s, &bounds.k_l, &bounds.k_g}) {
        *list = {1};
    }
    GemmInputDistribution dist;
    dist.use_ranges = false;
    dist.shapes = {{64, 64, 64, Dtype::f32, false, false}};

    const GemmInput probe = dist.shapes[0];
    auto model = calibrate(make_legality(probe, kHw), bounds.as_lists(), 100, 1);
    AnalyticalBackend backend(kHw);

    GenerateReport report;
    GemmDataset one = generate_gemm_dataset(backend, model, dist, bounds, kHw,
                                            1, 5, &report);
    CHECK(one.samples.size() == 1);
    CHECK(one.samples[0].tuning == GemmTuning{});
    CHECK(report.attempts == 1);
    CHECK(report.duplicates_rejected == 0);

    CHECK_THROWS_WITH_AS(
        generate_gemm_dataset(backend, model, dist, bounds, kHw, 2, 5),
        doctest::Contains("dataset generation stalled"), std::runtime_error);
}

TEST_CASE("predictors score tuning lists") {
    const GemmInput in{128, 128, 512, Dtype::f32, false, true};
    const auto space = enumerate_legal(in, kHw, GemmBounds::defaults());
    REQUIRE(space.size() > 10);

    SUBCASE("the analytical predictor is the log of the cost model") {
        AnalyticalPredictor pred(kHw);
        CHECK(pred.name() == "analytical-oracle");
        std::vector<double> out;
        pred.predict_gemm(in, space, out);
        REQUIRE(out.size() == space.size());
        for (std::size_t i = 0; i < space.size(); i += 97) {
            CHECK(out[i] == std::log(analytical_gflops(in, space[i], kHw)));
        }
    }
    SUBCASE("the mlp predictor runs the model on encoded features") {
        MlpModel model;
        model.feature_version = kGemmFeatureVersion;
        model.weights = init_weights({kGemmFeatureDim, {8}, true}, 4);
        MlpPredictor pred(model);
        CHECK(pred.name() == "mlp");
        std::vector<double> out;
        pred.predict_gemm(in, space, out);
        for (std::size_t i = 0; i < space.size(); i += 119) {
            CHECK(out[i] == model.predict(encode_features(in, space[i])));
        }
    }
    SUBCASE("kind mismatch is rejected up front") {
        MlpModel model;
        model.feature_version = kConvFeatureVersion;
        model.weights = init_weights({kConvFeatureDim, {4}, true}, 4);
        MlpPredictor pred(model);
        std::vector<double> out;
        CHECK_THROWS_WITH_AS(pred.predict_gemm(in, space, out),
                             doctest::Contains("model encodes"),
                             std::invalid_argument);
    }
}

TEST_CASE("inference re-measures the prediction front-runners") {
    const GemmInput in{100, 40, 5000, Dtype::f32, true, false};
    const GemmBounds bounds = GemmBounds::defaults();
    AnalyticalPredictor predictor(kHw);
    AnalyticalBackend backend(kHw);

    SUBCASE("with top_k covering the space the result is the true optimum") {
        auto res = infer_gemm(predictor, in, kHw, bounds, 1 << 20, backend);
        const auto space = enumerate_legal(in, kHw, bounds);
        CHECK(res.legal_space_size == std::int64_t(space.size()));
        CHECK(res.top_k.size() == space.size());
        double best = 0.0;
        for (const auto& t : space) {
            best = std::max(best, analytical_gflops(in, t, kHw));
        }
        CHECK(res.measured_gflops == best);
        CHECK(backend.measure(in, res.chosen) == best);
    }
    SUBCASE("top_k = 1 trusts the predictor") {
        auto res = infer_gemm(predictor, in, kHw, bounds, 1, backend);
        REQUIRE(res.top_k.size() == 1);
        CHECK(res.chosen == res.top_k[0].tuning);
        // The oracle predictor's single candidate is the true optimum too.
        auto full = infer_gemm(predictor, in, kHw, bounds, 1 << 20, backend);
        CHECK(res.measured_gflops == full.measured_gflops);
    }
    SUBCASE("candidates are ranked by prediction with lexicographic ties") {
        auto res = infer_gemm(predictor, in, kHw, bounds, 50, backend);
        REQUIRE(res.top_k.size() == 50);
        for (std::size_t i = 1; i < res.top_k.size(); ++i) {
            const auto& prev = res.top_k[i - 1];
            const auto& cur = res.top_k[i];
            const bool ordered =
                prev.predicted_log_gflops > cur.predicted_log_gflops ||
                (prev.predicted_log_gflops == cur.predicted_log_gflops &&
                 to_values(prev.tuning) < to_values(cur.tuning));
            CHECK(ordered);
        }
    }
    SUBCASE("bad arguments") {
        CHECK_THROWS_AS(infer_gemm(predictor, in, kHw, bounds, 0, backend),
                        std::invalid_argument);
        GemmBounds empty_space;
        for (auto* list : {&empty_space.m_s, &empty_space.n_s, &empty_space.m_l,
                           &empty_space.n_l, &empty_space.u, &empty_space.k_s,
                           &empty_space.k_l, &empty_space.k_g}) {
            *list = {4};  // 4x4 thread tile needs 32 registers: never legal
        }
        CHECK_THROWS_WITH_AS(
            infer_gemm(predictor, in, kHw, empty_space, 1, backend),
            "no legal configuration for this input", std::runtime_error);
    }
}

TEST_CASE("conv inference works end to end on the reduced bounds") {
    const ConvInput in{16, 24, 240, 32, 16, 3, 3, Dtype::f32};
    const ConvBounds bounds = ConvBounds::load("fixtures/bounds/conv_small.json");
    AnalyticalPredictor predictor(kHw);
    AnalyticalBackend backend(kHw);
    auto res = infer_conv(predictor, in, kHw, bounds, 1 << 20, backend);
    CHECK(res.legal_space_size == 14448);
    double best = 0.0;
    for (const auto& t : enumerate_legal(in, kHw, bounds)) {
        best = std::max(best, analytical_gflops(in, t, kHw));
    }
    CHECK(res.measured_gflops == best);
}

TEST_CASE("inference results round-trip through JSON") {
    const GemmInput in{64, 64, 1024, Dtype::f64, false, true};
    AnalyticalPredictor predictor(kHw);
    AnalyticalBackend backend(kHw);
    auto res = infer_gemm(predictor, in, kHw, GemmBounds::defaults(), 5, backend);

    const std::string text = to_json_text(res);
    GemmInferenceResult back = gemm_result_from_json_text(text);
    CHECK(back == res);
    CHECK(to_json_text(back) == text);

    CHECK_THROWS_AS(gemm_result_from_json_text("nope"), std::runtime_error);
    CHECK_THROWS_WITH_AS(conv_result_from_json_text(text),
                         "not a conv inference result", std::runtime_error);
}

TEST_CASE("cache keys are stable per input") {
    const GemmInput a{64, 64, 1024, Dtype::f64, false, true};
    GemmInput b = a;
    CHECK(cache_key(a) == cache_key(b));
    b.trans_b = false;
    CHECK(cache_key(a) != cache_key(b));
    CHECK(cache_key(a).starts_with("gemm-"));
    CHECK(cache_key(a).ends_with(".json"));
    const ConvInput c{16, 24, 240, 32, 16, 3, 3, Dtype::f32};
    CHECK(cache_key(c).starts_with("conv-"));
}

TEST_CASE("result cache stores, hits and tolerates corruption") {
    TempDir dir;
    ResultCache cache(dir.file("cache"));

    const GemmInput in{80, 80, 2000, Dtype::f32, false, false};
    CHECK_FALSE(cache.lookup(in).has_value());

    AnalyticalPredictor predictor(kHw);
    AnalyticalBackend backend(kHw);
    auto res = infer_gemm(predictor, in, kHw, GemmBounds::defaults(), 3, backend);
    cache.store(res);

    auto hit = cache.lookup(in);
    REQUIRE(hit.has_value());
    CHECK(*hit == res);

    SUBCASE("corrupt entries are skipped, not fatal") {
        std::ofstream out(std::filesystem::path(cache.dir()) / cache_key(in),
                          std::ios::trunc);
        out << "{ broken";
        out.close();
        CHECK_FALSE(cache.lookup(in).has_value());
    }
    SUBCASE("entries whose stored input differs are skipped") {
        GemmInput other = in;
        other.k = 4000;
        // Plant the result for `in` under the key of `other`.
        std::filesystem::copy_file(
            std::filesystem::path(cache.dir()) / cache_key(in),
            std::filesystem::path(cache.dir()) / cache_key(other));
        CHECK_FALSE(cache.lookup(other).has_value());
    }
    SUBCASE("the environment variable overrides the fallback directory") {
        setenv(kCacheDirEnvVar, dir.file("env-cache").c_str(), 1);
        ResultCache env_cache = ResultCache::from_env_or(dir.file("unused"));
        CHECK(env_cache.dir() == dir.file("env-cache"));
        unsetenv(kCacheDirEnvVar);
        ResultCache fb = ResultCache::from_env_or(dir.file("fallback"));
        CHECK(fb.dir() == dir.file("fallback"));
    }
    SUBCASE("empty directory is rejected") {
        CHECK_THROWS_AS(ResultCache(""), std::invalid_argument);
    }
}
