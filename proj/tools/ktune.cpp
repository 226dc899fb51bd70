// Command-line front end: calibrate, generate, train, infer, bench, report.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, missing
// or malformed prerequisite files). Usage errors are raised before any
// artifact is written, and artifact writes are atomic (tmp + rename), so a
// failed invocation never leaves partial files behind.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ktune/backends.hpp"
#include "ktune/param_space.hpp"
#include "ktune/perf_model.hpp"
#include "ktune/pipeline.hpp"
#include "ktune/sampler.hpp"

namespace {

using nlohmann::json;
using namespace ktune;

// Bad configuration or missing prerequisite: exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void require_file(const std::string& path, const std::string& what,
                  const std::string& hint) {
    if (path.empty()) {
        throw UsageError(what + " required: " + hint);
    }
    if (!std::filesystem::exists(path)) {
        throw UsageError(what + " not found: " + path + " — " + hint);
    }
}

void atomic_write(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// Machine-readable report. All wall-clock measurements live under the
// "timing" key; everything else is deterministic given inputs and seed.
void write_report(const std::string& path, json j, json timing) {
    if (path.empty()) return;
    j["timing"] = std::move(timing);
    atomic_write(path, j.dump(2) + "\n");
}

HardwareDescriptor load_hw(const std::string& path) {
    require_file(path, "hardware descriptor", "pass --hw <file>");
    try {
        return HardwareDescriptor::load(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

template <typename Bounds>
Bounds load_bounds(const std::string& path) {
    require_file(path, "bounds file", "pass --bounds <file>");
    try {
        return Bounds::load(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

CategoricalModel load_sampler(const std::string& path) {
    require_file(path, "sampler model", "run `ktune calibrate` first");
    try {
        return CategoricalModel::load(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

MlpModel load_model(const std::string& path) {
    require_file(path, "performance model", "run `ktune train` first");
    try {
        return MlpModel::load(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

std::string detect_dataset_kind(const std::string& path) {
    require_file(path, "dataset", "run `ktune generate` first");
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header == kGemmCsvHeader) return "gemm";
    if (header == kConvCsvHeader) return "conv";
    throw UsageError("dataset " + path + " has an unrecognized header");
}

struct NamedGemm {
    std::string name;
    GemmInput input;
};
struct NamedConv {
    std::string name;
    ConvInput input;
};

struct ShapeFile {
    std::string kind;
    std::vector<NamedGemm> gemm;
    std::vector<NamedConv> conv;
};

ShapeFile load_shapes(const std::string& path) {
    require_file(path, "shapes file", "pass --shapes <file>");
    std::ifstream in(path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw UsageError("shapes file " + path + " is not valid JSON");
    }
    ShapeFile out;
    try {
        out.kind = j.at("kind").get<std::string>();
        for (const auto& js : j.at("shapes")) {
            if (out.kind == "gemm") {
                NamedGemm s;
                s.name = js.at("name").get<std::string>();
                s.input.m = js.at("m").get<int>();
                s.input.n = js.at("n").get<int>();
                s.input.k = js.at("k").get<int>();
                s.input.dtype = dtype_from_string(js.at("dtype").get<std::string>());
                s.input.trans_a = js.at("trans_a").get<bool>();
                s.input.trans_b = js.at("trans_b").get<bool>();
                s.input.validate();
                out.gemm.push_back(std::move(s));
            } else if (out.kind == "conv") {
                NamedConv s;
                s.name = js.at("name").get<std::string>();
                s.input.n_batch = js.at("n").get<int>();
                s.input.p = js.at("p").get<int>();
                s.input.q = js.at("q").get<int>();
                s.input.k_filters = js.at("k").get<int>();
                s.input.c = js.at("c").get<int>();
                s.input.r = js.at("r").get<int>();
                s.input.s = js.at("s").get<int>();
                s.input.dtype = dtype_from_string(js.at("dtype").get<std::string>());
                s.input.validate();
                out.conv.push_back(std::move(s));
            } else {
                throw UsageError("shapes file kind must be gemm or conv");
            }
        }
    } catch (const json::exception& e) {
        throw UsageError("bad shapes file " + path + ": " + e.what());
    }
    if (out.gemm.empty() && out.conv.empty()) {
        throw UsageError("shapes file " + path + " lists no shapes");
    }
    return out;
}

std::unique_ptr<MeasurementBackend> make_backend(const std::string& name,
                                                 const HardwareDescriptor& hw) {
    if (name == "analytical") return std::make_unique<AnalyticalBackend>(hw);
    if (name == "cpu") return std::make_unique<CpuBackend>(hw);
    throw UsageError("unknown backend '" + name + "' (expected analytical|cpu)");
}

json tuning_json(const GemmTuning& t) {
    json j;
    const auto& names = gemm_param_names();
    const auto vals = to_values(t);
    for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = vals[i];
    return j;
}

json tuning_json(const ConvTuning& t) {
    json j;
    const auto& names = conv_param_names();
    const auto vals = to_values(t);
    for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = vals[i];
    return j;
}

std::string tuning_text(const std::vector<int>& vals) {
    std::string s;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(vals[i]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateArgs {
    std::string kind = "gemm";
    std::string hw_path, bounds_path, out_path, report_path;
    std::string dtype = "f32";
    std::uint64_t seed = 0;
    std::int64_t draws = kDefaultCalibrationDraws;
    std::int64_t trials = 10000;
    double alpha = 100.0;
};

int cmd_calibrate(const CalibrateArgs& a) {
    const HardwareDescriptor hw = load_hw(a.hw_path);
    const Dtype dtype = dtype_from_string(a.dtype);
    if (a.out_path.empty()) {
        throw UsageError("pass --out <file> for the sampler model");
    }

    LegalityFn legal;
    std::vector<std::vector<int>> lists;
    if (a.kind == "gemm") {
        auto bounds = load_bounds<GemmBounds>(a.bounds_path);
        lists = bounds.as_lists();
        legal = make_legality(GemmInput{512, 512, 512, dtype, false, false}, hw);
    } else if (a.kind == "conv") {
        auto bounds = load_bounds<ConvBounds>(a.bounds_path);
        lists = bounds.as_lists();
        legal = make_legality(ConvInput{16, 24, 240, 32, 16, 3, 3, dtype}, hw);
    } else {
        throw UsageError("--kind must be gemm or conv");
    }

    const double t0 = now_s();
    CategoricalModel model = calibrate(legal, lists, a.draws, a.seed, a.alpha);
    const double cat = acceptance_rate(model, legal, a.trials, a.seed + 1);
    const double uni = uniform_acceptance_rate(lists, legal, a.trials, a.seed + 2);
    const double elapsed = now_s() - t0;

    model.save(a.out_path);

    std::printf("sampler model written to %s\n", a.out_path.c_str());
    std::printf("%-12s %12s %12s\n", "", "categorical", "uniform");
    std::printf("%-12s %11.2f%% %11.2f%%\n", "acceptance", 100 * cat, 100 * uni);
    if (uni > 0) {
        std::printf("%-12s %11.1fx\n", "improvement", cat / uni);
    }

    json j;
    j["format"] = "ktune-report-1";
    j["command"] = "calibrate";
    j["kind"] = a.kind;
    j["alpha"] = a.alpha;
    j["draws"] = a.draws;
    j["trials"] = a.trials;
    j["seed"] = a.seed;
    j["acceptance"] = {{"categorical", cat},
                       {"uniform", uni},
                       {"ratio", uni > 0 ? cat / uni : 0.0}};
    j["outputs"] = {{"sampler_model", a.out_path}};
    write_report(a.report_path, j, {{"seconds", elapsed}});
    return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string hw_path, bounds_path, sampler_path, shapes_path, out_path,
        report_path;
    std::string backend = "analytical";
    std::string dtype = "f32";
    std::uint64_t seed = 0;
    std::int64_t samples = 1000;
    double shape_fraction = 0.5;
};

int cmd_generate(const GenerateArgs& a) {
    const HardwareDescriptor hw = load_hw(a.hw_path);
    CategoricalModel sampler = load_sampler(a.sampler_path);
    if (a.out_path.empty()) {
        throw UsageError("pass --out <file> for the dataset CSV");
    }
    if (a.samples < 1) throw UsageError("--samples must be >= 1");

    // The sampler model records one categorical per tuning dimension, which
    // identifies the problem kind.
    std::string kind;
    if (sampler.params.size() == gemm_param_names().size()) kind = "gemm";
    else if (sampler.params.size() == conv_param_names().size()) kind = "conv";
    else throw UsageError("sampler model has an unrecognized dimensionality");

    ShapeFile shapes;
    if (!a.shapes_path.empty()) {
        shapes = load_shapes(a.shapes_path);
        if (shapes.kind != kind) {
            throw UsageError("shapes file kind (" + shapes.kind +
                             ") does not match the sampler model (" + kind + ")");
        }
    }

    auto backend = make_backend(a.backend, hw);
    const double t0 = now_s();
    GenerateReport rep;
    json j;
    j["format"] = "ktune-report-1";
    j["command"] = "generate";
    j["kind"] = kind;
    j["samples"] = a.samples;
    j["seed"] = a.seed;
    j["backend"] = a.backend;

    if (kind == "gemm") {
        auto bounds = load_bounds<GemmBounds>(a.bounds_path);
        GemmInputDistribution dist;
        dist.dtype = dtype_from_string(a.dtype);
        dist.fixed_fraction = a.shape_fraction;
        for (const auto& s : shapes.gemm) dist.shapes.push_back(s.input);
        auto ds = generate_gemm_dataset(*backend, sampler, dist, bounds, hw,
                                        int(a.samples), a.seed, &rep);
        save_gemm_dataset(ds, a.out_path);
        double lo = 1e300, hi = 0;
        for (const auto& s : ds.samples) {
            lo = std::min(lo, s.gflops);
            hi = std::max(hi, s.gflops);
        }
        std::printf("wrote %zu gemm samples to %s (gflops %.2f .. %.2f)\n",
                    ds.samples.size(), a.out_path.c_str(), lo, hi);
        j["gflops_min"] = lo;
        j["gflops_max"] = hi;
    } else {
        auto bounds = load_bounds<ConvBounds>(a.bounds_path);
        ConvInputDistribution dist;
        dist.dtype = dtype_from_string(a.dtype);
        dist.fixed_fraction = a.shape_fraction;
        for (const auto& s : shapes.conv) dist.shapes.push_back(s.input);
        auto ds = generate_conv_dataset(*backend, sampler, dist, bounds, hw,
                                        int(a.samples), a.seed, &rep);
        save_conv_dataset(ds, a.out_path);
        double lo = 1e300, hi = 0;
        for (const auto& s : ds.samples) {
            lo = std::min(lo, s.gflops);
            hi = std::max(hi, s.gflops);
        }
        std::printf("wrote %zu conv samples to %s (gflops %.2f .. %.2f)\n",
                    ds.samples.size(), a.out_path.c_str(), lo, hi);
        j["gflops_min"] = lo;
        j["gflops_max"] = hi;
    }
    std::printf("sampler draws: %lld (%lld duplicate redraws)\n",
                (long long)rep.attempts, (long long)rep.duplicates_rejected);
    j["attempts"] = rep.attempts;
    j["duplicates_rejected"] = rep.duplicates_rejected;
    j["outputs"] = {{"dataset", a.out_path}};
    write_report(a.report_path, j, {{"seconds", now_s() - t0}});
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset_path, out_path, report_path;
    std::vector<int> hidden = {32, 64, 32};
    int epochs = 200;
    double lr = 1e-3;
    int batch = 256;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    bool raw_features = false;
};

int cmd_train(const TrainArgs& a) {
    const std::string kind = detect_dataset_kind(a.dataset_path);
    if (a.out_path.empty()) {
        throw UsageError("pass --out <file> for the trained model");
    }

    TrainingSet data;
    if (kind == "gemm") {
        data = to_training_set(load_gemm_dataset(a.dataset_path));
    } else {
        data = to_training_set(load_conv_dataset(a.dataset_path));
    }

    MlpArchitecture arch;
    arch.input_dim = data.dim;
    arch.hidden_sizes = a.hidden;
    arch.log_inputs = !a.raw_features;

    TrainConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.rng_seed = a.seed;
    cfg.validation_fraction = a.val_fraction;

    const double t0 = now_s();
    TrainResult res = mlp_train(data, arch, cfg);
    const double elapsed = now_s() - t0;

    MlpModel model;
    model.feature_version =
        kind == "gemm" ? kGemmFeatureVersion : kConvFeatureVersion;
    model.weights = res.weights;
    model.save(a.out_path);

    std::printf("trained on %zu rows (%s), %d epochs\n", data.size(),
                kind.c_str(), a.epochs);
    std::printf("best validation MSE %.6f at epoch %d\n", res.best_val_mse,
                res.best_epoch);
    std::printf("model written to %s\n", a.out_path.c_str());

    json j;
    j["format"] = "ktune-report-1";
    j["command"] = "train";
    j["kind"] = kind;
    j["rows"] = data.size();
    j["epochs"] = a.epochs;
    j["seed"] = a.seed;
    j["hidden"] = a.hidden;
    j["log_features"] = !a.raw_features;
    j["best_epoch"] = res.best_epoch;
    j["best_val_mse"] = res.best_val_mse;
    json hist = json::array();
    for (const auto& e : res.history) {
        hist.push_back({{"train_mse", e.train_mse}, {"val_mse", e.val_mse}});
    }
    j["history"] = std::move(hist);
    j["outputs"] = {{"model", a.out_path}};
    write_report(a.report_path, j, {{"seconds", elapsed}});
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
    std::string model_path, hw_path, bounds_path, out_path;
    std::string backend = "analytical";
    std::string dtype = "f32";
    std::vector<int> shape;
    bool trans_a = false, trans_b = false;
    int top_k = kDefaultTopK;
    std::string cache_dir = ".ktune-cache";
    bool no_cache = false;
};

int cmd_infer(const InferArgs& a) {
    MlpModel model = load_model(a.model_path);
    const HardwareDescriptor hw = load_hw(a.hw_path);
    auto backend = make_backend(a.backend, hw);
    MlpPredictor predictor(std::move(model));

    std::optional<ResultCache> cache;
    if (!a.no_cache) cache.emplace(ResultCache::from_env_or(a.cache_dir));

    if (a.shape.size() == 3) {
        GemmInput in{a.shape[0], a.shape[1], a.shape[2],
                     dtype_from_string(a.dtype), a.trans_a, a.trans_b};
        in.validate();
        if (cache) {
            if (auto hit = cache->lookup(in)) {
                std::printf("cache hit (%s)\n",
                            (std::filesystem::path(cache->dir()) / cache_key(in))
                                .string()
                                .c_str());
                std::printf("chosen: %s\n",
                            tuning_text(to_values(hit->chosen)).c_str());
                std::printf("measured: %.3f gflops\n", hit->measured_gflops);
                if (!a.out_path.empty()) atomic_write(a.out_path, to_json_text(*hit));
                return 0;
            }
        }
        auto bounds = load_bounds<GemmBounds>(a.bounds_path);
        auto res = infer_gemm(predictor, in, hw, bounds, a.top_k, *backend);
        if (cache) cache->store(res);
        std::printf("legal space: %lld, re-measured top %zu\n",
                    (long long)res.legal_space_size, res.top_k.size());
        std::printf("chosen (m_s n_s m_l n_l u k_s k_l k_g): %s\n",
                    tuning_text(to_values(res.chosen)).c_str());
        std::printf("predicted: %.3f log-gflops, measured: %.3f gflops\n",
                    res.predicted_log_gflops, res.measured_gflops);
        if (!a.out_path.empty()) atomic_write(a.out_path, to_json_text(res));
        return 0;
    }
    if (a.shape.size() == 7) {
        ConvInput in{a.shape[0], a.shape[1], a.shape[2], a.shape[3],
                     a.shape[4], a.shape[5], a.shape[6],
                     dtype_from_string(a.dtype)};
        in.validate();
        if (cache) {
            if (auto hit = cache->lookup(in)) {
                std::printf("cache hit\n");
                std::printf("chosen: %s\n",
                            tuning_text(to_values(hit->chosen)).c_str());
                std::printf("measured: %.3f gflops\n", hit->measured_gflops);
                if (!a.out_path.empty()) atomic_write(a.out_path, to_json_text(*hit));
                return 0;
            }
        }
        auto bounds = load_bounds<ConvBounds>(a.bounds_path);
        auto res = infer_conv(predictor, in, hw, bounds, a.top_k, *backend);
        if (cache) cache->store(res);
        std::printf("legal space: %lld, re-measured top %zu\n",
                    (long long)res.legal_space_size, res.top_k.size());
        std::printf("chosen: %s\n", tuning_text(to_values(res.chosen)).c_str());
        std::printf("predicted: %.3f log-gflops, measured: %.3f gflops\n",
                    res.predicted_log_gflops, res.measured_gflops);
        if (!a.out_path.empty()) atomic_write(a.out_path, to_json_text(res));
        return 0;
    }
    throw UsageError(
        "--shape takes m,n,k for gemm or n,p,q,k,c,r,s for conv (got " +
        std::to_string(a.shape.size()) + " values)");
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string model_path, hw_path, bounds_path, shapes_path, out_path;
    std::string backend = "analytical";
    int top_k = kDefaultTopK;
    bool exhaustive = false;
};

int cmd_bench(const BenchArgs& a) {
    const HardwareDescriptor hw = load_hw(a.hw_path);
    ShapeFile shapes = load_shapes(a.shapes_path);
    auto backend = make_backend(a.backend, hw);

    std::unique_ptr<PerfPredictor> predictor;
    if (a.exhaustive || a.model_path.empty()) {
        predictor = std::make_unique<AnalyticalPredictor>(hw);
    } else {
        predictor = std::make_unique<MlpPredictor>(load_model(a.model_path));
    }

    json rows = json::array();
    const double t0 = now_s();
    if (shapes.kind == "gemm") {
        auto bounds = load_bounds<GemmBounds>(a.bounds_path);
        std::printf("%-20s %6s %6s %6s  %-24s %10s\n", "shape", "m", "n", "k",
                    "tuning (m_s n_s m_l n_l u k_s k_l k_g)", "gflops");
        for (const auto& s : shapes.gemm) {
            int top_k = a.top_k;
            if (a.exhaustive || a.model_path.empty()) {
                top_k = std::numeric_limits<int>::max() / 2;
            }
            auto res = infer_gemm(*predictor, s.input, hw, bounds, top_k,
                                  *backend);
            std::printf("%-20s %6lld %6lld %6lld  %-24s %10.2f\n",
                        s.name.c_str(), (long long)s.input.m,
                        (long long)s.input.n, (long long)s.input.k,
                        tuning_text(to_values(res.chosen)).c_str(),
                        res.measured_gflops);
            rows.push_back({{"name", s.name},
                            {"m", s.input.m},
                            {"n", s.input.n},
                            {"k", s.input.k},
                            {"trans_a", s.input.trans_a},
                            {"trans_b", s.input.trans_b},
                            {"dtype", to_string(s.input.dtype)},
                            {"chosen", tuning_json(res.chosen)},
                            {"measured_gflops", res.measured_gflops},
                            {"legal_space_size", res.legal_space_size}});
        }
    } else {
        auto bounds = load_bounds<ConvBounds>(a.bounds_path);
        std::printf("%-20s  %-36s %10s\n", "shape",
                    "tuning (k_s p_s q_s n_s k_l p_l q_l n_l u c_s c_l c_g)",
                    "gflops");
        for (const auto& s : shapes.conv) {
            int top_k = a.top_k;
            if (a.exhaustive || a.model_path.empty()) {
                top_k = std::numeric_limits<int>::max() / 2;
            }
            auto res = infer_conv(*predictor, s.input, hw, bounds, top_k,
                                  *backend);
            std::printf("%-20s  %-36s %10.2f\n", s.name.c_str(),
                        tuning_text(to_values(res.chosen)).c_str(),
                        res.measured_gflops);
            rows.push_back({{"name", s.name},
                            {"n", s.input.n_batch},
                            {"p", s.input.p},
                            {"q", s.input.q},
                            {"k", s.input.k_filters},
                            {"c", s.input.c},
                            {"r", s.input.r},
                            {"s", s.input.s},
                            {"dtype", to_string(s.input.dtype)},
                            {"chosen", tuning_json(res.chosen)},
                            {"measured_gflops", res.measured_gflops},
                            {"legal_space_size", res.legal_space_size}});
        }
    }

    json j;
    j["format"] = "ktune-report-1";
    j["command"] = "bench";
    j["kind"] = shapes.kind;
    j["backend"] = a.backend;
    j["mode"] = (a.exhaustive || a.model_path.empty()) ? "exhaustive" : "model";
    j["results"] = std::move(rows);
    write_report(a.out_path, j, {{"seconds", now_s() - t0}});
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string dataset_path, model_path, out_path;
};

int cmd_report(const ReportArgs& a) {
    const std::string kind = detect_dataset_kind(a.dataset_path);
    TrainingSet data;
    std::size_t rows = 0;
    double lo = 1e300, hi = 0, sum = 0;
    if (kind == "gemm") {
        auto ds = load_gemm_dataset(a.dataset_path);
        rows = ds.samples.size();
        for (const auto& s : ds.samples) {
            lo = std::min(lo, s.gflops);
            hi = std::max(hi, s.gflops);
            sum += s.gflops;
        }
        data = to_training_set(ds);
    } else {
        auto ds = load_conv_dataset(a.dataset_path);
        rows = ds.samples.size();
        for (const auto& s : ds.samples) {
            lo = std::min(lo, s.gflops);
            hi = std::max(hi, s.gflops);
            sum += s.gflops;
        }
        data = to_training_set(ds);
    }
    if (rows == 0) throw UsageError("dataset is empty");

    std::printf("dataset: %s (%s)\n", a.dataset_path.c_str(), kind.c_str());
    std::printf("rows: %zu\n", rows);
    std::printf("gflops: min %.3f  mean %.3f  max %.3f\n", lo, sum / double(rows),
                hi);

    json j;
    j["format"] = "ktune-report-1";
    j["command"] = "report";
    j["kind"] = kind;
    j["dataset"] = a.dataset_path;
    j["rows"] = rows;
    j["gflops"] = {{"min", lo}, {"mean", sum / double(rows)}, {"max", hi}};

    if (!a.model_path.empty()) {
        MlpModel model = load_model(a.model_path);
        const char* expect =
            kind == "gemm" ? kGemmFeatureVersion : kConvFeatureVersion;
        if (model.feature_version != expect) {
            throw UsageError("model encodes '" + model.feature_version +
                             "' but the dataset is " + kind);
        }
        const double mse = mlp_evaluate(model.weights, data);
        std::printf("model %s: MSE %.6f (log-gflops)\n", a.model_path.c_str(),
                    mse);
        j["model"] = a.model_path;
        j["mse_log_gflops"] = mse;
    }
    write_report(a.out_path, j, json::object());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"input-aware kernel auto-tuning pipeline"};
    app.require_subcommand(1);

    CalibrateArgs cal;
    auto* c1 = app.add_subcommand("calibrate",
                                  "fit the categorical sampler from uniform draws");
    c1->add_option("--kind", cal.kind, "gemm or conv");
    c1->add_option("--hw", cal.hw_path, "hardware descriptor JSON");
    c1->add_option("--bounds", cal.bounds_path, "parameter bounds JSON");
    c1->add_option("--dtype", cal.dtype, "f32|f64|f16");
    c1->add_option("--seed", cal.seed, "rng seed (default 0)");
    c1->add_option("--draws", cal.draws, "uniform calibration draws");
    c1->add_option("--trials", cal.trials, "acceptance-rate trials");
    c1->add_option("--alpha", cal.alpha, "Dirichlet pseudo-count");
    c1->add_option("--out", cal.out_path, "sampler model output path");
    c1->add_option("--report", cal.report_path, "JSON report path");

    GenerateArgs gen;
    auto* c2 = app.add_subcommand("generate", "sample, measure, and record a dataset");
    c2->add_option("--hw", gen.hw_path, "hardware descriptor JSON");
    c2->add_option("--bounds", gen.bounds_path, "parameter bounds JSON");
    c2->add_option("--sampler", gen.sampler_path, "calibrated sampler model");
    c2->add_option("--shapes", gen.shapes_path, "fixture shapes JSON (optional)");
    c2->add_option("--shape-fraction", gen.shape_fraction,
                   "probability of drawing a fixture shape");
    c2->add_option("--backend", gen.backend, "analytical|cpu");
    c2->add_option("--dtype", gen.dtype, "f32|f64");
    c2->add_option("--samples", gen.samples, "number of samples");
    c2->add_option("--seed", gen.seed, "rng seed (default 0)");
    c2->add_option("--out", gen.out_path, "dataset CSV output path");
    c2->add_option("--report", gen.report_path, "JSON report path");

    TrainArgs trn;
    auto* c3 = app.add_subcommand("train", "fit the MLP performance model");
    c3->add_option("--dataset", trn.dataset_path, "dataset CSV");
    c3->add_option("--hidden", trn.hidden, "hidden layer sizes")->delimiter(',');
    c3->add_option("--epochs", trn.epochs, "training epochs");
    c3->add_option("--lr", trn.lr, "learning rate");
    c3->add_option("--batch", trn.batch, "minibatch size");
    c3->add_option("--val-fraction", trn.val_fraction, "validation split");
    c3->add_option("--seed", trn.seed, "rng seed (default 0)");
    c3->add_flag("--raw-features", trn.raw_features,
                 "skip the log transform of input features");
    c3->add_option("--out", trn.out_path, "model output path");
    c3->add_option("--report", trn.report_path, "JSON report path");

    InferArgs inf;
    auto* c4 = app.add_subcommand("infer", "pick a tuning for one input shape");
    c4->add_option("--model", inf.model_path, "trained model JSON");
    c4->add_option("--hw", inf.hw_path, "hardware descriptor JSON");
    c4->add_option("--bounds", inf.bounds_path, "parameter bounds JSON");
    c4->add_option("--backend", inf.backend, "analytical|cpu");
    c4->add_option("--dtype", inf.dtype, "f32|f64");
    c4->add_option("--shape", inf.shape, "m,n,k or n,p,q,k,c,r,s")
        ->delimiter(',')
        ->required();
    c4->add_flag("--trans-a", inf.trans_a, "transpose A (gemm)");
    c4->add_flag("--trans-b", inf.trans_b, "transpose B (gemm)");
    c4->add_option("--top-k", inf.top_k, "candidates to re-measure");
    c4->add_option("--cache-dir", inf.cache_dir,
                   "result cache directory (env KTUNE_CACHE_DIR overrides)");
    c4->add_flag("--no-cache", inf.no_cache, "bypass the result cache");
    c4->add_option("--out", inf.out_path, "result JSON path");

    BenchArgs ben;
    auto* c5 = app.add_subcommand("bench", "replay a fixture shape table");
    c5->add_option("--model", ben.model_path, "trained model JSON (optional)");
    c5->add_option("--hw", ben.hw_path, "hardware descriptor JSON");
    c5->add_option("--bounds", ben.bounds_path, "parameter bounds JSON");
    c5->add_option("--shapes", ben.shapes_path, "fixture shapes JSON");
    c5->add_option("--backend", ben.backend, "analytical|cpu");
    c5->add_option("--top-k", ben.top_k, "candidates to re-measure");
    c5->add_flag("--exhaustive", ben.exhaustive,
                 "measure the whole legal space instead of using the model");
    c5->add_option("--out", ben.out_path, "JSON report path");

    ReportArgs rep;
    auto* c6 = app.add_subcommand("report", "summarize a dataset (and model fit)");
    c6->add_option("--dataset", rep.dataset_path, "dataset CSV");
    c6->add_option("--model", rep.model_path, "model JSON to evaluate (optional)");
    c6->add_option("--out", rep.out_path, "JSON report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (c1->parsed()) return cmd_calibrate(cal);
        if (c2->parsed()) return cmd_generate(gen);
        if (c3->parsed()) return cmd_train(trn);
        if (c4->parsed()) return cmd_infer(inf);
        if (c5->parsed()) return cmd_bench(ben);
        if (c6->parsed()) return cmd_report(rep);
        std::fprintf(stderr, "error: no subcommand\n");
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
