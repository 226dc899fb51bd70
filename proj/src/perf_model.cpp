#include "ktune/perf_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "ktune/sampler.hpp"  // portable rng helpers

namespace ktune {

void MlpArchitecture::validate() const {
    if (input_dim < 1) {
        throw std::invalid_argument("architecture input_dim must be >= 1");
    }
    for (int h : hidden_sizes) {
        if (h < 1) {
            throw std::invalid_argument("hidden layer sizes must be >= 1");
        }
    }
}

int MlpWeights::input_dim() const {
    if (layers.empty()) {
        throw std::invalid_argument("mlp has no layers");
    }
    return layers.front().in;
}

void MlpWeights::validate() const {
    if (layers.empty()) {
        throw std::invalid_argument("mlp has no layers");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.in < 1 || layer.out < 1) {
            throw std::invalid_argument("mlp layer with empty dimension");
        }
        if (layer.w.size() != std::size_t(layer.in) * std::size_t(layer.out) ||
            layer.b.size() != std::size_t(layer.out)) {
            throw std::invalid_argument("mlp layer weight shape mismatch");
        }
        if (l + 1 < layers.size() && layers[l + 1].in != layer.out) {
            throw std::invalid_argument("mlp layer widths do not chain");
        }
    }
    if (layers.back().out != 1) {
        throw std::invalid_argument("mlp output layer must have one unit");
    }
}

MlpWeights init_weights(const MlpArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    MlpWeights w;
    w.log_inputs = arch.log_inputs;
    std::mt19937_64 rng(seed);
    int prev = arch.input_dim;
    auto make_layer = [&](int in, int out) {
        MlpLayer layer;
        layer.in = in;
        layer.out = out;
        layer.w.resize(std::size_t(in) * out);
        layer.b.assign(std::size_t(out), 0.0);
        const double bound = std::sqrt(6.0 / double(in + out));
        for (auto& x : layer.w) x = (2.0 * unit_real(rng) - 1.0) * bound;
        return layer;
    };
    for (int h : arch.hidden_sizes) {
        w.layers.push_back(make_layer(prev, h));
        prev = h;
    }
    w.layers.push_back(make_layer(prev, 1));
    return w;
}

namespace {

void preprocess(const MlpWeights& w, std::span<const double> x,
                std::vector<double>& out) {
    out.resize(x.size());
    if (!w.log_inputs) {
        std::copy(x.begin(), x.end(), out.begin());
        return;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) {
            throw std::invalid_argument(
                "features must be strictly positive under the log transform");
        }
        out[i] = std::log(x[i]);
    }
}

// z[b,o] = sum_i a[b,i] * w[o,i] + bias[o]
void affine_forward(const MlpLayer& layer, const std::vector<double>& a,
                    std::size_t batch, std::vector<double>& z) {
    z.resize(batch * std::size_t(layer.out));
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* arow = a.data() + bi * std::size_t(layer.in);
        double* zrow = z.data() + bi * std::size_t(layer.out);
        for (int o = 0; o < layer.out; ++o) {
            const double* wrow = layer.w.data() + std::size_t(o) * layer.in;
            double acc = layer.b[std::size_t(o)];
            for (int i = 0; i < layer.in; ++i) acc += arow[i] * wrow[i];
            zrow[o] = acc;
        }
    }
}

struct BatchWork {
    std::vector<std::vector<double>> acts;  // acts[l]: input to layer l
    std::vector<std::vector<double>> zs;    // zs[l]: pre-activation of layer l
};

// Populates work.acts / work.zs; returns predictions via the last z column.
void forward_batch(const MlpWeights& w, const std::vector<double>& x,
                   std::size_t batch, BatchWork& work) {
    const std::size_t L = w.layers.size();
    work.acts.resize(L);
    work.zs.resize(L);
    work.acts[0] = x;  // already preprocessed
    for (std::size_t l = 0; l < L; ++l) {
        affine_forward(w.layers[l], work.acts[l], batch, work.zs[l]);
        if (l + 1 < L) {
            auto& next = work.acts[l + 1];
            next.resize(batch * std::size_t(w.layers[l].out));
            for (std::size_t i = 0; i < next.size(); ++i) {
                next[i] = work.zs[l][i] > 0.0 ? work.zs[l][i] : 0.0;
            }
        }
    }
}

MlpWeights zero_like(const MlpWeights& w) {
    MlpWeights g = w;
    for (auto& layer : g.layers) {
        std::fill(layer.w.begin(), layer.w.end(), 0.0);
        std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
    return g;
}

// Gradient of mean((pred - y)^2) over the batch, given a completed forward.
void backward_batch(const MlpWeights& w, const BatchWork& work,
                    std::span<const double> y, std::size_t batch,
                    MlpWeights& grad, std::vector<std::vector<double>>& deltas) {
    const std::size_t L = w.layers.size();
    deltas.resize(L);
    // Output delta: d loss / d z_last.
    auto& dlast = deltas[L - 1];
    dlast.resize(batch);
    const auto& zlast = work.zs[L - 1];
    for (std::size_t bi = 0; bi < batch; ++bi) {
        dlast[bi] = 2.0 / double(batch) * (zlast[bi] - y[bi]);
    }
    for (std::size_t l = L; l-- > 0;) {
        const auto& layer = w.layers[l];
        const auto& delta = deltas[l];
        auto& glayer = grad.layers[l];
        const auto& a = work.acts[l];
        // dW[o,i] += sum_b delta[b,o] * a[b,i];  db[o] += sum_b delta[b,o]
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* drow = delta.data() + bi * std::size_t(layer.out);
            const double* arow = a.data() + bi * std::size_t(layer.in);
            for (int o = 0; o < layer.out; ++o) {
                const double d = drow[o];
                if (d == 0.0) continue;
                glayer.b[std::size_t(o)] += d;
                double* grow = glayer.w.data() + std::size_t(o) * layer.in;
                for (int i = 0; i < layer.in; ++i) grow[i] += d * arow[i];
            }
        }
        if (l == 0) break;
        // delta_prev[b,i] = relu'(z_prev[b,i]) * sum_o delta[b,o] * w[o,i]
        auto& dprev = deltas[l - 1];
        dprev.assign(batch * std::size_t(layer.in), 0.0);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* drow = delta.data() + bi * std::size_t(layer.out);
            double* prow = dprev.data() + bi * std::size_t(layer.in);
            for (int o = 0; o < layer.out; ++o) {
                const double d = drow[o];
                if (d == 0.0) continue;
                const double* wrow = layer.w.data() + std::size_t(o) * layer.in;
                for (int i = 0; i < layer.in; ++i) prow[i] += d * wrow[i];
            }
        }
        const auto& zprev = work.zs[l - 1];
        for (std::size_t i = 0; i < dprev.size(); ++i) {
            if (zprev[i] <= 0.0) dprev[i] = 0.0;
        }
    }
}

}  // namespace

double mlp_forward(const MlpWeights& w, std::span<const double> features) {
    w.validate();
    if (int(features.size()) != w.input_dim()) {
        throw std::invalid_argument("feature vector has wrong dimension");
    }
    std::vector<double> a;
    preprocess(w, features, a);
    std::vector<double> z;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        affine_forward(w.layers[l], a, 1, z);
        if (l + 1 < w.layers.size()) {
            a.resize(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) {
                a[i] = z[i] > 0.0 ? z[i] : 0.0;
            }
        }
    }
    return z[0];
}

void TrainingSet::add(std::span<const double> x, double y) {
    if (dim == 0) dim = int(x.size());
    if (int(x.size()) != dim) {
        throw std::invalid_argument("training row has wrong dimension");
    }
    features.insert(features.end(), x.begin(), x.end());
    targets.push_back(y);
}

void TrainingSet::validate() const {
    if (dim < 1 || targets.empty() ||
        features.size() != targets.size() * std::size_t(dim)) {
        throw std::invalid_argument("training set is empty or inconsistent");
    }
}

MlpWeights mlp_backward(const MlpWeights& w, const TrainingSet& batch) {
    w.validate();
    batch.validate();
    if (batch.dim != w.input_dim()) {
        throw std::invalid_argument("batch dimension does not match the model");
    }
    const std::size_t n = batch.size();
    std::vector<double> x;
    x.reserve(batch.features.size());
    std::vector<double> row;
    for (std::size_t i = 0; i < n; ++i) {
        preprocess(w, batch.row(i), row);
        x.insert(x.end(), row.begin(), row.end());
    }
    BatchWork work;
    forward_batch(w, x, n, work);
    MlpWeights grad = zero_like(w);
    std::vector<std::vector<double>> deltas;
    backward_batch(w, work, batch.targets, n, grad, deltas);
    return grad;
}

double mlp_evaluate(const MlpWeights& w, const TrainingSet& data) {
    w.validate();
    data.validate();
    if (data.dim != w.input_dim()) {
        throw std::invalid_argument("dataset dimension does not match the model");
    }
    long double acc = 0.0;
    std::vector<double> a, z;
    for (std::size_t i = 0; i < data.size(); ++i) {
        preprocess(w, data.row(i), a);
        for (std::size_t l = 0; l < w.layers.size(); ++l) {
            affine_forward(w.layers[l], a, 1, z);
            if (l + 1 < w.layers.size()) {
                a.resize(z.size());
                for (std::size_t j = 0; j < z.size(); ++j) {
                    a[j] = z[j] > 0.0 ? z[j] : 0.0;
                }
            }
        }
        const long double e = z[0] - data.targets[i];
        acc += e * e;
    }
    return double(acc / (long double)(data.size()));
}

void TrainConfig::validate() const {
    if (learning_rate <= 0 || batch_size < 1 || epochs < 1 ||
        validation_fraction <= 0.0 || validation_fraction >= 1.0 ||
        clip_grad_norm <= 0.0) {
        throw std::invalid_argument("bad training configuration");
    }
}

namespace {

double grad_norm(const MlpWeights& g) {
    long double acc = 0.0;
    for (const auto& layer : g.layers) {
        for (double x : layer.w) acc += (long double)(x) * x;
        for (double x : layer.b) acc += (long double)(x) * x;
    }
    return double(sqrtl(acc));
}

void apply_update(MlpWeights& w, const MlpWeights& g, double scale) {
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& layer = w.layers[l];
        const auto& glayer = g.layers[l];
        for (std::size_t i = 0; i < layer.w.size(); ++i) {
            layer.w[i] -= scale * glayer.w[i];
        }
        for (std::size_t i = 0; i < layer.b.size(); ++i) {
            layer.b[i] -= scale * glayer.b[i];
        }
    }
}

}  // namespace

TrainResult mlp_train(const TrainingSet& train, const TrainingSet& val,
                      const MlpArchitecture& arch, const TrainConfig& cfg) {
    arch.validate();
    cfg.validate();
    train.validate();
    val.validate();
    if (train.dim != arch.input_dim || val.dim != arch.input_dim) {
        throw std::invalid_argument("training data does not match architecture");
    }

    std::mt19937_64 rng(cfg.rng_seed);
    MlpWeights w = init_weights(arch, rng());

    const std::size_t n = train.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));

    TrainResult result;
    result.best_val_mse = std::numeric_limits<double>::infinity();

    std::vector<double> xbatch, ybatch, xrow;
    BatchWork work;
    MlpWeights grad = zero_like(w);
    std::vector<std::vector<double>> deltas;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the portable index draw.
        for (std::size_t i = n; i > 1; --i) {
            std::swap(perm[i - 1], perm[index_below(rng, i)]);
        }
        long double running = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n; start += std::size_t(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + std::size_t(cfg.batch_size));
            const std::size_t batch = stop - start;
            xbatch.clear();
            ybatch.clear();
            for (std::size_t i = start; i < stop; ++i) {
                preprocess(w, train.row(perm[i]), xrow);
                xbatch.insert(xbatch.end(), xrow.begin(), xrow.end());
                ybatch.push_back(train.targets[perm[i]]);
            }
            forward_batch(w, xbatch, batch, work);
            const auto& pred = work.zs.back();
            for (std::size_t i = 0; i < batch; ++i) {
                const long double e = pred[i] - ybatch[i];
                running += e * e;
            }
            seen += batch;
            for (auto& layer : grad.layers) {
                std::fill(layer.w.begin(), layer.w.end(), 0.0);
                std::fill(layer.b.begin(), layer.b.end(), 0.0);
            }
            backward_batch(w, work, ybatch, batch, grad, deltas);
            double scale = cfg.learning_rate;
            const double norm = grad_norm(grad);
            if (norm > cfg.clip_grad_norm) {
                scale *= cfg.clip_grad_norm / norm;
            }
            apply_update(w, grad, scale);
        }

        EpochStats stats;
        stats.train_mse = double(running / (long double)(seen));
        stats.val_mse = mlp_evaluate(w, val);
        result.history.push_back(stats);
        if (!std::isfinite(stats.val_mse)) {
            throw std::runtime_error(
                "training diverged: validation MSE became non-finite at epoch " +
                std::to_string(epoch) + " (lr=" + std::to_string(cfg.learning_rate) +
                ", batch=" + std::to_string(cfg.batch_size) + ")");
        }
        if (stats.val_mse < result.best_val_mse) {
            result.best_val_mse = stats.val_mse;
            result.best_epoch = epoch;
            result.weights = w;
        }
    }
    return result;
}

TrainResult mlp_train(const TrainingSet& all, const MlpArchitecture& arch,
                      const TrainConfig& cfg) {
    cfg.validate();
    all.validate();
    const std::size_t n = all.size();
    std::size_t n_val = std::size_t(std::llround(double(n) * cfg.validation_fraction));
    n_val = std::max<std::size_t>(1, std::min(n - 1, n_val));
    if (n < 2) {
        throw std::invalid_argument("need at least two rows to split off validation");
    }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    std::mt19937_64 rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(perm[i - 1], perm[index_below(rng, i)]);
    }

    TrainingSet train, val;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = (i + n_val < n) ? train : val;
        dst.add(all.row(perm[i]), all.targets[perm[i]]);
    }
    return mlp_train(train, val, arch, cfg);
}

double MlpModel::predict(std::span<const double> features) const {
    return mlp_forward(weights, features);
}

void MlpModel::predict_batch(const std::vector<std::vector<double>>& rows,
                             std::vector<double>& out) const {
    weights.validate();
    out.resize(rows.size());
    std::vector<double> a, z;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (int(rows[i].size()) != weights.input_dim()) {
            throw std::invalid_argument("feature vector has wrong dimension");
        }
        preprocess(weights, rows[i], a);
        for (std::size_t l = 0; l < weights.layers.size(); ++l) {
            affine_forward(weights.layers[l], a, 1, z);
            if (l + 1 < weights.layers.size()) {
                a.resize(z.size());
                for (std::size_t j = 0; j < z.size(); ++j) {
                    a[j] = z[j] > 0.0 ? z[j] : 0.0;
                }
            }
        }
        out[i] = z[0];
    }
}

std::string MlpModel::to_json_text() const {
    weights.validate();
    nlohmann::json j;
    j["format"] = "ktune-mlp-1";
    j["feature_version"] = feature_version;
    j["log_inputs"] = weights.log_inputs;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : weights.layers) {
        j["layers"].push_back({{"in", layer.in},
                               {"out", layer.out},
                               {"w", layer.w},
                               {"b", layer.b}});
    }
    return j.dump() + "\n";
}

MlpModel MlpModel::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error("malformed JSON in model file");
    }
    MlpModel m;
    try {
        if (j.at("format").get<std::string>() != "ktune-mlp-1") {
            throw std::runtime_error("unsupported model format");
        }
        m.feature_version = j.at("feature_version").get<std::string>();
        m.weights.log_inputs = j.at("log_inputs").get<bool>();
        for (const auto& jl : j.at("layers")) {
            MlpLayer layer;
            layer.in = jl.at("in").get<int>();
            layer.out = jl.at("out").get<int>();
            layer.w = jl.at("w").get<std::vector<double>>();
            layer.b = jl.at("b").get<std::vector<double>>();
            m.weights.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("bad model file: ") + e.what());
    }
    m.weights.validate();
    return m;
}

void MlpModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write model file: " + path);
    }
    out << to_json_text();
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

MlpModel MlpModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open model file: " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return from_json_text(text.str());
    } catch (const std::exception& e) {
        throw std::runtime_error("model file " + path + ": " + e.what());
    }
}

}  // namespace ktune
