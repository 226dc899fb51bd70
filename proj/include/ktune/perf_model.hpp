#pragma once

// From-scratch MLP regressor mapping (input, tuning) feature vectors to log
// performance: relu hidden layers, a linear output unit, mean-squared-error
// loss and minibatch SGD. Features pass through an elementwise natural log
// before the first layer unless log_inputs is disabled (kept as an ablation
// switch).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ktune {

struct MlpArchitecture {
    int input_dim{0};
    std::vector<int> hidden_sizes;
    bool log_inputs{true};

    void validate() const;
    bool operator==(const MlpArchitecture&) const = default;
};

struct MlpLayer {
    int in{0};
    int out{0};
    std::vector<double> w;  // row-major, out x in
    std::vector<double> b;  // out
};

struct MlpWeights {
    bool log_inputs{true};
    std::vector<MlpLayer> layers;  // hidden layers then the linear output row

    int input_dim() const;
    void validate() const;
};

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)), seeded.
MlpWeights init_weights(const MlpArchitecture& arch, std::uint64_t seed);

double mlp_forward(const MlpWeights& w, std::span<const double> features);

struct TrainingSet {
    int dim{0};
    std::vector<double> features;  // row-major, size() x dim
    std::vector<double> targets;

    std::size_t size() const { return targets.size(); }
    void add(std::span<const double> x, double y);
    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * std::size_t(dim), std::size_t(dim)};
    }
    void validate() const;
};

// Gradient of the batch-mean squared error with respect to every weight and
// bias; same shapes as the weights themselves.
MlpWeights mlp_backward(const MlpWeights& w, const TrainingSet& batch);

// Mean squared error over a set. Throws on an empty set.
double mlp_evaluate(const MlpWeights& w, const TrainingSet& data);

struct TrainConfig {
    double learning_rate{1e-3};
    int batch_size{256};
    int epochs{200};
    std::uint64_t rng_seed{0};
    double validation_fraction{0.1};
    // Global L2 gradient clip. Keeps ill-scaled runs (notably the raw-feature
    // ablation) finite instead of aborting; generous enough to leave
    // well-scaled training untouched.
    double clip_grad_norm{1e3};

    void validate() const;
};

struct EpochStats {
    double train_mse{0};
    double val_mse{0};
};

struct TrainResult {
    MlpWeights weights;  // best validation epoch, not the last one
    std::vector<EpochStats> history;
    int best_epoch{-1};
    double best_val_mse{0};
};

// Minibatch SGD with a per-epoch seeded shuffle. Training aborts with a
// std::runtime_error diagnostic if the validation MSE turns non-finite.
TrainResult mlp_train(const TrainingSet& train, const TrainingSet& val,
                      const MlpArchitecture& arch, const TrainConfig& cfg);
// Convenience split: the tail validation_fraction of a seeded shuffle is
// held out.
TrainResult mlp_train(const TrainingSet& all, const MlpArchitecture& arch,
                      const TrainConfig& cfg);

// Model container bound to a feature encoding.
struct MlpModel {
    std::string feature_version;  // e.g. "gemm.v1"
    MlpWeights weights;

    double predict(std::span<const double> features) const;
    void predict_batch(const std::vector<std::vector<double>>& rows,
                       std::vector<double>& out) const;

    void save(const std::string& path) const;
    static MlpModel load(const std::string& path);
    std::string to_json_text() const;
    static MlpModel from_json_text(const std::string& text);
};

}  // namespace ktune
