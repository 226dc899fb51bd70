#pragma once

// Generative sampler over tuning vectors: one categorical distribution per
// parameter, calibrated from the acceptance proportions of uniform draws and
// smoothed by a symmetric Dirichlet prior. Sampling rejects whole vectors
// until the legality predicate accepts one.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ktune {

using LegalityFn = std::function<bool(const std::vector<int>&)>;

struct CategoricalParam {
    std::vector<int> values;    // sorted candidate values
    std::vector<double> counts; // pseudo-counts, each >= alpha
};

struct CategoricalModel {
    double alpha{100.0};
    std::vector<CategoricalParam> params;

    // counts normalized to probabilities for one parameter
    std::vector<double> probabilities(std::size_t param_index) const;
    void validate() const;

    static CategoricalModel from_json_text(const std::string& text);
    static CategoricalModel load(const std::string& path);
    std::string to_json_text() const;
    void save(const std::string& path) const;
};

inline constexpr std::int64_t kSampleRetryLimit = 1000000;
inline constexpr std::int64_t kDefaultCalibrationDraws = 100000;

// Draws n_uniform whole vectors uniformly from the bounds and adds one count
// to every parameter value of each accepted vector, on top of the alpha
// prior. Deterministic for a fixed seed.
CategoricalModel calibrate(const LegalityFn& legal,
                           const std::vector<std::vector<int>>& bounds,
                           std::int64_t n_uniform, std::uint64_t seed,
                           double alpha = 100.0);

// One legal vector, by whole-vector rejection. Throws std::runtime_error if
// kSampleRetryLimit draws are all rejected.
std::vector<int> sample(const CategoricalModel& model, const LegalityFn& legal,
                        std::mt19937_64& rng);

// Fraction of single draws (no retries) that the predicate accepts.
double acceptance_rate(const CategoricalModel& model, const LegalityFn& legal,
                       std::int64_t n_trials, std::uint64_t seed);
double uniform_acceptance_rate(const std::vector<std::vector<int>>& bounds,
                               const LegalityFn& legal, std::int64_t n_trials,
                               std::uint64_t seed);

// Uniform doubles and index draws built directly on the raw engine output so
// that sequences are reproducible across standard libraries.
double unit_real(std::mt19937_64& rng);
std::size_t index_below(std::mt19937_64& rng, std::size_t n);

}  // namespace ktune
