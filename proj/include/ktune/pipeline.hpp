#pragma once

// Orchestration: dataset generation (sample -> measure -> record), training-set
// conversion, runtime inference (exhaustive prediction + top-k re-benchmark),
// and filesystem persistence for datasets and inference results.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ktune/backends.hpp"
#include "ktune/param_space.hpp"
#include "ktune/perf_model.hpp"
#include "ktune/sampler.hpp"

namespace ktune {

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

struct GemmSample {
    GemmInput input;
    GemmTuning tuning;
    double gflops = 0.0;   // measured, finite and > 0
    std::string backend;   // producing backend's name()
    std::int64_t timestamp_ms = 0;  // wall-clock at measurement; not persisted

    bool operator==(const GemmSample&) const = default;
};

struct ConvSample {
    ConvInput input;
    ConvTuning tuning;
    double gflops = 0.0;
    std::string backend;
    std::int64_t timestamp_ms = 0;

    bool operator==(const ConvSample&) const = default;
};

struct GemmDataset {
    std::vector<GemmSample> samples;
};

struct ConvDataset {
    std::vector<ConvSample> samples;
};

// Frozen CSV column orders. gflops uses shortest round-trip decimals.
inline constexpr const char* kGemmCsvHeader =
    "m,n,k,dtype,trans_a,trans_b,m_s,n_s,m_l,n_l,u,k_s,k_l,k_g,gflops,backend";
inline constexpr const char* kConvCsvHeader =
    "n,p,q,k,c,r,s,dtype,k_s,p_s,q_s,n_s,k_l,p_l,q_l,n_l,u,c_s,c_l,c_g,"
    "gflops,backend";

std::string to_csv_text(const GemmDataset& ds);
std::string to_csv_text(const ConvDataset& ds);
GemmDataset gemm_dataset_from_csv_text(const std::string& text);
ConvDataset conv_dataset_from_csv_text(const std::string& text);

void save_gemm_dataset(const GemmDataset& ds, const std::string& path);
void save_conv_dataset(const ConvDataset& ds, const std::string& path);
// Throw std::runtime_error on missing file, header/kind mismatch, or bad rows.
GemmDataset load_gemm_dataset(const std::string& path);
ConvDataset load_conv_dataset(const std::string& path);

// Throws if any row is illegal under hw, non-finite/non-positive, or repeated.
void validate_dataset(const GemmDataset& ds, const HardwareDescriptor& hw);
void validate_dataset(const ConvDataset& ds, const HardwareDescriptor& hw);

// Regression rows: x = encode_features(input, tuning), y = log(gflops).
TrainingSet to_training_set(const GemmDataset& ds);
TrainingSet to_training_set(const ConvDataset& ds);

// ---------------------------------------------------------------------------
// Input distributions for dataset generation
// ---------------------------------------------------------------------------

// Draws either one of the listed shapes (weighted) or, with probability
// 1 - fixed_fraction, a fresh shape with log-uniform dimensions in the
// configured ranges. An empty list always draws from the ranges and a
// disabled range block (use_ranges = false) always draws from the list.
struct GemmInputDistribution {
    std::vector<GemmInput> shapes;
    std::vector<double> weights;  // optional; empty = uniform over shapes
    double fixed_fraction = 0.5;

    bool use_ranges = true;
    int m_lo = 16, m_hi = 4096;
    int n_lo = 16, n_hi = 4096;
    int k_lo = 16, k_hi = 65536;
    Dtype dtype = Dtype::f32;
    bool randomize_transpose = true;  // trans_a/trans_b fair coin per draw

    void validate() const;
    GemmInput draw(std::mt19937_64& rng) const;
};

struct ConvInputDistribution {
    std::vector<ConvInput> shapes;
    std::vector<double> weights;
    double fixed_fraction = 0.5;

    bool use_ranges = true;
    int n_lo = 4, n_hi = 64;
    int p_lo = 4, p_hi = 128;
    int q_lo = 4, q_hi = 128;
    int k_lo = 8, k_hi = 512;
    int c_lo = 4, c_hi = 512;
    std::vector<std::pair<int, int>> rs_choices = {{1, 1}, {3, 3}};
    Dtype dtype = Dtype::f32;

    void validate() const;
    ConvInput draw(std::mt19937_64& rng) const;
};

// Log-uniform integer in [lo, hi], inclusive.
int log_uniform_int(std::mt19937_64& rng, int lo, int hi);

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct GenerateReport {
    std::int64_t attempts = 0;              // sampler draws overall
    std::int64_t duplicates_rejected = 0;   // redraws forced by dedup
};

// Produces exactly n_samples distinct legal measured samples. Deterministic
// under a fixed seed with the analytical backend. Throws when the sampler
// exhausts retries or duplicates make the space effectively exhausted.
GemmDataset generate_gemm_dataset(MeasurementBackend& backend,
                                  const CategoricalModel& sampler_model,
                                  const GemmInputDistribution& dist,
                                  const GemmBounds& bounds,
                                  const HardwareDescriptor& hw, int n_samples,
                                  std::uint64_t seed,
                                  GenerateReport* report = nullptr);
ConvDataset generate_conv_dataset(MeasurementBackend& backend,
                                  const CategoricalModel& sampler_model,
                                  const ConvInputDistribution& dist,
                                  const ConvBounds& bounds,
                                  const HardwareDescriptor& hw, int n_samples,
                                  std::uint64_t seed,
                                  GenerateReport* report = nullptr);

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Scores whole candidate lists; values are predicted log-GFLOPS so that the
// analytical oracle and the learned model are interchangeable.
class PerfPredictor {
  public:
    virtual ~PerfPredictor() = default;
    virtual std::string name() const = 0;
    virtual void predict_gemm(const GemmInput& input,
                              const std::vector<GemmTuning>& tunings,
                              std::vector<double>& out) const = 0;
    virtual void predict_conv(const ConvInput& input,
                              const std::vector<ConvTuning>& tunings,
                              std::vector<double>& out) const = 0;
};

class MlpPredictor final : public PerfPredictor {
  public:
    explicit MlpPredictor(MlpModel model);
    std::string name() const override;
    void predict_gemm(const GemmInput& input,
                      const std::vector<GemmTuning>& tunings,
                      std::vector<double>& out) const override;
    void predict_conv(const ConvInput& input,
                      const std::vector<ConvTuning>& tunings,
                      std::vector<double>& out) const override;
    const MlpModel& model() const { return model_; }

  private:
    MlpModel model_;
};

// Oracle substitution: predicts log of the analytical model's GFLOPS.
class AnalyticalPredictor final : public PerfPredictor {
  public:
    explicit AnalyticalPredictor(HardwareDescriptor hw);
    std::string name() const override;
    void predict_gemm(const GemmInput& input,
                      const std::vector<GemmTuning>& tunings,
                      std::vector<double>& out) const override;
    void predict_conv(const ConvInput& input,
                      const std::vector<ConvTuning>& tunings,
                      std::vector<double>& out) const override;

  private:
    HardwareDescriptor hw_;
};

struct GemmCandidate {
    GemmTuning tuning;
    double predicted_log_gflops = 0.0;
    double measured_gflops = 0.0;

    bool operator==(const GemmCandidate&) const = default;
};

struct ConvCandidate {
    ConvTuning tuning;
    double predicted_log_gflops = 0.0;
    double measured_gflops = 0.0;

    bool operator==(const ConvCandidate&) const = default;
};

struct GemmInferenceResult {
    GemmInput input;
    GemmTuning chosen;  // measured argmax over top_k
    double predicted_log_gflops = 0.0;
    double measured_gflops = 0.0;
    std::vector<GemmCandidate> top_k;  // prediction-ranked, ties lexicographic
    std::int64_t legal_space_size = 0;

    bool operator==(const GemmInferenceResult&) const = default;
};

struct ConvInferenceResult {
    ConvInput input;
    ConvTuning chosen;
    double predicted_log_gflops = 0.0;
    double measured_gflops = 0.0;
    std::vector<ConvCandidate> top_k;
    std::int64_t legal_space_size = 0;

    bool operator==(const ConvInferenceResult&) const = default;
};

// Enumerates every legal tuning for the input, batch-predicts, keeps the
// top_k best predictions (ties broken by lexicographic tuning order),
// re-measures those on the backend, and returns the measured argmax.
GemmInferenceResult infer_gemm(const PerfPredictor& predictor,
                               const GemmInput& input,
                               const HardwareDescriptor& hw,
                               const GemmBounds& bounds, int top_k,
                               MeasurementBackend& backend);
ConvInferenceResult infer_conv(const PerfPredictor& predictor,
                               const ConvInput& input,
                               const HardwareDescriptor& hw,
                               const ConvBounds& bounds, int top_k,
                               MeasurementBackend& backend);

inline constexpr int kDefaultTopK = 100;

// ---------------------------------------------------------------------------
// Result cache
// ---------------------------------------------------------------------------

std::string to_json_text(const GemmInferenceResult& r);
std::string to_json_text(const ConvInferenceResult& r);
GemmInferenceResult gemm_result_from_json_text(const std::string& text);
ConvInferenceResult conv_result_from_json_text(const std::string& text);

inline constexpr const char* kCacheDirEnvVar = "KTUNE_CACHE_DIR";

// One JSON file per input-descriptor hash. Corrupt or mismatched entries are
// skipped with a warning on stderr; they are never fatal.
class ResultCache {
  public:
    explicit ResultCache(std::string dir);
    // Honors kCacheDirEnvVar when set, otherwise uses fallback_dir.
    static ResultCache from_env_or(const std::string& fallback_dir);

    const std::string& dir() const { return dir_; }

    std::optional<GemmInferenceResult> lookup(const GemmInput& input) const;
    std::optional<ConvInferenceResult> lookup(const ConvInput& input) const;
    void store(const GemmInferenceResult& result) const;
    void store(const ConvInferenceResult& result) const;

  private:
    std::string dir_;
};

// Stable content hash (FNV-1a over the canonical descriptor text).
std::string cache_key(const GemmInput& input);
std::string cache_key(const ConvInput& input);

}  // namespace ktune
