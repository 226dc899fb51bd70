#pragma once

// Tuning parameter spaces for GEMM and implicit-GEMM convolution: input and
// tuning descriptors, per-block resource estimation, legality against a
// hardware descriptor, exhaustive enumeration and the frozen feature encoding
// consumed by the performance model.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ktune {

enum class Dtype { f16, f32, f64 };

int dtype_size_bytes(Dtype d);
const char* to_string(Dtype d);
Dtype dtype_from_string(const std::string& name);

struct GemmInput {
    std::int64_t m{1};
    std::int64_t n{1};
    std::int64_t k{1};
    Dtype dtype{Dtype::f32};
    bool trans_a{false};  // a buffer stores A transposed (column-major access)
    bool trans_b{false};

    void validate() const;  // throws std::invalid_argument
    bool operator==(const GemmInput&) const = default;
};

// Valid-mode convolution (no padding, unit stride). The image extent is
// derived from the output extent and the filter footprint.
struct ConvInput {
    std::int64_t n_batch{1};
    std::int64_t p{1};  // output rows
    std::int64_t q{1};  // output columns
    std::int64_t k_filters{1};
    std::int64_t c{1};  // input channels
    std::int64_t r{1};  // filter rows
    std::int64_t s{1};  // filter columns
    Dtype dtype{Dtype::f32};

    std::int64_t h() const { return p + r - 1; }
    std::int64_t w() const { return q + s - 1; }

    void validate() const;
    bool operator==(const ConvInput&) const = default;
};

// All fields are powers of two in [1, 256] (search-space convention, enforced
// by validate). Divisibility between block and thread tiles is a legality
// question, not a type invariant; see is_legal.
struct GemmTuning {
    int m_s{1};  // per-thread output tile rows
    int n_s{1};  // per-thread output tile columns
    int m_l{1};  // per-block output tile rows
    int n_l{1};  // per-block output tile columns
    int u{1};    // reduction prefetch depth
    int k_s{1};  // reduction split: accumulator interleaving inside a thread
    int k_l{1};  // reduction split: thread groups inside a block
    int k_g{1};  // reduction split: independent blocks over the grid

    void validate() const;
    bool operator==(const GemmTuning&) const = default;
};

struct ConvTuning {
    int k_s{1}, p_s{1}, q_s{1}, n_s{1};  // per-thread tile over output dims
    int k_l{1}, p_l{1}, q_l{1}, n_l{1};  // per-block tile over output dims
    int u{1};                            // prefetch depth over the c*r*s axis
    int c_s{1}, c_l{1}, c_g{1};          // reduction splits over the c*r*s axis

    void validate() const;
    bool operator==(const ConvTuning&) const = default;
};

// Device limits plus the latency/throughput constants of the analytical
// performance model. Loaded from JSON; unknown keys are rejected so that a
// misspelled field can never silently fall back to a default.
//
// The defaults describe the bundled synthetic device: a deliberately small
// machine (8-lane warps, 16 B registers per thread, 256 B of shared memory)
// whose constrained configuration space keeps exhaustive search and the
// sampling statistics interesting at desk scale. It is not a real GPU.
struct HardwareDescriptor {
    std::int64_t max_shared_bytes_per_block{256};
    std::int64_t max_registers_per_thread{16};
    std::int64_t max_threads_per_block{64};
    std::int64_t max_warps_per_multiprocessor{8};
    std::int64_t warp_size{8};
    double alu_latency{6.0};       // cycles
    double alu_throughput{1.0};    // cycles per instruction at saturation
    double mem_latency{48.0};
    double mem_throughput{4.0};
    double clock_hz{1.0e9};
    std::int64_t num_multiprocessors{16};

    void validate() const;
    bool operator==(const HardwareDescriptor&) const = default;

    static HardwareDescriptor from_json_text(const std::string& text);
    static HardwareDescriptor load(const std::string& path);
    std::string to_json_text() const;
};

struct ResourceUsage {
    std::int64_t shared_bytes{0};
    std::int64_t registers_per_thread{0};
    std::int64_t threads_per_block{0};

    bool operator==(const ResourceUsage&) const = default;
};

ResourceUsage estimate_resources(const GemmInput& in, const GemmTuning& t);
ResourceUsage estimate_resources(const ConvInput& in, const ConvTuning& t);

enum class RejectReason { divisibility, shared_memory, registers, threads };

const char* to_string(RejectReason r);

// Checks run in a fixed order (divisibility, shared memory, registers,
// threads); the verdict reports the first failure.
struct LegalityVerdict {
    bool accepted{true};
    RejectReason reason{RejectReason::divisibility};
    std::string detail;

    explicit operator bool() const { return accepted; }
};

LegalityVerdict is_legal(const GemmInput& in, const GemmTuning& t,
                         const HardwareDescriptor& hw);
LegalityVerdict is_legal(const ConvInput& in, const ConvTuning& t,
                         const HardwareDescriptor& hw);

// Candidate values per parameter, in the canonical parameter order below.
// Lists must be nonempty, sorted and power-of-two valued.
struct GemmBounds {
    std::vector<int> m_s, n_s, m_l, n_l, u, k_s, k_l, k_g;

    static GemmBounds defaults();  // powers of two in [1, 16] per parameter
    static GemmBounds from_json_text(const std::string& text);
    static GemmBounds load(const std::string& path);
    std::string to_json_text() const;
    std::vector<std::vector<int>> as_lists() const;
    void validate() const;
};

struct ConvBounds {
    std::vector<int> k_s, p_s, q_s, n_s, k_l, p_l, q_l, n_l, u, c_s, c_l, c_g;

    static ConvBounds defaults();
    static ConvBounds from_json_text(const std::string& text);
    static ConvBounds load(const std::string& path);
    std::string to_json_text() const;
    std::vector<std::vector<int>> as_lists() const;
    void validate() const;
};

// Canonical parameter order used everywhere a tuning is treated as a flat
// vector: enumeration, sampling, bounds files and feature encoding.
const std::vector<std::string>& gemm_param_names();  // m_s n_s m_l n_l u k_s k_l k_g
const std::vector<std::string>& conv_param_names();  // k_s p_s q_s n_s k_l p_l q_l n_l u c_s c_l c_g

std::vector<int> to_values(const GemmTuning& t);
std::vector<int> to_values(const ConvTuning& t);
GemmTuning gemm_tuning_from_values(const std::vector<int>& v);
ConvTuning conv_tuning_from_values(const std::vector<int>& v);

// Legality closure over a flat tuning vector, for samplers and enumerators
// that are agnostic of the problem kind.
std::function<bool(const std::vector<int>&)> make_legality(
    const GemmInput& in, const HardwareDescriptor& hw);
std::function<bool(const std::vector<int>&)> make_legality(
    const ConvInput& in, const HardwareDescriptor& hw);

// Every legal tuning in lexicographic order of the canonical parameter
// vector. Deterministic: same arguments, same sequence.
std::vector<GemmTuning> enumerate_legal(const GemmInput& in,
                                        const HardwareDescriptor& hw,
                                        const GemmBounds& bounds);
std::vector<ConvTuning> enumerate_legal(const ConvInput& in,
                                        const HardwareDescriptor& hw,
                                        const ConvBounds& bounds);

// Frozen feature layouts. Booleans are offset to {1, 2} so that every entry
// is strictly positive and safe to pass through a log transform.
//   gemm.v1 (14): m n k dtype_size trans_a+1 trans_b+1
//                 m_s n_s m_l n_l u k_s k_l k_g
//   conv.v1 (19): n_batch p q k_filters c r s
//                 k_s p_s q_s n_s k_l p_l q_l n_l u c_s c_l c_g
inline constexpr int kGemmFeatureDim = 14;
inline constexpr int kConvFeatureDim = 19;
inline constexpr const char* kGemmFeatureVersion = "gemm.v1";
inline constexpr const char* kConvFeatureVersion = "conv.v1";

std::vector<double> encode_features(const GemmInput& in, const GemmTuning& t);
std::vector<double> encode_features(const ConvInput& in, const ConvTuning& t);

}  // namespace ktune
