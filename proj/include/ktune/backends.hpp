#pragma once

// Measurement backends. The analytical backend prices a tuning with a
// latency/throughput pipeline model and serves as a noise-free synthetic
// ground truth; the cpu backend actually executes the tiled kernels and
// times them.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ktune/param_space.hpp"

namespace ktune {

// Mean resident warps per multiprocessor once a block's resources are
// replicated until shared memory or the thread pool runs out, capped by the
// device warp limit.
double occupancy(const ResourceUsage& res, const HardwareDescriptor& hw);

// Cost breakdown of the analytical model, exposed for tests and reports.
//   thread_macs     multiply-accumulates per thread (reduction span * tile)
//   merge_flops     extra per-thread adds for k_s/k_l accumulator merging
//   thread_loads    global tile-load instructions per thread
//   blocks          grid size including the k_g reduction split
//   warps_per_block ceil(threads / warp_size)
//   resident_blocks blocks co-resident on one multiprocessor
//   mean_warps      occupancy after grid starvation is accounted for
//   waves           ceil(blocks / (resident_blocks * num_multiprocessors))
//   merge_pass_cycles cost of the extra k_g>1 merge kernel
struct AnalyticalCosts {
    double thread_macs{0};
    double merge_flops{0};
    double thread_loads{0};
    double blocks{0};
    double warps_per_block{0};
    double resident_blocks{0};
    double mean_warps{0};
    double waves{0};
    double main_cycles{0};
    double merge_pass_cycles{0};
    double total_cycles{0};
    double seconds{0};
    double gflops{0};
};

AnalyticalCosts analytical_costs(const GemmInput& in, const GemmTuning& t,
                                 const HardwareDescriptor& hw);
AnalyticalCosts analytical_costs(const ConvInput& in, const ConvTuning& t,
                                 const HardwareDescriptor& hw);

double analytical_gflops(const GemmInput& in, const GemmTuning& t,
                         const HardwareDescriptor& hw);
double analytical_gflops(const ConvInput& in, const ConvTuning& t,
                         const HardwareDescriptor& hw);

// Peak arithmetic rate implied by a descriptor, in GFLOPS.
double peak_gflops(const HardwareDescriptor& hw);

// Reduction-index -> image-offset table for the implicit-GEMM convolution.
// entries[t] unrolls t over (c, r, s); image_offset is relative to the
// (p, q, n) output coordinate's base offset in the C,H,W,N image tensor.
struct IndirectionEntry {
    std::int64_t c{0}, r{0}, s{0};
    std::int64_t image_offset{0};
};

std::vector<IndirectionEntry> build_indirection_table(const ConvInput& in);

// Tiled executors. Buffers are row-major:
//   gemm: a is M x K (K x M when trans_a), b is K x N (N x K when trans_b),
//         c is M x N. Transposition changes the storage, not the product.
//   conv: images C,H,W,N; filters C,R,S,K; outputs K,P,Q,N.
// The tuning controls the loop structure only; every legal tuning computes
// the same result up to floating-point reassociation.
template <typename T>
void execute_gemm(const GemmInput& in, const GemmTuning& t,
                  std::span<const T> a, std::span<const T> b, std::span<T> c);
template <typename T>
void execute_conv(const ConvInput& in, const ConvTuning& t,
                  std::span<const T> images, std::span<const T> filters,
                  std::span<T> outputs);

extern template void execute_gemm<float>(const GemmInput&, const GemmTuning&,
                                         std::span<const float>,
                                         std::span<const float>,
                                         std::span<float>);
extern template void execute_gemm<double>(const GemmInput&, const GemmTuning&,
                                          std::span<const double>,
                                          std::span<const double>,
                                          std::span<double>);
extern template void execute_conv<float>(const ConvInput&, const ConvTuning&,
                                         std::span<const float>,
                                         std::span<const float>,
                                         std::span<float>);
extern template void execute_conv<double>(const ConvInput&, const ConvTuning&,
                                          std::span<const double>,
                                          std::span<const double>,
                                          std::span<double>);

class MeasurementBackend {
  public:
    virtual ~MeasurementBackend() = default;
    virtual std::string name() const = 0;
    // GFLOPS achieved by a legal pair. Throws on illegal pairs.
    virtual double measure(const GemmInput& in, const GemmTuning& t) = 0;
    virtual double measure(const ConvInput& in, const ConvTuning& t) = 0;
};

class AnalyticalBackend final : public MeasurementBackend {
  public:
    explicit AnalyticalBackend(HardwareDescriptor hw);
    std::string name() const override { return "analytical"; }
    double measure(const GemmInput& in, const GemmTuning& t) override;
    double measure(const ConvInput& in, const ConvTuning& t) override;
    const HardwareDescriptor& hw() const { return hw_; }

  private:
    HardwareDescriptor hw_;
};

// Runs the tiled executors on randomly filled operands (seeded, so repeated
// measurements see identical data) and reports the best of `repetitions`
// timed runs after one warm-up. f16 inputs are rejected: the executors
// compute in native precision and no half type is provided.
class CpuBackend final : public MeasurementBackend {
  public:
    explicit CpuBackend(HardwareDescriptor hw, int repetitions = 3);
    std::string name() const override { return "cpu"; }
    double measure(const GemmInput& in, const GemmTuning& t) override;
    double measure(const ConvInput& in, const ConvTuning& t) override;

  private:
    HardwareDescriptor hw_;
    int repetitions_;
};

}  // namespace ktune
