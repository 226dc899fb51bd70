#include "ktune/backends.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "ktune/sampler.hpp"

namespace ktune {

namespace {

double ceil_div(double a, double b) { return std::ceil(a / b); }

std::int64_t iceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Cycles per instruction seen by one warp when n warps share a pipeline:
// latency-bound below lat/thru resident warps, throughput-bound above.
double pipe_cost(double latency, double throughput, double n) {
    return std::max(latency / n, throughput);
}

struct Residency {
    double warps_per_block{0};
    double resident_blocks{0};  // used for wave accounting
    double static_warps{0};     // occupancy before grid starvation
};

Residency residency_of(const ResourceUsage& res, const HardwareDescriptor& hw) {
    Residency r;
    r.warps_per_block = ceil_div(double(res.threads_per_block), double(hw.warp_size));
    double by_threads =
        std::floor(double(hw.max_threads_per_block) / double(res.threads_per_block));
    double blocks = by_threads;
    if (res.shared_bytes > 0) {
        double by_shared = std::floor(double(hw.max_shared_bytes_per_block) /
                                      double(res.shared_bytes));
        blocks = std::min(blocks, by_shared);
    }
    r.static_warps = std::min(double(hw.max_warps_per_multiprocessor),
                              blocks * r.warps_per_block);
    // The warp cap also limits how many blocks can actually co-reside;
    // without this, wave accounting would overcount concurrency.
    double by_warps =
        std::floor(double(hw.max_warps_per_multiprocessor) / r.warps_per_block);
    r.resident_blocks = std::max(1.0, std::min(blocks, by_warps));
    return r;
}

// Shared cycle accounting for both problem kinds. All quantities are
// per-thread instruction counts except blocks.
struct KernelShape {
    double thread_macs;
    double merge_flops;
    double thread_loads;
    double blocks;
    double useful_flops;
    std::int64_t merge_outputs;  // elements the k_g merge pass touches
    int grid_splits;
};

AnalyticalCosts price_kernel(const KernelShape& ks, const ResourceUsage& res,
                             const HardwareDescriptor& hw) {
    AnalyticalCosts out;
    Residency r = residency_of(res, hw);
    out.thread_macs = ks.thread_macs;
    out.merge_flops = ks.merge_flops;
    out.thread_loads = ks.thread_loads;
    out.blocks = ks.blocks;
    out.warps_per_block = r.warps_per_block;
    out.resident_blocks = r.resident_blocks;

    double sm = double(hw.num_multiprocessors);
    // Small grids leave multiprocessors idle; occupancy degrades to the mean.
    out.mean_warps =
        std::min(r.static_warps, ks.blocks * r.warps_per_block / sm);
    out.waves = ceil_div(ks.blocks, r.resident_blocks * sm);

    double t_arith = pipe_cost(hw.alu_latency, hw.alu_throughput, out.mean_warps);
    double t_mem = pipe_cost(hw.mem_latency, hw.mem_throughput, out.mean_warps);
    // Main loop overlaps arithmetic and loads; the accumulator merge is an
    // epilogue that does not.
    double wave_cycles = std::max(t_arith * ks.thread_macs, t_mem * ks.thread_loads) +
                         t_arith * ks.merge_flops;
    out.main_cycles = wave_cycles * out.mean_warps * out.waves;

    out.merge_pass_cycles = 0.0;
    if (ks.grid_splits > 1) {
        // Separate pass that folds the k_g partial results: per output
        // element, grid_splits loads and adds through a plain elementwise
        // kernel.
        ResourceUsage mres;
        mres.shared_bytes = 0;
        mres.registers_per_thread = 16;
        mres.threads_per_block = std::min<std::int64_t>(hw.max_threads_per_block,
                                                        8 * hw.warp_size);
        Residency mr = residency_of(mres, hw);
        double mblocks = ceil_div(double(ks.merge_outputs),
                                  double(mres.threads_per_block));
        double mn = std::min(
            std::min(double(hw.max_warps_per_multiprocessor),
                     mr.resident_blocks * mr.warps_per_block),
            mblocks * mr.warps_per_block / sm);
        double mt_arith = pipe_cost(hw.alu_latency, hw.alu_throughput, mn);
        double mt_mem = pipe_cost(hw.mem_latency, hw.mem_throughput, mn);
        double g = double(ks.grid_splits);
        double mwave = std::max(mt_arith * g, mt_mem * g);
        out.merge_pass_cycles = mwave * mn * ceil_div(mblocks, mr.resident_blocks * sm);
    }

    out.total_cycles = out.main_cycles + out.merge_pass_cycles;
    out.seconds = out.total_cycles / hw.clock_hz;
    out.gflops = ks.useful_flops / out.seconds / 1.0e9;
    return out;
}

void require_legal(const LegalityVerdict& v) {
    if (!v) {
        throw std::invalid_argument(std::string("illegal tuning: ") +
                                    to_string(v.reason) + " (" + v.detail + ")");
    }
}

}  // namespace

double occupancy(const ResourceUsage& res, const HardwareDescriptor& hw) {
    hw.validate();
    if (res.threads_per_block < 1) {
        throw std::invalid_argument("occupancy: threads_per_block must be >= 1");
    }
    if (res.threads_per_block > hw.max_threads_per_block ||
        res.shared_bytes > hw.max_shared_bytes_per_block) {
        return 0.0;
    }
    Residency r = residency_of(res, hw);
    return r.static_warps;
}

double peak_gflops(const HardwareDescriptor& hw) {
    return 2.0 * double(hw.num_multiprocessors) * double(hw.warp_size) *
           hw.clock_hz / hw.alu_throughput / 1.0e9;
}

AnalyticalCosts analytical_costs(const GemmInput& in, const GemmTuning& t,
                                 const HardwareDescriptor& hw) {
    require_legal(is_legal(in, t, hw));
    KernelShape ks;
    double span = double(t.u) * t.k_l * t.k_g;
    double steps = ceil_div(double(in.k), span);
    double tile = double(t.m_s) * t.n_s;
    ks.thread_macs = tile * steps * t.u;
    ks.merge_flops = tile * double((t.k_s - 1) + (t.k_l - 1));
    ks.thread_loads = steps * t.u * tile * (1.0 / t.m_l + 1.0 / t.n_l);
    ks.blocks = ceil_div(double(in.m), t.m_l) * ceil_div(double(in.n), t.n_l) *
                double(t.k_g);
    ks.useful_flops = 2.0 * double(in.m) * double(in.n) * double(in.k);
    ks.merge_outputs = in.m * in.n;
    ks.grid_splits = t.k_g;
    return price_kernel(ks, estimate_resources(in, t), hw);
}

AnalyticalCosts analytical_costs(const ConvInput& in, const ConvTuning& t,
                                 const HardwareDescriptor& hw) {
    require_legal(is_legal(in, t, hw));
    KernelShape ks;
    double crs = double(in.c) * in.r * in.s;
    double span = double(t.u) * t.c_l * t.c_g;
    double steps = ceil_div(crs, span);
    double tile = double(t.k_s) * t.p_s * t.q_s * t.n_s;
    ks.thread_macs = tile * steps * t.u;
    ks.merge_flops = tile * double((t.c_s - 1) + (t.c_l - 1));
    ks.thread_loads = steps * t.u * tile *
                      (1.0 / t.k_l + 1.0 / (double(t.p_l) * t.q_l * t.n_l));
    ks.blocks = ceil_div(double(in.k_filters), t.k_l) *
                ceil_div(double(in.p), t.p_l) * ceil_div(double(in.q), t.q_l) *
                ceil_div(double(in.n_batch), t.n_l) * double(t.c_g);
    ks.useful_flops = 2.0 * double(in.n_batch) * in.p * in.q *
                      double(in.k_filters) * crs;
    ks.merge_outputs = in.k_filters * in.p * in.q * in.n_batch;
    ks.grid_splits = t.c_g;
    return price_kernel(ks, estimate_resources(in, t), hw);
}

double analytical_gflops(const GemmInput& in, const GemmTuning& t,
                         const HardwareDescriptor& hw) {
    return analytical_costs(in, t, hw).gflops;
}

double analytical_gflops(const ConvInput& in, const ConvTuning& t,
                         const HardwareDescriptor& hw) {
    return analytical_costs(in, t, hw).gflops;
}

std::vector<IndirectionEntry> build_indirection_table(const ConvInput& in) {
    in.validate();
    std::vector<IndirectionEntry> table;
    table.reserve(std::size_t(in.c * in.r * in.s));
    std::int64_t wn = in.w() * in.n_batch;
    std::int64_t hwn = in.h() * wn;
    for (std::int64_t c = 0; c < in.c; ++c) {
        for (std::int64_t r = 0; r < in.r; ++r) {
            for (std::int64_t s = 0; s < in.s; ++s) {
                IndirectionEntry e;
                e.c = c;
                e.r = r;
                e.s = s;
                e.image_offset = c * hwn + r * wn + s * in.n_batch;
                table.push_back(e);
            }
        }
    }
    return table;
}

namespace {

void require_divisible(int big, int small, const char* what) {
    if (big % small != 0) {
        throw std::invalid_argument(std::string("execute: ") + what);
    }
}

}  // namespace

template <typename T>
void execute_gemm(const GemmInput& in, const GemmTuning& t,
                  std::span<const T> a, std::span<const T> b, std::span<T> c) {
    in.validate();
    t.validate();
    require_divisible(t.m_l, t.m_s, "m_l not divisible by m_s");
    require_divisible(t.n_l, t.n_s, "n_l not divisible by n_s");
    require_divisible(t.u, t.k_s, "u not divisible by k_s");
    const std::int64_t M = in.m, N = in.n, K = in.k;
    if (std::int64_t(a.size()) != M * K || std::int64_t(b.size()) != K * N ||
        std::int64_t(c.size()) != M * N) {
        throw std::invalid_argument("execute_gemm: operand size mismatch");
    }

    auto load_a = [&](std::int64_t i, std::int64_t kk) -> T {
        return in.trans_a ? a[kk * M + i] : a[i * K + kk];
    };
    auto load_b = [&](std::int64_t kk, std::int64_t j) -> T {
        return in.trans_b ? b[j * K + kk] : b[kk * N + j];
    };

    std::fill(c.begin(), c.end(), T(0));

    const int ml = t.m_l, nl = t.n_l, u = t.u;
    const std::int64_t kg_span = iceil_div(K, t.k_g);
    std::vector<T> a_tile(std::size_t(ml) * u);
    std::vector<T> b_tile(std::size_t(u) * nl);
    std::vector<T> block_acc(std::size_t(ml) * nl);
    std::vector<T> group_acc(std::size_t(t.k_s) * ml * nl);

    for (std::int64_t bi = 0; bi < M; bi += ml) {
        for (std::int64_t bj = 0; bj < N; bj += nl) {
            for (int g = 0; g < t.k_g; ++g) {
                const std::int64_t slice_lo = std::min<std::int64_t>(K, g * kg_span);
                const std::int64_t slice_hi =
                    std::min<std::int64_t>(K, slice_lo + kg_span);
                if (slice_lo >= slice_hi) continue;
                std::fill(block_acc.begin(), block_acc.end(), T(0));
                const std::int64_t kl_span =
                    iceil_div(slice_hi - slice_lo, t.k_l);
                for (int lg = 0; lg < t.k_l; ++lg) {
                    const std::int64_t lo =
                        std::min(slice_hi, slice_lo + lg * kl_span);
                    const std::int64_t hi = std::min(slice_hi, lo + kl_span);
                    if (lo >= hi) continue;
                    std::fill(group_acc.begin(), group_acc.end(), T(0));
                    for (std::int64_t k0 = lo; k0 < hi; k0 += u) {
                        const int ue = int(std::min<std::int64_t>(u, hi - k0));
                        // Stage the operand tiles; out-of-range rows and
                        // columns become zeros and contribute nothing.
                        for (int ii = 0; ii < ml; ++ii) {
                            const std::int64_t gi = bi + ii;
                            for (int kk = 0; kk < ue; ++kk) {
                                a_tile[std::size_t(ii) * ue + kk] =
                                    gi < M ? load_a(gi, k0 + kk) : T(0);
                            }
                        }
                        for (int kk = 0; kk < ue; ++kk) {
                            for (int jj = 0; jj < nl; ++jj) {
                                const std::int64_t gj = bj + jj;
                                b_tile[std::size_t(kk) * nl + jj] =
                                    gj < N ? load_b(k0 + kk, gj) : T(0);
                            }
                        }
                        for (int ti = 0; ti < ml; ti += t.m_s) {
                            for (int tj = 0; tj < nl; tj += t.n_s) {
                                for (int kk = 0; kk < ue; ++kk) {
                                    T* acc = group_acc.data() +
                                             std::size_t(kk % t.k_s) * ml * nl;
                                    const T* brow = b_tile.data() +
                                                    std::size_t(kk) * nl + tj;
                                    for (int ii = 0; ii < t.m_s; ++ii) {
                                        const T av =
                                            a_tile[std::size_t(ti + ii) * ue + kk];
                                        T* arow = acc + std::size_t(ti + ii) * nl + tj;
                                        for (int jj = 0; jj < t.n_s; ++jj) {
                                            arow[jj] += av * brow[jj];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    // Fold the k_s accumulator sets, then merge the group
                    // into the block tile.
                    for (int set = 0; set < t.k_s; ++set) {
                        const T* src = group_acc.data() + std::size_t(set) * ml * nl;
                        for (std::size_t x = 0; x < block_acc.size(); ++x) {
                            block_acc[x] += src[x];
                        }
                    }
                }
                for (int ii = 0; ii < ml && bi + ii < M; ++ii) {
                    for (int jj = 0; jj < nl && bj + jj < N; ++jj) {
                        c[(bi + ii) * N + bj + jj] +=
                            block_acc[std::size_t(ii) * nl + jj];
                    }
                }
            }
        }
    }
}

template <typename T>
void execute_conv(const ConvInput& in, const ConvTuning& t,
                  std::span<const T> images, std::span<const T> filters,
                  std::span<T> outputs) {
    in.validate();
    t.validate();
    require_divisible(t.k_l, t.k_s, "k_l not divisible by k_s");
    require_divisible(t.p_l, t.p_s, "p_l not divisible by p_s");
    require_divisible(t.q_l, t.q_s, "q_l not divisible by q_s");
    require_divisible(t.n_l, t.n_s, "n_l not divisible by n_s");
    require_divisible(t.u, t.c_s, "u not divisible by c_s");
    const std::int64_t N = in.n_batch, P = in.p, Q = in.q, K = in.k_filters;
    const std::int64_t H = in.h(), W = in.w();
    const std::int64_t crs = in.c * in.r * in.s;
    if (std::int64_t(images.size()) != in.c * H * W * N ||
        std::int64_t(filters.size()) != crs * K ||
        std::int64_t(outputs.size()) != K * P * Q * N) {
        throw std::invalid_argument("execute_conv: operand size mismatch");
    }

    const auto table = build_indirection_table(in);
    std::fill(outputs.begin(), outputs.end(), T(0));

    const int kl = t.k_l, pl = t.p_l, ql = t.q_l, nl = t.n_l, u = t.u;
    const std::int64_t spatial = std::int64_t(pl) * ql * nl;
    const std::int64_t tile_elems = std::int64_t(kl) * spatial;
    const std::int64_t cg_span = iceil_div(crs, t.c_g);
    std::vector<T> g_tile(std::size_t(spatial) * u);   // image gather tile
    std::vector<T> f_tile(std::size_t(u) * kl);        // filter tile
    std::vector<T> block_acc(std::size_t(tile_elems), T(0));
    std::vector<T> group_acc(std::size_t(t.c_s) * tile_elems);

    for (std::int64_t bk = 0; bk < K; bk += kl) {
    for (std::int64_t bp = 0; bp < P; bp += pl) {
    for (std::int64_t bq = 0; bq < Q; bq += ql) {
    for (std::int64_t bn = 0; bn < N; bn += nl) {
        for (int g = 0; g < t.c_g; ++g) {
            const std::int64_t slice_lo = std::min(crs, g * cg_span);
            const std::int64_t slice_hi = std::min(crs, slice_lo + cg_span);
            if (slice_lo >= slice_hi) continue;
            std::fill(block_acc.begin(), block_acc.end(), T(0));
            const std::int64_t cl_span = iceil_div(slice_hi - slice_lo, t.c_l);
            for (int lg = 0; lg < t.c_l; ++lg) {
                const std::int64_t lo = std::min(slice_hi, slice_lo + lg * cl_span);
                const std::int64_t hi = std::min(slice_hi, lo + cl_span);
                if (lo >= hi) continue;
                std::fill(group_acc.begin(), group_acc.end(), T(0));
                for (std::int64_t t0 = lo; t0 < hi; t0 += u) {
                    const int ue = int(std::min<std::int64_t>(u, hi - t0));
                    for (int pp = 0; pp < pl; ++pp) {
                    for (int qq = 0; qq < ql; ++qq) {
                    for (int nn = 0; nn < nl; ++nn) {
                        const std::int64_t p = bp + pp, q = bq + qq, n = bn + nn;
                        T* dst = g_tile.data() +
                                 (std::size_t(pp) * ql * nl + std::size_t(qq) * nl + nn) * ue;
                        if (p < P && q < Q && n < N) {
                            const std::int64_t base = (p * W + q) * N + n;
                            for (int tt = 0; tt < ue; ++tt) {
                                dst[tt] = images[base + table[t0 + tt].image_offset];
                            }
                        } else {
                            for (int tt = 0; tt < ue; ++tt) dst[tt] = T(0);
                        }
                    }
                    }
                    }
                    for (int tt = 0; tt < ue; ++tt) {
                        for (int kk = 0; kk < kl; ++kk) {
                            const std::int64_t gk = bk + kk;
                            f_tile[std::size_t(tt) * kl + kk] =
                                gk < K ? filters[(t0 + tt) * K + gk] : T(0);
                        }
                    }
                    // Thread tiles: k_s filters by p_s*q_s*n_s positions.
                    for (int tk = 0; tk < kl; tk += t.k_s) {
                        for (int tt = 0; tt < ue; ++tt) {
                            T* acc = group_acc.data() +
                                     std::size_t(tt % t.c_s) * tile_elems;
                            const T* fr = f_tile.data() + std::size_t(tt) * kl + tk;
                            for (int kk = 0; kk < t.k_s; ++kk) {
                                const T fv = fr[kk];
                                T* arow = acc + std::size_t(tk + kk) * spatial;
                                const T* grow = g_tile.data();
                                for (std::int64_t x = 0; x < spatial; ++x) {
                                    arow[x] += fv * grow[std::size_t(x) * ue + tt];
                                }
                            }
                        }
                    }
                }
                for (int set = 0; set < t.c_s; ++set) {
                    const T* src = group_acc.data() + std::size_t(set) * tile_elems;
                    for (std::size_t x = 0; x < block_acc.size(); ++x) {
                        block_acc[x] += src[x];
                    }
                }
            }
            for (int kk = 0; kk < kl && bk + kk < K; ++kk) {
            for (int pp = 0; pp < pl && bp + pp < P; ++pp) {
            for (int qq = 0; qq < ql && bq + qq < Q; ++qq) {
            for (int nn = 0; nn < nl && bn + nn < N; ++nn) {
                outputs[(((bk + kk) * P + bp + pp) * Q + bq + qq) * N + bn + nn] +=
                    block_acc[std::size_t(kk) * spatial +
                              (std::size_t(pp) * ql + qq) * nl + nn];
            }
            }
            }
            }
        }
    }
    }
    }
    }
}

template void execute_gemm<float>(const GemmInput&, const GemmTuning&,
                                  std::span<const float>, std::span<const float>,
                                  std::span<float>);
template void execute_gemm<double>(const GemmInput&, const GemmTuning&,
                                   std::span<const double>,
                                   std::span<const double>, std::span<double>);
template void execute_conv<float>(const ConvInput&, const ConvTuning&,
                                  std::span<const float>, std::span<const float>,
                                  std::span<float>);
template void execute_conv<double>(const ConvInput&, const ConvTuning&,
                                   std::span<const double>,
                                   std::span<const double>, std::span<double>);

AnalyticalBackend::AnalyticalBackend(HardwareDescriptor hw) : hw_(std::move(hw)) {
    hw_.validate();
}

double AnalyticalBackend::measure(const GemmInput& in, const GemmTuning& t) {
    return analytical_gflops(in, t, hw_);
}

double AnalyticalBackend::measure(const ConvInput& in, const ConvTuning& t) {
    return analytical_gflops(in, t, hw_);
}

CpuBackend::CpuBackend(HardwareDescriptor hw, int repetitions)
    : hw_(std::move(hw)), repetitions_(repetitions) {
    hw_.validate();
    if (repetitions_ < 1) {
        throw std::invalid_argument("CpuBackend: repetitions must be >= 1");
    }
}

namespace {

template <typename T>
void fill_random(std::vector<T>& v, std::mt19937_64& rng) {
    for (auto& x : v) x = T(unit_real(rng));
}

template <typename Fn>
double best_seconds(int repetitions, Fn&& run) {
    run();  // warm-up
    double best = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < repetitions; ++rep) {
        auto start = std::chrono::steady_clock::now();
        run();
        auto stop = std::chrono::steady_clock::now();
        best = std::min(best,
                        std::chrono::duration<double>(stop - start).count());
    }
    return std::max(best, 1e-9);
}

}  // namespace

double CpuBackend::measure(const GemmInput& in, const GemmTuning& t) {
    require_legal(is_legal(in, t, hw_));
    if (in.dtype == Dtype::f16) {
        throw std::invalid_argument("cpu backend does not execute f16");
    }
    const double flops = 2.0 * double(in.m) * double(in.n) * double(in.k);
    std::mt19937_64 rng(0x5eedULL);
    if (in.dtype == Dtype::f32) {
        std::vector<float> a(std::size_t(in.m * in.k)), b(std::size_t(in.k * in.n)),
            c(std::size_t(in.m * in.n));
        fill_random(a, rng);
        fill_random(b, rng);
        double secs = best_seconds(repetitions_, [&] {
            execute_gemm<float>(in, t, a, b, c);
        });
        return flops / secs / 1.0e9;
    }
    std::vector<double> a(std::size_t(in.m * in.k)), b(std::size_t(in.k * in.n)),
        c(std::size_t(in.m * in.n));
    fill_random(a, rng);
    fill_random(b, rng);
    double secs = best_seconds(repetitions_, [&] {
        execute_gemm<double>(in, t, a, b, c);
    });
    return flops / secs / 1.0e9;
}

double CpuBackend::measure(const ConvInput& in, const ConvTuning& t) {
    require_legal(is_legal(in, t, hw_));
    if (in.dtype == Dtype::f16) {
        throw std::invalid_argument("cpu backend does not execute f16");
    }
    const double flops = 2.0 * double(in.n_batch) * in.p * in.q *
                         double(in.k_filters) * double(in.c) * in.r * in.s;
    std::mt19937_64 rng(0x5eedULL);
    const std::size_t isz = std::size_t(in.c * in.h() * in.w() * in.n_batch);
    const std::size_t fsz = std::size_t(in.c * in.r * in.s * in.k_filters);
    const std::size_t osz = std::size_t(in.k_filters * in.p * in.q * in.n_batch);
    if (in.dtype == Dtype::f32) {
        std::vector<float> img(isz), flt(fsz), out(osz);
        fill_random(img, rng);
        fill_random(flt, rng);
        double secs = best_seconds(repetitions_, [&] {
            execute_conv<float>(in, t, img, flt, out);
        });
        return flops / secs / 1.0e9;
    }
    std::vector<double> img(isz), flt(fsz), out(osz);
    fill_random(img, rng);
    fill_random(flt, rng);
    double secs = best_seconds(repetitions_, [&] {
        execute_conv<double>(in, t, img, flt, out);
    });
    return flops / secs / 1.0e9;
}

}  // namespace ktune
