#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <stdexcept>

#include "ktune/param_space.hpp"

using namespace ktune;

namespace {

// Limits far above anything the tunings below use, so resource checks never
// interfere with what a test is actually probing.
HardwareDescriptor permissive_hw() {
    HardwareDescriptor hw;
    hw.max_shared_bytes_per_block = 1 << 20;
    hw.max_registers_per_thread = 4096;
    hw.max_threads_per_block = 1 << 16;
    hw.max_warps_per_multiprocessor = 2048;
    hw.warp_size = 32;
    return hw;
}

GemmTuning gemm(int m_s, int n_s, int m_l, int n_l, int u, int k_s, int k_l,
                int k_g) {
    return GemmTuning{m_s, n_s, m_l, n_l, u, k_s, k_l, k_g};
}

}  // namespace

TEST_CASE("dtype helpers") {
    CHECK(dtype_size_bytes(Dtype::f16) == 2);
    CHECK(dtype_size_bytes(Dtype::f32) == 4);
    CHECK(dtype_size_bytes(Dtype::f64) == 8);
    CHECK(dtype_from_string("f32") == Dtype::f32);
    CHECK(std::string(to_string(Dtype::f64)) == "f64");
    CHECK_THROWS_AS(dtype_from_string("float"), std::invalid_argument);
}

TEST_CASE("gemm resource usage matches the hand-computed tile example") {
    // Tile of 64x32 outputs per block, 4x4 per thread, prefetch depth 8:
    //   shared  = 2 * 4 B * (64*8 + 8*32) = 6144 (double-buffered A and B)
    //   regs    = 4*4 + 4 + 4 + 8         = 32
    //   threads = (64/4) * (32/4) * 2     = 256  (k_l = 2 groups)
    GemmInput in{512, 512, 512, Dtype::f32, false, false};
    GemmTuning t = gemm(4, 4, 64, 32, 8, 2, 2, 1);
    ResourceUsage r = estimate_resources(in, t);
    CHECK(r.shared_bytes == 6144);
    CHECK(r.registers_per_thread == 32);
    CHECK(r.threads_per_block == 256);

    in.dtype = Dtype::f64;  // element size doubles shared usage only
    ResourceUsage r64 = estimate_resources(in, t);
    CHECK(r64.shared_bytes == 12288);
    CHECK(r64.registers_per_thread == 32);
    CHECK(r64.threads_per_block == 256);
}

TEST_CASE("conv resource usage matches the hand-computed tile example") {
    //   shared  = 2 * 4 B * (4*2*4*4 + 4*8)   = 1280
    //   regs    = 2*1*2*2 + 1*2*2 + 2 + 8     = 22
    //   threads = (8/2)*(2/1)*(4/2)*(4/2) * 2 = 64
    ConvInput in{16, 24, 240, 32, 16, 3, 3, Dtype::f32};
    ConvTuning t{2, 1, 2, 2, 8, 2, 4, 4, 4, 2, 2, 1};
    ResourceUsage r = estimate_resources(in, t);
    CHECK(r.shared_bytes == 1280);
    CHECK(r.registers_per_thread == 22);
    CHECK(r.threads_per_block == 64);
    CHECK(is_legal(in, t, permissive_hw()));
}

TEST_CASE("conv image extent derives from output extent and filter") {
    ConvInput in{16, 12, 120, 64, 32, 3, 3, Dtype::f32};
    CHECK(in.h() == 14);
    CHECK(in.w() == 122);
}

TEST_CASE("tuning fields must be powers of two in [1, 256]") {
    GemmTuning t;
    t.m_s = 3;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.m_s = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.m_s = 512;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.m_s = 256;
    CHECK_NOTHROW(t.validate());
}

TEST_CASE("legality checks run in a fixed order") {
    const HardwareDescriptor hw;  // synthetic device defaults
    const GemmInput in{512, 512, 512, Dtype::f32, false, false};

    SUBCASE("divisibility is reported before any resource violation") {
        // m_l % m_s fails and registers (32 > 16) would also fail.
        auto v = is_legal(in, gemm(4, 4, 2, 4, 1, 1, 1, 1), hw);
        REQUIRE_FALSE(v);
        CHECK(v.reason == RejectReason::divisibility);
        CHECK(v.detail == "m_l not divisible by m_s");
    }
    SUBCASE("k_s exceeding u is a divisibility failure") {
        auto v = is_legal(in, gemm(1, 1, 1, 1, 1, 2, 1, 1), hw);
        REQUIRE_FALSE(v);
        CHECK(v.reason == RejectReason::divisibility);
        CHECK(v.detail == "u not divisible by k_s");
    }
    SUBCASE("shared memory is reported before registers") {
        // shared = 2*4*(4*16 + 16*4) = 1024 > 256 and regs = 32 > 16.
        auto v = is_legal(in, gemm(4, 4, 4, 4, 16, 1, 1, 1), hw);
        REQUIRE_FALSE(v);
        CHECK(v.reason == RejectReason::shared_memory);
    }
    SUBCASE("registers are reported before threads") {
        // regs = 32 > 16 and threads = 4*4*16 = 256 > 64; shared is exactly
        // at the 256-byte limit.
        auto v = is_legal(in, gemm(4, 4, 16, 16, 1, 1, 16, 1), hw);
        REQUIRE_FALSE(v);
        CHECK(v.reason == RejectReason::registers);
    }
    SUBCASE("threads checked last") {
        auto v = is_legal(in, gemm(1, 1, 16, 16, 1, 1, 1, 1), hw);
        REQUIRE_FALSE(v);
        CHECK(v.reason == RejectReason::threads);
        CHECK(std::string(to_string(v.reason)) == "threads");
    }
    SUBCASE("a fitting tuning is accepted") {
        CHECK(is_legal(in, gemm(2, 2, 4, 8, 1, 1, 8, 16), hw));
    }
}

TEST_CASE("hardware descriptor JSON round-trips and rejects unknown fields") {
    HardwareDescriptor hw;
    hw.max_shared_bytes_per_block = 1234;
    hw.mem_throughput = 2.5;
    HardwareDescriptor back = HardwareDescriptor::from_json_text(hw.to_json_text());
    CHECK(back == hw);

    std::string text = hw.to_json_text();
    text.insert(text.rfind('}'), ",\"warp_sise\": 32\n");
    CHECK_THROWS_WITH_AS(HardwareDescriptor::from_json_text(text),
                         "unknown hardware descriptor field: warp_sise",
                         std::runtime_error);
}

TEST_CASE("hardware descriptor validation") {
    HardwareDescriptor hw;
    hw.warp_size = 0;
    CHECK_THROWS_AS(hw.validate(), std::invalid_argument);
    hw = HardwareDescriptor{};
    hw.alu_latency = 0.5;  // below the saturated per-instruction cost
    CHECK_THROWS_AS(hw.validate(), std::invalid_argument);
}

TEST_CASE("bundled synthetic descriptor matches the built-in defaults") {
    HardwareDescriptor hw = HardwareDescriptor::load("fixtures/hw/synthetic.json");
    CHECK(hw == HardwareDescriptor{});
}

TEST_CASE("bounds JSON is strict about keys and values") {
    GemmBounds b = GemmBounds::defaults();
    CHECK(GemmBounds::from_json_text(b.to_json_text()).as_lists() == b.as_lists());

    SUBCASE("missing parameter") {
        CHECK_THROWS_WITH_AS(
            GemmBounds::from_json_text(R"({"m_s": [1, 2]})"),
            "bounds file missing parameter: n_s", std::runtime_error);
    }
    SUBCASE("unknown parameter") {
        std::string text = b.to_json_text();
        text.insert(text.rfind('}'), ",\"m_x\": [1]\n");
        CHECK_THROWS_WITH_AS(GemmBounds::from_json_text(text),
                             "unknown bounds parameter: m_x", std::runtime_error);
    }
    SUBCASE("non-power-of-two value") {
        GemmBounds bad = b;
        bad.u = {1, 3};
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
    SUBCASE("unsorted values") {
        GemmBounds bad = b;
        bad.k_g = {2, 1};
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
    SUBCASE("empty list") {
        GemmBounds bad = b;
        bad.m_l = {};
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("canonical order, flat vectors and closures agree") {
    CHECK(gemm_param_names() ==
          std::vector<std::string>{"m_s", "n_s", "m_l", "n_l", "u", "k_s", "k_l", "k_g"});
    CHECK(conv_param_names().size() == 12);

    GemmTuning t = gemm(2, 4, 8, 16, 4, 2, 2, 1);
    CHECK(gemm_tuning_from_values(to_values(t)) == t);
    CHECK_THROWS_AS(gemm_tuning_from_values({1, 2, 3}), std::invalid_argument);

    ConvTuning ct{2, 1, 2, 2, 8, 2, 4, 4, 4, 2, 2, 1};
    CHECK(conv_tuning_from_values(to_values(ct)) == ct);

    const HardwareDescriptor hw;
    const GemmInput in{512, 512, 512, Dtype::f32, false, false};
    auto legal = make_legality(in, hw);
    CHECK(legal(to_values(gemm(2, 2, 4, 8, 1, 1, 8, 16))));
    CHECK_FALSE(legal(to_values(gemm(4, 4, 4, 4, 1, 1, 1, 1))));
}

TEST_CASE("enumeration is lexicographic, deterministic and input-size free") {
    const HardwareDescriptor hw;
    const GemmBounds bounds = GemmBounds::defaults();
    const GemmInput in{512, 512, 512, Dtype::f32, false, false};

    auto space = enumerate_legal(in, hw, bounds);
    CHECK(space.size() == 6140);  // frozen for the synthetic device defaults

    CHECK(space.front() == gemm(1, 1, 1, 1, 1, 1, 1, 1));
    CHECK(std::is_sorted(space.begin(), space.end(),
                         [](const GemmTuning& a, const GemmTuning& b) {
                             return to_values(a) < to_values(b);
                         }));
    for (const auto& t : space) CHECK(is_legal(in, t, hw));

    // Legality depends on the dtype but not on the problem dimensions.
    const GemmInput other{64, 32, 128, Dtype::f32, true, false};
    CHECK(enumerate_legal(other, hw, bounds).size() == 6140);

    GemmInput wide = in;
    wide.dtype = Dtype::f64;  // doubled element size shrinks the space
    CHECK(enumerate_legal(wide, hw, bounds).size() == 2970);
}

TEST_CASE("conv enumeration against the shipped reduced bounds") {
    const HardwareDescriptor hw;
    const ConvBounds bounds = ConvBounds::load("fixtures/bounds/conv_small.json");
    const ConvInput in{16, 24, 240, 32, 16, 3, 3, Dtype::f32};
    auto space = enumerate_legal(in, hw, bounds);
    CHECK(space.size() == 14448);
    CHECK(std::is_sorted(space.begin(), space.end(),
                         [](const ConvTuning& a, const ConvTuning& b) {
                             return to_values(a) < to_values(b);
                         }));
}

TEST_CASE("gemm feature encoding is frozen") {
    GemmInput in{64, 32, 128, Dtype::f64, true, false};
    GemmTuning t = gemm(2, 4, 8, 16, 4, 2, 2, 1);
    std::vector<double> expect = {64, 32, 128, 8, 2, 1, 2, 4, 8, 16, 4, 2, 2, 1};
    CHECK(encode_features(in, t) == expect);
    CHECK(int(expect.size()) == kGemmFeatureDim);
}

TEST_CASE("conv feature encoding is frozen") {
    ConvInput in{16, 12, 120, 64, 32, 3, 3, Dtype::f32};
    ConvTuning t;  // all ones
    std::vector<double> expect = {16, 12, 120, 64, 32, 3, 3,
                                  1,  1,  1,   1,  1,  1, 1, 1, 1, 1, 1, 1};
    CHECK(encode_features(in, t) == expect);
    CHECK(int(expect.size()) == kConvFeatureDim);
    // Every feature is strictly positive, so the log transform is safe.
    for (double v : encode_features(in, t)) CHECK(v > 0.0);
}

TEST_CASE("input validation rejects non-positive dimensions") {
    GemmInput in{0, 4, 4, Dtype::f32, false, false};
    CHECK_THROWS_AS(in.validate(), std::invalid_argument);
    ConvInput ci{1, 1, 1, 1, 1, 0, 1, Dtype::f32};
    CHECK_THROWS_AS(ci.validate(), std::invalid_argument);
}
