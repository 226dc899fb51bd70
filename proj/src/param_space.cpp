#include "ktune/param_space.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ktune {

namespace {

bool is_pow2(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

void check_positive(std::int64_t v, const char* name) {
    if (v < 1) {
        throw std::invalid_argument(std::string(name) + " must be >= 1, got " +
                                    std::to_string(v));
    }
}

void check_pow2_field(int v, const char* name) {
    if (v < 1 || v > 256 || !is_pow2(v)) {
        throw std::invalid_argument(std::string(name) +
                                    " must be a power of two in [1, 256], got " +
                                    std::to_string(v));
    }
}

}  // namespace

int dtype_size_bytes(Dtype d) {
    switch (d) {
        case Dtype::f16: return 2;
        case Dtype::f32: return 4;
        case Dtype::f64: return 8;
    }
    throw std::invalid_argument("unknown dtype");
}

const char* to_string(Dtype d) {
    switch (d) {
        case Dtype::f16: return "f16";
        case Dtype::f32: return "f32";
        case Dtype::f64: return "f64";
    }
    throw std::invalid_argument("unknown dtype");
}

Dtype dtype_from_string(const std::string& name) {
    if (name == "f16") return Dtype::f16;
    if (name == "f32") return Dtype::f32;
    if (name == "f64") return Dtype::f64;
    throw std::invalid_argument("unknown dtype name: " + name);
}

void GemmInput::validate() const {
    check_positive(m, "m");
    check_positive(n, "n");
    check_positive(k, "k");
}

void ConvInput::validate() const {
    check_positive(n_batch, "n_batch");
    check_positive(p, "p");
    check_positive(q, "q");
    check_positive(k_filters, "k_filters");
    check_positive(c, "c");
    check_positive(r, "r");
    check_positive(s, "s");
}

void GemmTuning::validate() const {
    check_pow2_field(m_s, "m_s");
    check_pow2_field(n_s, "n_s");
    check_pow2_field(m_l, "m_l");
    check_pow2_field(n_l, "n_l");
    check_pow2_field(u, "u");
    check_pow2_field(k_s, "k_s");
    check_pow2_field(k_l, "k_l");
    check_pow2_field(k_g, "k_g");
}

void ConvTuning::validate() const {
    check_pow2_field(k_s, "k_s");
    check_pow2_field(p_s, "p_s");
    check_pow2_field(q_s, "q_s");
    check_pow2_field(n_s, "n_s");
    check_pow2_field(k_l, "k_l");
    check_pow2_field(p_l, "p_l");
    check_pow2_field(q_l, "q_l");
    check_pow2_field(n_l, "n_l");
    check_pow2_field(u, "u");
    check_pow2_field(c_s, "c_s");
    check_pow2_field(c_l, "c_l");
    check_pow2_field(c_g, "c_g");
}

void HardwareDescriptor::validate() const {
    check_positive(max_shared_bytes_per_block, "max_shared_bytes_per_block");
    check_positive(max_registers_per_thread, "max_registers_per_thread");
    check_positive(max_threads_per_block, "max_threads_per_block");
    check_positive(max_warps_per_multiprocessor, "max_warps_per_multiprocessor");
    check_positive(warp_size, "warp_size");
    check_positive(num_multiprocessors, "num_multiprocessors");
    if (alu_latency <= 0 || alu_throughput <= 0 || mem_latency <= 0 ||
        mem_throughput <= 0 || clock_hz <= 0) {
        throw std::invalid_argument("hardware timing constants must be positive");
    }
    if (alu_latency < alu_throughput || mem_latency < mem_throughput) {
        throw std::invalid_argument(
            "latency must be at least the saturated cost per instruction");
    }
}

namespace {

using nlohmann::json;

json parse_json_text(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error(std::string("malformed JSON in ") + what);
    }
    return j;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open file: " + path);
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

HardwareDescriptor HardwareDescriptor::from_json_text(const std::string& text) {
    json j = parse_json_text(text, "hardware descriptor");
    if (!j.is_object()) {
        throw std::runtime_error("hardware descriptor must be a JSON object");
    }
    static const char* const known[] = {
        "max_shared_bytes_per_block", "max_registers_per_thread",
        "max_threads_per_block",      "max_warps_per_multiprocessor",
        "warp_size",                  "alu_latency",
        "alu_throughput",             "mem_latency",
        "mem_throughput",             "clock_hz",
        "num_multiprocessors"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) {
            throw std::runtime_error("unknown hardware descriptor field: " +
                                     item.key());
        }
    }
    HardwareDescriptor hw;
    try {
        hw.max_shared_bytes_per_block = j.at("max_shared_bytes_per_block").get<std::int64_t>();
        hw.max_registers_per_thread = j.at("max_registers_per_thread").get<std::int64_t>();
        hw.max_threads_per_block = j.at("max_threads_per_block").get<std::int64_t>();
        hw.max_warps_per_multiprocessor = j.at("max_warps_per_multiprocessor").get<std::int64_t>();
        hw.warp_size = j.at("warp_size").get<std::int64_t>();
        hw.alu_latency = j.at("alu_latency").get<double>();
        hw.alu_throughput = j.at("alu_throughput").get<double>();
        hw.mem_latency = j.at("mem_latency").get<double>();
        hw.mem_throughput = j.at("mem_throughput").get<double>();
        hw.clock_hz = j.at("clock_hz").get<double>();
        hw.num_multiprocessors = j.at("num_multiprocessors").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("bad hardware descriptor: ") + e.what());
    }
    hw.validate();
    return hw;
}

HardwareDescriptor HardwareDescriptor::load(const std::string& path) {
    try {
        return from_json_text(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("hardware descriptor " + path + ": " + e.what());
    }
}

std::string HardwareDescriptor::to_json_text() const {
    json j;
    j["max_shared_bytes_per_block"] = max_shared_bytes_per_block;
    j["max_registers_per_thread"] = max_registers_per_thread;
    j["max_threads_per_block"] = max_threads_per_block;
    j["max_warps_per_multiprocessor"] = max_warps_per_multiprocessor;
    j["warp_size"] = warp_size;
    j["alu_latency"] = alu_latency;
    j["alu_throughput"] = alu_throughput;
    j["mem_latency"] = mem_latency;
    j["mem_throughput"] = mem_throughput;
    j["clock_hz"] = clock_hz;
    j["num_multiprocessors"] = num_multiprocessors;
    return j.dump(2) + "\n";
}

ResourceUsage estimate_resources(const GemmInput& in, const GemmTuning& t) {
    in.validate();
    t.validate();
    ResourceUsage r;
    // Double-buffered tiles of A (m_l x u) and B (u x n_l).
    r.shared_bytes = 2ll * dtype_size_bytes(in.dtype) *
                     (std::int64_t(t.m_l) * t.u + std::int64_t(t.u) * t.n_l);
    // Accumulator tile plus one fragment of each operand plus bookkeeping.
    r.registers_per_thread = std::int64_t(t.m_s) * t.n_s + t.m_s + t.n_s + 8;
    r.threads_per_block = std::int64_t(t.m_l / t.m_s) * (t.n_l / t.n_s) * t.k_l;
    return r;
}

ResourceUsage estimate_resources(const ConvInput& in, const ConvTuning& t) {
    in.validate();
    t.validate();
    ResourceUsage r;
    // Double-buffered tiles of the image gather (n_l*p_l*q_l x u) and the
    // filter slice (u x k_l).
    r.shared_bytes =
        2ll * dtype_size_bytes(in.dtype) *
        (std::int64_t(t.n_l) * t.p_l * t.q_l * t.u + std::int64_t(t.u) * t.k_l);
    r.registers_per_thread = std::int64_t(t.k_s) * t.p_s * t.q_s * t.n_s +
                             std::int64_t(t.p_s) * t.q_s * t.n_s + t.k_s + 8;
    r.threads_per_block = std::int64_t(t.k_l / t.k_s) * (t.p_l / t.p_s) *
                          (t.q_l / t.q_s) * (t.n_l / t.n_s) * t.c_l;
    return r;
}

const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::divisibility: return "divisibility";
        case RejectReason::shared_memory: return "shared_memory";
        case RejectReason::registers: return "registers";
        case RejectReason::threads: return "threads";
    }
    return "?";
}

namespace {

LegalityVerdict reject(RejectReason reason, std::string detail) {
    LegalityVerdict v;
    v.accepted = false;
    v.reason = reason;
    v.detail = std::move(detail);
    return v;
}

LegalityVerdict check_resources(const ResourceUsage& r,
                                const HardwareDescriptor& hw) {
    if (r.shared_bytes > hw.max_shared_bytes_per_block) {
        return reject(RejectReason::shared_memory,
                      std::to_string(r.shared_bytes) + " shared bytes > " +
                          std::to_string(hw.max_shared_bytes_per_block));
    }
    if (r.registers_per_thread > hw.max_registers_per_thread) {
        return reject(RejectReason::registers,
                      std::to_string(r.registers_per_thread) + " registers > " +
                          std::to_string(hw.max_registers_per_thread));
    }
    if (r.threads_per_block > hw.max_threads_per_block) {
        return reject(RejectReason::threads,
                      std::to_string(r.threads_per_block) + " threads > " +
                          std::to_string(hw.max_threads_per_block));
    }
    return {};
}

}  // namespace

LegalityVerdict is_legal(const GemmInput& in, const GemmTuning& t,
                         const HardwareDescriptor& hw) {
    in.validate();
    t.validate();
    hw.validate();
    if (t.m_l % t.m_s != 0) {
        return reject(RejectReason::divisibility, "m_l not divisible by m_s");
    }
    if (t.n_l % t.n_s != 0) {
        return reject(RejectReason::divisibility, "n_l not divisible by n_s");
    }
    // Covers k_s > u as well: u mod k_s = u != 0 in that case.
    if (t.u % t.k_s != 0) {
        return reject(RejectReason::divisibility, "u not divisible by k_s");
    }
    return check_resources(estimate_resources(in, t), hw);
}

LegalityVerdict is_legal(const ConvInput& in, const ConvTuning& t,
                         const HardwareDescriptor& hw) {
    in.validate();
    t.validate();
    hw.validate();
    if (t.k_l % t.k_s != 0) {
        return reject(RejectReason::divisibility, "k_l not divisible by k_s");
    }
    if (t.p_l % t.p_s != 0) {
        return reject(RejectReason::divisibility, "p_l not divisible by p_s");
    }
    if (t.q_l % t.q_s != 0) {
        return reject(RejectReason::divisibility, "q_l not divisible by q_s");
    }
    if (t.n_l % t.n_s != 0) {
        return reject(RejectReason::divisibility, "n_l not divisible by n_s");
    }
    if (t.u % t.c_s != 0) {
        return reject(RejectReason::divisibility, "u not divisible by c_s");
    }
    return check_resources(estimate_resources(in, t), hw);
}

namespace {

std::vector<int> pow2_upto(int hi) {
    std::vector<int> v;
    for (int x = 1; x <= hi; x *= 2) v.push_back(x);
    return v;
}

void validate_value_list(const std::string& name, const std::vector<int>& vals) {
    if (vals.empty()) {
        throw std::invalid_argument("bounds for " + name + " are empty");
    }
    int prev = 0;
    for (int v : vals) {
        if (!is_pow2(v) || v > 256) {
            throw std::invalid_argument("bounds for " + name +
                                        " must be powers of two in [1, 256]");
        }
        if (v <= prev) {
            throw std::invalid_argument("bounds for " + name +
                                        " must be strictly increasing");
        }
        prev = v;
    }
}

void bounds_from_json(const std::string& text,
                      const std::vector<std::string>& names,
                      const std::vector<std::vector<int>*>& slots) {
    json j = parse_json_text(text, "bounds file");
    if (!j.is_object()) {
        throw std::runtime_error("bounds file must be a JSON object");
    }
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const auto& n : names) ok = ok || n == item.key();
        if (!ok) {
            throw std::runtime_error("unknown bounds parameter: " + item.key());
        }
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!j.contains(names[i])) {
            throw std::runtime_error("bounds file missing parameter: " + names[i]);
        }
        try {
            *slots[i] = j.at(names[i]).get<std::vector<int>>();
        } catch (const json::exception& e) {
            throw std::runtime_error("bounds for " + names[i] +
                                     " must be an integer list: " + e.what());
        }
    }
}

std::string bounds_to_json(const std::vector<std::string>& names,
                           const std::vector<const std::vector<int>*>& slots) {
    json j = json::object();
    for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = *slots[i];
    return j.dump(2) + "\n";
}

}  // namespace

const std::vector<std::string>& gemm_param_names() {
    static const std::vector<std::string> names = {"m_s", "n_s", "m_l", "n_l",
                                                   "u",   "k_s", "k_l", "k_g"};
    return names;
}

const std::vector<std::string>& conv_param_names() {
    static const std::vector<std::string> names = {
        "k_s", "p_s", "q_s", "n_s", "k_l", "p_l",
        "q_l", "n_l", "u",   "c_s", "c_l", "c_g"};
    return names;
}

GemmBounds GemmBounds::defaults() {
    GemmBounds b;
    for (auto* list : {&b.m_s, &b.n_s, &b.m_l, &b.n_l, &b.u, &b.k_s, &b.k_l, &b.k_g}) {
        *list = pow2_upto(16);
    }
    return b;
}

void GemmBounds::validate() const {
    auto lists = as_lists();
    for (std::size_t i = 0; i < lists.size(); ++i) {
        validate_value_list(gemm_param_names()[i], lists[i]);
    }
}

std::vector<std::vector<int>> GemmBounds::as_lists() const {
    return {m_s, n_s, m_l, n_l, u, k_s, k_l, k_g};
}

GemmBounds GemmBounds::from_json_text(const std::string& text) {
    GemmBounds b;
    bounds_from_json(
        text, gemm_param_names(),
        {&b.m_s, &b.n_s, &b.m_l, &b.n_l, &b.u, &b.k_s, &b.k_l, &b.k_g});
    b.validate();
    return b;
}

GemmBounds GemmBounds::load(const std::string& path) {
    try {
        return from_json_text(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("bounds file " + path + ": " + e.what());
    }
}

std::string GemmBounds::to_json_text() const {
    return bounds_to_json(
        gemm_param_names(),
        {&m_s, &n_s, &m_l, &n_l, &u, &k_s, &k_l, &k_g});
}

ConvBounds ConvBounds::defaults() {
    ConvBounds b;
    for (auto* list : {&b.k_s, &b.p_s, &b.q_s, &b.n_s, &b.k_l, &b.p_l, &b.q_l,
                       &b.n_l, &b.u, &b.c_s, &b.c_l, &b.c_g}) {
        *list = pow2_upto(16);
    }
    return b;
}

void ConvBounds::validate() const {
    auto lists = as_lists();
    for (std::size_t i = 0; i < lists.size(); ++i) {
        validate_value_list(conv_param_names()[i], lists[i]);
    }
}

std::vector<std::vector<int>> ConvBounds::as_lists() const {
    return {k_s, p_s, q_s, n_s, k_l, p_l, q_l, n_l, u, c_s, c_l, c_g};
}

ConvBounds ConvBounds::from_json_text(const std::string& text) {
    ConvBounds b;
    bounds_from_json(
        text, conv_param_names(),
        {&b.k_s, &b.p_s, &b.q_s, &b.n_s, &b.k_l, &b.p_l, &b.q_l, &b.n_l, &b.u,
         &b.c_s, &b.c_l, &b.c_g});
    b.validate();
    return b;
}

ConvBounds ConvBounds::load(const std::string& path) {
    try {
        return from_json_text(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("bounds file " + path + ": " + e.what());
    }
}

std::string ConvBounds::to_json_text() const {
    return bounds_to_json(
        conv_param_names(),
        {&k_s, &p_s, &q_s, &n_s, &k_l, &p_l, &q_l, &n_l, &u, &c_s, &c_l, &c_g});
}

std::vector<int> to_values(const GemmTuning& t) {
    return {t.m_s, t.n_s, t.m_l, t.n_l, t.u, t.k_s, t.k_l, t.k_g};
}

std::vector<int> to_values(const ConvTuning& t) {
    return {t.k_s, t.p_s, t.q_s, t.n_s, t.k_l, t.p_l,
            t.q_l, t.n_l, t.u,   t.c_s, t.c_l, t.c_g};
}

GemmTuning gemm_tuning_from_values(const std::vector<int>& v) {
    if (v.size() != 8) {
        throw std::invalid_argument("gemm tuning vector must have 8 entries");
    }
    GemmTuning t;
    t.m_s = v[0];
    t.n_s = v[1];
    t.m_l = v[2];
    t.n_l = v[3];
    t.u = v[4];
    t.k_s = v[5];
    t.k_l = v[6];
    t.k_g = v[7];
    return t;
}

ConvTuning conv_tuning_from_values(const std::vector<int>& v) {
    if (v.size() != 12) {
        throw std::invalid_argument("conv tuning vector must have 12 entries");
    }
    ConvTuning t;
    t.k_s = v[0];
    t.p_s = v[1];
    t.q_s = v[2];
    t.n_s = v[3];
    t.k_l = v[4];
    t.p_l = v[5];
    t.q_l = v[6];
    t.n_l = v[7];
    t.u = v[8];
    t.c_s = v[9];
    t.c_l = v[10];
    t.c_g = v[11];
    return t;
}

std::function<bool(const std::vector<int>&)> make_legality(
    const GemmInput& in, const HardwareDescriptor& hw) {
    return [in, hw](const std::vector<int>& v) {
        return static_cast<bool>(is_legal(in, gemm_tuning_from_values(v), hw));
    };
}

std::function<bool(const std::vector<int>&)> make_legality(
    const ConvInput& in, const HardwareDescriptor& hw) {
    return [in, hw](const std::vector<int>& v) {
        return static_cast<bool>(is_legal(in, conv_tuning_from_values(v), hw));
    };
}

std::vector<GemmTuning> enumerate_legal(const GemmInput& in,
                                        const HardwareDescriptor& hw,
                                        const GemmBounds& bounds) {
    in.validate();
    hw.validate();
    bounds.validate();
    std::vector<GemmTuning> out;
    GemmTuning t;
    for (int m_s : bounds.m_s) {
        t.m_s = m_s;
        for (int n_s : bounds.n_s) {
            t.n_s = n_s;
            for (int m_l : bounds.m_l) {
                if (m_l % m_s != 0) continue;
                t.m_l = m_l;
                for (int n_l : bounds.n_l) {
                    if (n_l % n_s != 0) continue;
                    t.n_l = n_l;
                    for (int u : bounds.u) {
                        t.u = u;
                        for (int k_s : bounds.k_s) {
                            if (u % k_s != 0) continue;
                            t.k_s = k_s;
                            for (int k_l : bounds.k_l) {
                                t.k_l = k_l;
                                for (int k_g : bounds.k_g) {
                                    t.k_g = k_g;
                                    if (is_legal(in, t, hw)) out.push_back(t);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

std::vector<ConvTuning> enumerate_legal(const ConvInput& in,
                                        const HardwareDescriptor& hw,
                                        const ConvBounds& bounds) {
    in.validate();
    hw.validate();
    bounds.validate();
    std::vector<ConvTuning> out;
    ConvTuning t;
    for (int k_s : bounds.k_s) {
        t.k_s = k_s;
        for (int p_s : bounds.p_s) {
            t.p_s = p_s;
            for (int q_s : bounds.q_s) {
                t.q_s = q_s;
                for (int n_s : bounds.n_s) {
                    t.n_s = n_s;
                    for (int k_l : bounds.k_l) {
                        if (k_l % k_s != 0) continue;
                        t.k_l = k_l;
                        for (int p_l : bounds.p_l) {
                            if (p_l % p_s != 0) continue;
                            t.p_l = p_l;
                            for (int q_l : bounds.q_l) {
                                if (q_l % q_s != 0) continue;
                                t.q_l = q_l;
                                for (int n_l : bounds.n_l) {
                                    if (n_l % n_s != 0) continue;
                                    t.n_l = n_l;
                                    for (int u : bounds.u) {
                                        t.u = u;
                                        for (int c_s : bounds.c_s) {
                                            if (u % c_s != 0) continue;
                                            t.c_s = c_s;
                                            for (int c_l : bounds.c_l) {
                                                t.c_l = c_l;
                                                for (int c_g : bounds.c_g) {
                                                    t.c_g = c_g;
                                                    if (is_legal(in, t, hw)) {
                                                        out.push_back(t);
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
            }
        }
    }
    return out;
}

std::vector<double> encode_features(const GemmInput& in, const GemmTuning& t) {
    in.validate();
    t.validate();
    std::vector<double> f;
    f.reserve(kGemmFeatureDim);
    f.push_back(double(in.m));
    f.push_back(double(in.n));
    f.push_back(double(in.k));
    f.push_back(double(dtype_size_bytes(in.dtype)));
    f.push_back(in.trans_a ? 2.0 : 1.0);
    f.push_back(in.trans_b ? 2.0 : 1.0);
    for (int v : to_values(t)) f.push_back(double(v));
    return f;
}

std::vector<double> encode_features(const ConvInput& in, const ConvTuning& t) {
    in.validate();
    t.validate();
    std::vector<double> f;
    f.reserve(kConvFeatureDim);
    f.push_back(double(in.n_batch));
    f.push_back(double(in.p));
    f.push_back(double(in.q));
    f.push_back(double(in.k_filters));
    f.push_back(double(in.c));
    f.push_back(double(in.r));
    f.push_back(double(in.s));
    for (int v : to_values(t)) f.push_back(double(v));
    return f;
}

}  // namespace ktune
