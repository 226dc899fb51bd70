#include "ktune/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ktune {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw std::runtime_error("cannot format floating-point value");
    }
    return std::string(buf, p);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw std::runtime_error("bad numeric field: '" + s + "'");
    }
    return v;
}

int parse_int(const std::string& s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw std::runtime_error("bad integer field: '" + s + "'");
    }
    return v;
}

bool parse_flag(const std::string& s) {
    if (s == "0") return false;
    if (s == "1") return true;
    throw std::runtime_error("bad boolean field: '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

void check_backend_tag(const std::string& tag) {
    if (tag.empty() || tag.find(',') != std::string::npos ||
        tag.find('\n') != std::string::npos) {
        throw std::invalid_argument("backend tag unfit for CSV: '" + tag + "'");
    }
}

std::string read_text_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(std::string("cannot open ") + what + ": " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

void write_text_file_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write file: " + tmp);
        }
        out << text;
        if (!out) {
            throw std::runtime_error("write failed: " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string sample_key(const GemmInput& in, const GemmTuning& t) {
    std::ostringstream key;
    key << in.m << '|' << in.n << '|' << in.k << '|' << to_string(in.dtype)
        << '|' << in.trans_a << '|' << in.trans_b;
    for (int v : to_values(t)) key << '|' << v;
    return key.str();
}

std::string sample_key(const ConvInput& in, const ConvTuning& t) {
    std::ostringstream key;
    key << in.n_batch << '|' << in.p << '|' << in.q << '|' << in.k_filters
        << '|' << in.c << '|' << in.r << '|' << in.s << '|'
        << to_string(in.dtype);
    for (int v : to_values(t)) key << '|' << v;
    return key.str();
}

// Consecutive duplicate draws tolerated before generation gives up.
constexpr int kDuplicateRedrawLimit = 10000;

}  // namespace

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

std::string to_csv_text(const GemmDataset& ds) {
    std::ostringstream out;
    out << kGemmCsvHeader << '\n';
    for (const auto& s : ds.samples) {
        check_backend_tag(s.backend);
        out << s.input.m << ',' << s.input.n << ',' << s.input.k << ','
            << to_string(s.input.dtype) << ',' << int(s.input.trans_a) << ','
            << int(s.input.trans_b);
        for (int v : to_values(s.tuning)) out << ',' << v;
        out << ',' << format_double(s.gflops) << ',' << s.backend << '\n';
    }
    return out.str();
}

std::string to_csv_text(const ConvDataset& ds) {
    std::ostringstream out;
    out << kConvCsvHeader << '\n';
    for (const auto& s : ds.samples) {
        check_backend_tag(s.backend);
        out << s.input.n_batch << ',' << s.input.p << ',' << s.input.q << ','
            << s.input.k_filters << ',' << s.input.c << ',' << s.input.r << ','
            << s.input.s << ',' << to_string(s.input.dtype);
        for (int v : to_values(s.tuning)) out << ',' << v;
        out << ',' << format_double(s.gflops) << ',' << s.backend << '\n';
    }
    return out.str();
}

namespace {

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text,
                                                     const char* expect_header,
                                                     std::size_t n_cols) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("dataset is empty: missing header row");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expect_header) {
        throw std::runtime_error(
            "dataset header mismatch (wrong problem kind or schema): got '" +
            line + "'");
    }
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != n_cols) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": expected " + std::to_string(n_cols) +
                                     " columns, got " +
                                     std::to_string(fields.size()));
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace

GemmDataset gemm_dataset_from_csv_text(const std::string& text) {
    GemmDataset ds;
    for (const auto& f : parse_csv_rows(text, kGemmCsvHeader, 16)) {
        GemmSample s;
        s.input.m = parse_int(f[0]);
        s.input.n = parse_int(f[1]);
        s.input.k = parse_int(f[2]);
        s.input.dtype = dtype_from_string(f[3]);
        s.input.trans_a = parse_flag(f[4]);
        s.input.trans_b = parse_flag(f[5]);
        std::vector<int> vals(8);
        for (int i = 0; i < 8; ++i) vals[std::size_t(i)] = parse_int(f[std::size_t(6 + i)]);
        s.tuning = gemm_tuning_from_values(vals);
        s.gflops = parse_double(f[14]);
        s.backend = f[15];
        s.input.validate();
        s.tuning.validate();
        if (!(std::isfinite(s.gflops) && s.gflops > 0.0)) {
            throw std::runtime_error("dataset row with non-positive gflops");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

ConvDataset conv_dataset_from_csv_text(const std::string& text) {
    ConvDataset ds;
    for (const auto& f : parse_csv_rows(text, kConvCsvHeader, 22)) {
        ConvSample s;
        s.input.n_batch = parse_int(f[0]);
        s.input.p = parse_int(f[1]);
        s.input.q = parse_int(f[2]);
        s.input.k_filters = parse_int(f[3]);
        s.input.c = parse_int(f[4]);
        s.input.r = parse_int(f[5]);
        s.input.s = parse_int(f[6]);
        s.input.dtype = dtype_from_string(f[7]);
        std::vector<int> vals(12);
        for (int i = 0; i < 12; ++i) vals[std::size_t(i)] = parse_int(f[std::size_t(8 + i)]);
        s.tuning = conv_tuning_from_values(vals);
        s.gflops = parse_double(f[20]);
        s.backend = f[21];
        s.input.validate();
        s.tuning.validate();
        if (!(std::isfinite(s.gflops) && s.gflops > 0.0)) {
            throw std::runtime_error("dataset row with non-positive gflops");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_gemm_dataset(const GemmDataset& ds, const std::string& path) {
    write_text_file_atomic(path, to_csv_text(ds));
}

void save_conv_dataset(const ConvDataset& ds, const std::string& path) {
    write_text_file_atomic(path, to_csv_text(ds));
}

GemmDataset load_gemm_dataset(const std::string& path) {
    try {
        return gemm_dataset_from_csv_text(read_text_file(path, "dataset"));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

ConvDataset load_conv_dataset(const std::string& path) {
    try {
        return conv_dataset_from_csv_text(read_text_file(path, "dataset"));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void validate_dataset(const GemmDataset& ds, const HardwareDescriptor& hw) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        if (auto verdict = is_legal(s.input, s.tuning, hw); !verdict) {
            throw std::runtime_error("dataset row " + std::to_string(i) +
                                     " is illegal: " + verdict.detail);
        }
        if (!(std::isfinite(s.gflops) && s.gflops > 0.0)) {
            throw std::runtime_error("dataset row " + std::to_string(i) +
                                     " has non-positive gflops");
        }
        if (!seen.insert(sample_key(s.input, s.tuning)).second) {
            throw std::runtime_error("dataset row " + std::to_string(i) +
                                     " duplicates an earlier (input, tuning)");
        }
    }
}

void validate_dataset(const ConvDataset& ds, const HardwareDescriptor& hw) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        if (auto verdict = is_legal(s.input, s.tuning, hw); !verdict) {
            throw std::runtime_error("dataset row " + std::to_string(i) +
                                     " is illegal: " + verdict.detail);
        }
        if (!(std::isfinite(s.gflops) && s.gflops > 0.0)) {
            throw std::runtime_error("dataset row " + std::to_string(i) +
                                     " has non-positive gflops");
        }
        if (!seen.insert(sample_key(s.input, s.tuning)).second) {
            throw std::runtime_error("dataset row " + std::to_string(i) +
                                     " duplicates an earlier (input, tuning)");
        }
    }
}

TrainingSet to_training_set(const GemmDataset& ds) {
    TrainingSet set;
    for (const auto& s : ds.samples) {
        set.add(encode_features(s.input, s.tuning), std::log(s.gflops));
    }
    return set;
}

TrainingSet to_training_set(const ConvDataset& ds) {
    TrainingSet set;
    for (const auto& s : ds.samples) {
        set.add(encode_features(s.input, s.tuning), std::log(s.gflops));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Input distributions
// ---------------------------------------------------------------------------

int log_uniform_int(std::mt19937_64& rng, int lo, int hi) {
    if (lo < 1 || hi < lo) {
        throw std::invalid_argument("log-uniform range must satisfy 1 <= lo <= hi");
    }
    const double a = std::log(double(lo));
    const double b = std::log(double(hi) + 1.0);
    const int v = int(std::floor(std::exp(a + unit_real(rng) * (b - a))));
    return std::clamp(v, lo, hi);
}

namespace {

void check_weights(std::size_t n_shapes, const std::vector<double>& weights) {
    if (weights.empty()) return;
    if (weights.size() != n_shapes) {
        throw std::invalid_argument("weights must parallel the shape list");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw std::invalid_argument("shape weights must be finite and >= 0");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("shape weights must have positive mass");
    }
}

std::size_t draw_weighted(std::mt19937_64& rng, std::size_t n,
                          const std::vector<double>& weights) {
    if (weights.empty()) return index_below(rng, n);
    double total = 0.0;
    for (double w : weights) total += w;
    const double x = unit_real(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += weights[i];
        if (x < acc) return i;
    }
    return n - 1;
}

}  // namespace

void GemmInputDistribution::validate() const {
    if (shapes.empty() && !use_ranges) {
        throw std::invalid_argument("distribution has neither shapes nor ranges");
    }
    for (const auto& s : shapes) s.validate();
    check_weights(shapes.size(), weights);
    if (!(fixed_fraction >= 0.0 && fixed_fraction <= 1.0)) {
        throw std::invalid_argument("fixed_fraction must lie in [0, 1]");
    }
    if (use_ranges &&
        (m_lo < 1 || m_hi < m_lo || n_lo < 1 || n_hi < n_lo || k_lo < 1 ||
         k_hi < k_lo)) {
        throw std::invalid_argument("bad shape ranges");
    }
}

GemmInput GemmInputDistribution::draw(std::mt19937_64& rng) const {
    bool from_list = !shapes.empty();
    if (from_list && use_ranges) {
        from_list = unit_real(rng) < fixed_fraction;
    }
    if (from_list) {
        return shapes[draw_weighted(rng, shapes.size(), weights)];
    }
    GemmInput in;
    in.m = log_uniform_int(rng, m_lo, m_hi);
    in.n = log_uniform_int(rng, n_lo, n_hi);
    in.k = log_uniform_int(rng, k_lo, k_hi);
    in.dtype = dtype;
    if (randomize_transpose) {
        in.trans_a = index_below(rng, 2) == 1;
        in.trans_b = index_below(rng, 2) == 1;
    }
    return in;
}

void ConvInputDistribution::validate() const {
    if (shapes.empty() && !use_ranges) {
        throw std::invalid_argument("distribution has neither shapes nor ranges");
    }
    for (const auto& s : shapes) s.validate();
    check_weights(shapes.size(), weights);
    if (!(fixed_fraction >= 0.0 && fixed_fraction <= 1.0)) {
        throw std::invalid_argument("fixed_fraction must lie in [0, 1]");
    }
    if (use_ranges) {
        if (n_lo < 1 || n_hi < n_lo || p_lo < 1 || p_hi < p_lo || q_lo < 1 ||
            q_hi < q_lo || k_lo < 1 || k_hi < k_lo || c_lo < 1 || c_hi < c_lo) {
            throw std::invalid_argument("bad shape ranges");
        }
        if (rs_choices.empty()) {
            throw std::invalid_argument("rs_choices must not be empty");
        }
        for (auto [r, s] : rs_choices) {
            if (r < 1 || s < 1) {
                throw std::invalid_argument("filter sizes must be >= 1");
            }
        }
    }
}

ConvInput ConvInputDistribution::draw(std::mt19937_64& rng) const {
    bool from_list = !shapes.empty();
    if (from_list && use_ranges) {
        from_list = unit_real(rng) < fixed_fraction;
    }
    if (from_list) {
        return shapes[draw_weighted(rng, shapes.size(), weights)];
    }
    ConvInput in;
    in.n_batch = log_uniform_int(rng, n_lo, n_hi);
    in.p = log_uniform_int(rng, p_lo, p_hi);
    in.q = log_uniform_int(rng, q_lo, q_hi);
    in.k_filters = log_uniform_int(rng, k_lo, k_hi);
    in.c = log_uniform_int(rng, c_lo, c_hi);
    const auto [r, s] = rs_choices[index_below(rng, rs_choices.size())];
    in.r = r;
    in.s = s;
    in.dtype = dtype;
    return in;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

GemmDataset generate_gemm_dataset(MeasurementBackend& backend,
                                  const CategoricalModel& sampler_model,
                                  const GemmInputDistribution& dist,
                                  const GemmBounds& bounds,
                                  const HardwareDescriptor& hw, int n_samples,
                                  std::uint64_t seed, GenerateReport* report) {
    if (n_samples < 1) {
        throw std::invalid_argument("n_samples must be >= 1");
    }
    dist.validate();
    sampler_model.validate();
    bounds.validate();
    (void)bounds;  // sampler_model carries the value lists; bounds sanity only

    std::mt19937_64 rng(seed);
    GemmDataset ds;
    ds.samples.reserve(std::size_t(n_samples));
    std::set<std::string> seen;
    GenerateReport rep;
    int consecutive_duplicates = 0;
    while (int(ds.samples.size()) < n_samples) {
        const GemmInput input = dist.draw(rng);
        const auto legal = make_legality(input, hw);
        const std::vector<int> vals = sample(sampler_model, legal, rng);
        ++rep.attempts;
        const GemmTuning tuning = gemm_tuning_from_values(vals);
        if (!seen.insert(sample_key(input, tuning)).second) {
            ++rep.duplicates_rejected;
            if (++consecutive_duplicates > kDuplicateRedrawLimit) {
                throw std::runtime_error(
                    "dataset generation stalled: " +
                    std::to_string(kDuplicateRedrawLimit) +
                    " consecutive duplicate draws — space too small for " +
                    std::to_string(n_samples) + " distinct samples");
            }
            continue;
        }
        consecutive_duplicates = 0;
        const double gflops = backend.measure(input, tuning);
        if (!(std::isfinite(gflops) && gflops > 0.0)) {
            throw std::runtime_error("backend returned non-positive gflops");
        }
        ds.samples.push_back({input, tuning, gflops, backend.name(), now_ms()});
    }
    if (report) *report = rep;
    return ds;
}

ConvDataset generate_conv_dataset(MeasurementBackend& backend,
                                  const CategoricalModel& sampler_model,
                                  const ConvInputDistribution& dist,
                                  const ConvBounds& bounds,
                                  const HardwareDescriptor& hw, int n_samples,
                                  std::uint64_t seed, GenerateReport* report) {
    if (n_samples < 1) {
        throw std::invalid_argument("n_samples must be >= 1");
    }
    dist.validate();
    sampler_model.validate();
    bounds.validate();

    std::mt19937_64 rng(seed);
    ConvDataset ds;
    ds.samples.reserve(std::size_t(n_samples));
    std::set<std::string> seen;
    GenerateReport rep;
    int consecutive_duplicates = 0;
    while (int(ds.samples.size()) < n_samples) {
        const ConvInput input = dist.draw(rng);
        const auto legal = make_legality(input, hw);
        const std::vector<int> vals = sample(sampler_model, legal, rng);
        ++rep.attempts;
        const ConvTuning tuning = conv_tuning_from_values(vals);
        if (!seen.insert(sample_key(input, tuning)).second) {
            ++rep.duplicates_rejected;
            if (++consecutive_duplicates > kDuplicateRedrawLimit) {
                throw std::runtime_error(
                    "dataset generation stalled: " +
                    std::to_string(kDuplicateRedrawLimit) +
                    " consecutive duplicate draws — space too small for " +
                    std::to_string(n_samples) + " distinct samples");
            }
            continue;
        }
        consecutive_duplicates = 0;
        const double gflops = backend.measure(input, tuning);
        if (!(std::isfinite(gflops) && gflops > 0.0)) {
            throw std::runtime_error("backend returned non-positive gflops");
        }
        ds.samples.push_back({input, tuning, gflops, backend.name(), now_ms()});
    }
    if (report) *report = rep;
    return ds;
}

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

MlpPredictor::MlpPredictor(MlpModel model) : model_(std::move(model)) {
    model_.weights.validate();
}

std::string MlpPredictor::name() const { return "mlp"; }

void MlpPredictor::predict_gemm(const GemmInput& input,
                                const std::vector<GemmTuning>& tunings,
                                std::vector<double>& out) const {
    if (model_.feature_version != kGemmFeatureVersion) {
        throw std::invalid_argument("model encodes '" + model_.feature_version +
                                    "', expected '" + kGemmFeatureVersion + "'");
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(tunings.size());
    for (const auto& t : tunings) rows.push_back(encode_features(input, t));
    model_.predict_batch(rows, out);
}

void MlpPredictor::predict_conv(const ConvInput& input,
                                const std::vector<ConvTuning>& tunings,
                                std::vector<double>& out) const {
    if (model_.feature_version != kConvFeatureVersion) {
        throw std::invalid_argument("model encodes '" + model_.feature_version +
                                    "', expected '" + kConvFeatureVersion + "'");
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(tunings.size());
    for (const auto& t : tunings) rows.push_back(encode_features(input, t));
    model_.predict_batch(rows, out);
}

AnalyticalPredictor::AnalyticalPredictor(HardwareDescriptor hw) : hw_(hw) {
    hw_.validate();
}

std::string AnalyticalPredictor::name() const { return "analytical-oracle"; }

void AnalyticalPredictor::predict_gemm(const GemmInput& input,
                                       const std::vector<GemmTuning>& tunings,
                                       std::vector<double>& out) const {
    out.resize(tunings.size());
    for (std::size_t i = 0; i < tunings.size(); ++i) {
        out[i] = std::log(analytical_gflops(input, tunings[i], hw_));
    }
}

void AnalyticalPredictor::predict_conv(const ConvInput& input,
                                       const std::vector<ConvTuning>& tunings,
                                       std::vector<double>& out) const {
    out.resize(tunings.size());
    for (std::size_t i = 0; i < tunings.size(); ++i) {
        out[i] = std::log(analytical_gflops(input, tunings[i], hw_));
    }
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

namespace {

// Indices of the k best predictions; ties broken by lexicographic order of
// the canonical tuning vector so results are reproducible.
template <typename Tuning>
std::vector<std::size_t> rank_top_k(const std::vector<Tuning>& tunings,
                                    const std::vector<double>& pred,
                                    std::size_t k) {
    std::vector<std::vector<int>> values(tunings.size());
    for (std::size_t i = 0; i < tunings.size(); ++i) {
        values[i] = to_values(tunings[i]);
    }
    std::vector<std::size_t> order(tunings.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    auto better = [&](std::size_t a, std::size_t b) {
        if (pred[a] != pred[b]) return pred[a] > pred[b];
        return values[a] < values[b];
    };
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k),
                      order.end(), better);
    order.resize(k);
    return order;
}

}  // namespace

GemmInferenceResult infer_gemm(const PerfPredictor& predictor,
                               const GemmInput& input,
                               const HardwareDescriptor& hw,
                               const GemmBounds& bounds, int top_k,
                               MeasurementBackend& backend) {
    input.validate();
    if (top_k < 1) {
        throw std::invalid_argument("top_k must be >= 1");
    }
    const std::vector<GemmTuning> legal = enumerate_legal(input, hw, bounds);
    if (legal.empty()) {
        throw std::runtime_error("no legal configuration for this input");
    }
    std::vector<double> pred;
    predictor.predict_gemm(input, legal, pred);

    const auto order = rank_top_k(legal, pred, std::size_t(top_k));
    GemmInferenceResult result;
    result.input = input;
    result.legal_space_size = std::int64_t(legal.size());
    result.top_k.reserve(order.size());
    for (std::size_t idx : order) {
        result.top_k.push_back({legal[idx], pred[idx], 0.0});
    }
    std::size_t best = 0;
    for (std::size_t i = 0; i < result.top_k.size(); ++i) {
        auto& cand = result.top_k[i];
        cand.measured_gflops = backend.measure(input, cand.tuning);
        if (cand.measured_gflops > result.top_k[best].measured_gflops) {
            best = i;
        }
    }
    result.chosen = result.top_k[best].tuning;
    result.predicted_log_gflops = result.top_k[best].predicted_log_gflops;
    result.measured_gflops = result.top_k[best].measured_gflops;
    return result;
}

ConvInferenceResult infer_conv(const PerfPredictor& predictor,
                               const ConvInput& input,
                               const HardwareDescriptor& hw,
                               const ConvBounds& bounds, int top_k,
                               MeasurementBackend& backend) {
    input.validate();
    if (top_k < 1) {
        throw std::invalid_argument("top_k must be >= 1");
    }
    const std::vector<ConvTuning> legal = enumerate_legal(input, hw, bounds);
    if (legal.empty()) {
        throw std::runtime_error("no legal configuration for this input");
    }
    std::vector<double> pred;
    predictor.predict_conv(input, legal, pred);

    const auto order = rank_top_k(legal, pred, std::size_t(top_k));
    ConvInferenceResult result;
    result.input = input;
    result.legal_space_size = std::int64_t(legal.size());
    result.top_k.reserve(order.size());
    for (std::size_t idx : order) {
        result.top_k.push_back({legal[idx], pred[idx], 0.0});
    }
    std::size_t best = 0;
    for (std::size_t i = 0; i < result.top_k.size(); ++i) {
        auto& cand = result.top_k[i];
        cand.measured_gflops = backend.measure(input, cand.tuning);
        if (cand.measured_gflops > result.top_k[best].measured_gflops) {
            best = i;
        }
    }
    result.chosen = result.top_k[best].tuning;
    result.predicted_log_gflops = result.top_k[best].predicted_log_gflops;
    result.measured_gflops = result.top_k[best].measured_gflops;
    return result;
}

// ---------------------------------------------------------------------------
// Result JSON + cache
// ---------------------------------------------------------------------------

namespace {

nlohmann::json gemm_input_to_json(const GemmInput& in) {
    return {{"m", in.m},
            {"n", in.n},
            {"k", in.k},
            {"dtype", to_string(in.dtype)},
            {"trans_a", in.trans_a},
            {"trans_b", in.trans_b}};
}

GemmInput gemm_input_from_json(const nlohmann::json& j) {
    GemmInput in;
    in.m = j.at("m").get<int>();
    in.n = j.at("n").get<int>();
    in.k = j.at("k").get<int>();
    in.dtype = dtype_from_string(j.at("dtype").get<std::string>());
    in.trans_a = j.at("trans_a").get<bool>();
    in.trans_b = j.at("trans_b").get<bool>();
    in.validate();
    return in;
}

nlohmann::json conv_input_to_json(const ConvInput& in) {
    return {{"n", in.n_batch},      {"p", in.p}, {"q", in.q},
            {"k", in.k_filters},    {"c", in.c}, {"r", in.r},
            {"s", in.s},            {"dtype", to_string(in.dtype)}};
}

ConvInput conv_input_from_json(const nlohmann::json& j) {
    ConvInput in;
    in.n_batch = j.at("n").get<int>();
    in.p = j.at("p").get<int>();
    in.q = j.at("q").get<int>();
    in.k_filters = j.at("k").get<int>();
    in.c = j.at("c").get<int>();
    in.r = j.at("r").get<int>();
    in.s = j.at("s").get<int>();
    in.dtype = dtype_from_string(j.at("dtype").get<std::string>());
    in.validate();
    return in;
}

template <typename Tuning>
nlohmann::json tuning_to_json(const Tuning& t,
                              const std::vector<std::string>& names) {
    nlohmann::json j;
    const auto vals = to_values(t);
    for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = vals[i];
    return j;
}

std::vector<int> tuning_values_from_json(const nlohmann::json& j,
                                         const std::vector<std::string>& names) {
    std::vector<int> vals;
    vals.reserve(names.size());
    for (const auto& name : names) vals.push_back(j.at(name).get<int>());
    return vals;
}

constexpr const char* kResultFormat = "ktune-result-1";

}  // namespace

std::string to_json_text(const GemmInferenceResult& r) {
    const auto names = gemm_param_names();
    nlohmann::json j;
    j["format"] = kResultFormat;
    j["kind"] = "gemm";
    j["feature_version"] = kGemmFeatureVersion;
    j["input"] = gemm_input_to_json(r.input);
    j["chosen"] = tuning_to_json(r.chosen, names);
    j["predicted_log_gflops"] = r.predicted_log_gflops;
    j["measured_gflops"] = r.measured_gflops;
    j["legal_space_size"] = r.legal_space_size;
    j["top_k"] = nlohmann::json::array();
    for (const auto& c : r.top_k) {
        j["top_k"].push_back({{"tuning", tuning_to_json(c.tuning, names)},
                              {"predicted_log_gflops", c.predicted_log_gflops},
                              {"measured_gflops", c.measured_gflops}});
    }
    return j.dump(2) + "\n";
}

std::string to_json_text(const ConvInferenceResult& r) {
    const auto names = conv_param_names();
    nlohmann::json j;
    j["format"] = kResultFormat;
    j["kind"] = "conv";
    j["feature_version"] = kConvFeatureVersion;
    j["input"] = conv_input_to_json(r.input);
    j["chosen"] = tuning_to_json(r.chosen, names);
    j["predicted_log_gflops"] = r.predicted_log_gflops;
    j["measured_gflops"] = r.measured_gflops;
    j["legal_space_size"] = r.legal_space_size;
    j["top_k"] = nlohmann::json::array();
    for (const auto& c : r.top_k) {
        j["top_k"].push_back({{"tuning", tuning_to_json(c.tuning, names)},
                              {"predicted_log_gflops", c.predicted_log_gflops},
                              {"measured_gflops", c.measured_gflops}});
    }
    return j.dump(2) + "\n";
}

GemmInferenceResult gemm_result_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error("malformed JSON result");
    }
    try {
        if (j.at("format").get<std::string>() != kResultFormat ||
            j.at("kind").get<std::string>() != "gemm") {
            throw std::runtime_error("not a gemm inference result");
        }
        const auto names = gemm_param_names();
        GemmInferenceResult r;
        r.input = gemm_input_from_json(j.at("input"));
        r.chosen =
            gemm_tuning_from_values(tuning_values_from_json(j.at("chosen"), names));
        r.predicted_log_gflops = j.at("predicted_log_gflops").get<double>();
        r.measured_gflops = j.at("measured_gflops").get<double>();
        r.legal_space_size = j.at("legal_space_size").get<std::int64_t>();
        for (const auto& jc : j.at("top_k")) {
            GemmCandidate c;
            c.tuning = gemm_tuning_from_values(
                tuning_values_from_json(jc.at("tuning"), names));
            c.predicted_log_gflops = jc.at("predicted_log_gflops").get<double>();
            c.measured_gflops = jc.at("measured_gflops").get<double>();
            r.top_k.push_back(std::move(c));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("bad result JSON: ") + e.what());
    }
}

ConvInferenceResult conv_result_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error("malformed JSON result");
    }
    try {
        if (j.at("format").get<std::string>() != kResultFormat ||
            j.at("kind").get<std::string>() != "conv") {
            throw std::runtime_error("not a conv inference result");
        }
        const auto names = conv_param_names();
        ConvInferenceResult r;
        r.input = conv_input_from_json(j.at("input"));
        r.chosen =
            conv_tuning_from_values(tuning_values_from_json(j.at("chosen"), names));
        r.predicted_log_gflops = j.at("predicted_log_gflops").get<double>();
        r.measured_gflops = j.at("measured_gflops").get<double>();
        r.legal_space_size = j.at("legal_space_size").get<std::int64_t>();
        for (const auto& jc : j.at("top_k")) {
            ConvCandidate c;
            c.tuning = conv_tuning_from_values(
                tuning_values_from_json(jc.at("tuning"), names));
            c.predicted_log_gflops = jc.at("predicted_log_gflops").get<double>();
            c.measured_gflops = jc.at("measured_gflops").get<double>();
            r.top_k.push_back(std::move(c));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("bad result JSON: ") + e.what());
    }
}

namespace {

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return std::string(buf);
}

std::string canonical_descriptor(const GemmInput& in) {
    std::ostringstream s;
    s << "gemm|m=" << in.m << "|n=" << in.n << "|k=" << in.k
      << "|dtype=" << to_string(in.dtype) << "|ta=" << in.trans_a
      << "|tb=" << in.trans_b;
    return s.str();
}

std::string canonical_descriptor(const ConvInput& in) {
    std::ostringstream s;
    s << "conv|n=" << in.n_batch << "|p=" << in.p << "|q=" << in.q
      << "|k=" << in.k_filters << "|c=" << in.c << "|r=" << in.r
      << "|s=" << in.s << "|dtype=" << to_string(in.dtype);
    return s.str();
}

}  // namespace

std::string cache_key(const GemmInput& input) {
    return "gemm-" + fnv1a_hex(canonical_descriptor(input)) + ".json";
}

std::string cache_key(const ConvInput& input) {
    return "conv-" + fnv1a_hex(canonical_descriptor(input)) + ".json";
}

ResultCache::ResultCache(std::string dir) : dir_(std::move(dir)) {
    if (dir_.empty()) {
        throw std::invalid_argument("cache directory must not be empty");
    }
    std::filesystem::create_directories(dir_);
}

ResultCache ResultCache::from_env_or(const std::string& fallback_dir) {
    const char* env = std::getenv(kCacheDirEnvVar);
    if (env != nullptr && env[0] != '\0') {
        return ResultCache(env);
    }
    return ResultCache(fallback_dir);
}

namespace {

template <typename Result, typename Input, typename Parse>
std::optional<Result> cache_lookup(const std::string& dir, const Input& input,
                                   Parse parse) {
    const auto path = std::filesystem::path(dir) / cache_key(input);
    if (!std::filesystem::exists(path)) {
        return std::nullopt;
    }
    try {
        Result r = parse(read_text_file(path.string(), "cache entry"));
        if (!(r.input == input)) {
            throw std::runtime_error("entry stores a different input");
        }
        return r;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "warning: skipping corrupt cache entry %s: %s\n",
                     path.string().c_str(), e.what());
        return std::nullopt;
    }
}

}  // namespace

std::optional<GemmInferenceResult> ResultCache::lookup(
    const GemmInput& input) const {
    return cache_lookup<GemmInferenceResult>(dir_, input,
                                             gemm_result_from_json_text);
}

std::optional<ConvInferenceResult> ResultCache::lookup(
    const ConvInput& input) const {
    return cache_lookup<ConvInferenceResult>(dir_, input,
                                             conv_result_from_json_text);
}

void ResultCache::store(const GemmInferenceResult& result) const {
    std::filesystem::create_directories(dir_);
    const auto path = std::filesystem::path(dir_) / cache_key(result.input);
    write_text_file_atomic(path.string(), to_json_text(result));
}

void ResultCache::store(const ConvInferenceResult& result) const {
    std::filesystem::create_directories(dir_);
    const auto path = std::filesystem::path(dir_) / cache_key(result.input);
    write_text_file_atomic(path.string(), to_json_text(result));
}

}  // namespace ktune
