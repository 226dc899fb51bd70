#include "ktune/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ktune {

double unit_real(std::mt19937_64& rng) {
    // 53 random bits, uniform in [0, 1).
    return double(rng() >> 11) * 0x1.0p-53;
}

std::size_t index_below(std::mt19937_64& rng, std::size_t n) {
    std::size_t i = std::size_t(unit_real(rng) * double(n));
    return i < n ? i : n - 1;
}

std::vector<double> CategoricalModel::probabilities(std::size_t param_index) const {
    const auto& p = params.at(param_index);
    double total = std::accumulate(p.counts.begin(), p.counts.end(), 0.0);
    if (total <= 0.0) {
        throw std::runtime_error("categorical parameter has zero total count");
    }
    std::vector<double> probs(p.counts.size());
    for (std::size_t i = 0; i < p.counts.size(); ++i) probs[i] = p.counts[i] / total;
    return probs;
}

void CategoricalModel::validate() const {
    if (alpha < 0.0) {
        throw std::invalid_argument("alpha must be >= 0");
    }
    if (params.empty()) {
        throw std::invalid_argument("categorical model has no parameters");
    }
    for (const auto& p : params) {
        if (p.values.empty() || p.values.size() != p.counts.size()) {
            throw std::invalid_argument(
                "categorical parameter values/counts size mismatch");
        }
        double total = 0.0;
        for (double c : p.counts) {
            if (!(c >= alpha)) {
                throw std::invalid_argument("pseudo-count below the alpha prior");
            }
            total += c;
        }
        if (total <= 0.0) {
            throw std::invalid_argument("categorical parameter has zero mass");
        }
    }
}

namespace {

std::size_t draw_categorical(const std::vector<double>& counts, double total,
                             std::mt19937_64& rng) {
    double x = unit_real(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        acc += counts[i];
        if (x < acc) return i;
    }
    return counts.size() - 1;
}

std::vector<double> totals_of(const CategoricalModel& m) {
    std::vector<double> totals(m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        totals[i] = std::accumulate(m.params[i].counts.begin(),
                                    m.params[i].counts.end(), 0.0);
    }
    return totals;
}

void draw_vector(const CategoricalModel& m, const std::vector<double>& totals,
                 std::mt19937_64& rng, std::vector<int>& out) {
    out.resize(m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        std::size_t idx = draw_categorical(m.params[i].counts, totals[i], rng);
        out[i] = m.params[i].values[idx];
    }
}

void draw_uniform_vector(const std::vector<std::vector<int>>& bounds,
                         std::mt19937_64& rng, std::vector<int>& out) {
    out.resize(bounds.size());
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        out[i] = bounds[i][index_below(rng, bounds[i].size())];
    }
}

}  // namespace

CategoricalModel calibrate(const LegalityFn& legal,
                           const std::vector<std::vector<int>>& bounds,
                           std::int64_t n_uniform, std::uint64_t seed,
                           double alpha) {
    if (bounds.empty()) {
        throw std::invalid_argument("calibrate: empty bounds");
    }
    if (n_uniform < 0) {
        throw std::invalid_argument("calibrate: n_uniform must be >= 0");
    }
    CategoricalModel m;
    m.alpha = alpha;
    m.params.resize(bounds.size());
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        if (bounds[i].empty()) {
            throw std::invalid_argument("calibrate: empty candidate list");
        }
        m.params[i].values = bounds[i];
        m.params[i].counts.assign(bounds[i].size(), alpha);
    }

    std::mt19937_64 rng(seed);
    std::vector<int> v;
    for (std::int64_t trial = 0; trial < n_uniform; ++trial) {
        draw_uniform_vector(bounds, rng, v);
        if (!legal(v)) continue;
        for (std::size_t i = 0; i < bounds.size(); ++i) {
            // values are sorted and unique; find the drawn index
            const auto& vals = m.params[i].values;
            std::size_t idx =
                std::size_t(std::lower_bound(vals.begin(), vals.end(), v[i]) -
                            vals.begin());
            m.params[i].counts[idx] += 1.0;
        }
    }
    m.validate();
    return m;
}

std::vector<int> sample(const CategoricalModel& model, const LegalityFn& legal,
                        std::mt19937_64& rng) {
    model.validate();
    auto totals = totals_of(model);
    std::vector<int> v;
    for (std::int64_t attempt = 0; attempt < kSampleRetryLimit; ++attempt) {
        draw_vector(model, totals, rng, v);
        if (legal(v)) return v;
    }
    throw std::runtime_error("sample: no legal vector after " +
                             std::to_string(kSampleRetryLimit) + " draws");
}

double acceptance_rate(const CategoricalModel& model, const LegalityFn& legal,
                       std::int64_t n_trials, std::uint64_t seed) {
    if (n_trials <= 0) {
        throw std::invalid_argument("acceptance_rate: n_trials must be > 0");
    }
    model.validate();
    auto totals = totals_of(model);
    std::mt19937_64 rng(seed);
    std::vector<int> v;
    std::int64_t accepted = 0;
    for (std::int64_t i = 0; i < n_trials; ++i) {
        draw_vector(model, totals, rng, v);
        if (legal(v)) ++accepted;
    }
    return double(accepted) / double(n_trials);
}

double uniform_acceptance_rate(const std::vector<std::vector<int>>& bounds,
                               const LegalityFn& legal, std::int64_t n_trials,
                               std::uint64_t seed) {
    if (n_trials <= 0) {
        throw std::invalid_argument("acceptance_rate: n_trials must be > 0");
    }
    std::mt19937_64 rng(seed);
    std::vector<int> v;
    std::int64_t accepted = 0;
    for (std::int64_t i = 0; i < n_trials; ++i) {
        draw_uniform_vector(bounds, rng, v);
        if (legal(v)) ++accepted;
    }
    return double(accepted) / double(n_trials);
}

CategoricalModel CategoricalModel::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw std::runtime_error("malformed JSON in sampler model");
    }
    CategoricalModel m;
    try {
        m.alpha = j.at("alpha").get<double>();
        for (const auto& jp : j.at("params")) {
            CategoricalParam p;
            p.values = jp.at("values").get<std::vector<int>>();
            p.counts = jp.at("counts").get<std::vector<double>>();
            m.params.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("bad sampler model: ") + e.what());
    }
    m.validate();
    return m;
}

CategoricalModel CategoricalModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open sampler model: " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return from_json_text(text.str());
    } catch (const std::exception& e) {
        throw std::runtime_error("sampler model " + path + ": " + e.what());
    }
}

std::string CategoricalModel::to_json_text() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["params"] = nlohmann::json::array();
    for (const auto& p : params) {
        j["params"].push_back({{"values", p.values}, {"counts", p.counts}});
    }
    return j.dump(2) + "\n";
}

void CategoricalModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write sampler model: " + path);
    }
    out << to_json_text();
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

}  // namespace ktune
