#pragma once

// Timing harness for pooling layers and whole networks.
//
// Protocol: every case is calibrated to an inner loop of at least
// min_sample_ms, then `warmups` untimed rounds run, then `reps` timed rounds.
// Variants are interleaved within each round (with a rotating start) so slow
// drift of the machine affects them alike.  One sample is the mean time of
// one inner-loop call; the report keeps median and interquartile range.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "network.hpp"
#include "ops.hpp"
#include "pooling.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace stackpool {

struct BenchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Scenario { layer_forward, net_forward, net_backward };

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::layer_forward: return "layer-forward";
        case Scenario::net_forward: return "net-forward";
        case Scenario::net_backward: return "net-backward";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& s) {
    for (auto v : {Scenario::layer_forward, Scenario::net_forward, Scenario::net_backward})
        if (s == scenario_name(v)) return v;
    throw BenchError("unknown scenario '" + s + "'");
}

struct BenchOptions {
    std::size_t reps = 30;
    std::size_t warmups = 5;
    double min_sample_ms = 2.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (reps == 0) throw BenchError("benchmark needs at least one repetition (got 0)");
        if (reps < 30) throw BenchError("benchmark needs >= 30 repetitions, got " + std::to_string(reps));
        if (warmups < 5) throw BenchError("benchmark needs >= 5 warmup rounds, got " + std::to_string(warmups));
        if (!(min_sample_ms >= 0)) throw BenchError("min_sample_ms must be >= 0");
    }
};

struct BenchCase {
    std::string spec;     // pool spec string
    std::string variant;  // vanilla / multi / stacked
    Scenario scenario = Scenario::layer_forward;
    std::string network;  // empty for single layers
    std::vector<std::size_t> extents;
    std::size_t reps = 0;
    std::size_t warmups = 0;
    std::size_t inner = 0;
    double median_ms = 0;
    double iqr_ms = 0;
    std::vector<double> samples_ms;
};

struct BenchReport {
    BenchOptions options;
    std::vector<BenchCase> cases;

    const BenchCase* find(const std::string& variant, Scenario s) const {
        for (auto& c : cases)
            if (c.variant == variant && c.scenario == s) return &c;
        return nullptr;
    }
};

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

using BenchClock = std::chrono::steady_clock;

inline double time_calls(const std::function<void()>& fn, std::size_t inner) {
    const auto t0 = BenchClock::now();
    for (std::size_t i = 0; i < inner; ++i) fn();
    const auto t1 = BenchClock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(inner);
}

}  // namespace detail

/// Per-call milliseconds of each function, `reps` samples each.  `inner`
/// receives the calibrated inner-loop length of every function.
inline std::vector<std::vector<double>> measure_interleaved(const std::vector<std::function<void()>>& fns,
                                                            const BenchOptions& opt, std::vector<std::size_t>* inner_out = nullptr) {
    opt.validate();
    const std::size_t n = fns.size();
    std::vector<std::size_t> inner(n, 1);
    for (std::size_t f = 0; f < n; ++f) {
        fns[f]();
        double t = detail::time_calls(fns[f], 1);
        while (t * static_cast<double>(inner[f]) < opt.min_sample_ms && inner[f] < (std::size_t{1} << 24)) {
            inner[f] *= 2;
            t = detail::time_calls(fns[f], inner[f]);
        }
    }
    for (std::size_t w = 0; w < opt.warmups; ++w)
        for (std::size_t f = 0; f < n; ++f) detail::time_calls(fns[f], inner[f]);
    std::vector<std::vector<double>> samples(n);
    for (std::size_t r = 0; r < opt.reps; ++r)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t f = (r + j) % n;
            samples[f].push_back(detail::time_calls(fns[f], inner[f]));
        }
    if (inner_out) *inner_out = inner;
    return samples;
}

namespace detail {

template <typename T>
Tensor<T> random_input(const Shape& shape, std::uint64_t seed) {
    auto rng = make_rng(seed, "bench-input");
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(uniform01(rng));
    return Tensor<T>::from(shape, std::move(v));
}

template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

// Throws unless every pair of mutually equivalent multi/stacked specs gives
// bit-identical outputs.
template <typename T>
void require_equivalent_outputs(const std::vector<PoolSpec>& specs, const std::vector<Tensor<T>>& outputs) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].variant != PoolVariant::multi_kernel) continue;
        const auto stacked = stacked_equivalent(specs[i]);
        for (std::size_t j = 0; j < specs.size(); ++j)
            if (specs[j] == stacked && !bitwise_equal(outputs[i].data(), outputs[j].data()))
                throw BenchError("outputs of " + format_pool_spec(specs[i]) + " and " + format_pool_spec(specs[j]) +
                                 " differ on the benchmark input; refusing to time non-equivalent computations");
    }
}

inline BenchCase make_case(const PoolSpec& spec, Scenario s, std::string network, std::vector<std::size_t> extents,
                           const BenchOptions& opt, std::size_t inner, std::vector<double> samples) {
    BenchCase c;
    c.spec = format_pool_spec(spec);
    c.variant = variant_name(spec.variant);
    c.scenario = s;
    c.network = std::move(network);
    c.extents = std::move(extents);
    c.reps = opt.reps;
    c.warmups = opt.warmups;
    c.inner = inner;
    c.median_ms = quantile(samples, 0.5);
    c.iqr_ms = quantile(samples, 0.75) - quantile(samples, 0.25);
    c.samples_ms = std::move(samples);
    return c;
}

}  // namespace detail

/// Forward time of one pooling layer per spec on a (1, 1, h, w) map.
template <typename T = double>
BenchReport bench_pool_layer(const std::vector<PoolSpec>& specs, std::size_t h, std::size_t w, const BenchOptions& opt) {
    opt.validate();
    const auto x = detail::random_input<T>({1, 1, h, w}, opt.seed);
    NoGradGuard guard;
    std::vector<Tensor<T>> outs;
    for (auto& s : specs) outs.push_back(pool(x, s));
    detail::require_equivalent_outputs(specs, outs);

    volatile T sink{};
    std::vector<std::function<void()>> fns;
    for (auto& s : specs)
        fns.push_back([&x, s, &sink] { sink = pool(x, s)[0]; });
    std::vector<std::size_t> inner;
    auto samples = measure_interleaved(fns, opt, &inner);

    BenchReport rep;
    rep.options = opt;
    for (std::size_t i = 0; i < specs.size(); ++i)
        rep.cases.push_back(detail::make_case(specs[i], Scenario::layer_forward, "", {1, 1, h, w}, opt, inner[i], std::move(samples[i])));
    return rep;
}

/// Forward and forward+backward time of a whole network per pooling spec.
/// All networks share the same seed, hence the same parameters.
template <typename T = double>
BenchReport bench_network(Architecture arch, const std::vector<PoolSpec>& specs, std::size_t h, std::size_t w,
                          const BenchOptions& opt) {
    opt.validate();
    std::vector<Network<T>> nets;
    for (auto& s : specs) nets.push_back(Network<T>::build(NetworkConfig::preset(arch, s), opt.seed));
    const auto x = detail::random_input<T>({1, 1, h, w}, opt.seed);
    {
        NoGradGuard guard;
        std::vector<Tensor<T>> outs;
        for (auto& n : nets) outs.push_back(n.forward(x));
        detail::require_equivalent_outputs(specs, outs);
    }

    volatile T sink{};
    std::vector<std::function<void()>> fns;
    for (auto& n : nets)
        fns.push_back([&n, &x, &sink] {
            NoGradGuard guard;
            sink = n.forward(x)[0];
        });
    for (auto& n : nets)
        fns.push_back([&n, &x, &sink] {
            auto y = n.forward(x);
            backward(sum(y));
            sink = n.parameters()[0].value.grad()[0];
            n.zero_grad();
        });
    std::vector<std::size_t> inner;
    auto samples = measure_interleaved(fns, opt, &inner);

    BenchReport rep;
    rep.options = opt;
    const std::string name = architecture_name(arch);
    for (std::size_t i = 0; i < specs.size(); ++i)
        rep.cases.push_back(detail::make_case(specs[i], Scenario::net_forward, name, {1, 1, h, w}, opt, inner[i], std::move(samples[i])));
    for (std::size_t i = 0; i < specs.size(); ++i)
        rep.cases.push_back(detail::make_case(specs[i], Scenario::net_backward, name, {1, 1, h, w}, opt,
                                              inner[specs.size() + i], std::move(samples[specs.size() + i])));
    return rep;
}

inline BenchReport merge(BenchReport a, const BenchReport& b) {
    a.cases.insert(a.cases.end(), b.cases.begin(), b.cases.end());
    return a;
}

struct OrderingCheck {
    std::string name;
    bool evaluated = false;  // false when the report lacks the cases
    bool passed = false;
    std::string detail;
};

/// The three orderings: layer vanilla < stacked < multi; network forward
/// overhead of stacked below that of multi; backward above forward.
inline std::vector<OrderingCheck> ordering_checks(const BenchReport& rep) {
    std::vector<OrderingCheck> out;
    char buf[256];
    {
        OrderingCheck c{"layer-forward: vanilla < stacked < multi", false, false, {}};
        auto v = rep.find("vanilla", Scenario::layer_forward), s = rep.find("stacked", Scenario::layer_forward),
             m = rep.find("multi", Scenario::layer_forward);
        if (v && s && m) {
            c.evaluated = true;
            c.passed = v->median_ms < s->median_ms && s->median_ms < m->median_ms;
            std::snprintf(buf, sizeof buf, "%.6g < %.6g < %.6g ms", v->median_ms, s->median_ms, m->median_ms);
            c.detail = buf;
        }
        out.push_back(c);
    }
    {
        OrderingCheck c{"net-forward: stacked overhead < multi overhead", false, false, {}};
        auto v = rep.find("vanilla", Scenario::net_forward), s = rep.find("stacked", Scenario::net_forward),
             m = rep.find("multi", Scenario::net_forward);
        if (v && s && m) {
            c.evaluated = true;
            const double ds = s->median_ms - v->median_ms, dm = m->median_ms - v->median_ms;
            c.passed = ds < dm;
            std::snprintf(buf, sizeof buf, "%.6g < %.6g ms", ds, dm);
            c.detail = buf;
        }
        out.push_back(c);
    }
    for (const char* variant : {"vanilla", "stacked", "multi"}) {
        OrderingCheck c{std::string("net: backward > forward (") + variant + ")", false, false, {}};
        auto f = rep.find(variant, Scenario::net_forward), b = rep.find(variant, Scenario::net_backward);
        if (f && b) {
            c.evaluated = true;
            c.passed = b->median_ms > f->median_ms;
            std::snprintf(buf, sizeof buf, "%.6g > %.6g ms", b->median_ms, f->median_ms);
            c.detail = buf;
        }
        out.push_back(c);
    }
    return out;
}

inline nlohmann::json to_json(const BenchReport& rep) {
    nlohmann::json cases = nlohmann::json::array();
    for (auto& c : rep.cases)
        cases.push_back({{"spec", c.spec},
                         {"variant", c.variant},
                         {"scenario", scenario_name(c.scenario)},
                         {"network", c.network},
                         {"extents", c.extents},
                         {"repetitions", c.reps},
                         {"warmups", c.warmups},
                         {"inner_iterations", c.inner},
                         {"median_ms", c.median_ms},
                         {"iqr_ms", c.iqr_ms},
                         {"samples_ms", c.samples_ms}});
    nlohmann::json checks = nlohmann::json::array();
    for (auto& c : ordering_checks(rep))
        if (c.evaluated) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return {{"protocol",
             {{"clock", "steady_clock"},
              {"threads", 1},
              {"repetitions", rep.options.reps},
              {"warmups", rep.options.warmups},
              {"min_sample_ms", rep.options.min_sample_ms},
              {"interleaved", true},
              {"statistic", "median and interquartile range of per-call time over post-warmup rounds"}}},
            {"cases", cases},
            {"orderings", checks}};
}

inline BenchReport bench_report_from_json(const nlohmann::json& j) {
    BenchReport rep;
    if (j.contains("protocol")) {
        rep.options.reps = j["protocol"].value("repetitions", rep.options.reps);
        rep.options.warmups = j["protocol"].value("warmups", rep.options.warmups);
    }
    for (auto& c : j.at("cases")) {
        BenchCase b;
        b.spec = c.at("spec").get<std::string>();
        b.variant = c.at("variant").get<std::string>();
        b.scenario = parse_scenario(c.at("scenario").get<std::string>());
        b.network = c.value("network", "");
        b.extents = c.value("extents", std::vector<std::size_t>{});
        b.reps = c.value("repetitions", std::size_t{0});
        b.warmups = c.value("warmups", std::size_t{0});
        b.inner = c.value("inner_iterations", std::size_t{0});
        b.median_ms = c.at("median_ms").get<double>();
        b.iqr_ms = c.value("iqr_ms", 0.0);
        rep.cases.push_back(std::move(b));
    }
    return rep;
}

inline std::string bench_csv(const BenchReport& rep) {
    std::string out = "spec,variant,scenario,network,extents,repetitions,warmups,inner_iterations,median_ms,iqr_ms\n";
    char buf[96];
    for (auto& c : rep.cases) {
        std::string ext;
        for (std::size_t i = 0; i < c.extents.size(); ++i) ext += (i ? "x" : "") + std::to_string(c.extents[i]);
        out += "\"" + c.spec + "\"," + c.variant + "," + scenario_name(c.scenario) + "," + c.network + "," + ext + "," +
               std::to_string(c.reps) + "," + std::to_string(c.warmups) + "," + std::to_string(c.inner) + ",";
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", c.median_ms, c.iqr_ms);
        out += buf;
    }
    return out;
}

/// Names of orderings that held in the baseline but fail now.
inline std::vector<std::string> ordering_regressions(const BenchReport& current, const BenchReport& baseline) {
    std::vector<std::string> out;
    const auto now = ordering_checks(current), before = ordering_checks(baseline);
    for (std::size_t i = 0; i < now.size(); ++i)
        if (now[i].evaluated && before[i].evaluated && before[i].passed && !now[i].passed)
            out.push_back(now[i].name + " (now " + now[i].detail + ", baseline " + before[i].detail + ")");
    return out;
}

}  // namespace stackpool
