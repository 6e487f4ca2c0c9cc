#pragma once

// Central finite-difference check of a network's analytic gradients.
// Coordinates whose perturbation changes a ReLU sign or a max-pool routing
// decision sit on a kink of the loss and are reported as ties, not checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "network.hpp"
#include "ops.hpp"
#include "pooling.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace stackpool {

struct GradcheckConfig {
    double step = 1e-5;
    double tolerance = 1e-4;
    double denominator_floor = 1e-8;
    std::size_t weight_samples = 200;  // per weight tensor; biases are checked in full
    std::size_t input_samples = 100;
    std::uint64_t seed = 0;
};

struct GradcheckResult {
    std::size_t checked = 0;
    std::size_t ties = 0;
    double max_rel_error = 0;
    std::string worst;  // "conv1.weight[17]" or "input[5]"

    bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

namespace detail {

// ReLU signs of every activated conv plus argmax routing of every pool site.
template <typename T>
std::vector<std::uint32_t> activation_pattern(const Network<T>& net, const ForwardTrace<T>& trace) {
    std::vector<std::uint32_t> pat;
    for (std::size_t i = 0; i < trace.conv_outputs.size(); ++i) {
        if (!trace.conv_has_relu[i]) continue;
        for (T v : trace.conv_outputs[i].data()) pat.push_back(v > T{0});
    }
    for (auto& x : trace.pool_inputs)
        for (auto& r : pool_routing(x, net.config().pool)) pat.insert(pat.end(), r.begin(), r.end());
    return pat;
}

template <typename T>
std::pair<double, std::vector<std::uint32_t>> probe_loss(const Network<T>& net, const Tensor<T>& image,
                                                         const Tensor<T>& target) {
    NoGradGuard guard;
    ForwardTrace<T> trace;
    auto y = net.forward(image, &trace);
    return {static_cast<double>(mse_loss(y, target).item()), activation_pattern(net, trace)};
}

}  // namespace detail

/// Checks d mse(net(image), target) against central differences at sampled
/// parameter and input coordinates.  The network's parameters are restored.
template <typename T>
GradcheckResult gradcheck(Network<T>& net, const Tensor<T>& image, const Tensor<T>& target, const GradcheckConfig& cfg = {}) {
    Tensor<T> input = image.clone();
    input.set_requires_grad(true);
    net.zero_grad();
    net.set_requires_grad(true);
    backward(mse_loss(net.forward(input), target));

    struct Coord {
        Tensor<T> tensor;
        std::string name;
        std::size_t index;
        double analytic;
    };
    std::vector<Coord> coords;
    auto rng = make_rng(cfg.seed, "gradcheck");
    auto pick = [&](Tensor<T> t, const std::string& name, std::size_t limit) {
        const auto g = t.grad();
        std::vector<std::size_t> idx(t.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (limit < idx.size()) {
            for (std::size_t i = 0; i < limit; ++i) {
                const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(idx.size() - 1)));
                std::swap(idx[i], idx[j]);
            }
            idx.resize(limit);
        }
        for (auto i : idx) coords.push_back({t, name, i, g.empty() ? 0.0 : static_cast<double>(g[i])});
    };
    for (auto& p : net.parameters()) {
        const bool is_bias = p.value.rank() == 1;
        pick(p.value, p.name, is_bias ? p.value.size() : cfg.weight_samples);
    }
    pick(input, "input", cfg.input_samples);
    net.zero_grad();

    const auto base_pattern = detail::probe_loss(net, input, target).second;
    GradcheckResult res;
    for (auto& c : coords) {
        auto data = c.tensor.mutable_data();
        const T original = data[c.index];
        data[c.index] = static_cast<T>(static_cast<double>(original) + cfg.step);
        auto [lp, pp] = detail::probe_loss(net, input, target);
        data = c.tensor.mutable_data();
        data[c.index] = static_cast<T>(static_cast<double>(original) - cfg.step);
        auto [lm, pm] = detail::probe_loss(net, input, target);
        data = c.tensor.mutable_data();
        data[c.index] = original;
        if (pp != base_pattern || pm != base_pattern) {
            ++res.ties;
            continue;
        }
        const double numeric = (lp - lm) / (2 * cfg.step);
        const double denom = std::max({std::abs(c.analytic), std::abs(numeric), cfg.denominator_floor});
        const double rel = std::abs(c.analytic - numeric) / denom;
        ++res.checked;
        if (rel >= res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst = c.name + "[" + std::to_string(c.index) + "]";
        }
    }
    return res;
}

}  // namespace stackpool
