#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <stackpool/network.hpp>
#include <stackpool/random.hpp>
#include <stackpool/tensor.hpp>

#include "oracles.hpp"

namespace testutil {

using stackpool::Shape;
using stackpool::Tensor;

inline Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    auto rng = stackpool::make_rng(seed, "test");
    std::vector<double> v(stackpool::numel(shape));
    for (auto& x : v) x = stackpool::uniform(rng, lo, hi);
    return Tensor<double>::from(shape, std::move(v));
}

// Batch item 0 of a (batch, c, h, w) tensor.
inline oracle::Map to_map(const Tensor<double>& t) {
    oracle::Map m(t.dim(1), t.dim(2), t.dim(3));
    for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = t[i];
    return m;
}

inline std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("stackpool_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// Feature maps after each pooling site, computed with the oracle kernels and
// the network's parameter values only.
inline std::vector<oracle::Map> oracle_pooled_features(const stackpool::Network<double>& net, oracle::Map x) {
    using namespace stackpool;
    const auto& cfg = net.config();
    const auto& params = net.parameters();
    std::vector<oracle::Map> out;
    std::size_t conv = 0;
    const std::size_t n_conv = cfg.conv_layers();
    for (auto& layer : cfg.layers) {
        if (std::holds_alternative<PoolLayer>(layer)) {
            const auto& ks = cfg.pool.kernels;
            const auto s = cfg.pool.stride;
            switch (cfg.pool.variant) {
                case PoolVariant::vanilla: x = oracle::pool_strided(x, ks[0], s); break;
                case PoolVariant::multi_kernel: x = oracle::multi_pool(x, ks, s); break;
                case PoolVariant::stacked: x = oracle::stacked_pool(x, ks, s); break;
            }
            out.push_back(x);
            continue;
        }
        const auto& c = std::get<ConvLayer>(layer);
        x = oracle::conv(x, values(params[2 * conv].value), values(params[2 * conv + 1].value), c.channels, c.kernel);
        if (conv + 1 < n_conv || cfg.output_relu) x = oracle::relu(x);
        ++conv;
    }
    return out;
}

// Variation ratio at every pooling site, step by step: rescale the image,
// run both images, resize the rescaled maps back, compare.
inline std::vector<std::optional<double>> scripted_variation_ratio(const stackpool::Network<double>& net,
                                                                   const Tensor<double>& image, double beta) {
    const double f = static_cast<double>(net.config().downsample());
    const oracle::Map x = to_map(image);
    auto extent = [&](std::size_t n) {
        return static_cast<std::size_t>(std::max(1.0, std::round(beta * static_cast<double>(n) / f)) * f);
    };
    const std::size_t h2 = extent(x.h), w2 = extent(x.w);
    const oracle::Map scaled = (h2 == x.h && w2 == x.w) ? x : oracle::bilinear(x, h2, w2);
    auto feats = oracle_pooled_features(net, x);
    auto feats_hat = oracle_pooled_features(net, scaled);
    std::vector<std::optional<double>> out;
    for (std::size_t l = 0; l < feats.size(); ++l) {
        oracle::Map back = feats_hat[l];
        if (back.h != feats[l].h || back.w != feats[l].w) back = oracle::bilinear(back, feats[l].h, feats[l].w);
        out.push_back(oracle::variation_ratio(feats[l], back));
    }
    return out;
}

}  // namespace testutil
