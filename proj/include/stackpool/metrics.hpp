#pragma once

// Counting metrics, density-group breakdowns and the variation ratio of
// post-pooling feature maps under input rescaling.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "network.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace stackpool {

struct CountPair {
    double count = 0;  // predicted
    double gt = 0;     // ground truth
};

struct CountErrors {
    double mae = 0;
    double mse = 0;  // root of the mean squared error
};

inline CountErrors mae_mse(const std::vector<CountPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("mae_mse: no count pairs");
    double abs_sum = 0, sq_sum = 0;
    for (auto& p : pairs) {
        const double r = p.count - p.gt;
        abs_sum += std::abs(r);
        sq_sum += r * r;
    }
    const double n = static_cast<double>(pairs.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

struct DensityGroup {
    std::size_t size = 0;
    double min_gt = 0;
    double max_gt = 0;
    std::optional<double> mae;  // empty bucket has none
};

/// Sorts by ground-truth count (stable) and cuts into `buckets` groups of
/// near-equal size: bucket b holds ranks [floor(bN/B), floor((b+1)N/B)).
inline std::vector<DensityGroup> group_by_density(std::vector<CountPair> pairs, std::size_t buckets) {
    if (buckets < 1) throw std::invalid_argument("group_by_density: buckets must be >= 1");
    std::stable_sort(pairs.begin(), pairs.end(), [](const CountPair& a, const CountPair& b) { return a.gt < b.gt; });
    const std::size_t n = pairs.size();
    std::vector<DensityGroup> groups(buckets);
    for (std::size_t b = 0; b < buckets; ++b) {
        const std::size_t lo = b * n / buckets, hi = (b + 1) * n / buckets;
        auto& g = groups[b];
        g.size = hi - lo;
        if (g.size == 0) continue;
        g.min_gt = pairs[lo].gt;
        g.max_gt = pairs[hi - 1].gt;
        g.mae = mae_mse({pairs.begin() + static_cast<std::ptrdiff_t>(lo), pairs.begin() + static_cast<std::ptrdiff_t>(hi)}).mae;
    }
    return groups;
}

/// Channel-averaged L1 change sum|Xhat - X| / sum|X| of two same-shape
/// (batch, channels, h, w) maps.  Channels with zero mass in X are skipped;
/// if every channel is skipped the ratio is undefined (nullopt).
template <typename T>
std::optional<double> variation_ratio_maps(const Tensor<T>& x, const Tensor<T>& xhat) {
    if (x.shape() != xhat.shape())
        throw ShapeError("variation ratio: map shapes differ, " + to_string(x.shape()) + " vs " + to_string(xhat.shape()));
    if (x.rank() != 4) throw ShapeError("variation ratio: expected (batch, channels, h, w), got " + to_string(x.shape()));
    const std::size_t channels = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    double total = 0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        double num = 0, den = 0;
        for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            num += std::abs(static_cast<double>(xhat[i]) - static_cast<double>(x[i]));
            den += std::abs(static_cast<double>(x[i]));
        }
        if (den == 0) continue;
        total += num / den;
        ++used;
    }
    if (used == 0) return std::nullopt;
    return total / static_cast<double>(used);
}

/// Extent nearest to beta * extent that is a positive multiple of `multiple`.
inline std::size_t scaled_extent(std::size_t extent, double beta, std::size_t multiple) {
    const double target = beta * static_cast<double>(extent) / static_cast<double>(multiple);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(target))) * multiple;
}

/// Variation ratio at each probed pooling site (0-based).  The image is
/// bilinearly rescaled by beta straight to the nearest extents the network
/// accepts; each rescaled feature map is resized back to the original map's
/// extents before comparison.
template <typename T>
std::vector<std::optional<double>> variation_ratio(const Network<T>& net, const Tensor<T>& image, double beta,
                                                   std::vector<std::size_t> probe_layers = {}) {
    if (!(beta > 0)) throw std::invalid_argument("variation_ratio: beta must be positive");
    const std::size_t sites = net.config().pool_sites();
    if (probe_layers.empty())
        for (std::size_t i = 0; i < sites; ++i) probe_layers.push_back(i);
    for (auto l : probe_layers)
        if (l >= sites) throw std::out_of_range("variation_ratio: probe layer " + std::to_string(l) + " but the network has " +
                                                std::to_string(sites) + " pooling site(s)");
    NoGradGuard guard;
    net.check_input(image);
    const std::size_t f = net.config().downsample();
    const std::size_t h2 = scaled_extent(image.dim(2), beta, f), w2 = scaled_extent(image.dim(3), beta, f);
    const auto feats = net.pooled_features(image);
    const auto scaled = (h2 == image.dim(2) && w2 == image.dim(3)) ? image : bilinear_resize(image, h2, w2);
    const auto feats_hat = net.pooled_features(scaled);

    std::vector<std::optional<double>> out;
    for (auto l : probe_layers) {
        const auto& x = feats[l];
        auto xhat = feats_hat[l];
        if (xhat.shape() != x.shape()) xhat = bilinear_resize(xhat, x.dim(2), x.dim(3));
        out.push_back(variation_ratio_maps(x, xhat));
    }
    return out;
}

struct GammaPoint {
    std::size_t image = 0;
    double head_count = 0;
    std::string variant;  // which network produced it
    std::size_t layer = 0;
    std::optional<double> gamma;
};

struct GammaAggregate {
    std::string variant;
    std::size_t layer = 0;
    std::size_t retained = 0;
    std::size_t outliers = 0;
    std::size_t missing = 0;
    std::optional<double> mean;
};

struct InvarianceReport {
    double beta = 2;
    double threshold = 2;
    std::vector<std::size_t> layers;
    std::vector<GammaPoint> points;  // every raw value, outliers included
    std::vector<GammaAggregate> aggregates;

    const GammaAggregate& aggregate(const std::string& variant, std::size_t layer) const {
        for (auto& a : aggregates)
            if (a.variant == variant && a.layer == layer) return a;
        throw std::out_of_range("no aggregate for " + variant + " layer " + std::to_string(layer));
    }
};

template <typename T>
struct LabelledImage {
    Tensor<T> image;  // (1, 1, H, W)
    double head_count = 0;
};

/// Variation ratios of two networks (same architecture, different pooling)
/// over a test set.  Values above `threshold` are left out of the means only.
template <typename T>
InvarianceReport invariance_study(const Network<T>& net_a, const std::string& label_a, const Network<T>& net_b,
                                  const std::string& label_b, const std::vector<LabelledImage<T>>& images, double beta,
                                  double threshold = 2.0, std::vector<std::size_t> probe_layers = {}) {
    const auto& ca = net_a.config();
    const auto& cb = net_b.config();
    if (ca.arch != cb.arch || ca.layers != cb.layers || ca.in_channels != cb.in_channels)
        throw std::invalid_argument("invariance_study: networks differ in more than the pooling spec");
    if (probe_layers.empty())
        for (std::size_t i = 0; i < ca.pool_sites(); ++i) probe_layers.push_back(i);

    InvarianceReport rep;
    rep.beta = beta;
    rep.threshold = threshold;
    rep.layers = probe_layers;
    const std::pair<const Network<T>*, std::string> nets[] = {{&net_a, label_a}, {&net_b, label_b}};
    for (std::size_t i = 0; i < images.size(); ++i)
        for (auto& [net, label] : nets) {
            auto g = variation_ratio(*net, images[i].image, beta, probe_layers);
            for (std::size_t l = 0; l < probe_layers.size(); ++l)
                rep.points.push_back({i, images[i].head_count, label, probe_layers[l], g[l]});
        }
    for (auto& [net, label] : nets)
        for (auto layer : probe_layers) {
            GammaAggregate a;
            a.variant = label;
            a.layer = layer;
            double sum = 0;
            for (auto& p : rep.points) {
                if (p.variant != label || p.layer != layer) continue;
                if (!p.gamma) ++a.missing;
                else if (*p.gamma > threshold) ++a.outliers;
                else {
                    sum += *p.gamma;
                    ++a.retained;
                }
            }
            if (a.retained) a.mean = sum / static_cast<double>(a.retained);
            rep.aggregates.push_back(a);
        }
    return rep;
}

inline std::string invariance_csv(const InvarianceReport& rep) {
    std::string out = "image,head_count,variant,layer,gamma,outlier\n";
    char buf[64];
    for (auto& p : rep.points) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,", p.image, p.head_count);
        out += buf + p.variant + "," + std::to_string(p.layer) + ",";
        if (p.gamma) {
            std::snprintf(buf, sizeof buf, "%.17g,%d", *p.gamma, *p.gamma > rep.threshold ? 1 : 0);
            out += buf;
        } else {
            out += ",0";
        }
        out += "\n";
    }
    return out;
}

inline nlohmann::json to_json(const InvarianceReport& rep) {
    nlohmann::json aggs = nlohmann::json::array();
    for (auto& a : rep.aggregates)
        aggs.push_back({{"variant", a.variant},
                        {"layer", a.layer},
                        {"retained", a.retained},
                        {"outliers", a.outliers},
                        {"missing", a.missing},
                        {"mean_gamma", a.mean ? nlohmann::json(*a.mean) : nlohmann::json(nullptr)}});
    return {{"beta", rep.beta}, {"threshold", rep.threshold}, {"layers", rep.layers}, {"aggregates", aggs}};
}

inline std::string count_results_csv(const std::vector<CountPair>& pairs, const std::vector<std::string>& ids) {
    std::string out = "id,count,gt\n";
    char buf[80];
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", pairs[i].count, pairs[i].gt);
        out += (i < ids.size() ? ids[i] : std::to_string(i)) + buf;
    }
    return out;
}

}  // namespace stackpool
