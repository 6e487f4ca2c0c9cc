#pragma once

// Vanilla, multi-kernel and stacked max pooling.
//
// Window convention: the kernel-k window for output cell z covers input
// cells [s*z, s*z + k - 1] along each axis.  Cells past the end of the input
// read as -inf, and an input of extent W yields ceil(W / s) outputs.  Under
// this left-anchored rule a chain of stride-1 poolings on top of a stride-s
// pooling covers exactly the window of a single larger kernel, which is what
// makes the stacked form equal the multi-kernel form bit for bit.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace stackpool {

struct PoolSpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class PoolVariant { vanilla, multi_kernel, stacked };

enum class PoolPadding {
    left_anchored_neg_inf,  // only policy for now
};

inline const char* variant_name(PoolVariant v) {
    switch (v) {
        case PoolVariant::vanilla: return "vanilla";
        case PoolVariant::multi_kernel: return "multi";
        case PoolVariant::stacked: return "stacked";
    }
    return "?";
}

struct PoolSpec {
    PoolVariant variant = PoolVariant::vanilla;
    std::vector<std::size_t> kernels{2};
    std::size_t stride = 2;
    PoolPadding padding = PoolPadding::left_anchored_neg_inf;

    static PoolSpec vanilla(std::size_t k, std::size_t s) { return make(PoolVariant::vanilla, {k}, s); }
    static PoolSpec multi_kernel(std::vector<std::size_t> ks, std::size_t s) {
        return make(PoolVariant::multi_kernel, std::move(ks), s);
    }
    static PoolSpec stacked(std::vector<std::size_t> ks, std::size_t s) {
        return make(PoolVariant::stacked, std::move(ks), s);
    }

    void validate() const {
        if (stride < 1) throw PoolSpecError("pool stride must be >= 1");
        if (kernels.empty()) throw PoolSpecError("pool kernel list is empty");
        for (auto k : kernels)
            if (k < 1) throw PoolSpecError("pool kernels must be >= 1");
        switch (variant) {
            case PoolVariant::vanilla:
                if (kernels.size() != 1) throw PoolSpecError("vanilla pooling takes exactly one kernel");
                break;
            case PoolVariant::multi_kernel:
                for (std::size_t i = 1; i < kernels.size(); ++i)
                    if (kernels[i] <= kernels[i - 1])
                        throw PoolSpecError("multi-kernel sizes must be strictly increasing");
                for (auto k : kernels)
                    if (k < stride)
                        throw PoolSpecError("multi-kernel size " + std::to_string(k) + " is smaller than stride " +
                                            std::to_string(stride));
                break;
            case PoolVariant::stacked:
                break;
        }
    }

    bool operator==(const PoolSpec&) const = default;

private:
    static PoolSpec make(PoolVariant v, std::vector<std::size_t> ks, std::size_t s) {
        PoolSpec spec;
        spec.variant = v;
        spec.kernels = std::move(ks);
        spec.stride = s;
        spec.validate();
        return spec;
    }
};

/// "stacked:2,2,3:s2" / "multi:2,4,8:s2" / "vanilla:2:s2"
inline std::string format_pool_spec(const PoolSpec& spec) {
    std::ostringstream os;
    os << variant_name(spec.variant) << ':';
    for (std::size_t i = 0; i < spec.kernels.size(); ++i) os << (i ? "," : "") << spec.kernels[i];
    os << ":s" << spec.stride;
    return os.str();
}

inline PoolSpec parse_pool_spec(std::string_view text) {
    auto fail = [&](const std::string& why) {
        return PoolSpecError("bad pool spec '" + std::string(text) + "': " + why +
                             " (expected e.g. stacked:2,2,3:s2, multi:2,4,8:s2, vanilla:2:s2)");
    };
    auto c1 = text.find(':');
    auto c2 = c1 == std::string_view::npos ? c1 : text.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw fail("missing ':' separators");
    auto name = text.substr(0, c1);
    auto klist = text.substr(c1 + 1, c2 - c1 - 1);
    auto stride = text.substr(c2 + 1);

    PoolVariant variant;
    if (name == "vanilla") variant = PoolVariant::vanilla;
    else if (name == "multi" || name == "multi_kernel") variant = PoolVariant::multi_kernel;
    else if (name == "stacked") variant = PoolVariant::stacked;
    else throw fail("unknown variant '" + std::string(name) + "'");

    auto parse_uint = [&](std::string_view s) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) throw fail("'" + std::string(s) + "' is not a count");
        return v;
    };
    std::vector<std::size_t> kernels;
    std::size_t start = 0;
    while (start <= klist.size()) {
        auto comma = klist.find(',', start);
        auto piece = klist.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        kernels.push_back(parse_uint(piece));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (stride.size() < 2 || stride[0] != 's') throw fail("stride must look like s2");

    PoolSpec spec;
    spec.variant = variant;
    spec.kernels = std::move(kernels);
    spec.stride = parse_uint(stride.substr(1));
    try {
        spec.validate();
    } catch (const PoolSpecError& e) {
        throw fail(e.what());
    }
    return spec;
}

/// Output extent of a left-anchored pooling: ceil(extent / stride).
constexpr std::size_t pooled_extent(std::size_t extent, std::size_t stride) { return (extent + stride - 1) / stride; }

/// Stacked kernel set equivalent to a multi-kernel set at stride s:
/// k'_1 = k_1 and k'_i = (k_i - k_{i-1}) / s + 1.
inline std::vector<std::size_t> stacked_kernels_for(const std::vector<std::size_t>& multi_kernels, std::size_t s) {
    if (s < 1) throw PoolSpecError("stride must be >= 1");
    if (multi_kernels.empty()) throw PoolSpecError("kernel set is empty");
    if (multi_kernels[0] < s)
        throw PoolSpecError("first kernel " + std::to_string(multi_kernels[0]) + " is smaller than stride " +
                            std::to_string(s) + "; windows would not tile");
    std::vector<std::size_t> out{multi_kernels[0]};
    for (std::size_t i = 1; i < multi_kernels.size(); ++i) {
        const auto prev = multi_kernels[i - 1], cur = multi_kernels[i];
        if (cur <= prev) throw PoolSpecError("multi-kernel sizes must be strictly increasing");
        if ((cur - prev) % s != 0)
            throw PoolSpecError("kernels " + std::to_string(prev) + " -> " + std::to_string(cur) +
                                ": difference " + std::to_string(cur - prev) + " is not divisible by stride " +
                                std::to_string(s));
        out.push_back((cur - prev) / s + 1);
    }
    return out;
}

/// Inverse of stacked_kernels_for: effective window of each stacked stage.
inline std::vector<std::size_t> multi_kernels_for(const std::vector<std::size_t>& stacked_kernels, std::size_t s) {
    if (stacked_kernels.empty()) throw PoolSpecError("kernel set is empty");
    std::vector<std::size_t> out{stacked_kernels[0]};
    for (std::size_t i = 1; i < stacked_kernels.size(); ++i) {
        if (stacked_kernels[i] < 1) throw PoolSpecError("stacked kernels must be >= 1");
        out.push_back(out.back() + (stacked_kernels[i] - 1) * s);
    }
    return out;
}

inline PoolSpec stacked_equivalent(const PoolSpec& multi) {
    if (multi.variant != PoolVariant::multi_kernel) throw PoolSpecError("expected a multi-kernel spec");
    return PoolSpec::stacked(stacked_kernels_for(multi.kernels, multi.stride), multi.stride);
}

namespace detail {

// One plane.  argmax (optional) receives the flat input index chosen for
// every output cell: the first maximum in row-major scan order.
template <typename T>
void max_pool_plane(const T* in, std::size_t h, std::size_t w, std::size_t k, std::size_t s, T* out,
                    std::uint32_t* argmax) {
    const std::size_t oh = pooled_extent(h, s), ow = pooled_extent(w, s);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        const std::size_t y0 = oy * s, y1 = std::min(y0 + k, h);
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t x0 = ox * s, x1 = std::min(x0 + k, w);
            std::size_t best_idx = y0 * w + x0;
            T best = in[best_idx];
            for (std::size_t y = y0; y < y1; ++y) {
                const T* row = in + y * w;
                for (std::size_t x = x0; x < x1; ++x)
                    if (row[x] > best) {
                        best = row[x];
                        best_idx = y * w + x;
                    }
            }
            out[oy * ow + ox] = best;
            if (argmax) argmax[oy * ow + ox] = static_cast<std::uint32_t>(best_idx);
        }
    }
}

template <typename T>
void require_feature_map(const Tensor<T>& x, const char* op) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected (batch, channels, h, w), got " + to_string(x.shape()));
}

}  // namespace detail

/// Argmax indices (per plane, flat within the plane) of a max pooling.
template <typename T>
std::vector<std::uint32_t> max_pool_argmax(const Tensor<T>& x, std::size_t k, std::size_t s) {
    detail::require_feature_map(x, "max_pool_argmax");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oplane = pooled_extent(h, s) * pooled_extent(w, s);
    std::vector<T> out(planes * oplane);
    std::vector<std::uint32_t> idx(planes * oplane);
    for (std::size_t p = 0; p < planes; ++p)
        detail::max_pool_plane(x.data().data() + p * h * w, h, w, k, s, out.data() + p * oplane, idx.data() + p * oplane);
    return idx;
}

/// Single max pooling with kernel k and stride s (differentiable).
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k, std::size_t s) {
    detail::require_feature_map(x, "max_pool2d");
    if (k < 1 || s < 1) throw PoolSpecError("max_pool2d: kernel and stride must be >= 1");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = pooled_extent(h, s), ow = pooled_extent(w, s), oplane = oh * ow;
    const bool record = grad_enabled() && x.requires_grad();

    std::vector<T> out(planes * oplane);
    std::vector<std::uint32_t> argmax(record ? planes * oplane : 0);
    for (std::size_t p = 0; p < planes; ++p)
        detail::max_pool_plane(x.data().data() + p * h * w, h, w, k, s, out.data() + p * oplane,
                               record ? argmax.data() + p * oplane : nullptr);

    return Tensor<T>::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), "max_pool2d", {x},
                                  [argmax = std::move(argmax), planes, oplane, h, w](detail::Node<T>& self) {
                                      auto& g = self.parents[0]->grad_buffer();
                                      for (std::size_t p = 0; p < planes; ++p) {
                                          T* gin = g.data() + p * h * w;
                                          const T* gout = self.grad.data() + p * oplane;
                                          const std::uint32_t* idx = argmax.data() + p * oplane;
                                          for (std::size_t o = 0; o < oplane; ++o) gin[idx[o]] += gout[o];
                                      }
                                  });
}

template <typename T>
Tensor<T> pool_vanilla(const Tensor<T>& x, std::size_t k, std::size_t s) {
    if (k < 1 || s < 1) throw PoolSpecError("pool_vanilla: kernel and stride must be >= 1");
    return max_pool2d(x, k, s);
}

/// Every branch pools x at the shared stride; the branch maps are fused by
/// element-wise mean.
template <typename T>
std::vector<Tensor<T>> multi_kernel_branches(const Tensor<T>& x, const PoolSpec& spec) {
    std::vector<Tensor<T>> branches;
    branches.reserve(spec.kernels.size());
    for (auto k : spec.kernels) {
        branches.push_back(max_pool2d(x, k, spec.stride));
        if (branches.back().shape() != branches.front().shape())
            throw ShapeError("multi-kernel branch shapes diverged");  // impossible under left anchoring
    }
    return branches;
}

template <typename T>
Tensor<T> pool_multi_kernel(const Tensor<T>& x, const PoolSpec& spec) {
    if (spec.variant != PoolVariant::multi_kernel) throw PoolSpecError("pool_multi_kernel: spec is " + format_pool_spec(spec));
    spec.validate();
    return elementwise_mean(multi_kernel_branches(x, spec));
}

/// Intermediate maps Y'_1..Y'_n: the first stage pools at the spec stride,
/// later stages pool the previous map at stride 1 (same extents).
template <typename T>
std::vector<Tensor<T>> stacked_stages(const Tensor<T>& x, const PoolSpec& spec) {
    std::vector<Tensor<T>> stages;
    stages.reserve(spec.kernels.size());
    stages.push_back(max_pool2d(x, spec.kernels[0], spec.stride));
    for (std::size_t i = 1; i < spec.kernels.size(); ++i) stages.push_back(max_pool2d(stages.back(), spec.kernels[i], 1));
    return stages;
}

template <typename T>
Tensor<T> pool_stacked(const Tensor<T>& x, const PoolSpec& spec) {
    if (spec.variant != PoolVariant::stacked) throw PoolSpecError("pool_stacked: spec is " + format_pool_spec(spec));
    spec.validate();
    return elementwise_mean(stacked_stages(x, spec));
}

template <typename T>
Tensor<T> pool(const Tensor<T>& x, const PoolSpec& spec) {
    switch (spec.variant) {
        case PoolVariant::vanilla:
            spec.validate();
            return pool_vanilla(x, spec.kernels[0], spec.stride);
        case PoolVariant::multi_kernel: return pool_multi_kernel(x, spec);
        case PoolVariant::stacked: return pool_stacked(x, spec);
    }
    throw PoolSpecError("unknown pool variant");
}

/// Argmax indices of every max-pooling stage a spec runs, in evaluation order.
/// Used to detect when a perturbation flips a routing decision.
template <typename T>
std::vector<std::vector<std::uint32_t>> pool_routing(const Tensor<T>& x, const PoolSpec& spec) {
    NoGradGuard guard;
    std::vector<std::vector<std::uint32_t>> routes;
    if (spec.variant == PoolVariant::stacked) {
        Tensor<T> cur = x;
        for (std::size_t i = 0; i < spec.kernels.size(); ++i) {
            const std::size_t s = i == 0 ? spec.stride : 1;
            routes.push_back(max_pool_argmax(cur, spec.kernels[i], s));
            cur = max_pool2d(cur, spec.kernels[i], s);
        }
    } else {
        for (auto k : spec.kernels) routes.push_back(max_pool_argmax(x, k, spec.stride));
    }
    return routes;
}

struct EquivalenceResult {
    std::vector<std::size_t> stacked_kernels;
    double forward_max_abs_diff = 0;
    double gradient_max_abs_diff = 0;
};

/// Deterministic integer-valued upstream gradient, pre-multiplied by n so
/// every per-branch share g/n is an integer and gradient sums are exact
/// regardless of accumulation order.
template <typename T>
Tensor<T> integer_upstream(const Shape& shape, std::size_t n) {
    std::vector<T> g(numel(shape));
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = static_cast<T>(n * ((i * 2654435761u) % 7 + 1));
    return Tensor<T>::from(shape, std::move(g));
}

/// Runs multi-kernel pooling and its derived stacked form on x and reports
/// the largest forward and input-gradient discrepancy.  Gradients are
/// compared under a shared upstream gradient (integer_upstream by default);
/// they only agree when window maxima are unique.
template <typename T>
EquivalenceResult verify_equivalence(const Tensor<T>& x, const PoolSpec& multi_spec,
                                     std::optional<Tensor<T>> upstream = std::nullopt) {
    if (multi_spec.variant != PoolVariant::multi_kernel) throw PoolSpecError("verify_equivalence needs a multi-kernel spec");
    EquivalenceResult result;
    const PoolSpec stacked = stacked_equivalent(multi_spec);
    result.stacked_kernels = stacked.kernels;

    auto run = [&](const PoolSpec& spec, std::vector<T>& out, std::vector<T>& grad) {
        auto input = x.clone();
        input.set_requires_grad(true);
        auto y = pool(input, spec);
        out.assign(y.data().begin(), y.data().end());
        auto g = upstream ? *upstream : integer_upstream<T>(y.shape(), spec.kernels.size());
        if (g.shape() != y.shape()) throw ShapeError("verify_equivalence: upstream gradient shape mismatch");
        // <y, g> has gradient g with respect to y.
        std::vector<T> gv(g.data().begin(), g.data().end());
        T dot{0};
        for (std::size_t i = 0; i < gv.size(); ++i) dot += gv[i] * y[i];
        auto weighted = Tensor<T>::make_result({}, {dot}, "dot_const", {y}, [gv](detail::Node<T>& self) {
            auto& gy = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += self.grad[0] * gv[i];
        });
        backward(weighted);
        grad.assign(input.grad().begin(), input.grad().end());
    };

    std::vector<T> out_m, grad_m, out_s, grad_s;
    run(multi_spec, out_m, grad_m);
    run(stacked, out_s, grad_s);
    if (out_m.size() != out_s.size()) throw ShapeError("verify_equivalence: output extents differ");
    for (std::size_t i = 0; i < out_m.size(); ++i)
        result.forward_max_abs_diff = std::max(result.forward_max_abs_diff, static_cast<double>(std::abs(out_m[i] - out_s[i])));
    for (std::size_t i = 0; i < grad_m.size(); ++i)
        result.gradient_max_abs_diff =
            std::max(result.gradient_max_abs_diff, static_cast<double>(std::abs(grad_m[i] - grad_s[i])));
    return result;
}

}  // namespace stackpool
