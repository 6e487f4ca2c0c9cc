#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gemm.hpp"
#include "tensor.hpp"

namespace stackpool {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

template <typename T>
void accumulate(Node<T>& parent, std::span<const T> delta) {
    if (!parent.requires_grad) return;
    auto& g = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), "add", {a, b}, [](detail::Node<T>& self) {
        detail::accumulate<T>(*self.parents[0], self.grad);
        detail::accumulate<T>(*self.parents[1], self.grad);
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return Tensor<T>::make_result(a.shape(), std::move(out), "scale", {a}, [factor](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T total{0};
    for (T v : a.data()) total += v;
    return Tensor<T>::make_result({}, {total}, "sum", {a}, [](detail::Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
    return Tensor<T>::make_result(x.shape(), std::move(out), "relu", {x}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (p.data[i] > T{0}) g[i] += self.grad[i];
    });
}

/// Element-wise mean of same-shape maps.  Summation runs in list order and
/// divides once by n, so two callers feeding bitwise-equal inputs get
/// bitwise-equal outputs.
template <typename T>
Tensor<T> elementwise_mean(std::span<const Tensor<T>> inputs) {
    if (inputs.empty()) throw ShapeError("elementwise_mean: empty input list");
    for (std::size_t i = 1; i < inputs.size(); ++i) detail::require_same_shape(inputs[0], inputs[i], "elementwise_mean");
    const std::size_t n = inputs.size();
    const T count = static_cast<T>(n);
    std::vector<T> out(inputs[0].data().begin(), inputs[0].data().end());
    for (std::size_t i = 1; i < n; ++i) {
        auto d = inputs[i].data();
        for (std::size_t z = 0; z < out.size(); ++z) out[z] += d[z];
    }
    for (auto& v : out) v /= count;
    std::vector<Tensor<T>> parents(inputs.begin(), inputs.end());
    return Tensor<T>::make_result(inputs[0].shape(), std::move(out), "elementwise_mean", std::move(parents),
                                  [count](detail::Node<T>& self) {
                                      for (auto& p : self.parents) {
                                          if (!p->requires_grad) continue;
                                          auto& g = p->grad_buffer();
                                          for (std::size_t z = 0; z < g.size(); ++z) g[z] += self.grad[z] / count;
                                      }
                                  });
}

template <typename T>
Tensor<T> elementwise_mean(const std::vector<Tensor<T>>& inputs) {
    return elementwise_mean(std::span<const Tensor<T>>(inputs));
}

/// Mean squared difference over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
    detail::require_same_shape(prediction, target, "mse_loss");
    const T count = static_cast<T>(prediction.size());
    T acc{0};
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const T d = prediction[i] - target[i];
        acc += d * d;
    }
    return Tensor<T>::make_result({}, {acc / count}, "mse_loss", {prediction, target},
                                  [count](detail::Node<T>& self) {
                                      auto& p = *self.parents[0];
                                      auto& t = *self.parents[1];
                                      const T g = self.grad[0] * T{2} / count;
                                      if (p.requires_grad) {
                                          auto& gp = p.grad_buffer();
                                          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (p.data[i] - t.data[i]);
                                      }
                                      if (t.requires_grad) {
                                          auto& gt = t.grad_buffer();
                                          for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (p.data[i] - t.data[i]);
                                      }
                                  });
}

namespace detail {

// col[(c*k + ky)*k + kx][y*ow + x] = in[c][y + ky - pad][x + kx - pad] (0 outside).
template <typename T>
void im2col(const T* in, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t pad,
            std::size_t oh, std::size_t ow, T* col) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * oh * ow;
                for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    T* dst = row + y * ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst, dst + ow, T{0});
                        continue;
                    }
                    const T* src = in + (c * h + static_cast<std::size_t>(iy)) * w;
                    for (std::size_t x = 0; x < ow; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
                        dst[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[ix];
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t pad,
                std::size_t oh, std::size_t ow, T* in) {
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * oh * ow;
                for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* dst = in + (c * h + static_cast<std::size_t>(iy)) * w;
                    for (std::size_t x = 0; x < ow; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += row[y * ow + x];
                    }
                }
            }
}

}  // namespace detail

/// 2-D convolution (cross-correlation), stride 1.  With same padding the
/// kernel must be odd and the spatial extents are preserved; otherwise no
/// padding is applied.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, bool same_padding = true) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be (batch, channels, h, w), got " + to_string(input.shape()));
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
        throw ShapeError("conv2d: weight must be (out_ch, in_ch, k, k), got " + to_string(weight.shape()));
    const std::size_t batch = input.dim(0), in_ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t out_ch = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != in_ch)
        throw ShapeError("conv2d: input has " + std::to_string(in_ch) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
    if (bias.rank() != 1 || bias.dim(0) != out_ch)
        throw ShapeError("conv2d: bias must have shape (" + std::to_string(out_ch) + "), got " + to_string(bias.shape()));
    if (same_padding && k % 2 == 0) throw ShapeError("conv2d: same padding needs an odd kernel, got k=" + std::to_string(k));
    const std::size_t pad = same_padding ? (k - 1) / 2 : 0;
    if (!same_padding && (k > h || k > w)) throw ShapeError("conv2d: kernel larger than input without padding");
    const std::size_t oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
    const std::size_t plane = oh * ow, rows = in_ch * k * k;

    std::vector<T> out(batch * out_ch * plane);
    std::vector<T> col(rows * plane);
    auto in = input.data();
    auto wt = weight.data();
    auto b = bias.data();
    for (std::size_t n = 0; n < batch; ++n) {
        detail::im2col(in.data() + n * in_ch * h * w, in_ch, h, w, k, pad, oh, ow, col.data());
        T* o = out.data() + n * out_ch * plane;
        for (std::size_t c = 0; c < out_ch; ++c) std::fill(o + c * plane, o + (c + 1) * plane, b[c]);
        detail::gemm_acc(out_ch, plane, rows, wt.data(), rows, col.data(), plane, o, plane);
    }

    return Tensor<T>::make_result(
        {batch, out_ch, oh, ow}, std::move(out), "conv2d", {input, weight, bias},
        [=](detail::Node<T>& self) {
            auto& xin = *self.parents[0];
            auto& wn = *self.parents[1];
            auto& bn = *self.parents[2];
            const T* gout = self.grad.data();
            if (bn.requires_grad) {
                auto& gb = bn.grad_buffer();
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t c = 0; c < out_ch; ++c) {
                        const T* g = gout + (n * out_ch + c) * plane;
                        T s{0};
                        for (std::size_t j = 0; j < plane; ++j) s += g[j];
                        gb[c] += s;
                    }
            }
            if (!wn.requires_grad && !xin.requires_grad) return;
            std::vector<T> colbuf(rows * plane), colT, wT, dcol;
            if (wn.requires_grad) colT.resize(rows * plane);
            if (xin.requires_grad) {
                wT.resize(rows * out_ch);
                detail::transpose(out_ch, rows, wn.data.data(), wT.data());
                dcol.resize(rows * plane);
            }
            for (std::size_t n = 0; n < batch; ++n) {
                const T* g = gout + n * out_ch * plane;
                if (wn.requires_grad) {
                    detail::im2col(xin.data.data() + n * in_ch * h * w, in_ch, h, w, k, pad, oh, ow, colbuf.data());
                    detail::transpose(rows, plane, colbuf.data(), colT.data());
                    detail::gemm_acc(out_ch, rows, plane, g, plane, colT.data(), rows, wn.grad_buffer().data(), rows);
                }
                if (xin.requires_grad) {
                    std::fill(dcol.begin(), dcol.end(), T{0});
                    detail::gemm_acc(rows, plane, out_ch, wT.data(), out_ch, g, plane, dcol.data(), plane);
                    detail::col2im_acc(dcol.data(), in_ch, h, w, k, pad, oh, ow,
                                       xin.grad_buffer().data() + n * in_ch * h * w);
                }
            }
        });
}

namespace detail {

struct ResizeTap {
    std::size_t lo, hi;
    double frac;
};

// Corner-aligned sampling: output index i maps to i * (in - 1) / (out - 1).
inline std::vector<ResizeTap> resize_taps(std::size_t in, std::size_t out) {
    std::vector<ResizeTap> taps(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double src = out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
        auto lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
        taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resize of the two trailing (spatial) axes with corner alignment.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t target_h, std::size_t target_w) {
    if (input.rank() < 2) throw ShapeError("bilinear_resize: need at least two axes, got " + to_string(input.shape()));
    if (target_h < 1 || target_w < 1) throw ShapeError("bilinear_resize: target extents must be >= 1");
    Shape shape = input.shape();
    const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    const std::size_t planes = input.size() / (h * w);
    shape[shape.size() - 2] = target_h;
    shape[shape.size() - 1] = target_w;
    auto ty = detail::resize_taps(h, target_h);
    auto tx = detail::resize_taps(w, target_w);

    std::vector<T> out(planes * target_h * target_w);
    auto in = input.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = in.data() + p * h * w;
        T* dst = out.data() + p * target_h * target_w;
        for (std::size_t y = 0; y < target_h; ++y) {
            const T fy = static_cast<T>(ty[y].frac);
            const T* r0 = src + ty[y].lo * w;
            const T* r1 = src + ty[y].hi * w;
            for (std::size_t x = 0; x < target_w; ++x) {
                const T fx = static_cast<T>(tx[x].frac);
                const T top = (T{1} - fx) * r0[tx[x].lo] + fx * r0[tx[x].hi];
                const T bot = (T{1} - fx) * r1[tx[x].lo] + fx * r1[tx[x].hi];
                dst[y * target_w + x] = (T{1} - fy) * top + fy * bot;
            }
        }
    }
    return Tensor<T>::make_result(
        std::move(shape), std::move(out), "bilinear_resize", {input},
        [=](detail::Node<T>& self) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t p = 0; p < planes; ++p) {
                const T* gout = self.grad.data() + p * target_h * target_w;
                T* gin = g.data() + p * h * w;
                for (std::size_t y = 0; y < target_h; ++y) {
                    const T fy = static_cast<T>(ty[y].frac);
                    for (std::size_t x = 0; x < target_w; ++x) {
                        const T fx = static_cast<T>(tx[x].frac);
                        const T v = gout[y * target_w + x];
                        gin[ty[y].lo * w + tx[x].lo] += (T{1} - fy) * (T{1} - fx) * v;
                        gin[ty[y].lo * w + tx[x].hi] += (T{1} - fy) * fx * v;
                        gin[ty[y].hi * w + tx[x].lo] += fy * (T{1} - fx) * v;
                        gin[ty[y].hi * w + tx[x].hi] += fy * fx * v;
                    }
                }
            }
        });
}

}  // namespace stackpool
