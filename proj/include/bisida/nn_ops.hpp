#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "bisida/graph.hpp"

namespace bisida {

namespace detail {

inline void require_rank(const Shape& d, std::size_t r, const char* op)
{
    if (d.size() != r) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + to_string(d));
    }
}

struct ConvGeometry {
    std::size_t n, c, h, w;     // input
    std::size_t o, kh, kw;      // weight
    std::size_t stride, pad;
    std::size_t oh, ow;         // output
};

// Half-open range of output coordinates whose input tap k lands inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t extent, std::size_t out_extent,
                                                       std::size_t k, std::size_t stride, std::size_t pad)
{
    // need 0 <= o*stride + k - pad < extent
    std::size_t lo = 0;
    if (k < pad) lo = (pad - k + stride - 1) / stride;
    std::size_t hi = 0;
    if (extent + pad > k) hi = std::min(out_extent, (extent + pad - k - 1) / stride + 1);
    if (hi < lo) hi = lo;
    return {lo, hi};
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* in, const T* w, const T* b, T* out)
{
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.oh * g.ow;
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t o = 0; o < g.o; ++o) {
            T* op = out + (n * g.o + o) * out_plane;
            std::fill(op, op + out_plane, b[o]);
            for (std::size_t i = 0; i < g.c; ++i) {
                const T* ip = in + (n * g.c + i) * in_plane;
                const T* wp = w + (o * g.c + i) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const auto [y0, y1] = valid_range(g.h, g.oh, ky, g.stride, g.pad);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wp[ky * g.kw + kx];
                        const auto [x0, x1] = valid_range(g.w, g.ow, kx, g.stride, g.pad);
                        for (std::size_t y = y0; y < y1; ++y) {
                            T* orow = op + y * g.ow;
                            const T* irow = ip + (y * g.stride + ky - g.pad) * g.w;
                            if (g.stride == 1) {
                                const T* src = irow + kx - g.pad;
                                for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * src[x];
                            } else {
                                for (std::size_t x = x0; x < x1; ++x) {
                                    orow[x] += wv * irow[x * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t len)
{
    // Fixed 8-lane split keeps the summation order independent of the compiler.
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= len; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    }
    T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < len; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* in, const T* w, const T* gout, T* gin, T* gw, T* gb)
{
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.oh * g.ow;
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t o = 0; o < g.o; ++o) {
            const T* gp = gout + (n * g.o + o) * out_plane;
            if (gb != nullptr) {
                T s{0};
                for (std::size_t k = 0; k < out_plane; ++k) s += gp[k];
                gb[o] += s;
            }
            for (std::size_t i = 0; i < g.c; ++i) {
                const T* ip = in + (n * g.c + i) * in_plane;
                T* gip = gin != nullptr ? gin + (n * g.c + i) * in_plane : nullptr;
                const std::size_t widx = (o * g.c + i) * g.kh * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const auto [y0, y1] = valid_range(g.h, g.oh, ky, g.stride, g.pad);
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const auto [x0, x1] = valid_range(g.w, g.ow, kx, g.stride, g.pad);
                        const T wv = w[widx + ky * g.kw + kx];
                        T wacc{0};
                        for (std::size_t y = y0; y < y1; ++y) {
                            const T* grow = gp + y * g.ow;
                            const std::size_t irow = (y * g.stride + ky - g.pad) * g.w;
                            if (g.stride == 1) {
                                const std::size_t off = irow + kx - g.pad;
                                if (gw != nullptr) wacc += dot(grow + x0, ip + off + x0, x1 - x0);
                                if (gip != nullptr) {
                                    T* dst = gip + off;
                                    for (std::size_t x = x0; x < x1; ++x) dst[x] += wv * grow[x];
                                }
                            } else {
                                for (std::size_t x = x0; x < x1; ++x) {
                                    const std::size_t ii = irow + x * g.stride + kx - g.pad;
                                    if (gw != nullptr) wacc += grow[x] * ip[ii];
                                    if (gip != nullptr) gip[ii] += wv * grow[x];
                                }
                            }
                        }
                        if (gw != nullptr) gw[widx + ky * g.kw + kx] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation of an NCHW input with an OIKK weight plus per-output bias.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride = 1, std::size_t padding = 0)
{
    detail::require_same_graph(input, weight, "conv2d");
    detail::require_same_graph(input, bias, "conv2d");
    const Shape& xd = input.dims();
    const Shape& wd = weight.dims();
    detail::require_rank(xd, 4, "conv2d input");
    detail::require_rank(wd, 4, "conv2d weight");
    if (stride == 0) throw ValidationError("conv2d: stride must be positive");
    if (xd[1] != wd[1]) {
        throw ShapeError("conv2d: input has " + std::to_string(xd[1]) + " channels, weight expects " +
                         std::to_string(wd[1]));
    }
    if (bias.value().size() != wd[0]) throw ShapeError("conv2d: bias length must equal output channels");
    if (xd[2] + 2 * padding < wd[2] || xd[3] + 2 * padding < wd[3]) {
        throw ShapeError("conv2d: kernel " + to_string(wd) + " does not fit padded input " + to_string(xd));
    }
    detail::ConvGeometry g{xd[0], xd[1], xd[2], xd[3], wd[0], wd[2], wd[3], stride, padding, 0, 0};
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
    if (g.oh == 0 || g.ow == 0) throw ShapeError("conv2d: zero-sized output");

    Tensor<T> out(Shape{g.n, g.o, g.oh, g.ow});
    detail::conv_forward(g, input.value().data().data(), weight.value().data().data(),
                         bias.value().data().data(), out.data().data());
    const std::size_t ix = input.id, iw = weight.id, ib = bias.id;
    return input.graph->record("conv2d", std::move(out), {ix, iw, ib}, [g, ix, iw, ib](Graph<T>& gr, std::size_t self) {
        const auto& go = gr.node(self).grad;
        T* gin = gr.needs_grad(ix) ? gr.grad_of(ix).data() : nullptr;
        T* gw = gr.needs_grad(iw) ? gr.grad_of(iw).data() : nullptr;
        T* gb = gr.needs_grad(ib) ? gr.grad_of(ib).data() : nullptr;
        detail::conv_backward(g, gr.node(ix).value.data().data(), gr.node(iw).value.data().data(), go.data(),
                              gin, gw, gb);
    });
}

// 2x2 max pooling, stride 2. Ties go to the first cell in row-major order.
template <typename T>
Var<T> maxpool2(Var<T> input)
{
    const Shape& d = input.dims();
    detail::require_rank(d, 4, "maxpool2");
    if (d[2] % 2 != 0 || d[3] % 2 != 0) {
        throw ShapeError("maxpool2: spatial dims must be even, got " + to_string(d));
    }
    const std::size_t planes = d[0] * d[1], h = d[2], w = d[3], oh = h / 2, ow = w / 2;
    Tensor<T> out(Shape{d[0], d[1], oh, ow});
    std::vector<std::uint32_t> argmax(out.size());
    const auto& x = input.value();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xo = 0; xo < ow; ++xo) {
                std::size_t best = p * h * w + (2 * y) * w + 2 * xo;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = p * h * w + (2 * y + dy) * w + 2 * xo + dx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                const std::size_t o = (p * oh + y) * ow + xo;
                out[o] = x[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    const std::size_t ix = input.id;
    return input.graph->record("maxpool2", std::move(out), {ix},
                               [ix, argmax = std::move(argmax)](Graph<T>& g, std::size_t self) {
                                   const auto& go = g.node(self).grad;
                                   auto& gi = g.grad_of(ix);
                                   for (std::size_t o = 0; o < go.size(); ++o) gi[argmax[o]] += go[o];
                               });
}

template <typename T>
Var<T> upsample_nearest2(Var<T> input)
{
    const Shape& d = input.dims();
    detail::require_rank(d, 4, "upsample_nearest2");
    const std::size_t planes = d[0] * d[1], h = d[2], w = d[3], oh = 2 * h, ow = 2 * w;
    Tensor<T> out(Shape{d[0], d[1], oh, ow});
    const auto& x = input.value();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
            const T* src = x.data().data() + p * h * w + (y / 2) * w;
            T* dst = out.data().data() + p * oh * ow + y * ow;
            for (std::size_t xo = 0; xo < ow; ++xo) dst[xo] = src[xo / 2];
        }
    }
    const std::size_t ix = input.id;
    return input.graph->record("upsample_nearest2", std::move(out), {ix},
                               [ix, planes, h, w](Graph<T>& g, std::size_t self) {
                                   const auto& go = g.node(self).grad;
                                   auto& gi = g.grad_of(ix);
                                   const std::size_t ow = 2 * w;
                                   for (std::size_t p = 0; p < planes; ++p) {
                                       for (std::size_t y = 0; y < 2 * h; ++y) {
                                           const T* src = go.data() + p * 4 * h * w + y * ow;
                                           T* dst = gi.data() + p * h * w + (y / 2) * w;
                                           for (std::size_t xo = 0; xo < ow; ++xo) dst[xo / 2] += src[xo];
                                       }
                                   }
                               });
}

// Spatial mean per (n, c); result has dims {N, C}.
template <typename T>
Var<T> channel_mean(Var<T> t)
{
    const Shape& d = t.dims();
    detail::require_rank(d, 4, "channel_mean");
    const std::size_t planes = d[0] * d[1], hw = d[2] * d[3];
    if (hw == 0) throw ShapeError("channel_mean: empty spatial extent");
    Tensor<T> out(Shape{d[0], d[1]});
    const auto& x = t.value();
    for (std::size_t p = 0; p < planes; ++p) {
        T s{0};
        for (std::size_t k = 0; k < hw; ++k) s += x[p * hw + k];
        out[p] = s / static_cast<T>(hw);
    }
    const std::size_t ix = t.id;
    return t.graph->record("channel_mean", std::move(out), {ix}, [ix, planes, hw](Graph<T>& g, std::size_t self) {
        const auto& go = g.node(self).grad;
        auto& gi = g.grad_of(ix);
        const T inv = T{1} / static_cast<T>(hw);
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t k = 0; k < hw; ++k) gi[p * hw + k] += go[p] * inv;
        }
    });
}

// sqrt(spatial variance + epsilon) per (n, c); result has dims {N, C}.
template <typename T>
Var<T> channel_std(Var<T> t, double epsilon)
{
    const Shape& d = t.dims();
    detail::require_rank(d, 4, "channel_std");
    if (!(epsilon >= 0.0)) throw ValidationError("channel_std: epsilon must be non-negative");
    const std::size_t planes = d[0] * d[1], hw = d[2] * d[3];
    if (hw == 0) throw ShapeError("channel_std: empty spatial extent");
    Tensor<T> out(Shape{d[0], d[1]});
    std::vector<T> mu(planes);
    const auto& x = t.value();
    for (std::size_t p = 0; p < planes; ++p) {
        T s{0};
        for (std::size_t k = 0; k < hw; ++k) s += x[p * hw + k];
        mu[p] = s / static_cast<T>(hw);
        T v{0};
        for (std::size_t k = 0; k < hw; ++k) {
            const T c = x[p * hw + k] - mu[p];
            v += c * c;
        }
        out[p] = std::sqrt(v / static_cast<T>(hw) + static_cast<T>(epsilon));
    }
    const std::size_t ix = t.id;
    return t.graph->record("channel_std", std::move(out), {ix},
                           [ix, planes, hw, mu = std::move(mu)](Graph<T>& g, std::size_t self) {
                               const auto& node = g.node(self);
                               const auto& xv = g.node(ix).value;
                               auto& gi = g.grad_of(ix);
                               for (std::size_t p = 0; p < planes; ++p) {
                                   if (node.value[p] == T{0}) continue;
                                   const T k = node.grad[p] / (static_cast<T>(hw) * node.value[p]);
                                   for (std::size_t i = 0; i < hw; ++i) {
                                       gi[p * hw + i] += k * (xv[p * hw + i] - mu[p]);
                                   }
                               }
                           });
}

template <typename T>
struct Moments {
    Var<T> mu;
    Var<T> sigma;
};

template <typename T>
Moments<T> channel_moments(Var<T> t, double epsilon)
{
    return {channel_mean(t), channel_std(t, epsilon)};
}

// Expands an {N, C} tensor over an H x W grid.
template <typename T>
Var<T> broadcast_channels(Var<T> v, std::size_t h, std::size_t w)
{
    const Shape& d = v.dims();
    detail::require_rank(d, 2, "broadcast_channels");
    const std::size_t planes = d[0] * d[1], hw = h * w;
    Tensor<T> out(Shape{d[0], d[1], h, w});
    for (std::size_t p = 0; p < planes; ++p) {
        std::fill(out.data().begin() + static_cast<std::ptrdiff_t>(p * hw),
                  out.data().begin() + static_cast<std::ptrdiff_t>((p + 1) * hw), v.value()[p]);
    }
    const std::size_t ix = v.id;
    return v.graph->record("broadcast_channels", std::move(out), {ix}, [ix, planes, hw](Graph<T>& g, std::size_t self) {
        const auto& go = g.node(self).grad;
        auto& gi = g.grad_of(ix);
        for (std::size_t p = 0; p < planes; ++p) {
            T s{0};
            for (std::size_t k = 0; k < hw; ++k) s += go[p * hw + k];
            gi[p] += s;
        }
    });
}

// Per-pixel softmax over the channel axis, max-subtracted.
template <typename T>
Var<T> softmax_channels(Var<T> logits)
{
    const Shape& d = logits.dims();
    detail::require_rank(d, 4, "softmax_channels");
    if (d[1] < 2) throw ShapeError("softmax_channels: need at least 2 channels");
    const std::size_t n = d[0], c = d[1], hw = d[2] * d[3];
    Tensor<T> out(d);
    const auto& z = logits.value();
    std::vector<T> mx(hw), den(hw);
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = b * c * hw;
        std::fill(mx.begin(), mx.end(), z[base]);
        for (std::size_t ch = 1; ch < c; ++ch) {
            for (std::size_t k = 0; k < hw; ++k) mx[k] = std::max(mx[k], z[base + ch * hw + k]);
        }
        std::fill(den.begin(), den.end(), T{0});
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t k = 0; k < hw; ++k) {
                const T e = std::exp(z[base + ch * hw + k] - mx[k]);
                out[base + ch * hw + k] = e;
                den[k] += e;
            }
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t k = 0; k < hw; ++k) out[base + ch * hw + k] /= den[k];
        }
    }
    const std::size_t ix = logits.id;
    return logits.graph->record("softmax_channels", std::move(out), {ix}, [ix, n, c, hw](Graph<T>& g, std::size_t self) {
        const auto& node = g.node(self);
        const auto& y = node.value;
        const auto& go = node.grad;
        auto& gi = g.grad_of(ix);
        std::vector<T> dotp(hw);
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = b * c * hw;
            std::fill(dotp.begin(), dotp.end(), T{0});
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t k = 0; k < hw; ++k) dotp[k] += go[base + ch * hw + k] * y[base + ch * hw + k];
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t k = 0; k < hw; ++k) {
                    const std::size_t i = base + ch * hw + k;
                    gi[i] += y[i] * (go[i] - dotp[k]);
                }
            }
        }
    });
}

inline constexpr double kLogFloor = 1e-12;

// -(1 / (N*H*W)) * sum(target * log(max(p, 1e-12))) for a probability map p
// and a constant target of the same dims. One-hot targets give the usual
// per-pixel cross entropy; scaling target entries weights or masks pixels.
template <typename T>
Var<T> cross_entropy(Var<T> probs, const Tensor<T>& target)
{
    const Shape& d = probs.dims();
    detail::require_rank(d, 4, "cross_entropy");
    if (target.dims() != d) {
        throw ShapeError("cross_entropy: target dims " + to_string(target.dims()) + " vs probs " + to_string(d));
    }
    const T floor = static_cast<T>(kLogFloor);
    const T norm = static_cast<T>(d[0] * d[2] * d[3]);
    const auto& p = probs.value();
    T s{0};
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (target[i] != T{0}) s += target[i] * std::log(std::max(p[i], floor));
    }
    const std::size_t ix = probs.id;
    return probs.graph->record("cross_entropy", Tensor<T>::scalar(-s / norm), {ix},
                               [ix, target, floor, norm](Graph<T>& g, std::size_t self) {
                                   const T go = g.node(self).grad[0];
                                   const auto& pv = g.node(ix).value;
                                   auto& gi = g.grad_of(ix);
                                   for (std::size_t i = 0; i < pv.size(); ++i) {
                                       if (target[i] != T{0} && pv[i] > floor) {
                                           gi[i] -= go * target[i] / (norm * pv[i]);
                                       }
                                   }
                               });
}

}  // namespace bisida
