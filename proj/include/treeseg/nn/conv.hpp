#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "treeseg/nn/ops.hpp"

// Spatial ops on [C,H,W] tensors: convolution (im2col + GEMM), transposed
// convolution, max pooling, bilinear resize and RoI align.

namespace treeseg::nn {

namespace detail {

struct ConvSpec {
    int64_t C, H, W, O, kh, kw, sy, sx, py, px, OH, OW;
};

inline ConvSpec conv_spec(const Tensor& x, const Tensor& w, int64_t sy, int64_t sx,
                          int64_t py, int64_t px) {
    TS_CHECK(x.ndim() == 3, "conv2d: input must be [C,H,W]");
    TS_CHECK(w.ndim() == 4, "conv2d: weight must be [O,C,kh,kw]");
    ConvSpec s{};
    s.C = x.dim(0); s.H = x.dim(1); s.W = x.dim(2);
    s.O = w.dim(0); s.kh = w.dim(2); s.kw = w.dim(3);
    TS_CHECK(w.dim(1) == s.C, "conv2d: channel mismatch");
    s.sy = sy; s.sx = sx; s.py = py; s.px = px;
    s.OH = (s.H + 2 * py - s.kh) / sy + 1;
    s.OW = (s.W + 2 * px - s.kw) / sx + 1;
    TS_CHECK(s.OH > 0 && s.OW > 0, "conv2d: kernel larger than padded input");
    return s;
}

// Patches as rows: cols[(oy*OW+ox), c*kh*kw + i*kw + j]
inline Tensor im2col(const real_t* x, const ConvSpec& s) {
    const int64_t kk = s.kh * s.kw, ckk = s.C * kk;
    Tensor cols = Tensor::zeros({s.OH * s.OW, ckk});
    real_t* dst = cols.data();
    for (int64_t oy = 0; oy < s.OH; ++oy)
        for (int64_t ox = 0; ox < s.OW; ++ox) {
            real_t* row = dst + (oy * s.OW + ox) * ckk;
            const int64_t y0 = oy * s.sy - s.py, x0 = ox * s.sx - s.px;
            for (int64_t c = 0; c < s.C; ++c)
                for (int64_t i = 0; i < s.kh; ++i) {
                    const int64_t y = y0 + i;
                    if (y < 0 || y >= s.H) continue;
                    const real_t* src = x + (c * s.H + y) * s.W;
                    real_t* r = row + c * kk + i * s.kw;
                    for (int64_t j = 0; j < s.kw; ++j) {
                        const int64_t xx = x0 + j;
                        if (xx >= 0 && xx < s.W) r[j] = src[xx];
                    }
                }
        }
    return cols;
}

inline void col2im_add(const real_t* cols, const ConvSpec& s, real_t* x) {
    const int64_t kk = s.kh * s.kw, ckk = s.C * kk;
    for (int64_t oy = 0; oy < s.OH; ++oy)
        for (int64_t ox = 0; ox < s.OW; ++ox) {
            const real_t* row = cols + (oy * s.OW + ox) * ckk;
            const int64_t y0 = oy * s.sy - s.py, x0 = ox * s.sx - s.px;
            for (int64_t c = 0; c < s.C; ++c)
                for (int64_t i = 0; i < s.kh; ++i) {
                    const int64_t y = y0 + i;
                    if (y < 0 || y >= s.H) continue;
                    real_t* dst = x + (c * s.H + y) * s.W;
                    const real_t* r = row + c * kk + i * s.kw;
                    for (int64_t j = 0; j < s.kw; ++j) {
                        const int64_t xx = x0 + j;
                        if (xx >= 0 && xx < s.W) dst[xx] += r[j];
                    }
                }
        }
}

}  // namespace detail

// x [C,H,W], w [O,C,kh,kw], optional b [O] (pass nullptr for none).
inline Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride_y,
                  int64_t stride_x, int64_t pad_y, int64_t pad_x) {
    const auto s = detail::conv_spec(x->value, w->value, stride_y, stride_x, pad_y, pad_x);
    const int64_t ckk = s.C * s.kh * s.kw, oo = s.OH * s.OW;
    Tensor cols = detail::im2col(x->value.data(), s);
    Tensor out({s.O, s.OH, s.OW});
    out.mat(s.O, oo).noalias() = w->value.mat(s.O, ckk) * cols.mat(oo, ckk).transpose();
    if (b) {
        TS_CHECK(b->value.numel() == s.O, "conv2d: bias size");
        auto m = out.mat(s.O, oo);
        for (int64_t o = 0; o < s.O; ++o) m.row(o).array() += b->value[o];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents),
                   [x, w, b, s, cols, ckk, oo](Node& node) {
                       auto g = node.grad.mat(s.O, oo);
                       if (w->requires_grad)
                           w->ensure_grad().mat(s.O, ckk).noalias() += g * cols.mat(oo, ckk);
                       if (b && b->requires_grad) {
                           Tensor& gb = b->ensure_grad();
                           for (int64_t o = 0; o < s.O; ++o) gb[o] += g.row(o).sum();
                       }
                       if (x->requires_grad) {
                           Tensor dcols({oo, ckk});
                           dcols.mat(oo, ckk).noalias() =
                               g.transpose() * w->value.mat(s.O, ckk);
                           detail::col2im_add(dcols.data(), s, x->ensure_grad().data());
                       }
                   });
}

inline Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride,
                  int64_t pad) {
    return conv2d(x, w, b, stride, stride, pad, pad);
}

// x [C,H,W], w [C,O,kh,kw], optional b [O]; output [(H-1)*s+kh, (W-1)*s+kw].
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int64_t stride) {
    TS_CHECK(x->value.ndim() == 3, "conv_transpose2d: input must be [C,H,W]");
    TS_CHECK(w->value.ndim() == 4, "conv_transpose2d: weight must be [C,O,kh,kw]");
    const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    TS_CHECK(w->value.dim(0) == C, "conv_transpose2d: channel mismatch");
    const int64_t O = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
    const int64_t OH = (H - 1) * stride + kh, OW = (W - 1) * stride + kw;
    const int64_t okk = O * kh * kw, hw = H * W;

    // cols[(y*W+x), o*kh*kw + i*kw + j] = sum_c x[c,y,x] * w[c,o,i,j]
    Tensor cols({hw, okk});
    cols.mat(hw, okk).noalias() =
        x->value.mat(C, hw).transpose() * w->value.mat(C, okk);
    Tensor out = Tensor::zeros({O, OH, OW});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
            const real_t* row = cols.data() + (y * W + xx) * okk;
            for (int64_t o = 0; o < O; ++o)
                for (int64_t i = 0; i < kh; ++i) {
                    real_t* dst = out.data() + (o * OH + y * stride + i) * OW + xx * stride;
                    const real_t* r = row + o * kh * kw + i * kw;
                    for (int64_t j = 0; j < kw; ++j) dst[j] += r[j];
                }
        }
    if (b) {
        TS_CHECK(b->value.numel() == O, "conv_transpose2d: bias size");
        for (int64_t o = 0; o < O; ++o) {
            real_t* p = out.data() + o * OH * OW;
            for (int64_t i = 0; i < OH * OW; ++i) p[i] += b->value[o];
        }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents),
                   [x, w, b, C, H, W, O, kh, kw, OH, OW, stride, okk, hw](Node& node) {
                       Tensor dcols = Tensor::zeros({hw, okk});
                       for (int64_t y = 0; y < H; ++y)
                           for (int64_t xx = 0; xx < W; ++xx) {
                               real_t* row = dcols.data() + (y * W + xx) * okk;
                               for (int64_t o = 0; o < O; ++o)
                                   for (int64_t i = 0; i < kh; ++i) {
                                       const real_t* src = node.grad.data() +
                                           (o * OH + y * stride + i) * OW + xx * stride;
                                       real_t* r = row + o * kh * kw + i * kw;
                                       for (int64_t j = 0; j < kw; ++j) r[j] += src[j];
                                   }
                           }
                       if (x->requires_grad)
                           x->ensure_grad().mat(C, hw).noalias() +=
                               w->value.mat(C, okk) * dcols.mat(hw, okk).transpose();
                       if (w->requires_grad)
                           w->ensure_grad().mat(C, okk).noalias() +=
                               x->value.mat(C, hw) * dcols.mat(hw, okk);
                       if (b && b->requires_grad) {
                           Tensor& gb = b->ensure_grad();
                           for (int64_t o = 0; o < O; ++o) {
                               const real_t* p = node.grad.data() + o * OH * OW;
                               real_t s = 0;
                               for (int64_t i = 0; i < OH * OW; ++i) s += p[i];
                               gb[o] += s;
                           }
                       }
                   });
}

inline Var max_pool2d(const Var& x, int64_t k, int64_t stride) {
    TS_CHECK(x->value.ndim() == 3, "max_pool2d: input must be [C,H,W]");
    const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    const int64_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    TS_CHECK(OH > 0 && OW > 0, "max_pool2d: window larger than input");
    Tensor out({C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>((size_t)(C * OH * OW));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t oy = 0; oy < OH; ++oy)
            for (int64_t ox = 0; ox < OW; ++ox) {
                real_t best = -std::numeric_limits<real_t>::infinity();
                int64_t bi = -1;
                for (int64_t i = 0; i < k; ++i)
                    for (int64_t j = 0; j < k; ++j) {
                        const int64_t idx = (c * H + oy * stride + i) * W + ox * stride + j;
                        if (x->value[idx] > best) { best = x->value[idx]; bi = idx; }
                    }
                out[(c * OH + oy) * OW + ox] = best;
                (*argmax)[(size_t)((c * OH + oy) * OW + ox)] = bi;
            }
    return make_op(std::move(out), {x}, [x, argmax, C, OH, OW](Node& node) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t i = 0; i < C * OH * OW; ++i) g[(*argmax)[(size_t)i]] += node.grad[i];
    });
}

namespace detail {

struct BilinearTap {
    int64_t lo, hi;
    real_t wlo, whi;
};

// Half-pixel-centered source coordinate, clamped to the valid range.
inline BilinearTap bilinear_tap(int64_t dst, int64_t dst_size, int64_t src_size) {
    const real_t s = (real_t)src_size / (real_t)dst_size;
    real_t c = ((real_t)dst + 0.5) * s - 0.5;
    c = std::clamp(c, (real_t)0, (real_t)(src_size - 1));
    BilinearTap t;
    t.lo = (int64_t)std::floor(c);
    t.hi = std::min(t.lo + 1, src_size - 1);
    t.whi = c - (real_t)t.lo;
    t.wlo = 1.0 - t.whi;
    return t;
}

}  // namespace detail

inline Var bilinear_resize(const Var& x, int64_t oh, int64_t ow) {
    TS_CHECK(x->value.ndim() == 3, "bilinear_resize: input must be [C,H,W]");
    const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    if (oh == H && ow == W) return x;
    std::vector<detail::BilinearTap> ty((size_t)oh), tx((size_t)ow);
    for (int64_t i = 0; i < oh; ++i) ty[(size_t)i] = detail::bilinear_tap(i, oh, H);
    for (int64_t j = 0; j < ow; ++j) tx[(size_t)j] = detail::bilinear_tap(j, ow, W);
    Tensor out({C, oh, ow});
    for (int64_t c = 0; c < C; ++c) {
        const real_t* src = x->value.data() + c * H * W;
        real_t* dst = out.data() + c * oh * ow;
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                const auto& a = ty[(size_t)i];
                const auto& b = tx[(size_t)j];
                dst[i * ow + j] = a.wlo * (b.wlo * src[a.lo * W + b.lo] +
                                           b.whi * src[a.lo * W + b.hi]) +
                                  a.whi * (b.wlo * src[a.hi * W + b.lo] +
                                           b.whi * src[a.hi * W + b.hi]);
            }
    }
    return make_op(std::move(out), {x},
                   [x, ty = std::move(ty), tx = std::move(tx), C, H, W, oh, ow](Node& node) {
                       if (!x->requires_grad) return;
                       Tensor& g = x->ensure_grad();
                       for (int64_t c = 0; c < C; ++c) {
                           real_t* gd = g.data() + c * H * W;
                           const real_t* gs = node.grad.data() + c * oh * ow;
                           for (int64_t i = 0; i < oh; ++i)
                               for (int64_t j = 0; j < ow; ++j) {
                                   const auto& a = ty[(size_t)i];
                                   const auto& b = tx[(size_t)j];
                                   const real_t v = gs[i * ow + j];
                                   gd[a.lo * W + b.lo] += v * a.wlo * b.wlo;
                                   gd[a.lo * W + b.hi] += v * a.wlo * b.whi;
                                   gd[a.hi * W + b.lo] += v * a.whi * b.wlo;
                                   gd[a.hi * W + b.hi] += v * a.whi * b.whi;
                               }
                       }
                   });
}

namespace detail {

struct RoiTap {
    int64_t idx[4];
    real_t w[4];
    bool valid;
};

inline RoiTap roi_tap(real_t y, real_t x, int64_t H, int64_t W) {
    RoiTap t{};
    if (y < -1.0 || y > (real_t)H || x < -1.0 || x > (real_t)W) {
        t.valid = false;
        return t;
    }
    t.valid = true;
    y = std::clamp(y, (real_t)0, (real_t)(H - 1));
    x = std::clamp(x, (real_t)0, (real_t)(W - 1));
    const int64_t y0 = (int64_t)y, x0 = (int64_t)x;
    const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const real_t ly = y - (real_t)y0, lx = x - (real_t)x0;
    t.idx[0] = y0 * W + x0; t.w[0] = (1 - ly) * (1 - lx);
    t.idx[1] = y0 * W + x1; t.w[1] = (1 - ly) * lx;
    t.idx[2] = y1 * W + x0; t.w[2] = ly * (1 - lx);
    t.idx[3] = y1 * W + x1; t.w[3] = ly * lx;
    return t;
}

}  // namespace detail

// Boxes are (x0,y0,x1,y1) in input-image coordinates; spatial_scale maps them
// onto the feature map. Half-pixel aligned sampling, fixed grid of
// sampling_ratio^2 points per output bin, averaged. Output [N, C, P, P].
inline Var roi_align(const Var& x, const std::vector<std::array<real_t, 4>>& boxes,
                     int64_t P, real_t spatial_scale, int64_t sampling_ratio = 2) {
    TS_CHECK(x->value.ndim() == 3, "roi_align: input must be [C,H,W]");
    const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    const int64_t N = (int64_t)boxes.size();
    const int64_t R = sampling_ratio;
    const real_t inv = 1.0 / (real_t)(R * R);

    auto taps = std::make_shared<std::vector<detail::RoiTap>>();
    taps->reserve((size_t)(N * P * P * R * R));
    for (const auto& bx : boxes) {
        const real_t x0 = bx[0] * spatial_scale - 0.5, y0 = bx[1] * spatial_scale - 0.5;
        const real_t x1 = bx[2] * spatial_scale - 0.5, y1 = bx[3] * spatial_scale - 0.5;
        const real_t bh = (y1 - y0) / (real_t)P, bw = (x1 - x0) / (real_t)P;
        for (int64_t py = 0; py < P; ++py)
            for (int64_t px = 0; px < P; ++px)
                for (int64_t iy = 0; iy < R; ++iy)
                    for (int64_t ix = 0; ix < R; ++ix) {
                        const real_t sy = y0 + ((real_t)py + ((real_t)iy + 0.5) / (real_t)R) * bh;
                        const real_t sx = x0 + ((real_t)px + ((real_t)ix + 0.5) / (real_t)R) * bw;
                        taps->push_back(detail::roi_tap(sy, sx, H, W));
                    }
    }

    Tensor out = Tensor::zeros({N, C, P, P});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const real_t* src = x->value.data() + c * H * W;
            real_t* dst = out.data() + (n * C + c) * P * P;
            for (int64_t b = 0; b < P * P; ++b) {
                real_t acc = 0;
                for (int64_t s = 0; s < R * R; ++s) {
                    const auto& t = (*taps)[(size_t)((n * P * P + b) * R * R + s)];
                    if (!t.valid) continue;
                    acc += t.w[0] * src[t.idx[0]] + t.w[1] * src[t.idx[1]] +
                           t.w[2] * src[t.idx[2]] + t.w[3] * src[t.idx[3]];
                }
                dst[b] = acc * inv;
            }
        }
    return make_op(std::move(out), {x}, [x, taps, N, C, P, R, H, W, inv](Node& node) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                real_t* gd = g.data() + c * H * W;
                const real_t* gs = node.grad.data() + (n * C + c) * P * P;
                for (int64_t b = 0; b < P * P; ++b) {
                    const real_t v = gs[b] * inv;
                    for (int64_t s = 0; s < R * R; ++s) {
                        const auto& t = (*taps)[(size_t)((n * P * P + b) * R * R + s)];
                        if (!t.valid) continue;
                        gd[t.idx[0]] += v * t.w[0];
                        gd[t.idx[1]] += v * t.w[1];
                        gd[t.idx[2]] += v * t.w[2];
                        gd[t.idx[3]] += v * t.w[3];
                    }
                }
            }
    });
}

// Zero padding for [C,H,W]; supports the asymmetric pads even-kernel
// same-padding needs (extra pixel on the bottom/right side).
inline Var zero_pad2d(const Var& x, int64_t top, int64_t bottom, int64_t left,
                      int64_t right) {
    TS_CHECK(x->value.ndim() == 3, "zero_pad2d: input must be [C,H,W]");
    TS_CHECK(top >= 0 && bottom >= 0 && left >= 0 && right >= 0,
             "zero_pad2d: negative padding");
    const int64_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    const int64_t OH = H + top + bottom, OW = W + left + right;
    Tensor out = Tensor::zeros({C, OH, OW});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
            std::memcpy(out.data() + (c * OH + y + top) * OW + left,
                        x->value.data() + (c * H + y) * W, (size_t)W * sizeof(real_t));
    return make_op(std::move(out), {x}, [x, C, H, W, OH, OW, top, left](Node& node) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y) {
                const real_t* src = node.grad.data() + (c * OH + y + top) * OW + left;
                real_t* dst = g.data() + (c * H + y) * W;
                for (int64_t i = 0; i < W; ++i) dst[i] += src[i];
            }
    });
}

}  // namespace treeseg::nn
