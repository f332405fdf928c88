#pragma once

#include <cmath>
#include <vector>

#include "treeseg/nn/autograd.hpp"

// Differentiable tensor ops. Spatial ops (conv, pooling, RoI align, resize)
// live in conv.hpp. Every op here allocates a fresh output tensor and never
// mutates its inputs, which keeps the shared-buffer reshape trick safe.

namespace treeseg::nn {

namespace detail {

enum class BcKind { Same, Row, Scalar };

inline BcKind broadcast_kind(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return BcKind::Same;
    if (b.numel() == 1) return BcKind::Scalar;
    if (b.ndim() == 1 && a.dim(-1) == b.dim(0)) return BcKind::Row;
    TS_CHECK(false, "broadcast: incompatible shapes " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
    return BcKind::Same;
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    auto kind = detail::broadcast_kind(a->value, b->value);
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    const int64_t d = b->value.numel();
    if (kind == detail::BcKind::Same) {
        for (int64_t i = 0; i < n; ++i) out[i] += b->value[i];
    } else if (kind == detail::BcKind::Scalar) {
        const real_t s = b->value[0];
        for (int64_t i = 0; i < n; ++i) out[i] += s;
    } else {
        for (int64_t i = 0; i < n; ++i) out[i] += b->value[i % d];
    }
    return make_op(std::move(out), {a, b}, [a, b, kind, n, d](Node& node) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            if (kind == detail::BcKind::Same) {
                for (int64_t i = 0; i < n; ++i) gb[i] += node.grad[i];
            } else if (kind == detail::BcKind::Scalar) {
                real_t s = 0;
                for (int64_t i = 0; i < n; ++i) s += node.grad[i];
                gb[0] += s;
            } else {
                for (int64_t i = 0; i < n; ++i) gb[i % d] += node.grad[i];
            }
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    auto kind = detail::broadcast_kind(a->value, b->value);
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    const int64_t d = b->value.numel();
    if (kind == detail::BcKind::Same) {
        for (int64_t i = 0; i < n; ++i) out[i] *= b->value[i];
    } else if (kind == detail::BcKind::Scalar) {
        const real_t s = b->value[0];
        for (int64_t i = 0; i < n; ++i) out[i] *= s;
    } else {
        for (int64_t i = 0; i < n; ++i) out[i] *= b->value[i % d];
    }
    return make_op(std::move(out), {a, b}, [a, b, kind, n, d](Node& node) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            if (kind == detail::BcKind::Same) {
                for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i] * b->value[i];
            } else if (kind == detail::BcKind::Scalar) {
                const real_t s = b->value[0];
                for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i] * s;
            } else {
                for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i] * b->value[i % d];
            }
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            if (kind == detail::BcKind::Same) {
                for (int64_t i = 0; i < n; ++i) gb[i] += node.grad[i] * a->value[i];
            } else if (kind == detail::BcKind::Scalar) {
                real_t s = 0;
                for (int64_t i = 0; i < n; ++i) s += node.grad[i] * a->value[i];
                gb[0] += s;
            } else {
                for (int64_t i = 0; i < n; ++i) gb[i % d] += node.grad[i] * a->value[i];
            }
        }
    });
}

inline Var scale(const Var& a, real_t s) {
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] *= s;
    return make_op(std::move(out), {a}, [a, s, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i] * s;
    });
}

inline Var add_const(const Var& a, real_t c) {
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] += c;
    return make_op(std::move(out), {a}, [a, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i];
    });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }
inline Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

// ---- linear algebra -------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    TS_CHECK(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul: need 2-d");
    const int64_t n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
    TS_CHECK(b->value.dim(0) == k, "matmul: inner dim mismatch");
    Tensor out({n, m});
    out.mat(n, m).noalias() = a->value.mat(n, k) * b->value.mat(k, m);
    return make_op(std::move(out), {a, b}, [a, b, n, k, m](Node& node) {
        auto g = node.grad.mat(n, m);
        if (a->requires_grad)
            a->ensure_grad().mat(n, k).noalias() += g * b->value.mat(k, m).transpose();
        if (b->requires_grad)
            b->ensure_grad().mat(k, m).noalias() += a->value.mat(n, k).transpose() * g;
    });
}

inline Var transpose(const Var& a) {
    TS_CHECK(a->value.ndim() == 2, "transpose: need 2-d");
    const int64_t n = a->value.dim(0), m = a->value.dim(1);
    Tensor out({m, n});
    out.mat(m, n) = a->value.mat(n, m).transpose();
    return make_op(std::move(out), {a}, [a, n, m](Node& node) {
        if (!a->requires_grad) return;
        a->ensure_grad().mat(n, m) += node.grad.mat(m, n).transpose();
    });
}

inline Var reshape(const Var& a, Shape shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [a](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        const int64_t n = ga.numel();
        for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i];
    });
}

// ---- indexing -------------------------------------------------------------

inline Var slice_rows(const Var& a, int64_t start, int64_t len) {
    TS_CHECK(a->value.ndim() >= 1, "slice_rows: rank");
    const int64_t rows = a->value.dim(0);
    TS_CHECK(start >= 0 && len >= 0 && start + len <= rows, "slice_rows: range");
    const int64_t rw = a->value.numel() / std::max<int64_t>(rows, 1);
    Shape os = a->value.shape();
    os[0] = len;
    Tensor out(os);
    std::copy(a->value.data() + start * rw, a->value.data() + (start + len) * rw,
              out.data());
    return make_op(std::move(out), {a}, [a, start, len, rw](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < len * rw; ++i)
            ga[start * rw + i] += node.grad[i];
    });
}

inline Var index_rows(const Var& a, std::vector<int64_t> idx) {
    TS_CHECK(a->value.ndim() >= 1, "index_rows: rank");
    const int64_t rows = a->value.dim(0);
    const int64_t rw = a->value.numel() / std::max<int64_t>(rows, 1);
    Shape os = a->value.shape();
    os[0] = (int64_t)idx.size();
    Tensor out(os);
    for (size_t r = 0; r < idx.size(); ++r) {
        TS_CHECK(idx[r] >= 0 && idx[r] < rows, "index_rows: out of range");
        std::copy(a->value.data() + idx[r] * rw, a->value.data() + (idx[r] + 1) * rw,
                  out.data() + (int64_t)r * rw);
    }
    return make_op(std::move(out), {a}, [a, idx = std::move(idx), rw](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r)
            for (int64_t i = 0; i < rw; ++i)
                ga[idx[r] * rw + i] += node.grad[(int64_t)r * rw + i];
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    TS_CHECK(!parts.empty(), "concat_rows: empty");
    Shape os = parts[0]->value.shape();
    int64_t rows = 0;
    for (const auto& p : parts) rows += p->value.dim(0);
    const int64_t rw = parts[0]->value.numel() / std::max<int64_t>(parts[0]->value.dim(0), 1);
    os[0] = rows;
    Tensor out(os);
    int64_t off = 0;
    for (const auto& p : parts) {
        TS_CHECK(p->value.numel() == p->value.dim(0) * rw, "concat_rows: trailing dims differ");
        std::copy(p->value.data(), p->value.data() + p->value.numel(), out.data() + off);
        off += p->value.numel();
    }
    return make_op(std::move(out), parts, [parts, rw](Node& node) {
        int64_t off = 0;
        for (const auto& p : parts) {
            const int64_t n = p->value.numel();
            if (p->requires_grad) {
                Tensor& gp = p->ensure_grad();
                for (int64_t i = 0; i < n; ++i) gp[i] += node.grad[off + i];
            }
            off += n;
        }
    });
}

// ---- reductions -----------------------------------------------------------

inline Var sum(const Var& a) {
    real_t s = 0;
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) s += a->value[i];
    return make_op(Tensor::scalar(s), {a}, [a, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        const real_t g = node.grad[0];
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
}

inline Var mean(const Var& a) {
    const int64_t n = a->value.numel();
    TS_CHECK(n > 0, "mean: empty tensor");
    return scale(sum(a), 1.0 / (real_t)n);
}

// ---- activations ----------------------------------------------------------

inline Var relu(const Var& a) {
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i)
        if (out[i] < 0) out[i] = 0;
    return make_op(std::move(out), {a}, [a, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
            if (a->value[i] > 0) ga[i] += node.grad[i];
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Tensor saved = out;  // shares buffer; outputs are immutable downstream
    return make_op(std::move(out), {a}, [a, saved, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            const real_t y = saved[i];
            ga[i] += node.grad[i] * y * (1.0 - y);
        }
    });
}

// Exact (erf-based) GELU.
inline Var gelu(const Var& a) {
    static const real_t inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const real_t inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        const real_t x = out[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return make_op(std::move(out), {a}, [a, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            const real_t x = a->value[i];
            const real_t cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const real_t pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            ga[i] += node.grad[i] * (cdf + x * pdf);
        }
    });
}

// ---- softmax family -------------------------------------------------------

inline Var softmax_rows(const Var& a) {
    TS_CHECK(a->value.ndim() >= 1, "softmax_rows: rank");
    const int64_t d = a->value.dim(-1);
    const int64_t rows = a->value.numel() / d;
    Tensor out = a->value.clone();
    for (int64_t r = 0; r < rows; ++r) {
        real_t* p = out.data() + r * d;
        real_t mx = p[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, p[j]);
        real_t z = 0;
        for (int64_t j = 0; j < d; ++j) {
            p[j] = std::exp(p[j] - mx);
            z += p[j];
        }
        for (int64_t j = 0; j < d; ++j) p[j] /= z;
    }
    Tensor saved = out;
    return make_op(std::move(out), {a}, [a, saved, rows, d](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const real_t* y = saved.data() + r * d;
            const real_t* g = node.grad.data() + r * d;
            real_t dot = 0;
            for (int64_t j = 0; j < d; ++j) dot += y[j] * g[j];
            for (int64_t j = 0; j < d; ++j)
                ga[r * d + j] += y[j] * (g[j] - dot);
        }
    });
}

inline Var log_softmax_rows(const Var& a) {
    TS_CHECK(a->value.ndim() >= 1, "log_softmax_rows: rank");
    const int64_t d = a->value.dim(-1);
    const int64_t rows = a->value.numel() / d;
    Tensor out = a->value.clone();
    for (int64_t r = 0; r < rows; ++r) {
        real_t* p = out.data() + r * d;
        real_t mx = p[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, p[j]);
        real_t z = 0;
        for (int64_t j = 0; j < d; ++j) z += std::exp(p[j] - mx);
        const real_t lse = mx + std::log(z);
        for (int64_t j = 0; j < d; ++j) p[j] -= lse;
    }
    Tensor saved = out;
    return make_op(std::move(out), {a}, [a, saved, rows, d](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const real_t* lp = saved.data() + r * d;
            const real_t* g = node.grad.data() + r * d;
            real_t gsum = 0;
            for (int64_t j = 0; j < d; ++j) gsum += g[j];
            for (int64_t j = 0; j < d; ++j)
                ga[r * d + j] += g[j] - std::exp(lp[j]) * gsum;
        }
    });
}

// Elementwise log; inputs must be strictly positive (probabilities from
// softmax / bucket sums qualify).
inline Var log_op(const Var& a) {
    Tensor out = a->value.clone();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        TS_CHECK(out[i] > 0, "log: non-positive input");
        out[i] = std::log(out[i]);
    }
    return make_op(std::move(out), {a}, [a, n](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += node.grad[i] / a->value[i];
    });
}

// Sums columns of probs[N,D] into G buckets: out[n,g] = sum_{j: group[j]==g} probs[n,j]
inline Var sum_cols_by_group(const Var& a, const std::vector<int64_t>& group, int64_t n_groups) {
    TS_CHECK(a->value.ndim() == 2, "sum_cols_by_group: need 2-d");
    const int64_t n = a->value.dim(0), d = a->value.dim(1);
    TS_CHECK((int64_t)group.size() == d, "sum_cols_by_group: group size");
    Tensor out({n, n_groups});
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < d; ++j) {
            TS_CHECK(group[j] >= 0 && group[j] < n_groups, "sum_cols_by_group: bad group id");
            out[r * n_groups + group[j]] += a->value[r * d + j];
        }
    return make_op(std::move(out), {a}, [a, group, n, d, n_groups](Node& node) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < d; ++j)
                ga[r * d + j] += node.grad[r * n_groups + group[j]];
    });
}

// ---- losses ---------------------------------------------------------------

// Weighted mean of -logp[i, label[i]]; weights are per-instance scalars.
// Uniform weights give the plain mean NLL.
inline Var nll_loss(const Var& logp, const std::vector<int64_t>& labels,
                    const std::vector<real_t>& weights = {}) {
    TS_CHECK(logp->value.ndim() == 2, "nll_loss: need 2-d logp");
    const int64_t n = logp->value.dim(0), d = logp->value.dim(1);
    TS_CHECK((int64_t)labels.size() == n, "nll_loss: label count");
    TS_CHECK(weights.empty() || (int64_t)weights.size() == n, "nll_loss: weight count");
    TS_CHECK(n > 0, "nll_loss: empty batch");
    real_t wsum = 0, loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        TS_CHECK(labels[i] >= 0 && labels[i] < d, "nll_loss: label out of range");
        const real_t w = weights.empty() ? 1.0 : weights[(size_t)i];
        TS_CHECK(w >= 0, "nll_loss: negative weight");
        loss -= w * logp->value[i * d + labels[(size_t)i]];
        wsum += w;
    }
    TS_CHECK(wsum > 0, "nll_loss: zero total weight");
    loss /= wsum;
    return make_op(Tensor::scalar(loss), {logp},
                   [logp, labels, weights, n, d, wsum](Node& node) {
                       if (!logp->requires_grad) return;
                       Tensor& g = logp->ensure_grad();
                       const real_t go = node.grad[0];
                       for (int64_t i = 0; i < n; ++i) {
                           const real_t w = weights.empty() ? 1.0 : weights[(size_t)i];
                           g[i * d + labels[(size_t)i]] -= go * w / wsum;
                       }
                   });
}

inline Var cross_entropy_logits(const Var& logits, const std::vector<int64_t>& labels,
                                const std::vector<real_t>& weights = {}) {
    return nll_loss(log_softmax_rows(logits), labels, weights);
}

// Numerically-stable mean binary cross entropy on logits.
inline Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
    TS_CHECK(logits->value.numel() == targets.numel(), "bce: shape mismatch");
    const int64_t n = logits->value.numel();
    TS_CHECK(n > 0, "bce: empty");
    real_t loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const real_t x = logits->value[i], t = targets[i];
        loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= (real_t)n;
    return make_op(Tensor::scalar(loss), {logits}, [logits, targets, n](Node& node) {
        if (!logits->requires_grad) return;
        Tensor& g = logits->ensure_grad();
        const real_t go = node.grad[0] / (real_t)n;
        for (int64_t i = 0; i < n; ++i) {
            const real_t x = logits->value[i];
            const real_t s = 1.0 / (1.0 + std::exp(-x));
            g[i] += go * (s - targets[i]);
        }
    });
}

inline Var smooth_l1_mean(const Var& pred, const Tensor& target, real_t beta = 1.0) {
    TS_CHECK(pred->value.numel() == target.numel(), "smooth_l1: shape mismatch");
    const int64_t n = pred->value.numel();
    TS_CHECK(n > 0, "smooth_l1: empty");
    real_t loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const real_t d = pred->value[i] - target[i];
        loss += std::abs(d) < beta ? 0.5 * d * d / beta : std::abs(d) - 0.5 * beta;
    }
    loss /= (real_t)n;
    return make_op(Tensor::scalar(loss), {pred}, [pred, target, beta, n](Node& node) {
        if (!pred->requires_grad) return;
        Tensor& g = pred->ensure_grad();
        const real_t go = node.grad[0] / (real_t)n;
        for (int64_t i = 0; i < n; ++i) {
            const real_t d = pred->value[i] - target[i];
            g[i] += go * std::clamp(d / beta, -1.0, 1.0);
        }
    });
}

// ---- attention helpers ----------------------------------------------------

// [N, h*dh] -> [h, N, dh]
inline Var split_heads(const Var& a, int64_t heads) {
    TS_CHECK(a->value.ndim() == 2, "split_heads: need 2-d");
    const int64_t n = a->value.dim(0), d = a->value.dim(1);
    TS_CHECK(d % heads == 0, "split_heads: dim not divisible by heads");
    const int64_t dh = d / heads;
    Tensor out({heads, n, dh});
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < dh; ++j)
                out[(h * n + r) * dh + j] = a->value[r * d + h * dh + j];
    return make_op(std::move(out), {a}, [a, heads, n, d, dh](Node& node) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < dh; ++j)
                    g[r * d + h * dh + j] += node.grad[(h * n + r) * dh + j];
    });
}

// [h, N, dh] -> [N, h*dh]
inline Var merge_heads(const Var& a) {
    TS_CHECK(a->value.ndim() == 3, "merge_heads: need 3-d");
    const int64_t heads = a->value.dim(0), n = a->value.dim(1), dh = a->value.dim(2);
    const int64_t d = heads * dh;
    Tensor out({n, d});
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t r = 0; r < n; ++r)
            for (int64_t j = 0; j < dh; ++j)
                out[r * d + h * dh + j] = a->value[(h * n + r) * dh + j];
    return make_op(std::move(out), {a}, [a, heads, n, dh, d](Node& node) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < dh; ++j)
                    g[(h * n + r) * dh + j] += node.grad[r * d + h * dh + j];
    });
}

// Batched A[h,N,K] @ B[h,K,M] -> [h,N,M]; transpose_b treats B as [h,M,K].
inline Var bmm(const Var& a, const Var& b, bool transpose_b = false) {
    TS_CHECK(a->value.ndim() == 3 && b->value.ndim() == 3, "bmm: need 3-d");
    const int64_t h = a->value.dim(0), n = a->value.dim(1), k = a->value.dim(2);
    const int64_t m = transpose_b ? b->value.dim(1) : b->value.dim(2);
    TS_CHECK(b->value.dim(0) == h, "bmm: batch mismatch");
    TS_CHECK((transpose_b ? b->value.dim(2) : b->value.dim(1)) == k, "bmm: inner dim");
    Tensor out({h, n, m});
    for (int64_t i = 0; i < h; ++i) {
        Tensor::ConstMatMap A(a->value.data() + i * n * k, n, k);
        Tensor::MatMap C(out.data() + i * n * m, n, m);
        if (transpose_b) {
            Tensor::ConstMatMap B(b->value.data() + i * m * k, m, k);
            C.noalias() = A * B.transpose();
        } else {
            Tensor::ConstMatMap B(b->value.data() + i * k * m, k, m);
            C.noalias() = A * B;
        }
    }
    return make_op(std::move(out), {a, b}, [a, b, transpose_b, h, n, k, m](Node& node) {
        for (int64_t i = 0; i < h; ++i) {
            Tensor::ConstMatMap G(node.grad.data() + i * n * m, n, m);
            if (a->requires_grad) {
                Tensor::MatMap GA(a->ensure_grad().data() + i * n * k, n, k);
                if (transpose_b) {
                    Tensor::ConstMatMap B(b->value.data() + i * m * k, m, k);
                    GA.noalias() += G * B;
                } else {
                    Tensor::ConstMatMap B(b->value.data() + i * k * m, k, m);
                    GA.noalias() += G * B.transpose();
                }
            }
            if (b->requires_grad) {
                Tensor::ConstMatMap A(a->value.data() + i * n * k, n, k);
                if (transpose_b) {
                    Tensor::MatMap GB(b->ensure_grad().data() + i * m * k, m, k);
                    GB.noalias() += G.transpose() * A;
                } else {
                    Tensor::MatMap GB(b->ensure_grad().data() + i * k * m, k, m);
                    GB.noalias() += A.transpose() * G;
                }
            }
        }
    });
}

}  // namespace treeseg::nn
