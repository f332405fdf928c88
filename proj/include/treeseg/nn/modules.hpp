#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "treeseg/nn/conv.hpp"
#include "treeseg/nn/init.hpp"
#include "treeseg/nn/norm.hpp"
#include "treeseg/nn/ops.hpp"

// Thin parameter-owning layers. Models hold these as members and implement
// collect() so checkpointing and optimizers can enumerate named parameters.

namespace treeseg::nn {

using NamedParams = std::vector<std::pair<std::string, Var>>;

struct Module {
    virtual ~Module() = default;
    virtual void collect(const std::string& prefix, NamedParams& out) const = 0;

    NamedParams named_params(const std::string& root = "") const {
        NamedParams out;
        collect(root, out);
        return out;
    }
    std::vector<Var> parameters() const {
        std::vector<Var> out;
        for (auto& [name, v] : named_params()) out.push_back(v);
        return out;
    }
    void set_trainable(bool on) {
        for (auto& v : parameters()) v->requires_grad = on;
    }
    int64_t param_count() const {
        int64_t n = 0;
        for (auto& v : parameters()) n += v->value.numel();
        return n;
    }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

struct Linear : Module {
    Var weight;  // [out, in]
    Var bias;    // [out] or null
    int64_t in_dim = 0, out_dim = 0;

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng, bool with_bias = true)
        : in_dim(in), out_dim(out) {
        Tensor w({out, in});
        fill_kaiming_uniform(w, in, rng);
        weight = make_var(std::move(w), true);
        if (with_bias) {
            Tensor b({out});
            fill_kaiming_uniform(b, in, rng);
            bias = make_var(std::move(b), true);
        }
    }

    // x [N, in] -> [N, out]
    Var forward(const Var& x) const {
        Var y = matmul(x, transpose(weight));
        if (bias) y = add(y, bias);
        return y;
    }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "weight"), weight});
        if (bias) out.push_back({join_name(prefix, "bias"), bias});
    }
};

struct Conv2dLayer : Module {
    Var weight;  // [O,C,kh,kw]
    Var bias;    // [O] or null
    int64_t stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_, int64_t pad_,
                Rng& rng, bool with_bias = true)
        : stride(stride_), pad(pad_) {
        Tensor w({out_ch, in_ch, k, k});
        fill_kaiming_uniform(w, in_ch * k * k, rng);
        weight = make_var(std::move(w), true);
        if (with_bias) {
            Tensor b({out_ch});
            fill_kaiming_uniform(b, in_ch * k * k, rng);
            bias = make_var(std::move(b), true);
        }
    }

    Var forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "weight"), weight});
        if (bias) out.push_back({join_name(prefix, "bias"), bias});
    }
};

struct ConvTranspose2dLayer : Module {
    Var weight;  // [C,O,kh,kw]
    Var bias;    // [O] or null
    int64_t stride = 1;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_,
                         Rng& rng, bool with_bias = true)
        : stride(stride_) {
        Tensor w({in_ch, out_ch, k, k});
        fill_kaiming_uniform(w, in_ch * k * k, rng);
        weight = make_var(std::move(w), true);
        if (with_bias) {
            Tensor b({out_ch});
            fill_kaiming_uniform(b, in_ch * k * k, rng);
            bias = make_var(std::move(b), true);
        }
    }

    Var forward(const Var& x) const { return conv_transpose2d(x, weight, bias, stride); }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "weight"), weight});
        if (bias) out.push_back({join_name(prefix, "bias"), bias});
    }
};

struct LayerNorm : Module {
    Var gamma, beta;
    real_t eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int64_t d, real_t eps_ = 1e-5) : eps(eps_) {
        gamma = make_var(Tensor::ones({d}), true);
        beta = make_var(Tensor::zeros({d}), true);
    }

    Var forward(const Var& x) const { return layer_norm_rows(x, gamma, beta, eps); }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "gamma"), gamma});
        out.push_back({join_name(prefix, "beta"), beta});
    }
};

// Per-pixel channel normalization for [C,H,W] maps.
struct LayerNorm2d : Module {
    Var gamma, beta;
    real_t eps = 1e-6;

    LayerNorm2d() = default;
    explicit LayerNorm2d(int64_t c, real_t eps_ = 1e-6) : eps(eps_) {
        gamma = make_var(Tensor::ones({c}), true);
        beta = make_var(Tensor::zeros({c}), true);
    }

    Var forward(const Var& x) const { return layer_norm_chw(x, gamma, beta, eps); }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "gamma"), gamma});
        out.push_back({join_name(prefix, "beta"), beta});
    }
};

struct GroupNormLayer : Module {
    Var gamma, beta;
    int64_t groups = 1;
    real_t eps = 1e-5;

    GroupNormLayer() = default;
    GroupNormLayer(int64_t c, int64_t groups_, real_t eps_ = 1e-5)
        : groups(groups_), eps(eps_) {
        gamma = make_var(Tensor::ones({c}), true);
        beta = make_var(Tensor::zeros({c}), true);
    }

    Var forward(const Var& x) const { return group_norm(x, groups, gamma, beta, eps); }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "gamma"), gamma});
        out.push_back({join_name(prefix, "beta"), beta});
    }
};

// Learned token table; rows are embeddings.
struct Embedding : Module {
    Var weight;  // [n, d]

    Embedding() = default;
    Embedding(int64_t n, int64_t d, Rng& rng, real_t std = 1.0) {
        Tensor w({n, d});
        fill_normal(w, 0.0, std, rng);
        weight = make_var(std::move(w), true);
    }

    Var forward(const std::vector<int64_t>& ids) const { return index_rows(weight, ids); }
    Var all() const { return weight; }

    void collect(const std::string& prefix, NamedParams& out) const override {
        out.push_back({join_name(prefix, "weight"), weight});
    }
};

// Standard multi-head attention. internal_dim lets the projection width
// differ from the embedding width (queries/keys/values are projected to
// internal_dim, output projected back to embed_dim).
struct MultiheadAttention : Module {
    Linear q_proj, k_proj, v_proj, out_proj;
    int64_t heads = 1;
    int64_t internal_dim = 0;

    MultiheadAttention() = default;
    MultiheadAttention(int64_t embed_dim, int64_t heads_, Rng& rng,
                       int64_t internal_dim_ = 0)
        : heads(heads_), internal_dim(internal_dim_ ? internal_dim_ : embed_dim) {
        TS_CHECK(internal_dim % heads == 0, "attention: dim not divisible by heads");
        q_proj = Linear(embed_dim, internal_dim, rng);
        k_proj = Linear(embed_dim, internal_dim, rng);
        v_proj = Linear(embed_dim, internal_dim, rng);
        out_proj = Linear(internal_dim, embed_dim, rng);
    }

    // q [Nq, E], k/v [Nk, E] -> [Nq, E]
    Var forward(const Var& q, const Var& k, const Var& v) const {
        const int64_t dh = internal_dim / heads;
        Var qh = split_heads(q_proj.forward(q), heads);
        Var kh = split_heads(k_proj.forward(k), heads);
        Var vh = split_heads(v_proj.forward(v), heads);
        Var att = scale(bmm(qh, kh, /*transpose_b=*/true), 1.0 / std::sqrt((real_t)dh));
        att = softmax_rows(att);
        return out_proj.forward(merge_heads(bmm(att, vh)));
    }

    void collect(const std::string& prefix, NamedParams& out) const override {
        q_proj.collect(join_name(prefix, "q_proj"), out);
        k_proj.collect(join_name(prefix, "k_proj"), out);
        v_proj.collect(join_name(prefix, "v_proj"), out);
        out_proj.collect(join_name(prefix, "out_proj"), out);
    }
};

// Two-layer MLP with configurable hidden width.
struct Mlp : Module {
    Linear fc1, fc2;
    bool use_gelu = true;

    Mlp() = default;
    Mlp(int64_t in, int64_t hidden, int64_t out, Rng& rng, bool gelu_act = true)
        : fc1(in, hidden, rng), fc2(hidden, out, rng), use_gelu(gelu_act) {}

    Var forward(const Var& x) const {
        Var h = fc1.forward(x);
        h = use_gelu ? gelu(h) : relu(h);
        return fc2.forward(h);
    }

    void collect(const std::string& prefix, NamedParams& out) const override {
        fc1.collect(join_name(prefix, "fc1"), out);
        fc2.collect(join_name(prefix, "fc2"), out);
    }
};

}  // namespace treeseg::nn
