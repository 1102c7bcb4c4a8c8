#pragma once

// The three attention constructs: enhanced multi-head self-attention (EMSA),
// coordinate attention (CA), and their hybrid composition (HAM):
//
//   X1 = X + DWConv(X)
//   X2 = LN(X1)
//   X3 = CA(X2) + EMSA(X2) + X1
//   Y  = MLP(LN(X3)) + X3
//
// EMSA treats the H*W spatial sites as tokens with C-dim embeddings and runs
//   Q,K,V = FC(x);  Q',K',V' = Linear per branch
//   A  = Q' (x) K'^T            per head, d = C/heads key width
//   Xm = SiLU(FC(A))            FC mixes the last (token) axis
//   Xn = Tanh(FC(Xm) / sqrt(d))
//   out = FC(Xn (x) V') + x
// globally over all tokens, no windowing, no positional encoding. The
// Xn (x) V' aggregation sums with a canonical addend order so that permuting
// the token order of the input permutes the output tokens bitwise-exactly.

#include <cmath>
#include <string>
#include <vector>

#include "hafpn/layers.hpp"
#include "hafpn/tensor.hpp"

namespace hafpn {

// ---------------------------------------------------------------------------
// EMSA
// ---------------------------------------------------------------------------

template <typename T>
struct EmsaParams {
    LinearParams<T> qkv;       // C -> 3C, split order Q | K | V
    LinearParams<T> q_proj;    // C -> C
    LinearParams<T> k_proj;    // C -> C
    LinearParams<T> v_proj;    // C -> C
    LinearParams<T> attn_fc1;  // tokens -> tokens, shared across heads
    LinearParams<T> attn_fc2;  // tokens -> tokens, shared across heads
    LinearParams<T> out_fc;    // C -> C
    std::size_t heads = 2;
    std::size_t token_count = 0;  // H*W this bundle was built for

    std::size_t channels() const { return qkv.in_features(); }

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        qkv.collect_refs(prefix + ".qkv", out);
        q_proj.collect_refs(prefix + ".q_proj", out);
        k_proj.collect_refs(prefix + ".k_proj", out);
        v_proj.collect_refs(prefix + ".v_proj", out);
        attn_fc1.collect_refs(prefix + ".attn_fc1", out);
        attn_fc2.collect_refs(prefix + ".attn_fc2", out);
        out_fc.collect_refs(prefix + ".out_fc", out);
    }
};

template <typename T> using EmsaGrads = EmsaParams<T>;

template <typename T>
EmsaParams<T> zeros_like(const EmsaParams<T>& p) {
    EmsaParams<T> g;
    g.qkv = zeros_like(p.qkv);
    g.q_proj = zeros_like(p.q_proj);
    g.k_proj = zeros_like(p.k_proj);
    g.v_proj = zeros_like(p.v_proj);
    g.attn_fc1 = zeros_like(p.attn_fc1);
    g.attn_fc2 = zeros_like(p.attn_fc2);
    g.out_fc = zeros_like(p.out_fc);
    g.heads = p.heads;
    g.token_count = p.token_count;
    return g;
}

template <typename T>
EmsaParams<T> emsa_init(Rng& rng, std::size_t channels, std::size_t heads,
                        std::size_t token_count) {
    require(heads >= 1 && channels % heads == 0,
            "emsa_init: channels must be divisible by heads");
    require(token_count >= 1, "emsa_init: token count must be >= 1");
    EmsaParams<T> p;
    p.qkv = linear_init<T>(rng, 3 * channels, channels);
    p.q_proj = linear_init<T>(rng, channels, channels);
    p.k_proj = linear_init<T>(rng, channels, channels);
    p.v_proj = linear_init<T>(rng, channels, channels);
    p.attn_fc1 = linear_init<T>(rng, token_count, token_count);
    p.attn_fc2 = linear_init<T>(rng, token_count, token_count);
    p.out_fc = linear_init<T>(rng, channels, channels);
    p.heads = heads;
    p.token_count = token_count;
    return p;
}

namespace detail {

// [N,C,H,W] -> [N,H*W,C] token layout and back.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
    const Shape& s = x.shape();
    return reshape(permute(x, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& t, const Shape& nchw) {
    return permute(reshape(t, {nchw[0], nchw[2], nchw[3], nchw[1]}), {0, 3, 1, 2});
}

// Attention-weighted value aggregation out[n,i,c] = sum_j attn[n,i,j]*v[n,j,c],
// with a canonical addend order (see sum_canonical) so the contraction is
// exactly invariant under a joint permutation of the token axis.
template <typename T>
Tensor<T> attend_values(const Tensor<T>& attn, const Tensor<T>& v) {
    const std::size_t n_b = attn.extent(0), tokens = attn.extent(1);
    const std::size_t dim = v.extent(2);
    require(v.extent(0) == n_b && v.extent(1) == tokens && attn.extent(2) == tokens,
            "attend_values: shape mismatch");
    Tensor<T> out = zeros<T>({n_b, tokens, dim});
    std::vector<T> addends(tokens);
    for (std::size_t n = 0; n < n_b; ++n) {
        const T* pa = attn.data() + n * tokens * tokens;
        const T* pv = v.data() + n * tokens * dim;
        T* po = out.data() + n * tokens * dim;
        for (std::size_t i = 0; i < tokens; ++i) {
            for (std::size_t c = 0; c < dim; ++c) {
                for (std::size_t j = 0; j < tokens; ++j)
                    addends[j] = pa[i * tokens + j] * pv[j * dim + c];
                po[i * dim + c] = sum_canonical(addends);
            }
        }
    }
    ensure_finite(out, "attend_values");
    return out;
}

// Everything the EMSA backward pass needs from a forward evaluation.
template <typename T>
struct EmsaTrace {
    Tensor<T> tokens_in;                 // [N,T,C]
    Tensor<T> q, k, v;                   // [N,T,C]
    Tensor<T> qp, kp, vp;                // [N,T,C]
    std::vector<Tensor<T>> attn;         // per head [N,T,T], pre-fc1
    std::vector<Tensor<T>> fc1_pre;      // per head, pre-silu
    std::vector<Tensor<T>> mixed;        // per head, silu output
    std::vector<Tensor<T>> fc2_scaled;   // per head, pre-tanh
    std::vector<Tensor<T>> attn_final;   // per head, tanh output
    Tensor<T> merged;                    // [N,T,C] heads merged
    Tensor<T> tokens_out;                // [N,T,C]
};

template <typename T>
EmsaTrace<T> emsa_run(const Tensor<T>& x, const EmsaParams<T>& p) {
    require(x.rank() == 4, "emsa_forward: input must be [N,C,H,W]");
    const std::size_t channels = x.extent(1);
    const std::size_t tokens = x.extent(2) * x.extent(3);
    require(channels == p.channels(),
            "emsa_forward: channel count " + std::to_string(channels) +
                " does not match params (" + std::to_string(p.channels()) + ")");
    require(channels % p.heads == 0, "emsa_forward: channels not divisible by heads");
    require(tokens >= 1, "emsa_forward: token count is zero");
    require(tokens == p.token_count,
            "emsa_forward: token count " + std::to_string(tokens) +
                " does not match params (" + std::to_string(p.token_count) + ")");

    const std::size_t head_dim = channels / p.heads;
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

    EmsaTrace<T> tr;
    tr.tokens_in = to_tokens(x);
    const Tensor<T> qkv_out = linear(tr.tokens_in, p.qkv);
    tr.q = slice_last(qkv_out, 0, channels);
    tr.k = slice_last(qkv_out, channels, channels);
    tr.v = slice_last(qkv_out, 2 * channels, channels);
    tr.qp = linear(tr.q, p.q_proj);
    tr.kp = linear(tr.k, p.k_proj);
    tr.vp = linear(tr.v, p.v_proj);

    std::vector<Tensor<T>> head_out;
    for (std::size_t hd = 0; hd < p.heads; ++hd) {
        const Tensor<T> qh = slice_last(tr.qp, hd * head_dim, head_dim);
        const Tensor<T> kh = slice_last(tr.kp, hd * head_dim, head_dim);
        const Tensor<T> vh = slice_last(tr.vp, hd * head_dim, head_dim);
        tr.attn.push_back(matmul(qh, transpose_last2(kh)));
        tr.fc1_pre.push_back(linear(tr.attn.back(), p.attn_fc1));
        tr.mixed.push_back(silu(tr.fc1_pre.back()));
        tr.fc2_scaled.push_back(scale(linear(tr.mixed.back(), p.attn_fc2), inv_sqrt_d));
        tr.attn_final.push_back(tanh(tr.fc2_scaled.back()));
        head_out.push_back(attend_values(tr.attn_final.back(), vh));
    }
    tr.merged = concat(head_out, 2);
    tr.tokens_out = add(linear(tr.merged, p.out_fc), tr.tokens_in);
    return tr;
}

}  // namespace detail

template <typename T>
Tensor<T> emsa_forward(const Tensor<T>& x, const EmsaParams<T>& p) {
    return detail::from_tokens(detail::emsa_run(x, p).tokens_out, x.shape());
}

template <typename T>
struct EmsaBackward {
    Tensor<T> gx;
    EmsaGrads<T> gp;
};

template <typename T>
void add_in_place(LinearParams<T>& acc, const LinearParams<T>& inc) {
    acc.weight = add(acc.weight, inc.weight);
    if (acc.has_bias()) acc.bias = add(acc.bias, inc.bias);
}

template <typename T>
EmsaBackward<T> emsa_backward(const Tensor<T>& x, const EmsaParams<T>& p,
                              const Tensor<T>& gy) {
    require(x.same_shape(gy), "emsa_backward: shape mismatch");
    const detail::EmsaTrace<T> tr = detail::emsa_run(x, p);
    const std::size_t channels = x.extent(1);
    const std::size_t head_dim = channels / p.heads;
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

    EmsaBackward<T> r;
    r.gp = zeros_like(p);

    Tensor<T> g_tokens = detail::to_tokens(gy);
    auto out_bw = linear_backward(tr.merged, p.out_fc, g_tokens);
    r.gp.out_fc = std::move(out_bw.gp);
    Tensor<T> g_tokens_in = g_tokens;  // residual branch

    Tensor<T> g_qp = zeros_like(tr.qp);
    Tensor<T> g_kp = zeros_like(tr.kp);
    Tensor<T> g_vp = zeros_like(tr.vp);
    const std::size_t n_b = tr.qp.extent(0), tokens = tr.qp.extent(1);
    for (std::size_t hd = 0; hd < p.heads; ++hd) {
        const Tensor<T> g_oh = slice_last(out_bw.gx, hd * head_dim, head_dim);
        const Tensor<T> vh = slice_last(tr.vp, hd * head_dim, head_dim);
        const Tensor<T> qh = slice_last(tr.qp, hd * head_dim, head_dim);
        const Tensor<T> kh = slice_last(tr.kp, hd * head_dim, head_dim);

        // out_h = attn_final (x) v_h
        const Tensor<T> g_attn_final = matmul(g_oh, transpose_last2(vh));
        const Tensor<T> g_vh = matmul(transpose_last2(tr.attn_final[hd]), g_oh);

        const Tensor<T> g_scaled = tanh_backward(tr.fc2_scaled[hd], g_attn_final);
        const Tensor<T> g_fc2_pre = scale(g_scaled, inv_sqrt_d);
        auto fc2_bw = linear_backward(tr.mixed[hd], p.attn_fc2, g_fc2_pre);
        add_in_place(r.gp.attn_fc2, fc2_bw.gp);
        const Tensor<T> g_fc1_pre = silu_backward(tr.fc1_pre[hd], fc2_bw.gx);
        auto fc1_bw = linear_backward(tr.attn[hd], p.attn_fc1, g_fc1_pre);
        add_in_place(r.gp.attn_fc1, fc1_bw.gp);

        // attn = q_h (x) k_h^T
        const Tensor<T> g_qh = matmul(fc1_bw.gx, kh);
        const Tensor<T> g_kh = matmul(transpose_last2(fc1_bw.gx), qh);

        for (std::size_t n = 0; n < n_b; ++n)
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t c = 0; c < head_dim; ++c) {
                    const std::size_t src = (n * tokens + t) * head_dim + c;
                    const std::size_t col = hd * head_dim + c;
                    g_qp[(n * tokens + t) * channels + col] += g_qh[src];
                    g_kp[(n * tokens + t) * channels + col] += g_kh[src];
                    g_vp[(n * tokens + t) * channels + col] += g_vh[src];
                }
    }

    auto qproj_bw = linear_backward(tr.q, p.q_proj, g_qp);
    auto kproj_bw = linear_backward(tr.k, p.k_proj, g_kp);
    auto vproj_bw = linear_backward(tr.v, p.v_proj, g_vp);
    r.gp.q_proj = std::move(qproj_bw.gp);
    r.gp.k_proj = std::move(kproj_bw.gp);
    r.gp.v_proj = std::move(vproj_bw.gp);

    const Tensor<T> g_qkv_out =
        concat({qproj_bw.gx, kproj_bw.gx, vproj_bw.gx}, 2);
    auto qkv_bw = linear_backward(tr.tokens_in, p.qkv, g_qkv_out);
    r.gp.qkv = std::move(qkv_bw.gp);
    g_tokens_in = add(g_tokens_in, qkv_bw.gx);

    r.gx = detail::from_tokens(g_tokens_in, x.shape());
    return r;
}

// ---------------------------------------------------------------------------
// Coordinate attention
// ---------------------------------------------------------------------------

template <typename T>
struct CaParams {
    Conv2dParams<T> reduce;    // 1x1, C -> C/r, shared by both branches
    Conv2dParams<T> expand_h;  // 1x1, C/r -> C
    Conv2dParams<T> expand_w;  // 1x1, C/r -> C
    std::size_t reduction = 8;

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        reduce.collect_refs(prefix + ".reduce", out);
        expand_h.collect_refs(prefix + ".expand_h", out);
        expand_w.collect_refs(prefix + ".expand_w", out);
    }
};

template <typename T> using CaGrads = CaParams<T>;

template <typename T>
CaParams<T> zeros_like(const CaParams<T>& p) {
    CaParams<T> g;
    g.reduce = zeros_like(p.reduce);
    g.expand_h = zeros_like(p.expand_h);
    g.expand_w = zeros_like(p.expand_w);
    g.reduction = p.reduction;
    return g;
}

template <typename T>
CaParams<T> ca_init(Rng& rng, std::size_t channels, std::size_t reduction) {
    require(reduction >= 1 && channels % reduction == 0,
            "ca_init: channels must be divisible by reduction");
    CaParams<T> p;
    p.reduce = conv2d_init<T>(rng, channels / reduction, channels, 1, 1, 0);
    p.expand_h = conv2d_init<T>(rng, channels, channels / reduction, 1, 1, 0);
    p.expand_w = conv2d_init<T>(rng, channels, channels / reduction, 1, 1, 0);
    p.reduction = reduction;
    return p;
}

namespace detail {

template <typename T>
struct CaTrace {
    Tensor<T> concat_stats;  // [N,C,1,H+W], height stats first
    Tensor<T> reduce_pre;    // pre-silu
    Tensor<T> reduced;       // silu output
    Tensor<T> gate_h_pre;    // [N,C,1,H], pre hard_sigmoid
    Tensor<T> gate_w_pre;    // [N,C,1,W]
    Tensor<T> gate_h;        // [N,C,H,1]
    Tensor<T> gate_w;        // [N,C,1,W]
};

template <typename T>
CaTrace<T> ca_run(const Tensor<T>& x, const CaParams<T>& p) {
    require(x.rank() == 4, "ca_forward: input must be [N,C,H,W]");
    const std::size_t n_b = x.extent(0), channels = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);
    require(channels == p.reduce.in_channels(),
            "ca_forward: channel count does not match params");
    require(p.reduction >= 1 && channels % p.reduction == 0,
            "ca_forward: channels not divisible by reduction ratio");

    CaTrace<T> tr;
    const Tensor<T> h_stats = reshape(global_avg_pool_w(x), {n_b, channels, 1, height});
    const Tensor<T> w_stats = global_avg_pool_h(x);
    tr.concat_stats = concat({h_stats, w_stats}, 3);
    tr.reduce_pre = conv2d(tr.concat_stats, p.reduce);
    tr.reduced = silu(tr.reduce_pre);
    tr.gate_h_pre = conv2d(slice_last(tr.reduced, 0, height), p.expand_h);
    tr.gate_w_pre = conv2d(slice_last(tr.reduced, height, width), p.expand_w);
    tr.gate_h = reshape(hard_sigmoid(tr.gate_h_pre), {n_b, channels, height, 1});
    tr.gate_w = hard_sigmoid(tr.gate_w_pre);
    return tr;
}

}  // namespace detail

template <typename T>
Tensor<T> ca_forward(const Tensor<T>& x, const CaParams<T>& p) {
    const detail::CaTrace<T> tr = detail::ca_run(x, p);
    // The one sanctioned broadcast: gate_h along W, gate_w along H.
    Tensor<T> y = zeros_like(x);
    for (std::size_t n = 0; n < x.extent(0); ++n)
        for (std::size_t c = 0; c < x.extent(1); ++c)
            for (std::size_t h = 0; h < x.extent(2); ++h)
                for (std::size_t w = 0; w < x.extent(3); ++w)
                    y.at(n, c, h, w) =
                        x.at(n, c, h, w) * tr.gate_h.at(n, c, h, 0) * tr.gate_w.at(n, c, 0, w);
    return y;
}

template <typename T>
struct CaBackward {
    Tensor<T> gx;
    CaGrads<T> gp;
};

template <typename T>
CaBackward<T> ca_backward(const Tensor<T>& x, const CaParams<T>& p,
                          const Tensor<T>& gy) {
    require(x.same_shape(gy), "ca_backward: shape mismatch");
    const detail::CaTrace<T> tr = detail::ca_run(x, p);
    const std::size_t n_b = x.extent(0), channels = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);

    CaBackward<T> r;
    r.gx = zeros_like(x);
    Tensor<T> g_gate_h = zeros<T>({n_b, channels, height, 1});
    Tensor<T> g_gate_w = zeros<T>({n_b, channels, 1, width});
    for (std::size_t n = 0; n < n_b; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t h = 0; h < height; ++h)
                for (std::size_t w = 0; w < width; ++w) {
                    const T g = gy.at(n, c, h, w);
                    const T ah = tr.gate_h.at(n, c, h, 0);
                    const T aw = tr.gate_w.at(n, c, 0, w);
                    r.gx.at(n, c, h, w) = g * ah * aw;
                    g_gate_h.at(n, c, h, 0) += g * x.at(n, c, h, w) * aw;
                    g_gate_w.at(n, c, 0, w) += g * x.at(n, c, h, w) * ah;
                }

    const Tensor<T> g_h_pre = hard_sigmoid_backward(
        tr.gate_h_pre, reshape(g_gate_h, {n_b, channels, 1, height}));
    const Tensor<T> g_w_pre = hard_sigmoid_backward(tr.gate_w_pre, g_gate_w);
    auto eh_bw = conv2d_backward(slice_last(tr.reduced, 0, height), p.expand_h, g_h_pre);
    auto ew_bw = conv2d_backward(slice_last(tr.reduced, height, width), p.expand_w, g_w_pre);
    r.gp.expand_h = std::move(eh_bw.gp);
    r.gp.expand_w = std::move(ew_bw.gp);

    const Tensor<T> g_reduced = concat({eh_bw.gx, ew_bw.gx}, 3);
    const Tensor<T> g_reduce_pre = silu_backward(tr.reduce_pre, g_reduced);
    auto red_bw = conv2d_backward(tr.concat_stats, p.reduce, g_reduce_pre);
    r.gp.reduce = std::move(red_bw.gp);
    r.gp.reduction = p.reduction;

    const Tensor<T> g_h_stats =
        reshape(slice_last(red_bw.gx, 0, height), {n_b, channels, height, 1});
    const Tensor<T> g_w_stats = slice_last(red_bw.gx, height, width);
    r.gx = add(r.gx, global_avg_pool_w_backward(x, g_h_stats));
    r.gx = add(r.gx, global_avg_pool_h_backward(x, g_w_stats));
    return r;
}

// ---------------------------------------------------------------------------
// HAM
// ---------------------------------------------------------------------------

template <typename T>
struct HamParams {
    Conv2dParams<T> dwconv;  // depthwise 3x3
    LayerNormParams<T> ln1;
    LayerNormParams<T> ln2;
    EmsaParams<T> emsa;
    CaParams<T> ca;
    MlpParams<T> mlp;
    bool use_emsa = true;
    bool use_ca = true;

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        dwconv.collect_refs(prefix + ".dwconv", out);
        ln1.collect_refs(prefix + ".ln1", out);
        ln2.collect_refs(prefix + ".ln2", out);
        if (use_emsa) emsa.collect_refs(prefix + ".emsa", out);
        if (use_ca) ca.collect_refs(prefix + ".ca", out);
        mlp.collect_refs(prefix + ".mlp", out);
    }
};

template <typename T> using HamGrads = HamParams<T>;

template <typename T>
HamParams<T> zeros_like(const HamParams<T>& p) {
    HamParams<T> g;
    g.dwconv = zeros_like(p.dwconv);
    g.ln1 = zeros_like(p.ln1);
    g.ln2 = zeros_like(p.ln2);
    if (p.use_emsa) g.emsa = zeros_like(p.emsa);
    if (p.use_ca) g.ca = zeros_like(p.ca);
    g.mlp = zeros_like(p.mlp);
    g.use_emsa = p.use_emsa;
    g.use_ca = p.use_ca;
    return g;
}

template <typename T>
HamParams<T> ham_init(Rng& rng, std::size_t channels, std::size_t heads,
                      std::size_t reduction, double hidden_ratio,
                      std::size_t token_count, bool use_emsa = true,
                      bool use_ca = true) {
    require(use_emsa || use_ca, "ham_init: at least one attention branch required");
    HamParams<T> p;
    p.dwconv = dwconv3x3_init<T>(rng, channels);
    p.ln1 = layer_norm_init<T>(channels);
    p.ln2 = layer_norm_init<T>(channels);
    if (use_emsa) p.emsa = emsa_init<T>(rng, channels, heads, token_count);
    if (use_ca) p.ca = ca_init<T>(rng, channels, reduction);
    p.mlp = mlp_init<T>(rng, channels, hidden_ratio);
    p.use_emsa = use_emsa;
    p.use_ca = use_ca;
    return p;
}

namespace detail {

template <typename T>
void validate_ham(const Tensor<T>& x, const HamParams<T>& p) {
    require(x.rank() == 4, "ham_forward: input must be [N,C,H,W]");
    require(p.use_emsa || p.use_ca,
            "ham_forward: both attention branches disabled");
    const std::size_t channels = x.extent(1);
    require(p.dwconv.out_channels() == channels &&
                p.ln1.gamma.extent(0) == channels &&
                p.ln2.gamma.extent(0) == channels &&
                p.mlp.expand.in_features() == channels &&
                (!p.use_emsa || p.emsa.channels() == channels) &&
                (!p.use_ca || p.ca.reduce.in_channels() == channels),
            "ham_forward: sub-bundles disagree on channel count");
}

// MLP over the channel vector at each spatial site.
template <typename T>
Tensor<T> mlp_sitewise(const Tensor<T>& x, const MlpParams<T>& p) {
    return permute(mlp_forward(permute(x, {0, 2, 3, 1}), p), {0, 3, 1, 2});
}

}  // namespace detail

namespace detail {

// X3 = CA(X2) + EMSA(X2) + X1, summed left to right so the float rounding of
// the composition is reproducible from the branch outputs alone.
template <typename T>
Tensor<T> ham_mix(const Tensor<T>& x1, const Tensor<T>& x2, const HamParams<T>& p) {
    Tensor<T> branches;
    if (p.use_ca && p.use_emsa)
        branches = add(ca_forward(x2, p.ca), emsa_forward(x2, p.emsa));
    else if (p.use_ca)
        branches = ca_forward(x2, p.ca);
    else
        branches = emsa_forward(x2, p.emsa);
    return add(branches, x1);
}

}  // namespace detail

template <typename T>
Tensor<T> ham_forward(const Tensor<T>& x, const HamParams<T>& p) {
    detail::validate_ham(x, p);
    const Tensor<T> x1 = add(x, dwconv3x3(x, p.dwconv));
    const Tensor<T> x2 = layer_norm_channels(x1, p.ln1);
    const Tensor<T> x3 = detail::ham_mix(x1, x2, p);
    const Tensor<T> normed = layer_norm_channels(x3, p.ln2);
    return add(detail::mlp_sitewise(normed, p.mlp), x3);
}

template <typename T>
struct HamBackward {
    Tensor<T> gx;
    HamGrads<T> gp;
};

template <typename T>
HamBackward<T> ham_backward(const Tensor<T>& x, const HamParams<T>& p,
                            const Tensor<T>& gy) {
    detail::validate_ham(x, p);
    require(x.same_shape(gy), "ham_backward: shape mismatch");

    // Recompute the forward intermediates.
    const Tensor<T> x1 = add(x, dwconv3x3(x, p.dwconv));
    const Tensor<T> x2 = layer_norm_channels(x1, p.ln1);
    const Tensor<T> x3 = detail::ham_mix(x1, x2, p);
    const Tensor<T> normed = layer_norm_channels(x3, p.ln2);

    HamBackward<T> r;
    r.gp = zeros_like(p);

    // Y = mlp(LN2(X3)) + X3
    const Tensor<T> normed_sites = permute(normed, {0, 2, 3, 1});
    const Tensor<T> gy_sites = permute(gy, {0, 2, 3, 1});
    auto mlp_bw = mlp_backward(normed_sites, p.mlp, gy_sites);
    r.gp.mlp = std::move(mlp_bw.gp);
    const Tensor<T> g_normed = permute(mlp_bw.gx, {0, 3, 1, 2});
    auto ln2_bw = layer_norm_channels_backward(x3, p.ln2, g_normed);
    r.gp.ln2 = std::move(ln2_bw.gp);
    const Tensor<T> g_x3 = add(gy, ln2_bw.gx);

    // X3 = CA(X2) + EMSA(X2) + X1
    Tensor<T> g_x2 = zeros_like(x2);
    if (p.use_ca) {
        auto ca_bw = ca_backward(x2, p.ca, g_x3);
        r.gp.ca = std::move(ca_bw.gp);
        g_x2 = add(g_x2, ca_bw.gx);
    }
    if (p.use_emsa) {
        auto emsa_bw = emsa_backward(x2, p.emsa, g_x3);
        r.gp.emsa = std::move(emsa_bw.gp);
        g_x2 = add(g_x2, emsa_bw.gx);
    }
    Tensor<T> g_x1 = g_x3;

    // X2 = LN1(X1)
    auto ln1_bw = layer_norm_channels_backward(x1, p.ln1, g_x2);
    r.gp.ln1 = std::move(ln1_bw.gp);
    g_x1 = add(g_x1, ln1_bw.gx);

    // X1 = X + DWConv(X)
    auto dw_bw = conv2d_backward(x, p.dwconv, g_x1);
    r.gp.dwconv = std::move(dw_bw.gp);
    r.gx = add(g_x1, dw_bw.gx);
    return r;
}

}  // namespace hafpn
