#pragma once

// Three-level feature pyramids. A small strided conv backbone produces
// {p3, p4, p5} at strides 2/4/8 with a unified channel width, and three neck
// variants fuse them:
//
//   fpn:    o5 = p5;  o4 = fuse4(p4 (+) up2(o5));  o3 = fuse3(p3 (+) up2(o4))
//   pafpn:  fpn, then n3 = o3;  n4 = bu_fuse4(o4 (+) down4(n3));
//           n5 = bu_fuse5(o5 (+) down5(n4))
//   hafpn:  fpn dataflow with a hybrid attention block per level: o5 = ham5(p5)
//           and, at levels 4/3, HAM either on the merged map before the fusion
//           conv (post_merge, default) or on the lateral input (pre_merge).
//
// (+) is elementwise addition by default; concat-along-channels is available
// as a knob, in which case the fusion convs take 2C inputs. Parameter bundles
// are drawn in a fixed order (fuse convs before HAM / bottom-up extras) so the
// shared structure of two variants initialised from the same seed is
// bitwise-identical.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hafpn/attention.hpp"
#include "hafpn/layers.hpp"
#include "hafpn/tensor.hpp"

namespace hafpn {

enum class NeckVariant { fpn, pafpn, hafpn };
enum class MergeMode { add, concat };
enum class HamPlacement { pre_merge, post_merge };

inline std::string to_string(NeckVariant v) {
    switch (v) {
        case NeckVariant::fpn: return "fpn";
        case NeckVariant::pafpn: return "pafpn";
        case NeckVariant::hafpn: return "hafpn";
    }
    throw std::invalid_argument("to_string: bad neck variant");
}

inline std::string to_string(MergeMode m) {
    return m == MergeMode::add ? "add" : "concat";
}

inline std::string to_string(HamPlacement p) {
    return p == HamPlacement::pre_merge ? "pre_merge" : "post_merge";
}

struct NeckConfig {
    NeckVariant variant = NeckVariant::hafpn;
    MergeMode merge = MergeMode::add;
    HamPlacement placement = HamPlacement::post_merge;
    bool use_emsa = true;
    bool use_ca = true;
    bool ham_identity = false;  // swap every HAM for the identity map
    bool bottom_up = false;     // hafpn only: append the pafpn-style second pass

    // The downward pass runs for pafpn always and for hafpn on request; the
    // latter is how attention-over-pafpn ablation rows are spelled.
    bool has_bottom_up() const {
        return variant == NeckVariant::pafpn ||
               (variant == NeckVariant::hafpn && bottom_up);
    }
};

template <typename T>
struct FeatureLevels {
    Tensor<T> p3;  // [N,C,H,W]
    Tensor<T> p4;  // [N,C,H/2,W/2]
    Tensor<T> p5;  // [N,C,H/4,W/4]
};

template <typename T>
void validate_levels(const FeatureLevels<T>& f) {
    require(f.p3.rank() == 4 && f.p4.rank() == 4 && f.p5.rank() == 4,
            "feature levels must be rank-4");
    for (std::size_t axis = 0; axis < 2; ++axis)
        require(f.p3.extent(axis) == f.p4.extent(axis) &&
                    f.p4.extent(axis) == f.p5.extent(axis),
                "feature levels disagree on batch/channel extents");
    for (std::size_t axis = 2; axis < 4; ++axis)
        require(f.p3.extent(axis) == 2 * f.p4.extent(axis) &&
                    f.p4.extent(axis) == 2 * f.p5.extent(axis),
                "feature level extents must halve exactly level to level");
    require(f.p5.extent(2) >= 1 && f.p5.extent(3) >= 1,
            "feature levels must be non-empty");
}

template <typename T>
FeatureLevels<T> zeros_like(const FeatureLevels<T>& f) {
    return {zeros_like(f.p3), zeros_like(f.p4), zeros_like(f.p5)};
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

template <typename T>
struct BackboneParams {
    Conv2dParams<T> stage1;  // 3  -> B,  stride 2
    Conv2dParams<T> stage2;  // B  -> 2B, stride 2
    Conv2dParams<T> stage3;  // 2B -> 4B, stride 2
    Conv2dParams<T> lat3;    // 1x1, B  -> C
    Conv2dParams<T> lat4;    // 1x1, 2B -> C
    Conv2dParams<T> lat5;    // 1x1, 4B -> C

    std::size_t out_channels() const { return lat3.out_channels(); }

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        stage1.collect_refs(prefix + ".stage1", out);
        stage2.collect_refs(prefix + ".stage2", out);
        stage3.collect_refs(prefix + ".stage3", out);
        lat3.collect_refs(prefix + ".lat3", out);
        lat4.collect_refs(prefix + ".lat4", out);
        lat5.collect_refs(prefix + ".lat5", out);
    }
};

template <typename T> using BackboneGrads = BackboneParams<T>;

template <typename T>
BackboneParams<T> zeros_like(const BackboneParams<T>& p) {
    BackboneParams<T> g;
    g.stage1 = zeros_like(p.stage1);
    g.stage2 = zeros_like(p.stage2);
    g.stage3 = zeros_like(p.stage3);
    g.lat3 = zeros_like(p.lat3);
    g.lat4 = zeros_like(p.lat4);
    g.lat5 = zeros_like(p.lat5);
    return g;
}

template <typename T>
BackboneParams<T> backbone_init(Rng& rng, std::size_t base_channels,
                                std::size_t out_channels) {
    require(base_channels >= 1 && out_channels >= 1,
            "backbone_init: channel counts must be positive");
    BackboneParams<T> p;
    p.stage1 = conv2d_init<T>(rng, base_channels, 3, 3, 2, 1);
    p.stage2 = conv2d_init<T>(rng, 2 * base_channels, base_channels, 3, 2, 1);
    p.stage3 = conv2d_init<T>(rng, 4 * base_channels, 2 * base_channels, 3, 2, 1);
    p.lat3 = conv2d_init<T>(rng, out_channels, base_channels, 1, 1, 0);
    p.lat4 = conv2d_init<T>(rng, out_channels, 2 * base_channels, 1, 1, 0);
    p.lat5 = conv2d_init<T>(rng, out_channels, 4 * base_channels, 1, 1, 0);
    return p;
}

namespace detail {

template <typename T>
struct BackboneTrace {
    Tensor<T> s1_pre, s1, s2_pre, s2, s3_pre, s3;
    FeatureLevels<T> out;
};

template <typename T>
BackboneTrace<T> backbone_run(const Tensor<T>& image, const BackboneParams<T>& p) {
    require(image.rank() == 4 && image.extent(1) == 3,
            "toy_backbone: input must be [N,3,H,W]");
    require(image.extent(2) % 8 == 0 && image.extent(3) % 8 == 0,
            "toy_backbone: spatial extents must be divisible by 8");
    BackboneTrace<T> tr;
    tr.s1_pre = conv2d(image, p.stage1);
    tr.s1 = silu(tr.s1_pre);
    tr.s2_pre = conv2d(tr.s1, p.stage2);
    tr.s2 = silu(tr.s2_pre);
    tr.s3_pre = conv2d(tr.s2, p.stage3);
    tr.s3 = silu(tr.s3_pre);
    tr.out.p3 = conv2d(tr.s1, p.lat3);
    tr.out.p4 = conv2d(tr.s2, p.lat4);
    tr.out.p5 = conv2d(tr.s3, p.lat5);
    return tr;
}

}  // namespace detail

template <typename T>
FeatureLevels<T> toy_backbone(const Tensor<T>& image, const BackboneParams<T>& p) {
    return detail::backbone_run(image, p).out;
}

template <typename T>
struct BackboneBackward {
    Tensor<T> gx;
    BackboneGrads<T> gp;
};

template <typename T>
BackboneBackward<T> toy_backbone_backward(const Tensor<T>& image,
                                          const BackboneParams<T>& p,
                                          const FeatureLevels<T>& gout) {
    const detail::BackboneTrace<T> tr = detail::backbone_run(image, p);
    BackboneBackward<T> r;

    auto l3_bw = conv2d_backward(tr.s1, p.lat3, gout.p3);
    auto l4_bw = conv2d_backward(tr.s2, p.lat4, gout.p4);
    auto l5_bw = conv2d_backward(tr.s3, p.lat5, gout.p5);
    r.gp.lat3 = std::move(l3_bw.gp);
    r.gp.lat4 = std::move(l4_bw.gp);
    r.gp.lat5 = std::move(l5_bw.gp);

    auto s3_bw = conv2d_backward(tr.s2, p.stage3, silu_backward(tr.s3_pre, l5_bw.gx));
    r.gp.stage3 = std::move(s3_bw.gp);
    const Tensor<T> g_s2 = add(l4_bw.gx, s3_bw.gx);
    auto s2_bw = conv2d_backward(tr.s1, p.stage2, silu_backward(tr.s2_pre, g_s2));
    r.gp.stage2 = std::move(s2_bw.gp);
    const Tensor<T> g_s1 = add(l3_bw.gx, s2_bw.gx);
    auto s1_bw = conv2d_backward(image, p.stage1, silu_backward(tr.s1_pre, g_s1));
    r.gp.stage1 = std::move(s1_bw.gp);
    r.gx = std::move(s1_bw.gx);
    return r;
}

// ---------------------------------------------------------------------------
// Neck parameters
// ---------------------------------------------------------------------------

template <typename T>
struct NeckParams {
    NeckConfig cfg;
    Conv2dParams<T> fuse4, fuse3;            // 3x3, top-down smoothing
    HamParams<T> ham5, ham4, ham3;           // hafpn only
    Conv2dParams<T> down4, down5;            // 3x3 stride 2 (downward pass)
    Conv2dParams<T> bu_fuse4, bu_fuse5;      // 3x3 bottom-up smoothing

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        fuse4.collect_refs(prefix + ".fuse4", out);
        fuse3.collect_refs(prefix + ".fuse3", out);
        if (cfg.variant == NeckVariant::hafpn && !cfg.ham_identity) {
            ham5.collect_refs(prefix + ".ham5", out);
            ham4.collect_refs(prefix + ".ham4", out);
            ham3.collect_refs(prefix + ".ham3", out);
        }
        if (cfg.has_bottom_up()) {
            down4.collect_refs(prefix + ".down4", out);
            bu_fuse4.collect_refs(prefix + ".bu_fuse4", out);
            down5.collect_refs(prefix + ".down5", out);
            bu_fuse5.collect_refs(prefix + ".bu_fuse5", out);
        }
    }
};

template <typename T> using NeckGrads = NeckParams<T>;

template <typename T>
NeckParams<T> zeros_like(const NeckParams<T>& p) {
    NeckParams<T> g;
    g.cfg = p.cfg;
    g.fuse4 = zeros_like(p.fuse4);
    g.fuse3 = zeros_like(p.fuse3);
    if (p.cfg.variant == NeckVariant::hafpn && !p.cfg.ham_identity) {
        g.ham5 = zeros_like(p.ham5);
        g.ham4 = zeros_like(p.ham4);
        g.ham3 = zeros_like(p.ham3);
    }
    if (p.cfg.has_bottom_up()) {
        g.down4 = zeros_like(p.down4);
        g.bu_fuse4 = zeros_like(p.bu_fuse4);
        g.down5 = zeros_like(p.down5);
        g.bu_fuse5 = zeros_like(p.bu_fuse5);
    }
    return g;
}

// p3_h/p3_w size the per-level EMSA token counts. Draw order is fixed:
// fuse4, fuse3, then (hafpn) ham5/ham4/ham3, then bottom-up convs if the
// downward pass is on.
template <typename T>
NeckParams<T> neck_init(Rng& rng, const NeckConfig& cfg, std::size_t channels,
                        std::size_t heads, std::size_t reduction,
                        double hidden_ratio, std::size_t p3_h, std::size_t p3_w) {
    require(p3_h % 4 == 0 && p3_w % 4 == 0,
            "neck_init: p3 extents must be divisible by 4");
    if (cfg.variant == NeckVariant::hafpn)
        require(cfg.use_emsa || cfg.use_ca,
                "neck_init: hafpn needs at least one of emsa/ca enabled");
    require(!cfg.bottom_up || cfg.variant == NeckVariant::hafpn,
            "neck_init: bottom_up is a hafpn knob (pafpn already has the pass)");

    const std::size_t merged_c =
        cfg.merge == MergeMode::concat ? 2 * channels : channels;
    NeckParams<T> p;
    p.cfg = cfg;
    p.fuse4 = conv2d_init<T>(rng, channels, merged_c, 3, 1, 1);
    p.fuse3 = conv2d_init<T>(rng, channels, merged_c, 3, 1, 1);
    if (cfg.variant == NeckVariant::hafpn) {
        // Level 5 has no merge, so its HAM always sees the raw C-channel map;
        // post_merge HAMs at 4/3 see the merged width instead.
        const bool on_merged = cfg.placement == HamPlacement::post_merge;
        const std::size_t c43 = on_merged ? merged_c : channels;
        p.ham5 = ham_init<T>(rng, channels, heads, reduction, hidden_ratio,
                             (p3_h / 4) * (p3_w / 4), cfg.use_emsa, cfg.use_ca);
        p.ham4 = ham_init<T>(rng, c43, heads, reduction, hidden_ratio,
                             (p3_h / 2) * (p3_w / 2), cfg.use_emsa, cfg.use_ca);
        p.ham3 = ham_init<T>(rng, c43, heads, reduction, hidden_ratio,
                             p3_h * p3_w, cfg.use_emsa, cfg.use_ca);
    }
    if (cfg.has_bottom_up()) {
        p.down4 = conv2d_init<T>(rng, channels, channels, 3, 2, 1);
        p.bu_fuse4 = conv2d_init<T>(rng, channels, merged_c, 3, 1, 1);
        p.down5 = conv2d_init<T>(rng, channels, channels, 3, 2, 1);
        p.bu_fuse5 = conv2d_init<T>(rng, channels, merged_c, 3, 1, 1);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t start, std::size_t count) {
    return permute(slice_last(permute(x, {0, 2, 3, 1}), start, count), {0, 3, 1, 2});
}

template <typename T>
Tensor<T> merge_maps(const Tensor<T>& lateral, const Tensor<T>& top, MergeMode m) {
    require(lateral.extent(2) == top.extent(2) && lateral.extent(3) == top.extent(3),
            "merge: spatial extents disagree");
    if (m == MergeMode::add) return add(lateral, top);
    return concat({lateral, top}, 1);
}

// Splits the merged-map gradient back into (lateral, top) parts.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> merge_backward(const Tensor<T>& g, MergeMode m,
                                               std::size_t lateral_channels) {
    if (m == MergeMode::add) return {g, g};
    return {slice_channels(g, 0, lateral_channels),
            slice_channels(g, lateral_channels, g.extent(1) - lateral_channels)};
}

template <typename T>
struct TopDownTrace {
    Tensor<T> o5;        // ham5 output (or p5)
    Tensor<T> lat4, lat3;  // lateral inputs after optional pre_merge HAM
    Tensor<T> m4, m3;    // merged maps
    Tensor<T> t4, t3;    // fusion-conv inputs (post_merge HAM applied)
    FeatureLevels<T> out;
};

template <typename T>
TopDownTrace<T> topdown_run(const FeatureLevels<T>& in, const NeckParams<T>& p) {
    validate_levels(in);
    const NeckConfig& cfg = p.cfg;
    if (cfg.variant == NeckVariant::hafpn)
        require(cfg.use_emsa || cfg.use_ca,
                "hafpn_fuse: at least one of emsa/ca must be enabled");
    const bool ham_on = cfg.variant == NeckVariant::hafpn && !cfg.ham_identity;
    const bool pre = cfg.placement == HamPlacement::pre_merge;

    TopDownTrace<T> tr;
    tr.o5 = ham_on ? ham_forward(in.p5, p.ham5) : in.p5;
    tr.lat4 = (ham_on && pre) ? ham_forward(in.p4, p.ham4) : in.p4;
    tr.m4 = merge_maps(tr.lat4, upsample_nearest_2x(tr.o5), cfg.merge);
    tr.t4 = (ham_on && !pre) ? ham_forward(tr.m4, p.ham4) : tr.m4;
    const Tensor<T> o4 = conv2d(tr.t4, p.fuse4);
    tr.lat3 = (ham_on && pre) ? ham_forward(in.p3, p.ham3) : in.p3;
    tr.m3 = merge_maps(tr.lat3, upsample_nearest_2x(o4), cfg.merge);
    tr.t3 = (ham_on && !pre) ? ham_forward(tr.m3, p.ham3) : tr.m3;
    tr.out.p3 = conv2d(tr.t3, p.fuse3);
    tr.out.p4 = o4;
    tr.out.p5 = tr.o5;
    return tr;
}

template <typename T>
struct TopDownBackward {
    FeatureLevels<T> glevels;
    NeckGrads<T> gp;
};

template <typename T>
TopDownBackward<T> topdown_backward(const FeatureLevels<T>& in,
                                    const NeckParams<T>& p,
                                    const FeatureLevels<T>& gout) {
    const TopDownTrace<T> tr = topdown_run(in, p);
    const NeckConfig& cfg = p.cfg;
    const bool ham_on = cfg.variant == NeckVariant::hafpn && !cfg.ham_identity;
    const bool pre = cfg.placement == HamPlacement::pre_merge;
    const std::size_t channels = in.p3.extent(1);

    TopDownBackward<T> r;
    r.gp = zeros_like(p);

    // Level 3.
    auto f3_bw = conv2d_backward(tr.t3, p.fuse3, gout.p3);
    r.gp.fuse3 = std::move(f3_bw.gp);
    Tensor<T> g_m3 = std::move(f3_bw.gx);
    if (ham_on && !pre) {
        auto h3_bw = ham_backward(tr.m3, p.ham3, g_m3);
        r.gp.ham3 = std::move(h3_bw.gp);
        g_m3 = std::move(h3_bw.gx);
    }
    auto [g_lat3, g_up3] = merge_backward(g_m3, cfg.merge, channels);
    if (ham_on && pre) {
        auto h3_bw = ham_backward(in.p3, p.ham3, g_lat3);
        r.gp.ham3 = std::move(h3_bw.gp);
        r.glevels.p3 = std::move(h3_bw.gx);
    } else {
        r.glevels.p3 = std::move(g_lat3);
    }
    const Tensor<T> g_o4 =
        add(gout.p4, upsample_nearest_2x_backward(tr.out.p4, g_up3));

    // Level 4.
    auto f4_bw = conv2d_backward(tr.t4, p.fuse4, g_o4);
    r.gp.fuse4 = std::move(f4_bw.gp);
    Tensor<T> g_m4 = std::move(f4_bw.gx);
    if (ham_on && !pre) {
        auto h4_bw = ham_backward(tr.m4, p.ham4, g_m4);
        r.gp.ham4 = std::move(h4_bw.gp);
        g_m4 = std::move(h4_bw.gx);
    }
    auto [g_lat4, g_up4] = merge_backward(g_m4, cfg.merge, channels);
    if (ham_on && pre) {
        auto h4_bw = ham_backward(in.p4, p.ham4, g_lat4);
        r.gp.ham4 = std::move(h4_bw.gp);
        r.glevels.p4 = std::move(h4_bw.gx);
    } else {
        r.glevels.p4 = std::move(g_lat4);
    }
    const Tensor<T> g_o5 =
        add(gout.p5, upsample_nearest_2x_backward(tr.o5, g_up4));

    // Level 5.
    if (ham_on) {
        auto h5_bw = ham_backward(in.p5, p.ham5, g_o5);
        r.gp.ham5 = std::move(h5_bw.gp);
        r.glevels.p5 = std::move(h5_bw.gx);
    } else {
        r.glevels.p5 = g_o5;
    }
    return r;
}

template <typename T>
struct BottomUpTrace {
    FeatureLevels<T> td;   // fpn outputs (o3, o4, o5)
    Tensor<T> d4, m4, d5, m5;
    FeatureLevels<T> out;  // (n3, n4, n5)
};

template <typename T>
BottomUpTrace<T> bottomup_run(const FeatureLevels<T>& in, const NeckParams<T>& p) {
    BottomUpTrace<T> tr;
    tr.td = topdown_run(in, p).out;
    tr.out.p3 = tr.td.p3;
    tr.d4 = conv2d(tr.out.p3, p.down4);
    tr.m4 = merge_maps(tr.td.p4, tr.d4, p.cfg.merge);
    tr.out.p4 = conv2d(tr.m4, p.bu_fuse4);
    tr.d5 = conv2d(tr.out.p4, p.down5);
    tr.m5 = merge_maps(tr.td.p5, tr.d5, p.cfg.merge);
    tr.out.p5 = conv2d(tr.m5, p.bu_fuse5);
    return tr;
}

}  // namespace detail

template <typename T>
FeatureLevels<T> fpn_fuse(const FeatureLevels<T>& levels, const NeckParams<T>& p) {
    require(p.cfg.variant == NeckVariant::fpn, "fpn_fuse: params built for another variant");
    return detail::topdown_run(levels, p).out;
}

template <typename T>
FeatureLevels<T> hafpn_fuse(const FeatureLevels<T>& levels, const NeckParams<T>& p) {
    require(p.cfg.variant == NeckVariant::hafpn,
            "hafpn_fuse: params built for another variant");
    if (p.cfg.bottom_up) return detail::bottomup_run(levels, p).out;
    return detail::topdown_run(levels, p).out;
}

template <typename T>
FeatureLevels<T> pafpn_fuse(const FeatureLevels<T>& levels, const NeckParams<T>& p) {
    require(p.cfg.variant == NeckVariant::pafpn,
            "pafpn_fuse: params built for another variant");
    return detail::bottomup_run(levels, p).out;
}

template <typename T>
FeatureLevels<T> neck_forward(const FeatureLevels<T>& levels, const NeckParams<T>& p) {
    switch (p.cfg.variant) {
        case NeckVariant::fpn: return fpn_fuse(levels, p);
        case NeckVariant::pafpn: return pafpn_fuse(levels, p);
        case NeckVariant::hafpn: return hafpn_fuse(levels, p);
    }
    throw std::invalid_argument("neck_forward: bad variant");
}

template <typename T>
struct NeckBackward {
    FeatureLevels<T> glevels;
    NeckGrads<T> gp;
};

template <typename T>
NeckBackward<T> neck_backward(const FeatureLevels<T>& levels, const NeckParams<T>& p,
                              const FeatureLevels<T>& gout) {
    if (!p.cfg.has_bottom_up()) {
        auto td = detail::topdown_backward(levels, p, gout);
        return {std::move(td.glevels), std::move(td.gp)};
    }

    const detail::BottomUpTrace<T> tr = detail::bottomup_run(levels, p);
    const std::size_t channels = levels.p3.extent(1);
    NeckBackward<T> r;
    r.gp = zeros_like(p);

    auto bu5_bw = conv2d_backward(tr.m5, p.bu_fuse5, gout.p5);
    r.gp.bu_fuse5 = std::move(bu5_bw.gp);
    auto [g_o5, g_d5] = detail::merge_backward(bu5_bw.gx, p.cfg.merge, channels);
    auto d5_bw = conv2d_backward(tr.out.p4, p.down5, g_d5);
    r.gp.down5 = std::move(d5_bw.gp);
    const Tensor<T> g_n4 = add(gout.p4, d5_bw.gx);

    auto bu4_bw = conv2d_backward(tr.m4, p.bu_fuse4, g_n4);
    r.gp.bu_fuse4 = std::move(bu4_bw.gp);
    auto [g_o4, g_d4] = detail::merge_backward(bu4_bw.gx, p.cfg.merge, channels);
    auto d4_bw = conv2d_backward(tr.out.p3, p.down4, g_d4);
    r.gp.down4 = std::move(d4_bw.gp);
    const Tensor<T> g_o3 = add(gout.p3, d4_bw.gx);

    auto td_bw = detail::topdown_backward(levels, p, {g_o3, g_o4, g_o5});
    r.glevels = std::move(td_bw.glevels);
    r.gp.fuse4 = std::move(td_bw.gp.fuse4);
    r.gp.fuse3 = std::move(td_bw.gp.fuse3);
    r.gp.ham5 = std::move(td_bw.gp.ham5);
    r.gp.ham4 = std::move(td_bw.gp.ham4);
    r.gp.ham3 = std::move(td_bw.gp.ham3);
    return r;
}

// ---------------------------------------------------------------------------
// Backbone + neck in one piece (the shape the CLI and gradcheck drive)
// ---------------------------------------------------------------------------

template <typename T>
struct PipelineParams {
    BackboneParams<T> backbone;
    NeckParams<T> neck;

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        backbone.collect_refs(prefix + ".backbone", out);
        neck.collect_refs(prefix + ".neck", out);
    }
};

template <typename T> using PipelineGrads = PipelineParams<T>;

template <typename T>
PipelineParams<T> zeros_like(const PipelineParams<T>& p) {
    return {zeros_like(p.backbone), zeros_like(p.neck)};
}

// Backbone params are drawn before neck params from one stream.
template <typename T>
PipelineParams<T> pipeline_init(Rng& rng, const NeckConfig& cfg,
                                std::size_t base_channels, std::size_t channels,
                                std::size_t heads, std::size_t reduction,
                                double hidden_ratio, std::size_t image_h,
                                std::size_t image_w) {
    require(image_h % 8 == 0 && image_w % 8 == 0,
            "pipeline_init: image extents must be divisible by 8");
    PipelineParams<T> p;
    p.backbone = backbone_init<T>(rng, base_channels, channels);
    p.neck = neck_init<T>(rng, cfg, channels, heads, reduction, hidden_ratio,
                          image_h / 2, image_w / 2);
    return p;
}

template <typename T>
FeatureLevels<T> pipeline_forward(const Tensor<T>& image, const PipelineParams<T>& p) {
    return neck_forward(toy_backbone(image, p.backbone), p.neck);
}

template <typename T>
struct PipelineBackward {
    Tensor<T> gx;
    PipelineGrads<T> gp;
};

template <typename T>
PipelineBackward<T> pipeline_backward(const Tensor<T>& image,
                                      const PipelineParams<T>& p,
                                      const FeatureLevels<T>& gout) {
    const FeatureLevels<T> levels = toy_backbone(image, p.backbone);
    auto neck_bw = neck_backward(levels, p.neck, gout);
    auto bb_bw = toy_backbone_backward(image, p.backbone, neck_bw.glevels);
    return {std::move(bb_bw.gx), {std::move(bb_bw.gp), std::move(neck_bw.gp)}};
}

}  // namespace hafpn
