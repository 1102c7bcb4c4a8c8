#pragma once

// Systematic analytic-vs-numeric gradient verification. Every operation with
// a hand-written backward pass is driven through a seeded random weighted-sum
// loss and compared against central differences, coordinate by coordinate.
// Scopes: `layer` (primitive ops), `attention` (emsa/ca/ham), `neck` (full
// backbone + neck composites). Layer and attention ops must agree to 1e-5
// max scaled error; the long composite chains to 1e-4. Parameter tensors of
// the composites are spot-checked on sampled coordinates to keep the suite
// fast; inputs are always checked in full.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hafpn/attention.hpp"
#include "hafpn/layers.hpp"
#include "hafpn/pyramid.hpp"
#include "hafpn/tensor.hpp"

namespace hafpn {

enum class GradScope { layer, attention, neck };

inline GradScope parse_grad_scope(const std::string& s) {
    if (s == "layer") return GradScope::layer;
    if (s == "attention") return GradScope::attention;
    if (s == "neck") return GradScope::neck;
    throw std::invalid_argument("bad gradcheck scope (layer|attention|neck): " + s);
}

inline std::string to_string(GradScope s) {
    switch (s) {
        case GradScope::layer: return "layer";
        case GradScope::attention: return "attention";
        case GradScope::neck: return "neck";
    }
    throw std::invalid_argument("to_string: bad gradcheck scope");
}

struct GradCheckEntry {
    std::string op;
    double max_error = 0;
    double threshold = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool all_pass = true;
    double seconds = 0;
};

namespace detail {

constexpr double kFdEps = 1e-5;
constexpr std::size_t kAllCoords = static_cast<std::size_t>(-1);

inline double dot_loss(const Tensor<double>& y, const Tensor<double>& w) {
    require(y.same_shape(w), "dot_loss: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
}

inline double coord_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Central difference of `loss` w.r.t. one scalar slot, perturbed in place.
template <typename F>
double fd_slot(F&& loss, double* slot) {
    const double saved = *slot;
    *slot = saved + kFdEps;
    const double up = loss();
    *slot = saved - kFdEps;
    const double dn = loss();
    *slot = saved;
    return (up - dn) / (2 * kFdEps);
}

// One analytic tensor checked against fd over all (or sampled) coordinates.
template <typename F>
double check_tensor(F&& loss, Tensor<double>& storage,
                    const Tensor<double>& analytic, Rng& rng,
                    std::size_t sample_cap) {
    require(storage.same_shape(analytic), "check_tensor: shape mismatch");
    double worst = 0;
    if (storage.size() <= sample_cap) {
        for (std::size_t i = 0; i < storage.size(); ++i)
            worst = std::max(worst,
                             coord_err(analytic[i], fd_slot(loss, &storage[i])));
    } else {
        for (std::size_t k = 0; k < sample_cap; ++k) {
            const std::size_t i = rng.next_u64() % storage.size();
            worst = std::max(worst,
                             coord_err(analytic[i], fd_slot(loss, &storage[i])));
        }
    }
    return worst;
}

// Pairs each parameter tensor with its analytic gradient by walking both
// bundles in the same order.
template <typename P>
std::vector<std::pair<Tensor<double>*, Tensor<double>*>> grad_pairs(P& params,
                                                                    P& grads) {
    std::vector<TensorRef<double>> pr, gr;
    params.collect_refs("p", pr);
    grads.collect_refs("g", gr);
    require(pr.size() == gr.size(), "grad_pairs: bundle walk mismatch");
    std::vector<std::pair<Tensor<double>*, Tensor<double>*>> out;
    for (std::size_t i = 0; i < pr.size(); ++i)
        out.emplace_back(pr[i].tensor, gr[i].tensor);
    return out;
}

template <typename F, typename P>
double check_params(F&& loss, P& params, P& grads, Rng& rng,
                    std::size_t sample_cap) {
    double worst = 0;
    for (auto& [pt, gt] : grad_pairs(params, grads))
        worst = std::max(worst, check_tensor(loss, *pt, *gt, rng, sample_cap));
    return worst;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

inline GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    GradCheckReport rep;

    constexpr std::size_t kTrials = 20;
    constexpr std::size_t kAll = detail::kAllCoords;

    // Runs `trials` seeded cases of one op; `eval` returns the max scaled
    // error over every gradient it checks for one case.
    auto entry = [&](const std::string& name, double threshold,
                     std::size_t trials,
                     const std::function<double(Rng&)>& eval) {
        Rng rng(seed ^ (0x9e3779b97f4a7c15ull * (rep.entries.size() + 1)));
        double worst = 0;
        for (std::size_t t = 0; t < trials; ++t)
            worst = std::max(worst, eval(rng));
        const bool pass = worst < threshold;
        rep.entries.push_back({name, worst, threshold, pass});
        rep.all_pass = rep.all_pass && pass;
    };

    // A parameter-free elementwise op: loss = <op(x), w>, gy = w.
    auto unary = [&](const std::string& name, double lo, double hi,
                     auto&& fwd, auto&& bwd) {
        entry(name, 1e-5, kTrials, [lo, hi, fwd, bwd](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 4, 2}, rng, lo, hi);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(fwd(x), w); };
            return detail::check_tensor(loss, x, bwd(x, w), rng,
                                        detail::kAllCoords);
        });
    };

    if (scope == GradScope::layer) {
        entry("conv2d", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 5, 5}, rng, -1.0, 1.0);
            Conv2dParams<double> p = conv2d_init<double>(rng, 4, 3, 3, 2, 1);
            Tensor<double> w =
                rand_uniform<double>(conv2d(x, p).shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(conv2d(x, p), w); };
            auto bw = conv2d_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        entry("dwconv3x3", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 4, 4, 5}, rng, -1.0, 1.0);
            Conv2dParams<double> p = dwconv3x3_init<double>(rng, 4);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(dwconv3x3(x, p), w); };
            auto bw = conv2d_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        entry("linear", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 4}, rng, -1.0, 1.0);
            LinearParams<double> p = linear_init<double>(rng, 5, 4);
            Tensor<double> w =
                rand_uniform<double>({2, 3, 5}, rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(linear(x, p), w); };
            auto bw = linear_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        entry("layer_norm_channels", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 5, 3, 2}, rng, -1.0, 1.0);
            LayerNormParams<double> p = layer_norm_init<double>(5);
            // Non-trivial gamma/beta so their gradients are exercised.
            p.gamma = rand_uniform<double>({5}, rng, 0.5, 1.5);
            p.beta = rand_uniform<double>({5}, rng, -0.5, 0.5);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] {
                return detail::dot_loss(layer_norm_channels(x, p), w);
            };
            auto bw = layer_norm_channels_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        entry("mlp", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 4}, rng, -1.0, 1.0);
            MlpParams<double> p = mlp_init<double>(rng, 4, 2.0);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(mlp_forward(x, p), w); };
            auto bw = mlp_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        unary(
            "silu", -2.0, 2.0,
            [](const Tensor<double>& x) { return silu(x); },
            [](const Tensor<double>& x, const Tensor<double>& g) {
                return silu_backward(x, g);
            });
        unary(
            "sigmoid", -2.0, 2.0,
            [](const Tensor<double>& x) { return sigmoid(x); },
            [](const Tensor<double>& x, const Tensor<double>& g) {
                return sigmoid_backward(x, g);
            });
        unary(
            "tanh", -2.0, 2.0,
            [](const Tensor<double>& x) { return tanh(x); },
            [](const Tensor<double>& x, const Tensor<double>& g) {
                return tanh_backward(x, g);
            });
        // Stay away from the +-3 kinks: central differences straddling a
        // kink measure the average slope, not the one-sided derivative.
        unary(
            "hard_sigmoid", -2.5, 2.5,
            [](const Tensor<double>& x) { return hard_sigmoid(x); },
            [](const Tensor<double>& x, const Tensor<double>& g) {
                return hard_sigmoid_backward(x, g);
            });
        entry("global_avg_pool_h", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 4, 5}, rng, -1.0, 1.0);
            Tensor<double> w = rand_uniform<double>({2, 3, 1, 5}, rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(global_avg_pool_h(x), w); };
            return detail::check_tensor(loss, x, global_avg_pool_h_backward(x, w),
                                        rng, kAll);
        });
        entry("global_avg_pool_w", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 4, 5}, rng, -1.0, 1.0);
            Tensor<double> w = rand_uniform<double>({2, 3, 4, 1}, rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(global_avg_pool_w(x), w); };
            return detail::check_tensor(loss, x, global_avg_pool_w_backward(x, w),
                                        rng, kAll);
        });
        entry("upsample_nearest_2x", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({2, 3, 2, 3}, rng, -1.0, 1.0);
            Tensor<double> w = rand_uniform<double>({2, 3, 4, 6}, rng, -1.0, 1.0);
            auto loss = [&] {
                return detail::dot_loss(upsample_nearest_2x(x), w);
            };
            return detail::check_tensor(
                loss, x, upsample_nearest_2x_backward(x, w), rng, kAll);
        });
    }

    if (scope == GradScope::attention) {
        entry("emsa", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({1, 4, 2, 2}, rng, -1.0, 1.0);
            EmsaParams<double> p = emsa_init<double>(rng, 4, 2, 4);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(emsa_forward(x, p), w); };
            auto bw = emsa_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        entry("ca", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({1, 4, 3, 5}, rng, -1.0, 1.0);
            CaParams<double> p = ca_init<double>(rng, 4, 2);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(ca_forward(x, p), w); };
            auto bw = ca_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
        entry("ham", 1e-5, kTrials, [kAll](Rng& rng) {
            Tensor<double> x = rand_uniform<double>({1, 4, 2, 3}, rng, -1.0, 1.0);
            HamParams<double> p = ham_init<double>(rng, 4, 2, 2, 2.0, 6);
            Tensor<double> w = rand_uniform<double>(x.shape(), rng, -1.0, 1.0);
            auto loss = [&] { return detail::dot_loss(ham_forward(x, p), w); };
            auto bw = ham_backward(x, p, w);
            return std::max(detail::check_tensor(loss, x, bw.gx, rng, kAll),
                            detail::check_params(loss, p, bw.gp, rng, kAll));
        });
    }

    if (scope == GradScope::neck) {
        auto composite = [&](const std::string& name, NeckVariant variant,
                             bool bottom_up = false) {
            entry(name, 1e-4, 1, [variant, bottom_up](Rng& rng) {
                NeckConfig cfg;
                cfg.variant = variant;
                cfg.bottom_up = bottom_up;
                auto pp = pipeline_init<double>(rng, cfg, 2, 4, 2, 2, 2.0, 16, 16);
                Tensor<double> img =
                    rand_uniform<double>({1, 3, 16, 16}, rng, -1.0, 1.0);
                FeatureLevels<double> out = pipeline_forward(img, pp);
                FeatureLevels<double> w{
                    rand_uniform<double>(out.p3.shape(), rng, -1.0, 1.0),
                    rand_uniform<double>(out.p4.shape(), rng, -1.0, 1.0),
                    rand_uniform<double>(out.p5.shape(), rng, -1.0, 1.0)};
                auto loss = [&] {
                    const FeatureLevels<double> y = pipeline_forward(img, pp);
                    return detail::dot_loss(y.p3, w.p3) +
                           detail::dot_loss(y.p4, w.p4) +
                           detail::dot_loss(y.p5, w.p5);
                };
                auto bw = pipeline_backward(img, pp, w);
                // Full input check; parameters spot-checked (8 coords each).
                return std::max(
                    detail::check_tensor(loss, img, bw.gx, rng, detail::kAllCoords),
                    detail::check_params(loss, pp, bw.gp, rng, 8));
            });
        };
        composite("backbone_fpn", NeckVariant::fpn);
        composite("backbone_pafpn", NeckVariant::pafpn);
        composite("backbone_hafpn", NeckVariant::hafpn);
        composite("backbone_hafpn_bottomup", NeckVariant::hafpn, true);
    }

    rep.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return rep;
}

inline std::string format_gradcheck_report(const GradCheckReport& rep) {
    std::ostringstream os;
    for (const GradCheckEntry& e : rep.entries)
        os << e.op << " max_error=" << e.max_error
           << " threshold=" << e.threshold << " " << (e.pass ? "pass" : "FAIL")
           << "\n";
    os << (rep.all_pass ? "gradcheck: all ops pass" : "gradcheck: FAILURES")
       << " (" << rep.seconds << " s)\n";
    return os.str();
}

}  // namespace hafpn
