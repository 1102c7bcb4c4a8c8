#pragma once

// Convolution / linear / normalization / activation primitives. Every
// differentiable op has an analytic backward next to it; the fd oracle in
// fd_check.hpp is the reference for all of them.
//
// Convolution uses cross-correlation semantics (no kernel flip).

#include <cmath>
#include <string>
#include <vector>

#include "hafpn/tensor.hpp"

namespace hafpn {

template <typename T>
struct TensorRef {
    std::string name;
    Tensor<T>* tensor;
};

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dParams {
    Tensor<T> weight;  // [outC, inC/groups, kH, kW]
    Tensor<T> bias;    // [outC], empty = no bias
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;

    std::size_t out_channels() const { return weight.extent(0); }
    std::size_t in_channels() const { return weight.extent(1) * groups; }
    bool has_bias() const { return bias.size() > 0; }

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        out.push_back({prefix + ".weight", &weight});
        if (has_bias()) out.push_back({prefix + ".bias", &bias});
    }
};

template <typename T>
struct LinearParams {
    Tensor<T> weight;  // [outF, inF]
    Tensor<T> bias;    // [outF], empty = no bias

    std::size_t out_features() const { return weight.extent(0); }
    std::size_t in_features() const { return weight.extent(1); }
    bool has_bias() const { return bias.size() > 0; }

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        out.push_back({prefix + ".weight", &weight});
        if (has_bias()) out.push_back({prefix + ".bias", &bias});
    }
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;  // [C]
    Tensor<T> beta;   // [C]
    T eps = T(1e-5);

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }
};

template <typename T>
struct MlpParams {
    LinearParams<T> expand;
    LinearParams<T> project;
    double hidden_ratio = 2.0;

    void collect_refs(const std::string& prefix, std::vector<TensorRef<T>>& out) {
        expand.collect_refs(prefix + ".expand", out);
        project.collect_refs(prefix + ".project", out);
    }
};

// Gradient bundles share the parameter layout, so the same collect_refs walk
// pairs analytic gradients with their fd counterparts by name.
template <typename T> using Conv2dGrads = Conv2dParams<T>;
template <typename T> using LinearGrads = LinearParams<T>;
template <typename T> using LayerNormGrads = LayerNormParams<T>;
template <typename T> using MlpGrads = MlpParams<T>;

template <typename T>
Conv2dParams<T> zeros_like(const Conv2dParams<T>& p) {
    Conv2dParams<T> g;
    g.weight = zeros_like(p.weight);
    if (p.has_bias()) g.bias = zeros_like(p.bias);
    g.stride = p.stride;
    g.padding = p.padding;
    g.groups = p.groups;
    return g;
}

template <typename T>
LinearParams<T> zeros_like(const LinearParams<T>& p) {
    LinearParams<T> g;
    g.weight = zeros_like(p.weight);
    if (p.has_bias()) g.bias = zeros_like(p.bias);
    return g;
}

template <typename T>
LayerNormParams<T> zeros_like(const LayerNormParams<T>& p) {
    LayerNormParams<T> g;
    g.gamma = zeros_like(p.gamma);
    g.beta = zeros_like(p.beta);
    g.eps = p.eps;
    return g;
}

template <typename T>
MlpParams<T> zeros_like(const MlpParams<T>& p) {
    MlpParams<T> g;
    g.expand = zeros_like(p.expand);
    g.project = zeros_like(p.project);
    g.hidden_ratio = p.hidden_ratio;
    return g;
}

// Seeded uniform init, +-1/sqrt(fan_in).

template <typename T>
Conv2dParams<T> conv2d_init(Rng& rng, std::size_t out_c, std::size_t in_c,
                            std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::size_t groups = 1) {
    require(groups >= 1 && in_c % groups == 0 && out_c % groups == 0,
            "conv2d_init: channels not divisible by groups");
    Conv2dParams<T> p;
    const std::size_t fan_in = (in_c / groups) * kernel * kernel;
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    p.weight = rand_uniform<T>({out_c, in_c / groups, kernel, kernel}, rng, -s, s);
    p.bias = rand_uniform<T>({out_c}, rng, -s, s);
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return p;
}

template <typename T>
LinearParams<T> linear_init(Rng& rng, std::size_t out_f, std::size_t in_f) {
    LinearParams<T> p;
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_f)));
    p.weight = rand_uniform<T>({out_f, in_f}, rng, -s, s);
    p.bias = rand_uniform<T>({out_f}, rng, -s, s);
    return p;
}

template <typename T>
LayerNormParams<T> layer_norm_init(std::size_t channels, T eps = T(1e-5)) {
    LayerNormParams<T> p;
    p.gamma = ones<T>({channels});
    p.beta = zeros<T>({channels});
    p.eps = eps;
    return p;
}

template <typename T>
MlpParams<T> mlp_init(Rng& rng, std::size_t features, double hidden_ratio = 2.0) {
    require(hidden_ratio > 0.0, "mlp_init: hidden ratio must be positive");
    const auto hidden = static_cast<std::size_t>(
        std::max(1.0, std::floor(hidden_ratio * static_cast<double>(features))));
    MlpParams<T> p;
    p.expand = linear_init<T>(rng, hidden, features);
    p.project = linear_init<T>(rng, features, hidden);
    p.hidden_ratio = hidden_ratio;
    return p;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t padding) {
    const std::size_t padded = in + 2 * padding;
    require(padded >= kernel, "conv2d: kernel larger than padded input");
    return (padded - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dParams<T>& p) {
    require(x.rank() == 4, "conv2d: input must be [N,C,H,W]");
    require(p.weight.rank() == 4, "conv2d: weight must be [outC,inC/g,kH,kW]");
    require(p.stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t n_batch = x.extent(0), in_c = x.extent(1);
    const std::size_t in_h = x.extent(2), in_w = x.extent(3);
    const std::size_t out_c = p.out_channels();
    const std::size_t k_h = p.weight.extent(2), k_w = p.weight.extent(3);
    require(in_c == p.in_channels(),
            "conv2d: input channels " + std::to_string(in_c) + " do not match params (" +
                std::to_string(p.in_channels()) + ")");
    require(out_c % p.groups == 0, "conv2d: out channels not divisible by groups");
    if (p.has_bias()) require(p.bias.extent(0) == out_c, "conv2d: bias extent mismatch");

    const std::size_t out_h = conv_out_extent(in_h, k_h, p.stride, p.padding);
    const std::size_t out_w = conv_out_extent(in_w, k_w, p.stride, p.padding);
    const std::size_t ic_per_g = in_c / p.groups;
    const std::size_t oc_per_g = out_c / p.groups;

    Tensor<T> y = zeros<T>({n_batch, out_c, out_h, out_w});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t oc = 0; oc < out_c; ++oc) {
            const std::size_t g = oc / oc_per_g;
            for (std::size_t oh = 0; oh < out_h; ++oh) {
                for (std::size_t ow = 0; ow < out_w; ++ow) {
                    T acc = p.has_bias() ? p.bias[oc] : T(0);
                    for (std::size_t icl = 0; icl < ic_per_g; ++icl) {
                        const std::size_t ic = g * ic_per_g + icl;
                        for (std::size_t kh = 0; kh < k_h; ++kh) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(oh * p.stride + kh) -
                                static_cast<std::ptrdiff_t>(p.padding);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_h)) continue;
                            for (std::size_t kw = 0; kw < k_w; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * p.stride + kw) -
                                    static_cast<std::ptrdiff_t>(p.padding);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in_w)) continue;
                                acc += x.at(n, ic, static_cast<std::size_t>(ih),
                                            static_cast<std::size_t>(iw)) *
                                       p.weight.at(oc, icl, kh, kw);
                            }
                        }
                    }
                    y.at(n, oc, oh, ow) = acc;
                }
            }
        }
    }
    ensure_finite(y, "conv2d");
    return y;
}

template <typename T>
struct Conv2dBackward {
    Tensor<T> gx;
    Conv2dGrads<T> gp;
};

template <typename T>
Conv2dBackward<T> conv2d_backward(const Tensor<T>& x, const Conv2dParams<T>& p,
                                  const Tensor<T>& gy) {
    const std::size_t n_batch = x.extent(0), in_c = x.extent(1);
    const std::size_t in_h = x.extent(2), in_w = x.extent(3);
    const std::size_t out_c = p.out_channels();
    const std::size_t k_h = p.weight.extent(2), k_w = p.weight.extent(3);
    const std::size_t out_h = gy.extent(2), out_w = gy.extent(3);
    require(gy.extent(0) == n_batch && gy.extent(1) == out_c,
            "conv2d_backward: upstream gradient shape mismatch");
    const std::size_t ic_per_g = in_c / p.groups;
    const std::size_t oc_per_g = out_c / p.groups;

    Conv2dBackward<T> r;
    r.gx = zeros_like(x);
    r.gp = zeros_like(p);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t oc = 0; oc < out_c; ++oc) {
            const std::size_t g = oc / oc_per_g;
            for (std::size_t oh = 0; oh < out_h; ++oh) {
                for (std::size_t ow = 0; ow < out_w; ++ow) {
                    const T go = gy.at(n, oc, oh, ow);
                    if (p.has_bias()) r.gp.bias[oc] += go;
                    for (std::size_t icl = 0; icl < ic_per_g; ++icl) {
                        const std::size_t ic = g * ic_per_g + icl;
                        for (std::size_t kh = 0; kh < k_h; ++kh) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(oh * p.stride + kh) -
                                static_cast<std::ptrdiff_t>(p.padding);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_h)) continue;
                            for (std::size_t kw = 0; kw < k_w; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * p.stride + kw) -
                                    static_cast<std::ptrdiff_t>(p.padding);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in_w)) continue;
                                const auto uh = static_cast<std::size_t>(ih);
                                const auto uw = static_cast<std::size_t>(iw);
                                r.gx.at(n, ic, uh, uw) += go * p.weight.at(oc, icl, kh, kw);
                                r.gp.weight.at(oc, icl, kh, kw) += go * x.at(n, ic, uh, uw);
                            }
                        }
                    }
                }
            }
        }
    }
    return r;
}

/// Depthwise 3x3, stride 1, pad 1: groups == C, output shape == input shape.
template <typename T>
Tensor<T> dwconv3x3(const Tensor<T>& x, const Conv2dParams<T>& p) {
    require(p.groups == x.extent(1) && p.out_channels() == x.extent(1),
            "dwconv3x3: params must be depthwise over the input channels");
    require(p.weight.extent(2) == 3 && p.weight.extent(3) == 3 && p.stride == 1 &&
                p.padding == 1,
            "dwconv3x3: expects kernel 3, stride 1, pad 1");
    return conv2d(x, p);
}

template <typename T>
Conv2dParams<T> dwconv3x3_init(Rng& rng, std::size_t channels) {
    return conv2d_init<T>(rng, channels, channels, 3, 1, 1, channels);
}

// ---------------------------------------------------------------------------
// Linear over the last axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
    require(x.rank() >= 1, "linear: rank must be >= 1");
    const std::size_t in_f = x.shape().back();
    require(in_f == p.in_features(),
            "linear: last extent " + std::to_string(in_f) + " does not match weight (" +
                std::to_string(p.in_features()) + ")");
    if (p.has_bias())
        require(p.bias.extent(0) == p.out_features(), "linear: bias extent mismatch");
    const std::size_t out_f = p.out_features();
    const std::size_t rows = x.size() / in_f;

    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    std::vector<T> out(rows * out_f);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * in_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            T acc = p.has_bias() ? p.bias[o] : T(0);
            const T* wr = p.weight.data() + o * in_f;
            for (std::size_t i = 0; i < in_f; ++i) acc += xr[i] * wr[i];
            out[r * out_f + o] = acc;
        }
    }
    Tensor<T> y(std::move(out_shape), std::move(out));
    ensure_finite(y, "linear");
    return y;
}

template <typename T>
struct LinearBackward {
    Tensor<T> gx;
    LinearGrads<T> gp;
};

template <typename T>
LinearBackward<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p,
                                  const Tensor<T>& gy) {
    const std::size_t in_f = x.shape().back();
    const std::size_t out_f = p.out_features();
    require(gy.shape().back() == out_f && gy.size() / out_f == x.size() / in_f,
            "linear_backward: upstream gradient shape mismatch");
    const std::size_t rows = x.size() / in_f;

    LinearBackward<T> r;
    r.gx = zeros_like(x);
    r.gp = zeros_like(p);
    for (std::size_t row = 0; row < rows; ++row) {
        const T* xr = x.data() + row * in_f;
        const T* gr = gy.data() + row * out_f;
        T* gxr = r.gx.data() + row * in_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            const T go = gr[o];
            const T* wr = p.weight.data() + o * in_f;
            T* gwr = r.gp.weight.data() + o * in_f;
            for (std::size_t i = 0; i < in_f; ++i) {
                gxr[i] += go * wr[i];
                gwr[i] += go * xr[i];
            }
            if (p.has_bias()) r.gp.bias[o] += go;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Layer normalization over channels at each spatial site
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const LayerNormParams<T>& p) {
    require(x.rank() == 4, "layer_norm_channels: input must be [N,C,H,W]");
    const std::size_t n_batch = x.extent(0), channels = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);
    require(p.gamma.extent(0) == channels && p.beta.extent(0) == channels,
            "layer_norm_channels: gamma/beta extent mismatch");
    require(p.eps > T(0), "layer_norm_channels: eps must be positive");

    Tensor<T> y = zeros_like(x);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t h = 0; h < height; ++h) {
            for (std::size_t w = 0; w < width; ++w) {
                T mean = T(0);
                for (std::size_t c = 0; c < channels; ++c) mean += x.at(n, c, h, w);
                mean /= static_cast<T>(channels);
                T var = T(0);
                for (std::size_t c = 0; c < channels; ++c) {
                    const T d = x.at(n, c, h, w) - mean;
                    var += d * d;
                }
                var /= static_cast<T>(channels);
                const T inv_std = T(1) / std::sqrt(var + p.eps);
                for (std::size_t c = 0; c < channels; ++c) {
                    const T xhat = (x.at(n, c, h, w) - mean) * inv_std;
                    y.at(n, c, h, w) = p.gamma[c] * xhat + p.beta[c];
                }
            }
        }
    }
    ensure_finite(y, "layer_norm_channels");
    return y;
}

template <typename T>
struct LayerNormBackward {
    Tensor<T> gx;
    LayerNormGrads<T> gp;
};

template <typename T>
LayerNormBackward<T> layer_norm_channels_backward(const Tensor<T>& x,
                                                  const LayerNormParams<T>& p,
                                                  const Tensor<T>& gy) {
    require(x.same_shape(gy), "layer_norm_channels_backward: shape mismatch");
    const std::size_t n_batch = x.extent(0), channels = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);

    LayerNormBackward<T> r;
    r.gx = zeros_like(x);
    r.gp = zeros_like(p);
    std::vector<T> xhat(channels);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t h = 0; h < height; ++h) {
            for (std::size_t w = 0; w < width; ++w) {
                T mean = T(0);
                for (std::size_t c = 0; c < channels; ++c) mean += x.at(n, c, h, w);
                mean /= static_cast<T>(channels);
                T var = T(0);
                for (std::size_t c = 0; c < channels; ++c) {
                    const T d = x.at(n, c, h, w) - mean;
                    var += d * d;
                }
                var /= static_cast<T>(channels);
                const T inv_std = T(1) / std::sqrt(var + p.eps);

                // g = gy*gamma; gx = (g - mean(g) - xhat*mean(g*xhat)) / std
                T g_mean = T(0), gx_mean = T(0);
                for (std::size_t c = 0; c < channels; ++c) {
                    xhat[c] = (x.at(n, c, h, w) - mean) * inv_std;
                    const T g = gy.at(n, c, h, w) * p.gamma[c];
                    g_mean += g;
                    gx_mean += g * xhat[c];
                }
                g_mean /= static_cast<T>(channels);
                gx_mean /= static_cast<T>(channels);
                for (std::size_t c = 0; c < channels; ++c) {
                    const T g = gy.at(n, c, h, w) * p.gamma[c];
                    r.gx.at(n, c, h, w) = (g - g_mean - xhat[c] * gx_mean) * inv_std;
                    r.gp.gamma[c] += gy.at(n, c, h, w) * xhat[c];
                    r.gp.beta[c] += gy.at(n, c, h, w);
                }
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T sigmoid_scalar(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

template <typename T, typename F>
Tensor<T> map_elementwise(const Tensor<T>& x, F&& f, const char* what) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    Tensor<T> y(x.shape(), std::move(out));
    ensure_finite(y, what);
    return y;
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::map_elementwise(
        x, [](T v) { return detail::sigmoid_scalar(v); }, "sigmoid");
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::map_elementwise(
        x, [](T v) { return v * detail::sigmoid_scalar(v); }, "silu");
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::map_elementwise(x, [](T v) { return std::tanh(v); }, "tanh");
}

/// Piecewise-linear sigmoid approximation: clamp((x+3)/6, 0, 1).
template <typename T>
Tensor<T> hard_sigmoid(const Tensor<T>& x) {
    return detail::map_elementwise(
        x,
        [](T v) {
            const T t = (v + T(3)) / T(6);
            return t < T(0) ? T(0) : (t > T(1) ? T(1) : t);
        },
        "hard_sigmoid");
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    require(x.same_shape(gy), "sigmoid_backward: shape mismatch");
    Tensor<T> gx = zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = detail::sigmoid_scalar(x[i]);
        gx[i] = gy[i] * s * (T(1) - s);
    }
    return gx;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    require(x.same_shape(gy), "silu_backward: shape mismatch");
    Tensor<T> gx = zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = detail::sigmoid_scalar(x[i]);
        gx[i] = gy[i] * (s + x[i] * s * (T(1) - s));
    }
    return gx;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    require(x.same_shape(gy), "tanh_backward: shape mismatch");
    Tensor<T> gx = zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T t = std::tanh(x[i]);
        gx[i] = gy[i] * (T(1) - t * t);
    }
    return gx;
}

template <typename T>
Tensor<T> hard_sigmoid_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    require(x.same_shape(gy), "hard_sigmoid_backward: shape mismatch");
    Tensor<T> gx = zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool inside = x[i] > T(-3) && x[i] < T(3);
        gx[i] = inside ? gy[i] / T(6) : T(0);
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

/// Mean over the H axis: [N,C,H,W] -> [N,C,1,W].
template <typename T>
Tensor<T> global_avg_pool_h(const Tensor<T>& x) {
    require(x.rank() == 4, "global_avg_pool_h: input must be [N,C,H,W]");
    const std::size_t n_b = x.extent(0), c_n = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);
    Tensor<T> y = zeros<T>({n_b, c_n, 1, width});
    for (std::size_t n = 0; n < n_b; ++n)
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t w = 0; w < width; ++w) {
                T acc = T(0);
                for (std::size_t h = 0; h < height; ++h) acc += x.at(n, c, h, w);
                y.at(n, c, 0, w) = acc / static_cast<T>(height);
            }
    return y;
}

/// Mean over the W axis: [N,C,H,W] -> [N,C,H,1].
template <typename T>
Tensor<T> global_avg_pool_w(const Tensor<T>& x) {
    require(x.rank() == 4, "global_avg_pool_w: input must be [N,C,H,W]");
    const std::size_t n_b = x.extent(0), c_n = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);
    Tensor<T> y = zeros<T>({n_b, c_n, height, 1});
    for (std::size_t n = 0; n < n_b; ++n)
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t h = 0; h < height; ++h) {
                T acc = T(0);
                for (std::size_t w = 0; w < width; ++w) acc += x.at(n, c, h, w);
                y.at(n, c, h, 0) = acc / static_cast<T>(width);
            }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_h_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    const std::size_t height = x.extent(2);
    Tensor<T> gx = zeros_like(x);
    for (std::size_t n = 0; n < x.extent(0); ++n)
        for (std::size_t c = 0; c < x.extent(1); ++c)
            for (std::size_t w = 0; w < x.extent(3); ++w) {
                const T g = gy.at(n, c, 0, w) / static_cast<T>(height);
                for (std::size_t h = 0; h < height; ++h) gx.at(n, c, h, w) = g;
            }
    return gx;
}

template <typename T>
Tensor<T> global_avg_pool_w_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    const std::size_t width = x.extent(3);
    Tensor<T> gx = zeros_like(x);
    for (std::size_t n = 0; n < x.extent(0); ++n)
        for (std::size_t c = 0; c < x.extent(1); ++c)
            for (std::size_t h = 0; h < x.extent(2); ++h) {
                const T g = gy.at(n, c, h, 0) / static_cast<T>(width);
                for (std::size_t w = 0; w < width; ++w) gx.at(n, c, h, w) = g;
            }
    return gx;
}

/// Each pixel replicated into a 2x2 block: [N,C,H,W] -> [N,C,2H,2W].
template <typename T>
Tensor<T> upsample_nearest_2x(const Tensor<T>& x) {
    require(x.rank() == 4, "upsample_nearest_2x: input must be [N,C,H,W]");
    const std::size_t n_b = x.extent(0), c_n = x.extent(1);
    const std::size_t height = x.extent(2), width = x.extent(3);
    Tensor<T> y = zeros<T>({n_b, c_n, 2 * height, 2 * width});
    for (std::size_t n = 0; n < n_b; ++n)
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t h = 0; h < height; ++h)
                for (std::size_t w = 0; w < width; ++w) {
                    const T v = x.at(n, c, h, w);
                    y.at(n, c, 2 * h, 2 * w) = v;
                    y.at(n, c, 2 * h, 2 * w + 1) = v;
                    y.at(n, c, 2 * h + 1, 2 * w) = v;
                    y.at(n, c, 2 * h + 1, 2 * w + 1) = v;
                }
    return y;
}

template <typename T>
Tensor<T> upsample_nearest_2x_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    Tensor<T> gx = zeros_like(x);
    for (std::size_t n = 0; n < x.extent(0); ++n)
        for (std::size_t c = 0; c < x.extent(1); ++c)
            for (std::size_t h = 0; h < x.extent(2); ++h)
                for (std::size_t w = 0; w < x.extent(3); ++w)
                    gx.at(n, c, h, w) = gy.at(n, c, 2 * h, 2 * w) +
                                        gy.at(n, c, 2 * h, 2 * w + 1) +
                                        gy.at(n, c, 2 * h + 1, 2 * w) +
                                        gy.at(n, c, 2 * h + 1, 2 * w + 1);
    return gx;
}

// ---------------------------------------------------------------------------
// Two-layer MLP on the last axis: project(silu(expand(x)))
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p) {
    require(p.expand.out_features() == p.project.in_features(),
            "mlp_forward: expand/project feature mismatch");
    require(x.shape().back() == p.expand.in_features() &&
                p.project.out_features() == p.expand.in_features(),
            "mlp_forward: feature extent mismatch");
    return linear(silu(linear(x, p.expand)), p.project);
}

template <typename T>
struct MlpBackward {
    Tensor<T> gx;
    MlpGrads<T> gp;
};

template <typename T>
MlpBackward<T> mlp_backward(const Tensor<T>& x, const MlpParams<T>& p,
                            const Tensor<T>& gy) {
    const Tensor<T> pre = linear(x, p.expand);
    const Tensor<T> hidden = silu(pre);
    auto proj_bw = linear_backward(hidden, p.project, gy);
    const Tensor<T> gpre = silu_backward(pre, proj_bw.gx);
    auto exp_bw = linear_backward(x, p.expand, gpre);

    MlpBackward<T> r;
    r.gx = std::move(exp_bw.gx);
    r.gp.expand = std::move(exp_bw.gp);
    r.gp.project = std::move(proj_bw.gp);
    r.gp.hidden_ratio = p.hidden_ratio;
    return r;
}

}  // namespace hafpn
