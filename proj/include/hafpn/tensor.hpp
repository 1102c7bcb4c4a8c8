#pragma once

// Dense row-major tensor engine. Feature maps use the [N, C, H, W] layout;
// index (n, c, h, w) maps to ((n*C + c)*H + h)*W + w. No implicit
// broadcasting anywhere: shape mismatches throw.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hafpn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        require(shape_numel(shape_) == data_.size(),
                "tensor: shape " + shape_str(shape_) + " does not match data size " +
                    std::to_string(data_.size()));
        for (std::size_t e : shape_)
            require(e >= 1, "tensor: zero extent in shape " + shape_str(shape_));
    }

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        for (std::size_t e : shape_)
            require(e >= 1, "tensor: zero extent in shape " + shape_str(shape_));
        data_.assign(shape_numel(shape_), T(0));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const {
        require(axis < shape_.size(), "tensor: axis out of range");
        return shape_[axis];
    }

    const T* data() const { return data_.data(); }
    T* data() { return data_.data(); }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Rank-4 accessors for [N,C,H,W] maps.
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[offset4(n, c, h, w)];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[offset4(n, c, h, w)];
    }

    // Rank-2 accessors for matrices such as linear weights.
    T& at(std::size_t row, std::size_t col) {
        return data_[row * shape_[1] + col];
    }
    const T& at(std::size_t row, std::size_t col) const {
        return data_[row * shape_[1] + col];
    }

    T item() const {
        require(data_.size() == 1, "tensor: item() on non-scalar tensor");
        return data_[0];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::size_t offset4(std::size_t n, std::size_t c, std::size_t h,
                        std::size_t w) const {
        return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    Shape shape_;
    std::vector<T> data_;
};

// The library rejects non-finite values instead of propagating them.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i]))
            throw std::runtime_error(std::string(what) +
                                     ": non-finite value at flat index " +
                                     std::to_string(i));
    }
}

template <typename T>
Tensor<T> zeros(const Shape& shape) {
    return Tensor<T>(shape, std::vector<T>(shape_numel(shape), T(0)));
}

template <typename T>
Tensor<T> ones(const Shape& shape) {
    return Tensor<T>(shape, std::vector<T>(shape_numel(shape), T(1)));
}

template <typename T>
Tensor<T> full(const Shape& shape, T value) {
    require(std::isfinite(value), "full: non-finite fill value");
    return Tensor<T>(shape, std::vector<T>(shape_numel(shape), value));
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return zeros<T>(t.shape());
}

/// Deterministic splitmix64 stream. Same seed gives the same scalar
/// sequence on every platform; no std:: engines or distributions involved.
struct Rng {
    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1), 53 mantissa bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    std::uint64_t state;
};

template <typename T>
Tensor<T> rand_uniform(const Shape& shape, Rng& rng, T lo, T hi) {
    require(lo < hi, "rand_uniform: lo must be < hi");
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) {
        const double u = rng.next_double();
        v = static_cast<T>(static_cast<double>(lo) +
                           (static_cast<double>(hi) - static_cast<double>(lo)) * u);
    }
    return Tensor<T>(shape, std::move(data));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.same_shape(b), "sub: shape mismatch " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> mul_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.same_shape(b), "mul_elementwise: shape mismatch " +
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& first = parts.front().shape();
    require(axis < first.size(), "concat: axis out of range");
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        require(p.rank() == first.size(), "concat: rank mismatch");
        for (std::size_t a = 0; a < first.size(); ++a) {
            if (a != axis)
                require(p.shape()[a] == first[a],
                        "concat: extent mismatch on non-concat axis " + std::to_string(a));
        }
        axis_total += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = axis_total;

    // outer = product of extents before axis, inner = product after.
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
    for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];

    std::vector<T> out(shape_numel(out_shape));
    const std::size_t out_row = axis_total * inner;
    std::size_t axis_off = 0;
    for (const auto& p : parts) {
        const std::size_t p_axis = p.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = p.data() + o * p_axis * inner;
            T* dst = out.data() + o * out_row + axis_off * inner;
            std::copy(src, src + p_axis * inner, dst);
        }
        axis_off += p_axis;
    }
    return Tensor<T>(std::move(out_shape), std::move(out));
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
    return concat(std::vector<Tensor<T>>(parts), axis);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& t, const std::vector<std::size_t>& order) {
    require(order.size() == t.rank(), "permute: order rank mismatch");
    std::vector<bool> seen(t.rank(), false);
    for (std::size_t a : order) {
        require(a < t.rank() && !seen[a], "permute: invalid axis order");
        seen[a] = true;
    }
    Shape out_shape(t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i) out_shape[i] = t.shape()[order[i]];

    std::vector<std::size_t> in_strides(t.rank(), 1);
    for (std::size_t i = t.rank(); i-- > 1;)
        in_strides[i - 1] = in_strides[i] * t.shape()[i];

    std::vector<T> out(t.size());
    std::vector<std::size_t> idx(t.rank(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < t.rank(); ++i) src += idx[i] * in_strides[order[i]];
        out[flat] = t[src];
        for (std::size_t i = t.rank(); i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return Tensor<T>(std::move(out_shape), std::move(out));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, const Shape& shape) {
    require(shape_numel(shape) == t.size(),
            "reshape: element count mismatch " + shape_str(t.shape()) + " -> " +
                shape_str(shape));
    return Tensor<T>(shape, t.values());
}

/// Mean over the given axes (deduplicated, any order); reduced axes are
/// dropped unless keepdims. Reducing every axis yields a rank-0 scalar.
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& t, std::vector<std::size_t> axes,
                      bool keepdims = false) {
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (std::size_t a : axes) require(a < t.rank(), "reduce_mean: axis out of range");

    std::vector<bool> reduced(t.rank(), false);
    std::size_t count = 1;
    for (std::size_t a : axes) {
        reduced[a] = true;
        count *= t.shape()[a];
    }
    Shape out_shape;
    for (std::size_t a = 0; a < t.rank(); ++a) {
        if (!reduced[a]) out_shape.push_back(t.shape()[a]);
        else if (keepdims) out_shape.push_back(1);
    }

    std::vector<std::size_t> in_strides(t.rank(), 1);
    for (std::size_t i = t.rank(); i-- > 1;)
        in_strides[i - 1] = in_strides[i] * t.shape()[i];

    std::vector<T> acc(shape_numel(out_shape), T(0));
    std::vector<std::size_t> idx(t.rank(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t dst = 0;
        for (std::size_t a = 0; a < t.rank(); ++a) {
            if (reduced[a]) continue;
            dst = dst * t.shape()[a] + idx[a];
        }
        acc[dst] += t[flat];
        for (std::size_t i = t.rank(); i-- > 0;) {
            if (++idx[i] < t.shape()[i]) break;
            idx[i] = 0;
        }
    }
    for (auto& v : acc) v /= static_cast<T>(count);
    return Tensor<T>(std::move(out_shape), std::move(acc));
}

/// Contiguous slice along the last axis: elements [start, start+count).
template <typename T>
Tensor<T> slice_last(const Tensor<T>& t, std::size_t start, std::size_t count) {
    require(t.rank() >= 1, "slice_last: rank must be >= 1");
    const std::size_t last = t.shape().back();
    require(count >= 1 && start + count <= last, "slice_last: range out of bounds");
    const std::size_t rows = t.size() / last;
    Shape out_shape = t.shape();
    out_shape.back() = count;
    std::vector<T> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy(t.data() + r * last + start, t.data() + r * last + start + count,
                  out.data() + r * count);
    return Tensor<T>(std::move(out_shape), std::move(out));
}

/// Swap the last two axes.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& t) {
    require(t.rank() >= 2, "transpose_last2: rank must be >= 2");
    std::vector<std::size_t> order(t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i) order[i] = i;
    std::swap(order[t.rank() - 2], order[t.rank() - 1]);
    return permute(t, order);
}

/// Matrix product with ascending-k summation order. Accepts [M,K]x[K,N] or
/// batched [B...,M,K]x[B...,K,N] with identical leading extents.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() >= 2 && b.rank() >= 2, "matmul: rank must be >= 2");
    require(a.rank() == b.rank(), "matmul: rank mismatch");
    const std::size_t r = a.rank();
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < r; ++i) {
        require(a.shape()[i] == b.shape()[i], "matmul: batch extent mismatch");
        batch *= a.shape()[i];
    }
    const std::size_t m = a.shape()[r - 2];
    const std::size_t k = a.shape()[r - 1];
    const std::size_t n = b.shape()[r - 1];
    require(b.shape()[r - 2] == k,
            "matmul: inner extents differ " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.back() = m;
    out_shape.push_back(n);

    std::vector<T> out(batch * m * n, T(0));
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* pa = a.data() + bi * m * k;
        const T* pb = b.data() + bi * k * n;
        T* po = out.data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                T acc = T(0);
                for (std::size_t kk = 0; kk < k; ++kk)
                    acc += pa[i * k + kk] * pb[kk * n + j];
                po[i * n + j] = acc;
            }
        }
    }
    Tensor<T> result(std::move(out_shape), std::move(out));
    ensure_finite(result, "matmul");
    return result;
}

namespace detail {

inline std::uint64_t total_order_key(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    return (bits & 0x8000000000000000ull) ? ~bits : (bits | 0x8000000000000000ull);
}

inline std::uint32_t total_order_key(float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    return (bits & 0x80000000u) ? ~bits : (bits | 0x80000000u);
}

}  // namespace detail

/// Sum with a canonical addend order (sorted by the IEEE total order before
/// accumulating), so the result is bitwise independent of how the addends
/// were arranged. Used where an op must be exactly invariant under input
/// permutations, e.g. the attention-weighted value aggregation.
template <typename T>
T sum_canonical(std::vector<T>& addends) {
    std::sort(addends.begin(), addends.end(), [](T x, T y) {
        return detail::total_order_key(x) < detail::total_order_key(y);
    });
    T acc = T(0);
    for (T v : addends) acc += v;
    return acc;
}

}  // namespace hafpn
