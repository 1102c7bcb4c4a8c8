#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <vector>

#include "hafpn/fd_check.hpp"
#include "hafpn/tensor.hpp"

using namespace hafpn;

namespace {

// Plain triple-loop matmul, ascending k, used as the independent oracle.
Tensor<double> matmul_reference(const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<double> c = zeros<double>({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            c.at(i, j) = acc;
        }
    return c;
}

}  // namespace

TEST_CASE("tensor shape and indexing basics", "[tensor]") {
    Tensor<double> t({2, 3, 4, 5});
    REQUIRE(t.rank() == 4);
    REQUIRE(t.size() == 2 * 3 * 4 * 5);
    REQUIRE(t.extent(0) == 2);
    REQUIRE(t.extent(3) == 5);

    // Row-major layout: last axis is contiguous.
    t.at(0, 0, 0, 1) = 7.0;
    REQUIRE(t[1] == 7.0);
    t.at(1, 2, 3, 4) = -1.0;
    REQUIRE(t[t.size() - 1] == -1.0);

    REQUIRE_THROWS(Tensor<double>({2, 0, 3}));
    REQUIRE_THROWS(Tensor<double>({4, 4}, std::vector<double>(15, 0.0)));
}

TEST_CASE("zeros, ones, full fill as documented", "[tensor]") {
    auto z = zeros<float>({3, 2});
    auto o = ones<float>({3, 2});
    auto f = full<float>({3, 2}, 2.5f);
    for (std::size_t i = 0; i < z.size(); ++i) {
        REQUIRE(z[i] == 0.0f);
        REQUIRE(o[i] == 1.0f);
        REQUIRE(f[i] == 2.5f);
    }
    REQUIRE(z.same_shape(o));
}

TEST_CASE("ensure_finite rejects NaN and infinity", "[tensor]") {
    Tensor<double> t = ones<double>({2, 2});
    REQUIRE_NOTHROW(ensure_finite(t, "probe"));
    t[1] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS(ensure_finite(t, "probe"));
    t[1] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS(ensure_finite(t, "probe"));
}

TEST_CASE("seeded generator is deterministic and in range", "[tensor]") {
    Rng a(42), b(42), c(43);
    bool diverged = false;
    for (int i = 0; i < 1000; ++i) {
        const double u = a.next_double();
        REQUIRE(u == b.next_double());
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        if (u != c.next_double()) diverged = true;
    }
    REQUIRE(diverged);
}

TEST_CASE("rand_uniform draws stay in range with mean near center", "[tensor]") {
    Rng rng(7);
    auto t = rand_uniform<double>({100000}, rng, 0.0, 1.0);
    double mean = 0.0, lo = 1.0, hi = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        mean += t[i];
        lo = std::min(lo, t[i]);
        hi = std::max(hi, t[i]);
    }
    mean /= static_cast<double>(t.size());
    REQUIRE(lo >= 0.0);
    REQUIRE(hi < 1.0);
    REQUIRE(std::abs(mean - 0.5) < 0.01);

    // Same seed, same stream.
    Rng r1(99), r2(99);
    auto u = rand_uniform<float>({4, 4}, r1, -2.0f, 3.0f);
    auto v = rand_uniform<float>({4, 4}, r2, -2.0f, 3.0f);
    for (std::size_t i = 0; i < u.size(); ++i) {
        REQUIRE(u[i] == v[i]);
        REQUIRE(u[i] >= -2.0f);
        REQUIRE(u[i] < 3.0f);
    }
}

TEST_CASE("matmul hand examples", "[tensor]") {
    // Identity leaves the operand unchanged.
    Tensor<double> eye = zeros<double>({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Rng rng(5);
    auto x = rand_uniform<double>({3, 3}, rng, -1.0, 1.0);
    auto ix = matmul(eye, x);
    auto xi = matmul(x, eye);
    for (std::size_t i = 0; i < x.size(); ++i) {
        REQUIRE(ix[i] == x[i]);
        REQUIRE(xi[i] == x[i]);
    }

    // [[1,2]] x [[3],[4]] = [[11]].
    Tensor<double> a({1, 2}, {1.0, 2.0});
    Tensor<double> b({2, 1}, {3.0, 4.0});
    auto c = matmul(a, b);
    REQUIRE(c.rank() == 2);
    REQUIRE(c.extent(0) == 1);
    REQUIRE(c.extent(1) == 1);
    REQUIRE(c[0] == 11.0);
}

TEST_CASE("matmul equals triple-loop oracle", "[tensor]") {
    Rng rng(17);
    auto a = rand_uniform<double>({5, 4}, rng, -1.0, 1.0);
    auto b = rand_uniform<double>({4, 3}, rng, -1.0, 1.0);
    auto got = matmul(a, b);
    auto want = matmul_reference(a, b);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == want[i]);

    // Inner-extent mismatch is an error, not a silent broadcast.
    REQUIRE_THROWS(matmul(a, rand_uniform<double>({5, 3}, rng, -1.0, 1.0)));
}

TEST_CASE("matmul batches over leading axes", "[tensor]") {
    Rng rng(23);
    auto a = rand_uniform<double>({2, 3, 4, 5}, rng, -1.0, 1.0);
    auto b = rand_uniform<double>({2, 3, 5, 6}, rng, -1.0, 1.0);
    auto c = matmul(a, b);
    REQUIRE(c.shape() == Shape({2, 3, 4, 6}));
    // Spot-check one batch against the 2-D path.
    Tensor<double> a0 = zeros<double>({4, 5});
    Tensor<double> b0 = zeros<double>({5, 6});
    const std::size_t batch = 4;  // flat index of (1,0) over the 2x3 batch grid
    std::memcpy(a0.data(), a.data() + batch * 20, 20 * sizeof(double));
    std::memcpy(b0.data(), b.data() + batch * 30, 30 * sizeof(double));
    auto c0 = matmul(a0, b0);
    for (std::size_t i = 0; i < c0.size(); ++i) REQUIRE(c0[i] == c[batch * 24 + i]);
}

TEST_CASE("elementwise arithmetic", "[tensor]") {
    Tensor<double> a({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor<double> b({2, 2}, {10.0, 20.0, 30.0, 40.0});
    auto s = add(a, b);
    auto d = sub(b, a);
    auto m = mul_elementwise(a, b);
    auto k = scale(a, 3.0);
    REQUIRE(s.values() == std::vector<double>({11.0, 22.0, 33.0, 44.0}));
    REQUIRE(d.values() == std::vector<double>({9.0, 18.0, 27.0, 36.0}));
    REQUIRE(m.values() == std::vector<double>({10.0, 40.0, 90.0, 160.0}));
    REQUIRE(k.values() == std::vector<double>({3.0, 6.0, 9.0, 12.0}));
    REQUIRE_THROWS(add(a, ones<double>({2, 3})));
}

TEST_CASE("concat along the channel axis", "[tensor]") {
    auto a = full<double>({1, 2, 4, 4}, 1.0);
    auto b = full<double>({1, 3, 4, 4}, 2.0);
    auto c = concat({a, b}, 1);
    REQUIRE(c.shape() == Shape({1, 5, 4, 4}));
    for (std::size_t ch = 0; ch < 5; ++ch)
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t w = 0; w < 4; ++w)
                REQUIRE(c.at(0, ch, h, w) == (ch < 2 ? 1.0 : 2.0));

    // Non-concat extents must agree.
    REQUIRE_THROWS(concat({a, full<double>({1, 3, 4, 5}, 0.0)}, 1));
    // Concat along the last axis as used by the pooled-strip path.
    auto w1 = full<double>({1, 2, 1, 3}, 5.0);
    auto w2 = full<double>({1, 2, 1, 2}, 6.0);
    auto cc = concat({w1, w2}, 3);
    REQUIRE(cc.shape() == Shape({1, 2, 1, 5}));
    REQUIRE(cc.at(0, 1, 0, 2) == 5.0);
    REQUIRE(cc.at(0, 1, 0, 3) == 6.0);
}

TEST_CASE("reduce_mean over chosen axes", "[tensor]") {
    auto o = ones<double>({3, 3});
    auto m = reduce_mean(o, {0, 1});
    REQUIRE(m.rank() == 0);
    REQUIRE(m.size() == 1);
    REQUIRE(m[0] == 1.0);

    Tensor<double> t({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    auto rows = reduce_mean(t, {1});
    REQUIRE(rows.shape() == Shape({2}));
    REQUIRE(rows[0] == 2.0);
    REQUIRE(rows[1] == 5.0);
    auto cols = reduce_mean(t, {0}, /*keepdims=*/true);
    REQUIRE(cols.shape() == Shape({1, 3}));
    REQUIRE(cols[0] == 2.5);
    REQUIRE(cols[2] == 4.5);
}

TEST_CASE("permute and reshape preserve values", "[tensor]") {
    Tensor<double> t({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    auto p = permute(t, {1, 0});
    REQUIRE(p.shape() == Shape({3, 2}));
    REQUIRE(p.at(0, 1) == 4.0);
    REQUIRE(p.at(2, 0) == 3.0);

    auto r = reshape(t, {3, 2});
    REQUIRE(r.at(0, 1) == 2.0);  // reshape keeps flat order
    REQUIRE_THROWS(reshape(t, {4, 2}));

    // NCHW -> NHWC round trip.
    Rng rng(3);
    auto x = rand_uniform<double>({2, 3, 4, 5}, rng, -1.0, 1.0);
    auto back = permute(permute(x, {0, 2, 3, 1}), {0, 3, 1, 2});
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(back[i] == x[i]);
}

TEST_CASE("slice_last and transpose_last2", "[tensor]") {
    Tensor<double> t({2, 4}, {0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0});
    auto s = slice_last(t, 1, 2);
    REQUIRE(s.shape() == Shape({2, 2}));
    REQUIRE(s.values() == std::vector<double>({1.0, 2.0, 11.0, 12.0}));
    REQUIRE_THROWS(slice_last(t, 3, 2));

    auto tt = transpose_last2(t);
    REQUIRE(tt.shape() == Shape({4, 2}));
    REQUIRE(tt.at(1, 0) == 1.0);
    REQUIRE(tt.at(0, 1) == 10.0);
}

TEST_CASE("canonical summation ignores addend order", "[tensor]") {
    std::mt19937 gen(123);
    std::uniform_real_distribution<double> dist(-1e6, 1e6);
    std::vector<double> base(257);
    for (auto& v : base) v = dist(gen);
    base[0] = 1e-9;  // mix magnitudes so naive order would matter

    std::vector<double> a = base;
    const double ra = sum_canonical(a);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> shuffled = base;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        REQUIRE(sum_canonical(shuffled) == ra);
    }
    // Still an actual sum.
    double naive = 0.0;
    for (double v : base) naive += v;
    REQUIRE(std::abs(ra - naive) < 1e-4);
}

TEST_CASE("fd_grad of a plain sum is all ones", "[tensor]") {
    Rng rng(11);
    auto x = rand_uniform<double>({3, 4}, rng, -1.0, 1.0);
    auto g = fd_grad(
        [](const Tensor<double>& t) {
            double s = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
            return s;
        },
        x, 1e-5);
    for (std::size_t i = 0; i < g.size(); ++i)
        REQUIRE(std::abs(g[i] - 1.0) < 1e-9);
}

TEST_CASE("fd_grad of sum of squares doubles the input", "[tensor]") {
    Tensor<double> x({2}, {1.0, 2.0});
    auto g = fd_grad(
        [](const Tensor<double>& t) {
            double s = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
            return s;
        },
        x, 1e-5);
    REQUIRE(std::abs(g[0] - 2.0) < 1e-8);
    REQUIRE(std::abs(g[1] - 4.0) < 1e-8);
}

TEST_CASE("fd_grad matches the analytic silu derivative", "[tensor]") {
    Rng rng(29);
    auto x = rand_uniform<double>({4, 4}, rng, -2.0, 2.0);
    auto g = fd_grad(
        [](const Tensor<double>& t) {
            double s = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i)
                s += t[i] / (1.0 + std::exp(-t[i]));
            return s;
        },
        x, 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        const double want = s + x[i] * s * (1.0 - s);
        REQUIRE(std::abs(g[i] - want) < 1e-6);
    }
    REQUIRE_THROWS(fd_grad([](const Tensor<double>&) { return 0.0; }, x, 0.0));
}

TEST_CASE("scaled gradient error measure", "[tensor]") {
    Tensor<double> a({3}, {0.0, 2.0, 100.0});
    Tensor<double> b({3}, {1e-6, 2.0, 100.0 + 1e-4});
    const double e = max_scaled_error(a, b);
    REQUIRE(e == Catch::Approx(1e-6).margin(1e-12));
    REQUIRE(max_scaled_error(a, a) == 0.0);
}
