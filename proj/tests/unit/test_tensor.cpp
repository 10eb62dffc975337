#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support/test_util.hpp"
#include "tensor/gradcheck.hpp"
#include "tensor/ops.hpp"

using namespace csts;
using csts::testing::max_abs_diff;
using csts::testing::random_tensor;

namespace {

// Naive triple loop, independent of the batched kernel.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
    const Index m = a.size(0), k = a.size(1), n = b.size(1);
    std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) {
            double s = 0.0;
            for (Index p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[static_cast<std::size_t>(i * n + j)] = s;
        }
    return c;
}

Tensor leaf(Tensor t) { return t.set_requires_grad(true), t; }

} // namespace

TEST_CASE("matmul matches hand and naive products") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    auto c = matmul(eye, b);
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{3, 4, 5, 6});

    auto r = matmul(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({2, 1}, {3, 4}));
    CHECK(r.shape() == Shape{1, 1});
    CHECK(r.item() == 11.0);

    Rng rng(7);
    auto x = random_tensor(rng, {4, 5});
    auto y = random_tensor(rng, {5, 3});
    CHECK(max_abs_diff(matmul(x, y).data(), naive_matmul(x, y)) < 1e-12);
}

TEST_CASE("matmul broadcasts leading dims and rejects mismatches") {
    Rng rng(3);
    auto a = random_tensor(rng, {2, 3, 4});
    auto b = random_tensor(rng, {4, 2});
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 2});
    for (Index bi = 0; bi < 2; ++bi) {
        auto ab = reshape(slice(a, 0, bi, 1), {3, 4});
        auto ref = naive_matmul(ab, b);
        auto cb = reshape(slice(c, 0, bi, 1), {3, 2});
        CHECK(max_abs_diff(cb.data(), ref) < 1e-12);
    }
    try {
        matmul(random_tensor(rng, {2, 3}), random_tensor(rng, {4, 2}));
        FAIL("expected dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("softmax_last values, stability and shift invariance") {
    auto u = softmax_last(Tensor::from_data({3}, {0, 0, 0}));
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto s = softmax_last(Tensor::from_data({2}, {1000, 0}));
    CHECK(std::abs(s[0] - 1.0) < 1e-12);
    CHECK(std::abs(s[1]) < 1e-12);

    // Direct exp/sum evaluation as the oracle.
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    auto p = softmax_last(Tensor::from_data({3}, {1, 2, 3}));
    CHECK(std::abs(p[0] - std::exp(1.0) / z) < 1e-15);
    CHECK(std::abs(p[1] - std::exp(2.0) / z) < 1e-15);
    CHECK(std::abs(p[2] - std::exp(3.0) / z) < 1e-15);
    CHECK(std::abs(p[0] - 0.09003) < 1e-5);
    CHECK(std::abs(p[1] - 0.24473) < 1e-5);
    CHECK(std::abs(p[2] - 0.66524) < 1e-5);

    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor(rng, {3, 7}, -20, 20);
        auto y = softmax_last(x);
        auto y2 = softmax_last(add_scalar(x, rng.uniform(-50, 50)));
        for (Index r = 0; r < 3; ++r) {
            double total = 0.0;
            for (Index j = 0; j < 7; ++j) total += y[r * 7 + j];
            CHECK(std::abs(total - 1.0) < 1e-6);
        }
        CHECK(max_abs_diff(y.data(), y2.data()) < 1e-9);
    }
}

TEST_CASE("layer_norm examples") {
    auto g1 = Tensor::ones({4});
    auto b0 = Tensor::zeros({4});
    auto z = layer_norm(Tensor::full({4}, 2.5), g1, b0);
    for (double v : z.data()) CHECK(v == 0.0);

    auto y = layer_norm(Tensor::from_data({2}, {1, 3}), Tensor::ones({2}), Tensor::zeros({2}));
    CHECK(std::abs(y[0] + 1.0) < 1e-4);
    CHECK(std::abs(y[1] - 1.0) < 1e-4);

    Rng rng(5);
    auto c = layer_norm(random_tensor(rng, {3, 4}), Tensor::zeros({4}), Tensor::full({4}, 0.7));
    for (double v : c.data()) CHECK(v == 0.7);

    CHECK_THROWS_AS(layer_norm(random_tensor(rng, {3, 4}), Tensor::ones({5}), Tensor::zeros({5})), DimensionError);
}

TEST_CASE("backward on simple losses") {
    auto x = leaf(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}));
    {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = sum(x);
        }
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    auto v = leaf(Tensor::from_data({2}, {1, 2}));
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = sum(mul(v, v));
    }
    tape.backward(loss);
    CHECK(v.grad()[0] == 4.0 / 2.0 * 1.0);
    CHECK(v.grad()[1] == 4.0);

    // Non-participating leaf on the tape receives zero.
    auto w = leaf(Tensor::from_data({2}, {3, 4}));
    auto q = leaf(Tensor::from_data({2}, {1, 1}));
    Tape t2;
    Tensor l2;
    {
        TapeScope scope(t2);
        auto unused = mul(w, w);
        l2 = sum(q);
        (void)unused;
    }
    t2.backward(l2);
    REQUIRE(w.has_grad());
    CHECK(w.grad()[0] == 0.0);
    CHECK(w.grad()[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = leaf(Tensor::from_data({2}, {1, 2}));
    Tape tape;
    Tensor y;
    {
        TapeScope scope(tape);
        y = mul_scalar(x, 2.0);
    }
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("finite_diff_check self tests") {
    auto x = Tensor::from_data({2}, {1, 2});
    auto r = finite_diff_check([&] { return sum(mul(x, x)); }, x);
    CHECK(r.max_rel_error < 1e-8);

    Rng rng(21);
    auto logits = random_tensor(rng, {8}, -2, 2);
    std::vector<double> t(8);
    double ts = 0.0;
    for (double& v : t) ts += (v = rng.uniform(0.1, 1.0));
    for (double& v : t) v /= ts;
    auto target = Tensor::from_data({8}, t);
    auto kld = [&] {
        auto p = softmax_last(logits);
        auto lt = Tensor::from_data({8}, [&] {
            std::vector<double> lv;
            for (double v : t) lv.push_back(std::log(v));
            return lv;
        }());
        return sum(mul(target, sub(lt, log(add_scalar(p, 1e-12)))));
    };
    CHECK(finite_diff_check(kld, logits).max_rel_error < 1e-6);
}

TEST_CASE("finite_diff_check reports NaN as failure") {
    auto x = Tensor::from_data({2}, {1, 2});
    auto r = finite_diff_check([&] { return sum(log(add_scalar(x, -1.5))); }, x);
    CHECK(r.non_finite);
    CHECK(std::isinf(r.max_rel_error));
}

TEST_CASE("gradient of every differentiable op matches central differences") {
    Rng rng(1234);
    auto check = [&](const char* name, Tensor x, const std::function<Tensor()>& f) {
        INFO(std::string(name));
        CHECK(finite_diff_check(f, x).max_rel_error < 1e-6);
    };
    for (int trial = 0; trial < 3; ++trial) {
        auto a = random_tensor(rng, {2, 3, 4});
        auto b = random_tensor(rng, {3, 1});
        auto w = random_tensor(rng, {1, 3, 4});
        auto pos = random_tensor(rng, {2, 3, 4}, 0.5, 2.0);
        auto probe = random_tensor(rng, {2, 3, 4});
        auto weigh = [&](const Tensor& y) { return sum(mul(y, random_tensor(rng, y.shape()).detach())); };
        // Fixed random projections make the loss sensitive to every output.
        auto proj = [&](const Tensor& y) {
            Rng r2(99);
            return sum(mul(y, random_tensor(r2, y.shape())));
        };
        (void)weigh;
        check("add", a, [&] { return proj(add(a, b)); });
        check("add rhs", b, [&] { return proj(add(a, b)); });
        check("sub", b, [&] { return proj(sub(a, b)); });
        check("mul", a, [&] { return proj(mul(a, w)); });
        check("mul rhs", w, [&] { return proj(mul(a, w)); });
        check("div", pos, [&] { return proj(div(a, pos)); });
        check("div num", a, [&] { return proj(div(a, pos)); });
        check("exp", a, [&] { return proj(exp(a)); });
        check("log", pos, [&] { return proj(log(pos)); });
        check("gelu", a, [&] { return proj(gelu(a)); });
        check("sum_axis", a, [&] { return proj(sum(a, 1)); });
        check("mean_axis", a, [&] { return proj(mean(a, 2, true)); });
        check("reshape", a, [&] { return proj(reshape(a, {6, 4})); });
        check("permute", a, [&] { return proj(permute(a, {2, 0, 1})); });
        check("concat", a, [&] { return proj(concat({a, probe, a}, 1)); });
        check("slice", a, [&] { return proj(slice(a, 2, 1, 2)); });
        check("broadcast_to", b, [&] { return proj(broadcast_to(b, {2, 3, 4})); });
        check("repeat_axis", a, [&] { return proj(repeat_axis(a, 1, 2)); });
        auto m1 = random_tensor(rng, {2, 3, 5});
        auto m2 = random_tensor(rng, {5, 4});
        check("matmul lhs", m1, [&] { return proj(matmul(m1, m2)); });
        check("matmul rhs", m2, [&] { return proj(matmul(m1, m2)); });
        check("softmax_last", a, [&] { return proj(softmax_last(a)); });
        check("log_softmax_last", a, [&] { return proj(log_softmax_last(a)); });
        auto gamma = random_tensor(rng, {4});
        auto beta = random_tensor(rng, {4});
        check("layer_norm x", a, [&] { return proj(layer_norm(a, gamma, beta)); });
        check("layer_norm gamma", gamma, [&] { return proj(layer_norm(a, gamma, beta)); });
        check("layer_norm beta", beta, [&] { return proj(layer_norm(a, gamma, beta)); });
        auto lw = random_tensor(rng, {4, 6});
        auto lb = random_tensor(rng, {6});
        check("linear x", a, [&] { return proj(linear(a, lw, lb)); });
        check("linear w", lw, [&] { return proj(linear(a, lw, lb)); });
        check("linear b", lb, [&] { return proj(linear(a, lw, lb)); });
        check("l2_normalize_last", a, [&] { return proj(l2_normalize_last(a)); });
        auto vol = random_tensor(rng, {4, 6, 6, 2});
        check("extract_patches", vol, [&] { return proj(extract_patches(vol, {3, 3, 2}, {1, 2, 2}, {1, 1, 0})); });
        check("interp_linear_axis", vol, [&] { return proj(interp_linear_axis(vol, 1, 9)); });
        check("trilinear_resize", vol, [&] { return proj(trilinear_resize(vol, {8, 3, 11})); });
    }
}

TEST_CASE("broadcast mul equals explicit tiling (random shapes up to rank 4)") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        const int rank = 1 + static_cast<int>(rng.below(4));
        Shape full, part;
        for (int d = 0; d < rank; ++d) {
            const Index e = 1 + static_cast<Index>(rng.below(4));
            full.push_back(e);
            part.push_back(rng.bernoulli(0.5) ? 1 : e);
        }
        // Drop some leading dims of the broadcast operand.
        const auto drop = rng.below(static_cast<std::uint64_t>(rank));
        part.erase(part.begin(), part.begin() + static_cast<long>(drop));
        auto a = random_tensor(rng, full);
        auto b = random_tensor(rng, part);
        auto direct = mul(a, b);
        auto tiled = mul(broadcast_to(b, full), a);
        CHECK(direct.shape() == full);
        CHECK(max_abs_diff(direct.data(), tiled.data()) == 0.0);
    }
}

TEST_CASE("backward is deterministic") {
    Rng rng(8);
    auto a = random_tensor(rng, {3, 5});
    auto w = random_tensor(rng, {5, 4});
    a.set_requires_grad(true);
    w.set_requires_grad(true);
    auto run = [&] {
        a.zero_grad();
        w.zero_grad();
        Tape tape;
        Tensor loss;
        {
            TapeScope s(tape);
            loss = sum(log_softmax_last(gelu(matmul(a, w))));
        }
        tape.backward(loss);
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);
}

TEST_CASE("NaN policy names the op") {
    auto x = Tensor::from_data({2}, {1e308, 1e308});
    try {
        mul(x, x);
        FAIL("expected numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("mul") != std::string::npos);
    }
}

TEST_CASE("extract_patches arithmetic and trilinear identity") {
    auto frames = Tensor::zeros({8, 32, 32, 3});
    auto p = extract_patches(frames, {2, 4, 4}, {2, 4, 4}, {0, 0, 0});
    CHECK(p.shape() == Shape{4, 8, 8, 96});
    CHECK(patch_grid({8, 256, 256}, {3, 7, 7}, {2, 4, 4}, {1, 3, 3}) == Dims3{4, 64, 64});
    CHECK_THROWS_AS(extract_patches(Tensor::zeros({8, 30, 32, 3}), {2, 4, 4}, {2, 4, 4}, {0, 0, 0}), DimensionError);

    Rng rng(2);
    auto v = random_tensor(rng, {2, 3, 4});
    auto same = trilinear_resize(v, {2, 3, 4});
    CHECK(max_abs_diff(same.data(), v.data()) == 0.0);
    // Constant volumes stay constant after resize.
    auto c = trilinear_resize(Tensor::full({2, 3, 4}, 1.5), {4, 9, 7});
    for (double x : c.data()) CHECK(std::abs(x - 1.5) < 1e-12);
}
