#include <cmath>

#include "doctest.h"
#include "model/fusion.hpp"
#include "support/naive_block.hpp"
#include "support/test_util.hpp"
#include "tensor/gradcheck.hpp"

using namespace csts;
using namespace csts::model;
using csts::testing::max_abs_diff;
using csts::testing::naive_block;
using csts::testing::random_tensor;
using csts::testing::randomize;
using csts::testing::rows_of;

namespace {

struct Fixture {
    ParamStore ps;
    Rng rng{11};
    TransformerBlock block;
    explicit Fixture(Index d, Index heads = 1, std::uint64_t seed = 11) : rng(seed) {
        block = TransformerBlock::make(ps, "blk", d, heads, 4.0, rng);
        randomize(ps, rng);
    }
};

ModelConfig small_cfg(FusionStrategy s) {
    ModelConfig c = ModelConfig::desk();
    c.strategy = s;
    c.contrastive = false;
    return c;
}

} // namespace

TEST_CASE("token pool: mean special case, zero input and shape") {
    ParamStore ps;
    Rng rng(1);
    const Index m = 4, d = 3;
    TokenPool pool = TokenPool::make(ps, "pool", m, d, rng);
    // Uniform averaging weights: out[c] = mean_j x[j, c].
    Tensor w = pool.map.weight;
    auto wd = w.mutable_data();
    for (Index r = 0; r < m * d; ++r)
        for (Index c = 0; c < d; ++c) wd[static_cast<std::size_t>(r * d + c)] = (r % d == c) ? 1.0 / m : 0.0;
    Tensor x = random_tensor(rng, {2, m, d});
    Tensor z = pool(x);
    CHECK(z.shape() == Shape{2, 1, d});
    for (Index t = 0; t < 2; ++t)
        for (Index c = 0; c < d; ++c) {
            double mu = 0.0;
            for (Index j = 0; j < m; ++j) mu += x[(t * m + j) * d + c];
            CHECK(std::abs(z[t * d + c] - mu / m) < 1e-12);
        }
    Tensor zero = pool(Tensor::zeros({2, m, d}));
    for (double v : zero.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(pool(Tensor::zeros({2, m + 1, d})), DimensionError);
}

TEST_CASE("spatial fusion with one frame equals unmasked attention") {
    Fixture f(4);
    Tensor vis = random_tensor(f.rng, {1, 3, 4});
    Tensor aud = random_tensor(f.rng, {1, 1, 4});
    Tensor u = spatial_fusion(f.block, vis, aud);
    Tensor z = reshape(concat({vis, aud}, 1), {4, 4});
    Tensor ref = f.block(z);
    CHECK(max_abs_diff(u.data(), ref.data()) == 0.0);
}

TEST_CASE("spatial fusion equals independent per-frame attention (100 random instances)") {
    Rng meta(2024);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const Index t = 1 + static_cast<Index>(meta.below(3));
        const Index n = 1 + static_cast<Index>(meta.below(4));
        const Index d = 2 * (1 + static_cast<Index>(meta.below(4)));
        const Index heads = (d % 2 == 0 && meta.bernoulli(0.5)) ? 2 : 1;
        Fixture f(d, heads, 100 + static_cast<std::uint64_t>(inst));
        Tensor vis = random_tensor(f.rng, {t, n, d}, -2.0, 2.0);
        Tensor aud = random_tensor(f.rng, {t, 1, d}, -2.0, 2.0);
        Tensor u = spatial_fusion(f.block, vis, aud);
        REQUIRE(u.shape() == Shape{t, n + 1, d});
        for (Index i = 0; i < t; ++i) {
            auto frame = rows_of(vis, i * n, n);
            frame.push_back(rows_of(aud, i, 1)[0]);
            const auto ref = naive_block(f.block, frame);
            for (Index r = 0; r <= n; ++r)
                for (Index c = 0; c < d; ++c)
                    worst = std::max(worst, std::abs(ref[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] -
                                                     u[((i * (n + 1)) + r) * d + c]));
        }
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("spatial fusion mask: cross-frame weights are zero and perturbations do not leak") {
    Fixture f(6, 2);
    const Index t = 3, n = 4, d = 6;
    Tensor vis = random_tensor(f.rng, {t, n, d});
    Tensor aud = random_tensor(f.rng, {t, 1, d});
    Tensor att;
    Tensor u = spatial_fusion(f.block, vis, aud, &att);
    REQUIRE(att.shape() == Shape{2, t * (n + 1), t * (n + 1)});
    const Index len = t * (n + 1);
    for (Index h = 0; h < 2; ++h)
        for (Index i = 0; i < len; ++i) {
            double row = 0.0;
            for (Index j = 0; j < len; ++j) {
                const double w = att[(h * len + i) * len + j];
                row += w;
                if (i / (n + 1) != j / (n + 1)) CHECK(w == 0.0);
            }
            CHECK(std::abs(row - 1.0) < 1e-6);
        }
    // Perturb every token of frame 1 (visual and audio).
    for (Index j = 0; j < t; ++j) {
        std::vector<double> pv(vis.data().begin(), vis.data().end()), pa(aud.data().begin(), aud.data().end());
        for (Index k = j * n * d; k < (j + 1) * n * d; ++k) pv[static_cast<std::size_t>(k)] += 0.37;
        for (Index k = j * d; k < (j + 1) * d; ++k) pa[static_cast<std::size_t>(k)] -= 0.5;
        Tensor u2 = spatial_fusion(f.block, Tensor::from_data(vis.shape(), pv), Tensor::from_data(aud.shape(), pa));
        for (Index i = 0; i < t; ++i) {
            bool same = true, changed = false;
            for (Index k = i * (n + 1) * d; k < (i + 1) * (n + 1) * d; ++k) {
                if (u2[k] != u[k]) same = false;
                if (std::abs(u2[k] - u[k]) > 1e-9) changed = true;
            }
            if (i != j) CHECK(same);
            else CHECK(changed);
        }
    }
}

TEST_CASE("spatial fusion gradient does not cross frames") {
    Fixture f(4);
    Rng rng(5);
    Tensor vis = random_tensor(rng, {3, 2, 4}).set_requires_grad(true);
    Tensor aud = random_tensor(rng, {3, 1, 4}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor u = spatial_fusion(f.block, vis, aud);
        tape.backward(sum(slice(u, 0, 0, 1)));  // depends on frame 0 only
    }
    for (Index k = 2 * 4; k < vis.numel(); ++k) CHECK(vis.grad()[static_cast<std::size_t>(k)] == 0.0);
    for (Index k = 4; k < aud.numel(); ++k) CHECK(aud.grad()[static_cast<std::size_t>(k)] == 0.0);
    double g0 = 0.0;
    for (Index k = 0; k < 8; ++k) g0 += std::abs(vis.grad()[static_cast<std::size_t>(k)]);
    CHECK(g0 > 0.0);
}

TEST_CASE("temporal fusion: naive oracle and uniform attention") {
    Fixture f(4, 1, 77);
    Tensor zv = random_tensor(f.rng, {2, 1, 4});
    Tensor za = random_tensor(f.rng, {2, 1, 4});
    Tensor u = temporal_fusion(f.block, zv, za);
    CHECK(u.shape() == Shape{4, 1, 4});
    auto rows = rows_of(zv, 0, 2);
    for (auto& r : rows_of(za, 0, 2)) rows.push_back(r);
    const auto ref = naive_block(f.block, rows);
    double worst = 0.0;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(ref[r][c] - u[static_cast<Index>(r * 4 + c)]));
    CHECK(worst < 1e-10);

    // Identical tokens: every attention row is uniform, so the attention
    // output is the (output-projected) value of that token.
    Tensor x = Tensor::from_data({6, 4}, {0.1, -0.2, 0.3, 0.4, 0.1, -0.2, 0.3, 0.4, 0.1, -0.2, 0.3, 0.4,
                                          0.1, -0.2, 0.3, 0.4, 0.1, -0.2, 0.3, 0.4, 0.1, -0.2, 0.3, 0.4});
    Tensor att;
    Tensor y = f.block.attn(x, Tensor(), &att);
    Tensor v = f.block.attn.out(f.block.attn.v(slice(x, 0, 0, 1)));
    for (Index r = 0; r < 6; ++r)
        for (Index c = 0; c < 4; ++c) CHECK(std::abs(y[r * 4 + c] - v[c]) < 1e-12);
    for (double w : att.data()) CHECK(std::abs(w - 1.0 / 6.0) < 1e-12);
    CHECK_THROWS_AS(temporal_fusion(f.block, zv, random_tensor(f.rng, {3, 1, 4})), DimensionError);
}

TEST_CASE("merge reweight: split views, identity and annihilator") {
    Rng rng(3);
    const Index t = 2, n = 3, m = 5, d = 4;
    Tensor vis = random_tensor(rng, {t, n, d});
    Tensor aud = random_tensor(rng, {t, m, d});
    FusionBundle b;
    b.u_s = random_tensor(rng, {t, n + 1, d});
    b.u_t = concat({Tensor::ones({t, 1, d}), Tensor::zeros({t, 1, d})}, 0);
    merge_reweight(b, vis, aud);
    CHECK(b.u_vs.shape() == Shape{t, n, d});
    CHECK(b.u_as.shape() == Shape{t, 1, d});
    CHECK(b.u_vt.shape() == Shape{t, 1, d});
    CHECK(b.u_at.shape() == Shape{t, 1, d});
    for (Index i = 0; i < t; ++i)
        for (Index c = 0; c < d; ++c) {
            for (Index j = 0; j < n; ++j) CHECK(b.u_vs[(i * n + j) * d + c] == b.u_s[(i * (n + 1) + j) * d + c]);
            CHECK(b.u_as[i * d + c] == b.u_s[(i * (n + 1) + n) * d + c]);
        }
    CHECK(max_abs_diff(b.u_v.data(), b.u_vs.data()) == 0.0);
    for (double v : b.u_a.data()) CHECK(v == 0.0);

    // General case: broadcast over tokens, channel-wise per frame.
    FusionBundle g;
    g.u_s = b.u_s;
    g.u_t = random_tensor(rng, {2 * t, 1, d});
    merge_reweight(g, vis, aud);
    for (Index i = 0; i < t; ++i)
        for (Index j = 0; j < m; ++j)
            for (Index c = 0; c < d; ++c)
                CHECK(g.u_a[(i * m + j) * d + c] == aud[(i * m + j) * d + c] * g.u_t[(t + i) * d + c]);
}

TEST_CASE("baseline fusions") {
    Rng rng(9);
    {
        ModelConfig c = small_cfg(FusionStrategy::concat);
        ParamStore ps;
        BaselineFusion f(c, ps, rng);
        Tensor out = f(random_tensor(rng, {4, 16, 32}), random_tensor(rng, {4, 16, 32}));
        CHECK(out.shape() == Shape{4, 16, 64});
        CHECK(c.decoder_in_dim() == 64);
        CHECK(ps.count() == 0);
    }
    {
        ModelConfig c = small_cfg(FusionStrategy::linear);
        ParamStore ps;
        BaselineFusion f(c, ps, rng);
        Tensor out = f(Tensor::zeros({4, 16, 32}), Tensor::zeros({4, 16, 32}));
        CHECK(out.shape() == Shape{4, 16, 32});
        for (double v : out.data()) CHECK(v == 0.0);
    }
    {
        ModelConfig c = small_cfg(FusionStrategy::bilinear);
        ParamStore ps;
        BaselineFusion f(c, ps, rng);
        randomize(ps, rng, 0.2);
        Tensor vis = random_tensor(rng, {4, 16, 32});
        Tensor aud = random_tensor(rng, {4, 16, 32});
        Tensor out = f(vis, aud);
        CHECK(out.shape() == Shape{4, 16, 32});
        // Bilinear form at one position checked by explicit triple sum.
        Tensor rv = ps.get("fusion.bilinear.reduce_v.weight"), bv = ps.get("fusion.bilinear.reduce_v.bias");
        Tensor ra = ps.get("fusion.bilinear.reduce_a.weight"), ba = ps.get("fusion.bilinear.reduce_a.bias");
        Tensor w = ps.get("fusion.bilinear.weight"), bb = ps.get("fusion.bilinear.bias");
        const Index l = 5, o = 7, d = 32, len = 64;
        std::vector<double> xv(d), xa(d);
        for (Index i = 0; i < d; ++i) {
            double sv = bv[l], sa = ba[l];
            for (Index p = 0; p < len; ++p) {
                sv += vis[p * d + i] * rv[p * len + l];
                sa += aud[p * d + i] * ra[p * len + l];
            }
            xv[static_cast<std::size_t>(i)] = sv;
            xa[static_cast<std::size_t>(i)] = sa;
        }
        double ref = bb[o];
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) ref += xv[static_cast<std::size_t>(i)] * w[i * d * d + o * d + j] * xa[static_cast<std::size_t>(j)];
        CHECK(std::abs(out[l * d + o] - ref) < 1e-10);
    }
    CHECK_THROWS_AS(parse_strategy("gated"), ConfigError);
}

TEST_CASE("vanilla SA with the cross-frame mask reproduces spatial fusion") {
    Fixture f(6);
    const Index t = 3, n = 4, d = 6;
    Tensor vis = random_tensor(f.rng, {t, n, d});
    Tensor aud = random_tensor(f.rng, {t, 1, d});
    Tensor u = spatial_fusion(f.block, vis, aud);
    Tensor v = vanilla_sa_fuse(f.block, vis, aud, block_diagonal_mask(t, n + 1));
    CHECK(max_abs_diff(v.data(), slice(u, 1, 0, n).data()) < 1e-10);
}

TEST_CASE("spatial correlation map") {
    const Index t = 2, n = 4;
    const Index len = t * (n + 1);
    const Dims3 grid{t, 2, 2};
    Tensor uniform = Tensor::full({1, len, len}, 1.0 / static_cast<double>(len));
    Tensor m = spatial_correlation_map(uniform, t, grid);
    CHECK(m.shape() == Shape{2, 2, 2});
    for (double v : m.data()) CHECK(std::abs(v - 0.25) < 1e-12);

    // A dominant key saturates the softmax into a one-hot map.
    std::vector<double> logits(static_cast<std::size_t>(len * len), 0.0);
    logits[static_cast<std::size_t>(4 * len + 2)] = 1000.0;
    logits[static_cast<std::size_t>(9 * len + 5 + 1)] = 1000.0;
    Tensor sat = softmax_last(Tensor::from_data({1, len, len}, logits));
    Tensor h = spatial_correlation_map(sat, t, grid);
    for (Index k = 0; k < 8; ++k) CHECK(h[k] == ((k == 2 || k == 5) ? 1.0 : 0.0));
    CHECK_THROWS_AS(spatial_correlation_map(Tensor(), t, grid), StateError);

    // Captured from a real fusion pass at desk width.
    Fixture f(8);
    Tensor att;
    spatial_fusion(f.block, random_tensor(f.rng, {4, 16, 8}), random_tensor(f.rng, {4, 1, 8}), &att);
    Tensor real = spatial_correlation_map(att, 4, {4, 4, 4});
    CHECK(real.shape() == Shape{4, 4, 4});
    for (Index i = 0; i < 4; ++i) {
        double s = 0.0;
        for (Index k = 0; k < 16; ++k) s += real[i * 16 + k];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("gradient check through spatial, temporal fusion and merge") {
    ModelConfig c = small_cfg(FusionStrategy::sts);
    ParamStore ps;
    Rng rng(4);
    SeparableFusion fusion(c, ps, rng);
    Tensor vis = random_tensor(rng, {4, 16, 32});
    Tensor aud = random_tensor(rng, {4, 16, 32});
    Tensor probe = random_tensor(rng, {4, 16, 32});
    auto loss = [&]() {
        FusionBundle b = fusion(vis, aud, false, nullptr);
        return add(sum(mul(b.u_v, probe)), mean(b.u_a));
    };
    std::vector<Index> idx;
    for (Index i = 0; i < vis.numel(); i += 97) idx.push_back(i);
    auto r = finite_diff_check(loss, vis, 1e-5, idx);
    CHECK(r.max_rel_error < 1e-4);

    // Parameters of every fusion layer as well.
    for (const auto& p : ps.params()) {
        Tensor w = p.value;
        std::vector<Index> pi{0, w.numel() / 2, w.numel() - 1};
        auto rp = finite_diff_check(loss, w, 1e-5, pi);
        INFO(p.name);
        CHECK(rp.max_rel_error < 1e-4);
    }
}
