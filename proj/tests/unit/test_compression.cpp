#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "vcon/compression.hpp"
#include "vcon/errors.hpp"

using namespace vcon;

namespace {

CompressionSpec spec_of(CompressionSpec::Variant v) { return CompressionSpec{v}; }

Tensor mask_matrix(std::initializer_list<std::initializer_list<double>> rows) { return Tensor::matrix(rows); }

std::size_t row_kept(const Tensor& mask, std::size_t r, std::size_t from, std::size_t len) {
    std::size_t k = 0;
    for (std::size_t c = from; c < from + len; ++c) k += mask.at(r, c) != 0.0;
    return k;
}

Tensor orthogonality_defect(const Tensor& q) {
    Tensor g = matmul_value(q.transposed(), q);
    for (std::size_t i = 0; i < g.rows(); ++i) g.at(i, i) -= 1.0;
    return g;
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.values()) m = std::max(m, std::abs(v));
    return m;
}

ad::Var run_block(Block& b, ad::Tape& tape, const Tensor& x) {
    ForwardContext ctx(tape);
    return b.forward(ctx, tape.leaf(x));
}

}  // namespace

TEST_CASE("spec validation") {
    CHECK_NOTHROW(spec_of(PruneUnstructuredLayer{0.0}).validate());
    CHECK_THROWS_AS(spec_of(PruneUnstructuredLayer{1.0}).validate(), ConfigError);
    CHECK_THROWS_AS(spec_of(PruneStructured{-0.1}).validate(), ConfigError);
    CHECK_THROWS_AS(spec_of(PruneNM{3, 2}).validate(), ConfigError);
    CHECK_THROWS_AS(spec_of(PruneNM{0, 2}).validate(), ConfigError);
    CHECK_THROWS_AS(spec_of(LowRank{0}).validate(), ConfigError);
    CHECK_THROWS_AS(spec_of(LowRank{5}).validate_for(4, 8), ContractError);
    CHECK(spec_of(BinaryQuant{}).tag() == "binary");
    CHECK(spec_of(PruneNM{1, 16}).tag() == "prune_nm");
}

TEST_CASE("magnitude_scores") {
    CHECK(magnitude_scores(Tensor::matrix({{-2, 0.5}})) == Tensor::matrix({{2, 0.5}}));
    CHECK(magnitude_scores(Tensor({2, 3})) == Tensor({2, 3}));
    std::mt19937_64 rng(1);
    const Tensor w = oracle::random_tensor(rng, {4, 4});
    Tensor neg = w;
    for (auto& v : neg.values()) v = -v;
    CHECK(magnitude_scores(w) == magnitude_scores(neg));
}

TEST_CASE("prune_layerwise examples") {
    const Tensor w = Tensor::matrix({{0.1, -2.0}, {0.5, 0.05}});
    CHECK(prune_layerwise(w, 0.0).bits == Tensor({2, 2}, 1.0));
    CHECK(prune_layerwise(w, 0.5).bits == mask_matrix({{0, 1}, {1, 0}}));
    CHECK(prune_layerwise(Tensor({2, 2}, 0.7), 0.5).bits == mask_matrix({{0, 0}, {1, 1}}));
    CHECK(prune_count(0.95, 4096) == 3891);
    CHECK(prune_count(0.7, 10) == 7);
}

TEST_CASE("prune_global examples") {
    std::vector<Tensor> one{Tensor::matrix({{0.1, -2.0}, {0.5, 0.05}})};
    CHECK(prune_global(one, 0.5)[0].bits == prune_layerwise(one[0], 0.5).bits);
    std::vector<Tensor> two{Tensor::matrix({{10, 10}}), Tensor::matrix({{0.1, 0.1}})};
    const auto m = prune_global(two, 0.5);
    CHECK(m[0].bits == mask_matrix({{1, 1}}));
    CHECK(m[1].bits == mask_matrix({{0, 0}}));
    for (const auto& mk : prune_global(two, 0.0)) CHECK(mk.zeros() == 0);
    // Ties across layers: earlier layer pruned first.
    std::vector<Tensor> tie{Tensor::matrix({{1, 1}}), Tensor::matrix({{1, 1}})};
    const auto t = prune_global(tie, 0.5);
    CHECK(t[0].zeros() == 2);
    CHECK(t[1].zeros() == 0);
}

TEST_CASE("prune_nm examples") {
    const Tensor row = Tensor::matrix({{0.3, -0.7, 0.2, 0.1}});
    CHECK(prune_nm(row, 4, 4).bits == Tensor({1, 4}, 1.0));
    CHECK(prune_nm(row, 1, 4).bits == mask_matrix({{0, 1, 0, 0}}));
    std::mt19937_64 rng(2);
    CHECK(prune_nm(oracle::random_tensor(rng, {1, 8}), 1, 4).kept() == 2);
    // Trailing partial group of 3 under 2:4 keeps ceil(2*3/4) = 2.
    const auto partial = prune_nm(Tensor::matrix({{1, 2, 3, 4, 5, 6, 7}}), 2, 4);
    CHECK(partial.bits == mask_matrix({{0, 0, 1, 1, 0, 1, 1}}));
}

TEST_CASE("prune_structured examples") {
    CHECK(prune_structured(Tensor::matrix({{3, 4}, {0.1, 0}}), 0.0).kept() == 4);
    CHECK(prune_structured(Tensor::matrix({{3, 4}, {0.1, 0}}), 0.5).bits == mask_matrix({{1, 1}, {0, 0}}));
    std::mt19937_64 rng(3);
    const auto m = prune_structured(oracle::random_tensor(rng, {3, 5}), 0.5);
    CHECK(m.zeros() == 5);
}

TEST_CASE("pruning masks satisfy their invariants on random matrices") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> dim(1, 24);
    std::uniform_real_distribution<double> sp(0.0, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = dim(rng), m = dim(rng);
        const Tensor w = oracle::random_tensor(rng, {n, m});
        const double s = sp(rng);
        CAPTURE(n);
        CAPTURE(m);
        CAPTURE(s);

        const auto lw = prune_layerwise(w, s);
        CHECK(lw.zeros() == static_cast<std::size_t>(std::floor(s * static_cast<double>(n * m) + 1e-9)));
        // Every kept magnitude dominates every pruned one.
        double max_pruned = -1.0, min_kept = 1e300;
        for (std::size_t i = 0; i < w.size(); ++i)
            (lw.bits[i] != 0.0 ? min_kept : max_pruned) =
                lw.bits[i] != 0.0 ? std::min(min_kept, std::abs(w[i])) : std::max(max_pruned, std::abs(w[i]));
        CHECK(max_pruned <= min_kept);
        Tensor scaled = w;
        for (auto& v : scaled.values()) v *= 3.7;
        CHECK(prune_layerwise(scaled, s).bits == lw.bits);

        const Tensor w2 = oracle::random_tensor(rng, {dim(rng), dim(rng)});
        const auto g = prune_global(std::vector<Tensor>{w, w2}, s);
        CHECK(g[0].zeros() + g[1].zeros() ==
              static_cast<std::size_t>(std::floor(s * static_cast<double>(w.size() + w2.size()) + 1e-9)));

        std::uniform_int_distribution<std::size_t> gm(1, 8);
        const std::size_t group = gm(rng);
        const std::size_t keep = std::uniform_int_distribution<std::size_t>(1, group)(rng);
        const auto nm = prune_nm(w, keep, group);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t start = 0; start < m; start += group) {
                const std::size_t len = std::min(group, m - start);
                const std::size_t expect = len == group ? keep : (keep * len + group - 1) / group;
                CHECK(row_kept(nm.bits, r, start, len) == expect);
            }

        const auto st = prune_structured(w, s);
        std::size_t zero_rows = 0;
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t k = row_kept(st.bits, r, 0, m);
            CHECK((k == 0 || k == m));
            zero_rows += k == 0;
        }
        CHECK(zero_rows == static_cast<std::size_t>(std::floor(s * static_cast<double>(n) + 1e-9)));
    }
}

TEST_CASE("binarize_scaled") {
    const auto a = binarize_scaled(Tensor::matrix({{3, -4}}));
    CHECK(a.alpha == doctest::Approx(5.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(a.signs == mask_matrix({{1, -1}}));
    CHECK(binarize_scaled(Tensor::matrix({{0.25, 0.25}})).effective() == Tensor::matrix({{0.25, 0.25}}));
    const auto z = binarize_scaled(Tensor::matrix({{0}}));
    CHECK(z.signs == mask_matrix({{1}}));
    CHECK(z.alpha == 0.0);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor w = oracle::random_tensor(rng, {3, 7});
        const auto b = binarize_scaled(w);
        CHECK(b.alpha == frobenius_norm(w) / std::sqrt(21.0));
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(b.signs[i] == (w[i] >= 0 ? 1.0 : -1.0));
    }
}

TEST_CASE("truncated_svd examples") {
    Tensor d({3, 3});
    d.at(0, 0) = 3;
    d.at(1, 1) = 2;
    d.at(2, 2) = 1;
    const auto s = truncated_svd(d, 2);
    REQUIRE(s.singular_values.size() == 2);
    CHECK(s.singular_values[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(s.singular_values[1] == doctest::Approx(2.0).epsilon(1e-12));
    Tensor diff = d;
    const Tensor rec = s.reconstruct();
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= rec[i];
    CHECK(frobenius_norm(diff) == doctest::Approx(1.0).epsilon(1e-12));

    std::mt19937_64 rng(6);
    for (auto [n, m] : std::vector<std::pair<std::size_t, std::size_t>>{{5, 3}, {3, 5}, {4, 4}, {1, 6}, {7, 1}}) {
        const Tensor w = oracle::random_tensor(rng, {n, m});
        CHECK(max_abs_diff(truncated_svd(w, std::min(n, m)).reconstruct(), w) <= 1e-8);
    }
    CHECK_THROWS_AS(truncated_svd(d, 0), ContractError);
    CHECK_THROWS_AS(truncated_svd(d, 4), ContractError);
}

TEST_CASE("truncated_svd against the Jacobi eigen-oracle") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = trial == 0 ? 6 : dim(rng), m = trial == 0 ? 4 : dim(rng);
        const Tensor w = oracle::random_tensor(rng, {n, m});
        const auto ref = oracle::singular_values(w);
        double prev_err = 1e300;
        for (std::size_t r = 1; r <= std::min(n, m); ++r) {
            const auto s = truncated_svd(w, r);
            for (std::size_t i = 0; i < r; ++i) CHECK(std::abs(s.singular_values[i] - ref[i]) <= 1e-8);
            for (std::size_t i = 1; i < r; ++i) CHECK(s.singular_values[i] <= s.singular_values[i - 1]);
            CHECK(max_abs(orthogonality_defect(s.u)) <= 1e-8);
            CHECK(max_abs(orthogonality_defect(s.v)) <= 1e-8);
            Tensor diff = w;
            const Tensor rec = s.reconstruct();
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= rec[i];
            const double err2 = frobenius_norm(diff) * frobenius_norm(diff);
            double tail = 0.0;
            for (std::size_t i = r; i < ref.size(); ++i) tail += ref[i] * ref[i];
            CHECK(std::abs(err2 - tail) <= 1e-8);
            CHECK(err2 <= prev_err + 1e-12);
            prev_err = err2;
        }
    }
}

TEST_CASE("rank-deficient matrices complete an orthonormal basis") {
    const Tensor w = Tensor::matrix({{1, 2, 3}, {2, 4, 6}, {0, 0, 0}});
    const auto s = truncated_svd(w, 3);
    CHECK(s.singular_values[1] <= 1e-10);
    CHECK(max_abs(orthogonality_defect(s.u)) <= 1e-8);
    CHECK(max_abs(orthogonality_defect(s.v)) <= 1e-8);
    CHECK(max_abs_diff(s.reconstruct(), w) <= 1e-8);
}

TEST_CASE("factorize_layer") {
    DenseBlock id(Tensor::identity(3), Tensor::vector({1, 2, 3}), Activation::none);
    auto f = factorize_layer(id, 3);
    CHECK(max_abs_diff(matmul_value(f.factor_a().value, f.factor_b().value), Tensor::identity(3)) <= 1e-8);
    CHECK(f.bias().value == Tensor::vector({1, 2, 3}));
    CHECK(f.factor_a().trainable);
    CHECK(f.factor_b().trainable);
    CHECK(max_abs(orthogonality_defect(f.factor_a().value)) <= 1e-8);

    Tensor d({3, 3});
    d.at(0, 0) = 3;
    d.at(1, 1) = 2;
    d.at(2, 2) = 1;
    auto f1 = factorize_layer(DenseBlock(d, Tensor({3}), Activation::none), 1);
    Tensor expect({3, 3});
    expect.at(0, 0) = 3;
    CHECK(max_abs_diff(compressed_weight(f1), expect) <= 1e-8);

    DenseBlock big(Tensor({100, 100}, 0.5), Tensor({100}), Activation::none);
    CHECK(factorize_layer(big, 16).stored_param_count() == 3200 + 100);
    CHECK(param_count(spec_of(LowRank{16}), 100, 100) == 3200);
    CHECK_THROWS_AS(factorize_layer(DenseBlock(Tensor({2, 3}), Tensor({2}), Activation::none), 3), ContractError);
}

TEST_CASE("param_count") {
    CHECK(param_count(spec_of(LowRank{8}), 64, 64) == 1024);
    CHECK(param_count(spec_of(PruneUnstructuredLayer{0.95}), 64, 64) == 205);
    CHECK(param_count(spec_of(PruneNM{1, 16}), 64, 64) == 256);
    CHECK(param_count(spec_of(BinaryQuant{}), 64, 64) == 4096);
    CHECK(weight_bits(spec_of(BinaryQuant{}), 64, 64) == 4096 + 64);
    CHECK(param_count(spec_of(PruneStructured{0.5}), 3, 4) == 8);
    CHECK(low_rank_beneficial(8, 64, 64));
    CHECK_FALSE(low_rank_beneficial(32, 64, 64));
}

TEST_CASE("compressed_forward") {
    std::mt19937_64 rng(8);
    const Tensor x = oracle::random_tensor(rng, {5, 6});
    DenseBlock dense(oracle::random_tensor(rng, {4, 6}), oracle::random_tensor(rng, {4}), Activation::relu);
    ad::Tape t0;
    const Tensor ref = run_block(dense, t0, x).value();

    SUBCASE("all-ones mask equals dense") {
        auto cb = apply_compression(dense, spec_of(PruneUnstructuredLayer{0.0}));
        ad::Tape t;
        CHECK(run_block(cb, t, x).value() == ref);
    }
    SUBCASE("binary on constant-magnitude weights equals dense") {
        Tensor w = dense.weight().value;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i % 3 ? 0.5 : -0.5);
        DenseBlock cm(w, dense.bias().value, Activation::relu);
        auto cb = apply_compression(cm, spec_of(BinaryQuant{}));
        ad::Tape t1, t2;
        CHECK(max_abs_diff(run_block(cb, t1, x).value(), run_block(cm, t2, x).value()) == 0.0);
    }
    SUBCASE("full-rank low-rank equals dense") {
        auto cb = apply_compression(dense, spec_of(LowRank{4}));
        ad::Tape t;
        CHECK(max_abs_diff(run_block(cb, t, x).value(), ref) <= 1e-6);
    }
    SUBCASE("dimension mismatch") {
        auto cb = apply_compression(dense, spec_of(BinaryQuant{}));
        ad::Tape t;
        CHECK_THROWS_AS(run_block(cb, t, Tensor({2, 5})), DimensionError);
    }
}

TEST_CASE("STE gradient contract for pruning and binary") {
    std::mt19937_64 rng(9);
    for (const auto& spec : {spec_of(PruneUnstructuredLayer{0.6}), spec_of(PruneNM{1, 3}),
                             spec_of(PruneStructured{0.5}), spec_of(BinaryQuant{})}) {
        CAPTURE(spec.describe());
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor x = oracle::random_tensor(rng, {3, 6});
            const Tensor up = oracle::random_tensor(rng, {3, 4});
            DenseBlock dense(oracle::random_tensor(rng, {4, 6}), oracle::random_tensor(rng, {4}), Activation::none);
            auto cb = apply_compression(dense, spec);

            ad::Tape t;
            ForwardContext ctx(t);
            auto y = cb.forward(ctx, t.leaf(x));
            const auto g = t.backward(ad::sum(ad::mul(y, t.leaf(up))));
            const Tensor& gw = g.at(ctx.bind(cb.weight()));

            // Same point, transform replaced by identity: dL/dW = up^T x.
            const Tensor expect = matmul_value(up.transposed(), x);
            CHECK(max_abs_diff(gw, expect) <= 1e-12);
        }
    }
}

TEST_CASE("low-rank factor gradients match finite differences") {
    std::mt19937_64 rng(10);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        DenseBlock dense(oracle::random_tensor(rng, {5, 4}), oracle::random_tensor(rng, {5}), Activation::gelu_approx);
        auto cb = apply_compression(dense, spec_of(LowRank{2}));
        const Tensor x = oracle::random_tensor(rng, {3, 4});
        const Tensor up = oracle::random_tensor(rng, {3, 5});
        auto loss = [&] {
            ad::Tape t;
            ForwardContext ctx(t);
            return ad::sum(ad::mul(cb.forward(ctx, t.leaf(x)), t.leaf(up))).value().item();
        };
        ad::Tape t;
        ForwardContext ctx(t);
        const auto g = t.backward(ad::sum(ad::mul(cb.forward(ctx, t.leaf(x)), t.leaf(up))));
        for (Parameter* p : cb.parameters()) {
            const Tensor saved = p->value;
            auto f = [&](const Tensor& v) {
                p->value = v;
                const double l = loss();
                p->value = saved;
                return l;
            };
            worst = std::max(worst, oracle::rel_error(g.at(ctx.bind(*p)).values(),
                                                      oracle::numeric_gradient(f, saved).values()));
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("refresh_derived") {
    DenseBlock dense(Tensor::matrix({{0.1, -2.0}, {0.5, 0.05}}), Tensor({2}), Activation::none);
    auto cb = apply_compression(dense, spec_of(PruneUnstructuredLayer{0.5}));
    CHECK(cb.mask() == mask_matrix({{0, 1}, {1, 0}}));
    refresh_derived(cb);
    CHECK(cb.mask() == mask_matrix({{0, 1}, {1, 0}}));

    cb.weight().value.at(1, 0) = 0.0;   // kept -> smallest
    cb.weight().value.at(1, 1) = 9.0;   // pruned -> largest
    refresh_derived(cb);
    CHECK(cb.mask() == mask_matrix({{0, 1}, {0, 1}}));
    CHECK(PruneMask{cb.mask()}.zeros() == 2);

    cb.set_freeze_mask(true);
    cb.weight().value.at(0, 1) = 0.0;
    refresh_derived(cb);
    CHECK(cb.mask() == mask_matrix({{0, 1}, {0, 1}}));

    auto bin = apply_compression(dense, spec_of(BinaryQuant{}));
    bin.weight().value = Tensor::matrix({{3, -4}, {0, 0}});
    refresh_derived(bin);
    CHECK(bin.scaled_sign().alpha == doctest::Approx(2.5));
    CHECK(bin.scaled_sign().signs == mask_matrix({{1, -1}, {1, 1}}));

    auto lr = apply_compression(dense, spec_of(LowRank{1}));
    const Tensor before = compressed_weight(lr);
    refresh_derived(lr);
    CHECK(compressed_weight(lr) == before);
}

TEST_CASE("compressed block parameter sets") {
    DenseBlock dense(Tensor({4, 6}, 0.3), Tensor({4}), Activation::none);
    CHECK(apply_compression(dense, spec_of(LowRank{2})).parameters().size() == 3);
    CHECK(apply_compression(dense, spec_of(BinaryQuant{})).parameters().size() == 2);
    CHECK(apply_compression(dense, spec_of(PruneNM{1, 2})).stored_param_count() == 12 + 4);
}
