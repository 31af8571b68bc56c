#include <doctest.h>

#include <random>

#include "support/oracles.hpp"
#include "vcon/errors.hpp"
#include "vcon/model.hpp"

using namespace vcon;

namespace {

Network single(Tensor w, Tensor b, Activation act = Activation::none) {
    Network net;
    net.append(std::make_unique<DenseBlock>(std::move(w), std::move(b), act));
    return net;
}

std::vector<const DenseBlock*> dense_blocks(const Network& net) {
    std::vector<const DenseBlock*> out;
    for (std::size_t i = 0; i < net.size(); ++i) out.push_back(dynamic_cast<const DenseBlock*>(&net.block(i)));
    return out;
}

}  // namespace

TEST_CASE("forward examples") {
    auto id = single(Tensor::identity(2), Tensor::vector({0, 0}));
    const Tensor x = Tensor::matrix({{1.5, -2}, {3, 4}});
    CHECK(id.predict(x) == x);

    auto sum1 = single(Tensor::matrix({{1, 1}}), Tensor::vector({1}));
    CHECK(sum1.predict(Tensor::matrix({{2, 3}})) == Tensor::matrix({{6}}));
}

TEST_CASE("2-4-2 relu MLP matches a loop forward") {
    Network net = init_params({2, 4, 2}, 5);
    std::mt19937_64 rng(1);
    const Tensor x = oracle::random_tensor(rng, {7, 2});
    CHECK(max_abs_diff(net.predict(x), oracle::mlp_forward(dense_blocks(net), x)) <= 1e-12);

    Network g = init_params({3, 5, 4, 2}, 6, Activation::gelu_approx);
    const Tensor x3 = oracle::random_tensor(rng, {4, 3});
    CHECK(max_abs_diff(g.predict(x3), oracle::mlp_forward(dense_blocks(g), x3)) <= 1e-12);
}

TEST_CASE("forward dimension errors") {
    Network net = init_params({2, 4, 2}, 5);
    CHECK_THROWS_AS(net.predict(Tensor({3, 5})), DimensionError);
    Network bad;
    bad.append(std::make_unique<DenseBlock>(Tensor({4, 2}), Tensor({4}), Activation::relu));
    CHECK_THROWS_AS(bad.append(std::make_unique<DenseBlock>(Tensor({2, 3}), Tensor({2}), Activation::none)),
                    DimensionError);
    CHECK_THROWS_AS(DenseBlock(Tensor({4, 2}), Tensor({3}), Activation::none), DimensionError);
    CHECK_THROWS_AS(net.replace(0, std::make_unique<DenseBlock>(Tensor({3, 2}), Tensor({3}), Activation::relu)),
                    DimensionError);
}

TEST_CASE("init_params") {
    const Network a = init_params({2, 8, 2}, 42), b = init_params({2, 8, 2}, 42), c = init_params({2, 8, 2}, 43);
    auto weights = [](const Network& n) {
        std::vector<double> all;
        for (const auto* d : dense_blocks(n)) {
            all.insert(all.end(), d->weight().value.values().begin(), d->weight().value.values().end());
            all.insert(all.end(), d->bias().value.values().begin(), d->bias().value.values().end());
        }
        return all;
    };
    CHECK(weights(a) == weights(b));
    CHECK(weights(a) != weights(c));
    CHECK(a.param_count() == 42);
    CHECK(init_params({2, 64, 64, 3}, 0).param_count() == 4547);

    const Network wide = init_params({10, 30, 5}, 1);
    for (const auto* d : dense_blocks(wide)) {
        const double s = std::sqrt(6.0 / static_cast<double>(d->in_dim() + d->out_dim()));
        for (double w : d->weight().value.values()) CHECK(std::abs(w) <= s);
        for (double bv : d->bias().value.values()) CHECK(bv == 0.0);
    }
    CHECK_THROWS(init_params({2}, 0));
    CHECK_THROWS(init_params({2, 0, 3}, 0));
}

TEST_CASE("clone_block is a deep copy") {
    DenseBlock b(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({0.5, -0.5}), Activation::relu);
    DenseBlock c = clone_block(b);
    CHECK(c.weight().value == b.weight().value);
    CHECK(c.bias().value == b.bias().value);
    b.weight().value[0] = 100.0;
    CHECK(c.weight().value[0] == 1.0);

    // A block that took part in a forward pass clones without tape state.
    ad::Tape tape;
    ForwardContext ctx(tape);
    b.forward(ctx, tape.leaf(Tensor::matrix({{1, 1}})));
    DenseBlock d = clone_block(b);
    tape.reset();
    CHECK(d.weight().value == b.weight().value);
    ad::Tape t2;
    ForwardContext c2(t2);
    CHECK(d.forward(c2, t2.leaf(Tensor::matrix({{1, 1}}))).value().cols() == 2);
}

TEST_CASE("batch consistency") {
    Network net = init_params({3, 16, 16, 4}, 9, Activation::gelu_approx);
    std::mt19937_64 rng(2);
    const Tensor x = oracle::random_tensor(rng, {6, 3});
    const Tensor all = net.predict(x);
    for (std::size_t r = 0; r < 6; ++r) {
        Tensor row({1, 3});
        for (std::size_t c = 0; c < 3; ++c) row.at(0, c) = x.at(r, c);
        const Tensor one = net.predict(row);
        for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(one.at(0, c) - all.at(r, c)) <= 1e-12);
    }
}

TEST_CASE("parameters are named and ordered") {
    Network net = init_params({2, 3, 2}, 0);
    const auto ps = net.parameters();
    REQUIRE(ps.size() == 4);
    CHECK(ps[0]->value.shape() == Shape{3, 2});
    CHECK(ps[1]->value.shape() == Shape{3});
    CHECK(ps[0]->name != ps[1]->name);
}

TEST_CASE("activation names round-trip") {
    for (Activation a : {Activation::none, Activation::relu, Activation::gelu_approx})
        CHECK(parse_activation(activation_name(a)) == a);
    CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
}

TEST_CASE("network clone is independent") {
    Network net = init_params({2, 4, 2}, 3);
    Network copy = net.clone();
    dynamic_cast<DenseBlock&>(net.block(0)).weight().value[0] = 9.0;
    CHECK(dynamic_cast<DenseBlock&>(copy.block(0)).weight().value[0] != 9.0);
}
