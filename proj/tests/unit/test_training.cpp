#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/oracles.hpp"
#include "vcon/errors.hpp"
#include "vcon/training.hpp"

using namespace vcon;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
    auto p = std::filesystem::path(VCON_TEST_TMP) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

void step_one(Parameter& p, const Tensor& g, OptimizerState& st, const OptimizerSpec& spec) {
    const std::pair<Parameter*, const Tensor*> pg{&p, &g};
    optimizer_step(std::span(&pg, 1), st, spec, spec.base_lr());
}

TrainOptions opts(TrainMode mode, std::size_t epochs, std::uint64_t seed = 0) {
    TrainOptions o;
    o.mode = mode;
    o.epochs = epochs;
    o.seed = seed;
    o.batch_size = 16;
    return o;
}

const Dataset& blobs() {
    static const Dataset d = make_synthetic(SyntheticKind::blobs, 3, 300, 0.3, 1);
    return d;
}

RunLog run(TrainMode mode, const CompressionSpec& spec, std::uint64_t q, std::uint64_t seed = 0,
           std::size_t epochs = 3) {
    Network net = init_params({2, 16, 16, 3}, seed);
    prepare_network(net, mode, spec, q, {});
    auto o = opts(mode, epochs, seed);
    o.compression = spec;
    return train(net, blobs(), o).log;
}

}  // namespace

TEST_CASE("optimizer examples") {
    OptimizerState st;
    Parameter p{"p", Tensor::scalar(1.0), true};
    step_one(p, Tensor::scalar(2.0), st, OptimizerSpec{Sgd{0.1}, ConstantLr{}});
    CHECK(p.value.item() == doctest::Approx(0.8).epsilon(1e-15));

    for (double c : {0.01, 1.0, 250.0}) {
        OptimizerState s2;
        Parameter q{"q", Tensor::scalar(3.0), true};
        step_one(q, Tensor::scalar(c), s2, OptimizerSpec{Adam{1e-3}, ConstantLr{}});
        CHECK(q.value.item() - 3.0 == doctest::Approx(-1e-3 * c / (c + 1e-8)).epsilon(1e-12));
    }

    for (OptimizerSpec spec : {OptimizerSpec{Sgd{0.1}, ConstantLr{}}, OptimizerSpec{Adam{0.1}, ConstantLr{}}}) {
        OptimizerState s3;
        Parameter z{"z", Tensor::vector({1.5, -2.0}), true};
        for (int i = 0; i < 3; ++i) step_one(z, Tensor::vector({0.0, 0.0}), s3, spec);
        CHECK(z.value == Tensor::vector({1.5, -2.0}));
    }

    OptimizerState s4;
    Parameter frozen{"f", Tensor::scalar(1.0), false};
    step_one(frozen, Tensor::scalar(5.0), s4, OptimizerSpec{Sgd{0.1}, ConstantLr{}});
    CHECK(frozen.value.item() == 1.0);

    CHECK_THROWS_AS((OptimizerSpec{Sgd{0.0}, ConstantLr{}}).validate(), ConfigError);
    CHECK_THROWS_AS((OptimizerSpec{Adam{1e-3, 1.0}, ConstantLr{}}).validate(), ConfigError);
    CHECK_THROWS_AS((OptimizerSpec{Adam{}, CosineLr{100, 1.0}}).validate(), ConfigError);
}

TEST_CASE("lr schedules") {
    const OptimizerSpec c{Adam{0.01}, ConstantLr{}};
    for (std::uint64_t s : {0u, 5u, 1000u}) CHECK(lr_at(s, c) == 0.01);

    const OptimizerSpec cos{Adam{0.01}, CosineLr{1000, 0.1, 0.001}};
    CHECK(lr_at(0, cos) == doctest::Approx(0.001));
    CHECK(lr_at(100, cos) == 0.01);
    CHECK(lr_at(50, cos) == doctest::Approx(0.0055));
    CHECK(lr_at(999, cos) <= 1e-12 * 0.01);
    double prev = 1.0;
    for (std::uint64_t s = 100; s < 1000; ++s) {
        CHECK(lr_at(s, cos) <= prev);
        prev = lr_at(s, cos);
    }
    const OptimizerSpec nowarm{Sgd{0.5}, CosineLr{10}};
    CHECK(lr_at(0, nowarm) == 0.5);
    CHECK(lr_at(9, nowarm) <= 1e-12 * 0.5);
}

TEST_CASE("synthetic datasets") {
    const Dataset a = make_synthetic(SyntheticKind::spiral, 3, 500, 0.2, 7);
    const Dataset b = make_synthetic(SyntheticKind::spiral, 3, 500, 0.2, 7);
    CHECK(a.train.size() == 1050);
    CHECK(a.val.size() == 225);
    CHECK(a.test.size() == 225);
    CHECK(a.train.x == b.train.x);
    CHECK(a.test.y == b.test.y);
    CHECK(a.dim() == 2);
    const Dataset c = make_synthetic(SyntheticKind::spiral, 3, 500, 0.2, 8);
    CHECK_FALSE(a.train.x == c.train.x);
    for (const Split* s : {&a.train, &a.val, &a.test})
        for (int y : s->y) CHECK((y >= 0 && y < 3));

    // Noise-free blobs: nearest centroid is perfect.
    const Dataset clean = make_synthetic(SyntheticKind::blobs, 4, 50, 0.0, 3);
    for (const Split* s : {&clean.train, &clean.val, &clean.test})
        for (std::size_t i = 0; i < s->size(); ++i) {
            int best = -1;
            double best_d = 1e300;
            for (int k = 0; k < 4; ++k) {
                const double cx = std::cos(2 * M_PI * k / 4), cy = std::sin(2 * M_PI * k / 4);
                const double d = std::hypot(s->x.at(i, 0) - cx, s->x.at(i, 1) - cy);
                if (d < best_d) best_d = d, best = k;
            }
            CHECK(best == s->y[i]);
        }
    CHECK_THROWS_AS(make_synthetic(SyntheticKind::blobs, 1, 10, 0.1, 0), ConfigError);
    CHECK(parse_synthetic_kind("spiral") == SyntheticKind::spiral);
    CHECK_THROWS_AS(parse_synthetic_kind("moons"), ConfigError);
}

TEST_CASE("csv loading") {
    const auto dir = tmp_dir("csv");
    auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream(dir / name) << body;
        return dir / name;
    };
    const auto two = write("two.csv", "f0,f1,label\n0.125,-3.5,0\n2.75,1e-3,1\n");
    const RawTable raw = read_csv(two);
    CHECK(raw.features == Tensor::matrix({{0.125, -3.5}, {2.75, 1e-3}}));
    CHECK(raw.labels == std::vector<int>{0, 1});

    std::string body = "f0,f1,label\n";
    for (int i = 0; i < 40; ++i) body += std::to_string(i * 0.5) + ",7," + std::to_string(i % 2) + "\n";
    const Dataset d = load_csv(write("const.csv", body), 3);
    for (const Split* s : {&d.train, &d.val, &d.test})
        for (std::size_t i = 0; i < s->size(); ++i) CHECK(s->x.at(i, 1) == 0.0);
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < d.train.size(); ++i) mean += d.train.x.at(i, 0);
    mean /= static_cast<double>(d.train.size());
    for (std::size_t i = 0; i < d.train.size(); ++i) var += std::pow(d.train.x.at(i, 0) - mean, 2);
    var /= static_cast<double>(d.train.size());
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(read_csv(write("nohead.csv", "1,2,0\n3,4,1\n")), ParseError);
    try {
        read_csv(write("bad.csv", "f0,label\n1,0\nabc,1\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
    CHECK_THROWS_AS(read_csv(write("short.csv", "f0,f1,label\n1,0\n")), ParseError);
    CHECK_THROWS_AS(read_csv(write("label.csv", "f0,label\n1,5\n"), 3), IndexError);
    CHECK_THROWS_AS(read_csv(write("neg.csv", "f0,label\n1,-1\n")), IndexError);
    CHECK_THROWS_AS(read_csv(dir / "missing.csv"), ParseError);
}

TEST_CASE("steps per epoch") {
    CHECK(steps_per_epoch(50000, 128) == 391);
    CHECK(4 * steps_per_epoch(50000, 128) == 1564);
    CHECK(12 * steps_per_epoch(50000, 128) == 4692);
    CHECK(steps_per_epoch(1050, 32) == 33);
    CHECK_THROWS_AS(steps_per_epoch(10, 0), ConfigError);
}

TEST_CASE("dense training separates clean blobs") {
    const Dataset clean = make_synthetic(SyntheticKind::blobs, 3, 100, 0.0, 2);
    Network net = init_params({2, 16, 3}, 0);
    auto o = opts(TrainMode::dense, 30);
    o.optimizer = OptimizerSpec{Adam{0.01}, ConstantLr{}};
    const auto r = train(net, clean, o);
    CHECK(r.log.epochs.back().val_accuracy >= 0.99);
    CHECK(r.log.steps.size() == 30 * steps_per_epoch(clean.train.size(), 16));
}

TEST_CASE("dense SGD decreases the loss on a fixed batch") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(seed);
        Network net = init_params({2, 16, 3}, seed);
        const Split& s = blobs().train;
        Tensor xb({32, 2});
        std::vector<int> yb(32);
        for (std::size_t i = 0; i < 32; ++i) {
            xb.at(i, 0) = s.x.at(i, 0);
            xb.at(i, 1) = s.x.at(i, 1);
            yb[i] = s.y[i];
        }
        OptimizerState st;
        const OptimizerSpec spec{Sgd{0.01}, ConstantLr{}};
        double prev = 1e300;
        for (int step = 0; step < 10; ++step) {
            ad::Tape tape;
            ForwardContext ctx(tape);
            auto loss = ad::softmax_cross_entropy(net.forward(ctx, tape.leaf(xb)), yb);
            CHECK(loss.value().item() < prev);
            prev = loss.value().item();
            const auto g = tape.backward(loss);
            std::vector<std::pair<Parameter*, const Tensor*>> ups;
            for (const auto& [p, v] : ctx.bound()) ups.emplace_back(p, g.find(v));
            optimizer_step(ups, st, spec, 0.01);
        }
    }
}

TEST_CASE("Q = 0 vcon reproduces ste_standard bit for bit") {
    for (const auto& spec : {CompressionSpec{PruneUnstructuredLayer{0.9}}, CompressionSpec{BinaryQuant{}},
                             CompressionSpec{LowRank{4}}}) {
        CAPTURE(spec.describe());
        const RunLog ste = run(TrainMode::ste_standard, spec, 0);
        const RunLog vc = run(TrainMode::vcon, spec, 0);
        CHECK(ste == vc);
        for (const auto& r : ste.steps) CHECK(r.beta == 0.0);
    }
}

TEST_CASE("training is bit-deterministic") {
    const CompressionSpec spec{PruneNM{2, 4}};
    CHECK(run(TrainMode::vcon, spec, 20, 3) == run(TrainMode::vcon, spec, 20, 3));
    CHECK_FALSE(run(TrainMode::vcon, spec, 20, 3) == run(TrainMode::vcon, spec, 20, 4));
}

TEST_CASE("RunLog beta column") {
    const std::uint64_t q = 40;
    const RunLog log = run(TrainMode::vcon, CompressionSpec{PruneUnstructuredLayer{0.5}}, q);
    REQUIRE(log.steps.size() > q);
    CHECK(log.steps[0].beta == 1.0);
    for (std::size_t i = 0; i < log.steps.size(); ++i) {
        CHECK(log.steps[i].step == i);
        CHECK(log.steps[i].beta == beta_at(i, q));
        if (i > 0) CHECK(log.steps[i].beta <= log.steps[i - 1].beta);
    }
    CHECK(log.steps[q].beta == 0.0);
    const RunLog dense = run(TrainMode::dense, CompressionSpec{BinaryQuant{}}, 0);
    for (const auto& r : dense.steps) CHECK(r.beta == 1.0);
}

TEST_CASE("post_shot with sparsity 0 matches dense training") {
    Network a = init_params({2, 16, 16, 3}, 5), b = init_params({2, 16, 16, 3}, 5);
    auto od = opts(TrainMode::dense, 4, 5);
    auto op = opts(TrainMode::post_shot, 4, 5);
    op.compression = CompressionSpec{PruneUnstructuredLayer{0.0}};
    op.post_shot_dense_epochs = 2;
    const auto rd = train(a, blobs(), od);
    const auto rp = train(b, blobs(), op);
    REQUIRE(rd.log.steps.size() == rp.log.steps.size());
    for (std::size_t i = 0; i < rd.log.steps.size(); ++i)
        CHECK(rd.log.steps[i].train_loss == rp.log.steps[i].train_loss);
    CHECK(rd.log.epochs == rp.log.epochs);
    CHECK(rd.test_accuracy == rp.test_accuracy);
    CHECK(rp.log.steps.front().beta == 1.0);
    CHECK(rp.log.steps.back().beta == 0.0);
    CHECK(b.block(0).kind() == BlockKind::compressed);
}

TEST_CASE("divergence aborts with a diagnostic") {
    Network net = init_params({2, 16, 3}, 0);
    auto o = opts(TrainMode::dense, 3);
    o.optimizer = OptimizerSpec{Sgd{1e300}, ConstantLr{}};
    try {
        train(net, blobs(), o);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("step") != std::string::npos);
        CHECK(msg.find("lr=") != std::string::npos);
        CHECK(msg.find("beta=") != std::string::npos);
    }
}

TEST_CASE("mode/layout mismatches are rejected") {
    Network net = init_params({2, 8, 3}, 0);
    CHECK_THROWS_AS(train(net, blobs(), opts(TrainMode::vcon, 1)), ContractError);
    CHECK_THROWS_AS(train(net, blobs(), opts(TrainMode::post_shot, 1)), ContractError);
    CHECK_THROWS_AS(prepare_network(net, TrainMode::vcon, std::nullopt, 5, {}), ConfigError);
    Network wrong = init_params({3, 8, 3}, 0);
    CHECK_THROWS_AS(train(wrong, blobs(), opts(TrainMode::dense, 1)), DimensionError);
}

TEST_CASE("RunLog csv round trip") {
    const RunLog log = run(TrainMode::vcon, CompressionSpec{BinaryQuant{}}, 10, 0, 2);
    const auto dir = tmp_dir("runlog");
    log.write_csv(dir, "x");
    CHECK(RunLog::read_csv(dir, "x") == log);
    std::ifstream in(dir / "x_steps.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,beta,lr,train_loss");
    CHECK_THROWS_AS(RunLog::read_csv(dir, "missing"), ParseError);
}

TEST_CASE("mode names") {
    for (TrainMode m : {TrainMode::dense, TrainMode::post_shot, TrainMode::ste_standard, TrainMode::vcon})
        CHECK(parse_mode(mode_name(m)) == m);
    CHECK_THROWS_AS(parse_mode("standard"), ConfigError);
}
