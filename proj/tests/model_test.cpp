#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "fedra/errors.hpp"
#include "fedra/model.hpp"
#include "fedra/rng.hpp"

using namespace fedra;
using namespace fedra::model;

namespace {

BuildConfig tiny_config() {
    BuildConfig cfg;
    cfg.layers = 4;
    cfg.input_dim = 6;
    cfg.hidden_dim = 6;
    cfg.classes = 3;
    cfg.rank = 2;
    return cfg;
}

std::vector<double> random_x(std::uint64_t seed, int dim) {
    SplitRng rng(seed);
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.next_gaussian();
    return x;
}

}  // namespace

TEST_CASE("build_stack_model shapes and init") {
    StackModel m = build_stack_model(tiny_config(), 11);
    CHECK(m.layers() == 4);
    CHECK(m.net.input_dim() == 6);
    CHECK(m.net.classes() == 3);
    CHECK(m.seed == 11);
    for (const auto& b : m.net.blocks) {
        CHECK(b.adapter.rank() == 2);
        // LoRA init: up must be exactly zero so the delta starts at zero,
        // down is random so gradients can flow
        for (double v : b.adapter.up.v) CHECK(v == 0.0);
        double down_norm = norm2(b.adapter.down);
        CHECK(down_norm > 0.0);
    }
}

TEST_CASE("build determinism per seed") {
    StackModel a = build_stack_model(tiny_config(), 3);
    StackModel b = build_stack_model(tiny_config(), 3);
    StackModel c = build_stack_model(tiny_config(), 4);
    CHECK(full_param_digest(a.net) == full_param_digest(b.net));
    CHECK(full_param_digest(a.net) != full_param_digest(c.net));
    CHECK(frozen_param_digest(a) != frozen_param_digest(c));
}

TEST_CASE("frozen digest ignores trainable parameters") {
    StackModel m = build_stack_model(tiny_config(), 5);
    std::string before = frozen_param_digest(m);
    m.net.blocks[1].adapter.up(0, 0) = 3.0;
    m.net.head.weight(0, 0) = -2.0;
    CHECK(frozen_param_digest(m) == before);
    CHECK(full_param_digest(m.net) != full_param_digest(build_stack_model(tiny_config(), 5).net));
}

TEST_CASE("initial adapters are inert: model output ignores down init") {
    // up = 0 means the forward pass equals the frozen backbone regardless of
    // the random down factors
    StackModel a = build_stack_model(tiny_config(), 21);
    StackModel b = a;
    for (auto& blk : b.net.blocks)
        for (auto& v : blk.adapter.down.v) v *= -7.0;
    auto x = random_x(99, 6);
    auto ya = forward(a, x);
    auto yb = forward(b, x);
    for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("extract_submodel sorts, validates, deep-copies") {
    StackModel m = build_stack_model(tiny_config(), 7);
    SubModel sub = extract_submodel(m, {3, 1});
    CHECK(sub.selected == std::vector<int>{1, 3});
    REQUIRE(sub.net.blocks.size() == 2);

    CHECK_THROWS_AS((void)extract_submodel(m, {1, 1}), PreconditionError);
    CHECK_THROWS_AS((void)extract_submodel(m, {0}), PreconditionError);
    CHECK_THROWS_AS((void)extract_submodel(m, {5}), PreconditionError);
    CHECK_THROWS_AS((void)extract_submodel(m, {}), PreconditionError);

    // mutating the submodel leaves the global model untouched
    std::string before = full_param_digest(m.net);
    sub.net.blocks[0].adapter.up(0, 0) = 123.0;
    sub.net.head.weight(0, 0) = -9.0;
    CHECK(full_param_digest(m.net) == before);
}

TEST_CASE("submodel forward equals masked full forward") {
    // the residual structure means dropping a block is the same as zeroing
    // that block's whole branch in the full model
    StackModel m = build_stack_model(tiny_config(), 13);
    SplitRng rng(14);
    for (auto& blk : m.net.blocks) {
        for (auto& v : blk.adapter.up.v) v = 0.05 * rng.next_gaussian();
        for (auto& v : blk.adapter.down.v) v = 0.05 * rng.next_gaussian();
    }

    std::vector<int> selected = {2, 4};
    SubModel sub = extract_submodel(m, selected);

    StackModel masked = m;
    for (int layer = 1; layer <= m.layers(); ++layer) {
        if (layer == 2 || layer == 4) continue;
        auto& blk = masked.net.blocks[static_cast<std::size_t>(layer - 1)];
        for (auto& v : blk.base.weight.v) v = 0.0;
        for (auto& v : blk.base.bias) v = 0.0;
        for (auto& v : blk.adapter.up.v) v = 0.0;
        for (auto& v : blk.adapter.down.v) v = 0.0;
    }

    for (std::uint64_t s = 0; s < 20; ++s) {
        auto x = random_x(1000 + s, 6);
        auto ys = forward(sub, x);
        auto ym = forward(masked, x);
        REQUIRE(ys.size() == ym.size());
        for (std::size_t i = 0; i < ys.size(); ++i)
            CHECK(std::abs(ys[i] - ym[i]) <= 1e-12 * std::max(1.0, std::abs(ym[i])));
    }
}

TEST_CASE("predict_class breaks ties toward the lowest index") {
    CHECK(predict_class(std::vector<double>{1.0, 3.0, 3.0}) == 1);
    CHECK(predict_class(std::vector<double>{5.0, 5.0, 5.0}) == 0);
    CHECK(predict_class(std::vector<double>{-1.0, -3.0}) == 0);
    CHECK(predict_class(std::vector<double>{-3.0, -1.0}) == 1);
}

TEST_CASE("evaluate oracle on a crafted set") {
    // single-layer model with identity-ish behavior is hard to craft; instead
    // evaluate consistency: accuracy equals the fraction of argmax hits
    StackModel m = build_stack_model(tiny_config(), 17);
    Matrix feats(10, 6);
    std::vector<int> labels(10);
    SplitRng rng(18);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 6; ++j) feats(i, j) = rng.next_gaussian();
        labels[i] = static_cast<int>(rng.next_index(3));
    }
    EvalResult ev = evaluate(m, feats, labels);

    int hits = 0;
    double loss = 0.0;
    for (int i = 0; i < 10; ++i) {
        auto logits = forward(m, feats.row(i));
        if (predict_class(logits) == labels[i]) ++hits;
        loss += nn::softmax_cross_entropy(logits, labels[i]).loss;
    }
    CHECK(ev.accuracy == doctest::Approx(hits / 10.0).epsilon(1e-15));
    CHECK(ev.mean_loss == doctest::Approx(loss / 10.0).epsilon(1e-12));
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
    StackModel m = build_stack_model(tiny_config(), 23);
    SplitRng rng(24);
    for (auto& blk : m.net.blocks)
        for (auto& v : blk.adapter.up.v) v = rng.next_gaussian() * 1e-3;
    m.net.head.bias[1] = 0.1 + 1e-17;  // oddball value to stress the format

    std::ostringstream out;
    save_checkpoint(m, out);
    std::istringstream in(out.str());
    StackModel back = load_checkpoint(in);

    CHECK(full_param_digest(back.net) == full_param_digest(m.net));
    CHECK(back.config.layers == m.config.layers);
    CHECK(back.config.rank == m.config.rank);
    CHECK(back.seed == m.seed);
    CHECK(back.config.activation == m.config.activation);

    // same logits bit for bit
    auto x = random_x(25, 6);
    auto y1 = forward(m, x);
    auto y2 = forward(back, x);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("load_checkpoint rejects garbage") {
    std::istringstream junk("not a checkpoint");
    CHECK_THROWS(load_checkpoint(junk));
}
