#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedra/errors.hpp"
#include "fedra/federation.hpp"
#include "fedra/model.hpp"
#include "fedra/rng.hpp"

using namespace fedra;
using namespace fedra::federation;

namespace {

model::BuildConfig tiny_model_config(int layers = 4) {
    model::BuildConfig cfg;
    cfg.layers = layers;
    cfg.input_dim = 6;
    cfg.hidden_dim = 6;
    cfg.classes = 3;
    cfg.rank = 2;
    return cfg;
}

data::LabeledDataset random_dataset(std::uint64_t seed, int n, int dim = 6, int classes = 3) {
    SplitRng rng(seed);
    data::LabeledDataset d;
    d.features = Matrix(n, dim);
    d.num_classes = classes;
    for (auto& v : d.features.v) v = rng.next_gaussian();
    d.labels.resize(static_cast<std::size_t>(n));
    for (auto& l : d.labels) l = static_cast<int>(rng.next_index(static_cast<std::size_t>(classes)));
    return d;
}

data::FederationScenario tiny_scenario(std::uint64_t seed, std::vector<int> caps) {
    data::FederationScenario sc;
    sc.num_classes = 3;
    sc.input_dim = 6;
    for (std::size_t i = 0; i < caps.size(); ++i) {
        data::ClientShard shard;
        shard.capacity = caps[i];
        shard.domain_index = static_cast<int>(i);
        shard.train = random_dataset(seed + i, 24 + static_cast<int>(i) * 8);
        sc.clients.push_back(std::move(shard));
        sc.domain_tests.push_back(random_dataset(seed + 100 + i, 12));
        sc.domain_names.push_back("domain" + std::to_string(i));
    }
    return sc;
}

// constant-valued adapter for aggregation oracles
nn::LoraAdapter const_adapter(int dim, int rank, double value) {
    nn::LoraAdapter a(dim, dim, rank, 1.0);
    for (auto& v : a.down.v) v = value;
    for (auto& v : a.up.v) v = value;
    return a;
}

}  // namespace

TEST_CASE("aggregate_lora weighted-mean hand case") {
    model::StackModel m = model::build_stack_model(tiny_model_config(2), 1);
    allocation::AllocationMatrix alloc(2, 2);
    alloc.at(0, 0) = 1;
    alloc.at(1, 0) = 1;
    alloc.at(1, 1) = 1;
    alloc.capacities = {1, 2};

    ClientUpdate u0;
    u0.client_id = 0;
    u0.selected = {1};
    u0.adapters = {const_adapter(6, 2, 1.0)};
    u0.head = m.net.head;
    u0.n_samples = 1;

    ClientUpdate u1;
    u1.client_id = 1;
    u1.selected = {1, 2};
    u1.adapters = {const_adapter(6, 2, 2.0), const_adapter(6, 2, 5.0)};
    u1.head = m.net.head;
    u1.n_samples = 3;

    aggregate_lora(m.net, {u0, u1}, alloc, MissingLayerStrategy::kCarryForward);
    // layer 1: (1*1 + 3*2) / 4 = 1.75 in every entry
    for (double v : m.net.blocks[0].adapter.down.v)
        CHECK(v == doctest::Approx(1.75).epsilon(1e-15));
    for (double v : m.net.blocks[0].adapter.up.v)
        CHECK(v == doctest::Approx(1.75).epsilon(1e-15));
    // layer 2: only client 1 -> exactly 5
    for (double v : m.net.blocks[1].adapter.up.v) CHECK(v == 5.0);
}

TEST_CASE("aggregate_lora carry-forward keeps uncovered layers bitwise") {
    model::StackModel m = model::build_stack_model(tiny_model_config(3), 2);
    SplitRng rng(3);
    for (auto& blk : m.net.blocks)
        for (auto& v : blk.adapter.up.v) v = rng.next_gaussian();
    std::vector<double> before_down = m.net.blocks[2].adapter.down.v;
    std::vector<double> before_up = m.net.blocks[2].adapter.up.v;

    allocation::AllocationMatrix alloc(1, 3);
    alloc.at(0, 0) = 1;
    alloc.at(0, 1) = 1;
    alloc.capacities = {2};
    ClientUpdate u;
    u.client_id = 0;
    u.selected = {1, 2};
    u.adapters = {const_adapter(6, 2, 0.5), const_adapter(6, 2, -0.5)};
    u.head = m.net.head;
    u.n_samples = 10;

    aggregate_lora(m.net, {u}, alloc, MissingLayerStrategy::kCarryForward);
    CHECK(m.net.blocks[2].adapter.down.v == before_down);
    CHECK(m.net.blocks[2].adapter.up.v == before_up);
    CHECK(m.net.blocks[0].adapter.down.v[0] == 0.5);

    // under the constrained contract the same situation is an internal error
    model::StackModel m2 = model::build_stack_model(tiny_model_config(3), 2);
    CHECK_THROWS_AS(
        aggregate_lora(m2.net, {u}, alloc, MissingLayerStrategy::kConstrainAllocation),
        InternalError);
}

TEST_CASE("aggregate_lora validates updates against the allocation") {
    model::StackModel m = model::build_stack_model(tiny_model_config(2), 4);
    allocation::AllocationMatrix alloc(1, 2);
    alloc.at(0, 0) = 1;
    alloc.capacities = {1};
    ClientUpdate u;
    u.client_id = 0;
    u.selected = {2};  // does not match row {1}
    u.adapters = {const_adapter(6, 2, 1.0)};
    u.head = m.net.head;
    u.n_samples = 5;
    CHECK_THROWS_AS(aggregate_lora(m.net, {u}, alloc, MissingLayerStrategy::kCarryForward),
                    PreconditionError);

    u.selected = {1};
    u.n_samples = 0;
    CHECK_THROWS_AS(aggregate_lora(m.net, {u}, alloc, MissingLayerStrategy::kCarryForward),
                    PreconditionError);
}

TEST_CASE("aggregate_head weighted mean") {
    model::StackModel m = model::build_stack_model(tiny_model_config(1), 5);
    ClientUpdate a, b;
    a.head = nn::DenseParams(3, 6);
    b.head = nn::DenseParams(3, 6);
    for (auto& v : a.head.weight.v) v = 2.0;
    for (auto& v : b.head.weight.v) v = 8.0;
    a.head.bias = {1, 1, 1};
    b.head.bias = {5, 5, 5};
    a.n_samples = 3;
    b.n_samples = 1;
    aggregate_head(m.net, {a, b});
    // (3*2 + 1*8)/4 = 3.5 ; (3*1 + 1*5)/4 = 2
    for (double v : m.net.head.weight.v) CHECK(v == doctest::Approx(3.5).epsilon(1e-15));
    for (double v : m.net.head.bias) CHECK(v == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("all-large aggregation reduces to plain FedAvg") {
    // every client holds every layer; the per-layer weighted mean must match
    // a direct FedAvg computed from scratch
    model::StackModel m = model::build_stack_model(tiny_model_config(3), 6);
    const int n = 3;
    allocation::AllocationMatrix alloc(n, 3);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 3; ++j) alloc.at(i, j) = 1;
    }
    alloc.capacities = {3, 3, 3};

    SplitRng rng(7);
    std::vector<ClientUpdate> updates(n);
    std::vector<long> sizes = {10, 25, 5};
    for (int i = 0; i < n; ++i) {
        updates[i].client_id = i;
        updates[i].selected = {1, 2, 3};
        for (int l = 0; l < 3; ++l) {
            nn::LoraAdapter a(6, 6, 2, 1.0);
            for (auto& v : a.down.v) v = rng.next_gaussian();
            for (auto& v : a.up.v) v = rng.next_gaussian();
            updates[i].adapters.push_back(std::move(a));
        }
        updates[i].head = m.net.head;
        updates[i].n_samples = sizes[i];
    }

    aggregate_lora(m.net, updates, alloc, MissingLayerStrategy::kCarryForward);

    double total = 40.0;
    for (int l = 0; l < 3; ++l) {
        for (std::size_t k = 0; k < m.net.blocks[l].adapter.down.v.size(); ++k) {
            double expect = 0.0;
            for (int i = 0; i < n; ++i)
                expect += sizes[i] / total * updates[i].adapters[l].down.v[k];
            CHECK(std::abs(m.net.blocks[l].adapter.down.v[k] - expect) <=
                  1e-12 * std::max(1.0, std::abs(expect)));
        }
    }
}

TEST_CASE("local_train with lr 0 returns the dispatched parameters bitwise") {
    model::StackModel m = model::build_stack_model(tiny_model_config(), 8);
    SplitRng rng(9);
    for (auto& blk : m.net.blocks)
        for (auto& v : blk.adapter.up.v) v = 0.01 * rng.next_gaussian();
    model::SubModel sub = model::extract_submodel(m, {1, 3});

    RoundConfig cfg;
    cfg.lr = 0.0;
    cfg.batch = 8;
    data::LabeledDataset train = random_dataset(10, 20);
    ClientUpdate u = local_train(sub, train, cfg, SplitRng(11), 1, 0);

    CHECK(u.selected == std::vector<int>{1, 3});
    CHECK(u.n_samples == 20);
    REQUIRE(u.adapters.size() == 2);
    CHECK(u.adapters[0].down.v == m.net.blocks[0].adapter.down.v);
    CHECK(u.adapters[0].up.v == m.net.blocks[0].adapter.up.v);
    CHECK(u.adapters[1].down.v == m.net.blocks[2].adapter.down.v);
    CHECK(u.adapters[1].up.v == m.net.blocks[2].adapter.up.v);
    CHECK(u.head.weight.v == m.net.head.weight.v);
    CHECK(std::isfinite(u.mean_loss));
}

TEST_CASE("local_train is deterministic in the rng") {
    model::StackModel m = model::build_stack_model(tiny_model_config(), 12);
    data::LabeledDataset train = random_dataset(13, 30);
    RoundConfig cfg;
    cfg.lr = 0.05;
    cfg.batch = 8;
    cfg.local_epochs = 2;

    auto u1 = local_train(model::extract_submodel(m, {1, 2}), train, cfg, SplitRng(99), 1, 0);
    auto u2 = local_train(model::extract_submodel(m, {1, 2}), train, cfg, SplitRng(99), 1, 0);
    CHECK(u1.adapters[0].down.v == u2.adapters[0].down.v);
    CHECK(u1.head.weight.v == u2.head.weight.v);
    CHECK(u1.mean_loss == u2.mean_loss);

    auto u3 = local_train(model::extract_submodel(m, {1, 2}), train, cfg, SplitRng(100), 1, 0);
    CHECK(u3.adapters[0].down.v != u1.adapters[0].down.v);

    // training actually moves the parameters
    CHECK(u1.adapters[0].up.v != m.net.blocks[0].adapter.up.v);
}

TEST_CASE("local_train reports divergence with context") {
    model::StackModel m = model::build_stack_model(tiny_model_config(), 14);
    data::LabeledDataset train = random_dataset(15, 40);
    RoundConfig cfg;
    cfg.lr = 1e14;  // guaranteed blow-up
    cfg.batch = 4;
    cfg.local_epochs = 50;
    bool threw = false;
    try {
        (void)local_train(model::extract_submodel(m, {1, 2, 3, 4}), train, cfg, SplitRng(16), 7,
                          3);
    } catch (const DivergenceError& e) {
        threw = true;
        CHECK(e.round == 7);
        CHECK(e.client == 3);
        CHECK(e.step >= 0);
    }
    CHECK(threw);
}

TEST_CASE("local_train rejects nonsense") {
    model::StackModel m = model::build_stack_model(tiny_model_config(), 17);
    data::LabeledDataset train = random_dataset(18, 10);
    RoundConfig cfg;
    cfg.batch = 0;
    CHECK_THROWS_AS(
        (void)local_train(model::extract_submodel(m, {1}), train, cfg, SplitRng(1), 1, 0),
        ConfigError);
    cfg.batch = 8;
    data::LabeledDataset empty;
    empty.features = Matrix(0, 6);
    empty.num_classes = 3;
    CHECK_THROWS_AS(
        (void)local_train(model::extract_submodel(m, {1}), empty, cfg, SplitRng(1), 1, 0),
        PreconditionError);
    data::LabeledDataset wrong = random_dataset(19, 10, 4);
    CHECK_THROWS_AS(
        (void)local_train(model::extract_submodel(m, {1}), wrong, cfg, SplitRng(1), 1, 0),
        ShapeError);
}

TEST_CASE("run_round invariants") {
    ServerState state = make_server_state(tiny_model_config(), tiny_scenario(20, {3, 2, 2}), 21);
    std::string frozen = model::frozen_param_digest(state.global);

    RoundConfig cfg;
    cfg.strategy = {allocation::StrategyKind::kRandomUniform, false};
    cfg.lr = 0.05;
    cfg.batch = 8;

    RoundReport rep = run_round(state, cfg, SplitRng(22));
    CHECK(rep.round == 1);
    CHECK(state.rounds_done == 1);
    CHECK(rep.participants == std::vector<int>{0, 1, 2});
    rep.alloc.validate();
    CHECK(rep.alloc.row_sum(0) == 3);
    CHECK(rep.alloc.row_sum(1) == 2);
    CHECK(rep.layer_update_counts == rep.alloc.column_sums());
    REQUIRE(rep.domain_accuracy.size() == 3);
    double avg = (rep.domain_accuracy[0] + rep.domain_accuracy[1] + rep.domain_accuracy[2]) / 3;
    CHECK(rep.average_accuracy == doctest::Approx(avg).epsilon(1e-15));
    CHECK(model::frozen_param_digest(state.global) == frozen);
    // down factors are gaussian at init, so the parameter vector is nonzero
    // from round one even though every delta is still zero
    CHECK(rep.adapter_norm2 > 0.0);
    CHECK(rep.alpha_measured > 0.0);
    CHECK(std::isfinite(rep.alpha_measured));

    RoundReport rep2 = run_round(state, cfg, SplitRng(23));
    CHECK(rep2.round == 2);
    CHECK(rep2.adapter_norm2 > 0.0);
    CHECK(rep2.alpha_measured > 0.0);
}

TEST_CASE("run_round with client sampling") {
    ServerState state = make_server_state(tiny_model_config(), tiny_scenario(24, {3, 2, 2, 4}), 25);
    RoundConfig cfg;
    cfg.strategy = {allocation::StrategyKind::kRandomUniform, false};
    cfg.lr = 0.05;
    cfg.batch = 8;
    cfg.clients_per_round = 2;
    RoundReport rep = run_round(state, cfg, SplitRng(26));
    CHECK(rep.participants.size() == 2);
    CHECK(std::is_sorted(rep.participants.begin(), rep.participants.end()));
    CHECK(rep.alloc.num_clients == 2);
    // capacities follow the sampled clients
    std::vector<int> caps = {3, 2, 2, 4};
    for (std::size_t i = 0; i < rep.participants.size(); ++i)
        CHECK(rep.alloc.row_sum(static_cast<int>(i)) ==
              caps[static_cast<std::size_t>(rep.participants[i])]);

    cfg.clients_per_round = 9;
    CHECK_THROWS_AS((void)run_round(state, cfg, SplitRng(27)), ConfigError);
}

TEST_CASE("run_round dynamic capacities stay in range") {
    ServerState state = make_server_state(tiny_model_config(), tiny_scenario(28, {4, 1}), 29);
    RoundConfig cfg;
    cfg.strategy = {allocation::StrategyKind::kRandomUniform, true};
    cfg.lr = 0.05;
    cfg.batch = 8;
    cfg.dynamic_cap_min = 1;
    cfg.dynamic_cap_max = 0;  // = layers
    for (std::uint64_t r = 0; r < 20; ++r) {
        RoundReport rep = run_round(state, cfg, SplitRng(30 + r));
        for (int i = 0; i < rep.alloc.num_clients; ++i) {
            CHECK(rep.alloc.row_sum(i) >= 1);
            CHECK(rep.alloc.row_sum(i) <= 4);
        }
    }
}

TEST_CASE("run_round rejects lr 0 and mismatched constrain strategy") {
    ServerState state = make_server_state(tiny_model_config(), tiny_scenario(31, {2, 2}), 32);
    RoundConfig cfg;
    cfg.strategy = {allocation::StrategyKind::kRandomUniform, false};
    cfg.lr = 0.0;
    CHECK_THROWS_AS((void)run_round(state, cfg, SplitRng(33)), ConfigError);
    cfg.lr = 0.05;
    cfg.missing = MissingLayerStrategy::kConstrainAllocation;
    CHECK_THROWS_AS((void)run_round(state, cfg, SplitRng(33)), ConfigError);
}

TEST_CASE("run_federation is reproducible and carries rounds_done") {
    auto make_state = [] {
        return make_server_state(tiny_model_config(), tiny_scenario(34, {3, 2}), 35);
    };
    RoundConfig cfg;
    cfg.strategy = {allocation::StrategyKind::kRandomUniform, false};
    cfg.lr = 0.05;
    cfg.batch = 8;

    ServerState s1 = make_state();
    int callbacks = 0;
    auto reports1 = run_federation(s1, 5, cfg, SplitRng(36),
                                   [&](const RoundReport&) { ++callbacks; });
    CHECK(callbacks == 5);
    CHECK(s1.rounds_done == 5);
    REQUIRE(reports1.size() == 5);
    CHECK(reports1.back().round == 5);

    ServerState s2 = make_state();
    auto reports2 = run_federation(s2, 5, cfg, SplitRng(36));
    CHECK(model::full_param_digest(s1.global.net) == model::full_param_digest(s2.global.net));
    for (int r = 0; r < 5; ++r)
        CHECK(reports1[r].average_accuracy == reports2[r].average_accuracy);

    // resuming 2+3 equals 5 straight: the round rng keys off rounds_done
    ServerState s3 = make_state();
    (void)run_federation(s3, 2, cfg, SplitRng(36));
    (void)run_federation(s3, 3, cfg, SplitRng(36));
    CHECK(model::full_param_digest(s3.global.net) == model::full_param_digest(s1.global.net));
}

TEST_CASE("make_server_state validates the scenario against the model") {
    data::FederationScenario sc = tiny_scenario(37, {2});
    model::BuildConfig wrong_dim = tiny_model_config();
    wrong_dim.input_dim = 5;
    CHECK_THROWS_AS((void)make_server_state(wrong_dim, sc, 1), ConfigError);
    model::BuildConfig wrong_classes = tiny_model_config();
    wrong_classes.classes = 7;
    CHECK_THROWS_AS((void)make_server_state(wrong_classes, sc, 1), ConfigError);
    data::FederationScenario empty;
    empty.input_dim = 6;
    empty.num_classes = 3;
    CHECK_THROWS_AS((void)make_server_state(tiny_model_config(), empty, 1), ConfigError);
}

TEST_CASE("apply_update writes only the selected layers") {
    model::StackModel m = model::build_stack_model(tiny_model_config(), 38);
    std::vector<double> before1 = m.net.blocks[1].adapter.down.v;

    ClientUpdate u;
    u.selected = {1, 3};
    u.adapters = {const_adapter(6, 2, 4.0), const_adapter(6, 2, -4.0)};
    u.head = m.net.head;
    for (auto& v : u.head.weight.v) v = 9.0;
    u.n_samples = 1;
    apply_update(m.net, u);

    CHECK(m.net.blocks[0].adapter.down.v[0] == 4.0);
    CHECK(m.net.blocks[2].adapter.up.v[0] == -4.0);
    CHECK(m.net.blocks[1].adapter.down.v == before1);
    CHECK(m.net.head.weight.v[0] == 9.0);

    ClientUpdate bad;
    bad.selected = {9};
    bad.adapters = {const_adapter(6, 2, 1.0)};
    bad.head = m.net.head;
    CHECK_THROWS_AS(apply_update(m.net, bad), PreconditionError);
}

TEST_CASE("run_subset_convergence basics") {
    model::StackModel m = model::build_stack_model(tiny_model_config(), 39);
    data::LabeledDataset train = random_dataset(40, 60);
    data::LabeledDataset test = random_dataset(41, 20);
    std::string digest_before = model::full_param_digest(m.net);

    auto stats = run_subset_convergence(m, train, test, 2, 6, 0.01, 16, SplitRng(42));
    REQUIRE(stats.size() == 6);
    for (const auto& st : stats) {
        CHECK(st.selected.size() == 2);
        CHECK(std::is_sorted(st.selected.begin(), st.selected.end()));
        CHECK(st.selected.front() >= 1);
        CHECK(st.selected.back() <= 4);
        CHECK(std::isfinite(st.train_loss));
        CHECK(st.test_accuracy >= 0.0);
        CHECK(st.test_accuracy <= 1.0);
    }
    CHECK(stats[0].epoch == 1);
    CHECK(stats[5].epoch == 6);
    // caller's model is untouched, and the same seed replays exactly
    CHECK(model::full_param_digest(m.net) == digest_before);
    auto stats2 = run_subset_convergence(m, train, test, 2, 6, 0.01, 16, SplitRng(42));
    for (std::size_t i = 0; i < stats.size(); ++i) {
        CHECK(stats[i].train_loss == stats2[i].train_loss);
        CHECK(stats[i].selected == stats2[i].selected);
    }

    CHECK_THROWS_AS((void)run_subset_convergence(m, train, test, 0, 5, 0.01, 16, SplitRng(1)),
                    ConfigError);
    CHECK_THROWS_AS((void)run_subset_convergence(m, train, test, 5, 5, 0.01, 16, SplitRng(1)),
                    ConfigError);
}
