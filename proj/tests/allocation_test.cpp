#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "fedra/allocation.hpp"
#include "fedra/errors.hpp"
#include "fedra/rng.hpp"

using namespace fedra;
using namespace fedra::allocation;

TEST_CASE("row sums equal capacities for every strategy") {
    std::vector<int> caps = {8, 6, 5, 4, 3, 2};
    SplitRng rng(1);
    for (StrategyKind kind : {StrategyKind::kRandomUniform, StrategyKind::kRandomConstrained,
                              StrategyKind::kDepthPrefix, StrategyKind::kAllLarge,
                              StrategyKind::kAllSmall}) {
        AllocationStrategy st{kind, false};
        for (int t = 0; t < 50; ++t) {
            AllocationMatrix m = generate_allocation(st, caps, 8, rng);
            CHECK(m.num_clients == 6);
            CHECK(m.num_layers == 8);
            m.validate();
            for (int i = 0; i < 6; ++i) {
                int expect = caps[i];
                if (kind == StrategyKind::kAllLarge) expect = 8;
                if (kind == StrategyKind::kAllSmall) expect = 2;  // min capacity
                CHECK(m.row_sum(i) == expect);
            }
        }
    }
}

TEST_CASE("depth prefix takes the first L_i layers") {
    std::vector<int> caps = {4, 2, 1};
    SplitRng rng(2);
    AllocationMatrix m = generate_allocation({StrategyKind::kDepthPrefix, false}, caps, 4, rng);
    CHECK(m.selected_layers(0) == std::vector<int>{1, 2, 3, 4});
    CHECK(m.selected_layers(1) == std::vector<int>{1, 2});
    CHECK(m.selected_layers(2) == std::vector<int>{1});
}

TEST_CASE("all-large and all-small shapes") {
    std::vector<int> caps = {5, 3, 2};
    SplitRng rng(3);
    AllocationMatrix big = generate_allocation({StrategyKind::kAllLarge, false}, caps, 6, rng);
    for (int i = 0; i < 3; ++i)
        CHECK(big.selected_layers(i) == std::vector<int>{1, 2, 3, 4, 5, 6});
    AllocationMatrix small =
        generate_allocation({StrategyKind::kAllSmall, false}, caps, 6, rng);
    for (int i = 0; i < 3; ++i) CHECK(small.selected_layers(i) == std::vector<int>{1, 2});
}

TEST_CASE("constrained allocation covers every layer") {
    // tight case: capacities sum to exactly L
    std::vector<int> caps = {2, 1, 1};
    SplitRng rng(4);
    for (int t = 0; t < 500; ++t) {
        AllocationMatrix m =
            generate_allocation({StrategyKind::kRandomConstrained, false}, caps, 4, rng);
        m.validate();
        CHECK(m.min_column_sum() >= 1);
    }
}

TEST_CASE("constrained allocation is infeasible below L total slots") {
    std::vector<int> caps = {1, 1};
    SplitRng rng(5);
    CHECK_THROWS_AS(
        (void)generate_allocation({StrategyKind::kRandomConstrained, false}, caps, 3, rng),
        InfeasibleError);
}

TEST_CASE("capacity must not exceed the layer count") {
    SplitRng rng(6);
    CHECK_THROWS_AS(
        (void)generate_allocation({StrategyKind::kRandomUniform, false}, {5}, 4, rng),
        PreconditionError);
    CHECK_THROWS_AS(
        (void)generate_allocation({StrategyKind::kRandomUniform, false}, {0}, 4, rng),
        PreconditionError);
}

TEST_CASE("repair_empty_columns worked example") {
    // both clients hold layer 1 only; layer 2 empty. the repair moves one
    // client's single assignment to the empty column, preserving row sums.
    AllocationMatrix m(2, 2);
    m.at(0, 0) = 1;
    m.at(1, 0) = 1;
    m.capacities = {1, 1};
    AllocationMatrix r = repair_empty_columns(m);
    r.validate();
    CHECK(r.row_sum(0) == 1);
    CHECK(r.row_sum(1) == 1);
    CHECK(r.min_column_sum() == 1);
    CHECK(r.column_sum(0) == 1);
    CHECK(r.column_sum(1) == 1);
}

TEST_CASE("repair preserves row sums on random instances") {
    SplitRng rng(7);
    for (int t = 0; t < 200; ++t) {
        int n = 2 + static_cast<int>(rng.next_index(4));
        int l = 2 + static_cast<int>(rng.next_index(5));
        std::vector<int> caps(n);
        int total = 0;
        for (auto& c : caps) {
            c = 1 + static_cast<int>(rng.next_index(static_cast<std::size_t>(l)));
            total += c;
        }
        if (total < l) caps[0] = l;  // repair needs sum(capacities) >= L
        AllocationMatrix m =
            generate_allocation({StrategyKind::kRandomUniform, false}, caps, l, rng);
        std::vector<int> before(n);
        for (int i = 0; i < n; ++i) before[i] = m.row_sum(i);
        AllocationMatrix r = repair_empty_columns(m);
        r.validate();
        for (int i = 0; i < n; ++i) CHECK(r.row_sum(i) == before[i]);
        CHECK(r.min_column_sum() >= 1);
    }
}

TEST_CASE("uniform rows hit the L_i/L frequency") {
    // smaller sibling of the acceptance sweep: 20k draws, one capacity
    std::vector<int> caps = {3};
    SplitRng rng(8);
    const int rounds = 20000;
    std::vector<AllocationMatrix> history;
    history.reserve(rounds);
    for (int t = 0; t < rounds; ++t)
        history.push_back(generate_allocation({StrategyKind::kRandomUniform, false}, caps, 8, rng));
    SelectionStats stats = selection_stats(history);
    REQUIRE(stats.rounds == rounds);
    double p = 3.0 / 8.0;
    double sigma = std::sqrt(p * (1.0 - p) / rounds);
    for (int j = 0; j < 8; ++j) {
        CHECK(std::abs(stats.frequencies[0][j] - p) <= 4.0 * sigma);
        CHECK(stats.counts[0][j] ==
              static_cast<long long>(std::lround(stats.frequencies[0][j] * rounds)));
    }
}

TEST_CASE("selection_stats hand count") {
    AllocationMatrix a(1, 3);
    a.at(0, 0) = 1;
    a.capacities = {1};
    AllocationMatrix b(1, 3);
    b.at(0, 0) = 1;
    b.at(0, 2) = 1;
    b.capacities = {2};
    SelectionStats st = selection_stats({a, b});
    CHECK(st.rounds == 2);
    CHECK(st.counts[0][0] == 2);
    CHECK(st.counts[0][1] == 0);
    CHECK(st.counts[0][2] == 1);
    CHECK(st.frequencies[0][2] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("dynamic flag resamples capacities inside [1, L]") {
    // exercised through the federation round in federation_test; here only
    // the strategy metadata
    AllocationStrategy st{StrategyKind::kRandomUniform, true};
    CHECK(st.dynamic_capacity);
    CHECK(strategy_kind_name(StrategyKind::kDepthPrefix) == "depth-prefix");
    CHECK(strategy_kind_name(StrategyKind::kRandomUniform) == "random-uniform");
}

TEST_CASE("history csv shape") {
    SplitRng rng(9);
    auto m = generate_allocation({StrategyKind::kDepthPrefix, false}, {2, 1}, 3, rng);
    std::ostringstream out;
    write_history_csv(out, {m});
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "round,client,layer,selected");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 6);  // 2 clients x 3 layers
}

TEST_CASE("validate rejects malformed matrices") {
    AllocationMatrix m(2, 2);
    m.at(0, 0) = 1;
    m.capacities = {2, 0};  // row 0 sum 1 != capacity 2
    CHECK_THROWS_AS(m.validate(), InternalError);
    m.capacities = {1, 0};
    m.at(1, 1) = 2;  // non-binary
    CHECK_THROWS_AS(m.validate(), InternalError);
    m.capacities = {1};
    CHECK_THROWS_AS(m.validate(), ShapeError);
}
