#include "fedra/allocation.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "fedra/errors.hpp"

namespace fedra::allocation {

int AllocationMatrix::row_sum(int client) const {
    int s = 0;
    for (int j = 0; j < num_layers; ++j) s += at(client, j);
    return s;
}

int AllocationMatrix::column_sum(int layer) const {
    int s = 0;
    for (int i = 0; i < num_clients; ++i) s += at(i, layer);
    return s;
}

std::vector<int> AllocationMatrix::column_sums() const {
    std::vector<int> sums(static_cast<std::size_t>(num_layers), 0);
    for (int i = 0; i < num_clients; ++i)
        for (int j = 0; j < num_layers; ++j) sums[j] += at(i, j);
    return sums;
}

int AllocationMatrix::min_column_sum() const {
    std::vector<int> sums = column_sums();
    return *std::min_element(sums.begin(), sums.end());
}

std::vector<int> AllocationMatrix::selected_layers(int client) const {
    std::vector<int> sel;
    for (int j = 0; j < num_layers; ++j)
        if (at(client, j)) sel.push_back(j + 1);
    return sel;
}

void AllocationMatrix::validate() const {
    if (static_cast<int>(capacities.size()) != num_clients)
        throw ShapeError("allocation matrix: capacity count != client count");
    for (const std::uint8_t e : entries)
        if (e > 1) throw InternalError("allocation matrix: non-binary entry");
    for (int i = 0; i < num_clients; ++i)
        if (row_sum(i) != capacities[i])
            throw InternalError("allocation matrix: row " + std::to_string(i) + " sum " +
                                std::to_string(row_sum(i)) + " != capacity " +
                                std::to_string(capacities[i]));
}

std::string strategy_kind_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::kRandomUniform: return "random-uniform";
        case StrategyKind::kRandomConstrained: return "random-constrained";
        case StrategyKind::kDepthPrefix: return "depth-prefix";
        case StrategyKind::kAllLarge: return "all-large";
        case StrategyKind::kAllSmall: return "all-small";
    }
    throw InternalError("unknown strategy kind");
}

namespace {

constexpr int kMaxRejectionAttempts = 1000;

void check_capacities(const std::vector<int>& capacities, int num_layers) {
    if (capacities.empty()) throw PreconditionError("generate_allocation: no clients");
    if (num_layers < 1) throw PreconditionError("generate_allocation: num_layers must be >= 1");
    for (int c : capacities)
        if (c < 1 || c > num_layers)
            throw PreconditionError("generate_allocation: capacity " + std::to_string(c) +
                                    " outside [1, " + std::to_string(num_layers) + "]");
}

AllocationMatrix uniform_rows(const std::vector<int>& capacities, int num_layers, SplitRng& rng) {
    const int n = static_cast<int>(capacities.size());
    AllocationMatrix m(n, num_layers);
    m.capacities = capacities;
    for (int i = 0; i < n; ++i) {
        std::vector<std::size_t> pick =
            rng.sample_without_replacement(static_cast<std::size_t>(num_layers),
                                           static_cast<std::size_t>(capacities[i]));
        for (std::size_t j : pick) m.at(i, static_cast<int>(j)) = 1;
    }
    return m;
}

AllocationMatrix prefix_rows(const std::vector<int>& capacities, int num_layers) {
    const int n = static_cast<int>(capacities.size());
    AllocationMatrix m(n, num_layers);
    m.capacities = capacities;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < capacities[i]; ++j) m.at(i, j) = 1;
    return m;
}

}  // namespace

AllocationMatrix generate_allocation(const AllocationStrategy& strategy,
                                     const std::vector<int>& capacities, int num_layers,
                                     SplitRng& rng) {
    check_capacities(capacities, num_layers);
    const int n = static_cast<int>(capacities.size());

    switch (strategy.kind) {
        case StrategyKind::kRandomUniform:
            return uniform_rows(capacities, num_layers, rng);

        case StrategyKind::kRandomConstrained: {
            long long total = std::accumulate(capacities.begin(), capacities.end(), 0LL);
            if (total < num_layers)
                throw InfeasibleError("constrained allocation: sum of capacities " +
                                      std::to_string(total) + " cannot cover " +
                                      std::to_string(num_layers) + " layers");
            // Rejection sampling first; deterministic repair if it stalls.
            AllocationMatrix m;
            for (int attempt = 0; attempt < kMaxRejectionAttempts; ++attempt) {
                m = uniform_rows(capacities, num_layers, rng);
                if (m.min_column_sum() >= 1) return m;
            }
            return repair_empty_columns(std::move(m));
        }

        case StrategyKind::kDepthPrefix:
            return prefix_rows(capacities, num_layers);

        case StrategyKind::kAllLarge:
            return prefix_rows(std::vector<int>(static_cast<std::size_t>(n), num_layers),
                               num_layers);

        case StrategyKind::kAllSmall: {
            int floor_cap = *std::min_element(capacities.begin(), capacities.end());
            return prefix_rows(std::vector<int>(static_cast<std::size_t>(n), floor_cap),
                               num_layers);
        }
    }
    throw InternalError("unknown strategy kind");
}

AllocationMatrix repair_empty_columns(AllocationMatrix m) {
    long long total = std::accumulate(m.capacities.begin(), m.capacities.end(), 0LL);
    if (total < m.num_layers)
        throw PreconditionError("repair_empty_columns: sum of capacities below layer count");

    std::vector<int> col = m.column_sums();
    for (int j = 0; j < m.num_layers; ++j) {
        if (col[j] > 0) continue;
        bool moved = false;
        for (int i = 0; i < m.num_clients && !moved; ++i) {
            for (int jp = 0; jp < m.num_layers && !moved; ++jp) {
                if (m.at(i, jp) && col[jp] >= 2) {
                    m.at(i, jp) = 0;
                    m.at(i, j) = 1;
                    --col[jp];
                    ++col[j];
                    moved = true;
                }
            }
        }
        if (!moved)
            throw InternalError("repair_empty_columns: no donatable assignment for layer " +
                                std::to_string(j + 1));
    }
    return m;
}

SelectionStats selection_stats(const std::vector<AllocationMatrix>& history) {
    if (history.empty()) throw PreconditionError("selection_stats: empty history");
    const int n = history.front().num_clients;
    const int l = history.front().num_layers;
    SelectionStats stats;
    stats.rounds = static_cast<int>(history.size());
    stats.counts.assign(static_cast<std::size_t>(n),
                        std::vector<long long>(static_cast<std::size_t>(l), 0));
    for (const AllocationMatrix& m : history) {
        if (m.num_clients != n || m.num_layers != l)
            throw ShapeError("selection_stats: inconsistent matrix shapes across rounds");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < l; ++j) stats.counts[i][j] += m.at(i, j);
    }
    stats.frequencies.assign(static_cast<std::size_t>(n),
                             std::vector<double>(static_cast<std::size_t>(l), 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < l; ++j)
            stats.frequencies[i][j] =
                static_cast<double>(stats.counts[i][j]) / static_cast<double>(stats.rounds);
    return stats;
}

void write_history_csv(std::ostream& out, const std::vector<AllocationMatrix>& history) {
    out << "round,client,layer,selected\n";
    for (std::size_t t = 0; t < history.size(); ++t) {
        const AllocationMatrix& m = history[t];
        for (int i = 0; i < m.num_clients; ++i)
            for (int j = 0; j < m.num_layers; ++j)
                out << (t + 1) << ',' << i << ',' << (j + 1) << ',' << int(m.at(i, j)) << '\n';
    }
}

}  // namespace fedra::allocation
