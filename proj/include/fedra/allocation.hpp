#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedra/rng.hpp"

namespace fedra::allocation {

/// N x L binary layer-to-client assignment for one round. Row i has exactly
/// capacities[i] ones: the layers client i receives.
struct AllocationMatrix {
    int num_clients = 0;
    int num_layers = 0;
    std::vector<std::uint8_t> entries;  // row-major, values in {0,1}
    std::vector<int> capacities;        // per-row ones count

    AllocationMatrix() = default;
    AllocationMatrix(int n, int l)
        : num_clients(n),
          num_layers(l),
          entries(static_cast<std::size_t>(n) * l, 0),
          capacities(static_cast<std::size_t>(n), 0) {}

    std::uint8_t& at(int client, int layer) {
        return entries[static_cast<std::size_t>(client) * num_layers + layer];
    }
    std::uint8_t at(int client, int layer) const {
        return entries[static_cast<std::size_t>(client) * num_layers + layer];
    }

    int row_sum(int client) const;
    int column_sum(int layer) const;
    std::vector<int> column_sums() const;
    int min_column_sum() const;

    /// Selected 1-based layer indices of one row, ascending.
    std::vector<int> selected_layers(int client) const;

    /// Row sums equal capacities and entries are binary.
    void validate() const;
};

enum class StrategyKind {
    kRandomUniform,      // each row: uniform capacity-sized subset, rows independent
    kRandomConstrained,  // additionally every layer covered by >= 1 client
    kDepthPrefix,        // row i = {1..L_i}
    kAllLarge,           // every client takes the full model
    kAllSmall,           // every client takes the prefix of the smallest capacity
};

struct AllocationStrategy {
    StrategyKind kind = StrategyKind::kRandomUniform;
    /// Dynamic heterogeneity: resample each capacity uniformly from [1, L]
    /// every round before generating the matrix.
    bool dynamic_capacity = false;
};

std::string strategy_kind_name(StrategyKind kind);

AllocationMatrix generate_allocation(const AllocationStrategy& strategy,
                                     const std::vector<int>& capacities, int num_layers,
                                     SplitRng& rng);

/// Resolve empty columns by moving single assignments: for each empty column
/// (ascending), the lowest-index client owning a column with sum >= 2 donates
/// that assignment. Row sums are preserved. Requires sum(capacities) >= L.
AllocationMatrix repair_empty_columns(AllocationMatrix m);

struct SelectionStats {
    std::vector<std::vector<long long>> counts;  // [client][layer]
    std::vector<std::vector<double>> frequencies;
    int rounds = 0;
};

SelectionStats selection_stats(const std::vector<AllocationMatrix>& history);

/// CSV audit dump: header "round,client,layer,selected", one row per cell.
void write_history_csv(std::ostream& out, const std::vector<AllocationMatrix>& history);

}  // namespace fedra::allocation
