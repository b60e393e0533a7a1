#pragma once

#include <functional>
#include <vector>

#include "fedra/allocation.hpp"
#include "fedra/data.hpp"
#include "fedra/model.hpp"
#include "fedra/rng.hpp"

namespace fedra::federation {

/// Sub-stream ids a round derives from its round rng. Shared so that tools
/// can reproduce a run's draws (e.g. allocation export) without running it.
namespace streams {
inline constexpr std::uint64_t kSample = 1;
inline constexpr std::uint64_t kCapacity = 2;
inline constexpr std::uint64_t kAlloc = 3;
inline constexpr std::uint64_t kClientBase = 16;
}  // namespace streams

/// What to do when a round's allocation leaves a layer with no trainer.
/// CarryForward keeps the server's previous adapter; ConstrainAllocation
/// expects the allocation itself to rule the case out (and treats an
/// uncovered layer as an internal error).
enum class MissingLayerStrategy { kCarryForward, kConstrainAllocation };

struct RoundConfig {
    allocation::AllocationStrategy strategy;
    MissingLayerStrategy missing = MissingLayerStrategy::kCarryForward;
    double lr = 0.01;
    int local_epochs = 1;
    int batch = 32;
    int clients_per_round = 0;  // 0 = every client participates
    int dynamic_cap_min = 1;    // dynamic capacity resample range
    int dynamic_cap_max = 0;    // 0 = num_layers
    /// Log the covered-layer gradient norm of the global objective each
    /// round (one extra full-batch pass; off by default).
    bool log_grad_norms = false;
};

struct ClientUpdate {
    int client_id = -1;
    std::vector<int> selected;               // 1-based, ascending
    std::vector<nn::LoraAdapter> adapters;   // parallel to selected
    nn::DenseParams head;
    long n_samples = 0;
    double mean_loss = 0.0;  // mean minibatch loss over the local run
};

/// One local fine-tuning run: minibatch SGD on the adapters and head of the
/// dispatched submodel, reshuffling each epoch. lr exactly 0 performs no
/// update and returns the dispatched parameters unchanged.
ClientUpdate local_train(model::SubModel sub, const data::LabeledDataset& train,
                         const RoundConfig& cfg, const SplitRng& rng, int round_index,
                         int client_id);

/// Dataset-size-weighted mean of the returned adapters, per layer, written
/// into the global stack. Uncovered layers follow `missing`.
void aggregate_lora(nn::LayerStack& global, const std::vector<ClientUpdate>& updates,
                    const allocation::AllocationMatrix& m, MissingLayerStrategy missing);

/// Dataset-size-weighted mean of all returned heads.
void aggregate_head(nn::LayerStack& global, const std::vector<ClientUpdate>& updates);

struct RoundReport {
    int round = 0;  // 1-based
    std::vector<int> participants;   // global client ids, ascending
    allocation::AllocationMatrix alloc;  // rows follow `participants`
    std::vector<double> domain_accuracy;
    std::vector<double> domain_loss;
    double average_accuracy = 0.0;
    std::vector<int> layer_update_counts;
    int gamma_min = 0;          // min count over covered layers
    double alpha_measured = 0.0;  // worst-client mask deviation at round start
    double adapter_norm2 = 0.0;   // ||r_t||^2 at round start
    double mean_local_loss = 0.0;
    double grad_norm2_covered = 0.0;  // only when log_grad_norms
};

struct ServerState {
    model::StackModel global;
    data::FederationScenario scenario;
    int rounds_done = 0;
};

ServerState make_server_state(const model::BuildConfig& cfg,
                              data::FederationScenario scenario, std::uint64_t model_seed);

/// One protocol round: sample participants, allocate layers, dispatch
/// submodels, train locally, aggregate, evaluate on every domain test set.
RoundReport run_round(ServerState& state, const RoundConfig& cfg, const SplitRng& round_rng);

using RoundCallback = std::function<void(const RoundReport&)>;

std::vector<RoundReport> run_federation(ServerState& state, int rounds, const RoundConfig& cfg,
                                        const SplitRng& rng,
                                        const RoundCallback& on_round = nullptr);

/// Overwrite the global adapters for `update.selected` plus the head with the
/// client's returned values (single-client write-back, no averaging).
void apply_update(nn::LayerStack& global, const ClientUpdate& update);

struct SubsetEpochStat {
    int epoch = 0;  // 1-based
    std::vector<int> selected;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
};

/// Centralized probe behind the random-allocation idea: each epoch trains a
/// fresh uniform k-subset of layers and writes it back. Model is taken by
/// value; the caller's copy is untouched.
std::vector<SubsetEpochStat> run_subset_convergence(model::StackModel model,
                                                    const data::LabeledDataset& train,
                                                    const data::LabeledDataset& test,
                                                    int subset_size, int epochs, double lr,
                                                    int batch, const SplitRng& rng);

}  // namespace fedra::federation
