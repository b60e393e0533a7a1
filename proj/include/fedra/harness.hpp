#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedra/federation.hpp"
#include "fedra/theory.hpp"

namespace fedra::harness {

/// Everything a run needs, resolvable from defaults, a preset, a key=value
/// config file, and CLI overrides (applied in that order).
struct ExperimentConfig {
    std::string preset;
    std::string method = "fedra";  // fedra | fedra-constrained | depth-prefix |
                                   // all-large | all-small
    // scenario
    std::string partition = "feature-skew";  // feature-skew | feature-label-skew
    std::vector<int> capacities = {8, 6, 5, 4, 3, 2};  // one per domain
    double dirichlet_alpha = 0.5;
    int parts_per_domain = 5;
    int domains = 6;
    int classes = 10;
    int input_dim = 32;
    int samples_per_domain = 750;
    double prototype_scale = 1.0;
    double rotation_strength = 1.0;
    double shift_scale = 0.5;
    double noise_scale = 0.4;
    // model
    int layers = 8;
    int hidden_dim = 32;
    int lora_rank = 4;
    double lora_scale = 1.0;
    std::string activation = "relu";  // relu | tanh
    // training
    int rounds = 60;
    double lr = 0.01;
    int local_epochs = 1;
    int batch = 32;
    int clients_per_round = 0;  // 0 = all
    std::string missing = "auto";  // auto | carry | constrain
    bool dynamic = false;
    int dynamic_cap_min = 1;
    int dynamic_cap_max = 0;  // 0 = layers
    // subset-convergence mode
    std::vector<int> subset_sizes = {2, 4, 8};
    int subset_epochs = 60;
    // run control
    std::vector<std::uint64_t> seeds = {1};
    std::vector<std::string> methods = {"fedra", "depth-prefix", "all-large", "all-small"};
    std::string out;  // empty: FEDRA_OUT_ROOT env var, then "runs"
    int workers = 1;
    int checkpoint_every = 0;
    bool estimate_constants = false;
    bool log_grad_norms = false;
};

std::vector<std::string> preset_names();
void apply_preset(ExperimentConfig& cfg, const std::string& name);

/// key = value lines, '#' comments, lists comma-separated. Unknown keys are
/// errors. "preset" is applied before any other key in the same file.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void validate_config(const ExperimentConfig& cfg);

/// Canonical sorted key=value dump of the fully resolved config.
std::string resolved_config_text(const ExperimentConfig& cfg);

/// 40-hex-char id hashing the resolved config and seed.
std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed);

/// Output root: cfg.out, else $FEDRA_OUT_ROOT, else "runs".
std::string resolve_out_root(const ExperimentConfig& cfg);

allocation::AllocationStrategy method_strategy(const std::string& method, bool dynamic);
federation::MissingLayerStrategy resolved_missing(const ExperimentConfig& cfg);
federation::RoundConfig make_round_config(const ExperimentConfig& cfg);
model::BuildConfig make_model_config(const ExperimentConfig& cfg);

data::FederationScenario build_scenario(const ExperimentConfig& cfg, std::uint64_t seed);

/// Capacities per client (feature-label-skew repeats each domain's value
/// parts_per_domain times).
std::vector<int> expanded_capacities(const ExperimentConfig& cfg);

/// The synthetic domains a run with this (config, seed) would see.
std::vector<data::DomainData> build_domains(const ExperimentConfig& cfg, std::uint64_t seed);

/// The global model a run with this (config, seed) starts from.
model::StackModel build_initial_model(const ExperimentConfig& cfg, std::uint64_t seed);

/// The allocation matrices a full-participation run with this (config, seed)
/// would draw, without training anything.
std::vector<allocation::AllocationMatrix> export_allocation_history(const ExperimentConfig& cfg,
                                                                    std::uint64_t seed);

struct RunOutcome {
    std::vector<federation::RoundReport> reports;
    std::vector<std::string> domain_names;
    std::vector<double> final_domain_accuracy;
    std::vector<double> final_domain_loss;
    double final_average_accuracy = 0.0;
    double f1_estimate = 0.0;       // initial global training loss
    double sum_r_norm2 = 0.0;       // sum over rounds of ||r_t||^2
    int gamma_star = 0;             // min covered-layer count over the run
    double alpha_max = 0.0;
    double local_steps_mean = 0.0;  // mean J over clients
    int n_clients = 0;
    std::string frozen_digest_initial;
    std::string frozen_digest_final;
    std::optional<theory::EmpiricalConstants> constants;
};

/// Pure simulation: (config, seed) -> outcome. Checkpoints are written only
/// when checkpoint_dir is non-empty and cfg.checkpoint_every > 0.
RunOutcome execute_run(const ExperimentConfig& cfg, std::uint64_t seed,
                       const std::string& checkpoint_dir = "");

/// metrics.csv, plot.csv, allocations.csv, summary.json, manifest.json
/// (plus theory.csv when gradient logging is on) under `dir`.
void write_run_outputs(const ExperimentConfig& cfg, std::uint64_t seed,
                       const RunOutcome& outcome, const std::string& dir);

/// One directory per seed under out_dir ("seed<N>").
std::vector<RunOutcome> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct SweepCell {
    std::string method;
    std::uint64_t seed = 0;
    RunOutcome outcome;
};

struct SweepResult {
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds;
    std::vector<SweepCell> cells;  // method-major, seed-minor
};

/// methods x seeds grid; writes per-cell outputs plus sweep_table.csv
/// (rows = methods, columns = domains + Average, mean over seeds),
/// sweep_raw.csv, and plot.csv merged across cells.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& out_dir);

struct SubsetCurve {
    int subset_size = 0;
    std::uint64_t seed = 0;
    std::vector<federation::SubsetEpochStat> epochs;
};

struct SubsetResult {
    std::vector<SubsetCurve> curves;  // size-major, seed-minor
    std::vector<int> sizes;
    std::vector<double> median_final_accuracy;  // per size, median over seeds
    std::vector<double> median_final_train_loss;
    std::vector<double> median_initial_train_loss;
};

/// Centralized random-subset training on the pooled domains.
SubsetResult run_subset_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

/// Inputs from a run's summary.json, overridable by the caller afterwards.
theory::BoundInputs bound_inputs_from_summary(const std::string& summary_path);

std::string bound_report_json(const theory::BoundInputs& in);

// --- invariant suite ------------------------------------------------------

struct Check {
    std::string name;
    std::function<void()> fn;  // throws on failure
};

const std::vector<Check>& all_checks();

/// Runs every check whose name contains `filter`; prints one line each.
/// Returns the number of failures.
int run_checks(std::ostream& out, const std::string& filter = "");

}  // namespace fedra::harness
