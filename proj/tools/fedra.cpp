#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fedra/allocation.hpp"
#include "fedra/errors.hpp"
#include "fedra/harness.hpp"

namespace fs = std::filesystem;
using namespace fedra;

namespace {

struct CommonOpts {
    std::string config;
    std::string preset;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string method;
    int rounds = 0;
    std::string out;
    int workers = 0;
    int lora_rank = 0;
    std::string missing;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "key = value config file");
    cmd->add_option("--preset", o.preset, "named preset (see README)");
    cmd->add_option("--seed", o.seed, "single seed (replaces the seeds list)")
        ->each([&o](const std::string&) { o.seed_set = true; });
    cmd->add_option("--method", o.method,
                    "fedra | fedra-constrained | depth-prefix | all-large | all-small");
    cmd->add_option("--rounds", o.rounds, "federated rounds");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--workers", o.workers, "parallel workers");
    cmd->add_option("--lora-rank", o.lora_rank, "adapter rank");
    cmd->add_option("--missing", o.missing, "carry | constrain | auto")
        ->check(CLI::IsMember({"carry", "constrain", "auto"}));
    cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

harness::ExperimentConfig resolve(const CommonOpts& o) {
    std::string text;
    if (!o.preset.empty()) text += "preset = " + o.preset + "\n";
    if (!o.config.empty()) {
        std::ifstream f(o.config);
        if (!f) throw ConfigError("cannot open config file '" + o.config + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        text += ss.str();
        text += "\n";
    }
    harness::ExperimentConfig cfg = harness::parse_config_text(text);
    if (o.seed_set) harness::apply_override(cfg, "seeds", std::to_string(o.seed));
    if (!o.method.empty()) harness::apply_override(cfg, "method", o.method);
    if (o.rounds > 0) harness::apply_override(cfg, "rounds", std::to_string(o.rounds));
    if (!o.out.empty()) cfg.out = o.out;
    if (o.workers > 0) harness::apply_override(cfg, "workers", std::to_string(o.workers));
    if (o.lora_rank > 0) harness::apply_override(cfg, "lora_rank", std::to_string(o.lora_rank));
    if (!o.missing.empty()) harness::apply_override(cfg, "missing", o.missing);
    for (const std::string& kv : o.sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        harness::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    harness::validate_config(cfg);
    return cfg;
}

std::string target_dir(const harness::ExperimentConfig& cfg, const char* kind) {
    if (!cfg.out.empty()) return cfg.out;
    std::string id = harness::run_id(cfg, cfg.seeds.front()).substr(0, 12);
    return (fs::path(harness::resolve_out_root(cfg)) / (std::string(kind) + "-" + id)).string();
}

void write_or_print(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw ConfigError("cannot open '" + out_path + "' for writing");
    f << text;
}

int cmd_run(const CommonOpts& o) {
    harness::ExperimentConfig cfg = resolve(o);
    std::string dir = target_dir(cfg, "run");
    std::vector<harness::RunOutcome> outcomes = harness::run_experiment(cfg, dir);
    std::cout << "method " << cfg.method << ", " << cfg.rounds << " rounds -> " << dir << "\n";
    for (size_t i = 0; i < outcomes.size(); ++i) {
        std::printf("seed %llu: average accuracy %.4f\n",
                    static_cast<unsigned long long>(cfg.seeds[i]),
                    outcomes[i].final_average_accuracy);
    }
    return 0;
}

int cmd_sweep(const CommonOpts& o) {
    harness::ExperimentConfig cfg = resolve(o);
    std::string dir = target_dir(cfg, "sweep");
    harness::SweepResult result = harness::run_sweep(cfg, dir);
    std::cout << "sweep -> " << dir << "\n";
    std::ifstream table(fs::path(dir) / "sweep_table.csv");
    std::cout << table.rdbuf();
    return 0;
}

int cmd_subset(const CommonOpts& o) {
    harness::ExperimentConfig cfg = resolve(o);
    std::string dir = target_dir(cfg, "subset");
    harness::SubsetResult result = harness::run_subset_experiment(cfg, dir);
    std::cout << "subset-convergence -> " << dir << "\n";
    for (size_t i = 0; i < result.sizes.size(); ++i) {
        std::printf("subset %d: median final accuracy %.4f, train loss %.4f -> %.4f\n",
                    result.sizes[i], result.median_final_accuracy[i],
                    result.median_initial_train_loss[i], result.median_final_train_loss[i]);
    }
    return 0;
}

struct BoundOpts {
    std::string from_run;
    std::string config;
    std::string out;
    // NaN marks "not provided"
    double lipschitz = NAN, sigma2 = NAN, delta2 = NAN, alpha = NAN, eta = NAN;
    double n_clients = NAN, local_steps = NAN, rounds = NAN, gamma_star = NAN;
    double f1 = NAN, sum_r_norm2 = NAN;
};

theory::BoundInputs resolve_bound(const BoundOpts& o) {
    theory::BoundInputs in;
    if (!o.from_run.empty())
        in = harness::bound_inputs_from_summary((fs::path(o.from_run) / "summary.json").string());
    if (!o.config.empty()) {
        std::ifstream f(o.config);
        if (!f) throw ConfigError("cannot open bound config '" + o.config + "'");
        std::string line;
        size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto first = line.find_first_not_of(" \t\r\n");
            if (first == std::string::npos) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("bound config line " + std::to_string(lineno) +
                                  ": expected key = value");
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r\n");
                size_t b = s.find_last_not_of(" \t\r\n");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            std::string key = trim(line.substr(0, eq));
            double value = std::stod(trim(line.substr(eq + 1)));
            if (key == "lipschitz") in.lipschitz = value;
            else if (key == "sigma2") in.sigma2 = value;
            else if (key == "delta2") in.delta2 = value;
            else if (key == "alpha") in.alpha = value;
            else if (key == "n_clients") in.n_clients = value;
            else if (key == "local_steps") in.local_steps = value;
            else if (key == "rounds") in.rounds = value;
            else if (key == "eta") in.eta = value;
            else if (key == "gamma_star") in.gamma_star = value;
            else if (key == "f1") in.f1 = value;
            else if (key == "sum_r_norm2") in.sum_r_norm2 = value;
            else throw ConfigError("unknown bound input '" + key + "'");
        }
    }
    auto maybe = [](double& dst, double v) {
        if (!std::isnan(v)) dst = v;
    };
    maybe(in.lipschitz, o.lipschitz);
    maybe(in.sigma2, o.sigma2);
    maybe(in.delta2, o.delta2);
    maybe(in.alpha, o.alpha);
    maybe(in.eta, o.eta);
    maybe(in.n_clients, o.n_clients);
    maybe(in.local_steps, o.local_steps);
    maybe(in.rounds, o.rounds);
    maybe(in.gamma_star, o.gamma_star);
    maybe(in.f1, o.f1);
    maybe(in.sum_r_norm2, o.sum_r_norm2);
    return in;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale simulator of federated tuning with random layer allocation"};
    app.require_subcommand(1);

    CommonOpts run_opts, sweep_opts, subset_opts, export_opts;
    CLI::App* run_cmd = app.add_subcommand("run", "execute one configuration");
    add_common(run_cmd, run_opts);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "methods x seeds comparison table");
    add_common(sweep_cmd, sweep_opts);
    CLI::App* subset_cmd =
        app.add_subcommand("subset-convergence", "centralized random-subset training");
    add_common(subset_cmd, subset_opts);

    BoundOpts bound_opts;
    CLI::App* bound_cmd = app.add_subcommand("bound", "evaluate the convergence bound");
    bound_cmd->add_option("--from-run", bound_opts.from_run, "run directory with summary.json");
    bound_cmd->add_option("--config", bound_opts.config, "key = value bound inputs");
    bound_cmd->add_option("--out", bound_opts.out, "write JSON here instead of stdout");
    bound_cmd->add_option("--lipschitz", bound_opts.lipschitz, "smoothness constant h");
    bound_cmd->add_option("--sigma2", bound_opts.sigma2, "gradient variance");
    bound_cmd->add_option("--delta2", bound_opts.delta2, "client heterogeneity");
    bound_cmd->add_option("--alpha", bound_opts.alpha, "mask deviation coefficient");
    bound_cmd->add_option("--eta", bound_opts.eta, "learning rate");
    bound_cmd->add_option("--n-clients", bound_opts.n_clients, "N");
    bound_cmd->add_option("--local-steps", bound_opts.local_steps, "J");
    bound_cmd->add_option("--rounds", bound_opts.rounds, "T");
    bound_cmd->add_option("--gamma-star", bound_opts.gamma_star, "min layer update count");
    bound_cmd->add_option("--f1", bound_opts.f1, "initial objective value");
    bound_cmd->add_option("--sum-r-norm2", bound_opts.sum_r_norm2, "sum of ||r_t||^2");

    std::string check_filter;
    CLI::App* check_cmd = app.add_subcommand("check", "run the invariant suite");
    check_cmd->add_option("--filter", check_filter, "only checks whose name contains this");

    std::string export_what, export_path;
    CLI::App* export_cmd = app.add_subcommand("export", "dump datasets or allocations as CSV");
    export_cmd->add_option("--what", export_what, "datasets | allocations")
        ->required()
        ->check(CLI::IsMember({"datasets", "allocations"}));
    export_cmd->add_option("--file", export_path, "output file (default stdout)");
    add_common(export_cmd, export_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return cmd_run(run_opts);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts);
        if (subset_cmd->parsed()) return cmd_subset(subset_opts);
        if (bound_cmd->parsed()) {
            std::string json = harness::bound_report_json(resolve_bound(bound_opts));
            write_or_print(bound_opts.out, json);
            return 0;
        }
        if (check_cmd->parsed())
            return harness::run_checks(std::cout, check_filter) > 0 ? 1 : 0;
        if (export_cmd->parsed()) {
            harness::ExperimentConfig cfg = resolve(export_opts);
            std::ostringstream ss;
            if (export_what == "datasets") {
                data::export_domains_csv(ss, harness::build_domains(cfg, cfg.seeds.front()));
            } else {
                allocation::write_history_csv(
                    ss, harness::export_allocation_history(cfg, cfg.seeds.front()));
            }
            write_or_print(export_path, ss.str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
