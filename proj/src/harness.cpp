#include "fedra/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fedra/errors.hpp"
#include "fedra/sha256.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fedra::harness {

namespace {

std::string fmt_g17(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_g10(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    std::string last = trim(cur);
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const std::string& item : split_list(v)) out.push_back(parse_int(key, item));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(v)) {
        try {
            size_t pos = 0;
            out.push_back(std::stoull(item, &pos));
            if (pos != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected unsigned integer, got '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::string join_u64s(const std::vector<std::uint64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::string join_strings(const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += v[i];
    }
    return s;
}

struct KeyDesc {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyDesc>& key_table() {
    static const std::vector<KeyDesc> table = {
        {"method", [](ExperimentConfig& c, const std::string& v) { c.method = v; },
         [](const ExperimentConfig& c) { return c.method; }},
        {"partition", [](ExperimentConfig& c, const std::string& v) { c.partition = v; },
         [](const ExperimentConfig& c) { return c.partition; }},
        {"capacities",
         [](ExperimentConfig& c, const std::string& v) {
             c.capacities = parse_int_list("capacities", v);
         },
         [](const ExperimentConfig& c) { return join_ints(c.capacities); }},
        {"dirichlet_alpha",
         [](ExperimentConfig& c, const std::string& v) {
             c.dirichlet_alpha = parse_double("dirichlet_alpha", v);
         },
         [](const ExperimentConfig& c) { return fmt_g17(c.dirichlet_alpha); }},
        {"parts_per_domain",
         [](ExperimentConfig& c, const std::string& v) {
             c.parts_per_domain = parse_int("parts_per_domain", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.parts_per_domain); }},
        {"domains",
         [](ExperimentConfig& c, const std::string& v) { c.domains = parse_int("domains", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.domains); }},
        {"classes",
         [](ExperimentConfig& c, const std::string& v) { c.classes = parse_int("classes", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.classes); }},
        {"input_dim",
         [](ExperimentConfig& c, const std::string& v) {
             c.input_dim = parse_int("input_dim", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.input_dim); }},
        {"samples_per_domain",
         [](ExperimentConfig& c, const std::string& v) {
             c.samples_per_domain = parse_int("samples_per_domain", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.samples_per_domain); }},
        {"prototype_scale",
         [](ExperimentConfig& c, const std::string& v) {
             c.prototype_scale = parse_double("prototype_scale", v);
         },
         [](const ExperimentConfig& c) { return fmt_g17(c.prototype_scale); }},
        {"rotation_strength",
         [](ExperimentConfig& c, const std::string& v) {
             c.rotation_strength = parse_double("rotation_strength", v);
         },
         [](const ExperimentConfig& c) { return fmt_g17(c.rotation_strength); }},
        {"shift_scale",
         [](ExperimentConfig& c, const std::string& v) {
             c.shift_scale = parse_double("shift_scale", v);
         },
         [](const ExperimentConfig& c) { return fmt_g17(c.shift_scale); }},
        {"noise_scale",
         [](ExperimentConfig& c, const std::string& v) {
             c.noise_scale = parse_double("noise_scale", v);
         },
         [](const ExperimentConfig& c) { return fmt_g17(c.noise_scale); }},
        {"layers",
         [](ExperimentConfig& c, const std::string& v) { c.layers = parse_int("layers", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.layers); }},
        {"hidden_dim",
         [](ExperimentConfig& c, const std::string& v) {
             c.hidden_dim = parse_int("hidden_dim", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.hidden_dim); }},
        {"lora_rank",
         [](ExperimentConfig& c, const std::string& v) {
             c.lora_rank = parse_int("lora_rank", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.lora_rank); }},
        {"lora_scale",
         [](ExperimentConfig& c, const std::string& v) {
             c.lora_scale = parse_double("lora_scale", v);
         },
         [](const ExperimentConfig& c) { return fmt_g17(c.lora_scale); }},
        {"activation",
         [](ExperimentConfig& c, const std::string& v) { c.activation = v; },
         [](const ExperimentConfig& c) { return c.activation; }},
        {"rounds",
         [](ExperimentConfig& c, const std::string& v) { c.rounds = parse_int("rounds", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.rounds); }},
        {"lr", [](ExperimentConfig& c, const std::string& v) { c.lr = parse_double("lr", v); },
         [](const ExperimentConfig& c) { return fmt_g17(c.lr); }},
        {"local_epochs",
         [](ExperimentConfig& c, const std::string& v) {
             c.local_epochs = parse_int("local_epochs", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.local_epochs); }},
        {"batch",
         [](ExperimentConfig& c, const std::string& v) { c.batch = parse_int("batch", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.batch); }},
        {"clients_per_round",
         [](ExperimentConfig& c, const std::string& v) {
             c.clients_per_round = parse_int("clients_per_round", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.clients_per_round); }},
        {"missing", [](ExperimentConfig& c, const std::string& v) { c.missing = v; },
         [](const ExperimentConfig& c) { return c.missing; }},
        {"dynamic",
         [](ExperimentConfig& c, const std::string& v) { c.dynamic = parse_bool("dynamic", v); },
         [](const ExperimentConfig& c) { return c.dynamic ? "true" : "false"; }},
        {"dynamic_cap_min",
         [](ExperimentConfig& c, const std::string& v) {
             c.dynamic_cap_min = parse_int("dynamic_cap_min", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dynamic_cap_min); }},
        {"dynamic_cap_max",
         [](ExperimentConfig& c, const std::string& v) {
             c.dynamic_cap_max = parse_int("dynamic_cap_max", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.dynamic_cap_max); }},
        {"subset_sizes",
         [](ExperimentConfig& c, const std::string& v) {
             c.subset_sizes = parse_int_list("subset_sizes", v);
         },
         [](const ExperimentConfig& c) { return join_ints(c.subset_sizes); }},
        {"subset_epochs",
         [](ExperimentConfig& c, const std::string& v) {
             c.subset_epochs = parse_int("subset_epochs", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.subset_epochs); }},
        {"seeds",
         [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_u64_list("seeds", v); },
         [](const ExperimentConfig& c) { return join_u64s(c.seeds); }},
        {"methods",
         [](ExperimentConfig& c, const std::string& v) {
             c.methods = split_list(v);
             if (c.methods.empty()) throw ConfigError("methods: empty list");
         },
         [](const ExperimentConfig& c) { return join_strings(c.methods); }},
        {"out", [](ExperimentConfig& c, const std::string& v) { c.out = v; },
         [](const ExperimentConfig& c) { return c.out; }},
        {"workers",
         [](ExperimentConfig& c, const std::string& v) { c.workers = parse_int("workers", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.workers); }},
        {"checkpoint_every",
         [](ExperimentConfig& c, const std::string& v) {
             c.checkpoint_every = parse_int("checkpoint_every", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.checkpoint_every); }},
        {"estimate_constants",
         [](ExperimentConfig& c, const std::string& v) {
             c.estimate_constants = parse_bool("estimate_constants", v);
         },
         [](const ExperimentConfig& c) { return c.estimate_constants ? "true" : "false"; }},
        {"log_grad_norms",
         [](ExperimentConfig& c, const std::string& v) {
             c.log_grad_norms = parse_bool("log_grad_norms", v);
         },
         [](const ExperimentConfig& c) { return c.log_grad_norms ? "true" : "false"; }},
    };
    return table;
}

const KeyDesc* find_key(const std::string& key) {
    for (const KeyDesc& d : key_table())
        if (key == d.key) return &d;
    return nullptr;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"table1-desk", "table2-desk", "table3-desk", "table4-desk"};
}

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
    ExperimentConfig base;
    base.out = cfg.out;
    base.workers = cfg.workers;
    base.preset = name;
    if (name == "table1-desk") {
        // heterogeneous capacities, one client per domain
        base.partition = "feature-skew";
        base.capacities = {8, 6, 5, 4, 3, 2};
        base.seeds = {1, 2, 3};
    } else if (name == "table2-desk") {
        // feature + label skew: Dirichlet shards inside each domain
        base.partition = "feature-label-skew";
        base.capacities = {8, 6, 5, 4, 3, 2};
        base.parts_per_domain = 5;
        base.dirichlet_alpha = 0.5;
        base.seeds = {1, 2, 3};
    } else if (name == "table3-desk") {
        // every client strictly smaller than the server model; longer horizon
        // because capped submodels need more rounds to settle
        base.partition = "feature-skew";
        base.capacities = {4, 4, 4, 4, 4, 4};
        base.rounds = 150;
        base.seeds = {1, 2, 3};
    } else if (name == "table4-desk") {
        // dynamic heterogeneity: capacities resampled every round; long
        // horizon so both strategies reach their plateau before comparison
        base.partition = "feature-skew";
        base.capacities = {8, 6, 5, 4, 3, 2};
        base.dynamic = true;
        base.rounds = 500;
        base.methods = {"fedra", "depth-prefix"};
        base.seeds = {1, 2, 3};
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    cfg = base;
}

ExperimentConfig parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }

    ExperimentConfig cfg;
    for (const auto& [k, v] : pairs)
        if (k == "preset" && !v.empty()) apply_preset(cfg, v);
    for (const auto& [k, v] : pairs) {
        if (k == "preset") continue;
        apply_override(cfg, k, v);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "preset") {
        if (!value.empty()) apply_preset(cfg, value);
        return;
    }
    const KeyDesc* d = find_key(key);
    if (d == nullptr) throw ConfigError("unknown config key '" + key + "'");
    d->set(cfg, value);
}

allocation::AllocationStrategy method_strategy(const std::string& method, bool dynamic) {
    allocation::AllocationStrategy s;
    s.dynamic_capacity = dynamic;
    if (method == "fedra") s.kind = allocation::StrategyKind::kRandomUniform;
    else if (method == "fedra-constrained") s.kind = allocation::StrategyKind::kRandomConstrained;
    else if (method == "depth-prefix") s.kind = allocation::StrategyKind::kDepthPrefix;
    else if (method == "all-large") s.kind = allocation::StrategyKind::kAllLarge;
    else if (method == "all-small") s.kind = allocation::StrategyKind::kAllSmall;
    else throw ConfigError("unknown method '" + method + "'");
    return s;
}

federation::MissingLayerStrategy resolved_missing(const ExperimentConfig& cfg) {
    if (cfg.missing == "auto")
        return cfg.method == "fedra-constrained"
                   ? federation::MissingLayerStrategy::kConstrainAllocation
                   : federation::MissingLayerStrategy::kCarryForward;
    if (cfg.missing == "carry") return federation::MissingLayerStrategy::kCarryForward;
    if (cfg.missing == "constrain") return federation::MissingLayerStrategy::kConstrainAllocation;
    throw ConfigError("missing must be auto, carry, or constrain");
}

void validate_config(const ExperimentConfig& cfg) {
    method_strategy(cfg.method, cfg.dynamic);
    if (cfg.partition != "feature-skew" && cfg.partition != "feature-label-skew")
        throw ConfigError("partition must be feature-skew or feature-label-skew");
    if (cfg.activation != "relu" && cfg.activation != "tanh")
        throw ConfigError("activation must be relu or tanh");
    if (cfg.domains < 1) throw ConfigError("domains must be >= 1");
    if (cfg.classes < 2) throw ConfigError("classes must be >= 2");
    if (cfg.input_dim < 1 || cfg.hidden_dim < 1) throw ConfigError("dims must be >= 1");
    if (cfg.layers < 1) throw ConfigError("layers must be >= 1");
    if (cfg.lora_rank < 1 || cfg.lora_rank > cfg.hidden_dim)
        throw ConfigError("lora_rank must be in [1, hidden_dim]");
    if (cfg.samples_per_domain < 2 * cfg.classes)
        throw ConfigError("samples_per_domain must be >= 2 * classes");
    if (static_cast<int>(cfg.capacities.size()) != cfg.domains)
        throw ConfigError("capacities must list one value per domain");
    for (int c : cfg.capacities)
        if (c < 1 || c > cfg.layers) throw ConfigError("capacities must be in [1, layers]");
    if (cfg.partition == "feature-label-skew") {
        if (cfg.parts_per_domain < 1) throw ConfigError("parts_per_domain must be >= 1");
        if (!(cfg.dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha must be positive");
    }
    if (cfg.rounds < 1) throw ConfigError("rounds must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
    if (cfg.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
    if (cfg.clients_per_round < 0) throw ConfigError("clients_per_round must be >= 0");
    resolved_missing(cfg);
    if (resolved_missing(cfg) == federation::MissingLayerStrategy::kConstrainAllocation &&
        cfg.method != "fedra-constrained")
        throw ConfigError("missing=constrain requires method=fedra-constrained");
    for (int s : cfg.subset_sizes)
        if (s < 1 || s > cfg.layers) throw ConfigError("subset_sizes must be in [1, layers]");
    if (cfg.subset_epochs < 1) throw ConfigError("subset_epochs must be >= 1");
    if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (cfg.methods.empty()) throw ConfigError("methods must be non-empty");
    for (const std::string& m : cfg.methods) method_strategy(m, cfg.dynamic);
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
    if (cfg.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (cfg.dynamic) {
        int hi = cfg.dynamic_cap_max > 0 ? cfg.dynamic_cap_max : cfg.layers;
        if (cfg.dynamic_cap_min < 1 || cfg.dynamic_cap_min > hi || hi > cfg.layers)
            throw ConfigError("dynamic capacity range invalid");
    }
}

std::string resolved_config_text(const ExperimentConfig& cfg) {
    std::string out = "preset = " + cfg.preset + "\n";
    for (const KeyDesc& d : key_table()) out += std::string(d.key) + " = " + d.get(cfg) + "\n";
    return out;
}

std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed) {
    std::string digest =
        sha256_hex(resolved_config_text(cfg) + "seed = " + std::to_string(seed) + "\n");
    return digest.substr(0, 40);
}

std::string resolve_out_root(const ExperimentConfig& cfg) {
    if (!cfg.out.empty()) return cfg.out;
    if (const char* env = std::getenv("FEDRA_OUT_ROOT"); env != nullptr && env[0] != '\0')
        return env;
    return "runs";
}

model::BuildConfig make_model_config(const ExperimentConfig& cfg) {
    model::BuildConfig mc;
    mc.layers = cfg.layers;
    mc.input_dim = cfg.input_dim;
    mc.hidden_dim = cfg.hidden_dim;
    mc.classes = cfg.classes;
    mc.rank = cfg.lora_rank;
    mc.lora_scale = cfg.lora_scale;
    mc.activation = cfg.activation == "tanh" ? nn::Activation::kTanh : nn::Activation::kRelu;
    return mc;
}

federation::RoundConfig make_round_config(const ExperimentConfig& cfg) {
    federation::RoundConfig rc;
    rc.strategy = method_strategy(cfg.method, cfg.dynamic);
    rc.missing = resolved_missing(cfg);
    rc.lr = cfg.lr;
    rc.local_epochs = cfg.local_epochs;
    rc.batch = cfg.batch;
    rc.clients_per_round = cfg.clients_per_round;
    rc.dynamic_cap_min = cfg.dynamic_cap_min;
    rc.dynamic_cap_max = cfg.dynamic_cap_max;
    rc.log_grad_norms = cfg.log_grad_norms;
    return rc;
}

namespace {

constexpr std::uint64_t kStreamScenario = 1;
constexpr std::uint64_t kStreamPartition = 2;
constexpr std::uint64_t kStreamModel = 3;
constexpr std::uint64_t kStreamFederation = 4;
constexpr std::uint64_t kStreamSubset = 5;
constexpr std::uint64_t kStreamConstants = 6;

data::SyntheticConfig make_synth_config(const ExperimentConfig& cfg) {
    data::SyntheticConfig s;
    s.num_domains = cfg.domains;
    s.num_classes = cfg.classes;
    s.input_dim = cfg.input_dim;
    s.samples_per_domain = cfg.samples_per_domain;
    s.prototype_scale = cfg.prototype_scale;
    s.rotation_strength = cfg.rotation_strength;
    s.shift_scale = cfg.shift_scale;
    s.noise_scale = cfg.noise_scale;
    return s;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path + "'");
}

std::string utc_timestamp() {
    std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

double median(std::vector<double> v) {
    if (v.empty()) throw PreconditionError("median of empty set");
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<int> expanded_capacities(const ExperimentConfig& cfg) {
    if (cfg.partition != "feature-label-skew") return cfg.capacities;
    std::vector<int> caps;
    for (int c : cfg.capacities)
        caps.insert(caps.end(), static_cast<std::size_t>(cfg.parts_per_domain), c);
    return caps;
}

std::vector<data::DomainData> build_domains(const ExperimentConfig& cfg, std::uint64_t seed) {
    SplitRng master(seed);
    SplitRng data_rng = master.split(kStreamScenario);
    return data::make_synthetic_domains(make_synth_config(cfg), data_rng);
}

model::StackModel build_initial_model(const ExperimentConfig& cfg, std::uint64_t seed) {
    return model::build_stack_model(make_model_config(cfg),
                                    SplitRng(seed).split(kStreamModel).seed());
}

data::FederationScenario build_scenario(const ExperimentConfig& cfg, std::uint64_t seed) {
    std::vector<data::DomainData> domains = build_domains(cfg, seed);
    data::PartitionMode mode = cfg.partition == "feature-label-skew"
                                   ? data::PartitionMode::kFeatureLabelSkew
                                   : data::PartitionMode::kFeatureSkew;
    SplitRng part_rng = SplitRng(seed).split(kStreamPartition);
    return data::build_federation_scenario(mode, expanded_capacities(cfg), cfg.dirichlet_alpha,
                                           cfg.parts_per_domain, domains, part_rng);
}

std::vector<allocation::AllocationMatrix> export_allocation_history(const ExperimentConfig& cfg,
                                                                    std::uint64_t seed) {
    validate_config(cfg);
    allocation::AllocationStrategy strategy = method_strategy(cfg.method, cfg.dynamic);
    std::vector<int> caps = expanded_capacities(cfg);
    SplitRng fed = SplitRng(seed).split(kStreamFederation);
    std::vector<allocation::AllocationMatrix> history;
    history.reserve(static_cast<std::size_t>(cfg.rounds));
    for (int t = 1; t <= cfg.rounds; ++t) {
        SplitRng round_rng = fed.split(static_cast<std::uint64_t>(t));
        std::vector<int> round_caps = caps;
        if (strategy.dynamic_capacity) {
            int lo = std::max(1, cfg.dynamic_cap_min);
            int hi = cfg.dynamic_cap_max > 0 ? std::min(cfg.dynamic_cap_max, cfg.layers)
                                             : cfg.layers;
            SplitRng cap_rng = round_rng.split(federation::streams::kCapacity);
            for (int& c : round_caps)
                c = lo + static_cast<int>(
                             cap_rng.next_index(static_cast<std::size_t>(hi - lo + 1)));
        }
        SplitRng alloc_rng = round_rng.split(federation::streams::kAlloc);
        history.push_back(
            allocation::generate_allocation(strategy, round_caps, cfg.layers, alloc_rng));
    }
    return history;
}

RunOutcome execute_run(const ExperimentConfig& cfg, std::uint64_t seed,
                       const std::string& checkpoint_dir) {
    validate_config(cfg);
    SplitRng master(seed);
    federation::ServerState state = federation::make_server_state(
        make_model_config(cfg), build_scenario(cfg, seed), master.split(kStreamModel).seed());

    RunOutcome outcome;
    outcome.domain_names = state.scenario.domain_names;
    outcome.n_clients = static_cast<int>(state.scenario.clients.size());
    outcome.frozen_digest_initial = model::frozen_param_digest(state.global);

    double steps = 0.0;
    for (const auto& shard : state.scenario.clients) {
        model::EvalResult ev =
            model::evaluate(state.global, shard.train.features, shard.train.labels);
        outcome.f1_estimate += ev.mean_loss / outcome.n_clients;
        steps += cfg.local_epochs *
                 std::ceil(static_cast<double>(shard.train.size()) / cfg.batch);
    }
    outcome.local_steps_mean = steps / outcome.n_clients;

    bool checkpoints = cfg.checkpoint_every > 0 && !checkpoint_dir.empty();
    if (checkpoints) fs::create_directories(checkpoint_dir);

    federation::RoundCallback cb = [&](const federation::RoundReport& rep) {
        outcome.sum_r_norm2 += rep.adapter_norm2;
        outcome.alpha_max = std::max(outcome.alpha_max, rep.alpha_measured);
        if (rep.gamma_min >= 1 &&
            (outcome.gamma_star == 0 || rep.gamma_min < outcome.gamma_star))
            outcome.gamma_star = rep.gamma_min;
        if (checkpoints && rep.round % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "round%04d.ckpt", rep.round);
            model::save_checkpoint(state.global, (fs::path(checkpoint_dir) / name).string());
        }
    };

    outcome.reports = federation::run_federation(state, cfg.rounds, make_round_config(cfg),
                                                 master.split(kStreamFederation), cb);

    const federation::RoundReport& last = outcome.reports.back();
    outcome.final_domain_accuracy = last.domain_accuracy;
    outcome.final_domain_loss = last.domain_loss;
    outcome.final_average_accuracy = last.average_accuracy;
    outcome.frozen_digest_final = model::frozen_param_digest(state.global);

    if (cfg.estimate_constants) {
        std::vector<data::LabeledDataset> trains;
        trains.reserve(state.scenario.clients.size());
        for (const auto& shard : state.scenario.clients) trains.push_back(shard.train);
        outcome.constants = theory::estimate_constants(state.global, trains, {},
                                                       master.split(kStreamConstants));
    }
    return outcome;
}

namespace {

std::string metrics_csv_text(const RunOutcome& outcome) {
    std::string s = "round,domain,accuracy,loss,gamma_min,alpha_measured\n";
    for (const auto& rep : outcome.reports) {
        for (size_t d = 0; d < outcome.domain_names.size(); ++d) {
            s += std::to_string(rep.round) + "," + outcome.domain_names[d] + "," +
                 fmt_g10(rep.domain_accuracy[d]) + "," + fmt_g10(rep.domain_loss[d]) + "," +
                 std::to_string(rep.gamma_min) + "," + fmt_g10(rep.alpha_measured) + "\n";
        }
    }
    return s;
}

std::string plot_csv_text(const RunOutcome& outcome, const std::string& method,
                          std::uint64_t seed) {
    std::string s = "round,method,seed,average_accuracy\n";
    for (const auto& rep : outcome.reports)
        s += std::to_string(rep.round) + "," + method + "," + std::to_string(seed) + "," +
             fmt_g10(rep.average_accuracy) + "\n";
    return s;
}

std::string allocations_csv_text(const RunOutcome& outcome) {
    std::string s = "round,client,layer,selected\n";
    for (const auto& rep : outcome.reports) {
        for (int i = 0; i < rep.alloc.num_clients; ++i) {
            for (int j = 0; j < rep.alloc.num_layers; ++j) {
                s += std::to_string(rep.round) + "," + std::to_string(rep.participants[i]) +
                     "," + std::to_string(j + 1) + "," + std::to_string(int(rep.alloc.at(i, j))) +
                     "\n";
            }
        }
    }
    return s;
}

std::string theory_csv_text(const RunOutcome& outcome) {
    std::string s = "round,grad_norm2_covered,adapter_norm2,gamma_min,alpha_measured,mean_local_loss\n";
    for (const auto& rep : outcome.reports)
        s += std::to_string(rep.round) + "," + fmt_g10(rep.grad_norm2_covered) + "," +
             fmt_g10(rep.adapter_norm2) + "," + std::to_string(rep.gamma_min) + "," +
             fmt_g10(rep.alpha_measured) + "," + fmt_g10(rep.mean_local_loss) + "\n";
    return s;
}

std::string summary_json_text(const ExperimentConfig& cfg, std::uint64_t seed,
                              const RunOutcome& outcome) {
    ordered_json j;
    j["run_id"] = run_id(cfg, seed);
    j["method"] = cfg.method;
    j["seed"] = seed;
    j["rounds"] = cfg.rounds;
    j["n_clients"] = outcome.n_clients;
    j["layers"] = cfg.layers;
    j["eta"] = cfg.lr;
    j["local_steps_mean"] = outcome.local_steps_mean;
    j["domains"] = outcome.domain_names;
    ordered_json acc, loss;
    for (size_t d = 0; d < outcome.domain_names.size(); ++d) {
        acc[outcome.domain_names[d]] = outcome.final_domain_accuracy[d];
        loss[outcome.domain_names[d]] = outcome.final_domain_loss[d];
    }
    j["final_domain_accuracy"] = acc;
    j["final_domain_loss"] = loss;
    j["average_accuracy"] = outcome.final_average_accuracy;
    j["f1_estimate"] = outcome.f1_estimate;
    j["sum_r_norm2"] = outcome.sum_r_norm2;
    j["gamma_star"] = outcome.gamma_star;
    j["alpha_max"] = outcome.alpha_max;
    j["frozen_digest_initial"] = outcome.frozen_digest_initial;
    j["frozen_digest_final"] = outcome.frozen_digest_final;
    if (outcome.constants) {
        j["constants"] = {{"lipschitz", outcome.constants->lipschitz},
                          {"sigma2", outcome.constants->sigma2},
                          {"delta2", outcome.constants->delta2}};
    }
    return j.dump(2) + "\n";
}

}  // namespace

void write_run_outputs(const ExperimentConfig& cfg, std::uint64_t seed,
                       const RunOutcome& outcome, const std::string& dir) {
    fs::create_directories(dir);
    fs::path base(dir);
    write_text_file((base / "metrics.csv").string(), metrics_csv_text(outcome));
    write_text_file((base / "plot.csv").string(), plot_csv_text(outcome, cfg.method, seed));
    write_text_file((base / "allocations.csv").string(), allocations_csv_text(outcome));
    write_text_file((base / "summary.json").string(), summary_json_text(cfg, seed, outcome));
    if (cfg.log_grad_norms)
        write_text_file((base / "theory.csv").string(), theory_csv_text(outcome));

    std::vector<std::string> files = {"metrics.csv", "plot.csv", "allocations.csv",
                                      "summary.json"};
    if (cfg.log_grad_norms) files.push_back("theory.csv");
    ordered_json manifest;
    manifest["run_id"] = run_id(cfg, seed);
    manifest["created_utc"] = utc_timestamp();
    manifest["seed"] = seed;
    manifest["seeds"] = cfg.seeds;
    manifest["config"] = resolved_config_text(cfg);
    manifest["outputs"] = files;
    write_text_file((base / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::vector<RunOutcome> run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    validate_config(cfg);
    int n = static_cast<int>(cfg.seeds.size());
    std::vector<RunOutcome> outcomes(static_cast<std::size_t>(n));
    parallel_for(n, cfg.workers, [&](int i) {
        fs::path dir = fs::path(out_dir) / ("seed" + std::to_string(cfg.seeds[i]));
        outcomes[static_cast<std::size_t>(i)] =
            execute_run(cfg, cfg.seeds[i], (dir / "checkpoints").string());
    });
    for (int i = 0; i < n; ++i) {
        fs::path dir = fs::path(out_dir) / ("seed" + std::to_string(cfg.seeds[i]));
        write_run_outputs(cfg, cfg.seeds[i], outcomes[static_cast<std::size_t>(i)],
                          dir.string());
    }
    return outcomes;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
    validate_config(cfg);
    SweepResult result;
    result.methods = cfg.methods;
    result.seeds = cfg.seeds;
    int n_cells = static_cast<int>(cfg.methods.size() * cfg.seeds.size());
    result.cells.resize(static_cast<std::size_t>(n_cells));

    auto cell_config = [&](int idx) {
        ExperimentConfig c = cfg;
        c.method = cfg.methods[static_cast<std::size_t>(idx) / cfg.seeds.size()];
        return c;
    };
    parallel_for(n_cells, cfg.workers, [&](int idx) {
        ExperimentConfig c = cell_config(idx);
        std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(idx) % cfg.seeds.size()];
        SweepCell& cell = result.cells[static_cast<std::size_t>(idx)];
        cell.method = c.method;
        cell.seed = seed;
        fs::path dir = fs::path(out_dir) / c.method / ("seed" + std::to_string(seed));
        cell.outcome = execute_run(c, seed, (dir / "checkpoints").string());
    });
    for (int idx = 0; idx < n_cells; ++idx) {
        const SweepCell& cell = result.cells[static_cast<std::size_t>(idx)];
        ExperimentConfig c = cell_config(idx);
        fs::path dir = fs::path(out_dir) / cell.method / ("seed" + std::to_string(cell.seed));
        write_run_outputs(c, cell.seed, cell.outcome, dir.string());
    }

    const std::vector<std::string>& names = result.cells.front().outcome.domain_names;

    // Comparison table: one row per method, columns = domains + Average,
    // entries are mean final accuracy over seeds, in percent.
    std::string table = "method";
    for (const std::string& d : names) table += "," + d;
    table += ",Average\n";
    char buf[32];
    for (size_t m = 0; m < result.methods.size(); ++m) {
        table += result.methods[m];
        std::vector<double> per_domain(names.size(), 0.0);
        double avg = 0.0;
        for (size_t s = 0; s < result.seeds.size(); ++s) {
            const RunOutcome& o = result.cells[m * result.seeds.size() + s].outcome;
            for (size_t d = 0; d < names.size(); ++d)
                per_domain[d] += o.final_domain_accuracy[d] / result.seeds.size();
            avg += o.final_average_accuracy / result.seeds.size();
        }
        for (double v : per_domain) {
            std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
            table += std::string(",") + buf;
        }
        std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * avg);
        table += std::string(",") + buf + "\n";
    }

    std::string raw = "method,seed,domain,accuracy,loss\n";
    std::string plot = "round,method,seed,average_accuracy\n";
    for (const SweepCell& cell : result.cells) {
        for (size_t d = 0; d < names.size(); ++d)
            raw += cell.method + "," + std::to_string(cell.seed) + "," + names[d] + "," +
                   fmt_g10(cell.outcome.final_domain_accuracy[d]) + "," +
                   fmt_g10(cell.outcome.final_domain_loss[d]) + "\n";
        for (const auto& rep : cell.outcome.reports)
            plot += std::to_string(rep.round) + "," + cell.method + "," +
                    std::to_string(cell.seed) + "," + fmt_g10(rep.average_accuracy) + "\n";
    }

    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "sweep_table.csv").string(), table);
    write_text_file((fs::path(out_dir) / "sweep_raw.csv").string(), raw);
    write_text_file((fs::path(out_dir) / "plot.csv").string(), plot);
    return result;
}

SubsetResult run_subset_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    validate_config(cfg);
    SubsetResult result;
    result.sizes = cfg.subset_sizes;

    struct Task {
        int size;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (int size : cfg.subset_sizes)
        for (std::uint64_t seed : cfg.seeds) tasks.push_back({size, seed});
    result.curves.resize(tasks.size());

    parallel_for(static_cast<int>(tasks.size()), cfg.workers, [&](int idx) {
        const Task& task = tasks[static_cast<std::size_t>(idx)];
        SplitRng master(task.seed);
        SplitRng data_rng = master.split(kStreamScenario);
        std::vector<data::DomainData> domains =
            make_synthetic_domains(make_synth_config(cfg), data_rng);
        data::LabeledDataset train, test;
        for (const auto& d : domains) {
            train.append(d.train);
            test.append(d.test);
        }
        model::StackModel model =
            model::build_stack_model(make_model_config(cfg), master.split(kStreamModel).seed());
        SubsetCurve& curve = result.curves[static_cast<std::size_t>(idx)];
        curve.subset_size = task.size;
        curve.seed = task.seed;
        curve.epochs = federation::run_subset_convergence(
            std::move(model), train, test, task.size, cfg.subset_epochs, cfg.lr, cfg.batch,
            master.split(kStreamSubset));
    });

    std::string csv = "subset_size,seed,epoch,train_loss,test_accuracy,test_loss\n";
    for (const SubsetCurve& curve : result.curves)
        for (const auto& st : curve.epochs)
            csv += std::to_string(curve.subset_size) + "," + std::to_string(curve.seed) + "," +
                   std::to_string(st.epoch) + "," + fmt_g10(st.train_loss) + "," +
                   fmt_g10(st.test_accuracy) + "," + fmt_g10(st.test_loss) + "\n";

    ordered_json summary;
    summary["subset_sizes"] = cfg.subset_sizes;
    summary["epochs"] = cfg.subset_epochs;
    summary["seeds"] = cfg.seeds;
    for (int size : cfg.subset_sizes) {
        std::vector<double> finals, final_losses, initial_losses;
        for (const SubsetCurve& curve : result.curves) {
            if (curve.subset_size != size) continue;
            finals.push_back(curve.epochs.back().test_accuracy);
            final_losses.push_back(curve.epochs.back().train_loss);
            initial_losses.push_back(curve.epochs.front().train_loss);
        }
        result.median_final_accuracy.push_back(median(finals));
        result.median_final_train_loss.push_back(median(final_losses));
        result.median_initial_train_loss.push_back(median(initial_losses));
        ordered_json entry;
        entry["median_final_test_accuracy"] = result.median_final_accuracy.back();
        entry["median_final_train_loss"] = result.median_final_train_loss.back();
        entry["median_initial_train_loss"] = result.median_initial_train_loss.back();
        summary["per_size"][std::to_string(size)] = entry;
    }

    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "subset.csv").string(), csv);
    write_text_file((fs::path(out_dir) / "subset_summary.json").string(),
                    summary.dump(2) + "\n");
    return result;
}

theory::BoundInputs bound_inputs_from_summary(const std::string& summary_path) {
    std::ifstream in(summary_path);
    if (!in) throw ConfigError("cannot open summary '" + summary_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad summary JSON: ") + e.what());
    }
    theory::BoundInputs b;
    b.alpha = j.value("alpha_max", 0.0);
    b.n_clients = j.value("n_clients", 0);
    b.local_steps = j.value("local_steps_mean", 0.0);
    b.rounds = j.value("rounds", 0);
    b.eta = j.value("eta", 0.0);
    b.gamma_star = j.value("gamma_star", 0);
    b.f1 = j.value("f1_estimate", 0.0);
    b.sum_r_norm2 = j.value("sum_r_norm2", 0.0);
    if (j.contains("constants")) {
        b.lipschitz = j["constants"].value("lipschitz", 0.0);
        b.sigma2 = j["constants"].value("sigma2", 0.0);
        b.delta2 = j["constants"].value("delta2", 0.0);
    }
    return b;
}

std::string bound_report_json(const theory::BoundInputs& in) {
    theory::BoundReport rep = theory::try_theorem1_bound(in);
    ordered_json j;
    j["feasible"] = rep.feasible;
    j["eta"] = in.eta;
    j["eta_lo"] = rep.interval.lo;
    j["eta_hi"] = rep.interval.hi;
    j["delta1"] = rep.delta1;
    if (rep.feasible) {
        j["terms"] = {{"init", rep.terms[0]},
                      {"mask_deviation", rep.terms[1]},
                      {"gradient_variance", rep.terms[2]},
                      {"heterogeneity", rep.terms[3]}};
        j["bound"] = rep.bound;
    }
    return j.dump(2) + "\n";
}

int run_checks(std::ostream& out, const std::string& filter) {
    int failures = 0;
    int ran = 0;
    for (const Check& check : all_checks()) {
        if (!filter.empty() && check.name.find(filter) == std::string::npos) continue;
        ++ran;
        try {
            check.fn();
            out << "[ok]   " << check.name << "\n";
        } catch (const std::exception& e) {
            ++failures;
            out << "[FAIL] " << check.name << ": " << e.what() << "\n";
        }
    }
    out << ran << " checks, " << failures << " failed\n";
    return failures;
}

}  // namespace fedra::harness
