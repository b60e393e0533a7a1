#include "fedra/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedra/errors.hpp"
#include "fedra/rng.hpp"
#include "fedra/sha256.hpp"

namespace fedra::model {

namespace {

constexpr std::uint64_t kStreamBaseWeights = 1;
constexpr std::uint64_t kStreamAdapters = 2;
constexpr std::uint64_t kStreamHead = 3;

void fill_gaussian(Matrix& m, SplitRng& rng, double stddev) {
    for (double& e : m.v) e = stddev * rng.next_gaussian();
}

}  // namespace

StackModel build_stack_model(const BuildConfig& cfg, std::uint64_t seed) {
    if (cfg.layers < 1) throw ConfigError("build_stack_model: layers must be >= 1");
    if (cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.classes < 1 || cfg.rank < 1)
        throw ConfigError("build_stack_model: all dims must be >= 1");
    if (cfg.rank > cfg.hidden_dim)
        throw PreconditionError("build_stack_model: rank " + std::to_string(cfg.rank) +
                                " exceeds hidden dim " + std::to_string(cfg.hidden_dim));
    if (cfg.lora_scale <= 0.0) throw ConfigError("build_stack_model: lora_scale must be > 0");

    StackModel m;
    m.config = cfg;
    m.seed = seed;

    SplitRng root(seed);
    SplitRng base_rng = root.split(kStreamBaseWeights);
    SplitRng adapter_rng = root.split(kStreamAdapters);
    SplitRng head_rng = root.split(kStreamHead);

    const double base_std = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));

    m.net.input_proj = nn::DenseParams(cfg.hidden_dim, cfg.input_dim);
    fill_gaussian(m.net.input_proj.weight, base_rng, base_std);

    m.net.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (nn::ResidualBlock& block : m.net.blocks) {
        block.base = nn::DenseParams(cfg.hidden_dim, cfg.hidden_dim);
        fill_gaussian(block.base.weight, base_rng, base_std);
        block.adapter = nn::LoraAdapter(cfg.hidden_dim, cfg.hidden_dim, cfg.rank, cfg.lora_scale);
        // down ~ N(0, 0.02), up = 0: the initial delta is exactly zero.
        fill_gaussian(block.adapter.down, adapter_rng, 0.02);
        block.act = cfg.activation;
    }

    m.net.head = nn::DenseParams(cfg.classes, cfg.hidden_dim);
    fill_gaussian(m.net.head.weight, head_rng, base_std);
    return m;
}

SubModel extract_submodel(const StackModel& model, std::vector<int> selected) {
    if (selected.empty()) throw PreconditionError("extract_submodel: empty layer selection");
    std::sort(selected.begin(), selected.end());
    if (std::adjacent_find(selected.begin(), selected.end()) != selected.end())
        throw PreconditionError("extract_submodel: duplicate layer index");
    if (selected.front() < 1 || selected.back() > model.layers())
        throw PreconditionError("extract_submodel: layer index out of range 1.." +
                                std::to_string(model.layers()));
    SubModel sub;
    sub.selected = std::move(selected);
    sub.net.input_proj = model.net.input_proj;
    sub.net.head = model.net.head;
    sub.net.blocks.reserve(sub.selected.size());
    for (int j : sub.selected) sub.net.blocks.push_back(model.net.blocks[j - 1]);
    return sub;
}

std::vector<double> forward(const StackModel& model, std::span<const double> x) {
    return nn::stack_forward(model.net, x);
}

std::vector<double> forward(const SubModel& sub, std::span<const double> x) {
    return nn::stack_forward(sub.net, x);
}

int predict_class(std::span<const double> logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

EvalResult evaluate(const nn::LayerStack& net, const Matrix& features,
                    const std::vector<int>& labels) {
    if (features.rows == 0) throw PreconditionError("evaluate: empty dataset");
    if (features.rows != static_cast<int>(labels.size()))
        throw ShapeError("evaluate: feature/label count mismatch");
    int correct = 0;
    double loss_sum = 0.0;
    for (int i = 0; i < features.rows; ++i) {
        std::vector<double> logits = nn::stack_forward(net, features.row(i));
        loss_sum += nn::softmax_cross_entropy(logits, labels[i]).loss;
        if (predict_class(logits) == labels[i]) ++correct;
    }
    return {static_cast<double>(correct) / features.rows, loss_sum / features.rows};
}

EvalResult evaluate(const StackModel& model, const Matrix& features,
                    const std::vector<int>& labels) {
    return evaluate(model.net, features, labels);
}

// --- checkpoint serialization -------------------------------------------

namespace {

constexpr const char* kMagic = "fedra-checkpoint v1";

void write_array(std::ostream& out, const std::string& name, const double* data, int rows,
                 int cols) {
    out << "param " << name << ' ' << rows << ' ' << cols << '\n';
    char buf[40];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", data[static_cast<std::size_t>(r) * cols + c]);
            out << buf << (c + 1 == cols ? '\n' : ' ');
        }
    }
}

void write_array(std::ostream& out, const std::string& name, const Matrix& m) {
    write_array(out, name, m.v.data(), m.rows, m.cols);
}

void write_array(std::ostream& out, const std::string& name, const std::vector<double>& v) {
    write_array(out, name, v.data(), 1, static_cast<int>(v.size()));
}

struct ArrayReader {
    std::istream& in;

    Matrix read(const std::string& expected_name) {
        std::string tag, name;
        int rows = 0, cols = 0;
        if (!(in >> tag >> name >> rows >> cols) || tag != "param" || name != expected_name)
            throw ConfigError("checkpoint parse: expected param '" + expected_name + "'");
        if (rows < 0 || cols < 0) throw ConfigError("checkpoint parse: negative shape");
        Matrix m(rows, cols);
        for (double& e : m.v)
            if (!(in >> e)) throw ConfigError("checkpoint parse: truncated values for " + name);
        return m;
    }

    std::vector<double> read_vector(const std::string& expected_name) {
        Matrix m = read(expected_name);
        if (m.rows != 1) throw ConfigError("checkpoint parse: expected vector for " + expected_name);
        return m.v;
    }
};

std::string activation_name(nn::Activation a) {
    return a == nn::Activation::kRelu ? "relu" : "tanh";
}

nn::Activation activation_from_name(const std::string& s) {
    if (s == "relu") return nn::Activation::kRelu;
    if (s == "tanh") return nn::Activation::kTanh;
    throw ConfigError("checkpoint parse: unknown activation '" + s + "'");
}

}  // namespace

void save_checkpoint(const StackModel& model, std::ostream& out) {
    const BuildConfig& cfg = model.config;
    out << kMagic << '\n';
    out << "layers " << cfg.layers << " input_dim " << cfg.input_dim << " hidden_dim "
        << cfg.hidden_dim << " classes " << cfg.classes << " rank " << cfg.rank << '\n';
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", cfg.lora_scale);
    out << "lora_scale " << buf << " activation " << activation_name(cfg.activation) << " seed "
        << model.seed << '\n';
    write_array(out, "input_proj.weight", model.net.input_proj.weight);
    write_array(out, "input_proj.bias", model.net.input_proj.bias);
    for (int j = 1; j <= model.layers(); ++j) {
        const nn::ResidualBlock& b = model.net.blocks[j - 1];
        const std::string prefix = "block" + std::to_string(j) + ".";
        write_array(out, prefix + "base.weight", b.base.weight);
        write_array(out, prefix + "base.bias", b.base.bias);
        write_array(out, prefix + "adapter.down", b.adapter.down);
        write_array(out, prefix + "adapter.up", b.adapter.up);
    }
    write_array(out, "head.weight", model.net.head.weight);
    write_array(out, "head.bias", model.net.head.bias);
}

void save_checkpoint(const StackModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    save_checkpoint(model, out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

StackModel load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw ConfigError("checkpoint parse: bad magic line");
    StackModel m;
    BuildConfig& cfg = m.config;
    std::string key, act_name;
    in >> key >> cfg.layers >> key >> cfg.input_dim >> key >> cfg.hidden_dim >> key >>
        cfg.classes >> key >> cfg.rank;
    in >> key >> cfg.lora_scale >> key >> act_name >> key >> m.seed;
    if (!in) throw ConfigError("checkpoint parse: truncated header");
    cfg.activation = activation_from_name(act_name);

    ArrayReader reader{in};
    m.net.input_proj.weight = reader.read("input_proj.weight");
    m.net.input_proj.bias = reader.read_vector("input_proj.bias");
    m.net.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (int j = 1; j <= cfg.layers; ++j) {
        nn::ResidualBlock& b = m.net.blocks[j - 1];
        const std::string prefix = "block" + std::to_string(j) + ".";
        b.base.weight = reader.read(prefix + "base.weight");
        b.base.bias = reader.read_vector(prefix + "base.bias");
        b.adapter.down = reader.read(prefix + "adapter.down");
        b.adapter.up = reader.read(prefix + "adapter.up");
        b.adapter.scale = cfg.lora_scale;
        b.act = cfg.activation;
    }
    m.net.head.weight = reader.read("head.weight");
    m.net.head.bias = reader.read_vector("head.bias");
    return m;
}

StackModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    return load_checkpoint(in);
}

std::string frozen_param_digest(const StackModel& model) {
    Sha256 h;
    h.update_doubles(model.net.input_proj.weight.v);
    h.update_doubles(model.net.input_proj.bias);
    for (const nn::ResidualBlock& b : model.net.blocks) {
        h.update_doubles(b.base.weight.v);
        h.update_doubles(b.base.bias);
    }
    return h.hex_digest();
}

std::string full_param_digest(const nn::LayerStack& net) {
    Sha256 h;
    h.update_doubles(net.input_proj.weight.v);
    h.update_doubles(net.input_proj.bias);
    for (const nn::ResidualBlock& b : net.blocks) {
        h.update_doubles(b.base.weight.v);
        h.update_doubles(b.base.bias);
        h.update_doubles(b.adapter.down.v);
        h.update_doubles(b.adapter.up.v);
    }
    h.update_doubles(net.head.weight.v);
    h.update_doubles(net.head.bias);
    return h.hex_digest();
}

}  // namespace fedra::model
