#include "fedra/federation.hpp"

#include <algorithm>
#include <cmath>

#include "fedra/errors.hpp"
#include "fedra/theory.hpp"

namespace fedra::federation {

namespace {

void check_train_config(const RoundConfig& cfg) {
    if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
    if (cfg.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (cfg.lr < 0.0 || !std::isfinite(cfg.lr)) throw ConfigError("lr must be finite and >= 0");
}

}  // namespace

ClientUpdate local_train(model::SubModel sub, const data::LabeledDataset& train,
                         const RoundConfig& cfg, const SplitRng& rng, int round_index,
                         int client_id) {
    check_train_config(cfg);
    if (train.size() == 0) throw PreconditionError("local_train: empty training set");
    if (train.dim() != sub.net.input_dim())
        throw ShapeError("local_train: feature dim does not match model input");

    int n = train.size();
    int step = 0;
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        SplitRng perm_rng = rng.split(static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order = perm_rng.permutation(static_cast<std::size_t>(n));
        for (int start = 0; start < n; start += cfg.batch) {
            int count = std::min(cfg.batch, n - start);
            nn::GradRecord acc = nn::make_zero_grads(sub.net);
            double batch_loss = 0.0;
            for (int k = 0; k < count; ++k) {
                int i = static_cast<int>(order[start + k]);
                batch_loss += nn::backward_pass(sub.net, train.features.row(i), train.labels[i],
                                                acc);
            }
            batch_loss /= count;
            if (!std::isfinite(batch_loss))
                throw DivergenceError("non-finite minibatch loss", round_index, client_id, step);
            nn::grad_scale(acc, 1.0 / count);
            if (cfg.lr != 0.0) nn::sgd_step(sub.net, acc, cfg.lr);
            loss_sum += batch_loss;
            ++loss_count;
            ++step;
        }
    }

    ClientUpdate u;
    u.client_id = client_id;
    u.selected = sub.selected;
    u.adapters.reserve(sub.net.blocks.size());
    for (const auto& block : sub.net.blocks) u.adapters.push_back(block.adapter);
    u.head = sub.net.head;
    u.n_samples = n;
    u.mean_loss = loss_sum / loss_count;
    return u;
}

namespace {

const nn::LoraAdapter* find_adapter(const ClientUpdate& u, int layer) {
    auto it = std::lower_bound(u.selected.begin(), u.selected.end(), layer);
    if (it == u.selected.end() || *it != layer) return nullptr;
    return &u.adapters[static_cast<std::size_t>(it - u.selected.begin())];
}

}  // namespace

void aggregate_lora(nn::LayerStack& global, const std::vector<ClientUpdate>& updates,
                    const allocation::AllocationMatrix& m, MissingLayerStrategy missing) {
    if (static_cast<int>(updates.size()) != m.num_clients)
        throw ShapeError("aggregate_lora: updates do not match allocation rows");
    if (static_cast<int>(global.blocks.size()) != m.num_layers)
        throw ShapeError("aggregate_lora: allocation layer count does not match model");
    for (int i = 0; i < m.num_clients; ++i) {
        if (updates[i].selected != m.selected_layers(i))
            throw PreconditionError("aggregate_lora: update " + std::to_string(i) +
                                    " does not cover its allocated layers");
        if (updates[i].n_samples < 1)
            throw PreconditionError("aggregate_lora: client dataset size must be positive");
    }

    for (int j = 0; j < m.num_layers; ++j) {
        if (m.column_sum(j) == 0) {
            if (missing == MissingLayerStrategy::kConstrainAllocation)
                throw InternalError("constrained allocation left layer " + std::to_string(j + 1) +
                                    " uncovered");
            continue;  // carry the server's previous adapter forward
        }
        nn::LoraAdapter& target = global.blocks[static_cast<std::size_t>(j)].adapter;
        Matrix down_acc(target.down.rows, target.down.cols);
        Matrix up_acc(target.up.rows, target.up.cols);
        double weight_sum = 0.0;
        for (int i = 0; i < m.num_clients; ++i) {
            if (!m.at(i, j)) continue;
            const nn::LoraAdapter* a = find_adapter(updates[i], j + 1);
            if (a == nullptr) throw InternalError("aggregate_lora: missing adapter in update");
            if (a->down.rows != target.down.rows || a->down.cols != target.down.cols ||
                a->up.rows != target.up.rows || a->up.cols != target.up.cols)
                throw ShapeError("aggregate_lora: adapter shape mismatch");
            double w = static_cast<double>(updates[i].n_samples);
            axpy(w, a->down.v, down_acc.v);
            axpy(w, a->up.v, up_acc.v);
            weight_sum += w;
        }
        scale(down_acc.v, 1.0 / weight_sum);
        scale(up_acc.v, 1.0 / weight_sum);
        target.down = std::move(down_acc);
        target.up = std::move(up_acc);
    }
}

void aggregate_head(nn::LayerStack& global, const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw PreconditionError("aggregate_head: no updates");
    Matrix w_acc(global.head.weight.rows, global.head.weight.cols);
    std::vector<double> b_acc(global.head.bias.size(), 0.0);
    double weight_sum = 0.0;
    for (const ClientUpdate& u : updates) {
        if (u.n_samples < 1)
            throw PreconditionError("aggregate_head: client dataset size must be positive");
        if (u.head.weight.rows != w_acc.rows || u.head.weight.cols != w_acc.cols ||
            u.head.bias.size() != b_acc.size())
            throw ShapeError("aggregate_head: head shape mismatch");
        double w = static_cast<double>(u.n_samples);
        axpy(w, u.head.weight.v, w_acc.v);
        axpy(w, u.head.bias, b_acc);
        weight_sum += w;
    }
    scale(w_acc.v, 1.0 / weight_sum);
    scale(b_acc, 1.0 / weight_sum);
    global.head.weight = std::move(w_acc);
    global.head.bias = std::move(b_acc);
}

ServerState make_server_state(const model::BuildConfig& cfg, data::FederationScenario scenario,
                              std::uint64_t model_seed) {
    if (scenario.clients.empty()) throw ConfigError("scenario has no clients");
    if (scenario.input_dim != cfg.input_dim)
        throw ConfigError("scenario feature dim does not match model input_dim");
    if (scenario.num_classes != cfg.classes)
        throw ConfigError("scenario class count does not match model classes");
    ServerState state;
    state.global = model::build_stack_model(cfg, model_seed);
    state.scenario = std::move(scenario);
    return state;
}

namespace {

// Flat offsets of each block's adapter parameters inside flatten_adapters.
std::vector<std::pair<std::size_t, std::size_t>> adapter_spans(const nn::LayerStack& net) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t off = 0;
    for (const auto& block : net.blocks) {
        std::size_t sz = block.adapter.down.v.size() + block.adapter.up.v.size();
        spans.emplace_back(off, sz);
        off += sz;
    }
    return spans;
}

}  // namespace

RoundReport run_round(ServerState& state, const RoundConfig& cfg, const SplitRng& round_rng) {
    check_train_config(cfg);
    if (cfg.lr == 0.0) throw ConfigError("run_round: lr must be positive");
    if (cfg.missing == MissingLayerStrategy::kConstrainAllocation &&
        cfg.strategy.kind != allocation::StrategyKind::kRandomConstrained)
        throw ConfigError("constrain-allocation handling requires the constrained strategy");

    const int n_all = static_cast<int>(state.scenario.clients.size());
    const int n_layers = state.global.layers();
    int k = cfg.clients_per_round;
    if (k < 0 || k > n_all) throw ConfigError("clients_per_round out of range");
    if (k == 0) k = n_all;

    RoundReport report;
    report.round = state.rounds_done + 1;

    SplitRng sample_rng = round_rng.split(streams::kSample);
    if (k == n_all) {
        report.participants.resize(n_all);
        for (int i = 0; i < n_all; ++i) report.participants[i] = i;
    } else {
        auto picks = sample_rng.sample_without_replacement(static_cast<std::size_t>(n_all),
                                                           static_cast<std::size_t>(k));
        report.participants.assign(picks.begin(), picks.end());
        std::sort(report.participants.begin(), report.participants.end());
    }

    std::vector<int> caps(k);
    for (int i = 0; i < k; ++i)
        caps[i] = state.scenario.clients[report.participants[i]].capacity;
    if (cfg.strategy.dynamic_capacity) {
        int lo = std::max(1, cfg.dynamic_cap_min);
        int hi = cfg.dynamic_cap_max > 0 ? cfg.dynamic_cap_max : n_layers;
        hi = std::min(hi, n_layers);
        if (lo > hi) throw ConfigError("dynamic capacity range is empty");
        SplitRng cap_rng = round_rng.split(streams::kCapacity);
        for (int i = 0; i < k; ++i)
            caps[i] = lo + static_cast<int>(cap_rng.next_index(static_cast<std::size_t>(hi - lo + 1)));
    }

    SplitRng alloc_rng = round_rng.split(streams::kAlloc);
    report.alloc = allocation::generate_allocation(cfg.strategy, caps, n_layers, alloc_rng);

    // Round-start measurements on the dispatched parameters.
    std::vector<double> r = nn::flatten_adapters(state.global.net);
    report.adapter_norm2 = dot(r, r);
    auto spans = adapter_spans(state.global.net);
    for (int i = 0; i < k; ++i) {
        std::vector<std::uint8_t> mask(r.size(), 0);
        for (int layer : report.alloc.selected_layers(i)) {
            auto [off, sz] = spans[static_cast<std::size_t>(layer - 1)];
            std::fill(mask.begin() + off, mask.begin() + off + sz, std::uint8_t{1});
        }
        report.alpha_measured =
            std::max(report.alpha_measured, theory::mask_deviation_alpha(r, mask));
    }

    if (cfg.log_grad_norms) {
        std::vector<double> g(r.size(), 0.0);
        for (const auto& shard : state.scenario.clients) {
            std::vector<double> gi = theory::adapter_gradient(state.global.net, shard.train);
            axpy(1.0 / n_all, gi, g);
        }
        for (int j = 0; j < n_layers; ++j) {
            if (report.alloc.column_sum(j) == 0) continue;
            auto [off, sz] = spans[static_cast<std::size_t>(j)];
            for (std::size_t p = off; p < off + sz; ++p)
                report.grad_norm2_covered += g[p] * g[p];
        }
    }

    std::vector<ClientUpdate> updates;
    updates.reserve(k);
    double loss_acc = 0.0;
    for (int i = 0; i < k; ++i) {
        int id = report.participants[i];
        const data::ClientShard& shard = state.scenario.clients[id];
        model::SubModel sub =
            model::extract_submodel(state.global, report.alloc.selected_layers(i));
        SplitRng client_rng = round_rng.split(streams::kClientBase + static_cast<std::uint64_t>(id));
        updates.push_back(
            local_train(std::move(sub), shard.train, cfg, client_rng, report.round, id));
        loss_acc += updates.back().mean_loss;
    }
    report.mean_local_loss = loss_acc / k;

    aggregate_lora(state.global.net, updates, report.alloc, cfg.missing);
    aggregate_head(state.global.net, updates);

    report.layer_update_counts = report.alloc.column_sums();
    report.gamma_min = 0;
    for (int c : report.layer_update_counts)
        if (c >= 1 && (report.gamma_min == 0 || c < report.gamma_min)) report.gamma_min = c;

    for (const data::LabeledDataset& test : state.scenario.domain_tests) {
        model::EvalResult ev = model::evaluate(state.global, test.features, test.labels);
        report.domain_accuracy.push_back(ev.accuracy);
        report.domain_loss.push_back(ev.mean_loss);
        report.average_accuracy += ev.accuracy;
    }
    if (!report.domain_accuracy.empty())
        report.average_accuracy /= static_cast<double>(report.domain_accuracy.size());

    state.rounds_done = report.round;
    return report;
}

std::vector<RoundReport> run_federation(ServerState& state, int rounds, const RoundConfig& cfg,
                                        const SplitRng& rng, const RoundCallback& on_round) {
    if (rounds < 1) throw ConfigError("run_federation: rounds must be >= 1");
    std::vector<RoundReport> reports;
    reports.reserve(static_cast<std::size_t>(rounds));
    for (int t = 0; t < rounds; ++t) {
        SplitRng round_rng = rng.split(static_cast<std::uint64_t>(state.rounds_done) + 1);
        reports.push_back(run_round(state, cfg, round_rng));
        if (on_round) on_round(reports.back());
    }
    return reports;
}

void apply_update(nn::LayerStack& global, const ClientUpdate& update) {
    if (update.selected.size() != update.adapters.size())
        throw ShapeError("apply_update: selected/adapters mismatch");
    for (std::size_t p = 0; p < update.selected.size(); ++p) {
        int layer = update.selected[p];
        if (layer < 1 || layer > static_cast<int>(global.blocks.size()))
            throw PreconditionError("apply_update: layer index out of range");
        nn::LoraAdapter& target = global.blocks[static_cast<std::size_t>(layer - 1)].adapter;
        const nn::LoraAdapter& src = update.adapters[p];
        if (src.down.rows != target.down.rows || src.down.cols != target.down.cols ||
            src.up.rows != target.up.rows || src.up.cols != target.up.cols)
            throw ShapeError("apply_update: adapter shape mismatch");
        target.down = src.down;
        target.up = src.up;
    }
    if (update.head.weight.rows != global.head.weight.rows ||
        update.head.weight.cols != global.head.weight.cols)
        throw ShapeError("apply_update: head shape mismatch");
    global.head = update.head;
}

std::vector<SubsetEpochStat> run_subset_convergence(model::StackModel model,
                                                    const data::LabeledDataset& train,
                                                    const data::LabeledDataset& test,
                                                    int subset_size, int epochs, double lr,
                                                    int batch, const SplitRng& rng) {
    int n_layers = model.layers();
    if (subset_size < 1 || subset_size > n_layers)
        throw ConfigError("subset_size must be in [1, layers]");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");

    RoundConfig tc;
    tc.lr = lr;
    tc.batch = batch;
    tc.local_epochs = 1;

    std::vector<SubsetEpochStat> stats;
    stats.reserve(static_cast<std::size_t>(epochs));
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        SplitRng epoch_rng = rng.split(static_cast<std::uint64_t>(epoch));
        SplitRng pick_rng = epoch_rng.split(1);
        auto picks = pick_rng.sample_without_replacement(static_cast<std::size_t>(n_layers),
                                                         static_cast<std::size_t>(subset_size));
        std::vector<int> selected;
        for (std::size_t v : picks) selected.push_back(static_cast<int>(v) + 1);
        std::sort(selected.begin(), selected.end());

        model::SubModel sub = model::extract_submodel(model, selected);
        ClientUpdate update =
            local_train(std::move(sub), train, tc, epoch_rng.split(2), epoch, 0);
        apply_update(model.net, update);

        SubsetEpochStat st;
        st.epoch = epoch;
        st.selected = selected;
        st.train_loss = update.mean_loss;
        model::EvalResult ev = model::evaluate(model, test.features, test.labels);
        st.test_accuracy = ev.accuracy;
        st.test_loss = ev.mean_loss;
        stats.push_back(std::move(st));
    }
    return stats;
}

}  // namespace fedra::federation
