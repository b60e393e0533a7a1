#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedra/errors.hpp"
#include "fedra/harness.hpp"

namespace fs = std::filesystem;

namespace fedra::harness {

namespace {

void req(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] != b.v[i]) return false;
    return true;
}

model::StackModel small_model(std::uint64_t seed, int layers = 4,
                              nn::Activation act = nn::Activation::kRelu) {
    model::BuildConfig mc;
    mc.layers = layers;
    mc.input_dim = 6;
    mc.hidden_dim = 6;
    mc.classes = 3;
    mc.rank = 2;
    mc.activation = act;
    return model::build_stack_model(mc, seed);
}

void randomize_adapters(nn::LayerStack& net, SplitRng& rng, double scale = 0.3) {
    for (auto& block : net.blocks) {
        for (double& v : block.adapter.down.v) v = scale * rng.next_gaussian();
        for (double& v : block.adapter.up.v) v = scale * rng.next_gaussian();
    }
}

std::vector<double> random_input(int dim, SplitRng& rng) {
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (double& v : x) v = rng.next_gaussian();
    return x;
}

data::LabeledDataset random_dataset(int n, int dim, int classes, SplitRng& rng) {
    data::LabeledDataset d;
    d.features = Matrix(n, dim);
    for (double& v : d.features.v) v = rng.next_gaussian();
    d.labels.resize(static_cast<std::size_t>(n));
    for (int& l : d.labels) l = static_cast<int>(rng.next_index(static_cast<std::size_t>(classes)));
    d.num_classes = classes;
    d.domain = "check";
    return d;
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.domains = 3;
    c.classes = 3;
    c.input_dim = 8;
    c.hidden_dim = 8;
    c.layers = 4;
    c.lora_rank = 2;
    c.capacities = {4, 3, 2};
    c.samples_per_domain = 30;
    c.rounds = 2;
    c.lr = 0.05;
    c.batch = 8;
    c.subset_sizes = {2};
    c.subset_epochs = 2;
    c.seeds = {7};
    return c;
}

// Oracle for the weighted mean: independent per-entry accumulation.
void check_weighted_mean(const nn::LayerStack& global,
                         const std::vector<federation::ClientUpdate>& updates,
                         const allocation::AllocationMatrix& m, int layer_col,
                         const nn::LayerStack& before) {
    const nn::LoraAdapter& got = global.blocks[static_cast<std::size_t>(layer_col)].adapter;
    const nn::LoraAdapter& prev = before.blocks[static_cast<std::size_t>(layer_col)].adapter;
    if (m.column_sum(layer_col) == 0) {
        req(bitwise_equal(got.down, prev.down) && bitwise_equal(got.up, prev.up),
            "uncovered layer changed");
        return;
    }
    auto expect = [&](bool up_factor, int r, int c) {
        double num = 0.0, den = 0.0;
        for (int i = 0; i < m.num_clients; ++i) {
            if (!m.at(i, layer_col)) continue;
            auto it = std::find(updates[i].selected.begin(), updates[i].selected.end(),
                                layer_col + 1);
            const nn::LoraAdapter& a =
                updates[i].adapters[static_cast<std::size_t>(it - updates[i].selected.begin())];
            double v = up_factor ? a.up(r, c) : a.down(r, c);
            num += v * updates[i].n_samples;
            den += updates[i].n_samples;
        }
        return num / den;
    };
    for (int r = 0; r < got.down.rows; ++r)
        for (int c = 0; c < got.down.cols; ++c) {
            double want = expect(false, r, c);
            req(std::abs(got.down(r, c) - want) <= 1e-12 * std::max(1.0, std::abs(want)),
                "down factor deviates from weighted mean");
        }
    for (int r = 0; r < got.up.rows; ++r)
        for (int c = 0; c < got.up.cols; ++c) {
            double want = expect(true, r, c);
            req(std::abs(got.up(r, c) - want) <= 1e-12 * std::max(1.0, std::abs(want)),
                "up factor deviates from weighted mean");
        }
}

std::vector<federation::ClientUpdate> random_updates(const nn::LayerStack& global,
                                                     const allocation::AllocationMatrix& m,
                                                     SplitRng& rng) {
    std::vector<federation::ClientUpdate> updates;
    for (int i = 0; i < m.num_clients; ++i) {
        federation::ClientUpdate u;
        u.client_id = i;
        u.selected = m.selected_layers(i);
        for (int layer : u.selected) {
            nn::LoraAdapter a = global.blocks[static_cast<std::size_t>(layer - 1)].adapter;
            for (double& v : a.down.v) v = rng.next_gaussian();
            for (double& v : a.up.v) v = rng.next_gaussian();
            u.adapters.push_back(std::move(a));
        }
        u.head = global.head;
        for (double& v : u.head.weight.v) v = rng.next_gaussian();
        u.n_samples = 1 + static_cast<long>(rng.next_index(50));
        updates.push_back(std::move(u));
    }
    return updates;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    req(bool(in), "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- individual checks ----------------------------------------------------

void check_zero_adapter_identity() {
    SplitRng rng(11);
    nn::DenseParams dense(5, 5);
    for (double& v : dense.weight.v) v = rng.next_gaussian();
    for (double& v : dense.bias) v = rng.next_gaussian();
    nn::LoraAdapter adapter(5, 5, 2);
    for (double& v : adapter.down.v) v = rng.next_gaussian();  // up stays zero
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x = random_input(5, rng);
        std::vector<double> a = nn::dense_forward(dense, x);
        std::vector<double> b = nn::lora_delta_apply(adapter, dense, x);
        for (std::size_t i = 0; i < a.size(); ++i)
            req(a[i] == b[i], "zero-up adapter changed the dense output");
    }
}

void check_zero_block_identity() {
    nn::ResidualBlock block;
    block.base = nn::DenseParams(4, 4);
    block.adapter = nn::LoraAdapter(4, 4, 2);
    SplitRng rng(12);
    for (nn::Activation act : {nn::Activation::kRelu, nn::Activation::kTanh}) {
        block.act = act;
        std::vector<double> h = random_input(4, rng);
        std::vector<double> out = nn::block_forward(block, h);
        for (std::size_t i = 0; i < h.size(); ++i)
            req(out[i] == h[i], "all-zero residual block is not the identity");
    }
}

void check_softmax_stability() {
    std::vector<double> logits = {1e300, 0.0, -1e300};
    nn::CrossEntropyResult r = nn::softmax_cross_entropy(logits, 1);
    req(std::isfinite(r.loss), "loss overflowed");
    double sum = 0.0;
    for (double g : r.dlogits) {
        req(std::isfinite(g), "gradient overflowed");
        sum += g;
    }
    req(std::abs(sum) <= 1e-12, "softmax gradient rows must sum to zero");
}

void check_gradcheck_small() {
    model::StackModel m = small_model(21, 2, nn::Activation::kTanh);
    SplitRng rng(22);
    randomize_adapters(m.net, rng);
    std::vector<double> x = random_input(m.net.input_dim(), rng);
    double err = nn::finite_diff_gradcheck(m.net, x, 1, 1e-5);
    req(err <= 1e-4, "finite-difference mismatch " + std::to_string(err));
}

void check_sgd_frozen_untouched() {
    model::StackModel m = small_model(31);
    SplitRng rng(32);
    randomize_adapters(m.net, rng);
    nn::LayerStack before = m.net;
    std::vector<double> x = random_input(m.net.input_dim(), rng);
    nn::GradRecord g = nn::backward_pass(m.net, x, 0);
    nn::sgd_step(m.net, g, 0.1);
    req(bitwise_equal(m.net.input_proj.weight, before.input_proj.weight),
        "input projection moved");
    for (std::size_t b = 0; b < m.net.blocks.size(); ++b)
        req(bitwise_equal(m.net.blocks[b].base.weight, before.blocks[b].base.weight),
            "frozen base weight moved");
    req(!bitwise_equal(m.net.head.weight, before.head.weight), "head did not train");
}

void check_forward_deterministic() {
    model::StackModel m = small_model(41);
    SplitRng rng(42);
    randomize_adapters(m.net, rng);
    std::vector<double> x = random_input(m.net.input_dim(), rng);
    std::vector<double> a = model::forward(m, x);
    std::vector<double> b = model::forward(m, x);
    for (std::size_t i = 0; i < a.size(); ++i)
        req(a[i] == b[i], "forward pass is not deterministic");
}

void check_submodel_isolation() {
    model::StackModel m = small_model(51);
    std::string before = model::full_param_digest(m.net);
    model::SubModel sub = model::extract_submodel(m, {1, 3});
    sub.net.blocks[0].adapter.down.v[0] += 1.0;
    sub.net.blocks[0].base.weight.v[0] += 1.0;
    sub.net.head.bias[0] += 1.0;
    req(model::full_param_digest(m.net) == before, "submodel mutation leaked into the source");
}

void check_submodel_order() {
    model::StackModel m = small_model(52);
    model::SubModel sub = model::extract_submodel(m, {3, 1});
    req(sub.selected == std::vector<int>({1, 3}), "selection must be sorted ascending");
    req(bitwise_equal(sub.net.blocks[0].base.weight, m.net.blocks[0].base.weight) &&
            bitwise_equal(sub.net.blocks[1].base.weight, m.net.blocks[2].base.weight),
        "submodel blocks out of order");
}

void check_checkpoint_roundtrip() {
    model::StackModel m = small_model(53);
    SplitRng rng(54);
    randomize_adapters(m.net, rng);
    std::stringstream ss;
    model::save_checkpoint(m, ss);
    model::StackModel loaded = model::load_checkpoint(ss);
    req(model::full_param_digest(loaded.net) == model::full_param_digest(m.net),
        "checkpoint round trip is not bit-exact");
}

void check_mask_equivalence() {
    SplitRng rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        model::StackModel m = small_model(60 + static_cast<std::uint64_t>(trial), 5);
        SplitRng local = rng.split(static_cast<std::uint64_t>(trial));
        randomize_adapters(m.net, local);
        std::vector<int> selected;
        std::vector<std::uint8_t> keep(5, 0);
        for (int j = 1; j <= 5; ++j)
            if (local.next_double() < 0.5) {
                selected.push_back(j);
                keep[static_cast<std::size_t>(j - 1)] = 1;
            }
        if (selected.empty()) {
            selected.push_back(2);
            keep[1] = 1;
        }
        std::vector<double> x = random_input(m.net.input_dim(), local);

        std::vector<double> h = nn::dense_forward(m.net.input_proj, x);
        for (std::size_t j = 0; j < m.net.blocks.size(); ++j) {
            const nn::ResidualBlock& block = m.net.blocks[j];
            std::vector<double> pre = nn::lora_delta_apply(block.adapter, block.base, h);
            for (std::size_t d = 0; d < h.size(); ++d)
                h[d] += keep[j] * nn::activate(block.act, pre[d]);
        }
        std::vector<double> masked = nn::dense_forward(m.net.head, h);
        std::vector<double> sub = model::forward(model::extract_submodel(m, selected), x);
        req(max_abs_diff(masked, sub) <= 1e-12, "mask equivalence violated");
    }
}

void check_predict_tiebreak() {
    std::vector<double> logits = {0.5, 0.7, 0.7};
    req(model::predict_class(logits) == 1, "argmax tie must pick the lowest index");
}

void check_alloc_row_sums() {
    SplitRng rng(61);
    std::vector<int> caps = {8, 6, 5, 4, 3, 2};
    allocation::AllocationStrategy s;
    for (int trial = 0; trial < 200; ++trial) {
        SplitRng r = rng.split(static_cast<std::uint64_t>(trial));
        allocation::AllocationMatrix m = allocation::generate_allocation(s, caps, 8, r);
        m.validate();
        for (int i = 0; i < m.num_clients; ++i)
            req(m.row_sum(i) == caps[static_cast<std::size_t>(i)], "row sum != capacity");
    }
}

void check_alloc_constrained_coverage() {
    SplitRng rng(62);
    std::vector<int> caps = {3, 2, 2, 1};
    allocation::AllocationStrategy s;
    s.kind = allocation::StrategyKind::kRandomConstrained;
    for (int trial = 0; trial < 200; ++trial) {
        SplitRng r = rng.split(static_cast<std::uint64_t>(trial));
        allocation::AllocationMatrix m = allocation::generate_allocation(s, caps, 6, r);
        m.validate();
        req(m.min_column_sum() >= 1, "constrained allocation left a layer uncovered");
    }
}

void check_alloc_repair() {
    allocation::AllocationMatrix m(2, 2);
    m.at(0, 0) = 1;
    m.at(1, 0) = 1;
    m.capacities = {1, 1};
    allocation::AllocationMatrix fixed = allocation::repair_empty_columns(m);
    fixed.validate();
    req(fixed.min_column_sum() >= 1, "repair left an empty column");
    req(fixed.at(0, 1) == 1 && fixed.at(1, 0) == 1, "repair must move the lowest-index client");
}

void check_alloc_depth_prefix() {
    SplitRng rng(63);
    allocation::AllocationStrategy s;
    s.kind = allocation::StrategyKind::kDepthPrefix;
    std::vector<int> caps = {5, 3, 1};
    allocation::AllocationMatrix m = allocation::generate_allocation(s, caps, 6, rng);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j)
            req(m.at(i, j) == (j < caps[static_cast<std::size_t>(i)] ? 1 : 0),
                "depth prefix shape wrong");
}

void check_alloc_uniform_frequency() {
    SplitRng rng(64);
    allocation::AllocationStrategy s;
    std::vector<int> caps = {3};
    const int draws = 20000;
    std::vector<int> hits(8, 0);
    for (int t = 0; t < draws; ++t) {
        SplitRng r = rng.split(static_cast<std::uint64_t>(t));
        allocation::AllocationMatrix m = allocation::generate_allocation(s, caps, 8, r);
        for (int j = 0; j < 8; ++j) hits[static_cast<std::size_t>(j)] += m.at(0, j);
    }
    double p = 3.0 / 8.0;
    double sigma = std::sqrt(p * (1 - p) / draws);
    for (int j = 0; j < 8; ++j) {
        double freq = static_cast<double>(hits[static_cast<std::size_t>(j)]) / draws;
        req(std::abs(freq - p) <= 4.0 * sigma,
            "layer frequency " + std::to_string(freq) + " deviates from uniform");
    }
}

void check_alloc_dynamic_caps() {
    ExperimentConfig cfg = tiny_config();
    cfg.dynamic = true;
    RunOutcome out = execute_run(cfg, 5);
    for (const auto& rep : out.reports)
        for (int c : rep.alloc.capacities)
            req(c >= 1 && c <= cfg.layers, "dynamic capacity out of range");
}

void check_rotation_orthogonal() {
    SplitRng rng(71);
    for (double strength : {0.0, 0.5, 2.0}) {
        Matrix q = data::random_rotation(16, strength, rng);
        req(data::orthogonality_defect(q) <= 1e-9, "rotation is not orthogonal");
    }
}

void check_partition_disjoint_union() {
    SplitRng rng(72);
    data::LabeledDataset d = random_dataset(120, 4, 5, rng);
    std::vector<data::LabeledDataset> parts = data::dirichlet_partition(d, 0.5, 4, rng);
    auto rows_of = [](const data::LabeledDataset& ds) {
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < ds.size(); ++i) {
            std::vector<double> row(ds.features.row(i).begin(), ds.features.row(i).end());
            row.push_back(static_cast<double>(ds.labels[static_cast<std::size_t>(i)]));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    std::vector<std::vector<double>> want = rows_of(d);
    std::vector<std::vector<double>> got;
    for (const auto& p : parts) {
        req(p.size() >= 1, "empty part after repair");
        auto rows = rows_of(p);
        got.insert(got.end(), rows.begin(), rows.end());
    }
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    req(want == got, "parts are not a disjoint cover of the dataset");
}

void check_split_stratified() {
    data::SyntheticConfig s;
    s.num_domains = 2;
    s.num_classes = 3;
    s.input_dim = 6;
    s.samples_per_domain = 30;
    SplitRng rng(73);
    auto domains = data::make_synthetic_domains(s, rng);
    for (const auto& dd : domains) {
        std::vector<int> counts(3, 0);
        for (int l : dd.test.labels) counts[static_cast<std::size_t>(l)]++;
        int lo = *std::min_element(counts.begin(), counts.end());
        int hi = *std::max_element(counts.begin(), counts.end());
        req(hi - lo <= 1, "test split is not stratified");
        req(dd.train.size() + dd.test.size() == 30, "split lost samples");
    }
}

void check_dirichlet_skew_monotone() {
    SplitRng rng(74);
    data::LabeledDataset d = random_dataset(400, 4, 5, rng);
    std::vector<double> global = data::label_distribution(d);
    auto mean_tv = [&](double alpha, std::uint64_t stream) {
        SplitRng r = rng.split(stream);
        auto parts = data::dirichlet_partition(d, alpha, 5, r);
        double acc = 0.0;
        for (const auto& p : parts)
            acc += data::total_variation(data::label_distribution(p), global);
        return acc / parts.size();
    };
    double skewed = mean_tv(0.1, 1);
    double flat = mean_tv(100.0, 2);
    req(skewed > flat, "small alpha must increase label skew");
}

void check_csv_roundtrip() {
    data::SyntheticConfig s;
    s.num_domains = 2;
    s.num_classes = 3;
    s.input_dim = 5;
    s.samples_per_domain = 12;
    SplitRng rng(75);
    auto domains = data::make_synthetic_domains(s, rng);
    std::stringstream ss;
    data::export_domains_csv(ss, domains);
    auto loaded = data::import_domains_csv(ss);
    req(loaded.size() == domains.size(), "domain count changed");
    for (std::size_t k = 0; k < domains.size(); ++k) {
        req(bitwise_equal(loaded[k].train.features, domains[k].train.features) &&
                bitwise_equal(loaded[k].test.features, domains[k].test.features),
            "CSV round trip is not bit-exact");
        req(loaded[k].train.labels == domains[k].train.labels, "labels changed");
    }
}

void check_theory_interval() {
    theory::EtaInterval iv = theory::lr_feasible_interval(1, 1, 1, 1);
    req(std::abs(iv.lo - 17.0 / 48.0) <= 1e-15, "eta_lo mismatch");
    req(std::abs(iv.hi - 0.25) <= 1e-15, "eta_hi mismatch");
    req(!iv.nonempty(), "interval must be empty for N=J=h=G=1");
}

void check_alpha_tightness() {
    SplitRng rng(81);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> r(20);
        std::vector<std::uint8_t> mask(20);
        for (auto& v : r) v = rng.next_gaussian();
        for (auto& m : mask) m = rng.next_double() < 0.5 ? 1 : 0;
        double alpha = theory::mask_deviation_alpha(r, mask);
        double masked = 0.0, norm2v = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            norm2v += r[i] * r[i];
            if (!mask[i]) masked += r[i] * r[i];
        }
        req(std::abs(std::sqrt(masked) - alpha * norm2v) <= 1e-12 * std::max(1.0, norm2v),
            "alpha tightness identity violated");
    }
}

void check_bound_monotone() {
    theory::BoundInputs base;
    base.lipschitz = 1.0;
    base.sigma2 = 0.05;
    base.delta2 = 0.1;
    base.alpha = 0.02;
    base.n_clients = 4;
    base.local_steps = 8;
    base.eta = 0.028;
    base.f1 = 1.0;
    base.sum_r_norm2 = 100.0;
    for (double g : {4.0, 5.0, 6.0}) {
        double prev = 1e300;
        for (double t : {50.0, 100.0, 200.0}) {
            theory::BoundInputs in = base;
            in.gamma_star = g;
            in.rounds = t;
            double b = theory::theorem1_bound(in).bound;
            req(b < prev, "bound not decreasing in T");
            prev = b;
        }
    }
    for (double t : {50.0, 100.0, 200.0}) {
        double prev = 1e300;
        for (double g : {4.0, 5.0, 6.0}) {
            theory::BoundInputs in = base;
            in.gamma_star = g;
            in.rounds = t;
            double b = theory::theorem1_bound(in).bound;
            req(b < prev, "bound not decreasing in gamma_star");
            prev = b;
        }
    }
}

void check_gamma_star_depthprefix() {
    allocation::AllocationStrategy s;
    s.kind = allocation::StrategyKind::kDepthPrefix;
    std::vector<int> caps = {12, 10, 8, 6, 4, 3};
    SplitRng rng(82);
    std::vector<allocation::AllocationMatrix> history;
    for (int t = 0; t < 5; ++t)
        history.push_back(allocation::generate_allocation(s, caps, 12, rng));
    req(theory::gamma_star(history) == 1, "depth prefix gamma_star must be 1");
}

void check_aggregate_oracle() {
    SplitRng rng(91);
    for (int trial = 0; trial < 50; ++trial) {
        SplitRng r = rng.split(static_cast<std::uint64_t>(trial));
        int n = 2 + static_cast<int>(r.next_index(3));
        int layers = 2 + static_cast<int>(r.next_index(3));
        model::BuildConfig mc;
        mc.layers = layers;
        mc.input_dim = 4;
        mc.hidden_dim = 4;
        mc.classes = 2;
        mc.rank = 2;
        model::StackModel m = model::build_stack_model(mc, 1000 + trial);
        nn::LayerStack before = m.net;
        std::vector<int> caps(static_cast<std::size_t>(n));
        for (int& c : caps) c = 1 + static_cast<int>(r.next_index(static_cast<std::size_t>(layers)));
        allocation::AllocationStrategy s;
        allocation::AllocationMatrix alloc =
            allocation::generate_allocation(s, caps, layers, r);
        auto updates = random_updates(m.net, alloc, r);
        federation::aggregate_lora(m.net, updates, alloc,
                                   federation::MissingLayerStrategy::kCarryForward);
        for (int j = 0; j < layers; ++j) check_weighted_mean(m.net, updates, alloc, j, before);
    }
}

void check_carry_forward_bitwise() {
    model::BuildConfig mc;
    mc.layers = 3;
    mc.input_dim = 4;
    mc.hidden_dim = 4;
    mc.classes = 2;
    mc.rank = 2;
    model::StackModel m = model::build_stack_model(mc, 7);
    Matrix down0 = m.net.blocks[1].adapter.down;
    Matrix up0 = m.net.blocks[1].adapter.up;
    SplitRng rng(92);
    for (int round = 0; round < 20; ++round) {
        allocation::AllocationMatrix alloc(2, 3);
        alloc.capacities = {1, 1};
        alloc.at(0, 0) = 1;
        alloc.at(1, 2) = 1;  // layer 2 never selected
        auto updates = random_updates(m.net, alloc, rng);
        federation::aggregate_lora(m.net, updates, alloc,
                                   federation::MissingLayerStrategy::kCarryForward);
        req(bitwise_equal(m.net.blocks[1].adapter.down, down0) &&
                bitwise_equal(m.net.blocks[1].adapter.up, up0),
            "carry-forward changed an unselected layer");
    }
}

void check_fedavg_reduction() {
    SplitRng rng(93);
    model::BuildConfig mc;
    mc.layers = 3;
    mc.input_dim = 4;
    mc.hidden_dim = 4;
    mc.classes = 2;
    mc.rank = 2;
    model::StackModel m = model::build_stack_model(mc, 8);
    nn::LayerStack before = m.net;
    allocation::AllocationMatrix alloc(3, 3);
    alloc.capacities = {3, 3, 3};
    for (auto& e : alloc.entries) e = 1;
    auto updates = random_updates(m.net, alloc, rng);
    federation::aggregate_lora(m.net, updates, alloc,
                               federation::MissingLayerStrategy::kCarryForward);
    for (int j = 0; j < 3; ++j) check_weighted_mean(m.net, updates, alloc, j, before);
}

void check_local_train_lr0() {
    model::StackModel m = small_model(94);
    SplitRng rng(95);
    randomize_adapters(m.net, rng);
    model::SubModel sub = model::extract_submodel(m, {1, 2, 3, 4});
    nn::LayerStack dispatched = sub.net;
    data::LabeledDataset d = random_dataset(20, m.net.input_dim(), 3, rng);
    federation::RoundConfig cfg;
    cfg.lr = 0.0;
    cfg.batch = 8;
    federation::ClientUpdate u =
        federation::local_train(std::move(sub), d, cfg, SplitRng(5), 1, 0);
    for (std::size_t b = 0; b < dispatched.blocks.size(); ++b)
        req(bitwise_equal(u.adapters[b].down, dispatched.blocks[b].adapter.down) &&
                bitwise_equal(u.adapters[b].up, dispatched.blocks[b].adapter.up),
            "lr=0 must return the dispatched adapters unchanged");
    req(bitwise_equal(u.head.weight, dispatched.head.weight),
        "lr=0 must return the dispatched head unchanged");
}

void check_round_determinism() {
    ExperimentConfig cfg = tiny_config();
    RunOutcome a = execute_run(cfg, 9);
    RunOutcome b = execute_run(cfg, 9);
    req(a.frozen_digest_final == b.frozen_digest_final &&
            a.final_average_accuracy == b.final_average_accuracy &&
            a.sum_r_norm2 == b.sum_r_norm2,
        "identical (config, seed) produced different runs");
}

void check_frozen_invariant() {
    ExperimentConfig cfg = tiny_config();
    RunOutcome out = execute_run(cfg, 10);
    req(out.frozen_digest_initial == out.frozen_digest_final,
        "frozen parameters changed during federation");
}

void check_config_roundtrip() {
    ExperimentConfig cfg = tiny_config();
    cfg.method = "fedra-constrained";
    cfg.dynamic = true;
    std::string text = resolved_config_text(cfg);
    ExperimentConfig parsed = parse_config_text(text);
    req(resolved_config_text(parsed) == text, "resolved config does not round trip");
}

void check_run_id_stable() {
    ExperimentConfig cfg = tiny_config();
    req(run_id(cfg, 1) == run_id(cfg, 1), "run id is not stable");
    req(run_id(cfg, 1) != run_id(cfg, 2), "run id ignores the seed");
    ExperimentConfig other = cfg;
    other.lr = cfg.lr * 2;
    req(run_id(cfg, 1) != run_id(other, 1), "run id ignores the config");
}

void check_reproducible_run() {
    ExperimentConfig cfg = tiny_config();
    fs::path base = fs::temp_directory_path() / "fedra-check-repro";
    fs::remove_all(base);
    RunOutcome a = execute_run(cfg, 11);
    RunOutcome b = execute_run(cfg, 11);
    write_run_outputs(cfg, 11, a, (base / "a").string());
    write_run_outputs(cfg, 11, b, (base / "b").string());
    for (const char* f : {"metrics.csv", "plot.csv", "allocations.csv", "summary.json"})
        req(read_file(base / "a" / f) == read_file(base / "b" / f),
            std::string(f) + " differs between identical runs");
    fs::remove_all(base);
}

}  // namespace

const std::vector<Check>& all_checks() {
    static const std::vector<Check> checks = {
        {"nn.zero_adapter_identity", check_zero_adapter_identity},
        {"nn.zero_block_identity", check_zero_block_identity},
        {"nn.softmax_stability", check_softmax_stability},
        {"nn.gradcheck_small", check_gradcheck_small},
        {"nn.sgd_frozen_untouched", check_sgd_frozen_untouched},
        {"nn.forward_deterministic", check_forward_deterministic},
        {"model.submodel_isolation", check_submodel_isolation},
        {"model.submodel_order", check_submodel_order},
        {"model.checkpoint_roundtrip", check_checkpoint_roundtrip},
        {"model.mask_equivalence", check_mask_equivalence},
        {"model.predict_tiebreak", check_predict_tiebreak},
        {"alloc.row_sums_binary", check_alloc_row_sums},
        {"alloc.constrained_coverage", check_alloc_constrained_coverage},
        {"alloc.repair_preserves_rows", check_alloc_repair},
        {"alloc.depth_prefix_shape", check_alloc_depth_prefix},
        {"alloc.uniform_frequency", check_alloc_uniform_frequency},
        {"alloc.dynamic_caps", check_alloc_dynamic_caps},
        {"data.rotation_orthogonal", check_rotation_orthogonal},
        {"data.partition_disjoint_union", check_partition_disjoint_union},
        {"data.split_stratified", check_split_stratified},
        {"data.dirichlet_skew_monotone", check_dirichlet_skew_monotone},
        {"data.csv_roundtrip", check_csv_roundtrip},
        {"theory.interval_example", check_theory_interval},
        {"theory.alpha_tightness", check_alpha_tightness},
        {"theory.bound_monotone", check_bound_monotone},
        {"theory.gamma_star_depthprefix", check_gamma_star_depthprefix},
        {"fed.aggregate_oracle", check_aggregate_oracle},
        {"fed.carry_forward_bitwise", check_carry_forward_bitwise},
        {"fed.fedavg_reduction", check_fedavg_reduction},
        {"fed.local_train_lr0_identity", check_local_train_lr0},
        {"fed.round_determinism", check_round_determinism},
        {"fed.frozen_invariant", check_frozen_invariant},
        {"harness.config_roundtrip", check_config_roundtrip},
        {"harness.run_id_stable", check_run_id_stable},
        {"harness.reproducible_run", check_reproducible_run},
    };
    return checks;
}

}  // namespace fedra::harness
