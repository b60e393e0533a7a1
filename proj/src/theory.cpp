#include "fedra/theory.hpp"

#include <algorithm>
#include <cmath>

#include "fedra/errors.hpp"

namespace fedra::theory {

EtaInterval lr_feasible_interval(double n_clients, double local_steps, double lipschitz,
                                 double gamma_star) {
    if (!(n_clients > 0.0) || !(local_steps > 0.0) || !(lipschitz > 0.0) || !(gamma_star > 0.0))
        throw PreconditionError("lr_feasible_interval: all inputs must be positive");
    double n = n_clients, j = local_steps, h = lipschitz, g = gamma_star;
    EtaInterval iv;
    iv.lo = 3.0 * n / (16.0 * j * j * h * g) + n / (6.0 * j * h * g);
    iv.hi = 1.0 / (4.0 * j * h);
    return iv;
}

namespace {

void validate_bound_inputs(const BoundInputs& in) {
    if (!(in.lipschitz > 0.0)) throw PreconditionError("bound: lipschitz must be positive");
    if (!(in.n_clients > 0.0)) throw PreconditionError("bound: n_clients must be positive");
    if (!(in.local_steps > 0.0)) throw PreconditionError("bound: local_steps must be positive");
    if (!(in.rounds > 0.0)) throw PreconditionError("bound: rounds must be positive");
    if (!(in.gamma_star > 0.0)) throw PreconditionError("bound: gamma_star must be positive");
    if (in.sigma2 < 0.0 || in.delta2 < 0.0 || in.alpha < 0.0 || in.f1 < 0.0 ||
        in.sum_r_norm2 < 0.0)
        throw PreconditionError("bound: variance/heterogeneity inputs must be >= 0");
    if (!(in.eta > 0.0)) throw PreconditionError("bound: eta must be positive");
}

BoundReport compute_bound(const BoundInputs& in) {
    double n = in.n_clients, j = in.local_steps, h = in.lipschitz, g = in.gamma_star;
    double t = in.rounds;
    BoundReport rep;
    rep.interval = lr_feasible_interval(n, j, h, g);
    rep.delta1 = j * in.eta / 2.0 - 3.0 * n / (32.0 * j * h * g) - n / (12.0 * h * g);
    if (!(rep.delta1 > 0.0)) throw InfeasibleError("bound: delta1 <= 0, no guarantee applies");
    double d1 = rep.delta1;
    rep.terms[0] = in.f1 / (t * d1);
    rep.terms[1] = h * n * in.alpha / (t * d1 * g) * in.sum_r_norm2;
    rep.terms[2] = 17.0 * n / (64.0 * j * h * d1 * g) * in.sigma2;
    rep.terms[3] = (1.0 / 3.0 + 3.0 / (32.0 * j)) * n / (h * d1 * g) * in.delta2;
    rep.bound = rep.terms[0] + rep.terms[1] + rep.terms[2] + rep.terms[3];
    rep.feasible = true;
    return rep;
}

}  // namespace

BoundReport theorem1_bound(const BoundInputs& in) {
    validate_bound_inputs(in);
    EtaInterval iv = lr_feasible_interval(in.n_clients, in.local_steps, in.lipschitz,
                                          in.gamma_star);
    if (!(in.eta > iv.lo) || !(in.eta <= iv.hi))
        throw PreconditionError("bound: eta outside the feasible interval");
    return compute_bound(in);
}

BoundReport try_theorem1_bound(const BoundInputs& in) {
    validate_bound_inputs(in);
    BoundReport rep;
    rep.interval = lr_feasible_interval(in.n_clients, in.local_steps, in.lipschitz,
                                        in.gamma_star);
    if (!(in.eta > rep.interval.lo) || !(in.eta <= rep.interval.hi)) {
        rep.feasible = false;
        rep.delta1 = in.local_steps * in.eta / 2.0 -
                     3.0 * in.n_clients / (32.0 * in.local_steps * in.lipschitz * in.gamma_star) -
                     in.n_clients / (12.0 * in.lipschitz * in.gamma_star);
        return rep;
    }
    return compute_bound(in);
}

double mask_deviation_alpha(const std::vector<double>& r, const std::vector<std::uint8_t>& mask) {
    if (r.size() != mask.size()) throw ShapeError("mask_deviation_alpha: size mismatch");
    double masked_out = 0.0;
    double norm2 = 0.0;
    for (size_t i = 0; i < r.size(); ++i) {
        if (mask[i] != 0 && mask[i] != 1)
            throw PreconditionError("mask_deviation_alpha: mask must be binary");
        norm2 += r[i] * r[i];
        if (mask[i] == 0) masked_out += r[i] * r[i];
    }
    if (norm2 == 0.0) return 0.0;
    return std::sqrt(masked_out) / norm2;
}

int gamma_star(const std::vector<allocation::AllocationMatrix>& history) {
    if (history.empty()) throw PreconditionError("gamma_star: empty history");
    int best = -1;
    for (const auto& m : history) {
        for (int j = 0; j < m.num_layers; ++j) {
            int s = m.column_sum(j);
            if (s >= 1 && (best < 0 || s < best)) best = s;
        }
    }
    if (best < 0) throw PreconditionError("gamma_star: no layer was ever updated");
    return best;
}

std::vector<double> adapter_gradient(const nn::LayerStack& stack, const data::LabeledDataset& d) {
    if (d.size() == 0) throw PreconditionError("adapter_gradient: empty dataset");
    nn::GradRecord acc = nn::make_zero_grads(stack);
    for (int i = 0; i < d.size(); ++i) {
        std::vector<double> x(d.features.row(i).begin(), d.features.row(i).end());
        nn::backward_pass(stack, x, d.labels[i], acc);
    }
    nn::grad_scale(acc, 1.0 / d.size());
    std::vector<double> flat;
    for (const auto& ag : acc.adapters) {
        flat.insert(flat.end(), ag.down.v.begin(), ag.down.v.end());
        flat.insert(flat.end(), ag.up.v.begin(), ag.up.v.end());
    }
    return flat;
}

namespace {

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("l2_diff: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

void perturb_adapters(nn::LayerStack& stack, double step, SplitRng& rng) {
    for (auto& block : stack.blocks) {
        for (double& v : block.adapter.down.v) v += step * rng.next_gaussian();
        for (double& v : block.adapter.up.v) v += step * rng.next_gaussian();
    }
}

}  // namespace

EmpiricalConstants estimate_constants(const model::StackModel& global,
                                      const std::vector<data::LabeledDataset>& client_train,
                                      const EstimateOptions& opt, const SplitRng& rng) {
    if (client_train.empty()) throw PreconditionError("estimate_constants: no clients");
    if (opt.probe_pairs < 1 || opt.minibatches < 1 || opt.batch < 1 || !(opt.probe_step > 0.0))
        throw PreconditionError("estimate_constants: bad options");

    int n_use = static_cast<int>(client_train.size());
    if (opt.max_clients > 0) n_use = std::min(n_use, opt.max_clients);

    // Full per-client gradients at the current point, and their mean
    // (the global objective averages clients uniformly).
    std::vector<std::vector<double>> grads(n_use);
    for (int i = 0; i < n_use; ++i) grads[i] = adapter_gradient(global.net, client_train[i]);
    std::vector<double> mean_grad(grads[0].size(), 0.0);
    for (const auto& g : grads)
        for (size_t k = 0; k < g.size(); ++k) mean_grad[k] += g[k] / n_use;

    EmpiricalConstants out;
    for (int i = 0; i < n_use; ++i) {
        double gap = l2_diff(grads[i], mean_grad);
        out.delta2 = std::max(out.delta2, gap * gap);
    }

    // Smoothness proxy: gradient-difference ratio along random adapter
    // perturbations, maxed over probes and clients.
    for (int p = 0; p < opt.probe_pairs; ++p) {
        SplitRng probe_rng = rng.split(1000 + static_cast<std::uint64_t>(p));
        nn::LayerStack perturbed = global.net;
        perturb_adapters(perturbed, opt.probe_step, probe_rng);
        std::vector<double> r1 = nn::flatten_adapters(global.net);
        std::vector<double> r2 = nn::flatten_adapters(perturbed);
        double dist = l2_diff(r1, r2);
        if (dist <= 0.0) continue;
        for (int i = 0; i < n_use; ++i) {
            std::vector<double> g2 = adapter_gradient(perturbed, client_train[i]);
            out.lipschitz = std::max(out.lipschitz, l2_diff(g2, grads[i]) / dist);
        }
    }
    if (out.lipschitz <= 0.0) out.lipschitz = 1.0;

    // Minibatch variance against each client's own full gradient.
    for (int i = 0; i < n_use; ++i) {
        SplitRng mb_rng = rng.split(2000 + static_cast<std::uint64_t>(i));
        const data::LabeledDataset& ds = client_train[i];
        int b = std::min(opt.batch, ds.size());
        double acc = 0.0;
        for (int m = 0; m < opt.minibatches; ++m) {
            auto picks = mb_rng.sample_without_replacement(ds.size(), b);
            std::vector<int> idx(picks.begin(), picks.end());
            std::vector<double> g = adapter_gradient(global.net, ds.subset(idx));
            double d = l2_diff(g, grads[i]);
            acc += d * d;
        }
        out.sigma2 = std::max(out.sigma2, acc / opt.minibatches);
    }
    return out;
}

}  // namespace fedra::theory
