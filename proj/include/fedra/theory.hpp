#pragma once

#include <array>
#include <vector>

#include "fedra/allocation.hpp"
#include "fedra/data.hpp"
#include "fedra/model.hpp"
#include "fedra/rng.hpp"

namespace fedra::theory {

struct EtaInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool nonempty() const { return lo < hi; }
};

/// Admissible learning rates for the convergence guarantee:
/// lo = 3N/(16 J^2 h G) + N/(6 J h G), hi = 1/(4 J h), G = gamma_star.
/// delta1 > 0 exactly when eta > lo.
EtaInterval lr_feasible_interval(double n_clients, double local_steps, double lipschitz,
                                 double gamma_star);

struct BoundInputs {
    double lipschitz = 0.0;  // smoothness constant h
    double sigma2 = 0.0;     // stochastic-gradient variance
    double delta2 = 0.0;     // client heterogeneity
    double alpha = 0.0;      // mask deviation coefficient
    double n_clients = 0.0;
    double local_steps = 0.0;  // J
    double rounds = 0.0;       // T
    double eta = 0.0;
    double gamma_star = 0.0;  // min per-layer update count across rounds
    double f1 = 0.0;          // initial objective gap surrogate
    double sum_r_norm2 = 0.0; // sum over rounds of ||r_t||^2
};

struct BoundReport {
    bool feasible = false;
    EtaInterval interval;
    double delta1 = 0.0;
    // init, mask-deviation, gradient-variance, heterogeneity
    std::array<double, 4> terms{};
    double bound = 0.0;
};

/// Average-gradient-norm bound. Throws PreconditionError when eta falls
/// outside the feasible interval and InfeasibleError when delta1 <= 0.
BoundReport theorem1_bound(const BoundInputs& in);

/// Non-throwing variant: reports feasible=false (terms zeroed) instead of
/// throwing on an inadmissible eta.
BoundReport try_theorem1_bound(const BoundInputs& in);

/// alpha with ||r - r.*mask|| = alpha * ||r||^2 exactly. Zero r gives 0.
double mask_deviation_alpha(const std::vector<double>& r, const std::vector<std::uint8_t>& mask);

/// Min over rounds and over covered layers of the layer's update count.
int gamma_star(const std::vector<allocation::AllocationMatrix>& history);

/// Flat gradient of the mean loss w.r.t. adapter parameters only, laid out
/// like nn::flatten_adapters.
std::vector<double> adapter_gradient(const nn::LayerStack& stack, const data::LabeledDataset& d);

struct EmpiricalConstants {
    double lipschitz = 0.0;
    double sigma2 = 0.0;
    double delta2 = 0.0;
};

struct EstimateOptions {
    int probe_pairs = 4;
    double probe_step = 0.1;
    int minibatches = 8;
    int batch = 32;
    int max_clients = 0;  // 0 = use all
};

/// Plug-in proxies: lipschitz from gradient-difference ratios along random
/// probe directions, sigma2 from minibatch-vs-full gradient variance, delta2
/// from the worst client-vs-average full-gradient gap.
EmpiricalConstants estimate_constants(const model::StackModel& global,
                                      const std::vector<data::LabeledDataset>& client_train,
                                      const EstimateOptions& opt, const SplitRng& rng);

}  // namespace fedra::theory
