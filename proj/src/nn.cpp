#include "fedra/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fedra/errors.hpp"

namespace fedra::nn {

double activate(Activation a, double x) {
    switch (a) {
        case Activation::kRelu:
            return x > 0.0 ? x : 0.0;
        case Activation::kTanh:
            return std::tanh(x);
    }
    throw InternalError("unknown activation");
}

double activate_grad(Activation a, double x) {
    switch (a) {
        case Activation::kRelu:
            return x > 0.0 ? 1.0 : 0.0;
        case Activation::kTanh: {
            double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    throw InternalError("unknown activation");
}

std::vector<double> dense_forward(const DenseParams& params, std::span<const double> x) {
    if (static_cast<int>(x.size()) != params.in_dim())
        throw ShapeError("dense_forward: input length " + std::to_string(x.size()) +
                         " != in dim " + std::to_string(params.in_dim()));
    std::vector<double> y = matvec(params.weight, x);
    for (int i = 0; i < params.out_dim(); ++i) y[i] += params.bias[i];
    return y;
}

std::vector<double> lora_delta_apply(const LoraAdapter& adapter, const DenseParams& params,
                                     std::span<const double> x) {
    if (adapter.in_dim() != params.in_dim() || adapter.out_dim() != params.out_dim() ||
        adapter.up.cols != adapter.down.rows)
        throw ShapeError("lora_delta_apply: adapter factors inconsistent with layer dims");
    std::vector<double> y = dense_forward(params, x);
    std::vector<double> mid = matvec(adapter.down, x);
    std::vector<double> delta = matvec(adapter.up, mid);
    for (int i = 0; i < params.out_dim(); ++i) y[i] += adapter.scale * delta[i];
    return y;
}

CrossEntropyResult softmax_cross_entropy(std::span<const double> logits, int label) {
    if (logits.empty()) throw ShapeError("softmax_cross_entropy: empty logits");
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw PreconditionError("softmax_cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(logits.size()) +
                                " classes");
    double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    CrossEntropyResult res;
    res.dlogits.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        res.dlogits[i] = std::exp(logits[i] - max_logit);
        sum += res.dlogits[i];
    }
    for (double& p : res.dlogits) p /= sum;
    res.loss = -(logits[label] - max_logit - std::log(sum));
    res.dlogits[label] -= 1.0;
    return res;
}

std::vector<double> block_forward(const ResidualBlock& block, std::span<const double> h) {
    std::vector<double> pre = lora_delta_apply(block.adapter, block.base, h);
    std::vector<double> out(h.begin(), h.end());
    for (int i = 0; i < block.dim(); ++i) out[i] += activate(block.act, pre[i]);
    return out;
}

std::vector<double> stack_forward(const LayerStack& stack, std::span<const double> x) {
    std::vector<double> h = dense_forward(stack.input_proj, x);
    for (const ResidualBlock& block : stack.blocks) h = block_forward(block, h);
    return dense_forward(stack.head, h);
}

GradRecord make_zero_grads(const LayerStack& stack) {
    GradRecord g;
    g.adapters.reserve(stack.blocks.size());
    for (const ResidualBlock& block : stack.blocks) {
        AdapterGrad ag;
        ag.down = Matrix::zeros(block.adapter.down.rows, block.adapter.down.cols);
        ag.up = Matrix::zeros(block.adapter.up.rows, block.adapter.up.cols);
        g.adapters.push_back(std::move(ag));
    }
    g.head_weight = Matrix::zeros(stack.head.out_dim(), stack.head.in_dim());
    g.head_bias.assign(stack.head.bias.size(), 0.0);
    return g;
}

void grad_axpy(double a, const GradRecord& g, GradRecord& acc) {
    if (g.adapters.size() != acc.adapters.size())
        throw ShapeError("grad_axpy: adapter counts differ");
    for (std::size_t i = 0; i < g.adapters.size(); ++i) {
        axpy(a, g.adapters[i].down, acc.adapters[i].down);
        axpy(a, g.adapters[i].up, acc.adapters[i].up);
    }
    axpy(a, g.head_weight, acc.head_weight);
    axpy(a, std::span<const double>(g.head_bias), std::span<double>(acc.head_bias));
}

void grad_scale(GradRecord& g, double s) {
    for (AdapterGrad& ag : g.adapters) {
        scale(ag.down, s);
        scale(ag.up, s);
    }
    scale(g.head_weight, s);
    for (double& e : g.head_bias) e *= s;
}

double backward_pass(const LayerStack& stack, std::span<const double> x, int label,
                     GradRecord& acc) {
    const std::size_t n_blocks = stack.blocks.size();
    if (acc.adapters.size() != n_blocks) throw ShapeError("backward_pass: grad record mismatch");

    // Forward, keeping per-block inputs, pre-activations and adapter mids.
    std::vector<std::vector<double>> inputs(n_blocks + 1);
    std::vector<std::vector<double>> preacts(n_blocks);
    std::vector<std::vector<double>> mids(n_blocks);  // down * h
    inputs[0] = dense_forward(stack.input_proj, x);
    for (std::size_t k = 0; k < n_blocks; ++k) {
        const ResidualBlock& block = stack.blocks[k];
        const std::vector<double>& h = inputs[k];
        mids[k] = matvec(block.adapter.down, h);
        std::vector<double> delta = matvec(block.adapter.up, mids[k]);
        preacts[k] = dense_forward(block.base, h);
        for (int i = 0; i < block.dim(); ++i) preacts[k][i] += block.adapter.scale * delta[i];
        inputs[k + 1] = h;
        for (int i = 0; i < block.dim(); ++i)
            inputs[k + 1][i] += activate(block.act, preacts[k][i]);
    }
    std::vector<double> logits = dense_forward(stack.head, inputs[n_blocks]);
    CrossEntropyResult ce = softmax_cross_entropy(logits, label);

    // Head.
    add_outer(acc.head_weight, ce.dlogits, inputs[n_blocks]);
    axpy(1.0, std::span<const double>(ce.dlogits), std::span<double>(acc.head_bias));

    // Through the residual chain. g holds dLoss/d(input of block k+1).
    std::vector<double> g = matvec_t(stack.head.weight, ce.dlogits);
    for (std::size_t k = n_blocks; k-- > 0;) {
        const ResidualBlock& block = stack.blocks[k];
        const int d = block.dim();
        std::vector<double> da(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) da[i] = g[i] * activate_grad(block.act, preacts[k][i]);

        // Adapter factor gradients: pre = ... + scale * up * (down * h).
        std::vector<double> up_t_da = matvec_t(block.adapter.up, da);
        add_outer(acc.adapters[k].up, da, mids[k], block.adapter.scale);
        add_outer(acc.adapters[k].down, up_t_da, inputs[k], block.adapter.scale);

        // g_{k-1} = g_k (residual) + W^T da + scale * down^T (up^T da).
        std::vector<double> back_base = matvec_t(block.base.weight, da);
        std::vector<double> back_adapter = matvec_t(block.adapter.down, up_t_da);
        for (int i = 0; i < d; ++i)
            g[i] += back_base[i] + block.adapter.scale * back_adapter[i];
    }
    return ce.loss;
}

GradRecord backward_pass(const LayerStack& stack, std::span<const double> x, int label,
                         double* loss_out) {
    GradRecord g = make_zero_grads(stack);
    double loss = backward_pass(stack, x, label, g);
    if (loss_out) *loss_out = loss;
    return g;
}

void sgd_step(LayerStack& stack, const GradRecord& grads, double lr) {
    if (lr <= 0.0) throw PreconditionError("sgd_step: lr must be positive");
    if (grads.adapters.size() != stack.blocks.size())
        throw ShapeError("sgd_step: grad record does not match stack");
    for (std::size_t k = 0; k < stack.blocks.size(); ++k) {
        axpy(-lr, grads.adapters[k].down, stack.blocks[k].adapter.down);
        axpy(-lr, grads.adapters[k].up, stack.blocks[k].adapter.up);
    }
    axpy(-lr, grads.head_weight, stack.head.weight);
    axpy(-lr, std::span<const double>(grads.head_bias), std::span<double>(stack.head.bias));
}

namespace {

// Visit every trainable scalar of the stack paired with its analytic gradient.
template <typename Fn>
void for_each_trainable(LayerStack& stack, GradRecord& grads, Fn&& fn) {
    for (std::size_t k = 0; k < stack.blocks.size(); ++k) {
        LoraAdapter& a = stack.blocks[k].adapter;
        for (std::size_t i = 0; i < a.down.v.size(); ++i)
            fn(a.down.v[i], grads.adapters[k].down.v[i]);
        for (std::size_t i = 0; i < a.up.v.size(); ++i)
            fn(a.up.v[i], grads.adapters[k].up.v[i]);
    }
    for (std::size_t i = 0; i < stack.head.weight.v.size(); ++i)
        fn(stack.head.weight.v[i], grads.head_weight.v[i]);
    for (std::size_t i = 0; i < stack.head.bias.size(); ++i)
        fn(stack.head.bias[i], grads.head_bias[i]);
}

double loss_at(const LayerStack& stack, std::span<const double> x, int label) {
    std::vector<double> logits = stack_forward(stack, x);
    double loss = softmax_cross_entropy(logits, label).loss;
    if (!std::isfinite(loss)) throw NumericError("finite_diff_gradcheck: non-finite loss");
    return loss;
}

}  // namespace

double finite_diff_gradcheck(LayerStack& stack, std::span<const double> x, int label,
                             double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1e-2)
        throw PreconditionError("finite_diff_gradcheck: epsilon must be in (0, 1e-2]");
    GradRecord grads = backward_pass(stack, x, label);
    double max_rel_err = 0.0;
    for_each_trainable(stack, grads, [&](double& param, double& analytic) {
        const double saved = param;
        param = saved + epsilon;
        double loss_plus = loss_at(stack, x, label);
        param = saved - epsilon;
        double loss_minus = loss_at(stack, x, label);
        param = saved;
        double numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
        double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
        max_rel_err = std::max(max_rel_err, rel);
    });
    return max_rel_err;
}

std::vector<double> flatten_adapters(const LayerStack& stack) {
    std::vector<double> flat;
    for (const ResidualBlock& block : stack.blocks) {
        flat.insert(flat.end(), block.adapter.down.v.begin(), block.adapter.down.v.end());
        flat.insert(flat.end(), block.adapter.up.v.begin(), block.adapter.up.v.end());
    }
    return flat;
}

}  // namespace fedra::nn
