#pragma once

#include <span>
#include <vector>

#include "fedra/matrix.hpp"

namespace fedra::nn {

/// Activations are restricted to f(0) = 0: a residual block whose parameters
/// are all zero must reduce to the identity map.
enum class Activation { kRelu, kTanh };

double activate(Activation a, double x);
double activate_grad(Activation a, double x);

/// Frozen dense layer parameters (weight is out x in).
struct DenseParams {
    Matrix weight;
    std::vector<double> bias;

    DenseParams() = default;
    DenseParams(int out, int in) : weight(out, in), bias(static_cast<std::size_t>(out), 0.0) {}

    int in_dim() const { return weight.cols; }
    int out_dim() const { return weight.rows; }
};

/// Low-rank adapter: effective weight delta = scale * up * down,
/// with down (rank x in) and up (out x rank).
struct LoraAdapter {
    Matrix down;
    Matrix up;
    double scale = 1.0;

    LoraAdapter() = default;
    LoraAdapter(int out, int in, int rank, double scale_ = 1.0)
        : down(rank, in), up(out, rank), scale(scale_) {}

    int rank() const { return down.rows; }
    int in_dim() const { return down.cols; }
    int out_dim() const { return up.rows; }
};

/// weight * x + bias
std::vector<double> dense_forward(const DenseParams& params, std::span<const double> x);

/// (weight + scale * up * down) * x + bias, computed without materializing
/// the delta. With up == 0 this reproduces dense_forward bit for bit.
std::vector<double> lora_delta_apply(const LoraAdapter& adapter, const DenseParams& params,
                                     std::span<const double> x);

struct CrossEntropyResult {
    double loss = 0.0;
    std::vector<double> dlogits;
};

/// loss = -log softmax(logits)[label]; dlogits = softmax(logits) - onehot.
/// Max-subtraction keeps this finite for logits up to ~1e308.
CrossEntropyResult softmax_cross_entropy(std::span<const double> logits, int label);

/// One residual substructure: h -> h + act((W + scale*up*down) h + b).
/// Square by construction; base is frozen, adapter is trainable.
struct ResidualBlock {
    DenseParams base;
    LoraAdapter adapter;
    Activation act = Activation::kRelu;

    int dim() const { return base.out_dim(); }
};

std::vector<double> block_forward(const ResidualBlock& block, std::span<const double> h);

/// The trainable slice a client sees: frozen input projection, an ordered
/// run of residual blocks, and a trainable classifier head.
struct LayerStack {
    DenseParams input_proj;  // frozen
    std::vector<ResidualBlock> blocks;
    DenseParams head;  // trainable

    int input_dim() const { return input_proj.in_dim(); }
    int hidden_dim() const { return input_proj.out_dim(); }
    int classes() const { return head.out_dim(); }
};

std::vector<double> stack_forward(const LayerStack& stack, std::span<const double> x);

/// Gradients of the trainable parameters only: adapter factors per block and
/// the head. Frozen base weights and the input projection have no entries.
struct AdapterGrad {
    Matrix down;
    Matrix up;
};

struct GradRecord {
    std::vector<AdapterGrad> adapters;  // one per block, in stack order
    Matrix head_weight;
    std::vector<double> head_bias;
};

GradRecord make_zero_grads(const LayerStack& stack);
void grad_axpy(double a, const GradRecord& g, GradRecord& acc);
void grad_scale(GradRecord& g, double s);

/// Single-sample backprop. Accumulates into `acc` (so minibatch gradients are
/// sums of per-sample calls) and returns the sample loss.
double backward_pass(const LayerStack& stack, std::span<const double> x, int label,
                     GradRecord& acc);

/// Convenience wrapper returning a fresh GradRecord.
GradRecord backward_pass(const LayerStack& stack, std::span<const double> x, int label,
                         double* loss_out = nullptr);

/// p <- p - lr * g for every trainable parameter.
void sgd_step(LayerStack& stack, const GradRecord& grads, double lr);

/// Central-difference check of backward_pass over every trainable scalar.
/// Returns max over parameters of |analytic - numeric| / max(1, |numeric|).
double finite_diff_gradcheck(LayerStack& stack, std::span<const double> x, int label,
                             double epsilon);

/// Flattened view of all adapter parameters (down then up per block, in stack
/// order). This is the "r" vector of the convergence analysis.
std::vector<double> flatten_adapters(const LayerStack& stack);

}  // namespace fedra::nn
