#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedra/nn.hpp"

namespace fedra::model {

struct BuildConfig {
    int layers = 8;
    int input_dim = 32;
    int hidden_dim = 32;
    int classes = 10;
    int rank = 4;
    double lora_scale = 1.0;
    nn::Activation activation = nn::Activation::kRelu;
};

/// The global model: a frozen "pre-trained" residual stack (random surrogate,
/// fixed per seed) with one zero-delta adapter per layer, plus a frozen input
/// projection and a trainable classifier head. Layers are indexed 1..L.
struct StackModel {
    nn::LayerStack net;
    BuildConfig config;
    std::uint64_t seed = 0;

    int layers() const { return static_cast<int>(net.blocks.size()); }
};

StackModel build_stack_model(const BuildConfig& cfg, std::uint64_t seed);

/// A client's view: deep copies of the selected blocks (ascending layer
/// order) plus input projection and head. Mutating it never touches the
/// source model.
struct SubModel {
    std::vector<int> selected;  // 1-based global layer indices, strictly increasing
    nn::LayerStack net;
};

/// `selected` may arrive in any order; it is sorted internally. Duplicates or
/// out-of-range indices are rejected.
SubModel extract_submodel(const StackModel& model, std::vector<int> selected);

std::vector<double> forward(const StackModel& model, std::span<const double> x);
std::vector<double> forward(const SubModel& sub, std::span<const double> x);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

/// Argmax prediction with lowest-index tie-break; mean cross-entropy.
EvalResult evaluate(const nn::LayerStack& net, const Matrix& features,
                    const std::vector<int>& labels);
EvalResult evaluate(const StackModel& model, const Matrix& features,
                    const std::vector<int>& labels);

/// Argmax with lowest-index tie-break.
int predict_class(std::span<const double> logits);

// --- checkpoint serialization -------------------------------------------
//
// Structured text, one named parameter array per section with a shape
// header; values printed with 17 significant digits so the round trip is
// bit-exact for IEEE doubles.

void save_checkpoint(const StackModel& model, std::ostream& out);
void save_checkpoint(const StackModel& model, const std::string& path);
StackModel load_checkpoint(std::istream& in);
StackModel load_checkpoint(const std::string& path);

/// SHA-256 over the frozen parameters (all base layers + input projection).
/// Must be invariant across an entire federated run.
std::string frozen_param_digest(const StackModel& model);

/// SHA-256 over every parameter (frozen + adapters + head).
std::string full_param_digest(const nn::LayerStack& net);

}  // namespace fedra::model
