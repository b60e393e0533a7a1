#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fedra/matrix.hpp"
#include "fedra/rng.hpp"

namespace fedra::data {

struct LabeledDataset {
    Matrix features;  // one sample per row
    std::vector<int> labels;
    int num_classes = 0;
    std::string domain;

    int size() const { return features.rows; }
    int dim() const { return features.cols; }

    LabeledDataset subset(const std::vector<int>& indices) const;
    void append(const LabeledDataset& other);
};

/// Synthetic domain shift: an orthogonal transform plus a shift, with
/// isotropic sample noise. Stands in for the style shift between image
/// domains while keeping the geometry analyzable.
struct DomainSpec {
    Matrix rotation;  // orthogonal, input_dim x input_dim
    std::vector<double> shift;
    double noise_scale = 0.0;
};

/// Max |Q^T Q - I| entry; the orthogonality defect.
double orthogonality_defect(const Matrix& q);

struct SyntheticConfig {
    int num_domains = 6;
    int num_classes = 10;
    int input_dim = 32;
    int samples_per_domain = 750;  // split 80/20 into train/test
    double train_fraction = 0.8;
    double prototype_scale = 1.0;   // class prototype stddev
    double rotation_strength = 1.0; // 0 = identity transform per domain
    double shift_scale = 0.5;
    double noise_scale = 0.4;
};

struct DomainData {
    LabeledDataset train;
    LabeledDataset test;
};

/// Orthogonal matrix from Gram-Schmidt on (I + strength * G), G Gaussian.
Matrix random_rotation(int dim, double strength, SplitRng& rng);

std::vector<DomainSpec> make_domain_specs(const SyntheticConfig& cfg, SplitRng& rng);

/// Shared class prototypes, per-domain transform, balanced classes,
/// stratified train/test split. Domains are named "domain0".."domainK".
std::vector<DomainData> make_synthetic_domains(const SyntheticConfig& cfg, SplitRng& rng);

/// Per class, draw part proportions ~ Dirichlet(alpha) and assign that
/// class's samples multinomially. Parts are disjoint and union to the input;
/// empty parts are repaired by moving one sample from the largest part.
std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& dataset, double alpha,
                                                int parts, SplitRng& rng);

enum class PartitionMode { kFeatureSkew, kFeatureLabelSkew };

struct ClientShard {
    int capacity = 0;
    int domain_index = 0;
    LabeledDataset train;
};

struct FederationScenario {
    PartitionMode mode = PartitionMode::kFeatureSkew;
    std::vector<ClientShard> clients;
    std::vector<LabeledDataset> domain_tests;
    std::vector<std::string> domain_names;
    int num_classes = 0;
    int input_dim = 0;
};

/// FeatureSkew: one client per domain (capacities[k] <-> domain k).
/// FeatureLabelSkew: parts_per_domain Dirichlet shards per domain; clients of
/// the same domain must share a capacity.
FederationScenario build_federation_scenario(PartitionMode mode,
                                             const std::vector<int>& capacities,
                                             double dirichlet_alpha, int parts_per_domain,
                                             const std::vector<DomainData>& domains,
                                             SplitRng& rng);

// CSV interchange: header "domain,split,label,f0,...,fD-1"; values with 17
// significant digits so re-import is exact.
void export_domains_csv(std::ostream& out, const std::vector<DomainData>& domains);
std::vector<DomainData> import_domains_csv(std::istream& in);

/// Class histogram normalized to a distribution.
std::vector<double> label_distribution(const LabeledDataset& d);

/// 0.5 * L1 distance between two distributions.
double total_variation(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace fedra::data
