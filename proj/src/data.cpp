#include "fedra/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "fedra/errors.hpp"

namespace fedra::data {

LabeledDataset LabeledDataset::subset(const std::vector<int>& indices) const {
    LabeledDataset out;
    out.features = Matrix(static_cast<int>(indices.size()), features.cols);
    out.labels.resize(indices.size());
    out.num_classes = num_classes;
    out.domain = domain;
    for (size_t k = 0; k < indices.size(); ++k) {
        int i = indices[k];
        if (i < 0 || i >= features.rows) throw PreconditionError("subset index out of range");
        auto src = features.row(i);
        std::copy(src.begin(), src.end(), out.features.row(static_cast<int>(k)).begin());
        out.labels[k] = labels[i];
    }
    return out;
}

void LabeledDataset::append(const LabeledDataset& other) {
    if (size() == 0) {
        *this = other;
        return;
    }
    if (other.dim() != dim()) throw ShapeError("append: feature dim mismatch");
    Matrix merged(features.rows + other.features.rows, features.cols);
    std::copy(features.v.begin(), features.v.end(), merged.v.begin());
    std::copy(other.features.v.begin(), other.features.v.end(),
              merged.v.begin() + features.v.size());
    features = std::move(merged);
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    num_classes = std::max(num_classes, other.num_classes);
}

double orthogonality_defect(const Matrix& q) {
    if (q.rows != q.cols) throw ShapeError("orthogonality_defect: matrix not square");
    double worst = 0.0;
    for (int i = 0; i < q.cols; ++i) {
        for (int j = 0; j < q.cols; ++j) {
            double s = 0.0;
            for (int r = 0; r < q.rows; ++r) s += q(r, i) * q(r, j);
            double target = (i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(s - target));
        }
    }
    return worst;
}

Matrix random_rotation(int dim, double strength, SplitRng& rng) {
    if (dim < 1) throw PreconditionError("random_rotation: dim must be positive");
    if (strength < 0.0) throw PreconditionError("random_rotation: strength must be >= 0");
    Matrix a(dim, dim);
    double g_std = strength / std::sqrt(static_cast<double>(dim));
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c)
            a(r, c) = (r == c ? 1.0 : 0.0) + g_std * rng.next_gaussian();

    // Modified Gram-Schmidt over columns. Near-dependent columns are
    // replaced by fresh Gaussian draws and re-orthogonalized.
    Matrix q = a;
    for (int c = 0; c < dim; ++c) {
        for (int attempt = 0;; ++attempt) {
            for (int prev = 0; prev < c; ++prev) {
                double proj = 0.0;
                for (int r = 0; r < dim; ++r) proj += q(r, prev) * q(r, c);
                for (int r = 0; r < dim; ++r) q(r, c) -= proj * q(r, prev);
            }
            double nrm = 0.0;
            for (int r = 0; r < dim; ++r) nrm += q(r, c) * q(r, c);
            nrm = std::sqrt(nrm);
            if (nrm > 1e-8) {
                for (int r = 0; r < dim; ++r) q(r, c) /= nrm;
                break;
            }
            if (attempt > 16) throw NumericError("random_rotation: Gram-Schmidt failed");
            for (int r = 0; r < dim; ++r) q(r, c) = rng.next_gaussian();
        }
    }
    return q;
}

std::vector<DomainSpec> make_domain_specs(const SyntheticConfig& cfg, SplitRng& rng) {
    if (cfg.num_domains < 1) throw ConfigError("num_domains must be positive");
    if (cfg.input_dim < 1) throw ConfigError("input_dim must be positive");
    std::vector<DomainSpec> specs;
    specs.reserve(cfg.num_domains);
    for (int k = 0; k < cfg.num_domains; ++k) {
        SplitRng dom_rng = rng.split(100 + static_cast<std::uint64_t>(k));
        DomainSpec spec;
        spec.rotation = random_rotation(cfg.input_dim, cfg.rotation_strength, dom_rng);
        spec.shift.resize(cfg.input_dim);
        for (double& s : spec.shift) s = cfg.shift_scale * dom_rng.next_gaussian();
        spec.noise_scale = cfg.noise_scale;
        specs.push_back(std::move(spec));
    }
    return specs;
}

namespace {

std::vector<int> balanced_class_counts(int total, int classes) {
    std::vector<int> counts(classes, total / classes);
    for (int c = 0; c < total % classes; ++c) counts[c] += 1;
    return counts;
}

}  // namespace

std::vector<DomainData> make_synthetic_domains(const SyntheticConfig& cfg, SplitRng& rng) {
    if (cfg.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (cfg.samples_per_domain < cfg.num_classes)
        throw ConfigError("samples_per_domain must cover every class");
    if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0)
        throw ConfigError("train_fraction must be in (0,1)");

    SplitRng proto_rng = rng.split(1);
    Matrix protos(cfg.num_classes, cfg.input_dim);
    for (double& v : protos.v) v = cfg.prototype_scale * proto_rng.next_gaussian();

    std::vector<DomainSpec> specs = make_domain_specs(cfg, rng);

    std::vector<DomainData> domains;
    domains.reserve(cfg.num_domains);
    std::vector<int> counts = balanced_class_counts(cfg.samples_per_domain, cfg.num_classes);

    for (int k = 0; k < cfg.num_domains; ++k) {
        SplitRng sample_rng = rng.split(200 + static_cast<std::uint64_t>(k));
        const DomainSpec& spec = specs[k];
        std::string name = "domain" + std::to_string(k);

        LabeledDataset train, test;
        train.num_classes = test.num_classes = cfg.num_classes;
        train.domain = test.domain = name;
        std::vector<std::vector<double>> train_rows, test_rows;
        std::vector<int> train_labels, test_labels;

        for (int c = 0; c < cfg.num_classes; ++c) {
            int n_c = counts[c];
            int n_train = static_cast<int>(std::lround(cfg.train_fraction * n_c));
            n_train = std::clamp(n_train, 1, n_c - 1);
            for (int s = 0; s < n_c; ++s) {
                std::vector<double> x(cfg.input_dim);
                auto proto = protos.row(c);
                for (int d = 0; d < cfg.input_dim; ++d) {
                    double acc = spec.shift[d];
                    for (int e = 0; e < cfg.input_dim; ++e) acc += spec.rotation(d, e) * proto[e];
                    x[d] = acc + spec.noise_scale * sample_rng.next_gaussian();
                }
                if (s < n_train) {
                    train_rows.push_back(std::move(x));
                    train_labels.push_back(c);
                } else {
                    test_rows.push_back(std::move(x));
                    test_labels.push_back(c);
                }
            }
        }

        auto materialize = [&](LabeledDataset& ds, std::vector<std::vector<double>>& rows,
                               std::vector<int>& labels, std::uint64_t stream) {
            SplitRng shuffle_rng = sample_rng.split(stream);
            std::vector<size_t> order = shuffle_rng.permutation(rows.size());
            ds.features = Matrix(static_cast<int>(rows.size()), cfg.input_dim);
            ds.labels.resize(rows.size());
            for (size_t i = 0; i < order.size(); ++i) {
                auto dst = ds.features.row(static_cast<int>(i));
                std::copy(rows[order[i]].begin(), rows[order[i]].end(), dst.begin());
                ds.labels[i] = labels[order[i]];
            }
        };
        materialize(train, train_rows, train_labels, 1);
        materialize(test, test_rows, test_labels, 2);
        domains.push_back(DomainData{std::move(train), std::move(test)});
    }
    return domains;
}

namespace {

// Marsaglia-Tsang; the shape<1 case boosts and corrects with u^(1/shape).
double gamma_sample(SplitRng& rng, double shape) {
    if (shape <= 0.0) throw PreconditionError("gamma_sample: shape must be positive");
    if (shape < 1.0) {
        double u = rng.next_double();
        while (u <= 0.0) u = rng.next_double();
        return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.next_gaussian();
        double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        double v = t * t * t;
        double u = rng.next_double();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

int categorical(SplitRng& rng, const std::vector<double>& p) {
    double u = rng.next_double();
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

}  // namespace

std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& dataset, double alpha,
                                                int parts, SplitRng& rng) {
    if (alpha <= 0.0) throw PreconditionError("dirichlet_partition: alpha must be positive");
    if (parts < 1) throw PreconditionError("dirichlet_partition: parts must be >= 1");
    if (parts > dataset.size())
        throw PreconditionError("dirichlet_partition: more parts than samples");

    std::vector<std::vector<int>> by_class(dataset.num_classes);
    for (int i = 0; i < dataset.size(); ++i) {
        int c = dataset.labels[i];
        if (c < 0 || c >= dataset.num_classes) throw PreconditionError("label out of range");
        by_class[c].push_back(i);
    }

    std::vector<std::vector<int>> part_indices(parts);
    for (int c = 0; c < dataset.num_classes; ++c) {
        if (by_class[c].empty()) continue;
        SplitRng class_rng = rng.split(static_cast<std::uint64_t>(c));
        std::vector<double> p(parts);
        double total = 0.0;
        for (int k = 0; k < parts; ++k) {
            p[k] = gamma_sample(class_rng, alpha);
            total += p[k];
        }
        if (total <= 0.0) {
            std::fill(p.begin(), p.end(), 1.0 / parts);
        } else {
            for (double& v : p) v /= total;
        }
        for (int idx : by_class[c]) part_indices[categorical(class_rng, p)].push_back(idx);
    }

    // Repair: every part must hold at least one sample.
    for (int k = 0; k < parts; ++k) {
        if (!part_indices[k].empty()) continue;
        int donor = 0;
        for (int m = 1; m < parts; ++m)
            if (part_indices[m].size() > part_indices[donor].size()) donor = m;
        if (part_indices[donor].size() < 2)
            throw InternalError("dirichlet_partition: cannot repair empty part");
        part_indices[k].push_back(part_indices[donor].back());
        part_indices[donor].pop_back();
    }

    std::vector<LabeledDataset> out;
    out.reserve(parts);
    for (int k = 0; k < parts; ++k) {
        std::sort(part_indices[k].begin(), part_indices[k].end());
        out.push_back(dataset.subset(part_indices[k]));
    }
    return out;
}

FederationScenario build_federation_scenario(PartitionMode mode,
                                             const std::vector<int>& capacities,
                                             double dirichlet_alpha, int parts_per_domain,
                                             const std::vector<DomainData>& domains,
                                             SplitRng& rng) {
    if (domains.empty()) throw ConfigError("scenario needs at least one domain");
    FederationScenario scenario;
    scenario.mode = mode;
    scenario.num_classes = domains[0].train.num_classes;
    scenario.input_dim = domains[0].train.dim();
    for (const DomainData& d : domains) {
        scenario.domain_tests.push_back(d.test);
        scenario.domain_names.push_back(d.train.domain);
    }

    if (mode == PartitionMode::kFeatureSkew) {
        if (capacities.size() != domains.size())
            throw ConfigError("feature-skew: need one capacity per domain");
        for (size_t k = 0; k < domains.size(); ++k) {
            scenario.clients.push_back(
                ClientShard{capacities[k], static_cast<int>(k), domains[k].train});
        }
        return scenario;
    }

    if (parts_per_domain < 1) throw ConfigError("parts_per_domain must be >= 1");
    if (capacities.size() != domains.size() * static_cast<size_t>(parts_per_domain))
        throw ConfigError("feature-label-skew: need domains*parts capacities");
    for (size_t k = 0; k < domains.size(); ++k) {
        int cap = capacities[k * parts_per_domain];
        for (int p = 1; p < parts_per_domain; ++p) {
            if (capacities[k * parts_per_domain + p] != cap)
                throw ConfigError("feature-label-skew: clients of one domain must share capacity");
        }
        SplitRng part_rng = rng.split(300 + static_cast<std::uint64_t>(k));
        auto parts = dirichlet_partition(domains[k].train, dirichlet_alpha, parts_per_domain,
                                         part_rng);
        for (int p = 0; p < parts_per_domain; ++p) {
            scenario.clients.push_back(ClientShard{cap, static_cast<int>(k), std::move(parts[p])});
        }
    }
    return scenario;
}

void export_domains_csv(std::ostream& out, const std::vector<DomainData>& domains) {
    if (domains.empty()) throw PreconditionError("export_domains_csv: no domains");
    int dim = domains[0].train.dim();
    out << "domain,split,label";
    for (int d = 0; d < dim; ++d) out << ",f" << d;
    out << "\n";
    char buf[64];
    auto emit = [&](const LabeledDataset& ds, const char* split) {
        for (int i = 0; i < ds.size(); ++i) {
            out << ds.domain << ',' << split << ',' << ds.labels[i];
            auto row = ds.features.row(i);
            for (int d = 0; d < dim; ++d) {
                std::snprintf(buf, sizeof(buf), "%.17g", row[d]);
                out << ',' << buf;
            }
            out << "\n";
        }
    };
    for (const DomainData& d : domains) {
        if (d.train.dim() != dim || d.test.dim() != dim)
            throw ShapeError("export_domains_csv: inconsistent feature dims");
        emit(d.train, "train");
        emit(d.test, "test");
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

std::vector<DomainData> import_domains_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("import_domains_csv: empty input");
    auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "domain" || header[1] != "split" ||
        header[2] != "label")
        throw ConfigError("import_domains_csv: bad header");
    int dim = static_cast<int>(header.size()) - 3;

    struct Rows {
        std::vector<std::vector<double>> features;
        std::vector<int> labels;
    };
    std::map<std::string, std::array<Rows, 2>> grouped;  // [0]=train [1]=test
    std::vector<std::string> order;
    int max_label = -1;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) != dim + 3)
            throw ConfigError("import_domains_csv: wrong field count at line " +
                              std::to_string(lineno));
        const std::string& dom = fields[0];
        int split_idx;
        if (fields[1] == "train") split_idx = 0;
        else if (fields[1] == "test") split_idx = 1;
        else throw ConfigError("import_domains_csv: bad split at line " + std::to_string(lineno));
        if (grouped.find(dom) == grouped.end()) order.push_back(dom);
        Rows& rows = grouped[dom][split_idx];
        int label = std::stoi(fields[2]);
        if (label < 0) throw ConfigError("import_domains_csv: negative label");
        max_label = std::max(max_label, label);
        std::vector<double> x(dim);
        for (int d = 0; d < dim; ++d) x[d] = std::stod(fields[3 + d]);
        rows.features.push_back(std::move(x));
        rows.labels.push_back(label);
    }
    if (order.empty()) throw ConfigError("import_domains_csv: no data rows");

    std::vector<DomainData> out;
    for (const std::string& dom : order) {
        DomainData dd;
        for (int s = 0; s < 2; ++s) {
            Rows& rows = grouped[dom][s];
            LabeledDataset ds;
            ds.domain = dom;
            ds.num_classes = max_label + 1;
            ds.features = Matrix(static_cast<int>(rows.features.size()), dim);
            ds.labels = rows.labels;
            for (size_t i = 0; i < rows.features.size(); ++i) {
                auto dst = ds.features.row(static_cast<int>(i));
                std::copy(rows.features[i].begin(), rows.features[i].end(), dst.begin());
            }
            (s == 0 ? dd.train : dd.test) = std::move(ds);
        }
        out.push_back(std::move(dd));
    }
    return out;
}

std::vector<double> label_distribution(const LabeledDataset& d) {
    if (d.size() == 0) throw PreconditionError("label_distribution: empty dataset");
    std::vector<double> p(d.num_classes, 0.0);
    for (int label : d.labels) p[label] += 1.0;
    for (double& v : p) v /= d.size();
    return p;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ShapeError("total_variation: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

}  // namespace fedra::data
