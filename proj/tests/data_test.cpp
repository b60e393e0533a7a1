#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "fedra/data.hpp"
#include "fedra/errors.hpp"

using namespace fedra;
using namespace fedra::data;

namespace {

SyntheticConfig small_config() {
    SyntheticConfig cfg;
    cfg.num_domains = 3;
    cfg.num_classes = 4;
    cfg.input_dim = 8;
    cfg.samples_per_domain = 80;
    return cfg;
}

}  // namespace

TEST_CASE("random_rotation is orthogonal") {
    SplitRng rng(1);
    for (double strength : {0.0, 0.3, 1.0, 3.0}) {
        Matrix q = random_rotation(12, strength, rng);
        CHECK(orthogonality_defect(q) <= 1e-12);
        // orthogonal transforms preserve norms
        std::vector<double> x(12);
        for (auto& v : x) v = rng.next_gaussian();
        auto y = matvec(q, x);
        CHECK(std::sqrt(norm2(std::span<const double>(y))) ==
              doctest::Approx(std::sqrt(norm2(std::span<const double>(x)))).epsilon(1e-12));
    }
    // zero strength keeps the identity
    Matrix id = random_rotation(5, 0.0, rng);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("orthogonality_defect oracle") {
    Matrix q(2, 2);
    q(0, 0) = 1.0;
    q(1, 1) = 2.0;  // Q^T Q = diag(1, 4), defect = 3
    CHECK(orthogonality_defect(q) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("synthetic domains: shapes, balance, stratified split") {
    SyntheticConfig cfg = small_config();
    SplitRng rng(5);
    auto domains = make_synthetic_domains(cfg, rng);
    REQUIRE(domains.size() == 3);
    for (const auto& d : domains) {
        CHECK(d.train.dim() == 8);
        CHECK(d.test.dim() == 8);
        CHECK(d.train.num_classes == 4);
        CHECK(d.train.size() + d.test.size() == 80);
        // 80 samples, 4 classes, 80/20 split: 16 train + 4 test per class
        std::vector<int> train_per_class(4, 0), test_per_class(4, 0);
        for (int l : d.train.labels) train_per_class[static_cast<std::size_t>(l)]++;
        for (int l : d.test.labels) test_per_class[static_cast<std::size_t>(l)]++;
        for (int c = 0; c < 4; ++c) {
            CHECK(train_per_class[c] == 16);
            CHECK(test_per_class[c] == 4);
        }
    }
    CHECK(domains[0].train.domain == "domain0");
    CHECK(domains[2].test.domain == "domain2");
}

TEST_CASE("domains share class structure but differ in features") {
    SyntheticConfig cfg = small_config();
    SplitRng rng(6);
    auto domains = make_synthetic_domains(cfg, rng);
    // same label histogram
    auto p0 = label_distribution(domains[0].train);
    auto p1 = label_distribution(domains[1].train);
    CHECK(total_variation(p0, p1) <= 1e-12);
    // different feature geometry: mean vectors differ
    std::vector<double> m0(8, 0.0), m1(8, 0.0);
    for (int i = 0; i < domains[0].train.size(); ++i)
        axpy(1.0 / domains[0].train.size(), domains[0].train.features.row(i), m0);
    for (int i = 0; i < domains[1].train.size(); ++i)
        axpy(1.0 / domains[1].train.size(), domains[1].train.features.row(i), m1);
    CHECK(max_abs_diff(std::span<const double>(m0), std::span<const double>(m1)) > 0.05);
}

TEST_CASE("same seed rebuilds identical domains") {
    SyntheticConfig cfg = small_config();
    SplitRng a(7), b(7);
    auto d1 = make_synthetic_domains(cfg, a);
    auto d2 = make_synthetic_domains(cfg, b);
    CHECK(d1[1].train.features.v == d2[1].train.features.v);
    CHECK(d1[1].train.labels == d2[1].train.labels);
}

TEST_CASE("dirichlet_partition is a disjoint cover") {
    SyntheticConfig cfg = small_config();
    SplitRng rng(8);
    auto domains = make_synthetic_domains(cfg, rng);
    const LabeledDataset& base = domains[0].train;

    SplitRng prng(9);
    auto parts = dirichlet_partition(base, 0.5, 5, prng);
    REQUIRE(parts.size() == 5);
    int total = 0;
    for (const auto& p : parts) {
        CHECK(p.size() >= 1);  // empty shards are repaired
        CHECK(p.num_classes == base.num_classes);
        total += p.size();
    }
    CHECK(total == base.size());

    // disjointness via exact feature-row multiset reconstruction
    std::multiset<std::vector<double>> seen;
    for (const auto& p : parts)
        for (int i = 0; i < p.size(); ++i) {
            auto r = p.features.row(i);
            seen.insert(std::vector<double>(r.begin(), r.end()));
        }
    std::multiset<std::vector<double>> expect;
    for (int i = 0; i < base.size(); ++i) {
        auto r = base.features.row(i);
        expect.insert(std::vector<double>(r.begin(), r.end()));
    }
    CHECK(seen == expect);
}

TEST_CASE("dirichlet skew grows as alpha shrinks") {
    SyntheticConfig cfg = small_config();
    cfg.samples_per_domain = 400;
    SplitRng rng(10);
    auto domains = make_synthetic_domains(cfg, rng);
    const LabeledDataset& base = domains[0].train;
    auto uniform = label_distribution(base);

    auto mean_tv = [&](double alpha) {
        double acc = 0.0;
        int n = 0;
        for (std::uint64_t s = 0; s < 5; ++s) {
            SplitRng prng(100 + s);
            for (const auto& p : dirichlet_partition(base, alpha, 4, prng)) {
                acc += total_variation(label_distribution(p), uniform);
                ++n;
            }
        }
        return acc / n;
    };
    double tv_tight = mean_tv(100.0);
    double tv_mid = mean_tv(1.0);
    double tv_skew = mean_tv(0.1);
    CHECK(tv_tight < tv_mid);
    CHECK(tv_mid < tv_skew);
    CHECK(tv_tight < 0.15);
    CHECK(tv_skew > 0.3);
}

TEST_CASE("feature-skew scenario: one client per domain") {
    SyntheticConfig cfg = small_config();
    SplitRng rng(11);
    auto domains = make_synthetic_domains(cfg, rng);
    SplitRng prng(12);
    FederationScenario sc = build_federation_scenario(PartitionMode::kFeatureSkew, {4, 3, 2},
                                                      0.5, 1, domains, prng);
    REQUIRE(sc.clients.size() == 3);
    CHECK(sc.clients[0].capacity == 4);
    CHECK(sc.clients[2].capacity == 2);
    CHECK(sc.clients[1].domain_index == 1);
    CHECK(sc.clients[1].train.features.v == domains[1].train.features.v);
    REQUIRE(sc.domain_tests.size() == 3);
    CHECK(sc.domain_names == std::vector<std::string>{"domain0", "domain1", "domain2"});
    CHECK(sc.input_dim == 8);
    CHECK(sc.num_classes == 4);
}

TEST_CASE("feature-label-skew scenario: dirichlet shards per domain") {
    SyntheticConfig cfg = small_config();
    SplitRng rng(13);
    auto domains = make_synthetic_domains(cfg, rng);
    SplitRng prng(14);
    std::vector<int> caps = {4, 4, 3, 3, 2, 2};  // 2 parts per domain
    FederationScenario sc = build_federation_scenario(PartitionMode::kFeatureLabelSkew, caps,
                                                      0.5, 2, domains, prng);
    REQUIRE(sc.clients.size() == 6);
    CHECK(sc.clients[0].domain_index == 0);
    CHECK(sc.clients[1].domain_index == 0);
    CHECK(sc.clients[4].domain_index == 2);
    int total = 0;
    for (const auto& c : sc.clients) total += c.train.size();
    int expect = 0;
    for (const auto& d : domains) expect += d.train.size();
    CHECK(total == expect);

    // clients within one domain must share a capacity
    std::vector<int> bad_caps = {4, 3, 3, 3, 2, 2};
    SplitRng prng2(15);
    CHECK_THROWS_AS((void)build_federation_scenario(PartitionMode::kFeatureLabelSkew, bad_caps,
                                                    0.5, 2, domains, prng2),
                    ConfigError);
}

TEST_CASE("scenario capacity count must match") {
    SyntheticConfig cfg = small_config();
    SplitRng rng(16);
    auto domains = make_synthetic_domains(cfg, rng);
    SplitRng prng(17);
    CHECK_THROWS_AS((void)build_federation_scenario(PartitionMode::kFeatureSkew, {4, 3}, 0.5, 1,
                                                    domains, prng),
                    ConfigError);
}

TEST_CASE("csv roundtrip is exact") {
    SyntheticConfig cfg = small_config();
    cfg.num_domains = 2;
    cfg.samples_per_domain = 40;
    SplitRng rng(18);
    auto domains = make_synthetic_domains(cfg, rng);

    std::ostringstream out;
    export_domains_csv(out, domains);
    std::istringstream in(out.str());
    auto back = import_domains_csv(in);

    REQUIRE(back.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(back[k].train.features.v == domains[k].train.features.v);
        CHECK(back[k].train.labels == domains[k].train.labels);
        CHECK(back[k].test.features.v == domains[k].test.features.v);
        CHECK(back[k].test.labels == domains[k].test.labels);
        CHECK(back[k].train.domain == domains[k].train.domain);
    }

    std::istringstream junk("domain,split,label\nx,train,0\n");
    CHECK_THROWS(import_domains_csv(junk));
}

TEST_CASE("total_variation and label_distribution oracles") {
    CHECK(total_variation({0.5, 0.5}, {1.0, 0.0}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(total_variation({0.25, 0.75}, {0.25, 0.75}) == 0.0);

    LabeledDataset d;
    d.features = Matrix(4, 1);
    d.labels = {0, 0, 1, 2};
    d.num_classes = 3;
    auto p = label_distribution(d);
    REQUIRE(p.size() == 3);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.25);
    CHECK(p[2] == 0.25);
}

TEST_CASE("dataset subset and append") {
    LabeledDataset d;
    d.features = Matrix(3, 2);
    d.features(0, 0) = 1;
    d.features(1, 0) = 2;
    d.features(2, 0) = 3;
    d.labels = {0, 1, 0};
    d.num_classes = 2;
    auto s = d.subset({2, 0});
    REQUIRE(s.size() == 2);
    CHECK(s.features(0, 0) == 3.0);
    CHECK(s.features(1, 0) == 1.0);
    CHECK(s.labels == std::vector<int>{0, 0});

    LabeledDataset e = s;
    e.append(d);
    CHECK(e.size() == 5);
    CHECK(e.features(4, 0) == 3.0);
    CHECK(e.labels == std::vector<int>{0, 0, 0, 1, 0});
}
