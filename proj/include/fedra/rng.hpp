#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedra {

/// Seeded, splittable random generator.
///
/// All randomness in the simulator flows from one master seed. Independent
/// streams (per round, per client, per subsystem) are derived with split(),
/// so results do not depend on evaluation order or thread scheduling.
/// Conversions to doubles/indices/Gaussians are implemented here rather than
/// with std::*_distribution, which keeps sequences identical across standard
/// library implementations.
class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed);

    /// Derive an independent child stream. Children with different ids are
    /// decorrelated from each other and from this stream's own draws.
    SplitRng split(std::uint64_t stream_id) const;

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double next_double();

    /// Uniform integer in [0, n). n must be positive.
    std::size_t next_index(std::size_t n);

    /// Standard normal via Box-Muller (pairwise, second value cached).
    double next_gaussian();

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = next_index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    /// Random permutation of {0, ..., n-1}.
    std::vector<std::size_t> permutation(std::size_t n);

    /// k distinct values from {0, ..., n-1}, in random order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_cached_gaussian_ = false;
    double cached_gaussian_ = 0.0;
};

/// splitmix64 finalizer; used for seed derivation.
std::uint64_t mix_u64(std::uint64_t x);

}  // namespace fedra
