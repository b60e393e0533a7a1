#include "fedra/rng.hpp"

#include <cmath>
#include <numbers>

#include "fedra/errors.hpp"

namespace fedra {

std::uint64_t mix_u64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

SplitRng::SplitRng(std::uint64_t seed) : seed_(seed), engine_(mix_u64(seed)) {}

SplitRng SplitRng::split(std::uint64_t stream_id) const {
    // Child seed depends only on (seed_, stream_id), never on draw position.
    return SplitRng(mix_u64(seed_ ^ mix_u64(stream_id + 0x632BE59BD9B4E019ull)));
}

std::uint64_t SplitRng::next_u64() {
    return engine_();
}

double SplitRng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t SplitRng::next_index(std::size_t n) {
    if (n == 0) throw PreconditionError("next_index: n must be positive");
    // Modulo over a 64-bit draw; bias is ~n/2^64, negligible for simulator n.
    return static_cast<std::size_t>(next_u64() % n);
}

double SplitRng::next_gaussian() {
    if (has_cached_gaussian_) {
        has_cached_gaussian_ = false;
        return cached_gaussian_;
    }
    // u1 in (0,1]; log(0) is unreachable.
    double u1 = 1.0 - next_double();
    double u2 = next_double();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    cached_gaussian_ = radius * std::sin(angle);
    has_cached_gaussian_ = true;
    return radius * std::cos(angle);
}

std::vector<std::size_t> SplitRng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
}

std::vector<std::size_t> SplitRng::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw PreconditionError("sample_without_replacement: k > n");
    // Partial Fisher-Yates: first k entries of a fresh permutation.
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + next_index(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace fedra
