// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gmu {

/// Mixes a master seed with a stream index (SplitMix64 finalizer). Used to
/// derive independent per-trial / per-experiment streams so results do not
/// depend on execution order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Seeded generator with portable transforms. The engine is
/// std::mt19937_64 (sequence fixed by the standard); the uniform, normal and
/// integer transforms are written out here because the std distributions are
/// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Log-uniform in [lo, hi], lo > 0.
    double log_uniform(double lo, double hi);
    /// Standard normal (Box-Muller, no cached second variate).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    bool bernoulli(double p) { return uniform() < p; }
    /// Uniform integer in [0, n), n > 0, unbiased by rejection.
    std::size_t uniform_index(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace gmu
