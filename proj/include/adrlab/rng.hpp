#pragma once

#include <cstdint>
#include <random>

namespace adrlab {

/// Deterministic, splittable random stream.
///
/// The engine is `std::mt19937_64`, whose output sequence is fixed by the
/// standard. Distributions are implemented here rather than with
/// `<random>`'s distribution classes, whose algorithms are left to the
/// library vendor, so streams are bit-reproducible across toolchains.
///
/// `split(key)` derives a child stream from the seed and the key only; it
/// does not depend on how much of the parent has been consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    Rng split(std::uint64_t key) const;

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n), rejection-sampled so it is unbiased.
    std::uint64_t uniform_index(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

/// SplitMix64 finalizer; used to derive child seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace adrlab
