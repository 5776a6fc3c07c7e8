#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace anima::inline ANIMA_NS {

/// Counter-based splittable generator. Every draw is a pure function of
/// (key, counter), so a stream can be split into independent child streams
/// by tag without touching the parent's sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    /// Child stream keyed by a tag. Does not advance this stream.
    Rng split(std::string_view tag) const;
    Rng split(std::uint64_t tag) const;

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    std::vector<Scalar> normal_vector(std::size_t n, double stddev = 1.0);

    std::uint64_t key() const { return key_; }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    Rng(std::uint64_t key, int) : key_(key) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace anima
