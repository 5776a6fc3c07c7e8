#include "anima/rng.hpp"

#include <cmath>
#include <numbers>

namespace anima::inline ANIMA_NS {

Rng Rng::split(std::string_view tag) const {
    // FNV-1a over the tag, folded into the key.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return split(h);
}

Rng Rng::split(std::uint64_t tag) const {
    return Rng(mix(key_ ^ mix(tag + 0x632be59bd9b4e019ULL)), 0);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::normal() {
    // Box-Muller; one value per call keeps draws counter-addressable.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<Scalar> Rng::normal_vector(std::size_t n, double stddev) {
    std::vector<Scalar> out(n);
    for (auto& v : out) v = static_cast<Scalar>(normal() * stddev);
    return out;
}

}  // namespace anima
