#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace svll {

/// Deterministic random stream. Draws are produced from the raw engine
/// words with fixed arithmetic so sequences do not depend on the standard
/// library's distribution implementations.
class Rng {
   public:
    Rng() : eng_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(std::uint64_t seed) : eng_(mix(seed)) {}

    /// Independent substream keyed by (seed, a, b, c); order-insensitive use
    /// across workers stays reproducible.
    static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        std::uint64_t s = mix(seed);
        s = mix(s ^ (a + 0x9e3779b97f4a7c15ull));
        s = mix(s ^ (b + 0xbf58476d1ce4e5b9ull));
        s = mix(s ^ (c + 0x94d049bb133111ebull));
        return Rng(s);
    }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

    /// Standard normal via Box-Muller (no cached spare, so serialization is
    /// just the engine state).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
    }

    /// In-place Fisher-Yates.
    template <typename Seq>
    void shuffle(Seq& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw std::runtime_error("rng: bad serialized state");
    }

   private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::mt19937_64 eng_;
};

}  // namespace svll
