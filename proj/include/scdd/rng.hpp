#ifndef SCDD_RNG_HPP
#define SCDD_RNG_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

/**
 * @file rng.hpp
 * @brief Portable, seeded random number generation with named substreams.
 *
 * The generator is xoshiro256** (Blackman & Vigna), seeded through SplitMix64.
 * A substream is addressed by a master seed plus a name; the name is folded in with 64-bit FNV-1a,
 * so every consumer ("data", "ae", "distill.head", ...) draws from its own independent sequence.
 * All distributions are implemented here rather than taken from `<random>`,
 * whose distribution algorithms differ between standard library vendors.
 */

namespace scdd {

/**
 * 64-bit FNV-1a hash of a byte string.
 */
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/**
 * Seed for the substream `name` of `master`.
 */
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /**
     * Independent generator for the substream `name` of `master`.
     */
    static Rng substream(std::uint64_t master, std::string_view name);

    /**
     * Child stream derived from this generator's seed; does not advance this generator.
     */
    Rng fork(std::string_view name) const;

    std::uint64_t next_u64();

    /** Uniform double in [0, 1) with 53 random bits. */
    double uniform();

    /** Uniform integer in [0, n); `n` must be positive. */
    std::uint64_t uniform_index(std::uint64_t n);

    /** Standard normal deviate (Marsaglia polar method, one spare cached). */
    double normal();

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /**
     * Poisson deviate: sequential inversion below rate 12, transformed rejection (PTRS, Hörmann 1993) above.
     */
    std::uint64_t poisson(double rate);

    /**
     * `k` distinct indices from [0, n), in draw order (partial Fisher-Yates).
     */
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    template<typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(values[i - 1], values[j]);
        }
    }

    std::uint64_t seed() const { return my_seed; }

private:
    std::uint64_t my_seed;
    std::array<std::uint64_t, 4> my_state;
    bool my_has_spare = false;
    double my_spare = 0;
};

}

#endif
