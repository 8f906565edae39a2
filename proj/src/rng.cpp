#include "scdd/rng.hpp"

#include <cmath>
#include <numeric>

namespace scdd {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
    std::uint64_t x = master ^ fnv1a64(name);
    return splitmix64(x);
}

Rng::Rng(std::uint64_t seed) : my_seed(seed) {
    std::uint64_t x = seed;
    for (auto& s : my_state) {
        s = splitmix64(x);
    }
}

Rng Rng::substream(std::uint64_t master, std::string_view name) {
    return Rng(derive_seed(master, name));
}

Rng Rng::fork(std::string_view name) const {
    return Rng(derive_seed(my_seed, name));
}

std::uint64_t Rng::next_u64() {
    auto& s = my_state;
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    // Lemire's nearly-divisionless rejection.
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            m = static_cast<__uint128_t>(next_u64()) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() {
    if (my_has_spare) {
        my_has_spare = false;
        return my_spare;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    my_spare = v * factor;
    my_has_spare = true;
    return u * factor;
}

std::uint64_t Rng::poisson(double rate) {
    if (!(rate > 0)) {
        return 0;
    }

    if (rate < 12) {
        double p = std::exp(-rate);
        double cdf = p;
        const double u = uniform();
        std::uint64_t k = 0;
        while (u > cdf) {
            ++k;
            p *= rate / static_cast<double>(k);
            cdf += p;
            if (p < 1e-300) {
                break;
            }
        }
        return k;
    }

    const double slam = std::sqrt(rate);
    const double loglam = std::log(rate);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2);

    while (true) {
        const double U = uniform() - 0.5;
        const double V = uniform();
        const double us = 0.5 - std::fabs(U);
        const double k = std::floor((2 * a / us + b) * U + rate + 0.43);
        if (us >= 0.07 && V <= vr) {
            return static_cast<std::uint64_t>(k);
        }
        if (k < 0 || (us < 0.013 && V > us)) {
            continue;
        }
        if (std::log(V) + std::log(invalpha) - std::log(a / (us * us) + b) <= -rate + k * loglam - std::lgamma(k + 1)) {
            return static_cast<std::uint64_t>(k);
        }
    }
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    const std::size_t take = std::min(n, k);
    for (std::size_t i = 0; i < take; ++i) {
        std::size_t j = i + uniform_index(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    return pool;
}

}
