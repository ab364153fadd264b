#pragma once

// Portable seeded randomness.
//
// Every random quantity in the library is drawn from xoshiro256** (Blackman &
// Vigna, 2018) seeded through SplitMix64. Both algorithms are fully specified
// by their integer arithmetic, so a given seed yields the same stream on every
// platform and compiler. The standard <random> distributions are avoided for
// the same reason: their algorithms are implementation-defined.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>

#include "qmkl/errors.hpp"

namespace qmkl {

/// SplitMix64 finalizer. Used to expand seeds and derive child seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Deterministically derives a child seed from a master seed and a key path,
/// e.g. derive_seed(master, {row, col}). Order of keys matters.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t state = master;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t k : keys) {
        state = out ^ (k + 0x632BE59BD9B4E019ULL);
        out = splitmix64(state);
    }
    return out;
}

/// xoshiro256** 1.0.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit constexpr Xoshiro256(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    constexpr result_type operator()() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound) by Lemire's multiply-shift with rejection.
    std::uint64_t bounded(std::uint64_t bound) {
        if (bound == 0) throw usage_error("bounded: bound must be positive");
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> s_{};
};

/// Fisher-Yates shuffle driven by Xoshiro256::bounded.
template <class T>
void shuffle(std::span<T> items, Xoshiro256& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(items[i - 1], items[j]);
    }
}

namespace detail {

// log(k!) - [(k + 1/2) log(k + 1) - (k + 1) + log(sqrt(2 pi))]
inline double stirling_tail(std::uint64_t k) {
    static constexpr std::array<double, 10> table{
        0.08106146679532726, 0.04134069595540929, 0.02767792568499834,
        0.02079067210376509, 0.01664469118982119, 0.01387612882307075,
        0.01189670994589177, 0.01041126526197209, 0.009255462182712733,
        0.008330563433362871};
    if (k < table.size()) return table[k];
    const double kp1 = static_cast<double>(k) + 1.0;
    const double kp1sq = kp1 * kp1;
    return (1.0 / 12 - (1.0 / 360 - 1.0 / 1260 / kp1sq) / kp1sq) / kp1;
}

// Sequential inversion; expected cost O(n p). Requires p <= 1/2.
inline std::uint64_t binomial_inversion(std::uint64_t n, double p, Xoshiro256& rng) {
    const double q = 1.0 - p;
    const double s = p / q;
    const double a = static_cast<double>(n + 1) * s;
    for (;;) {
        double r = std::pow(q, static_cast<double>(n));
        double u = rng.uniform();
        std::uint64_t x = 0;
        bool accepted = true;
        while (u > r) {
            u -= r;
            ++x;
            if (x > n) {
                accepted = false;  // rounding ran past the support; redraw
                break;
            }
            r *= (a / static_cast<double>(x) - s);
        }
        if (accepted) return x;
    }
}

// Hormann's BTRD transformed rejection. Requires p <= 1/2 and n p >= 10.
inline std::uint64_t binomial_btrd(std::uint64_t n, double p, Xoshiro256& rng) {
    const double nd = static_cast<double>(n);
    const double q = 1.0 - p;
    const double spq = std::sqrt(nd * p * q);
    const double b = 1.15 + 2.53 * spq;
    const double a = -0.0873 + 0.0248 * b + 0.01 * p;
    const double c = nd * p + 0.5;
    const double alpha = (2.83 + 5.1 / b) * spq;
    const double vr = 0.92 - 4.2 / b;
    const double urvr = 0.86 * vr;
    const double m = std::floor((nd + 1) * p);
    const double r = p / q;
    const double nr = (nd + 1) * r;
    const double npq = nd * p * q;

    for (;;) {
        double v = rng.uniform();
        double u;
        if (v <= urvr) {
            u = v / vr - 0.43;
            return static_cast<std::uint64_t>(
                std::floor((2 * a / (0.5 - std::abs(u)) + b) * u + c));
        }
        if (v >= vr) {
            u = rng.uniform() - 0.5;
        } else {
            u = v / vr - 0.93;
            u = std::copysign(0.5, u) - u;
            v = rng.uniform() * vr;
        }
        const double us = 0.5 - std::abs(u);
        const double kd = std::floor((2 * a / us + b) * u + c);
        if (kd < 0 || kd > nd) continue;
        v = v * alpha / (a / (us * us) + b);
        const double km = std::abs(kd - m);
        if (km <= 15) {
            double f = 1.0;
            if (m < kd) {
                for (double i = m + 1; i <= kd; ++i) f *= (nr / i - r);
            } else if (m > kd) {
                for (double i = kd + 1; i <= m; ++i) v *= (nr / i - r);
            }
            if (v <= f) return static_cast<std::uint64_t>(kd);
            continue;
        }
        v = std::log(v);
        const double rho = (km / npq) * (((km / 3.0 + 0.625) * km + 1.0 / 6.0) / npq + 0.5);
        const double t = -km * km / (2 * npq);
        if (v < t - rho) return static_cast<std::uint64_t>(kd);
        if (v > t + rho) continue;
        const double nm = nd - m + 1;
        const double h = (m + 0.5) * std::log((m + 1) / (r * nm)) +
                         stirling_tail(static_cast<std::uint64_t>(m)) +
                         stirling_tail(static_cast<std::uint64_t>(nd - m));
        const double nk = nd - kd + 1;
        if (v <= h + (nd + 1) * std::log(nm / nk) + (kd + 0.5) * std::log(nk * r / (kd + 1)) -
                     stirling_tail(static_cast<std::uint64_t>(kd)) -
                     stirling_tail(static_cast<std::uint64_t>(nd - kd))) {
            return static_cast<std::uint64_t>(kd);
        }
    }
}

} // namespace detail

/// Draws k ~ Binomial(n, p). Inversion for n·min(p,1-p) < 10, BTRD otherwise.
inline std::uint64_t binomial(std::uint64_t n, double p, Xoshiro256& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw usage_error("binomial: p must lie in [0, 1]");
    if (n == 0 || p == 0.0) return 0;
    if (p == 1.0) return n;
    const bool flip = p > 0.5;
    const double pp = flip ? 1.0 - p : p;
    const std::uint64_t k = static_cast<double>(n) * pp < 10.0
                                ? detail::binomial_inversion(n, pp, rng)
                                : detail::binomial_btrd(n, pp, rng);
    return flip ? n - k : k;
}

} // namespace qmkl
