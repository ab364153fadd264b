#pragma once

// Dense pure-state simulator restricted to the operations that feature-map
// circuits need: a Hadamard layer, Pauli-product rotations exp(+i θ P),
// overlaps, single-qubit reduced density matrices and shot sampling.
//
// Basis convention: qubit 0 is the least-significant bit of the basis index.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/rng.hpp"

namespace qmkl {

using complex = std::complex<double>;

inline constexpr int max_qubits = 24;

enum class PauliAxis : std::uint8_t { X, Y, Z };

inline char to_char(PauliAxis a) {
    switch (a) {
    case PauliAxis::X: return 'X';
    case PauliAxis::Y: return 'Y';
    case PauliAxis::Z: return 'Z';
    }
    return '?';
}

/// One summand of the feature-map exponent: angle · ⊗_k P_{axes[k]} on targets[k].
struct PauliTerm {
    std::vector<int> targets;
    std::vector<PauliAxis> axes;
    double angle = 0.0;

    /// Throws usage_error unless the term is well formed for n_qubits.
    void validate(int n_qubits) const {
        if (targets.empty()) throw usage_error("PauliTerm: no targets");
        if (targets.size() != axes.size())
            throw usage_error("PauliTerm: axes and targets differ in length");
        std::uint64_t seen = 0;
        for (int t : targets) {
            if (t < 0 || t >= n_qubits)
                throw usage_error("PauliTerm: target " + std::to_string(t) + " out of range");
            const std::uint64_t bit = std::uint64_t{1} << t;
            if (seen & bit) throw usage_error("PauliTerm: repeated target");
            seen |= bit;
        }
    }

    std::string label() const {
        std::string s;
        for (std::size_t k = 0; k < axes.size(); ++k) {
            s += to_char(axes[k]);
            s += std::to_string(targets[k]);
        }
        return s;
    }
};

/// 2x2 complex matrix, row-major.
using Mat2 = std::array<std::array<complex, 2>, 2>;

struct BlochVector {
    double x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
};

class StateVector {
public:
    /// |0...0> on n_qubits qubits.
    explicit StateVector(int n_qubits) : n_(n_qubits) {
        if (n_qubits < 1 || n_qubits > max_qubits)
            throw configuration_error("StateVector: n_qubits must lie in [1, " +
                                      std::to_string(max_qubits) + "], got " +
                                      std::to_string(n_qubits));
        amps_.assign(std::size_t{1} << n_qubits, complex{0.0, 0.0});
        amps_[0] = 1.0;
    }

    /// Takes ownership of raw amplitudes; the length must be a power of two.
    static StateVector from_amplitudes(std::vector<complex> amps) {
        int n = 0;
        while ((std::size_t{1} << n) < amps.size()) ++n;
        if ((std::size_t{1} << n) != amps.size() || n < 1)
            throw usage_error("StateVector: amplitude count must be 2^n with n >= 1");
        StateVector s(n);
        s.amps_ = std::move(amps);
        return s;
    }

    int n_qubits() const noexcept { return n_; }
    std::size_t dimension() const noexcept { return amps_.size(); }
    std::span<const complex> amplitudes() const noexcept { return amps_; }
    complex operator[](std::size_t i) const noexcept { return amps_[i]; }

    double norm() const {
        double s = 0.0;
        for (const auto& a : amps_) s += std::norm(a);
        return std::sqrt(s);
    }

    /// H on every qubit.
    StateVector& apply_hadamard_all() {
        const double r = std::numbers::sqrt2 / 2.0;
        const std::size_t dim = amps_.size();
        for (int q = 0; q < n_; ++q) {
            const std::size_t step = std::size_t{1} << q;
            for (std::size_t base = 0; base < dim; base += 2 * step) {
                for (std::size_t i = base; i < base + step; ++i) {
                    const complex a0 = amps_[i];
                    const complex a1 = amps_[i + step];
                    amps_[i] = r * (a0 + a1);
                    amps_[i + step] = r * (a0 - a1);
                }
            }
        }
        return *this;
    }

    /// exp(+i · angle · P) with P the Pauli product of `term`.
    ///
    /// P maps |b> to phase(b)|b xor xmask>, where xmask marks X/Y targets and
    /// phase(b) = i^{#Y} (-1)^{popcount(b & (ymask|zmask))}. Because P^2 = I,
    /// exp(iθP) = cos θ I + i sin θ P.
    StateVector& apply_pauli_rotation(const PauliTerm& term) {
        term.validate(n_);
        std::uint64_t xmask = 0, ymask = 0, zmask = 0;
        for (std::size_t k = 0; k < term.targets.size(); ++k) {
            const std::uint64_t bit = std::uint64_t{1} << term.targets[k];
            switch (term.axes[k]) {
            case PauliAxis::X: xmask |= bit; break;
            case PauliAxis::Y: ymask |= bit; break;
            case PauliAxis::Z: zmask |= bit; break;
            }
        }
        const double c = std::cos(term.angle);
        const double s = std::sin(term.angle);
        const std::size_t dim = amps_.size();

        if (xmask == 0 && ymask == 0) {
            // Diagonal: eigenvalue ±1 picks e^{±iθ}.
            const complex plus{c, s};
            const complex minus{c, -s};
            for (std::size_t b = 0; b < dim; ++b)
                amps_[b] *= (std::popcount(b & zmask) & 1) ? minus : plus;
            return *this;
        }

        const std::uint64_t flip = xmask | ymask;
        const std::uint64_t sign_mask = ymask | zmask;
        complex y_phase{1.0, 0.0};
        for (int k = 0; k < std::popcount(ymask); ++k) y_phase *= complex{0.0, 1.0};
        const complex i_sin{0.0, s};

        for (std::size_t b = 0; b < dim; ++b) {
            const std::size_t partner = b ^ flip;
            if (partner < b) continue;
            // (P a)[b] = phase(partner) a[partner] and vice versa.
            const complex ph_partner =
                (std::popcount(partner & sign_mask) & 1) ? -y_phase : y_phase;
            const complex ph_b = (std::popcount(b & sign_mask) & 1) ? -y_phase : y_phase;
            const complex ab = amps_[b];
            const complex ap = amps_[partner];
            amps_[b] = c * ab + i_sin * ph_partner * ap;
            amps_[partner] = c * ap + i_sin * ph_b * ab;
        }
        return *this;
    }

private:
    int n_;
    std::vector<complex> amps_;
};

inline StateVector zero_state(int n_qubits) { return StateVector(n_qubits); }

inline StateVector apply_hadamard_all(StateVector s) {
    s.apply_hadamard_all();
    return s;
}

inline StateVector apply_pauli_rotation(StateVector s, const PauliTerm& term) {
    s.apply_pauli_rotation(term);
    return s;
}

/// <s1|s2>.
inline complex overlap(const StateVector& s1, const StateVector& s2) {
    if (s1.n_qubits() != s2.n_qubits()) throw usage_error("overlap: qubit counts differ");
    auto a = s1.amplitudes();
    auto b = s2.amplitudes();
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        // conj(a) * b
        re += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
        im += a[i].real() * b[i].imag() - a[i].imag() * b[i].real();
    }
    return {re, im};
}

/// Tr_{j != qubit} |s><s|.
inline Mat2 reduced_density_matrix(const StateVector& s, int qubit) {
    if (qubit < 0 || qubit >= s.n_qubits())
        throw usage_error("reduced_density_matrix: qubit " + std::to_string(qubit) +
                          " out of range");
    const std::size_t bit = std::size_t{1} << qubit;
    auto a = s.amplitudes();
    double p0 = 0.0, p1 = 0.0;
    complex c01{0.0, 0.0};
    for (std::size_t b = 0; b < a.size(); ++b) {
        if (b & bit) continue;
        const complex a0 = a[b];
        const complex a1 = a[b | bit];
        p0 += std::norm(a0);
        p1 += std::norm(a1);
        c01 += a0 * std::conj(a1);
    }
    return Mat2{{{complex{p0, 0.0}, c01}, {std::conj(c01), complex{p1, 0.0}}}};
}

/// r_a = Tr[ρ σ_a] for ρ = ½(I + r·σ).
inline BlochVector bloch_vector(const Mat2& rdm) {
    return {2.0 * rdm[0][1].real(), -2.0 * rdm[0][1].imag(),
            (rdm[0][0] - rdm[1][1]).real()};
}

/// k/shots with k ~ Binomial(shots, |<0|s>|^2).
inline double sample_zero_probability(const StateVector& s, std::uint64_t shots,
                                      std::uint64_t seed) {
    if (shots == 0) throw usage_error("sample_zero_probability: shots must be >= 1");
    const double p = std::min(1.0, std::norm(s[0]));
    Xoshiro256 rng(seed);
    return static_cast<double>(binomial(shots, p, rng)) / static_cast<double>(shots);
}

} // namespace qmkl
