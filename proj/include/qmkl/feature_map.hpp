#pragma once

// Pauli-string feature maps.
//
// A map is written as layers separated by '-', e.g. "Z-ZZ" or "Y-XZ". A
// one-character layer rotates every qubit individually; a two-character layer
// rotates qubit pairs drawn from the entanglement pattern, with the first axis
// on the lower-index qubit. One repetition is H^{⊗n} followed by every term in
// build order; `reps` repeats that whole block.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/statevector.hpp"

namespace qmkl {

enum class Entanglement { linear, pairwise, full };
enum class DataMap { product, pi_minus_product };

inline std::string to_string(Entanglement e) {
    switch (e) {
    case Entanglement::linear: return "linear";
    case Entanglement::pairwise: return "pairwise";
    case Entanglement::full: return "full";
    }
    return "?";
}

inline std::string to_string(DataMap d) {
    return d == DataMap::product ? "product" : "pi_minus_product";
}

inline Entanglement parse_entanglement(std::string_view s) {
    if (s == "linear") return Entanglement::linear;
    if (s == "pairwise") return Entanglement::pairwise;
    if (s == "full") return Entanglement::full;
    throw configuration_error("unknown entanglement '" + std::string(s) + "'");
}

inline DataMap parse_data_map(std::string_view s) {
    if (s == "product") return DataMap::product;
    if (s == "pi_minus_product") return DataMap::pi_minus_product;
    throw configuration_error("unknown data_map '" + std::string(s) + "'");
}

using PauliString = std::vector<PauliAxis>;

struct FeatureMapSpec {
    std::vector<PauliString> layers;
    double alpha = 1.0;
    int reps = 1;
    Entanglement entanglement = Entanglement::linear;
    DataMap data_map = DataMap::product;

    /// Layers joined with '-', e.g. "Y-XZ".
    std::string paulis() const {
        std::string out;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (l) out += '-';
            for (auto a : layers[l]) out += to_char(a);
        }
        return out;
    }

    /// Canonical text used for hashing and file headers.
    std::string canonical() const {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", alpha);
        return paulis() + "|alpha=" + buf + "|reps=" + std::to_string(reps) +
               "|ent=" + to_string(entanglement) + "|map=" + to_string(data_map);
    }

    bool has_pair_layer() const {
        for (const auto& l : layers)
            if (l.size() == 2) return true;
        return false;
    }
};

inline PauliAxis parse_axis(char c, std::string_view text) {
    switch (c) {
    case 'X': return PauliAxis::X;
    case 'Y': return PauliAxis::Y;
    case 'Z': return PauliAxis::Z;
    default:
        throw parse_error("feature map '" + std::string(text) + "': invalid axis '" +
                          std::string(1, c) + "'");
    }
}

inline FeatureMapSpec parse_spec(std::string_view text, double alpha, int reps,
                                 Entanglement entanglement = Entanglement::linear,
                                 DataMap data_map = DataMap::product) {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw configuration_error("feature map: alpha must be positive");
    if (reps < 1) throw configuration_error("feature map: reps must be >= 1");

    FeatureMapSpec spec;
    spec.alpha = alpha;
    spec.reps = reps;
    spec.entanglement = entanglement;
    spec.data_map = data_map;

    std::size_t start = 0;
    for (;;) {
        const std::size_t dash = text.find('-', start);
        const std::string_view token =
            text.substr(start, dash == std::string_view::npos ? std::string_view::npos
                                                                : dash - start);
        if (token.empty())
            throw parse_error("feature map '" + std::string(text) + "': empty layer");
        if (token.size() > 2)
            throw parse_error("feature map '" + std::string(text) + "': layer '" +
                              std::string(token) + "' longer than two axes");
        PauliString layer;
        for (char c : token) layer.push_back(parse_axis(c, text));
        spec.layers.push_back(std::move(layer));
        if (dash == std::string_view::npos) break;
        start = dash + 1;
    }
    return spec;
}

/// α·φ_S(x) for a single qubit ({i}) or a pair ({i, j}).
inline double angle_for(const FeatureMapSpec& spec, const PauliString& layer,
                        std::span<const int> subset, std::span<const double> x) {
    if (subset.size() != layer.size())
        throw usage_error("angle_for: subset size does not match layer arity");
    for (int q : subset)
        if (q < 0 || static_cast<std::size_t>(q) >= x.size())
            throw usage_error("angle_for: qubit index outside feature vector");
    if (subset.size() == 1) return spec.alpha * x[subset[0]];
    const double xi = x[subset[0]];
    const double xj = x[subset[1]];
    if (spec.data_map == DataMap::product) return spec.alpha * xi * xj;
    return spec.alpha * (std::numbers::pi - xi) * (std::numbers::pi - xj);
}

/// Qubit pairs for two-qubit layers.
inline std::vector<std::pair<int, int>> entangling_pairs(Entanglement e, int n) {
    std::vector<std::pair<int, int>> pairs;
    switch (e) {
    case Entanglement::linear:
        for (int i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
        break;
    case Entanglement::pairwise:
        for (int i = 0; i + 1 < n; i += 2) pairs.emplace_back(i, i + 1);
        for (int i = 1; i + 1 < n; i += 2) pairs.emplace_back(i, i + 1);
        break;
    case Entanglement::full:
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        break;
    }
    return pairs;
}

/// Number of terms build_terms produces for n qubits (independent of reps).
inline std::size_t term_count(const FeatureMapSpec& spec, int n) {
    std::size_t count = 0;
    const std::size_t npairs = entangling_pairs(spec.entanglement, n).size();
    for (const auto& l : spec.layers) count += l.size() == 1 ? std::size_t(n) : npairs;
    return count;
}

inline std::vector<PauliTerm> build_terms(const FeatureMapSpec& spec, std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    if (n < 1) throw usage_error("build_terms: empty feature vector");
    for (double v : x)
        if (!std::isfinite(v)) throw usage_error("build_terms: non-finite feature value");
    if (spec.has_pair_layer() && n < 2)
        throw configuration_error("build_terms: two-qubit layer needs at least 2 qubits");

    std::vector<PauliTerm> terms;
    terms.reserve(term_count(spec, n));
    const auto pairs = entangling_pairs(spec.entanglement, n);
    for (const auto& layer : spec.layers) {
        if (layer.size() == 1) {
            for (int q = 0; q < n; ++q) {
                const int subset[1] = {q};
                terms.push_back({{q}, {layer[0]}, angle_for(spec, layer, subset, x)});
            }
        } else {
            for (auto [i, j] : pairs) {
                const int subset[2] = {i, j};
                terms.push_back({{i, j}, {layer[0], layer[1]}, angle_for(spec, layer, subset, x)});
            }
        }
    }
    return terms;
}

/// [U_Φ(x) H^{⊗n}]^reps |0...0>.
inline StateVector encode(const FeatureMapSpec& spec, std::span<const double> x) {
    const auto terms = build_terms(spec, x);
    StateVector s(static_cast<int>(x.size()));
    for (int r = 0; r < spec.reps; ++r) {
        s.apply_hadamard_all();
        for (const auto& t : terms) s.apply_pauli_rotation(t);
    }
    return s;
}

/// The quantum kernel parameter zoo used for MKL (linear entanglement,
/// product data map). Every listed (map, α) pair is a separate kernel, so the
/// repeated "Y-YX" α = 1.6 entry appears twice.
inline std::vector<FeatureMapSpec> default_kernel_set() {
    struct Row {
        const char* paulis;
        std::vector<double> alphas;
        int reps;
    };
    const std::vector<Row> rows = {
        {"Z", {1.4, 2.0, 14.0, 20.0}, 1},  {"XZ", {0.4, 4.0}, 2},
        {"X-ZY", {0.6, 6.0}, 2},           {"Y-XX", {0.6, 6.0}, 2},
        {"Y-XY", {1.4, 10.0}, 1},          {"Y-XZ", {0.8, 8.0}, 2},
        {"Y-YX", {0.2, 2.0, 1.6, 1.6}, 1}, {"Y-YZ", {1.2, 12.0}, 1},
        {"Y-ZX", {2.0, 20.0}, 1},          {"Z-XX", {1.0, 10.0}, 1},
        {"Z-ZZ", {2.0, 20.0}, 1},
    };
    std::vector<FeatureMapSpec> out;
    for (const auto& r : rows)
        for (double a : r.alphas) out.push_back(parse_spec(r.paulis, a, r.reps));
    return out;
}

} // namespace qmkl
