#pragma once

// Kernel-target alignment and the four kernel-weighting strategies:
//
//   AVE   uniform weights
//   SDP   max w'q  s.t.  w'Sw <= 1, w >= 0     (q_i = <K_i,K_y>, S_ij = <K_i,K_j>)
//   CENT  min_{v>=0} v'Mv - 2v'a on centered kernels, w = v/|v|
//   PROJ  greedy matching pursuit of the target over the kernel set
//
// Every strategy returns nonnegative weights summing to one; the optimizer's
// own scaling is kept in `raw`.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/kernels.hpp"
#include "qmkl/linalg.hpp"
#include "qmkl/matrix.hpp"

namespace qmkl {

enum class Strategy { AVE, SDP, CENT, PROJ };

inline std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::AVE: return "AVE";
    case Strategy::SDP: return "SDP";
    case Strategy::CENT: return "CENT";
    case Strategy::PROJ: return "PROJ";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view s) {
    if (s == "AVE") return Strategy::AVE;
    if (s == "SDP") return Strategy::SDP;
    if (s == "CENT") return Strategy::CENT;
    if (s == "PROJ") return Strategy::PROJ;
    throw configuration_error("unknown strategy '" + std::string(s) + "'");
}

struct WeightVector {
    std::vector<double> weights;  // >= 0, sums to 1
    std::vector<double> raw;      // optimizer scaling before normalization
    Strategy strategy = Strategy::AVE;
    std::vector<std::size_t> selected;  // PROJ only, in selection order
    double objective = 0.0;
    int iterations = 0;
    std::vector<double> objective_trace;  // per-iteration objective (SDP, CENT, PROJ)
};

/// (K_y)_ij = 1 if y_i == y_j else 0.
inline Matrix target_kernel(std::span<const int> labels) {
    if (labels.empty()) throw usage_error("target_kernel: no labels");
    const std::size_t m = labels.size();
    Matrix K(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) K(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
    return K;
}

/// <K1,K2>_F / sqrt(<K1,K1>_F <K2,K2>_F).
inline double alignment(const Matrix& K1, const Matrix& K2) {
    if (!K1.is_square() || !K1.same_shape(K2))
        throw usage_error("alignment: matrices must be square with equal shapes");
    const double n1 = frobenius_inner(K1, K1);
    const double n2 = frobenius_inner(K2, K2);
    if (n1 == 0.0 || n2 == 0.0) throw degenerate_input_error("alignment: zero-norm matrix");
    return frobenius_inner(K1, K2) / std::sqrt(n1 * n2);
}

/// (I - 11'/m) K (I - 11'/m).
inline Matrix center_kernel(const Matrix& K) {
    if (!K.is_square()) throw usage_error("center_kernel: matrix must be square");
    const std::size_t m = K.rows();
    std::vector<double> row_mean(m, 0.0), col_mean(m, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            row_mean[i] += K(i, j);
            col_mean[j] += K(i, j);
            total += K(i, j);
        }
    const double md = static_cast<double>(m);
    for (auto& v : row_mean) v /= md;
    for (auto& v : col_mean) v /= md;
    total /= md * md;
    Matrix C(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) C(i, j) = K(i, j) - row_mean[i] - col_mean[j] + total;
    return C;
}

inline double centered_alignment(const Matrix& K1, const Matrix& K2) {
    return alignment(center_kernel(K1), center_kernel(K2));
}

/// sum_i w_i K_i.
inline Matrix combine(std::span<const Matrix> kernels, std::span<const double> w) {
    if (kernels.empty()) throw usage_error("combine: no kernels");
    if (kernels.size() != w.size()) throw usage_error("combine: weight count mismatch");
    Matrix out(kernels.front().rows(), kernels.front().cols());
    for (std::size_t k = 0; k < kernels.size(); ++k) {
        kernels[k].require_same_shape(out, "combine");
        if (w[k] == 0.0) continue;
        auto src = kernels[k].data();
        auto dst = out.data();
        for (std::size_t t = 0; t < dst.size(); ++t) dst[t] += w[k] * src[t];
    }
    return out;
}

inline KernelMatrix combine(std::span<const KernelMatrix> kernels, const WeightVector& w) {
    std::vector<Matrix> mats;
    mats.reserve(kernels.size());
    for (const auto& k : kernels) mats.push_back(k.values);
    KernelMatrix out;
    out.values = combine(mats, w.weights);
    out.kind = KernelKind::combined;
    if (!kernels.empty()) {
        out.row_ids = kernels.front().row_ids;
        out.col_ids = kernels.front().col_ids;
        out.meta.n_qubits = kernels.front().meta.n_qubits;
        out.meta.shots = kernels.front().meta.shots;
    }
    return out;
}

inline WeightVector weights_average(std::size_t n_kernels) {
    if (n_kernels == 0) throw usage_error("weights_average: no kernels");
    WeightVector w;
    w.strategy = Strategy::AVE;
    w.weights.assign(n_kernels, 1.0 / static_cast<double>(n_kernels));
    w.raw = w.weights;
    return w;
}

namespace detail {

inline Matrix gram_of(std::span<const Matrix> kernels) {
    const std::size_t n = kernels.size();
    Matrix S(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j)
            S(i, j) = S(j, i) = frobenius_inner(kernels[i], kernels[j]);
    return S;
}

inline std::vector<double> inner_with(std::span<const Matrix> kernels, const Matrix& target) {
    std::vector<double> q(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i) q[i] = frobenius_inner(kernels[i], target);
    return q;
}

inline double quad_form(const Matrix& S, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        for (std::size_t j = 0; j < w.size(); ++j) s += w[i] * S(i, j) * w[j];
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline std::vector<double> normalized_to_sum(std::span<const double> v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if (!(s > 0.0)) throw degenerate_input_error("weights: all weights are zero");
    std::vector<double> w(v.begin(), v.end());
    for (double& x : w) x /= s;
    return w;
}

inline void require_kernels(std::span<const Matrix> kernels, const Matrix& target, const char* where) {
    if (kernels.empty()) throw usage_error(std::string(where) + ": no kernels");
    for (const auto& k : kernels)
        if (!k.is_square() || !k.same_shape(target))
            throw usage_error(std::string(where) + ": kernel/target shape mismatch");
}

// KKT residual of min_{u>=0} ½u'Su - q'u: |min(u_i, (Su - q)_i)|_inf.
inline double nnqp_residual(const Matrix& S, std::span<const double> q, std::span<const double> u) {
    double r = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double g = -q[i];
        for (std::size_t j = 0; j < u.size(); ++j) g += S(i, j) * u[j];
        r = std::max(r, std::abs(std::min(u[i], g)));
    }
    return r;
}

} // namespace detail

/// Kernel-target alignment QCQP: max w'q s.t. w'Sw <= 1, w >= 0.
///
/// The maximizer is the ray through the minimizer of the nonnegative quadratic
/// ½u'Su - q'u, rescaled to w'Sw = 1. Iterates are kept on the optimal scale of
/// their ray, u = (q'w) w with w'Sw = 1, and advanced by a projected gradient
/// step of length 1/λ_max(S) (clamp at zero, then radial rescale). Both moves
/// lower ½u'Su - q'u = -½(q'w)^2, so the QCQP objective q'w never decreases.
/// Stops when the KKT residual of the quadratic, relative to max(q), is < tol.
inline WeightVector weights_qcqp(std::span<const Matrix> kernels, const Matrix& target,
                                 double tol = 1e-9, int max_iter = 200000) {
    detail::require_kernels(kernels, target, "weights_qcqp");
    const std::size_t nk = kernels.size();
    const Matrix S = detail::gram_of(kernels);
    const std::vector<double> q = detail::inner_with(kernels, target);
    const double qmax = *std::max_element(q.begin(), q.end());
    if (!(qmax > 0.0))
        throw degenerate_input_error("weights_qcqp: no kernel has positive inner product with target");
    for (std::size_t i = 0; i < nk; ++i)
        if (!(S(i, i) > 0.0)) throw degenerate_input_error("weights_qcqp: zero-norm kernel");

    const double lmax = max_eigenvalue(S);
    const double step = 1.0 / lmax;

    auto to_unit = [&](std::vector<double>& w) {
        const double n = std::sqrt(detail::quad_form(S, w));
        for (double& x : w) x /= n;
    };

    // Start from the best single kernel, which is feasible and on the boundary.
    std::vector<double> w(nk, 0.0);
    {
        std::size_t best = 0;
        double best_val = -1.0;
        for (std::size_t i = 0; i < nk; ++i) {
            const double val = q[i] / std::sqrt(S(i, i));
            if (val > best_val) best_val = val, best = i;
        }
        w[best] = 1.0 / std::sqrt(S(best, best));
    }

    WeightVector out;
    out.strategy = Strategy::SDP;
    std::vector<double> u(nk), g(nk);
    int it = 0;
    for (; it < max_iter; ++it) {
        const double scale = detail::dot(q, w);
        for (std::size_t i = 0; i < nk; ++i) u[i] = scale * w[i];
        out.objective_trace.push_back(scale);
        if (detail::nnqp_residual(S, q, u) < tol * qmax) break;

        for (std::size_t i = 0; i < nk; ++i) {
            double gi = -q[i];
            for (std::size_t j = 0; j < nk; ++j) gi += S(i, j) * u[j];
            g[i] = gi;
        }
        std::vector<double> next(nk);
        for (std::size_t i = 0; i < nk; ++i) next[i] = std::max(0.0, u[i] - step * g[i]);
        if (std::all_of(next.begin(), next.end(), [](double x) { return x == 0.0; })) break;
        to_unit(next);
        if (detail::dot(q, next) < scale) break;  // cannot happen in exact arithmetic
        w = std::move(next);
    }
    out.iterations = it;
    if (it == max_iter) throw solver_error("weights_qcqp: no convergence", w);

    out.objective = detail::dot(q, w);
    out.raw = w;
    out.weights = detail::normalized_to_sum(w);
    return out;
}

/// Centered alignment: min_{v>=0} v'Mv - 2v'a by cyclic coordinate descent
/// with exact, zero-clamped coordinate minimization. raw = v/|v|_2.
inline WeightVector weights_centered(std::span<const Matrix> kernels, const Matrix& target,
                                     double tol = 1e-12, int max_iter = 100000) {
    detail::require_kernels(kernels, target, "weights_centered");
    const std::size_t nk = kernels.size();
    std::vector<Matrix> centered;
    centered.reserve(nk);
    for (const auto& k : kernels) centered.push_back(center_kernel(k));
    const Matrix Ky_c = center_kernel(target);
    if (frobenius_norm(Ky_c) == 0.0)
        throw degenerate_input_error("weights_centered: centered target is zero (single class)");
    const Matrix M = detail::gram_of(centered);
    const std::vector<double> a = detail::inner_with(centered, Ky_c);
    if (std::none_of(a.begin(), a.end(), [](double x) { return x > 0.0; }))
        throw degenerate_input_error("weights_centered: no kernel aligns positively with target");

    std::vector<double> v(nk, 0.0);
    std::vector<double> Mv(nk, 0.0);
    auto objective = [&] {
        double o = 0.0;
        for (std::size_t i = 0; i < nk; ++i) o += v[i] * Mv[i] - 2.0 * v[i] * a[i];
        return o;
    };
    double scale = 0.0;
    for (std::size_t i = 0; i < nk; ++i) scale = std::max(scale, M(i, i));

    WeightVector out;
    out.strategy = Strategy::CENT;
    int it = 0;
    for (; it < max_iter; ++it) {
        double max_change = 0.0;
        for (std::size_t i = 0; i < nk; ++i) {
            if (!(M(i, i) > 0.0)) continue;  // centered kernel is zero; leave v_i = 0
            const double vi = std::max(0.0, v[i] + (a[i] - Mv[i]) / M(i, i));
            const double delta = vi - v[i];
            if (delta == 0.0) continue;
            for (std::size_t j = 0; j < nk; ++j) Mv[j] += delta * M(j, i);
            v[i] = vi;
            max_change = std::max(max_change, M(i, i) * delta * delta);
        }
        out.objective_trace.push_back(objective());
        if (max_change <= tol * scale) break;
    }
    out.iterations = it;
    if (it == max_iter) throw solver_error("weights_centered: no convergence", v);

    const double vnorm = std::sqrt(detail::dot(v, v));
    if (!(vnorm > 0.0)) throw degenerate_input_error("weights_centered: optimum is v = 0");
    out.raw = v;
    for (double& x : out.raw) x /= vnorm;
    out.objective = objective();
    out.weights = detail::normalized_to_sum(v);
    return out;
}

struct ProjectionOptions {
    /// Stop once the residual norm drops below this; negative selects the
    /// default 0.05·|K_y|_F.
    double norm_threshold = -1.0;
    /// Compare Frobenius-normalized matrices when choosing the closest kernel.
    bool normalize_distance = true;
};

/// Greedy projection alignment (matching pursuit on the target kernel).
///
/// Each round picks the unused kernel closest to the current residual R,
/// removes its component R <- R - <R,K^>K^ (K^ = K/|K|), and records the
/// clamped coefficient max(<R,K^>, 0) as its raw weight. The loop ends when
/// the residual norm stops decreasing, falls below the threshold, or the
/// kernels run out. objective_trace holds the residual norms, starting with |K_y|.
inline WeightVector weights_projection(std::span<const Matrix> kernels, const Matrix& target,
                                       ProjectionOptions opt = {}) {
    detail::require_kernels(kernels, target, "weights_projection");
    const std::size_t nk = kernels.size();
    std::vector<double> norms(nk);
    for (std::size_t i = 0; i < nk; ++i) norms[i] = frobenius_norm(kernels[i]);
    if (std::all_of(norms.begin(), norms.end(), [](double x) { return x == 0.0; }))
        throw degenerate_input_error("weights_projection: all kernels have zero norm");
    const double target_norm = frobenius_norm(target);
    if (target_norm == 0.0) throw degenerate_input_error("weights_projection: zero target");
    const double threshold = opt.norm_threshold < 0.0 ? 0.05 * target_norm : opt.norm_threshold;

    WeightVector out;
    out.strategy = Strategy::PROJ;
    out.raw.assign(nk, 0.0);
    std::vector<bool> used(nk, false);
    Matrix residual = target;
    double residual_norm = target_norm;
    out.objective_trace.push_back(residual_norm);

    while (out.selected.size() < nk) {
        std::size_t best = nk;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < nk; ++i) {
            if (used[i] || norms[i] == 0.0) continue;
            double d2;
            if (opt.normalize_distance) {
                // |K^ - R^|^2 = 2 - 2 <K,R>/(|K||R|)
                d2 = 2.0 - 2.0 * frobenius_inner(kernels[i], residual) / (norms[i] * residual_norm);
            } else {
                d2 = frobenius_inner(kernels[i], kernels[i]) -
                     2.0 * frobenius_inner(kernels[i], residual) + residual_norm * residual_norm;
            }
            if (d2 < best_dist) best_dist = d2, best = i;
        }
        if (best == nk) break;
        used[best] = true;
        out.selected.push_back(best);

        const double coeff = frobenius_inner(residual, kernels[best]) / norms[best];
        out.raw[best] = std::max(coeff, 0.0);
        auto r = residual.data();
        auto k = kernels[best].data();
        const double s = coeff / norms[best];
        for (std::size_t t = 0; t < r.size(); ++t) r[t] -= s * k[t];
        const double next_norm = frobenius_norm(residual);
        out.objective_trace.push_back(next_norm);
        ++out.iterations;

        const bool stalled = next_norm >= residual_norm;
        residual_norm = next_norm;
        if (stalled || next_norm < threshold || next_norm == 0.0) break;
    }
    if (out.selected.empty())
        throw degenerate_input_error("weights_projection: no kernel could be selected");
    out.objective = residual_norm;
    out.weights = detail::normalized_to_sum(out.raw);
    return out;
}

inline WeightVector fit_weights(Strategy s, std::span<const Matrix> kernels, const Matrix& target,
                                const ProjectionOptions& proj = {}) {
    switch (s) {
    case Strategy::AVE: return weights_average(kernels.size());
    case Strategy::SDP: return weights_qcqp(kernels, target);
    case Strategy::CENT: return weights_centered(kernels, target);
    case Strategy::PROJ: return weights_projection(kernels, target, proj);
    }
    throw usage_error("fit_weights: unknown strategy");
}

} // namespace qmkl
