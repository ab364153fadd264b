#pragma once

// Soft-margin C-SVM on a precomputed kernel, solved in the dual by SMO with
// the maximal-violating-pair working set, and ROC-AUC scoring.
//
// Dual (minimization form): f(α) = ½ αᵀQα − eᵀα, Q_ij = y_i y_j K_ij,
// subject to 0 ≤ α_i ≤ C and yᵀα = 0. Decision value: Σ_i α_i y_i K(x_i, x) + b.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/matrix.hpp"

namespace qmkl {

struct SvmOptions {
    double C = 1.0;
    double tol = 1e-6;
    std::int64_t max_iter = 100000;
    bool record_objective = false;
};

struct SvmModel {
    std::vector<double> alpha;              // box-constrained multipliers
    std::vector<double> dual_coefficients;  // α_i y_i
    double bias = 0.0;
    std::vector<std::size_t> support_indices;
    double C = 1.0;
    std::int64_t iterations = 0;
    double dual_objective = 0.0;               // Σα − ½αᵀQα
    std::vector<double> objective_trace;       // when requested
};

inline void require_two_classes(std::span<const int> labels, const char* where) {
    bool pos = false, neg = false;
    for (int y : labels) {
        if (y == 1) pos = true;
        else if (y == -1) neg = true;
        else throw usage_error(std::string(where) + ": labels must be +1 or -1");
    }
    if (!pos || !neg) throw usage_error(std::string(where) + ": both classes must be present");
}

inline SvmModel train_svm(const Matrix& K, std::span<const int> labels, const SvmOptions& opt = {}) {
    if (!K.is_square()) throw usage_error("train_svm: kernel must be square");
    if (K.rows() != labels.size()) throw usage_error("train_svm: label count does not match kernel");
    if (!(opt.C > 0.0)) throw configuration_error("train_svm: C must be positive");
    require_two_classes(labels, "train_svm");

    const std::size_t m = labels.size();
    const double C = opt.C;
    constexpr double tau = 1e-12;
    auto y = [&](std::size_t i) { return static_cast<double>(labels[i]); };
    auto Q = [&](std::size_t i, std::size_t j) { return y(i) * y(j) * K(i, j); };

    std::vector<double> alpha(m, 0.0);
    std::vector<double> G(m, -1.0);  // ∇f = Qα − e

    auto in_up = [&](std::size_t t) {
        return (labels[t] == 1 && alpha[t] < C) || (labels[t] == -1 && alpha[t] > 0.0);
    };
    auto in_low = [&](std::size_t t) {
        return (labels[t] == 1 && alpha[t] > 0.0) || (labels[t] == -1 && alpha[t] < C);
    };
    auto objective = [&] {
        double f = 0.0;
        for (std::size_t t = 0; t < m; ++t) f += alpha[t] * (G[t] - 1.0);
        return -0.5 * f;
    };

    SvmModel model;
    model.C = C;
    std::int64_t iter = 0;
    bool converged = false;
    for (; iter < opt.max_iter; ++iter) {
        std::size_t i = m, j = m;
        double gmax = -std::numeric_limits<double>::infinity();
        double gmin = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < m; ++t) {
            const double v = -y(t) * G[t];
            if (in_up(t) && v > gmax) gmax = v, i = t;
            if (in_low(t) && v < gmin) gmin = v, j = t;
        }
        if (i == m || j == m || gmax - gmin < opt.tol) {
            converged = true;
            break;
        }

        const double ai_old = alpha[i], aj_old = alpha[j];
        if (labels[i] != labels[j]) {
            double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
            if (quad <= 0.0) quad = tau;
            const double delta = (-G[i] - G[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) alpha[j] = 0.0, alpha[i] = diff;
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0, alpha[j] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[i] > C) alpha[i] = C, alpha[j] = C - diff;
            } else if (alpha[j] > C) {
                alpha[j] = C, alpha[i] = C + diff;
            }
        } else {
            double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
            if (quad <= 0.0) quad = tau;
            const double delta = (G[i] - G[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > C) {
                if (alpha[i] > C) alpha[i] = C, alpha[j] = sum - C;
            } else if (alpha[j] < 0.0) {
                alpha[j] = 0.0, alpha[i] = sum;
            }
            if (sum > C) {
                if (alpha[j] > C) alpha[j] = C, alpha[i] = sum - C;
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0, alpha[j] = sum;
            }
        }
        const double di = alpha[i] - ai_old;
        const double dj = alpha[j] - aj_old;
        for (std::size_t t = 0; t < m; ++t) G[t] += Q(t, i) * di + Q(t, j) * dj;
        if (opt.record_objective) model.objective_trace.push_back(objective());
    }
    if (!converged) throw solver_error("train_svm: no convergence within max_iter", alpha);

    // ρ: mean of y_t G_t over free multipliers, else the midpoint of the KKT interval.
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double sum_free = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < m; ++t) {
        const double yG = y(t) * G[t];
        if (alpha[t] >= C) {
            if (labels[t] == -1) ub = std::min(ub, yG);
            else lb = std::max(lb, yG);
        } else if (alpha[t] <= 0.0) {
            if (labels[t] == 1) ub = std::min(ub, yG);
            else lb = std::max(lb, yG);
        } else {
            ++n_free;
            sum_free += yG;
        }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

    model.alpha = alpha;
    model.dual_coefficients.resize(m);
    for (std::size_t t = 0; t < m; ++t) {
        model.dual_coefficients[t] = alpha[t] * y(t);
        if (alpha[t] > 0.0) model.support_indices.push_back(t);
    }
    model.bias = -rho;
    model.iterations = iter;
    model.dual_objective = objective();
    return model;
}

/// One score per row of K_cross (rows: evaluation points, columns: training points).
inline std::vector<double> decision_values(const SvmModel& model, const Matrix& K_cross) {
    if (K_cross.cols() != model.dual_coefficients.size())
        throw usage_error("decision_values: kernel columns do not match training size");
    std::vector<double> out(K_cross.rows(), model.bias);
    for (std::size_t r = 0; r < K_cross.rows(); ++r) {
        double s = 0.0;
        for (std::size_t t : model.support_indices) s += model.dual_coefficients[t] * K_cross(r, t);
        out[r] += s;
    }
    return out;
}

struct RocResult {
    double auc = 0.5;
    std::vector<double> fpr;  // non-decreasing, from 0 to 1
    std::vector<double> tpr;
};

/// Mann-Whitney AUC with average ranks for ties, plus the ROC polyline.
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw usage_error("roc_auc: scores and labels differ in length");
    require_two_classes(labels, "roc_auc");
    const std::size_t m = scores.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (int v : labels) n_pos += v == 1;
    const std::size_t n_neg = m - n_pos;
    for (std::size_t k = 0; k < m;) {
        std::size_t e = k;
        while (e + 1 < m && scores[order[e + 1]] == scores[order[k]]) ++e;
        const double avg_rank = (static_cast<double>(k + 1) + static_cast<double>(e + 1)) / 2.0;
        for (std::size_t t = k; t <= e; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        k = e + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    RocResult r;
    r.auc = (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);

    // Walk thresholds from the highest score down.
    r.fpr.push_back(0.0);
    r.tpr.push_back(0.0);
    std::size_t tp = 0, fp = 0;
    for (std::size_t k = m; k > 0;) {
        std::size_t s = k - 1;
        while (s > 0 && scores[order[s - 1]] == scores[order[k - 1]]) --s;
        for (std::size_t t = s; t < k; ++t) (labels[order[t]] == 1 ? tp : fp)++;
        r.fpr.push_back(static_cast<double>(fp) / nn);
        r.tpr.push_back(static_cast<double>(tp) / np);
        k = s;
    }
    return r;
}

} // namespace qmkl
