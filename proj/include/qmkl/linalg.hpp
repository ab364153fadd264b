#pragma once

// Symmetric eigendecomposition by the cyclic Jacobi method.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "qmkl/errors.hpp"
#include "qmkl/matrix.hpp"

namespace qmkl {

struct SymmetricEigen {
    std::vector<double> values;  // descending
    Matrix vectors;              // column k pairs with values[k]
    int sweeps = 0;
};

inline double offdiagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

/// Cyclic Jacobi sweeps until the off-diagonal Frobenius norm falls below
/// `tol` times the Frobenius norm of the input (or is exactly zero).
/// Only the upper triangle of `input` is read.
inline SymmetricEigen jacobi_eigen(const Matrix& input, double tol = 1e-13, int max_sweeps = 100) {
    if (!input.is_square()) throw usage_error("jacobi_eigen: matrix must be square");
    const std::size_t n = input.rows();
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = input(i, j);
    Matrix v = Matrix::identity(n);

    const double scale = frobenius_norm(a);
    const double threshold = tol * (scale > 0 ? scale : 1.0);

    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        if (offdiagonal_norm(a) <= threshold) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (offdiagonal_norm(a) > threshold)
        throw solver_error("jacobi_eigen: no convergence", {});

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    SymmetricEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    out.sweeps = sweep;
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

/// V diag(values) V^T.
inline Matrix reassemble(const Matrix& vectors, const std::vector<double>& values) {
    const std::size_t n = vectors.rows();
    Matrix out(n, n);
    for (std::size_t k = 0; k < values.size(); ++k) {
        const double lam = values[k];
        if (lam == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            const double vik = lam * vectors(i, k);
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * vectors(j, k);
        }
    }
    return out;
}

inline double min_eigenvalue(const Matrix& a) { return jacobi_eigen(a).values.back(); }
inline double max_eigenvalue(const Matrix& a) { return jacobi_eigen(a).values.front(); }

} // namespace qmkl
