#pragma once

#include "hessmart/common.hpp"

#include <cmath>
#include <optional>

namespace hessmart {

/// Phase-1 simplex for the feasibility problem A x = b, x >= 0.
/// Minimizes the sum of artificial variables with Bland's rule; returns a
/// feasible x when the artificial objective reaches ~0, nullopt otherwise.
/// Dense tableau, intended for small instances (tests and oracles).
inline std::optional<Vector> lp_feasible_point(Matrix A, Vector b, double tol = 1e-9)
{
    const Eigen::Index m = A.rows();
    const Eigen::Index n = A.cols();
    if (b.size() != m) throw std::invalid_argument("lp_feasible_point: shape mismatch");

    for (Eigen::Index i = 0; i < m; ++i) {
        if (b[i] < 0.0) {
            A.row(i) = -A.row(i);
            b[i] = -b[i];
        }
    }

    // Tableau over [x, artificials], last column = rhs, last row = phase-1 objective.
    Matrix T = Matrix::Zero(m + 1, n + m + 1);
    T.block(0, 0, m, n) = A;
    T.block(0, n, m, m) = Matrix::Identity(m, m);
    T.block(0, n + m, m, 1) = b;
    // Objective row: minimize sum of artificials, expressed in non-basic terms.
    for (Eigen::Index j = 0; j < n; ++j) T(m, j) = -A.col(j).sum();
    T(m, n + m) = -b.sum();

    std::vector<Eigen::Index> basis(m);
    for (Eigen::Index i = 0; i < m; ++i) basis[i] = n + i;

    const Eigen::Index max_pivots = 50 * (m + n) + 1000;
    for (Eigen::Index pivots = 0; pivots < max_pivots; ++pivots) {
        // Bland's rule: entering = lowest index with negative reduced cost.
        Eigen::Index enter = -1;
        for (Eigen::Index j = 0; j < n + m; ++j) {
            if (T(m, j) < -1e-11) {
                enter = j;
                break;
            }
        }
        if (enter < 0) break;

        Eigen::Index leave = -1;
        double best_ratio = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double a = T(i, enter);
            if (a > 1e-11) {
                const double ratio = T(i, n + m) / a;
                if (leave < 0 || ratio < best_ratio - 1e-13 ||
                    (std::abs(ratio - best_ratio) <= 1e-13 && basis[i] < basis[leave])) {
                    leave = i;
                    best_ratio = ratio;
                }
            }
        }
        if (leave < 0) break;  // no admissible pivot row

        T.row(leave) /= T(leave, enter);
        for (Eigen::Index i = 0; i <= m; ++i) {
            if (i == leave) continue;
            const double f = T(i, enter);
            if (f != 0.0) T.row(i) -= f * T.row(leave);
        }
        basis[leave] = enter;
    }

    if (-T(m, n + m) > tol) return std::nullopt;  // positive artificial mass left

    Vector x = Vector::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i)
        if (basis[i] < n) x[basis[i]] = T(i, n + m);
    return x;
}

}  // namespace hessmart
