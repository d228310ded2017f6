#pragma once

#include "hessmart/lp.hpp"
#include "hessmart/measure.hpp"
#include "hessmart/potential.hpp"

#include <cmath>
#include <deque>
#include <optional>

namespace hessmart {

struct StrassenConfig {
    double tol = 1e-9;            // on both Property-2 residuals
    double witness_tol = 1e-8;    // expectation gap below which order is reported as boundary
    double mean_tol = 1e-8;
    int max_iter = 500;
    double divergence_norm = 1e6; // |(a,b)|_inf beyond which a plateau means divergence
    int plateau_window = 10;
    double plateau_rel = 1e-12;
    // A solution that only converges by running multipliers to infinity is a
    // non-strict (boundary) order: the last accepted Newton step still moves
    // the log-odds by O(1) while the multiplier spread is already large.
    double boundary_step = 0.25;
    double boundary_spread = 12.0;
};

enum class KernelStatus { Converged, Diverging, IterationLimit };

struct KernelSolution {
    Vector a;                 // size N+1, a[0] = 0 (gauge)
    RowMatrix b;              // (N+1) x n, row 0 = 0 (gauge)
    double residual_mass = 0.0;
    double residual_moment = 0.0;
    KernelStatus status = KernelStatus::IterationLimit;
    Vector direction_a;       // normalized escape direction when Diverging
    RowMatrix direction_b;
    int iterations = 0;
    double final_step = 0.0;      // log-odds movement of the last accepted step
    double multiplier_spread = 0.0;
};

struct AffinePiece {
    double constant = 0.0;
    Vector slope;
};

/// y -> max(0, c_1 + <s_1,y>, ..., c_m + <s_m,y>); convex by construction.
struct MaxAffineWitness {
    std::vector<AffinePiece> pieces;

    double operator()(const Vector& y) const
    {
        double v = 0.0;
        for (const auto& p : pieces) v = std::max(v, p.constant + p.slope.dot(y));
        return v;
    }
};

struct OrderVerdict {
    bool ordered = false;
    bool boundary = false;                    // order holds, but not strictly
    std::optional<MaxAffineWitness> witness;  // present when not ordered (and on boundary divergences)
    double gap = 0.0;                         // E_m1[witness] - E_m2[witness] when witness present
    double residual_mass = 0.0;
    double residual_moment = 0.0;
    int iterations = 0;
};

namespace detail {

struct StrassenObjective {
    const DiscreteMeasure& m1;
    const DiscreteMeasure& m2;
    Vector logp;      // log weights of m1
    int n;            // ambient dimension
    Eigen::Index N;   // free source indices 1..N

    explicit StrassenObjective(const DiscreteMeasure& a, const DiscreteMeasure& b)
        : m1(a), m2(b), n(a.dimension()), N(a.size() - 1)
    {
        logp = m1.weights().array().log().matrix();
    }

    // Scores t_k(j) = log p_k + a_k + <b_k, y_j> for all k = 0..N.
    Matrix scores(const Vector& a, const RowMatrix& b) const
    {
        Matrix t = (m2.atoms() * b.transpose()).transpose();  // (N+1) x M
        t.colwise() += logp + a;
        return t;
    }

    // Posterior source probabilities given each target atom (column-stochastic).
    static Matrix posteriors(const Matrix& t)
    {
        Matrix p = t;
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double m = p.col(j).maxCoeff();
            p.col(j) = (p.col(j).array() - m).exp();
            p.col(j) /= p.col(j).sum();
        }
        return p;
    }

    double objective(const Matrix& t, const Vector& a, const RowMatrix& b) const
    {
        double phi = 0.0;
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
            const double m = t.col(j).maxCoeff();
            phi += m2.weight(j) * (m + std::log((t.col(j).array() - m).exp().sum()));
        }
        double linear = 0.0;
        for (Eigen::Index k = 0; k <= N; ++k)
            linear += m1.weight(k) * (a[k] + b.row(k).dot(m1.atoms().row(k)));
        return phi - linear;
    }

    // Row masses and moments of the kernel: mass_k = sum_j w_j pi_k(j) / p_k,
    // moment_k = sum_j w_j pi_k(j) y_j / p_k. Property 2 asks mass = 1,
    // moment = x_k.
    void row_stats(const Matrix& pi, Vector& mass, RowMatrix& moment) const
    {
        const Vector wpi_row = pi * m2.weights();                       // (N+1)
        const Matrix wy = pi * m2.weights().asDiagonal() * m2.atoms();  // (N+1) x n
        mass = wpi_row.cwiseQuotient(m1.weights());
        moment.resize(N + 1, n);
        for (Eigen::Index k = 0; k <= N; ++k)
            moment.row(k) = wy.row(k) / m1.weight(k);
    }

    void residuals(const Vector& mass, const RowMatrix& moment,
                   double& res_mass, double& res_moment) const
    {
        res_mass = (mass.array() - 1.0).abs().maxCoeff();
        res_moment = (moment - m1.atoms()).cwiseAbs().maxCoeff();
    }

    // Gradient of the objective over the free variables, flattened as
    // [a_1, b_1, a_2, b_2, ...].
    Vector gradient(const Matrix& pi) const
    {
        Vector g(N * (n + 1));
        const Vector wpi = pi * m2.weights();
        const Matrix wy = pi * m2.weights().asDiagonal() * m2.atoms();
        for (Eigen::Index k = 1; k <= N; ++k) {
            g[(k - 1) * (n + 1)] = wpi[k] - m1.weight(k);
            g.segment((k - 1) * (n + 1) + 1, n) =
                (wy.row(k) - m1.weight(k) * m1.atoms().row(k)).transpose();
        }
        return g;
    }

    Matrix hessian(const Matrix& pi) const
    {
        const Eigen::Index D = N * (n + 1);
        Matrix H = Matrix::Zero(D, D);
        Vector yhat(n + 1);
        Matrix outer(n + 1, n + 1);
        Vector v(D);
        for (Eigen::Index j = 0; j < m2.size(); ++j) {
            const double w = m2.weight(j);
            yhat[0] = 1.0;
            yhat.tail(n) = m2.atoms().row(j).transpose();
            outer.noalias() = yhat * yhat.transpose();
            for (Eigen::Index k = 1; k <= N; ++k) {
                H.block((k - 1) * (n + 1), (k - 1) * (n + 1), n + 1, n + 1) +=
                    w * pi(k, j) * outer;
                v.segment((k - 1) * (n + 1), n + 1) = pi(k, j) * yhat;
            }
            H.noalias() -= w * v * v.transpose();
        }
        return H;
    }
};

inline void unflatten(const Vector& theta, Eigen::Index N, int n, Vector& a, RowMatrix& b)
{
    a.setZero(N + 1);
    b.setZero(N + 1, n);
    for (Eigen::Index k = 1; k <= N; ++k) {
        a[k] = theta[(k - 1) * (n + 1)];
        b.row(k) = theta.segment((k - 1) * (n + 1) + 1, n).transpose();
    }
}

}  // namespace detail

/// Solves the discretized martingale-kernel program: find multipliers
/// (a_k, b_k), gauge-pinned at index 0, such that the kernel rows
/// K(y|x_k) ~ w(y) e^{a_k + <b_k, y>} / sum_l p_l e^{a_l + <b_l, y>}
/// carry unit mass and barycenter x_k. Newton with line search on the convex
/// dual; divergence of the iterates encodes failure of convex order.
inline KernelSolution solve_kernel(const DiscreteMeasure& m1, const DiscreteMeasure& m2,
                                   const StrassenConfig& cfg = {})
{
    if (m1.dimension() != m2.dimension())
        throw std::invalid_argument("solve_kernel: dimension mismatch");
    const int n = m1.dimension();
    if (n > 0 && m2.affine_hull_dimension() < n)
        throw std::invalid_argument(
            "solve_kernel: m2 is concentrated on an affine subspace; "
            "reduce the pair via reduce_to_affine_hull first");

    detail::StrassenObjective obj(m1, m2);
    const Eigen::Index N = obj.N;
    KernelSolution sol;
    sol.a.setZero(N + 1);
    sol.b.setZero(N + 1, n);

    // Unequal means admit an affine certificate; the program is infeasible.
    const Vector mean_gap = m1.mean() - m2.mean();
    if (mean_gap.norm() > cfg.mean_tol) {
        sol.status = KernelStatus::Diverging;
        const Vector u = mean_gap.normalized();
        double c = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < m2.size(); ++j) c = std::min(c, u.dot(m2.atom(j)));
        for (Eigen::Index i = 0; i < m1.size(); ++i) c = std::min(c, u.dot(m1.atom(i)));
        sol.direction_a = Vector::Constant(N + 1, -c);
        sol.direction_b.resize(N + 1, n);
        sol.direction_b.rowwise() = u.transpose();
        sol.residual_moment = mean_gap.norm();
        return sol;
    }

    Vector theta = Vector::Zero(N * (n + 1));
    Vector a = sol.a;
    RowMatrix b = sol.b;
    Matrix t = obj.scores(a, b);
    Matrix pi = detail::StrassenObjective::posteriors(t);
    double L = obj.objective(t, a, b);

    Vector mass;
    RowMatrix moment;
    double res_mass = 0.0, res_moment = 0.0;
    std::deque<double> history;

    auto current_residual = [&]() {
        obj.row_stats(pi, mass, moment);
        obj.residuals(mass, moment, res_mass, res_moment);
        return std::max(res_mass, res_moment);
    };

    double residual = current_residual();
    int it = 0;
    for (; it < cfg.max_iter && residual > cfg.tol; ++it) {
        history.push_back(residual);
        if (static_cast<int>(history.size()) > cfg.plateau_window + 1) history.pop_front();
        const double norm_inf = theta.size() ? theta.cwiseAbs().maxCoeff() : 0.0;
        if (norm_inf > cfg.divergence_norm &&
            static_cast<int>(history.size()) > cfg.plateau_window) {
            const double old = history.front();
            if (old - residual < cfg.plateau_rel * old) {
                sol.status = KernelStatus::Diverging;
                break;
            }
        }

        Vector g = obj.gradient(pi);
        Matrix H = obj.hessian(pi);
        Vector step;
        double lambda = 0.0;
        while (true) {
            Matrix Hd = H;
            if (lambda > 0.0) Hd.diagonal().array() += lambda;
            Eigen::LLT<Matrix> llt(Hd);
            if (llt.info() == Eigen::Success) {
                step = llt.solve(-g);
                if (step.allFinite()) break;
            }
            lambda = lambda == 0.0 ? 1e-12 : lambda * 10.0;
            if (lambda > 1e20) {
                sol.status = norm_inf > 1e-2 * cfg.divergence_norm ? KernelStatus::Diverging
                                                                   : KernelStatus::IterationLimit;
                break;
            }
        }
        if (lambda > 1e20) break;

        const double slope = g.dot(step);
        double tfac = 1.0;
        bool accepted = false;
        Vector theta_t;
        for (int ls = 0; ls < 60; ++ls) {
            theta_t = theta + tfac * step;
            Vector a_t;
            RowMatrix b_t;
            detail::unflatten(theta_t, N, n, a_t, b_t);
            Matrix t_t = obj.scores(a_t, b_t);
            const double L_t = obj.objective(t_t, a_t, b_t);
            if (std::isfinite(L_t) && L_t <= L + 1e-4 * tfac * slope) {
                // Log-odds movement of the accepted step, used by the
                // boundary detector in check_convex_order.
                sol.final_step = (t_t - t).cwiseAbs().maxCoeff();
                theta = std::move(theta_t);
                a = std::move(a_t);
                b = std::move(b_t);
                t = std::move(t_t);
                L = L_t;
                accepted = true;
                break;
            }
            tfac *= 0.5;
        }
        if (!accepted) {
            const double norm_now = theta.size() ? theta.cwiseAbs().maxCoeff() : 0.0;
            sol.status = norm_now > 1e-2 * cfg.divergence_norm ? KernelStatus::Diverging
                                                               : KernelStatus::IterationLimit;
            break;
        }
        pi = detail::StrassenObjective::posteriors(t);
        residual = current_residual();
    }

    sol.a = a;
    sol.b = b;
    sol.residual_mass = res_mass;
    sol.residual_moment = res_moment;
    sol.iterations = it;
    {
        // Range of a_k + <b_k, y_j> across all sources and targets.
        Matrix s = t;
        s.colwise() -= obj.logp;
        sol.multiplier_spread = s.maxCoeff() - s.minCoeff();
    }
    if (residual <= cfg.tol) {
        sol.status = KernelStatus::Converged;
    } else if (sol.status == KernelStatus::Diverging) {
        const double norm2 = theta.norm();
        Vector da;
        RowMatrix db;
        detail::unflatten(norm2 > 0 ? Vector(theta / norm2) : theta, N, n, da, db);
        sol.direction_a = std::move(da);
        sol.direction_b = std::move(db);
    }
    return sol;
}

/// Kernel row K(.|x_k) as a probability measure on m2's atoms:
/// weights ~ w_j e^{a_k + <b_k, y_j>} / sum_l p_l e^{a_l + <b_l, y_j>},
/// explicitly renormalized.
inline DiscreteMeasure kernel_row(const KernelSolution& sol, const DiscreteMeasure& m1,
                                  const DiscreteMeasure& m2, Eigen::Index k)
{
    if (sol.status != KernelStatus::Converged)
        throw std::runtime_error("kernel_row: solution not converged");
    if (k < 0 || k >= m1.size()) throw std::invalid_argument("kernel_row: bad source index");

    detail::StrassenObjective obj(m1, m2);
    Matrix t = obj.scores(sol.a, sol.b);
    Vector logw(m2.size());
    for (Eigen::Index j = 0; j < m2.size(); ++j) {
        const double m = t.col(j).maxCoeff();
        const double logden = m + std::log((t.col(j).array() - m).exp().sum());
        logw[j] = std::log(m2.weight(j)) + sol.a[k] + sol.b.row(k).dot(m2.atoms().row(j)) - logden;
    }
    const double m = logw.maxCoeff();
    Vector w = (logw.array() - m).exp().matrix();
    w /= w.sum();
    return DiscreteMeasure(m2.atoms(), std::move(w), true);
}

namespace detail {

inline MaxAffineWitness lift_witness(const MaxAffineWitness& w, const AffineFrame& frame)
{
    MaxAffineWitness out;
    out.pieces.reserve(w.pieces.size());
    for (const auto& p : w.pieces) {
        AffinePiece q;
        q.slope = frame.basis * p.slope;
        q.constant = p.constant - q.slope.dot(frame.base);
        out.pieces.push_back(std::move(q));
    }
    return out;
}

inline double witness_gap(const MaxAffineWitness& w, const DiscreteMeasure& m1,
                          const DiscreteMeasure& m2)
{
    return m1.expectation([&](const Vector& y) { return w(y); }) -
           m2.expectation([&](const Vector& y) { return w(y); });
}

inline MaxAffineWitness direction_witness(const KernelSolution& sol)
{
    MaxAffineWitness w;
    for (Eigen::Index k = 1; k < sol.direction_a.size(); ++k) {
        AffinePiece p;
        p.constant = sol.direction_a[k];
        p.slope = sol.direction_b.row(k).transpose();
        w.pieces.push_back(std::move(p));
    }
    if (w.pieces.empty() && sol.direction_a.size() > 0) {
        AffinePiece p;  // single-source case: the direction sits on the gauge row
        p.constant = sol.direction_a[0];
        p.slope = sol.direction_b.row(0).transpose();
        w.pieces.push_back(std::move(p));
    }
    return w;
}

}  // namespace detail

/// Decides convex order m1 <= m2. Reduces to the affine hull of the supports,
/// runs solve_kernel, and on divergence converts the escape direction into a
/// max-of-affines separating function. A divergence whose witness gap is
/// below witness_tol, or a convergence reached only by unbounded multipliers,
/// is reported as ordered with the boundary flag (order holds non-strictly).
inline OrderVerdict check_convex_order(const DiscreteMeasure& m1, const DiscreteMeasure& m2,
                                       const StrassenConfig& cfg = {})
{
    if (m1.dimension() != m2.dimension())
        throw std::invalid_argument("check_convex_order: dimension mismatch");
    OrderVerdict verdict;

    const Vector mean_gap = m1.mean() - m2.mean();
    if (mean_gap.norm() > cfg.mean_tol) {
        const Vector u = mean_gap.normalized();
        double c = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < m2.size(); ++j) c = std::min(c, u.dot(m2.atom(j)));
        for (Eigen::Index i = 0; i < m1.size(); ++i) c = std::min(c, u.dot(m1.atom(i)));
        MaxAffineWitness w;
        w.pieces.push_back(AffinePiece{-c, u});
        verdict.ordered = false;
        verdict.gap = detail::witness_gap(w, m1, m2);
        verdict.witness = std::move(w);
        return verdict;
    }

    // Common affine hull; kernels and witnesses are lifted back afterwards.
    ReducedPair red = reduce_to_affine_hull(m1, m2);
    const int d = red.first.dimension();

    if (d == 0) {  // both Dirac at the same point
        verdict.ordered = true;
        return verdict;
    }

    // Mass of m1 off the affine hull of m2's support: certified by |<u, y-c>|.
    if (red.second.affine_hull_dimension() < d) {
        const RowMatrix pts = red.second.positive_weight_atoms();
        Matrix centered = pts;
        const Vector c2 = pts.colwise().mean().transpose();
        centered.rowwise() -= c2.transpose();
        Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeFullV);
        const auto& s = svd.singularValues();
        int rank = 0;
        if (s.size() > 0 && s[0] > 0.0)
            for (Eigen::Index i = 0; i < s.size(); ++i)
                if (s[i] > 1e-10 * s[0]) ++rank;
        const Vector u = svd.matrixV().col(rank);  // orthogonal to m2's hull
        MaxAffineWitness w;
        w.pieces.push_back(AffinePiece{-u.dot(c2), u});
        w.pieces.push_back(AffinePiece{u.dot(c2), -u});
        const double gap = detail::witness_gap(w, red.first, red.second);
        MaxAffineWitness lifted = detail::lift_witness(w, red.frame);
        if (gap > cfg.witness_tol) {
            verdict.ordered = false;
            verdict.gap = gap;
            verdict.witness = std::move(lifted);
        } else {
            verdict.ordered = true;
            verdict.boundary = true;
            verdict.gap = gap;
            verdict.witness = std::move(lifted);
        }
        return verdict;
    }

    KernelSolution sol = solve_kernel(red.first, red.second, cfg);
    verdict.residual_mass = sol.residual_mass;
    verdict.residual_moment = sol.residual_moment;
    verdict.iterations = sol.iterations;

    switch (sol.status) {
        case KernelStatus::Converged: {
            verdict.ordered = true;
            verdict.boundary = sol.final_step >= cfg.boundary_step &&
                               sol.multiplier_spread >= cfg.boundary_spread;
            return verdict;
        }
        case KernelStatus::Diverging: {
            MaxAffineWitness w = detail::direction_witness(sol);
            const double gap = detail::witness_gap(w, red.first, red.second);
            MaxAffineWitness lifted = detail::lift_witness(w, red.frame);
            verdict.gap = gap;
            verdict.witness = std::move(lifted);
            if (gap > cfg.witness_tol) {
                verdict.ordered = false;
            } else {
                verdict.ordered = true;
                verdict.boundary = true;
            }
            return verdict;
        }
        case KernelStatus::IterationLimit:
            throw ConvergenceError("check_convex_order: kernel solve hit the iteration limit",
                                   std::max(sol.residual_mass, sol.residual_moment));
    }
    throw std::logic_error("check_convex_order: unreachable");
}

/// Independent oracle: dense LP feasibility for a martingale coupling
/// q >= 0 with row marginals m1, column marginals m2, and row barycenters
/// at m1's atoms. Intentionally shares nothing with solve_kernel.
inline std::optional<Matrix> brute_force_coupling(const DiscreteMeasure& m1,
                                                  const DiscreteMeasure& m2)
{
    if (m1.dimension() != m2.dimension())
        throw std::invalid_argument("brute_force_coupling: dimension mismatch");
    if (m1.size() > 12 || m2.size() > 12)
        throw std::invalid_argument("brute_force_coupling: size limit exceeded (12 atoms/side)");
    const Eigen::Index K = m1.size(), L = m2.size();
    const int n = m1.dimension();
    const Eigen::Index rows = K + L + K * n;
    Matrix A = Matrix::Zero(rows, K * L);
    Vector rhs = Vector::Zero(rows);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index l = 0; l < L; ++l) A(k, k * L + l) = 1.0;
        rhs[k] = m1.weight(k);
    }
    for (Eigen::Index l = 0; l < L; ++l) {
        for (Eigen::Index k = 0; k < K; ++k) A(K + l, k * L + l) = 1.0;
        rhs[K + l] = m2.weight(l);
    }
    for (Eigen::Index k = 0; k < K; ++k)
        for (int d = 0; d < n; ++d) {
            const Eigen::Index r = K + L + k * n + d;
            for (Eigen::Index l = 0; l < L; ++l) A(r, k * L + l) = m2.atoms()(l, d);
            rhs[r] = m1.weight(k) * m1.atoms()(k, d);
        }

    // Row scaling keeps the tableau well conditioned.
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double s = std::max(A.row(r).cwiseAbs().maxCoeff(), 1e-300);
        A.row(r) /= s;
        rhs[r] /= s;
    }

    auto x = lp_feasible_point(A, rhs, 1e-9);
    if (!x) return std::nullopt;
    Matrix q(K, L);
    for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index l = 0; l < L; ++l) q(k, l) = (*x)[k * L + l];
    return q;
}

}  // namespace hessmart
