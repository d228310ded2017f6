#pragma once

#include "hessmart/payoff.hpp"
#include "hessmart/potential.hpp"

#include <cmath>
#include <deque>
#include <optional>

namespace hessmart {

struct MaturitySpec {
    double time = 0.0;
    DiscreteMeasure ref_nodes;   // quadrature of the reference density on Omega_k
    std::vector<Payoff> basis;
    Vector targets;

    MaturitySpec(double t, DiscreteMeasure nodes, std::vector<Payoff> b, Vector tg)
        : time(t), ref_nodes(std::move(nodes)), basis(std::move(b)), targets(std::move(tg))
    {
        if (static_cast<Eigen::Index>(basis.size()) != targets.size())
            throw std::invalid_argument("maturity spec: basis and target lengths differ");
        if (ref_nodes.weights().minCoeff() <= 0.0)
            throw std::invalid_argument("maturity spec: reference weights must be positive");
    }
};

struct CalibrationConfig {
    double price_tol = 1e-6;
    int max_iter = 500;
    LegendreConfig inner;
    double coeff_limit = 1e4;  // |coefficients|_inf beyond which divergence is declared
    int lbfgs_memory = 10;
    int threads = 0;
    int diag_grid = 65;        // per-axis nodes of the divergence-diagnostic grid
};

enum class CalibrationStatus { Converged, IterationLimit, ArbitrageSuspected };

struct ArbitrageDiagnostics {
    std::vector<Vector> direction;  // per-maturity unbounded coefficient direction
    double asymptotic_slope = 0.0;  // growth rate of the objective along it (<= 0)
};

/// Per-maturity coefficients, the induced backward-recursion potentials
/// (reference weights damped by e^{-h_k - phi_{k+1}}), and the slope tables
/// of phi_k at the previous maturity's points.
struct CalibrationState {
    std::vector<MaturitySpec> specs;
    DiscreteMeasure mu0;
    std::vector<Vector> coefficients;
    std::vector<Potential> potentials;
    std::vector<RowMatrix> slopes;      // phi_k slopes at the step's source points
    std::vector<Vector> phi_values;     // phi_k values at those points
    std::vector<Matrix> basis_values;   // cached basis evaluations at each maturity's nodes
    double objective_value = 0.0;
    std::vector<Vector> model_price_values;
    std::vector<Vector> price_residuals;   // target - model price
    std::vector<Vector> forward_means;     // pushed-forward mean at each maturity
    CalibrationStatus status = CalibrationStatus::IterationLimit;
    std::optional<ArbitrageDiagnostics> diagnostics;

    Eigen::Index source_count(std::size_t m) const
    {
        return m == 0 ? mu0.size() : specs[m - 1].ref_nodes.size();
    }
    Vector source_point(std::size_t m, Eigen::Index s) const
    {
        return m == 0 ? mu0.atom(s) : specs[m - 1].ref_nodes.atom(s);
    }
};

namespace detail {

inline void cache_basis_values(CalibrationState& st)
{
    st.basis_values.clear();
    for (const auto& spec : st.specs) {
        Matrix vals(spec.ref_nodes.size(), static_cast<Eigen::Index>(spec.basis.size()));
        for (Eigen::Index j = 0; j < spec.ref_nodes.size(); ++j) {
            const Vector y = spec.ref_nodes.atom(j);
            for (std::size_t i = 0; i < spec.basis.size(); ++i)
                vals(j, static_cast<Eigen::Index>(i)) = spec.basis[i](y);
        }
        st.basis_values.push_back(std::move(vals));
    }
}

}  // namespace detail

inline CalibrationState make_calibration_state(std::vector<MaturitySpec> specs,
                                               DiscreteMeasure mu0)
{
    if (specs.empty()) throw std::invalid_argument("calibration: no maturities");
    const int n = specs.front().ref_nodes.dimension();
    double prev_t = 0.0;
    for (std::size_t m = 0; m < specs.size(); ++m) {
        if (specs[m].ref_nodes.dimension() != n)
            throw std::invalid_argument("calibration: mixed node dimensions");
        if (!(specs[m].time > prev_t))
            throw std::invalid_argument("calibration: maturities must be strictly increasing");
        prev_t = specs[m].time;
    }
    if (mu0.dimension() != n)
        throw std::invalid_argument("calibration: mu0 dimension mismatch");
    CalibrationState st{.specs = std::move(specs), .mu0 = std::move(mu0)};
    for (const auto& spec : st.specs)
        st.coefficients.push_back(Vector::Zero(spec.targets.size()));
    st.slopes.resize(st.specs.size());
    st.phi_values.resize(st.specs.size());
    detail::cache_basis_values(st);
    return st;
}

/// Rejects basis elements that are affine on the hull of the maturity's
/// reference nodes: their calibration direction is a flat (gauge) direction
/// of the objective. A call or cross qualifies when its kink hyperplane does
/// not separate the nodes.
inline void validate_basis(const MaturitySpec& spec)
{
    const int n = spec.ref_nodes.dimension();
    for (const auto& p : spec.basis) {
        if (p.min_dimension() > n)
            throw std::invalid_argument("basis payoff refers to axis beyond the node dimension");
        if (p.kind == Payoff::Kind::Affine)
            throw std::invalid_argument(
                "basis contains an affine payoff; affine prices are pinned by "
                "martingality and cannot be calibrated");
        const Vector nrm = p.kink_normal(n);
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (Eigen::Index j = 0; j < spec.ref_nodes.size(); ++j) {
            const double s = nrm.dot(spec.ref_nodes.atom(j)) - p.kink_offset();
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        if (!(lo < 0.0 && hi > 0.0))
            throw std::invalid_argument(
                "basis payoff is affine on the reference support (kink does not "
                "separate the nodes); move the strike strictly inside the domain");
    }
}

/// Backward recursion: from the last maturity down, build the potential with
/// offsets -h_k - phi_{k+1} at the maturity's own nodes and evaluate phi_k at
/// the previous maturity's points. Returns the dual objective
/// G = sum_k <targets_k, coeffs_k> - E_mu0[phi_1].
inline double backward_pass(CalibrationState& st, const CalibrationConfig& cfg = {})
{
    const std::size_t M = st.specs.size();
    Vector phi_next;  // phi_{m+1} at maturity m's nodes
    for (std::size_t mi = M; mi-- > 0;) {
        const MaturitySpec& spec = st.specs[mi];
        Vector f = st.basis_values[mi] * st.coefficients[mi];
        if (mi + 1 < M) f += phi_next;

        Potential pot(spec.ref_nodes, -f);
        const Eigen::Index ns = st.source_count(mi);
        const bool warm = st.slopes[mi].rows() == ns;
        RowMatrix slopes(ns, spec.ref_nodes.dimension());
        Vector values(ns);
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(ns));
        parallel_for(
            static_cast<std::size_t>(ns),
            [&](std::size_t b, std::size_t e) {
                for (std::size_t s = b; s < e; ++s) {
                    try {
                        std::optional<Vector> w0;
                        if (warm) w0 = st.slopes[mi].row(s).transpose();
                        const LegendreResult r =
                            pot.legendre(st.source_point(mi, s), cfg.inner, w0);
                        slopes.row(s) = r.slope.transpose();
                        values[s] = r.value;
                    } catch (...) {
                        errors[s] = std::current_exception();
                    }
                }
            },
            cfg.threads);
        for (std::size_t s = 0; s < errors.size(); ++s) {
            if (errors[s]) {
                try {
                    std::rethrow_exception(errors[s]);
                } catch (const OutsideHullError&) {
                    throw std::runtime_error(
                        "reference support inconsistency at maturity " + std::to_string(mi + 1) +
                        ", source point " + std::to_string(s) +
                        ": point lies outside the next reference hull");
                }
            }
        }

        if (st.potentials.size() < M) st.potentials.resize(M, pot);
        st.potentials[mi] = std::move(pot);
        st.slopes[mi] = std::move(slopes);
        st.phi_values[mi] = values;
        if (mi > 0) phi_next = std::move(values);
    }

    double g = 0.0;
    for (std::size_t mi = 0; mi < M; ++mi)
        g += st.specs[mi].targets.dot(st.coefficients[mi]);
    g -= st.mu0.weights().dot(st.phi_values[0]);
    st.objective_value = g;
    return g;
}

/// Forward pass: push mu0 through the kernel chain, renormalizing each row
/// (rows ~ effective nu-weight times e^{<slope, y>}), and price every basis
/// element under the maturity's pushed-forward weights.
inline void model_prices(CalibrationState& st, const CalibrationConfig& cfg = {})
{
    const std::size_t M = st.specs.size();
    st.model_price_values.assign(M, Vector());
    st.price_residuals.assign(M, Vector());
    st.forward_means.assign(M, Vector());
    Vector weights = st.mu0.weights();
    for (std::size_t mi = 0; mi < M; ++mi) {
        const MaturitySpec& spec = st.specs[mi];
        const Potential& pot = st.potentials[mi];
        const Eigen::Index ns = st.source_count(mi);
        const Eigen::Index nn = spec.ref_nodes.size();
        if (st.slopes[mi].rows() != ns)
            throw std::logic_error("model_prices: run backward_pass first");

        // Fixed-size chunks so the reduction order does not depend on the
        // thread count.
        const std::size_t chunk = 256;
        const std::size_t nchunks = (static_cast<std::size_t>(ns) + chunk - 1) / chunk;
        std::vector<Vector> partial(nchunks, Vector::Zero(nn));
        parallel_for(
            nchunks,
            [&](std::size_t cb, std::size_t ce) {
                for (std::size_t ci = cb; ci < ce; ++ci) {
                    Vector& acc = partial[ci];
                    const Eigen::Index s0 = static_cast<Eigen::Index>(ci * chunk);
                    const Eigen::Index s1 = std::min<Eigen::Index>(ns, s0 + chunk);
                    Vector row(nn);
                    for (Eigen::Index s = s0; s < s1; ++s) {
                        row = pot.log_effective() +
                              spec.ref_nodes.atoms() * st.slopes[mi].row(s).transpose();
                        const double m = row.maxCoeff();
                        row = (row.array() - m).exp().matrix();
                        acc += (weights[s] / row.sum()) * row;
                    }
                }
            },
            cfg.threads);
        Vector next = Vector::Zero(nn);
        for (const auto& p : partial) next += p;

        st.forward_means[mi] = spec.ref_nodes.atoms().transpose() * next;
        st.model_price_values[mi] = st.basis_values[mi].transpose() * next;
        st.price_residuals[mi] = spec.targets - st.model_price_values[mi];
        weights = std::move(next);
    }
}

/// dG/da_{ik} = target_{ik} - model price_{ik} (flattened across maturities).
inline Vector gradient(CalibrationState& st, const CalibrationConfig& cfg = {})
{
    model_prices(st, cfg);
    Eigen::Index total = 0;
    for (const auto& r : st.price_residuals) total += r.size();
    Vector g(total);
    Eigen::Index at = 0;
    for (const auto& r : st.price_residuals) {
        g.segment(at, r.size()) = r;
        at += r.size();
    }
    return g;
}

namespace detail {

inline void set_coefficients(CalibrationState& st, const Vector& x)
{
    Eigen::Index at = 0;
    for (auto& c : st.coefficients) {
        c = x.segment(at, c.size());
        at += c.size();
    }
}

inline Vector flatten_coefficients(const CalibrationState& st)
{
    Eigen::Index total = 0;
    for (const auto& c : st.coefficients) total += c.size();
    Vector x(total);
    Eigen::Index at = 0;
    for (const auto& c : st.coefficients) {
        x.segment(at, c.size()) = c;
        at += c.size();
    }
    return x;
}

// Asymptotic growth rate of G along a coefficient direction, via the grid
// envelope recursion g_k = h_k + conv(g_{k+1}); nonpositive slope certifies
// the non-coercive (calendar-arbitrage) direction.
inline ArbitrageDiagnostics divergence_diagnostics(const CalibrationState& st,
                                                   const Vector& x_over_norm,
                                                   const CalibrationConfig& cfg)
{
    ArbitrageDiagnostics diag;
    Eigen::Index at = 0;
    for (const auto& c : st.coefficients) {
        diag.direction.push_back(x_over_norm.segment(at, c.size()));
        at += c.size();
    }

    const auto& last_nodes = st.specs.back().ref_nodes;
    const int n = last_nodes.dimension();
    Vector lo(n), hi(n);
    for (int d = 0; d < n; ++d) {
        lo[d] = last_nodes.atoms().col(d).minCoeff();
        hi[d] = last_nodes.atoms().col(d).maxCoeff();
    }
    const int per_axis = n == 1 ? cfg.diag_grid : 33;
    GridDomain grid = GridDomain::uniform(lo, hi, per_axis);

    Vector g_next = Vector::Zero(grid.size());
    double price_part = 0.0;
    for (std::size_t mi = st.specs.size(); mi-- > 0;) {
        PayoffCombination h{st.specs[mi].basis, diag.direction[mi]};
        Vector vals = grid.sample([&](const Vector& y) { return h(y); }) + g_next;
        g_next = envelope_on_grid(grid, vals);
        price_part += st.specs[mi].targets.dot(diag.direction[mi]);
    }
    double mu0_part = 0.0;
    for (Eigen::Index i = 0; i < st.mu0.size(); ++i)
        mu0_part += st.mu0.weight(i) * hessmart::grid_interpolate(grid, g_next, st.mu0.atom(i));
    diag.asymptotic_slope = price_part - mu0_part;
    return diag;
}

}  // namespace detail

/// Joint convex minimization of G over all payoff coefficients by L-BFGS
/// with backtracking line search; inner Legendre solves are warm-started
/// from the previous outer iterate. Terminates when every price residual is
/// within price_tol. Unbounded coefficient growth is reported as suspected
/// calendar arbitrage together with the offending direction.
inline CalibrationState calibrate(std::vector<MaturitySpec> specs, DiscreteMeasure mu0,
                                  const CalibrationConfig& cfg = {})
{
    for (const auto& spec : specs) validate_basis(spec);
    CalibrationState st = make_calibration_state(std::move(specs), std::move(mu0));

    Vector x = detail::flatten_coefficients(st);
    if (x.size() == 0) {
        backward_pass(st, cfg);
        model_prices(st, cfg);
        st.status = CalibrationStatus::Converged;
        return st;
    }

    auto eval_g = [&](const Vector& xt) -> double {
        detail::set_coefficients(st, xt);
        try {
            return backward_pass(st, cfg);
        } catch (const ConvergenceError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    double f = eval_g(x);
    if (!std::isfinite(f)) throw std::runtime_error("calibrate: initial point infeasible");
    Vector g = gradient(st, cfg);

    std::deque<std::pair<Vector, Vector>> pairs;  // (s, y)
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
        if (g.cwiseAbs().maxCoeff() <= cfg.price_tol) {
            st.status = CalibrationStatus::Converged;
            return st;
        }
        if (x.cwiseAbs().maxCoeff() > cfg.coeff_limit) {
            st.status = CalibrationStatus::ArbitrageSuspected;
            st.diagnostics = detail::divergence_diagnostics(st, x / x.norm(), cfg);
            return st;
        }

        // Two-loop recursion.
        Vector d = -g;
        std::vector<double> alpha(pairs.size());
        for (std::size_t i = pairs.size(); i-- > 0;) {
            const auto& [s, y] = pairs[i];
            alpha[i] = s.dot(d) / s.dot(y);
            d -= alpha[i] * y;
        }
        if (!pairs.empty()) {
            const auto& [s, y] = pairs.back();
            d *= s.dot(y) / y.squaredNorm();
        }
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& [s, y] = pairs[i];
            const double beta = y.dot(d) / s.dot(y);
            d += (alpha[i] - beta) * s;
        }
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            d = -g;
            slope = -g.squaredNorm();
            pairs.clear();
        }

        double t = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Vector x_new;
        bool accepted = false;
        for (int ls = 0; ls < 50; ++ls) {
            x_new = x + t * d;
            f_new = eval_g(x_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            eval_g(x);  // restore state at the current iterate
            gradient(st, cfg);
            st.status = CalibrationStatus::IterationLimit;
            return st;
        }
        Vector g_new = gradient(st, cfg);
        Vector s = x_new - x;
        Vector yv = g_new - g;
        if (s.dot(yv) > 1e-12 * s.norm() * yv.norm()) {
            pairs.emplace_back(std::move(s), std::move(yv));
            if (static_cast<int>(pairs.size()) > cfg.lbfgs_memory) pairs.pop_front();
        }
        x = std::move(x_new);
        f = f_new;
        g = std::move(g_new);
    }
    st.status = CalibrationStatus::IterationLimit;
    return st;
}

/// Single-step calibration against a fully known earlier marginal. The same
/// dual machinery with one maturity and mu0 replaced by m1. Coercivity needs
/// the payoff space closed under lower convex envelopes, which generically
/// fails for n >= 2; in that case divergence is reported, not prevented.
inline CalibrationState calibrate_sequential(MaturitySpec spec, DiscreteMeasure m1,
                                             const CalibrationConfig& cfg = {})
{
    std::vector<MaturitySpec> specs;
    specs.push_back(std::move(spec));
    return calibrate(std::move(specs), std::move(m1), cfg);
}

}  // namespace hessmart
