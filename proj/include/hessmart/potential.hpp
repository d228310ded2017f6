#pragma once

#include "hessmart/measure.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace hessmart {

struct LegendreConfig {
    double tol = 1e-10;    // on the moment residual, scaled by 1 + |x|
    double k_max = 1e8;    // slope norm beyond which the target is declared outside the hull
    int max_iter = 200;
};

struct LegendreResult {
    double value = 0.0;    // phi(x)
    Vector slope;          // k* = grad phi(x)
    Matrix covariance;     // H(psi)(k*), the local covariance g^{-1}(x)
    int iterations = 0;
    double residual = 0.0;
};

class OutsideHullError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& msg, double residual)
        : std::runtime_error(msg), residual(residual) {}
    double residual;
};

/// A reference measure nu together with its log-partition function
/// psi(k) = log sum_j w_j e^{offset_j + <k, y_j>}, its tilted moments, and the
/// Legendre transform phi = psi*. Per-atom log offsets house exponential
/// reweightings of nu without ever exponentiating them globally; the max
/// offset is subtracted before any sum. psi(0) equals the log of the total
/// effective mass, which is tracked, not assumed zero.
class Potential {
public:
    explicit Potential(DiscreteMeasure nu, Vector offsets = Vector())
        : nu_(std::move(nu))
    {
        if (offsets.size() == 0) offsets = Vector::Zero(nu_.size());
        if (offsets.size() != nu_.size())
            throw std::invalid_argument("potential: offset count mismatch");
        log_eff_.resize(nu_.size());
        bool any_finite = false;
        for (Eigen::Index j = 0; j < nu_.size(); ++j) {
            if (std::isnan(offsets[j]) || offsets[j] == std::numeric_limits<double>::infinity())
                throw std::invalid_argument("potential: offset " + std::to_string(j) +
                                            " is NaN or +inf");
            const double w = nu_.weight(j);
            log_eff_[j] = w > 0.0 ? std::log(w) + offsets[j]
                                  : -std::numeric_limits<double>::infinity();
            if (std::isfinite(log_eff_[j])) any_finite = true;
        }
        if (!any_finite)
            throw std::invalid_argument("potential: all effective weights vanish");
        offsets_ = std::move(offsets);
    }

    const DiscreteMeasure& nu() const { return nu_; }
    const Vector& offsets() const { return offsets_; }
    const Vector& log_effective() const { return log_eff_; }
    int dimension() const { return nu_.dimension(); }

    double log_mgf(const Vector& k) const
    {
        Vector s = scores(k);
        const double m = s.maxCoeff();
        if (!std::isfinite(m)) throw std::domain_error("log_mgf: all effective weights zero");
        return m + std::log((s.array() - m).exp().sum());
    }

    Vector grad_log_mgf(const Vector& k) const
    {
        Vector pi = tilted_probabilities(k);
        return nu_.atoms().transpose() * pi;
    }

    Matrix hess_log_mgf(const Vector& k) const
    {
        Vector pi = tilted_probabilities(k);
        return tilted_covariance(pi);
    }

    /// Tilted probabilities pi_j(k) over the atoms of nu.
    Vector tilted_probabilities(const Vector& k) const
    {
        Vector s = scores(k);
        const double m = s.maxCoeff();
        if (!std::isfinite(m))
            throw std::domain_error("tilted_probabilities: all effective weights zero");
        Vector p = (s.array() - m).exp().matrix();
        return p / p.sum();
    }

    /// phi(x) = sup_k (<x,k> - psi(k)) by damped Newton with backtracking.
    LegendreResult legendre(const Vector& x, const LegendreConfig& cfg = {},
                            std::optional<Vector> warm_start = std::nullopt) const
    {
        const int n = dimension();
        if (x.size() != n) throw std::invalid_argument("legendre: dimension mismatch");
        Vector k = warm_start ? *warm_start : Vector::Zero(n);
        const double scale = 1.0 + x.norm();

        double psi = 0.0;
        Vector grad(n);
        Matrix hess(n, n);
        if (!try_evaluate(k, psi, grad, hess))
            throw std::domain_error("legendre: psi not finite at the starting tilt");
        double obj = psi - x.dot(k);
        Vector residual = x - grad;

        int it = 0;
        for (; it < cfg.max_iter; ++it) {
            if (residual.norm() <= cfg.tol * scale) break;
            if (k.norm() > cfg.k_max)
                throw OutsideHullError("legendre: target outside support hull (|k| > k_max)");

            // Levenberg damping from 1e-12, growing x10 while the factorization fails.
            Vector step;
            double lambda = 0.0;
            while (true) {
                Matrix h = hess;
                if (lambda > 0.0) h.diagonal().array() += lambda;
                Eigen::LLT<Matrix> llt(h);
                if (llt.info() == Eigen::Success) {
                    step = llt.solve(residual);
                    if (step.allFinite()) break;
                }
                lambda = lambda == 0.0 ? 1e-12 : lambda * 10.0;
                if (lambda > 1e20)
                    throw ConvergenceError("legendre: Hessian unusable", residual.norm());
            }

            // Backtracking line search on psi(k) - <x,k>.
            const double slope = -residual.dot(step);
            double t = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < 60; ++ls) {
                Vector trial = k + t * step;
                double psi_t;
                Vector grad_t(n);
                Matrix hess_t(n, n);
                if (try_evaluate(trial, psi_t, grad_t, hess_t)) {
                    const double obj_t = psi_t - x.dot(trial);
                    if (obj_t <= obj + 1e-4 * t * slope) {
                        k = std::move(trial);
                        psi = psi_t;
                        grad = std::move(grad_t);
                        hess = std::move(hess_t);
                        obj = obj_t;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if (!accepted)
                throw ConvergenceError("legendre: line search failed", residual.norm());
            residual = x - grad;
        }
        if (residual.norm() > cfg.tol * scale) {
            if (k.norm() > cfg.k_max)
                throw OutsideHullError("legendre: target outside support hull (|k| > k_max)");
            throw ConvergenceError("legendre: no convergence in " +
                                       std::to_string(cfg.max_iter) +
                                       " iterations, residual " + std::to_string(residual.norm()),
                                   residual.norm());
        }

        LegendreResult out;
        out.value = x.dot(k) - psi;
        out.slope = std::move(k);
        out.covariance = std::move(hess);
        out.iterations = it;
        out.residual = residual.norm();
        return out;
    }

    Matrix covariance_at(const Vector& x, const LegendreConfig& cfg = {}) const
    {
        return legendre(x, cfg).covariance;
    }

private:
    Vector scores(const Vector& k) const
    {
        if (k.size() != dimension()) throw std::invalid_argument("potential: dimension mismatch");
        if (!k.allFinite()) throw std::invalid_argument("potential: non-finite tilt");
        return nu_.atoms() * k + log_eff_;
    }

    bool try_evaluate(const Vector& k, double& psi, Vector& grad, Matrix& hess) const
    {
        Vector s = scores(k);
        const double m = s.maxCoeff();
        if (!std::isfinite(m)) return false;
        Vector p = (s.array() - m).exp().matrix();
        const double z = p.sum();
        if (!(z > 0.0) || !std::isfinite(z)) return false;
        psi = m + std::log(z);
        p /= z;
        grad = nu_.atoms().transpose() * p;
        RowMatrix centered = nu_.atoms();
        centered.rowwise() -= grad.transpose();
        hess = centered.transpose() * p.asDiagonal() * centered;
        return psi == psi;
    }

    DiscreteMeasure nu_;
    Vector offsets_;
    Vector log_eff_;
};

}  // namespace hessmart
