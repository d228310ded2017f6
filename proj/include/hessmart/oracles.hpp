#pragma once

#include "hessmart/quadrature.hpp"

#include <cmath>

namespace hessmart {
namespace oracles {

/// Constant-volatility family on R: psi(k) = dt k^2 / 2, phi(x) = x^2 / (2 dt),
/// reference measure N(0, dt), kernel N(x, dt).
struct NormalFamily {
    double dt;

    explicit NormalFamily(double dt_) : dt(dt_)
    {
        if (!(dt > 0.0)) throw std::invalid_argument("normal family: dt must be positive");
    }

    double x_star() const { return 0.0; }
    double psi(double k) const { return 0.5 * dt * k * k; }
    double phi(double x) const { return 0.5 * x * x / dt; }
    double slope(double x) const { return x / dt; }
    double variance(double x) const { (void)x; return dt; }

    /// Quadrature of nu covering tilts whose means fall in [x_lo, x_hi].
    DiscreteMeasure reference_nodes(int count = 512, double x_lo = -4.0, double x_hi = 4.0,
                                    double cover = 10.0) const
    {
        const double sd = std::sqrt(dt);
        return density_nodes([this](double y) { return std::exp(-0.5 * y * y / dt); },
                             x_lo - cover * sd, x_hi + cover * sd, count);
    }

    DiscreteMeasure kernel(double x, int count = 512) const
    {
        return normal_nodes(x, dt, count);
    }
};

/// Lognormal-volatility family on (0, inf): sigma(x) = x. The reference
/// measure is the gamma law with shape 1/dt and scale dt; the kernel at x is
/// gamma with shape 1/dt and scale x dt. Omega* = (-inf, 1/dt).
struct LogNormalFamily {
    double dt;

    explicit LogNormalFamily(double dt_) : dt(dt_)
    {
        if (!(dt > 0.0)) throw std::invalid_argument("lognormal family: dt must be positive");
    }

    double x_star() const { return 1.0; }

    double psi(double k) const
    {
        if (!(k < 1.0 / dt)) throw std::domain_error("lognormal family: k outside (-inf, 1/dt)");
        return -std::log1p(-k * dt) / dt;
    }

    double phi(double x) const
    {
        if (!(x > 0.0)) throw std::domain_error("lognormal family: x must be positive");
        return (-std::log(x) + x - 1.0) / dt;
    }

    double slope(double x) const { return (1.0 - 1.0 / x) / dt; }
    double variance(double x) const { return dt * x * x; }

    static DiscreteMeasure gamma_nodes(double shape, double scale, int count, double hi)
    {
        // Lower cutoff from P(Y < y) ~ (y/scale)^shape / Gamma(shape+1).
        const double lo =
            scale * std::exp((std::log(1e-14) + std::lgamma(shape + 1.0)) / shape);
        return log_density_nodes(
            [shape, scale](double y) {
                return std::exp((shape - 1.0) * std::log(y) - y / scale);
            },
            std::min(lo, 0.5 * hi), hi, count);
    }

    DiscreteMeasure reference_nodes(int count = 512, double x_hi = 4.0) const
    {
        // Tilting at slope(x) turns the scale into x dt; cover those tails.
        const double hi = x_hi * (1.0 + 14.0 * std::sqrt(dt)) + 14.0 * dt;
        return gamma_nodes(1.0 / dt, dt, count, hi);
    }

    DiscreteMeasure kernel(double x, int count = 512) const
    {
        if (!(x > 0.0)) throw std::domain_error("lognormal family: x outside state space");
        const double scale = x * dt;
        const double hi = scale * (1.0 / dt + 14.0 / std::sqrt(dt) + 14.0);
        return gamma_nodes(1.0 / dt, scale, count, hi);
    }
};

/// Square-root-volatility family: Markov chain on dt * N_0 with Poisson
/// transition counts; 0 is the only absorbing state.
struct PoissonFamily {
    double dt;

    explicit PoissonFamily(double dt_) : dt(dt_)
    {
        if (!(dt > 0.0)) throw std::invalid_argument("poisson family: dt must be positive");
    }

    double x_star() const { return 1.0; }
    double psi(double k) const { return std::expm1(k * dt) / dt; }

    double phi(double x) const
    {
        if (x < 0.0) throw std::domain_error("poisson family: x must be nonnegative");
        if (x == 0.0) return 1.0 / dt;
        return (x * std::log(x) - x + 1.0) / dt;
    }

    double slope(double x) const { return std::log(x) / dt; }
    double variance(double x) const { return x * dt; }

    DiscreteMeasure reference_nodes(double rate_cover = 12.0) const
    {
        return poisson_atoms(1.0 / dt, rate_cover);
    }

    DiscreteMeasure kernel(double x, double rate_cover = 12.0) const
    {
        if (x < 0.0) throw std::domain_error("poisson family: x outside state space");
        const double steps = x / dt;
        if (std::abs(steps - std::round(steps)) > 1e-9)
            throw std::domain_error("poisson family: x outside the state space dt*N0");
        if (x == 0.0) return DiscreteMeasure::dirac(Vector::Zero(1));
        return poisson_atoms(x / dt, rate_cover);
    }

private:
    DiscreteMeasure poisson_atoms(double rate, double cover) const
    {
        const int nmax =
            static_cast<int>(std::ceil(rate + cover * std::sqrt(rate) + 20.0));
        RowMatrix atoms(nmax + 1, 1);
        Vector logw(nmax + 1);
        for (int m = 0; m <= nmax; ++m) {
            atoms(m, 0) = m * dt;
            logw[m] = -rate + m * std::log(rate) - std::lgamma(m + 1.0);
        }
        Vector w = (logw.array() - logw.maxCoeff()).exp().matrix();
        w /= w.sum();
        return DiscreteMeasure(std::move(atoms), std::move(w), true);
    }
};

/// Two-state entropy family on (0,1) with dt = 1/N: binomial Markov chain on
/// {0, 1/N, ..., 1}; both endpoints absorb. The gauge point q enters psi and
/// phi but not the kernel.
struct BernoulliFamily {
    double q;
    int N;

    BernoulliFamily(double q_, int N_) : q(q_), N(N_)
    {
        if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("bernoulli family: q in (0,1)");
        if (N < 1) throw std::invalid_argument("bernoulli family: N must be positive");
    }

    double dt() const { return 1.0 / N; }
    double x_star() const { return q; }

    double psi(double k) const
    {
        // N log((1-q) + q e^{k/N}), stabilized for large |k|.
        const double t = k / N;
        const double m = std::max(0.0, t);
        return N * (m + std::log((1.0 - q) * std::exp(-m) + q * std::exp(t - m)));
    }

    double phi(double x) const
    {
        if (!(x > 0.0 && x < 1.0)) throw std::domain_error("bernoulli family: x outside (0,1)");
        return N * (x * std::log(x / q) + (1.0 - x) * std::log((1.0 - x) / (1.0 - q)));
    }

    double slope(double x) const { return N * (std::log(x / q) - std::log((1.0 - x) / (1.0 - q))); }
    double variance(double x) const { return x * (1.0 - x) / N; }

    DiscreteMeasure reference_nodes() const { return binomial_atoms(q); }

    DiscreteMeasure kernel(double x) const
    {
        if (!(x >= 0.0 && x <= 1.0))
            throw std::domain_error("bernoulli family: x outside [0,1]");
        if (x == 0.0) return DiscreteMeasure::dirac(Vector::Zero(1));
        if (x == 1.0) return DiscreteMeasure::dirac(Vector::Ones(1));
        return binomial_atoms(x);
    }

private:
    DiscreteMeasure binomial_atoms(double p) const
    {
        RowMatrix atoms(N + 1, 1);
        Vector logw(N + 1);
        for (int m = 0; m <= N; ++m) {
            atoms(m, 0) = static_cast<double>(m) / N;
            logw[m] = std::lgamma(N + 1.0) - std::lgamma(m + 1.0) - std::lgamma(N - m + 1.0) +
                      m * std::log(p) + (N - m) * std::log1p(-p);
        }
        Vector w = (logw.array() - logw.maxCoeff()).exp().matrix();
        w /= w.sum();
        return DiscreteMeasure(std::move(atoms), std::move(w), true);
    }
};

/// Two-dimensional stochastic-volatility extension of CEV:
/// phi(u,v) = -u^{2-2b}(v+c)^{2b-1} / ((2-2b)(2b-1) s^2) - log(v)/a^2.
/// The closed-form covariance must equal the inverse Hessian of phi.
struct StochVol2D {
    double beta, sigma, alpha, c;

    StochVol2D(double beta_, double sigma_, double alpha_, double c_)
        : beta(beta_), sigma(sigma_), alpha(alpha_), c(c_)
    {
        if (beta == 0.5 || beta == 1.0)
            throw std::invalid_argument("stochvol2d: beta in {1/2, 1} excluded");
        if (!(sigma > 0.0) || !(alpha > 0.0))
            throw std::invalid_argument("stochvol2d: sigma and alpha must be positive");
    }

    void check_domain(double u, double v) const
    {
        if (!(u > 0.0 && v > 0.0 && v + c > 0.0))
            throw std::domain_error("stochvol2d: need u > 0, v > 0, v + c > 0");
    }

    double phi(double u, double v) const
    {
        check_domain(u, v);
        return -std::pow(u, 2.0 - 2.0 * beta) * std::pow(v + c, 2.0 * beta - 1.0) /
                   ((2.0 - 2.0 * beta) * (2.0 * beta - 1.0) * sigma * sigma) -
               std::log(v) / (alpha * alpha);
    }

    Matrix hessian(double u, double v) const
    {
        check_domain(u, v);
        const double s2 = sigma * sigma;
        Matrix h(2, 2);
        h(0, 0) = std::pow(u, -2.0 * beta) * std::pow(v + c, 2.0 * beta - 1.0) / s2;
        h(0, 1) = -std::pow(u, 1.0 - 2.0 * beta) * std::pow(v + c, 2.0 * beta - 2.0) / s2;
        h(1, 0) = h(0, 1);
        h(1, 1) = std::pow(u, 2.0 - 2.0 * beta) * std::pow(v + c, 2.0 * beta - 3.0) / s2 +
                  1.0 / (alpha * alpha * v * v);
        return h;
    }

    Matrix covariance(double u, double v) const
    {
        check_domain(u, v);
        const double r = u / (v + c);
        Matrix cov(2, 2);
        cov(0, 0) = alpha * alpha * r * r * v * v +
                    sigma * sigma * std::pow(r, 2.0 * beta) * (v + c);
        cov(0, 1) = alpha * alpha * r * v * v;
        cov(1, 0) = cov(0, 1);
        cov(1, 1) = alpha * alpha * v * v;
        return cov;
    }

    double rho_squared(double u, double v) const
    {
        const Matrix cov = covariance(u, v);
        return cov(0, 1) * cov(0, 1) / (cov(0, 0) * cov(1, 1));
    }
};

/// Density of exp(Z - 1/2), Z standard normal: the unit-forward lognormal
/// used by the local-correlation counterexample constant.
inline double driftless_lognormal_density(double y)
{
    if (!(y > 0.0)) return 0.0;
    const double t = std::log(y) + 0.5;
    return std::exp(-0.5 * t * t) / (y * std::sqrt(2.0 * M_PI));
}

}  // namespace oracles
}  // namespace hessmart
