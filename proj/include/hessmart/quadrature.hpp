#pragma once

#include "hessmart/measure.hpp"

#include <cmath>
#include <functional>

namespace hessmart {

struct QuadratureRule {
    Vector nodes;
    Vector weights;
};

/// Gauss-Legendre rule on [-1, 1] via Newton iteration on P_n.
inline QuadratureRule gauss_legendre(int n)
{
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (x * p0 - p1) / (x * x - 1.0);
            const double dx = p0 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * pp * pp);
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    return rule;
}

inline QuadratureRule gauss_legendre(int n, double a, double b)
{
    QuadratureRule rule = gauss_legendre(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    rule.nodes = (rule.nodes.array() * half + mid).matrix();
    rule.weights *= half;
    return rule;
}

/// Quadrature discretization of a 1-d density on [a, b]; weights are
/// normalized so the atoms form a probability measure.
inline DiscreteMeasure density_nodes(const std::function<double(double)>& density,
                                     double a, double b, int count)
{
    QuadratureRule rule = gauss_legendre(count, a, b);
    Vector w(count);
    for (int i = 0; i < count; ++i) w[i] = rule.weights[i] * density(rule.nodes[i]);
    const double total = w.sum();
    if (!(total > 0.0))
        throw std::invalid_argument("density_nodes: density has no mass on the range");
    w /= total;
    RowMatrix atoms(count, 1);
    atoms.col(0) = rule.nodes;
    return DiscreteMeasure(std::move(atoms), std::move(w), true);
}

/// Same, but with nodes placed geometrically via u = log y. Concentrates
/// nodes near zero and removes the power-law endpoint from the integrand.
inline DiscreteMeasure log_density_nodes(const std::function<double(double)>& density,
                                         double lo, double hi, int count)
{
    if (!(lo > 0.0 && hi > lo))
        throw std::invalid_argument("log_density_nodes: need 0 < lo < hi");
    QuadratureRule rule = gauss_legendre(count, std::log(lo), std::log(hi));
    Vector w(count);
    RowMatrix atoms(count, 1);
    for (int i = 0; i < count; ++i) {
        const double y = std::exp(rule.nodes[i]);
        atoms(i, 0) = y;
        w[i] = rule.weights[i] * density(y) * y;  // Jacobian dy = y du
    }
    const double total = w.sum();
    if (!(total > 0.0))
        throw std::invalid_argument("log_density_nodes: density has no mass on the range");
    w /= total;
    return DiscreteMeasure(std::move(atoms), std::move(w), true);
}

inline DiscreteMeasure normal_nodes(double mean, double variance, int count,
                                    double half_width_sigmas = 10.0)
{
    const double sd = std::sqrt(variance);
    return density_nodes(
        [mean, variance](double y) {
            const double z = y - mean;
            return std::exp(-0.5 * z * z / variance);
        },
        mean - half_width_sigmas * sd, mean + half_width_sigmas * sd, count);
}

/// Lognormal with E[Y] = forward and Var[log Y] = log_variance.
inline DiscreteMeasure lognormal_nodes(double forward, double log_variance, int count,
                                       double half_width_sigmas = 8.0)
{
    if (!(forward > 0.0 && log_variance > 0.0))
        throw std::invalid_argument("lognormal_nodes: forward and log_variance must be positive");
    const double s = std::sqrt(log_variance);
    const double mu = std::log(forward) - 0.5 * log_variance;
    return log_density_nodes(
        [mu, log_variance](double y) {
            const double z = std::log(y) - mu;
            return std::exp(-0.5 * z * z / log_variance) / y;
        },
        std::exp(mu - half_width_sigmas * s), std::exp(mu + half_width_sigmas * s), count);
}

/// Uniformly spaced nodes with uniform weights on [a, b].
inline DiscreteMeasure uniform_grid_nodes(double a, double b, int count)
{
    RowMatrix atoms(count, 1);
    for (int i = 0; i < count; ++i)
        atoms(i, 0) = count == 1 ? 0.5 * (a + b) : a + (b - a) * i / (count - 1);
    return DiscreteMeasure(std::move(atoms), Vector::Constant(count, 1.0 / count));
}

/// Tensor product of independent 1-d measures.
inline DiscreteMeasure product_measure(const std::vector<DiscreteMeasure>& axes)
{
    if (axes.empty()) throw std::invalid_argument("product_measure: no axes");
    Eigen::Index total = 1;
    for (const auto& m : axes) {
        if (m.dimension() != 1)
            throw std::invalid_argument("product_measure: axes must be 1-d");
        total *= m.size();
    }
    const int n = static_cast<int>(axes.size());
    RowMatrix atoms(total, n);
    Vector w = Vector::Ones(total);
    Eigen::Index repeat = total;
    for (int d = 0; d < n; ++d) {
        const auto& m = axes[d];
        repeat /= m.size();
        for (Eigen::Index i = 0; i < total; ++i) {
            const Eigen::Index j = (i / repeat) % m.size();
            atoms(i, d) = m.atoms()(j, 0);
            w[i] *= m.weight(j);
        }
    }
    return DiscreteMeasure(std::move(atoms), std::move(w), true);
}

}  // namespace hessmart
