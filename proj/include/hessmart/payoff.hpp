#pragma once

#include "hessmart/lp.hpp"
#include "hessmart/measure.hpp"
#include "hessmart/potential.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hessmart {

/// European payoffs of at most linear growth: affine pieces a + <b,y>,
/// calls (<b,y> - K)^+, and FX-cross options (y_i - K y_j)^+.
struct Payoff {
    enum class Kind { Affine, Call, Cross };

    Kind kind = Kind::Affine;
    double constant = 0.0;   // affine constant, or strike for Call/Cross
    Vector slope;            // affine slope, or call axis weights
    int asset = -1;          // Cross: index of y_i
    int numeraire = -1;      // Cross: index of y_j

    static Payoff affine(double a, Vector b)
    {
        Payoff p;
        p.kind = Kind::Affine;
        p.constant = a;
        p.slope = std::move(b);
        if (!p.slope.allFinite() || !std::isfinite(a))
            throw std::invalid_argument("payoff: non-finite affine coefficients");
        return p;
    }

    static Payoff call(Vector weights, double strike)
    {
        Payoff p;
        p.kind = Kind::Call;
        p.constant = strike;
        p.slope = std::move(weights);
        if (!p.slope.allFinite() || !std::isfinite(strike))
            throw std::invalid_argument("payoff: non-finite call parameters");
        if (p.slope.isZero()) throw std::invalid_argument("payoff: call needs nonzero weights");
        return p;
    }

    static Payoff cross(int asset, int numeraire, double strike)
    {
        Payoff p;
        p.kind = Kind::Cross;
        p.asset = asset;
        p.numeraire = numeraire;
        p.constant = strike;
        if (asset < 0 || numeraire < 0 || asset == numeraire)
            throw std::invalid_argument("payoff: bad cross indices");
        if (!std::isfinite(strike)) throw std::invalid_argument("payoff: non-finite strike");
        return p;
    }

    int min_dimension() const
    {
        switch (kind) {
            case Kind::Affine:
            case Kind::Call: return static_cast<int>(slope.size());
            case Kind::Cross: return std::max(asset, numeraire) + 1;
        }
        return 0;
    }

    double operator()(const Vector& y) const
    {
        switch (kind) {
            case Kind::Affine: return constant + slope.dot(y);
            case Kind::Call: return std::max(0.0, slope.dot(y) - constant);
            case Kind::Cross: return std::max(0.0, y[asset] - constant * y[numeraire]);
        }
        return 0.0;
    }

    /// Recession value lim_{t->inf} f(t d)/t; piecewise linear in d.
    double recession(const Vector& d) const
    {
        switch (kind) {
            case Kind::Affine: return slope.dot(d);
            case Kind::Call: return std::max(0.0, slope.dot(d));
            case Kind::Cross: return std::max(0.0, d[asset] - constant * d[numeraire]);
        }
        return 0.0;
    }

    /// Normal of the kink hyperplane, if any.
    Vector kink_normal(int n) const
    {
        Vector v = Vector::Zero(n);
        switch (kind) {
            case Kind::Affine: break;
            case Kind::Call: v = slope; break;
            case Kind::Cross:
                v[asset] = 1.0;
                v[numeraire] = -constant;
                break;
        }
        return v;
    }

    double kink_offset() const { return kind == Kind::Call ? constant : 0.0; }
};

struct PayoffCombination {
    std::vector<Payoff> basis;
    Vector coefficients;

    PayoffCombination() = default;
    PayoffCombination(std::vector<Payoff> b, Vector c)
        : basis(std::move(b)), coefficients(std::move(c))
    {
        if (static_cast<Eigen::Index>(basis.size()) != coefficients.size())
            throw std::invalid_argument("payoff combination: length mismatch");
    }

    double operator()(const Vector& y) const
    {
        double v = 0.0;
        for (std::size_t i = 0; i < basis.size(); ++i) v += coefficients[i] * basis[i](y);
        return v;
    }

    double recession(const Vector& d) const
    {
        double v = 0.0;
        for (std::size_t i = 0; i < basis.size(); ++i)
            v += coefficients[i] * basis[i].recession(d);
        return v;
    }
};

/// Rectangular tensor grid on a box; nodes are indexed in row-major order
/// over the axes.
struct GridDomain {
    std::vector<Vector> axes;

    Eigen::Index size() const
    {
        Eigen::Index s = 1;
        for (const auto& ax : axes) s *= ax.size();
        return s;
    }
    int dimension() const { return static_cast<int>(axes.size()); }

    Vector node(Eigen::Index flat) const
    {
        Vector y(dimension());
        for (int d = dimension() - 1; d >= 0; --d) {
            y[d] = axes[d][flat % axes[d].size()];
            flat /= axes[d].size();
        }
        return y;
    }

    static GridDomain uniform(const Vector& lo, const Vector& hi, int per_axis)
    {
        GridDomain g;
        for (Eigen::Index d = 0; d < lo.size(); ++d) {
            Vector ax(per_axis);
            for (int i = 0; i < per_axis; ++i)
                ax[i] = per_axis == 1 ? 0.5 * (lo[d] + hi[d])
                                      : lo[d] + (hi[d] - lo[d]) * i / (per_axis - 1);
            g.axes.push_back(std::move(ax));
        }
        return g;
    }

    template <typename F>
    Vector sample(F&& f) const
    {
        Vector v(size());
        for (Eigen::Index i = 0; i < size(); ++i) v[i] = f(node(i));
        return v;
    }
};

/// Corner indices and weights for multilinear interpolation at x, clamped to
/// the grid box (out-of-grid points use the nearest cell).
inline void grid_corner_weights(const GridDomain& grid, const Vector& x,
                                std::vector<Eigen::Index>& flats, std::vector<double>& weights)
{
    const int n = grid.dimension();
    std::vector<Eigen::Index> base(n);
    std::vector<double> frac(n);
    std::vector<int> span(n);
    for (int d = 0; d < n; ++d) {
        const auto& ax = grid.axes[d];
        if (ax.size() == 1) {
            base[d] = 0;
            frac[d] = 0.0;
            span[d] = 0;
            continue;
        }
        Eigen::Index i = 0;
        while (i + 2 < ax.size() && ax[i + 1] <= x[d]) ++i;
        base[d] = i;
        const double w = ax[i + 1] - ax[i];
        frac[d] = std::clamp(w > 0 ? (x[d] - ax[i]) / w : 0.0, 0.0, 1.0);
        span[d] = 1;
    }
    std::vector<Eigen::Index> strides(n, 1);
    for (int d = n - 2; d >= 0; --d) strides[d] = strides[d + 1] * grid.axes[d + 1].size();
    flats.clear();
    weights.clear();
    for (int corner = 0; corner < (1 << n); ++corner) {
        double w = 1.0;
        Eigen::Index flat = 0;
        bool skip = false;
        for (int d = 0; d < n; ++d) {
            const bool hi = corner & (1 << d);
            if (hi && span[d] == 0) {
                skip = true;
                break;
            }
            w *= hi ? frac[d] : 1.0 - frac[d];
            flat += (base[d] + (hi ? 1 : 0)) * strides[d];
        }
        if (skip || w == 0.0) continue;
        flats.push_back(flat);
        weights.push_back(w);
    }
}

inline double grid_interpolate(const GridDomain& grid, const Vector& values, const Vector& x)
{
    std::vector<Eigen::Index> flats;
    std::vector<double> weights;
    grid_corner_weights(grid, x, flats, weights);
    double acc = 0.0;
    for (std::size_t i = 0; i < flats.size(); ++i) acc += weights[i] * values[flats[i]];
    return acc;
}

namespace detail {

// Per-axis slope sets: sorted unique consecutive finite differences along
// every grid line of that axis. The biconjugate restricted to this slope set
// is exact on convex grid functions in 1-d.
inline std::vector<Vector> slope_grids(const GridDomain& grid, const Vector& values)
{
    const int n = grid.dimension();
    std::vector<Vector> out(n);
    std::vector<Eigen::Index> strides(n, 1);
    for (int d = n - 2; d >= 0; --d)
        strides[d] = strides[d + 1] * grid.axes[d + 1].size();
    for (int d = 0; d < n; ++d) {
        std::set<double> slopes;
        const Eigen::Index len = grid.axes[d].size();
        const Eigen::Index total = grid.size();
        for (Eigen::Index flat = 0; flat < total; ++flat) {
            const Eigen::Index pos = (flat / strides[d]) % len;
            if (pos + 1 >= len) continue;
            const double dy = grid.axes[d][pos + 1] - grid.axes[d][pos];
            slopes.insert((values[flat + strides[d]] - values[flat]) / dy);
        }
        if (slopes.empty()) slopes.insert(0.0);
        std::vector<double> sorted(slopes.begin(), slopes.end());
        // In several dimensions the tensor k-grid grows multiplicatively;
        // subsample each axis evenly (1-d keeps the full, exact set).
        const std::size_t cap = 96;
        if (n >= 2 && sorted.size() > cap) {
            std::vector<double> sub;
            sub.reserve(cap);
            for (std::size_t i = 0; i < cap; ++i)
                sub.push_back(sorted[i * (sorted.size() - 1) / (cap - 1)]);
            sorted = std::move(sub);
        }
        Vector ax(static_cast<Eigen::Index>(sorted.size()));
        for (std::size_t i = 0; i < sorted.size(); ++i) ax[i] = sorted[i];
        out[d] = std::move(ax);
    }
    return out;
}

}  // namespace detail

/// Double discrete Legendre transform of grid samples: the largest
/// max-of-affines minorant representable with the observed slope set.
/// Result <= input pointwise and is convex along grid lines.
inline Vector envelope_on_grid(const GridDomain& grid, const Vector& values)
{
    if (values.size() != grid.size())
        throw std::invalid_argument("envelope_on_grid: value count mismatch");
    const std::vector<Vector> kaxes = detail::slope_grids(grid, values);
    GridDomain kgrid{kaxes};
    const Eigen::Index nk = kgrid.size();
    const Eigen::Index ny = grid.size();

    Matrix nodes(ny, grid.dimension());
    for (Eigen::Index i = 0; i < ny; ++i) nodes.row(i) = grid.node(i).transpose();

    Vector psi(nk);
    for (Eigen::Index q = 0; q < nk; ++q) {
        const Vector k = kgrid.node(q);
        psi[q] = (nodes * k - values).maxCoeff();
    }
    Vector env(ny);
    Matrix knodes(nk, grid.dimension());
    for (Eigen::Index q = 0; q < nk; ++q) knodes.row(q) = kgrid.node(q).transpose();
    for (Eigen::Index i = 0; i < ny; ++i)
        env[i] = (knodes * nodes.row(i).transpose() - psi).maxCoeff();
    return env;
}

enum class DomainCone { Bounded, Full, NonNegative };

/// Whether h admits an affine minorant on an unbounded domain: tests for a
/// slope b with <b, d> <= recession_h(d) over sampled recession directions
/// (payoff kink normals, axes, and a deterministic sweep), via a small LP.
inline bool has_affine_minorant(const PayoffCombination& h, int dimension, DomainCone cone)
{
    if (cone == DomainCone::Bounded) return true;
    std::vector<Vector> dirs;
    auto push = [&](Vector d) {
        if (d.norm() == 0.0) return;
        d.normalize();
        if (cone == DomainCone::NonNegative && d.minCoeff() < -1e-14) return;
        dirs.push_back(std::move(d));
    };
    for (int i = 0; i < dimension; ++i) {
        Vector e = Vector::Zero(dimension);
        e[i] = 1.0;
        push(e);
        if (cone == DomainCone::Full) push(-e);
    }
    for (const auto& p : h.basis) {
        Vector v = p.kink_normal(dimension);
        push(v);
        if (cone == DomainCone::Full) push(-v);
    }
    if (dimension == 2) {  // dense sweep of the circle / quarter circle
        const int steps = 720;
        for (int s = 0; s < steps; ++s) {
            const double th = 2.0 * M_PI * s / steps;
            Vector d(2);
            d << std::cos(th), std::sin(th);
            push(d);
        }
    }

    // Feasibility of <b, d_s> <= R(d_s): slack form with b = b+ - b-.
    const Eigen::Index m = static_cast<Eigen::Index>(dirs.size());
    const Eigen::Index nv = 2 * dimension + m;
    Matrix A = Matrix::Zero(m, nv);
    Vector rhs(m);
    for (Eigen::Index s = 0; s < m; ++s) {
        A.block(s, 0, 1, dimension) = dirs[s].transpose();
        A.block(s, dimension, 1, dimension) = -dirs[s].transpose();
        A(s, 2 * dimension + s) = 1.0;
        rhs[s] = h.recession(dirs[s]);
    }
    return lp_feasible_point(A, rhs, 1e-9).has_value();
}

struct EnvelopeResult {
    bool has_minorant = true;
    Vector values;  // empty when has_minorant is false
};

/// Lower convex envelope of a payoff combination sampled on a rectangular
/// grid. On an unbounded domain a missing affine minorant means the envelope
/// is identically -inf, which is signalled instead of computed.
inline EnvelopeResult lower_convex_envelope(const PayoffCombination& h, const GridDomain& grid,
                                            DomainCone cone = DomainCone::Bounded)
{
    EnvelopeResult out;
    if (!has_affine_minorant(h, grid.dimension(), cone)) {
        out.has_minorant = false;
        return out;
    }
    out.values = envelope_on_grid(grid, grid.sample([&](const Vector& y) { return h(y); }));
    return out;
}

/// psi_r(k) = (1/r) log sum_j w_j exp(r(<k,y_j> - h_j)); nondecreasing in r.
inline double psi_r(const DiscreteMeasure& ref, const Vector& hvals, double r, const Vector& k)
{
    Vector s = ref.atoms() * k - hvals;
    s = (r * s.array() + ref.weights().array().log()).matrix();
    const double m = s.maxCoeff();
    return (m + std::log((s.array() - m).exp().sum())) / r;
}

struct EnvelopeLimitReport {
    Vector r_schedule;
    Matrix phi_over_r;           // (#probes) x (#r): (1/r) phi_{rh} at each probe
    Vector grid_envelope;        // envelope at the probes (interpolated)
    Vector terminal_gap;         // |phi/r at last r - grid envelope|
    bool psi_monotone = false;   // psi_r nondecreasing in r at the probe tilts
    bool phi_ratio_nonincreasing = false;
};

/// Tracks (1/r) phi_{rh} at probe points against the grid envelope. The
/// dual log-partition psi_r rises with r, so the ratio falls to the envelope
/// from above.
inline EnvelopeLimitReport envelope_limit_check(const PayoffCombination& h,
                                                const DiscreteMeasure& ref,
                                                const std::vector<Vector>& probes,
                                                Vector r_schedule = Vector(),
                                                const LegendreConfig& cfg = {})
{
    if (r_schedule.size() == 0) {
        r_schedule.resize(4);
        r_schedule << 1.0, 10.0, 100.0, 1000.0;
    }
    EnvelopeLimitReport rep;
    rep.r_schedule = r_schedule;
    const Eigen::Index np = static_cast<Eigen::Index>(probes.size());
    rep.phi_over_r.resize(np, r_schedule.size());

    Vector hvals(ref.size());
    for (Eigen::Index j = 0; j < ref.size(); ++j) hvals[j] = h(ref.atom(j));

    for (Eigen::Index ri = 0; ri < r_schedule.size(); ++ri) {
        const double r = r_schedule[ri];
        Potential pot(ref, -r * hvals);
        for (Eigen::Index p = 0; p < np; ++p)
            rep.phi_over_r(p, ri) = pot.legendre(probes[p], cfg).value / r;
    }

    // 1-d grid envelope over the node range, interpolated at the probes.
    if (ref.dimension() == 1) {
        const double lo = ref.atoms().col(0).minCoeff();
        const double hi = ref.atoms().col(0).maxCoeff();
        GridDomain grid = GridDomain::uniform(Vector::Constant(1, lo), Vector::Constant(1, hi), 2001);
        Vector env = envelope_on_grid(grid, grid.sample([&](const Vector& y) { return h(y); }));
        rep.grid_envelope.resize(np);
        for (Eigen::Index p = 0; p < np; ++p) {
            const double x = probes[p][0];
            const auto& ax = grid.axes[0];
            Eigen::Index i = std::min<Eigen::Index>(
                ax.size() - 2, std::max<Eigen::Index>(
                                   0, static_cast<Eigen::Index>((x - lo) / (hi - lo) * (ax.size() - 1))));
            const double t = (x - ax[i]) / (ax[i + 1] - ax[i]);
            rep.grid_envelope[p] = (1.0 - t) * env[i] + t * env[i + 1];
        }
        rep.terminal_gap =
            (rep.phi_over_r.col(r_schedule.size() - 1) - rep.grid_envelope).cwiseAbs();
    }

    // Monotonicity checks: psi_r up, phi/r down.
    bool psi_ok = true;
    for (const auto& probe : probes) {
        for (Eigen::Index ri = 0; ri + 1 < r_schedule.size(); ++ri) {
            if (psi_r(ref, hvals, r_schedule[ri + 1], probe) <
                psi_r(ref, hvals, r_schedule[ri], probe) - 1e-12)
                psi_ok = false;
        }
    }
    rep.psi_monotone = psi_ok;
    bool phi_ok = true;
    for (Eigen::Index p = 0; p < np; ++p)
        for (Eigen::Index ri = 0; ri + 1 < r_schedule.size(); ++ri)
            if (rep.phi_over_r(p, ri + 1) > rep.phi_over_r(p, ri) + 1e-9) phi_ok = false;
    rep.phi_ratio_nonincreasing = phi_ok;
    return rep;
}

}  // namespace hessmart
