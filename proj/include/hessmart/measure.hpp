#pragma once

#include "hessmart/common.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace hessmart {

/// Weighted atoms on R^n. Weights are validated and renormalized at
/// construction; instances are immutable afterwards and safe to share
/// across threads.
class DiscreteMeasure {
public:
    DiscreteMeasure(RowMatrix atoms, Vector weights, bool allow_zero_weights = false)
        : atoms_(std::move(atoms)), weights_(std::move(weights))
    {
        if (atoms_.rows() != weights_.size())
            throw std::invalid_argument("measure: atom and weight counts differ");
        if (atoms_.rows() == 0)
            throw std::invalid_argument("measure: empty atom set");
        for (Eigen::Index i = 0; i < weights_.size(); ++i) {
            const double w = weights_[i];
            if (!std::isfinite(w) || w < 0.0)
                throw std::invalid_argument("measure: weight " + std::to_string(i) +
                                            " is negative or non-finite");
            if (w == 0.0 && !allow_zero_weights)
                throw std::invalid_argument("measure: zero weight at atom " + std::to_string(i) +
                                            " (pass allow_zero_weights to permit)");
        }
        if (!atoms_.allFinite())
            throw std::invalid_argument("measure: non-finite atom coordinate");
        const double total = weights_.sum();
        if (std::abs(total - 1.0) > 1e-9)
            throw std::invalid_argument("measure: weights sum to " + std::to_string(total) +
                                        ", outside the 1e-9 renormalization band");
        if (std::abs(total - 1.0) > 1e-12) weights_ /= total;
    }

    static DiscreteMeasure dirac(const Vector& point)
    {
        RowMatrix a(1, point.size());
        a.row(0) = point.transpose();
        return DiscreteMeasure(std::move(a), Vector::Ones(1));
    }

    int dimension() const { return static_cast<int>(atoms_.cols()); }
    Eigen::Index size() const { return atoms_.rows(); }
    const RowMatrix& atoms() const { return atoms_; }
    const Vector& weights() const { return weights_; }
    Vector atom(Eigen::Index i) const { return atoms_.row(i).transpose(); }
    double weight(Eigen::Index i) const { return weights_[i]; }

    Vector mean() const { return atoms_.transpose() * weights_; }

    template <typename F>
    double expectation(F&& f) const
    {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < size(); ++i) {
            const double v = f(atom(i));
            if (!std::isfinite(v)) {
                std::ostringstream os;
                os << "expectation: non-finite value at atom " << i << " = [";
                for (int d = 0; d < dimension(); ++d) os << (d ? ", " : "") << atoms_(i, d);
                os << "]";
                throw std::runtime_error(os.str());
            }
            acc += weights_[i] * v;
        }
        return acc;
    }

    /// Dimension of the affine span of the positive-weight atoms
    /// (rank of the centered atom matrix, relative SVD cutoff 1e-10).
    int affine_hull_dimension() const
    {
        const RowMatrix pts = positive_weight_atoms();
        if (pts.rows() <= 1) return 0;
        Matrix centered = pts;
        const Vector c = pts.colwise().mean().transpose();
        centered.rowwise() -= c.transpose();
        Eigen::JacobiSVD<Matrix> svd(centered);
        const auto& s = svd.singularValues();
        if (s.size() == 0 || s[0] == 0.0) return 0;
        int rank = 0;
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s[i] > 1e-10 * s[0]) ++rank;
        return rank;
    }

    RowMatrix positive_weight_atoms() const
    {
        Eigen::Index count = 0;
        for (Eigen::Index i = 0; i < size(); ++i)
            if (weights_[i] > 0.0) ++count;
        RowMatrix pts(count, dimension());
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < size(); ++i)
            if (weights_[i] > 0.0) pts.row(r++) = atoms_.row(i);
        return pts;
    }

private:
    RowMatrix atoms_;
    Vector weights_;
};

/// Orthonormal frame of an affine subspace: x = base + basis * u.
struct AffineFrame {
    Vector base;    // point in R^n
    Matrix basis;   // n x d, orthonormal columns

    Vector project(const Vector& x) const { return basis.transpose() * (x - base); }
    Vector lift(const Vector& u) const { return base + basis * u; }
};

struct ReducedPair {
    DiscreteMeasure first;
    DiscreteMeasure second;
    AffineFrame frame;
};

namespace detail {

inline DiscreteMeasure project_measure(const DiscreteMeasure& m, const AffineFrame& frame)
{
    RowMatrix coords(m.size(), frame.basis.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i)
        coords.row(i) = frame.project(m.atom(i)).transpose();
    return DiscreteMeasure(std::move(coords), m.weights(), true);
}

}  // namespace detail

/// Re-expresses both measures in coordinates of the affine hull of the union
/// of their supports, returning the change-of-frame data for lifting results
/// back to ambient coordinates.
inline ReducedPair reduce_to_affine_hull(const DiscreteMeasure& m1, const DiscreteMeasure& m2)
{
    if (m1.dimension() != m2.dimension())
        throw std::invalid_argument("reduce_to_affine_hull: dimension mismatch");
    const RowMatrix p1 = m1.positive_weight_atoms();
    const RowMatrix p2 = m2.positive_weight_atoms();
    RowMatrix all(p1.rows() + p2.rows(), m1.dimension());
    all.topRows(p1.rows()) = p1;
    all.bottomRows(p2.rows()) = p2;

    AffineFrame frame;
    frame.base = all.colwise().mean().transpose();
    Matrix centered = all;
    centered.rowwise() -= frame.base.transpose();
    Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    int rank = 0;
    if (s.size() > 0 && s[0] > 0.0)
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s[i] > 1e-10 * s[0]) ++rank;
    frame.basis = svd.matrixV().leftCols(rank);

    return ReducedPair{detail::project_measure(m1, frame),
                       detail::project_measure(m2, frame), frame};
}

}  // namespace hessmart
