#pragma once

#include "rkhstest/types.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <limits>

namespace rkhstest {

/// Eigen-decomposition of a symmetric PSD matrix, computed once and shared by
/// budget solving, ridge fits and projections on the same Gram.
class SymmetricEigen {
public:
    SymmetricEigen() = default;

    explicit SymmetricEigen(MatrixRef gram) {
        if (gram.rows() != gram.cols()) { throw Error(ErrorKind::dimension_mismatch, "Gram matrix must be square"); }
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
        if (es.info() != Eigen::Success) { throw Error(ErrorKind::numerical, "symmetric eigen-solver failed"); }
        values_ = es.eigenvalues();
        vectors_ = es.eigenvectors();
        const double top = values_.size() ? std::max(values_.maxCoeff(), 0.0) : 0.0;
        rank_tol_ = top * static_cast<double>(values_.size()) * std::numeric_limits<double>::epsilon();
    }

    /// Ascending eigenvalues.
    [[nodiscard]] const Vector &values() const { return values_; }
    [[nodiscard]] const Matrix &vectors() const { return vectors_; }
    [[nodiscard]] Index size() const { return values_.size(); }

    /// Eigenvalues at or below this are treated as zero by pseudo-inverse paths.
    [[nodiscard]] double rank_tol() const { return rank_tol_; }

    /// Eigenvalue i with numerically-zero (or negative) values set to 0.
    [[nodiscard]] double kappa(Index i) const { return values_[i] > rank_tol_ ? values_[i] : 0.0; }

private:
    Vector values_;
    Matrix vectors_;
    double rank_tol_ = 0.0;
};

/// Minimizer of |W (rhs - a x)|^2 with minimum norm, W = diag(sqrt(weights)).
inline Matrix weighted_least_squares_pinv(MatrixRef a, const Vector &weights, MatrixRef rhs) {
    const Vector root = weights.array().sqrt();
    const Matrix wa = root.asDiagonal() * a;
    const Matrix wr = root.asDiagonal() * rhs;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(wa);
    return cod.solve(wr);
}

}  // namespace rkhstest
