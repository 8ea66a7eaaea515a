#pragma once

#include "rkhstest/estimator.hpp"
#include "rkhstest/kernel.hpp"
#include "rkhstest/linalg.hpp"
#include "rkhstest/loss.hpp"
#include "rkhstest/types.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rkhstest {

enum class InstrumentMode { gram_columns, kernel_sections_normalized, series_features };
enum class CovarianceVariant { pointwise, product_form };
enum class ProjectionPath { automatic, gram, features };

// ------------------------------------------------------------ residuals

/// e0_i = dL(y_i, t)/dt at t = fitted_i.
inline Vector generalized_residuals(const LossSpec &loss, VectorRef y, VectorRef fitted) {
    if (y.size() != fitted.size()) { throw Error(ErrorKind::dimension_mismatch, "residuals: length mismatch"); }
    check_admissible(loss, y);
    Vector e(y.size());
    for (Index i = 0; i < y.size(); ++i) { e[i] = loss.deriv1(y[i], fitted[i]); }
    return e;
}

inline Vector generalized_residuals(const FittedModel &model, const Dataset &data, const LossSpec &loss) {
    return generalized_residuals(loss, data.y, predict(model, data.x));
}

/// S_i = d^2 L(y_i, t)/dt^2 at the fit.
inline Vector second_derivative_weights(const LossSpec &loss, VectorRef y, VectorRef fitted) {
    if (!loss.smooth) {
        throw Error(ErrorKind::invalid_argument,
                    loss.name + " loss has no second derivative; supply known weights w(x)");
    }
    Vector s(y.size());
    for (Index i = 0; i < y.size(); ++i) { s[i] = loss.deriv2(y[i], fitted[i]); }
    return s;
}

// ---------------------------------------------------------- instruments

/// Column r holds the instrument h_r evaluated at the data points.
struct InstrumentSet {
    Matrix raw;
    InstrumentMode mode = InstrumentMode::gram_columns;
    std::vector<Index> anchors;
};

/// h_r = C_R1(., X_{j_r}).
inline InstrumentSet gram_column_instruments(const Kernel &alt, MatrixRef x, const std::vector<Index> &anchors) {
    Matrix z(static_cast<Index>(anchors.size()), x.cols());
    for (std::size_t r = 0; r < anchors.size(); ++r) {
        const Index j = anchors[r];
        if (j < 0 || j >= x.rows()) { throw Error(ErrorKind::invalid_argument, "instrument anchor out of range"); }
        z.row(static_cast<Index>(r)) = x.row(j);
    }
    return {cross_gram(alt, x, z), InstrumentMode::gram_columns, anchors};
}

/// h_r = C_R1(., z_r) / sqrt(C_R1(z_r, z_r)), each of unit RKHS norm.
inline InstrumentSet section_instruments(const Kernel &alt, MatrixRef x, MatrixRef z) {
    Matrix h = cross_gram(alt, x, z);
    for (Index r = 0; r < z.rows(); ++r) {
        const double d = alt(z.row(r).transpose(), z.row(r).transpose());
        if (!(d > 0.0)) {
            throw Error(ErrorKind::numerical, "instrument section " + std::to_string(r) +
                                                  " has zero kernel diagonal and cannot be normalized");
        }
        h.col(r) /= std::sqrt(d);
    }
    return {std::move(h), InstrumentMode::kernel_sections_normalized, {}};
}

inline InstrumentSet section_instruments(const Kernel &alt, MatrixRef x, const std::vector<Index> &anchors) {
    Matrix z(static_cast<Index>(anchors.size()), x.cols());
    for (std::size_t r = 0; r < anchors.size(); ++r) {
        const Index j = anchors[r];
        if (j < 0 || j >= x.rows()) { throw Error(ErrorKind::invalid_argument, "instrument anchor out of range"); }
        z.row(static_cast<Index>(r)) = x.row(j);
    }
    InstrumentSet s = section_instruments(alt, x, z);
    s.anchors = anchors;
    return s;
}

/// h_r = lambda_v phi_v on a coordinate: the exact series features of C_R1.
inline InstrumentSet series_instruments(const Kernel &alt, MatrixRef x) {
    return {feature_matrix(alt, x), InstrumentMode::series_features, {}};
}

inline std::vector<Index> first_indices(Index count, Index n) {
    if (count <= 0 || count > n) { count = n; }
    return coordinate_range(0, count);
}

inline InstrumentSet build_instruments(const Kernel &alt, MatrixRef x, InstrumentMode mode, Index count = 0) {
    switch (mode) {
    case InstrumentMode::gram_columns: return gram_column_instruments(alt, x, first_indices(count, x.rows()));
    case InstrumentMode::kernel_sections_normalized:
        return section_instruments(alt, x, first_indices(count, x.rows()));
    default: {
        InstrumentSet s = series_instruments(alt, x);
        if (count > 0 && count < s.raw.cols()) { s.raw = s.raw.leftCols(count).eval(); }
        return s;
    }
    }
}

// ----------------------------------------------------------- projection

/// h - Pi h where Pi h = C0 b and b minimizes (h - C0 b)^T S (h - C0 b) + rho b^T C0 b,
/// i.e. b = (C0 + rho S^{-1})^{-1} h. At rho = 0 the weighted least-squares
/// problem is solved with a rank-revealing factorization.
inline Matrix project_instruments(MatrixRef c0, const Vector &s, MatrixRef raw, double rho) {
    const Index n = c0.rows();
    if (c0.cols() != n || raw.rows() != n || s.size() != n) {
        throw Error(ErrorKind::dimension_mismatch, "projection: Gram, weights and instruments disagree in n");
    }
    if (rho < 0.0) { throw Error(ErrorKind::invalid_argument, "projection penalty must be >= 0"); }
    if ((s.array() <= 0.0).any() || !s.allFinite()) {
        throw Error(ErrorKind::numerical, "projection needs strictly positive finite weights S");
    }
    if (rho == 0.0) { return raw - c0 * weighted_least_squares_pinv(c0, s, raw); }
    Matrix m = c0;
    m.diagonal() += (rho / s.array()).matrix();
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() == Eigen::Success) { return raw - c0 * llt.solve(raw); }
    Eigen::LDLT<Matrix> ldlt(m);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw Error(ErrorKind::numerical, "projection system is not positive definite");
    }
    return raw - c0 * ldlt.solve(raw);
}

/// S = I shortcut reusing an eigendecomposition of C0:
/// h - Pi h = Q diag(rho / (kappa + rho)) Q^T h, with kappa = 0 directions kept whole.
inline Matrix project_instruments(const SymmetricEigen &eig, MatrixRef raw, double rho) {
    if (raw.rows() != eig.size()) { throw Error(ErrorKind::dimension_mismatch, "projection: size mismatch"); }
    Vector keep(eig.size());
    for (Index i = 0; i < eig.size(); ++i) {
        const double k = eig.kappa(i);
        keep[i] = k > 0.0 ? rho / (k + rho) : 1.0;
    }
    const Matrix qh = eig.vectors().transpose() * raw;
    return eig.vectors() * (keep.asDiagonal() * qh);
}

/// Feature-space form: Pi h = F beta with beta = (F^T S F + rho I)^{-1} F^T S h,
/// where C0 = F F^T.
inline Matrix project_instruments_features(MatrixRef f0, const Vector &s, MatrixRef raw, double rho) {
    const Index n = f0.rows();
    if (raw.rows() != n || s.size() != n) {
        throw Error(ErrorKind::dimension_mismatch, "projection: features, weights and instruments disagree in n");
    }
    if ((s.array() <= 0.0).any() || !s.allFinite()) {
        throw Error(ErrorKind::numerical, "projection needs strictly positive finite weights S");
    }
    if (rho == 0.0) { return raw - f0 * weighted_least_squares_pinv(f0, s, raw); }
    Matrix m = f0.transpose() * s.asDiagonal() * f0;
    m.diagonal().array() += rho;
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) { throw Error(ErrorKind::numerical, "feature projection system failed"); }
    const Matrix rhs = f0.transpose() * (s.asDiagonal() * raw);
    return raw - f0 * llt.solve(rhs);
}

/// Default penalty n^{-0.4}, stated for the averaged criterion
/// n^{-1} sum_i S_i (h - nu)^2 + rho |nu|^2. The matrix formulas above use the
/// summed criterion, so callers pass n * rho.
inline double default_projection_rho(Index n) { return std::pow(static_cast<double>(n), -0.4); }

// ------------------------------------------------------------ statistic

/// (1/R) sum_r (n^{-1/2} e0^T h_r)^2.
inline double test_statistic(VectorRef e0, MatrixRef h) {
    if (h.rows() != e0.size()) { throw Error(ErrorKind::dimension_mismatch, "statistic: instruments vs residuals"); }
    if (h.cols() == 0) { throw Error(ErrorKind::invalid_argument, "statistic needs at least one instrument"); }
    const double n = static_cast<double>(e0.size());
    const Vector proj = h.transpose() * e0 / std::sqrt(n);
    return proj.squaredNorm() / static_cast<double>(h.cols());
}

struct CovarianceEstimate {
    Matrix sigma;
    Vector spectrum;  // eigenvalues of sigma / R, descending, clipped at 0
};

inline Vector descending_spectrum(MatrixRef sym) {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) { throw Error(ErrorKind::numerical, "covariance eigen-solver failed"); }
    Vector w = es.eigenvalues().reverse();
    return w.cwiseMax(0.0);
}

/// pointwise:    n^{-1} sum_i S_i h_ik h_il
/// product_form: (e0^T e0 / n) (H^T H / n)
inline CovarianceEstimate covariance_estimate(VectorRef e0, MatrixRef h, const Vector &s,
                                              CovarianceVariant variant) {
    const Index n = h.rows();
    if (e0.size() != n) { throw Error(ErrorKind::dimension_mismatch, "covariance: instruments vs residuals"); }
    const double dn = static_cast<double>(n);
    CovarianceEstimate out;
    if (variant == CovarianceVariant::pointwise) {
        if (s.size() != n) { throw Error(ErrorKind::dimension_mismatch, "covariance: weights length"); }
        out.sigma = h.transpose() * s.asDiagonal() * h / dn;
    } else {
        out.sigma = (e0.squaredNorm() / dn) * (h.transpose() * h) / dn;
    }
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
    out.spectrum = descending_spectrum(out.sigma / static_cast<double>(h.cols()));
    return out;
}

/// M draws of sum_k w_k N_k^2 with N_k iid standard normal.
inline Vector simulate_null(VectorRef weights, Index draws, std::mt19937_64 &rng) {
    if (draws < 1) { throw Error(ErrorKind::invalid_argument, "null simulation needs at least one draw"); }
    if ((weights.array() < 0.0).any()) { throw Error(ErrorKind::invalid_argument, "null weights must be >= 0"); }
    std::vector<double> w;
    for (Index k = 0; k < weights.size(); ++k) {
        if (weights[k] > 0.0) { w.push_back(weights[k]); }
    }
    std::normal_distribution<double> normal;
    Vector out(draws);
    for (Index m = 0; m < draws; ++m) {
        double acc = 0.0;
        for (double wk : w) {
            const double z = normal(rng);
            acc += wk * z * z;
        }
        out[m] = acc;
    }
    return out;
}

/// (1 + #{draws >= stat}) / (M + 1).
inline double p_value(double stat, VectorRef draws) {
    if (draws.size() == 0) { throw Error(ErrorKind::invalid_argument, "p-value needs simulated draws"); }
    const auto exceed = (draws.array() >= stat).count();
    return (1.0 + static_cast<double>(exceed)) / (static_cast<double>(draws.size()) + 1.0);
}

// ------------------------------------------------------------- pipeline

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31U);
}

/// Independent stream seed for (master, index).
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

struct TestOptions {
    InstrumentMode instrument_mode = InstrumentMode::series_features;
    Index instrument_count = 0;  // 0 = all
    ProjectionPath projection = ProjectionPath::automatic;
    /// Averaged-criterion projection penalty; negative selects n^{-0.4}.
    double proj_rho = -1.0;
    CovarianceVariant covariance = CovarianceVariant::product_form;
    Index null_draws = 10000;
    std::uint64_t seed = 0;
    /// Known S(x) = w(x); required for non-smooth losses.
    std::function<double(VectorRef)> known_weights;
    /// Also compute the statistic with unprojected instruments.
    bool with_naive = true;
};

struct TestSpec {
    NullAltSplit split;
    LossSpec loss = rescaled_square_loss();
    FitConfig fit;
    TestOptions options;
};

struct TestResult {
    double statistic = 0.0;
    Vector spectrum;
    double p_value = 1.0;
    Index null_draws = 0;
    Index instruments = 0;
    Index n = 0;
    double proj_rho = 0.0;

    double naive_statistic = 0.0;
    Vector naive_spectrum;
    double naive_p_value = 1.0;
    bool has_naive = false;

    double residual_mean_square = 0.0;
    double max_orthogonality = 0.0;  // max_r |C0 S h_r|_inf relative to |h_r|
    double restricted_norm_hk = 0.0;
    double restricted_norm_lk = 0.0;
    double restricted_ridge_rho = 0.0;
    std::string scaling_note =
        "statistic = (1/R) sum_r (n^{-1/2} e0^T h_r)^2; null weights = eigenvalues of Sigma/R";
};

/// Fit the restricted model, build and project the instruments, and compare
/// the statistic with its simulated weighted chi-square null.
inline TestResult run_test(const Dataset &data, const TestSpec &spec) {
    const Index n = data.size();
    if (n < 2) { throw Error(ErrorKind::invalid_argument, "test needs at least two observations"); }
    if (data.y.size() != n) { throw Error(ErrorKind::dimension_mismatch, "response length differs from X rows"); }
    const auto &opt = spec.options;
    check_admissible(spec.loss, data.y);

    const Kernel &c0k = spec.split.null_kernel;
    const bool null_series = c0k.series_size(data.dim()) > 0;
    const bool use_features = opt.projection == ProjectionPath::features ||
                              (opt.projection == ProjectionPath::automatic && null_series &&
                               c0k.series_size(data.dim()) < n);
    if (opt.projection == ProjectionPath::features && !null_series) {
        throw Error(ErrorKind::invalid_argument, "feature projection needs a null kernel with an exact series");
    }

    std::optional<Matrix> gram0;
    std::optional<SymmetricEigen> eig0;
    FittedModel model;
    if (spec.fit.solver == Solver::ridge_closed_form) {
        if (spec.loss.kind != LossKind::square && spec.loss.kind != LossKind::rescaled_square) {
            throw Error(ErrorKind::invalid_argument, "closed-form ridge needs a square loss, got " + spec.loss.name);
        }
        gram0 = gram_matrix(c0k, data.x);
        eig0.emplace(*gram0);
        model = ridge_fit(data, c0k, spec.fit, &*eig0, &*gram0);
    } else {
        model = greedy_fit(data, spec.loss, c0k, spec.fit);
    }

    const Vector e0 = generalized_residuals(spec.loss, data.y, model.fitted);
    Vector s(n);
    if (opt.known_weights) {
        for (Index i = 0; i < n; ++i) { s[i] = opt.known_weights(data.x.row(i).transpose()); }
    } else {
        s = second_derivative_weights(spec.loss, data.y, model.fitted);
    }

    const InstrumentSet inst = build_instruments(spec.split.alt_kernel, data.x, opt.instrument_mode,
                                                 opt.instrument_count);
    const double rho_mean = opt.proj_rho < 0.0 ? default_projection_rho(n) : opt.proj_rho;
    const double rho = static_cast<double>(n) * rho_mean;

    Matrix projected;
    double orth = 0.0;
    const bool unit_weights = (s.array() == 1.0).all();
    if (use_features) {
        const Matrix f0 = feature_matrix(c0k, data.x);
        projected = project_instruments_features(f0, s, inst.raw, rho);
        if (rho == 0.0) {
            const Matrix g = f0.transpose() * s.asDiagonal() * projected;
            for (Index r = 0; r < projected.cols(); ++r) {
                orth = std::max(orth, g.col(r).cwiseAbs().maxCoeff() / std::max(projected.col(r).norm(), 1e-300));
            }
        }
    } else {
        if (!gram0) { gram0 = gram_matrix(c0k, data.x); }
        if (unit_weights) {
            if (!eig0) { eig0.emplace(*gram0); }
            projected = project_instruments(*eig0, inst.raw, rho);
        } else {
            projected = project_instruments(*gram0, s, inst.raw, rho);
        }
        if (rho == 0.0) {
            const Matrix g = gram0->transpose() * s.asDiagonal() * projected;
            for (Index r = 0; r < projected.cols(); ++r) {
                orth = std::max(orth, g.col(r).cwiseAbs().maxCoeff() / std::max(projected.col(r).norm(), 1e-300));
            }
        }
    }

    TestResult out;
    out.n = n;
    out.instruments = projected.cols();
    out.proj_rho = rho_mean;
    out.null_draws = opt.null_draws;
    out.residual_mean_square = e0.squaredNorm() / static_cast<double>(n);
    out.max_orthogonality = orth;
    out.restricted_norm_hk = model.norm_hk;
    out.restricted_norm_lk = model.norm_lk;
    out.restricted_ridge_rho = model.ridge_rho;

    out.statistic = test_statistic(e0, projected);
    const CovarianceEstimate cov = covariance_estimate(e0, projected, s, opt.covariance);
    out.spectrum = cov.spectrum;
    std::mt19937_64 rng(stream_seed(opt.seed, 0));
    out.p_value = p_value(out.statistic, simulate_null(out.spectrum, opt.null_draws, rng));

    if (opt.with_naive) {
        out.has_naive = true;
        out.naive_statistic = test_statistic(e0, inst.raw);
        const CovarianceEstimate ncov = covariance_estimate(e0, inst.raw, s, opt.covariance);
        out.naive_spectrum = ncov.spectrum;
        std::mt19937_64 nrng(stream_seed(opt.seed, 1));
        out.naive_p_value = p_value(out.naive_statistic, simulate_null(out.naive_spectrum, opt.null_draws, nrng));
    }
    return out;
}

}  // namespace rkhstest
