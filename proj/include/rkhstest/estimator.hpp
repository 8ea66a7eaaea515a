#pragma once

#include "rkhstest/kernel.hpp"
#include "rkhstest/linalg.hpp"
#include "rkhstest/loss.hpp"
#include "rkhstest/types.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace rkhstest {

enum class NormKind { HK, LK };
enum class Solver { ridge_closed_form, greedy };
enum class StepRule { line_search, two_over_m_plus_two, one_over_m };

struct FitConfig {
    double budget = 1.0;
    NormKind norm_kind = NormKind::LK;
    Solver solver = Solver::greedy;
    int iterations = 500;
    StepRule step_rule = StepRule::line_search;
    double line_search_tol = 1e-6;
    double root_tol = 1e-12;
    /// Use O(nV) feature updates for components with an exact finite series.
    bool use_series = true;
    bool allow_pinv = true;

    bool operator==(const FitConfig &) const = default;
};

struct IterationRecord {
    Index component = 0;
    double step = 0.0;
    double multiplier = 0.0;
    double objective = 0.0;
};

/// A fitted function f = sum_k f_k over additive components. Each component is
/// held either in representer form, f_k = sum_i coeffs(i,k) C_k(anchor_i, .),
/// or in series form, f_k = sum_v c_{k,v} lambda_v phi_v.
struct FittedModel {
    enum class Form { representer, series };

    std::vector<Kernel> components;
    std::vector<Form> forms;
    Matrix anchors;
    Matrix coeffs;                     // anchors x components, used by representer components
    std::vector<Vector> series_coeffs;  // used by series components
    Vector fitted;                     // predictions at the training points
    double norm_hk = 0.0;
    double norm_lk = 0.0;
    double ridge_rho = 0.0;
    double budget = 0.0;
    bool budget_binding = false;
    std::vector<IterationRecord> trace;

    [[nodiscard]] Kernel kernel() const {
        Kernel k;
        for (const auto &c : components) { k += c; }
        return k;
    }
};

// ---------------------------------------------------------------- ridge

/// a = (C + rho I)^{-1} y. At rho = 0 the minimum-norm least-squares solution
/// is returned when `allow_pinv`, otherwise a singular system is an error.
inline Vector fit_ridge(const SymmetricEigen &eig, VectorRef y, double rho, bool allow_pinv = true) {
    if (rho < 0.0) { throw Error(ErrorKind::invalid_argument, "ridge penalty must be >= 0"); }
    if (y.size() != eig.size()) { throw Error(ErrorKind::dimension_mismatch, "ridge: y length differs from Gram"); }
    const Vector qy = eig.vectors().transpose() * y;
    Vector scaled(qy.size());
    for (Index i = 0; i < qy.size(); ++i) {
        const double k = eig.kappa(i);
        if (k + rho > 0.0) {
            scaled[i] = qy[i] / (k + rho);
        } else {
            if (!allow_pinv) { throw Error(ErrorKind::numerical, "singular ridge system at rho = 0"); }
            scaled[i] = 0.0;
        }
    }
    return eig.vectors() * scaled;
}

inline Vector fit_ridge(MatrixRef gram, VectorRef y, double rho, bool allow_pinv = true) {
    if (gram.rows() != gram.cols() || gram.rows() != y.size()) {
        throw Error(ErrorKind::dimension_mismatch, "ridge: Gram and y sizes disagree");
    }
    if (rho > 0.0) {
        Matrix system = gram;
        system.diagonal().array() += rho;
        Eigen::LLT<Matrix> llt(system);
        if (llt.info() == Eigen::Success) { return llt.solve(y); }
    }
    return fit_ridge(SymmetricEigen(gram), y, rho, allow_pinv);
}

/// a^T C a for a = (C + rho I)^{-1} y, i.e. sum_i (Q_i^T y)^2 kappa_i / (kappa_i + rho)^2.
inline double ridge_norm_sq(const SymmetricEigen &eig, const Vector &qy, double rho) {
    double g = 0.0;
    for (Index i = 0; i < qy.size(); ++i) {
        const double k = eig.kappa(i);
        if (k > 0.0) { g += qy[i] * qy[i] * k / ((k + rho) * (k + rho)); }
    }
    return g;
}

/// Smallest rho >= 0 such that the ridge fit has RKHS norm at most `budget`.
/// Returns 0 when the unpenalized (pseudo-inverse) fit is already inside the
/// ball; otherwise bisects the strictly decreasing norm function.
inline double solve_rho_for_budget(const SymmetricEigen &eig, VectorRef y, double budget, double rel_tol = 1e-12) {
    if (!(budget > 0.0)) { throw Error(ErrorKind::invalid_argument, "budget must be > 0"); }
    const Vector qy = eig.vectors().transpose() * y;
    const double target = budget * budget;
    if (ridge_norm_sq(eig, qy, 0.0) <= target) { return 0.0; }
    // g(rho) <= |y|^2 kappa_max / rho^2, so g(hi) <= B^2 at hi = |y| sqrt(kappa_max) / B.
    const double kmax = std::max(eig.values().maxCoeff(), 0.0);
    double hi = y.norm() * std::sqrt(kmax) / budget;
    double lo = 0.0;
    while (ridge_norm_sq(eig, qy, hi) > target) { hi *= 2.0; }
    for (int it = 0; it < 2000 && hi - lo > rel_tol * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (ridge_norm_sq(eig, qy, mid) > target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

inline double sample_sd(VectorRef y) {
    const double n = static_cast<double>(y.size());
    if (n < 2) { return 0.0; }
    const double mean = y.mean();
    return std::sqrt((y.array() - mean).square().sum() / (n - 1.0));
}

// -------------------------------------------------------------- greedy

/// Result of minimizing P_n dl * f over the unit ball of one component.
struct GreedyDirection {
    Vector coeffs;       // representer weights over the data, or series coefficients
    Vector values;       // f evaluated at the data
    double multiplier;   // Lagrange multiplier rho; 1 when the gradient form vanishes
    bool zero = false;
};

/// Gram path: f = -(1/(2 rho)) sum_i (g_i/n) C(X_i, .) with
/// rho = (1/2) [ sum_ij (g_i/n)(g_j/n) C(X_i,X_j) ]^{1/2}.
inline GreedyDirection greedy_direction(VectorRef grad, MatrixRef gram) {
    const double n = static_cast<double>(grad.size());
    if (gram.rows() != grad.size() || gram.cols() != grad.size()) {
        throw Error(ErrorKind::dimension_mismatch, "greedy_direction: Gram and gradient sizes differ");
    }
    const Vector w = grad / n;
    const Vector cw = gram * w;
    const double quad = w.dot(cw);
    GreedyDirection d;
    if (!(quad > 0.0)) {
        d.coeffs = Vector::Zero(grad.size());
        d.values = Vector::Zero(grad.size());
        d.multiplier = 1.0;
        d.zero = true;
        return d;
    }
    d.multiplier = 0.5 * std::sqrt(quad);
    d.coeffs = -w / (2.0 * d.multiplier);
    d.values = -cw / (2.0 * d.multiplier);
    return d;
}

/// Series path: a_v = sum_i g_i lambda_v phi_v(X_i) / n, rho = |a| / 2 and
/// f = -sum_v (a_v/|a|) lambda_v phi_v. `features` holds lambda_v phi_v(X_i).
inline GreedyDirection greedy_direction_series(VectorRef grad, MatrixRef features) {
    if (features.rows() != grad.size()) {
        throw Error(ErrorKind::dimension_mismatch, "greedy_direction_series: feature rows differ from gradient");
    }
    const double n = static_cast<double>(grad.size());
    const Vector a = features.transpose() * grad / n;
    const double norm = a.norm();
    GreedyDirection d;
    if (!(norm > 0.0)) {
        d.coeffs = Vector::Zero(features.cols());
        d.values = Vector::Zero(grad.size());
        d.multiplier = 1.0;
        d.zero = true;
        return d;
    }
    d.multiplier = 0.5 * norm;
    d.coeffs = -a / norm;
    d.values = features * d.coeffs;
    return d;
}

/// argmin over tau in [0,1] of P_n l((1-tau) F + tau G) by golden-section
/// search, comparing against both end points.
inline double line_search(const LossSpec &loss, VectorRef y, VectorRef current, VectorRef candidate,
                          double tol = 1e-6) {
    const Index n = y.size();
    Vector work(n);
    auto objective = [&](double tau) {
        work = (1.0 - tau) * current + tau * candidate;
        return empirical_risk(loss, y, work);
    };
    constexpr double inv_phi = 0.6180339887498949;
    double a = 0.0;
    double b = 1.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = objective(c);
    double fd = objective(d);
    while (b - a > tol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    double best_tau = 0.5 * (a + b);
    double best = objective(best_tau);
    const double f0 = objective(0.0);
    const double f1 = objective(1.0);
    if (f0 <= best) {
        best = f0;
        best_tau = 0.0;
    }
    if (f1 < best) { best_tau = 1.0; }
    return best_tau;
}

namespace detail {

struct ComponentWork {
    Kernel kernel;
    bool series = false;
    Matrix basis;                      // Gram (n x n) or features (n x V)
    std::vector<Index> term_offsets;   // series: start of each term's features
    std::vector<Matrix> term_grams;    // representer: per-term Grams for norms
};

inline void component_norms(const FittedModel &model, const std::vector<ComponentWork> &work, double &hk,
                            double &lk) {
    double sq = 0.0;
    double l1 = 0.0;
    for (std::size_t k = 0; k < work.size(); ++k) {
        const auto &w = work[k];
        const std::size_t nterms = w.kernel.term_count();
        for (std::size_t t = 0; t < nterms; ++t) {
            double term_sq;
            if (w.series) {
                const Index start = w.term_offsets[t];
                const Index len = w.term_offsets[t + 1] - start;
                term_sq = model.series_coeffs[k].segment(start, len).squaredNorm();
            } else {
                const auto col = model.coeffs.col(static_cast<Index>(k));
                term_sq = std::max(0.0, col.dot(w.term_grams[t] * col));
            }
            sq += term_sq;
            l1 += std::sqrt(term_sq);
        }
    }
    hk = std::sqrt(sq);
    lk = l1;
}

inline std::vector<ComponentWork> prepare_components(const Kernel &kernel, MatrixRef x, NormKind norm_kind,
                                                     bool use_series) {
    std::vector<Kernel> parts;
    if (norm_kind == NormKind::LK) {
        for (std::size_t t = 0; t < kernel.term_count(); ++t) { parts.push_back(kernel.term(t)); }
    } else {
        parts.push_back(kernel);
    }
    std::vector<ComponentWork> out;
    for (auto &part : parts) {
        ComponentWork w;
        w.kernel = part;
        const Index v = part.series_size(x.cols());
        w.series = use_series && v > 0;
        if (w.series) {
            w.basis = feature_matrix(part, x);
            Index offset = 0;
            w.term_offsets.push_back(0);
            for (std::size_t t = 0; t < part.term_count(); ++t) {
                offset += part.term(t).series_size(x.cols());
                w.term_offsets.push_back(offset);
            }
        } else {
            w.basis = gram_matrix(part, x);
            if (part.term_count() == 1) {
                w.term_grams.push_back(w.basis);
            } else {
                for (std::size_t t = 0; t < part.term_count(); ++t) {
                    w.term_grams.push_back(gram_matrix(part.term(t), x));
                }
            }
        }
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace detail

/// Frank-Wolfe fit of min P_n l(F) over the L^K(B) ball (sum of component
/// norms) or the H^K(B) ball (single joint component).
///
/// Each iteration picks the component whose unit-norm steepest-descent
/// direction has the largest multiplier (lowest index on ties) and moves
/// F <- (1 - tau) F + tau B f.
inline FittedModel greedy_fit(const Dataset &data, const LossSpec &loss, const Kernel &kernel,
                              const FitConfig &config) {
    if (!loss.smooth) {
        throw Error(ErrorKind::invalid_argument, "greedy fitting needs a smooth loss, got " + loss.name);
    }
    if (config.iterations < 0) { throw Error(ErrorKind::invalid_argument, "iterations must be >= 0"); }
    if (!(config.budget > 0.0) || !std::isfinite(config.budget)) {
        throw Error(ErrorKind::invalid_argument, "budget must be finite and > 0");
    }
    if (kernel.empty()) { throw Error(ErrorKind::invalid_argument, "greedy fit needs a non-empty kernel"); }
    const Index n = data.size();
    if (data.y.size() != n) { throw Error(ErrorKind::dimension_mismatch, "response length differs from X rows"); }
    check_admissible(loss, data.y);

    auto work = detail::prepare_components(kernel, data.x, config.norm_kind, config.use_series);
    const Index ncomp = static_cast<Index>(work.size());

    FittedModel model;
    model.anchors = data.x;
    model.coeffs = Matrix::Zero(n, ncomp);
    model.budget = config.budget;
    for (const auto &w : work) {
        model.components.push_back(w.kernel);
        model.forms.push_back(w.series ? FittedModel::Form::series : FittedModel::Form::representer);
        model.series_coeffs.push_back(w.series ? Vector::Zero(w.basis.cols()) : Vector());
    }

    Vector f = Vector::Zero(n);
    Vector grad(n);
    Vector candidate(n);
    const double b = config.budget;

    for (int m = 1; m <= config.iterations; ++m) {
        for (Index i = 0; i < n; ++i) { grad[i] = loss.deriv1(data.y[i], f[i]); }

        Index best = 0;
        GreedyDirection chosen;
        for (Index k = 0; k < ncomp; ++k) {
            const auto &w = work[static_cast<std::size_t>(k)];
            GreedyDirection d = w.series ? greedy_direction_series(grad, w.basis) : greedy_direction(grad, w.basis);
            const double score = d.zero ? 0.0 : d.multiplier;
            const double best_score = chosen.values.size() == 0 ? -1.0 : (chosen.zero ? 0.0 : chosen.multiplier);
            if (score > best_score) {
                chosen = std::move(d);
                best = k;
            }
        }

        candidate = b * chosen.values;
        double tau;
        switch (config.step_rule) {
        case StepRule::line_search: tau = line_search(loss, data.y, f, candidate, config.line_search_tol); break;
        case StepRule::two_over_m_plus_two: tau = 2.0 / (m + 2.0); break;
        default: tau = 1.0 / m; break;
        }

        f = (1.0 - tau) * f + tau * candidate;
        model.coeffs *= (1.0 - tau);
        for (auto &c : model.series_coeffs) { c *= (1.0 - tau); }
        if (work[static_cast<std::size_t>(best)].series) {
            model.series_coeffs[static_cast<std::size_t>(best)] += tau * b * chosen.coeffs;
        } else {
            model.coeffs.col(best) += tau * b * chosen.coeffs;
        }
        model.trace.push_back({best, tau, chosen.multiplier, empirical_risk(loss, data.y, f)});
    }

    model.fitted = f;
    detail::component_norms(model, work, model.norm_hk, model.norm_lk);
    const double norm = config.norm_kind == NormKind::LK ? model.norm_lk : model.norm_hk;
    model.budget_binding = std::abs(norm - b) <= 1e-6 * b;
    return model;
}

/// Square-loss fit over H^K(B): ridge with the multiplier that puts the
/// solution on the budget sphere when the constraint binds.
inline FittedModel ridge_fit(const Dataset &data, const Kernel &kernel, const FitConfig &config,
                             const SymmetricEigen *cached = nullptr, const Matrix *cached_gram = nullptr) {
    if (!(config.budget > 0.0)) { throw Error(ErrorKind::invalid_argument, "budget must be > 0"); }
    const Index n = data.size();
    if (data.y.size() != n) { throw Error(ErrorKind::dimension_mismatch, "response length differs from X rows"); }
    const Matrix gram = cached_gram ? *cached_gram : gram_matrix(kernel, data.x);
    const SymmetricEigen eig = cached ? *cached : SymmetricEigen(gram);
    const double rho = solve_rho_for_budget(eig, data.y, config.budget, config.root_tol);
    const Vector a = fit_ridge(eig, data.y, rho, config.allow_pinv);

    FittedModel model;
    model.components.push_back(kernel);
    model.forms.push_back(FittedModel::Form::representer);
    model.series_coeffs.emplace_back();
    model.anchors = data.x;
    model.coeffs = a;
    model.fitted = gram * a;
    model.ridge_rho = rho;
    model.budget = config.budget;
    model.budget_binding = rho > 0.0;

    std::vector<detail::ComponentWork> work(1);
    work[0].kernel = kernel;
    if (kernel.term_count() == 1) {
        work[0].term_grams.push_back(gram);
    } else {
        for (std::size_t t = 0; t < kernel.term_count(); ++t) {
            work[0].term_grams.push_back(gram_matrix(kernel.term(t), data.x));
        }
    }
    detail::component_norms(model, work, model.norm_hk, model.norm_lk);
    // Norm of the joint fit is a^T C a; per-term norms feed the L^K value.
    model.norm_hk = std::sqrt(std::max(0.0, a.dot(gram * a)));
    return model;
}

inline FittedModel fit(const Dataset &data, const LossSpec &loss, const Kernel &kernel, const FitConfig &config) {
    if (config.solver == Solver::ridge_closed_form) {
        if (loss.kind != LossKind::square && loss.kind != LossKind::rescaled_square) {
            throw Error(ErrorKind::invalid_argument, "closed-form ridge needs a square loss, got " + loss.name);
        }
        if (config.norm_kind != NormKind::HK) {
            throw Error(ErrorKind::invalid_argument, "closed-form ridge solves the H^K ball only");
        }
        return ridge_fit(data, kernel, config);
    }
    return greedy_fit(data, loss, kernel, config);
}

inline Vector predict(const FittedModel &model, MatrixRef x_new) {
    Vector out = Vector::Zero(x_new.rows());
    if (model.components.empty()) { return out; }
    if (x_new.cols() != model.anchors.cols()) {
        throw Error(ErrorKind::dimension_mismatch, "predict: points have " + std::to_string(x_new.cols()) +
                                                       " coordinates, model expects " +
                                                       std::to_string(model.anchors.cols()));
    }
    for (std::size_t k = 0; k < model.components.size(); ++k) {
        const Kernel &kernel = model.components[k];
        if (model.forms[k] == FittedModel::Form::series) {
            out += feature_matrix(kernel, x_new) * model.series_coeffs[k];
        } else {
            const auto col = model.coeffs.col(static_cast<Index>(k));
            if (col.isZero(0.0)) { continue; }
            out += cross_gram(kernel, x_new, model.anchors) * col;
        }
    }
    return out;
}

}  // namespace rkhstest
