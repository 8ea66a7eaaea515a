#pragma once

#include "rkhstest/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rkhstest {

/// A positive semidefinite function on the sub-vector of a point picked out by
/// a coordinate selector. Implementations are immutable.
class KernelFunction {
public:
    virtual ~KernelFunction() = default;

    [[nodiscard]] virtual double eval(VectorRef s, VectorRef t) const = 0;

    /// Required length of the selected sub-vector, or -1 for any length.
    [[nodiscard]] virtual Index input_dim() const { return -1; }

    /// Number of terms in an exact finite expansion C(s,t) = sum_v g_v(s) g_v(t)
    /// for inputs of length `dim`; 0 when no such expansion is available.
    [[nodiscard]] virtual Index series_size(Index /*dim*/) const { return 0; }

    /// Writes g_v(s) = lambda_v * phi_v(s) for v < series_size(s.size()).
    virtual void features(VectorRef /*s*/, Eigen::Ref<Vector> /*out*/) const {
        throw Error(ErrorKind::invalid_argument, "kernel has no series representation");
    }

    [[nodiscard]] virtual std::string describe() const = 0;
};

namespace detail {

/// Shortest text that reads back to the same double.
inline std::string fmt_real(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

/// exp{-|s-t|^2 / (2 a^2)} scaled by `variance`. The form exp{-a'|s-t|^2}
/// corresponds to lengthscale a = 1/sqrt(2 a').
class GaussianRbf final : public KernelFunction {
public:
    explicit GaussianRbf(double lengthscale, double variance = 1.0)
        : lengthscale_(lengthscale), variance_(variance) {
        if (!(lengthscale > 0.0) || !(variance > 0.0)) {
            throw Error(ErrorKind::invalid_argument, "gaussian_rbf needs lengthscale > 0 and variance > 0");
        }
        inv_two_a2_ = 0.5 / (lengthscale * lengthscale);
    }

    [[nodiscard]] double eval(VectorRef s, VectorRef t) const override {
        double r = 0.0;
        for (Index j = 0; j < s.size(); ++j) {
            const double d = s[j] - t[j];
            r += d * d;
        }
        return variance_ * std::exp(-inv_two_a2_ * r);
    }

    [[nodiscard]] std::string describe() const override {
        return "gaussian_rbf(lengthscale=" + detail::fmt_real(lengthscale_) +
               ", variance=" + detail::fmt_real(variance_) + ")";
    }

    [[nodiscard]] double lengthscale() const { return lengthscale_; }
    [[nodiscard]] double variance() const { return variance_; }

private:
    double lengthscale_;
    double variance_;
    double inv_two_a2_;
};

/// scale * <s, t>
class LinearKernel final : public KernelFunction {
public:
    explicit LinearKernel(double scale = 1.0) : scale_(scale) {
        if (!(scale > 0.0)) { throw Error(ErrorKind::invalid_argument, "linear kernel needs scale > 0"); }
        root_scale_ = std::sqrt(scale);
    }

    [[nodiscard]] double eval(VectorRef s, VectorRef t) const override {
        double r = 0.0;
        for (Index j = 0; j < s.size(); ++j) { r += s[j] * t[j]; }
        return scale_ * r;
    }

    [[nodiscard]] Index series_size(Index dim) const override { return dim; }

    void features(VectorRef s, Eigen::Ref<Vector> out) const override {
        for (Index j = 0; j < s.size(); ++j) { out[j] = root_scale_ * s[j]; }
    }

    [[nodiscard]] std::string describe() const override {
        return "linear(scale=" + detail::fmt_real(scale_) + ")";
    }

private:
    double scale_;
    double root_scale_;
};

class ConstantKernel final : public KernelFunction {
public:
    explicit ConstantKernel(double value) : value_(value) {
        if (!(value > 0.0)) { throw Error(ErrorKind::invalid_argument, "constant kernel needs value > 0"); }
    }

    [[nodiscard]] double eval(VectorRef, VectorRef) const override { return value_; }
    [[nodiscard]] Index series_size(Index) const override { return 1; }
    void features(VectorRef, Eigen::Ref<Vector> out) const override { out[0] = std::sqrt(value_); }

    [[nodiscard]] std::string describe() const override {
        return "constant(value=" + detail::fmt_real(value_) + ")";
    }

private:
    double value_;
};

/// sum_{v=1}^{V} w_v <s,t>^v with w_v > 0.
class PolynomialKernel final : public KernelFunction {
public:
    explicit PolynomialKernel(std::vector<double> weights) : weights_(std::move(weights)) {
        if (weights_.empty()) { throw Error(ErrorKind::invalid_argument, "polynomial kernel needs degree >= 1"); }
        for (double w : weights_) {
            if (!(w > 0.0)) { throw Error(ErrorKind::invalid_argument, "polynomial weights must be positive"); }
        }
    }

    /// Weights v^{-decay}, v = 1..degree.
    static PolynomialKernel with_decay(int degree, double decay) {
        std::vector<double> w(static_cast<std::size_t>(degree));
        for (int v = 1; v <= degree; ++v) { w[static_cast<std::size_t>(v - 1)] = std::pow(v, -decay); }
        return PolynomialKernel(std::move(w));
    }

    [[nodiscard]] double eval(VectorRef s, VectorRef t) const override {
        double st = 0.0;
        for (Index j = 0; j < s.size(); ++j) { st += s[j] * t[j]; }
        double power = 1.0;
        double r = 0.0;
        for (double w : weights_) {
            power *= st;
            r += w * power;
        }
        return r;
    }

    // Per-monomial features exist only for scalar inputs.
    [[nodiscard]] Index series_size(Index dim) const override {
        return dim == 1 ? static_cast<Index>(weights_.size()) : 0;
    }

    void features(VectorRef s, Eigen::Ref<Vector> out) const override {
        double power = 1.0;
        for (std::size_t v = 0; v < weights_.size(); ++v) {
            power *= s[0];
            out[static_cast<Index>(v)] = std::sqrt(weights_[v]) * power;
        }
    }

    [[nodiscard]] const std::vector<double> &weights() const { return weights_; }

    [[nodiscard]] std::string describe() const override {
        std::string out = "polynomial(weights=[";
        for (std::size_t v = 0; v < weights_.size(); ++v) {
            if (v) { out += ", "; }
            out += detail::fmt_real(weights_[v]);
        }
        return out + "])";
    }

private:
    std::vector<double> weights_;
};

/// H_V(s,t) = int_0^1 G_V(s,u) G_V(t,u) du with G_V(r,u) = (r-u)_+^{V-1}/(V-1)!,
/// the covariance of V-fold integrated Brownian motion on [0,1].
///
/// With a = min(s,t), d = |s-t| and p = V-1 the integral expands as
/// sum_j binom(p,j) d^{p-j} a^{p+j+1} / (p+j+1), divided by (p!)^2.
inline double integrated_brownian_eval(int order, double s, double t) {
    if (order < 1) { throw Error(ErrorKind::invalid_argument, "integrated_brownian order must be >= 1"); }
    if (!(s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorKind::domain, "integrated_brownian inputs must lie in [0,1]");
    }
    const double a = std::min(s, t);
    const double d = std::max(s, t) - a;
    const int p = order - 1;
    double sum = 0.0;
    double binom = 1.0;
    for (int j = 0; j <= p; ++j) {
        sum += binom * std::pow(d, p - j) * std::pow(a, p + j + 1) / (p + j + 1);
        binom = binom * (p - j) / (j + 1);
    }
    double fact = 1.0;
    for (int k = 2; k <= p; ++k) { fact *= k; }
    return sum / (fact * fact);
}

class IntegratedBrownianKernel final : public KernelFunction {
public:
    explicit IntegratedBrownianKernel(int order) : order_(order) {
        if (order < 1) { throw Error(ErrorKind::invalid_argument, "integrated_brownian order must be >= 1"); }
    }

    [[nodiscard]] double eval(VectorRef s, VectorRef t) const override {
        return integrated_brownian_eval(order_, s[0], t[0]);
    }

    [[nodiscard]] Index input_dim() const override { return 1; }

    [[nodiscard]] std::string describe() const override {
        return "integrated_brownian(order=" + std::to_string(order_) + ")";
    }

private:
    int order_;
};

/// C(s,t) = sum_v lambda_v^2 phi_v(s) phi_v(t) on a scalar input, truncated at
/// V terms. `decay` records the declared exponent eta of lambda_v^2 ~ v^{-eta}.
class SeriesKernel final : public KernelFunction {
public:
    using Feature = std::function<double(double)>;

    SeriesKernel(std::vector<double> weights, std::vector<Feature> features, double decay = 0.0,
                 std::string label = "series")
        : weights_(std::move(weights)), features_(std::move(features)), decay_(decay), label_(std::move(label)) {
        if (weights_.size() != features_.size() || weights_.empty()) {
            throw Error(ErrorKind::invalid_argument, "series kernel needs one weight per feature");
        }
        for (double w : weights_) {
            if (!(w > 0.0)) { throw Error(ErrorKind::invalid_argument, "series weights must be positive"); }
        }
        std::transform(weights_.begin(), weights_.end(), std::back_inserter(roots_),
                       [](double w) { return std::sqrt(w); });
    }

    /// lambda_v^2 = v^{-decay}, phi_v(s) = s^v, v = 1..degree.
    static SeriesKernel polynomial(int degree, double decay) {
        std::vector<double> w;
        std::vector<Feature> f;
        for (int v = 1; v <= degree; ++v) {
            w.push_back(std::pow(v, -decay));
            f.emplace_back([v](double s) { return std::pow(s, v); });
        }
        return SeriesKernel(std::move(w), std::move(f), decay,
                            "polynomial_series(degree=" + std::to_string(degree) +
                                ", decay=" + detail::fmt_real(decay) + ")");
    }

    /// The terms v = first..last of the polynomial series.
    static SeriesKernel polynomial_range(int first, int last, double decay) {
        if (first < 1 || last < first) {
            throw Error(ErrorKind::invalid_argument, "polynomial series range needs 1 <= first <= last");
        }
        std::vector<double> w;
        std::vector<Feature> f;
        for (int v = first; v <= last; ++v) {
            w.push_back(std::pow(v, -decay));
            f.emplace_back([v](double s) { return std::pow(s, v); });
        }
        return SeriesKernel(std::move(w), std::move(f), decay,
                            "polynomial_series(v=" + std::to_string(first) + ".." + std::to_string(last) +
                                ", decay=" + detail::fmt_real(decay) + ")");
    }

    [[nodiscard]] double eval(VectorRef s, VectorRef t) const override {
        double r = 0.0;
        for (std::size_t v = 0; v < weights_.size(); ++v) {
            r += weights_[v] * (features_[v](s[0]) * features_[v](t[0]));
        }
        return r;
    }

    [[nodiscard]] Index input_dim() const override { return 1; }
    [[nodiscard]] Index series_size(Index) const override { return size(); }

    void features(VectorRef s, Eigen::Ref<Vector> out) const override {
        for (std::size_t v = 0; v < weights_.size(); ++v) {
            out[static_cast<Index>(v)] = roots_[v] * features_[v](s[0]);
        }
    }

    [[nodiscard]] Index size() const { return static_cast<Index>(weights_.size()); }
    [[nodiscard]] const std::vector<double> &weights() const { return weights_; }
    [[nodiscard]] double lambda(Index v) const { return roots_[static_cast<std::size_t>(v)]; }
    [[nodiscard]] double phi(Index v, double s) const { return features_[static_cast<std::size_t>(v)](s); }
    [[nodiscard]] double decay() const { return decay_; }
    [[nodiscard]] std::string describe() const override { return label_; }

private:
    std::vector<double> weights_;
    std::vector<Feature> features_;
    std::vector<double> roots_;
    double decay_;
    std::string label_;
};

/// A kernel function restricted to some coordinates of the full point.
/// An empty coordinate list selects the whole point.
struct KernelTerm {
    std::shared_ptr<const KernelFunction> function;
    std::vector<Index> coords;
};

/// Sum of kernel terms on selected coordinates. Every kernel handed to the
/// estimator and test code is one of these; a closed-form kernel on the full
/// point is the one-term case.
class Kernel {
public:
    Kernel() = default;

    template<class F>
        requires std::derived_from<F, KernelFunction>
    Kernel(F function, std::vector<Index> coords = {}) {
        add(std::make_shared<const F>(std::move(function)), std::move(coords));
    }

    Kernel(std::shared_ptr<const KernelFunction> function, std::vector<Index> coords) {
        add(std::move(function), std::move(coords));
    }

    Kernel &add(std::shared_ptr<const KernelFunction> function, std::vector<Index> coords = {}) {
        if (!function) { throw Error(ErrorKind::invalid_argument, "null kernel function"); }
        const Index want = function->input_dim();
        if (want >= 0 && !coords.empty() && static_cast<Index>(coords.size()) != want) {
            throw Error(ErrorKind::dimension_mismatch,
                        function->describe() + " takes " + std::to_string(want) + " coordinate(s)");
        }
        for (Index c : coords) {
            if (c < 0) { throw Error(ErrorKind::invalid_argument, "negative coordinate index"); }
        }
        terms_.push_back({std::move(function), std::move(coords)});
        return *this;
    }

    Kernel &operator+=(const Kernel &other) {
        terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
        return *this;
    }

    friend Kernel operator+(Kernel a, const Kernel &b) { return a += b; }

    [[nodiscard]] const std::vector<KernelTerm> &terms() const { return terms_; }
    [[nodiscard]] std::size_t term_count() const { return terms_.size(); }
    [[nodiscard]] bool empty() const { return terms_.empty(); }

    [[nodiscard]] Kernel term(std::size_t i) const {
        Kernel k;
        k.terms_.push_back(terms_.at(i));
        return k;
    }

    /// Smallest point length that every selector can address (0 if unconstrained).
    [[nodiscard]] Index min_point_dim() const {
        Index need = 0;
        for (const auto &term : terms_) {
            for (Index c : term.coords) { need = std::max(need, c + 1); }
            if (term.coords.empty() && term.function->input_dim() > 0) {
                need = std::max(need, term.function->input_dim());
            }
        }
        return need;
    }

    void check_point(Index dim) const {
        if (dim < min_point_dim()) {
            throw Error(ErrorKind::dimension_mismatch, "point has " + std::to_string(dim) +
                                                           " coordinates, kernel needs " +
                                                           std::to_string(min_point_dim()));
        }
        for (const auto &term : terms_) {
            const Index want = term.function->input_dim();
            if (term.coords.empty() && want >= 0 && dim != want) {
                throw Error(ErrorKind::dimension_mismatch,
                            term.function->describe() + " applied to a point of length " + std::to_string(dim));
            }
        }
    }

    [[nodiscard]] double operator()(VectorRef s, VectorRef t) const {
        if (s.size() != t.size()) { throw Error(ErrorKind::dimension_mismatch, "points differ in length"); }
        check_point(s.size());
        return eval_unchecked(s, t);
    }

    [[nodiscard]] double eval_unchecked(VectorRef s, VectorRef t) const {
        double r = 0.0;
        for (const auto &term : terms_) {
            if (term.coords.empty()) {
                r += term.function->eval(s, t);
            } else if (term.coords.size() == 1) {
                const Index c = term.coords.front();
                r += term.function->eval(s.segment(c, 1), t.segment(c, 1));
            } else {
                r += term.function->eval(s(term.coords), t(term.coords));
            }
        }
        return r;
    }

    /// Total feature count when every term has an exact series, else 0.
    [[nodiscard]] Index series_size(Index point_dim) const {
        Index total = 0;
        for (const auto &term : terms_) {
            const Index dim = term.coords.empty() ? point_dim : static_cast<Index>(term.coords.size());
            const Index v = term.function->series_size(dim);
            if (v == 0) { return 0; }
            total += v;
        }
        return total;
    }

    void features(VectorRef x, Eigen::Ref<Vector> out) const {
        Index offset = 0;
        for (const auto &term : terms_) {
            const Index dim = term.coords.empty() ? x.size() : static_cast<Index>(term.coords.size());
            const Index v = term.function->series_size(dim);
            if (term.coords.empty()) {
                term.function->features(x, out.segment(offset, v));
            } else {
                const Vector sub = x(term.coords);
                term.function->features(sub, out.segment(offset, v));
            }
            offset += v;
        }
    }

    [[nodiscard]] std::string describe() const {
        std::string out;
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            if (i) { out += " + "; }
            out += terms_[i].function->describe();
            if (!terms_[i].coords.empty()) {
                out += "@[";
                for (std::size_t j = 0; j < terms_[i].coords.size(); ++j) {
                    if (j) { out += ","; }
                    out += std::to_string(terms_[i].coords[j]);
                }
                out += "]";
            }
        }
        return out.empty() ? "zero" : out;
    }

private:
    std::vector<KernelTerm> terms_;
};

/// Pointwise product of two kernels, each with its own selectors, for
/// varying-coefficient forms.
class ProductKernel final : public KernelFunction {
public:
    ProductKernel(Kernel left, Kernel right) : left_(std::move(left)), right_(std::move(right)) {}

    [[nodiscard]] double eval(VectorRef s, VectorRef t) const override {
        return left_.eval_unchecked(s, t) * right_.eval_unchecked(s, t);
    }

    [[nodiscard]] std::string describe() const override {
        return "product(" + left_.describe() + ", " + right_.describe() + ")";
    }

private:
    Kernel left_;
    Kernel right_;
};

/// Additive kernel sum_k C(s^(k), t^(k)) with the same base function on each
/// of the given coordinates.
inline Kernel additive(const std::shared_ptr<const KernelFunction> &base, const std::vector<Index> &coords) {
    Kernel k;
    for (Index c : coords) { k.add(base, {c}); }
    return k;
}

inline std::vector<Index> coordinate_range(Index first, Index last_exclusive) {
    std::vector<Index> out(static_cast<std::size_t>(std::max<Index>(0, last_exclusive - first)));
    std::iota(out.begin(), out.end(), first);
    return out;
}

/// M[i][j] = C(X_i, X_j) over the rows of `x`. The upper triangle is computed
/// and mirrored so the result is exactly symmetric.
inline Matrix gram_matrix(const Kernel &kernel, MatrixRef x) {
    const Index n = x.rows();
    if (n < 1) { throw Error(ErrorKind::invalid_argument, "gram_matrix needs at least one point"); }
    kernel.check_point(x.cols());
    const Matrix xt = x.transpose();
    Matrix gram(n, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i <= j; ++i) {
            const double v = kernel.eval_unchecked(xt.col(i), xt.col(j));
            if (!std::isfinite(v)) {
                throw Error(ErrorKind::domain, "non-finite kernel value at (" + std::to_string(i) + "," +
                                                   std::to_string(j) + ")");
            }
            gram(i, j) = v;
            gram(j, i) = v;
        }
    }
    return gram;
}

/// Cross matrix K[i][r] = C(X_i, Z_r).
inline Matrix cross_gram(const Kernel &kernel, MatrixRef x, MatrixRef z) {
    if (x.cols() != z.cols()) { throw Error(ErrorKind::dimension_mismatch, "cross_gram point lengths differ"); }
    kernel.check_point(x.cols());
    const Matrix xt = x.transpose();
    const Matrix zt = z.transpose();
    Matrix out(x.rows(), z.rows());
    for (Index r = 0; r < z.rows(); ++r) {
        for (Index i = 0; i < x.rows(); ++i) { out(i, r) = kernel.eval_unchecked(xt.col(i), zt.col(r)); }
    }
    return out;
}

/// Entry (i,v) = lambda_v phi_v(x_i) for the first `count` series terms.
inline Matrix feature_matrix(const SeriesKernel &kernel, VectorRef x, Index count) {
    if (count > kernel.size()) {
        throw Error(ErrorKind::invalid_argument, "requested " + std::to_string(count) + " features, kernel has " +
                                                     std::to_string(kernel.size()));
    }
    Matrix out(x.size(), count);
    for (Index i = 0; i < x.size(); ++i) {
        for (Index v = 0; v < count; ++v) { out(i, v) = kernel.lambda(v) * kernel.phi(v, x[i]); }
    }
    return out;
}

/// Concatenated exact-series features of every term; gram = F F^T.
inline Matrix feature_matrix(const Kernel &kernel, MatrixRef x) {
    kernel.check_point(x.cols());
    const Index v = kernel.series_size(x.cols());
    if (v == 0) { throw Error(ErrorKind::invalid_argument, "kernel " + kernel.describe() + " has no exact series"); }
    Matrix out(x.rows(), v);
    Vector row(v);
    for (Index i = 0; i < x.rows(); ++i) {
        kernel.features(x.row(i).transpose(), row);
        out.row(i) = row.transpose();
    }
    return out;
}

/// True when the smallest eigenvalue is at least -tol * trace.
inline bool is_psd(MatrixRef gram, double tol = 1e-8) {
    const Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol * std::max(gram.trace(), 0.0);
}

/// C = C_R0 + C_R1: null space kernel and alternative (instrument) kernel.
struct NullAltSplit {
    Kernel null_kernel;
    Kernel alt_kernel;

    [[nodiscard]] bool psd_on(MatrixRef x, double tol = 1e-8) const {
        return is_psd(gram_matrix(null_kernel, x), tol) && is_psd(gram_matrix(alt_kernel, x), tol);
    }
};

}  // namespace rkhstest
