#pragma once

#include "rkhstest/types.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace rkhstest {

enum class LossKind { square, rescaled_square, poisson_count, logistic, duration_hazard, absolute, custom };

/// A loss L(y, t) together with its partial derivatives in t. For smooth
/// losses deriv2 and deriv3 are set; the absolute loss only has deriv1.
struct LossSpec {
    using Fn = std::function<double(double, double)>;

    LossKind kind = LossKind::custom;
    std::string name;
    bool smooth = true;
    Fn value;
    Fn deriv1;
    Fn deriv2;
    Fn deriv3;
    std::function<bool(double)> admissible = [](double y) { return std::isfinite(y); };
    std::string admissible_text = "finite";
};

namespace detail {

inline double log1p_exp(double u) {
    return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

inline double sigmoid(double u) {
    if (u >= 0.0) { return 1.0 / (1.0 + std::exp(-u)); }
    const double e = std::exp(u);
    return e / (1.0 + e);
}

}  // namespace detail

/// (y - t)^2; deriv1 = -2 (y - t).
inline LossSpec square_loss() {
    LossSpec s;
    s.kind = LossKind::square;
    s.name = "square";
    s.value = [](double y, double t) { return (y - t) * (y - t); };
    s.deriv1 = [](double y, double t) { return -2.0 * (y - t); };
    s.deriv2 = [](double, double) { return 2.0; };
    s.deriv3 = [](double, double) { return 0.0; };
    return s;
}

/// (y - t)^2 / 2, so that the second derivative is identically one.
inline LossSpec rescaled_square_loss() {
    LossSpec s;
    s.kind = LossKind::rescaled_square;
    s.name = "rescaled_square";
    s.value = [](double y, double t) { return 0.5 * (y - t) * (y - t); };
    s.deriv1 = [](double y, double t) { return -(y - t); };
    s.deriv2 = [](double, double) { return 1.0; };
    s.deriv3 = [](double, double) { return 0.0; };
    return s;
}

/// Poisson negative log-likelihood in the log-mean: e^t - y t.
inline LossSpec poisson_loss() {
    LossSpec s;
    s.kind = LossKind::poisson_count;
    s.name = "poisson_count";
    s.value = [](double y, double t) { return std::exp(t) - y * t; };
    s.deriv1 = [](double y, double t) { return std::exp(t) - y; };
    s.deriv2 = [](double, double t) { return std::exp(t); };
    s.deriv3 = [](double, double t) { return std::exp(t); };
    s.admissible = [](double y) { return std::isfinite(y) && y >= 0.0; };
    s.admissible_text = "y >= 0";
    return s;
}

/// ln(1 + e^{-y t}) with y in {-1, +1}.
inline LossSpec logistic_loss() {
    LossSpec s;
    s.kind = LossKind::logistic;
    s.name = "logistic";
    s.value = [](double y, double t) { return detail::log1p_exp(-y * t); };
    s.deriv1 = [](double y, double t) { return -y * detail::sigmoid(-y * t); };
    s.deriv2 = [](double y, double t) {
        return detail::sigmoid(y * t) * detail::sigmoid(-y * t);
    };
    s.deriv3 = [](double y, double t) {
        const double p = detail::sigmoid(y * t);
        const double q = detail::sigmoid(-y * t);
        return y * p * q * (q - p);
    };
    s.admissible = [](double y) { return y == 1.0 || y == -1.0; };
    s.admissible_text = "y in {-1, +1}";
    return s;
}

/// Duration/hazard negative log-likelihood y e^t - t with y > 0.
inline LossSpec duration_loss() {
    LossSpec s;
    s.kind = LossKind::duration_hazard;
    s.name = "duration_hazard";
    s.value = [](double y, double t) { return y * std::exp(t) - t; };
    s.deriv1 = [](double y, double t) { return y * std::exp(t) - 1.0; };
    s.deriv2 = [](double y, double t) { return y * std::exp(t); };
    s.deriv3 = [](double y, double t) { return y * std::exp(t); };
    s.admissible = [](double y) { return std::isfinite(y) && y > 0.0; };
    s.admissible_text = "y > 0";
    return s;
}

/// |y - t|. Its generalized derivative is 2 * 1{y - t >= 0} - 1, so the kink
/// y = t maps to +1.
inline LossSpec absolute_loss() {
    LossSpec s;
    s.kind = LossKind::absolute;
    s.name = "absolute";
    s.smooth = false;
    s.value = [](double y, double t) { return std::abs(y - t); };
    s.deriv1 = [](double y, double t) { return y - t >= 0.0 ? 1.0 : -1.0; };
    return s;
}

inline LossSpec make_loss(const std::string &name) {
    if (name == "square") { return square_loss(); }
    if (name == "rescaled_square") { return rescaled_square_loss(); }
    if (name == "poisson_count" || name == "poisson") { return poisson_loss(); }
    if (name == "logistic") { return logistic_loss(); }
    if (name == "duration_hazard" || name == "duration") { return duration_loss(); }
    if (name == "absolute") { return absolute_loss(); }
    throw Error(ErrorKind::invalid_argument, "unknown loss '" + name + "'");
}

inline void check_admissible(const LossSpec &spec, double y) {
    if (!spec.admissible(y)) {
        throw Error(ErrorKind::domain, spec.name + " loss needs " + spec.admissible_text + ", got y = " +
                                           std::to_string(y));
    }
}

inline void check_admissible(const LossSpec &spec, VectorRef y) {
    for (Index i = 0; i < y.size(); ++i) {
        if (!spec.admissible(y[i])) {
            throw Error(ErrorKind::domain, spec.name + " loss needs " + spec.admissible_text + ", row " +
                                               std::to_string(i) + " has y = " + std::to_string(y[i]));
        }
    }
}

inline double loss_value(const LossSpec &spec, double y, double t) {
    check_admissible(spec, y);
    if (!std::isfinite(t)) { throw Error(ErrorKind::domain, "loss evaluated at non-finite t"); }
    return spec.value(y, t);
}

inline double loss_deriv(const LossSpec &spec, int order, double y, double t) {
    check_admissible(spec, y);
    if (order < 1 || order > 3) { throw Error(ErrorKind::invalid_argument, "derivative order must be 1, 2 or 3"); }
    if (order > 1 && !spec.smooth) {
        throw Error(ErrorKind::invalid_argument,
                    spec.name + " loss has no derivative of order " + std::to_string(order));
    }
    switch (order) {
    case 1: return spec.deriv1(y, t);
    case 2: return spec.deriv2(y, t);
    default: return spec.deriv3(y, t);
    }
}

/// P_n L(Y, F(X)) = n^{-1} sum_i L(y_i, f_i).
inline double empirical_risk(const LossSpec &spec, VectorRef y, VectorRef f) {
    double r = 0.0;
    for (Index i = 0; i < y.size(); ++i) { r += spec.value(y[i], f[i]); }
    return r / static_cast<double>(y.size());
}

}  // namespace rkhstest
