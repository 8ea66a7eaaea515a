#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rkhstest {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

/// Failure categories surfaced to callers and to the CLI's error line.
enum class ErrorKind {
    invalid_argument,
    dimension_mismatch,
    domain,
    numerical,
    config,
    io,
    data,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::data: return "data";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &what)
        : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Observations (Y_i, X_i), i = 1..n. Rows of `x` are the points.
struct Dataset {
    Vector y;
    Matrix x;
    std::vector<std::string> covariate_names;
    std::string response_name = "y";

    [[nodiscard]] Index size() const { return x.rows(); }
    [[nodiscard]] Index dim() const { return x.cols(); }
};

/// Affine map applied column-wise by standardization: x' = (x - shift) / scale.
struct ColumnScaler {
    double shift = 0.0;
    double scale = 1.0;
};

}  // namespace rkhstest
