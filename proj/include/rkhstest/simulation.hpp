#pragma once

#include "rkhstest/estimator.hpp"
#include "rkhstest/hypothesis.hpp"
#include "rkhstest/kernel.hpp"
#include "rkhstest/types.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace rkhstest {

enum class Design { Lin3, LinAll, NonLinear, Bivariate };
enum class CorrelationShape { geometric, equi };
enum class Truncation { clip, reject };
enum class NullHypothesis { Lin1, Lin2, Lin3, LinAll, LinPoly, Lin1NonLin, BivLinAll };
/// Which h^(v,k) enter the series instrument set for Lin_J nulls.
enum class InstrumentScope { complement, restricted_only };

inline std::string to_string(Design d) {
    switch (d) {
    case Design::Lin3: return "Lin3";
    case Design::LinAll: return "LinAll";
    case Design::NonLinear: return "NonLinear";
    default: return "Bivariate";
    }
}

inline std::string to_string(NullHypothesis h) {
    switch (h) {
    case NullHypothesis::Lin1: return "Lin1";
    case NullHypothesis::Lin2: return "Lin2";
    case NullHypothesis::Lin3: return "Lin3";
    case NullHypothesis::LinAll: return "LinAll";
    case NullHypothesis::LinPoly: return "LinPoly";
    case NullHypothesis::Lin1NonLin: return "Lin1NonLin";
    default: return "BivLinAll";
    }
}

inline std::string to_string(CorrelationShape c) { return c == CorrelationShape::geometric ? "geometric" : "equi"; }

inline Design design_from_string(const std::string &s) {
    for (Design d : {Design::Lin3, Design::LinAll, Design::NonLinear, Design::Bivariate}) {
        if (to_string(d) == s) { return d; }
    }
    throw Error(ErrorKind::invalid_argument, "unknown design '" + s + "'");
}

inline NullHypothesis hypothesis_from_string(const std::string &s) {
    for (NullHypothesis h : {NullHypothesis::Lin1, NullHypothesis::Lin2, NullHypothesis::Lin3, NullHypothesis::LinAll,
                             NullHypothesis::LinPoly, NullHypothesis::Lin1NonLin, NullHypothesis::BivLinAll}) {
        if (to_string(h) == s) { return h; }
    }
    throw Error(ErrorKind::invalid_argument, "unknown hypothesis '" + s + "'");
}

struct DgpSpec {
    Design design = Design::Lin3;
    Index n = 100;
    Index K = 10;
    double pair_corr = 0.0;
    CorrelationShape shape = CorrelationShape::geometric;
    Truncation truncation = Truncation::clip;
    double snr = 1.0;

    bool operator==(const DgpSpec &) const = default;
};

inline constexpr double kTruncationBound = 2.0;

inline Matrix correlation_matrix(Index k, double pair_corr, CorrelationShape shape) {
    Matrix c(k, k);
    for (Index i = 0; i < k; ++i) {
        for (Index j = 0; j < k; ++j) {
            if (i == j) {
                c(i, j) = 1.0;
            } else if (shape == CorrelationShape::geometric) {
                c(i, j) = std::pow(pair_corr, static_cast<double>(std::abs(i - j)));
            } else {
                c(i, j) = pair_corr;
            }
        }
    }
    return c;
}

/// Standard normal rows with the given correlation, truncated to [-2, 2].
inline Matrix gen_covariates(Index n, Index k, double pair_corr, CorrelationShape shape, std::mt19937_64 &rng,
                             Truncation truncation = Truncation::clip) {
    if (n < 1 || k < 1) { throw Error(ErrorKind::invalid_argument, "covariates need n >= 1 and K >= 1"); }
    if (!(std::abs(pair_corr) < 1.0)) { throw Error(ErrorKind::invalid_argument, "pair_corr must lie in (-1, 1)"); }
    if (shape == CorrelationShape::equi && k > 1 && pair_corr < -1.0 / static_cast<double>(k - 1)) {
        throw Error(ErrorKind::domain, "equicorrelation " + std::to_string(pair_corr) + " is not PSD for K = " +
                                           std::to_string(k));
    }
    const Eigen::LLT<Matrix> llt(correlation_matrix(k, pair_corr, shape));
    if (llt.info() != Eigen::Success) { throw Error(ErrorKind::domain, "correlation matrix is not PSD"); }
    const Matrix l = llt.matrixL();
    std::normal_distribution<double> normal;
    Matrix x(n, k);
    Vector z(k);
    for (Index i = 0; i < n; ++i) {
        for (;;) {
            for (Index j = 0; j < k; ++j) { z[j] = normal(rng); }
            Vector row = l * z;
            if (truncation == Truncation::reject && row.cwiseAbs().maxCoeff() > kTruncationBound) { continue; }
            x.row(i) = row.cwiseMax(-kTruncationBound).cwiseMin(kTruncationBound).transpose();
            break;
        }
    }
    return x;
}

struct GeneratedResponse {
    Vector y;
    double noise_sd = 0.0;
    Vector mu;
};

inline double sample_variance(VectorRef v) {
    const double s = sample_sd(v);
    return s * s;
}

/// y = mu(X) + eps with sample Var(mu) / sigma_eps^2 = snr.
inline GeneratedResponse gen_response(MatrixRef x, Design design, double snr, std::mt19937_64 &rng) {
    if (!(snr > 0.0)) { throw Error(ErrorKind::invalid_argument, "snr must be > 0"); }
    const Index n = x.rows();
    const Index k = x.cols();
    auto need = [&](Index cols) {
        if (k < cols) {
            throw Error(ErrorKind::dimension_mismatch, to_string(design) + " design needs at least " +
                                                           std::to_string(cols) + " covariates");
        }
    };
    GeneratedResponse out;
    Vector mu(n);
    switch (design) {
    case Design::Lin3:
        need(3);
        mu = x.leftCols(3).rowwise().sum() / 3.0;
        break;
    case Design::LinAll:
        mu = x.rowwise().sum() / static_cast<double>(k);
        break;
    case Design::NonLinear: {
        need(4);
        std::vector<double> b(9);
        for (int v = 1; v <= 9; ++v) {
            std::uniform_real_distribution<double> u(-20.0 / v, 20.0 / v);
            b[static_cast<std::size_t>(v - 1)] = u(rng);
        }
        for (Index i = 0; i < n; ++i) {
            const double s = x(i, 3) / 2.0;
            double acc = x(i, 0);
            double p = 1.0;
            for (int v = 1; v <= 9; ++v) {
                p *= s;
                acc += b[static_cast<std::size_t>(v - 1)] * p;
            }
            mu[i] = acc;
        }
        break;
    }
    case Design::Bivariate: {
        need(2);
        for (Index i = 0; i < n; ++i) {
            const double x2 = x(i, 1);
            mu[i] = 0.5 * x(i, 0) + 1.5 * x2 - 4.0 * x2 * x2 + 3.0 * x2 * x2 * x2;
        }
        break;
    }
    }
    const double var = sample_variance(mu);
    if (!(var > 0.0)) { throw Error(ErrorKind::data, "zero-variance signal for design " + to_string(design)); }
    if (design == Design::Bivariate) {
        mu *= std::sqrt(snr / var);
        out.noise_sd = 1.0;
    } else {
        out.noise_sd = std::sqrt(var / snr);
    }
    std::normal_distribution<double> normal(0.0, out.noise_sd);
    out.y.resize(n);
    for (Index i = 0; i < n; ++i) { out.y[i] = mu[i] + normal(rng); }
    out.mu = std::move(mu);
    return out;
}

/// Kernel split and test recipe for a named hypothesis.
struct HypothesisSetup {
    NullAltSplit split;
    InstrumentMode instrument_mode = InstrumentMode::series_features;
    Solver solver = Solver::greedy;
    NormKind norm_kind = NormKind::LK;
};

inline constexpr int kSeriesDegree = 10;
inline constexpr double kSeriesDecay = 2.2;
inline constexpr double kGaussianLengthscale = 0.75;
inline constexpr double kGaussianVariance = 0.5;

inline HypothesisSetup null_kernel_for(NullHypothesis h, Index k, InstrumentScope scope = InstrumentScope::restricted_only) {
    HypothesisSetup s;
    auto linear = std::make_shared<const LinearKernel>(1.0);
    auto full = std::make_shared<const SeriesKernel>(SeriesKernel::polynomial(kSeriesDegree, kSeriesDecay));
    auto upper = std::make_shared<const SeriesKernel>(SeriesKernel::polynomial_range(2, kSeriesDegree, kSeriesDecay));

    auto lin_j = [&](Index j) {
        if (j > k) { throw Error(ErrorKind::dimension_mismatch, "hypothesis needs " + std::to_string(j) + " covariates"); }
        s.split.null_kernel = additive(linear, coordinate_range(0, j));
        Kernel alt = additive(upper, coordinate_range(0, j));
        if (scope == InstrumentScope::complement) { alt += additive(full, coordinate_range(j, k)); }
        if (alt.empty()) { throw Error(ErrorKind::invalid_argument, "empty instrument set"); }
        s.split.alt_kernel = alt;
    };

    switch (h) {
    case NullHypothesis::Lin1: lin_j(1); break;
    case NullHypothesis::Lin2: lin_j(2); break;
    case NullHypothesis::Lin3: lin_j(3); break;
    case NullHypothesis::LinAll: lin_j(k); break;
    case NullHypothesis::LinPoly:
        s.split.null_kernel = Kernel(linear, {0}) + additive(full, coordinate_range(1, k));
        s.split.alt_kernel = Kernel(upper, {0});
        break;
    case NullHypothesis::Lin1NonLin:
    case NullHypothesis::BivLinAll: {
        if (k != 2) { throw Error(ErrorKind::dimension_mismatch, to_string(h) + " is defined for two covariates"); }
        Kernel c0 = Kernel(ConstantKernel(0.5)) + Kernel(LinearKernel(0.5), {0, 1});
        const GaussianRbf g(kGaussianLengthscale, kGaussianVariance);
        if (h == NullHypothesis::Lin1NonLin) {
            c0 += Kernel(g, {1});
            s.split.alt_kernel = Kernel(g, {0});
        } else {
            s.split.alt_kernel = Kernel(g, {0, 1});
        }
        s.split.null_kernel = c0;
        s.instrument_mode = InstrumentMode::kernel_sections_normalized;
        s.solver = Solver::ridge_closed_form;
        s.norm_kind = NormKind::HK;
        break;
    }
    }
    return s;
}

// ---------------------------------------------------------- Monte Carlo

struct McConfig {
    DgpSpec dgp;
    NullHypothesis hypothesis = NullHypothesis::Lin3;
    InstrumentScope scope = InstrumentScope::restricted_only;
    Index replicates = 100;
    std::vector<double> sizes{0.10, 0.05};
    std::uint64_t seed = 0;
    unsigned threads = 1;

    int iterations = 500;
    StepRule step_rule = StepRule::line_search;
    double budget_multiplier = 10.0;
    Index instrument_count = 0;
    double proj_rho = -1.0;
    CovarianceVariant covariance = CovarianceVariant::product_form;
    Index null_draws = 10000;

    bool operator==(const McConfig &) const = default;
};

struct RejectionRow {
    std::string design;
    std::string null;
    Index n = 0;
    double rho = 0.0;
    double snr = 0.0;
    double size = 0.0;
    double freq_no_pi = 0.0;
    double freq_pi = 0.0;
    double mc_se = 0.0;  // binomial standard error of freq_pi
    Index replicates = 0;
};

struct RejectionTable {
    std::vector<RejectionRow> rows;
    std::string correlation_shape;
    Index failed = 0;
    std::vector<std::string> failures;
};

struct ReplicateOutcome {
    bool ok = false;
    double p_pi = 1.0;
    double p_no_pi = 1.0;
    std::string error;
};

/// One replicate: draw data from stream (seed, r) and run both tests.
inline ReplicateOutcome run_replicate(const McConfig &cfg, const HypothesisSetup &setup, Index r) {
    ReplicateOutcome out;
    try {
        std::mt19937_64 rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        Dataset data;
        data.x = gen_covariates(cfg.dgp.n, cfg.dgp.K, cfg.dgp.pair_corr, cfg.dgp.shape, rng, cfg.dgp.truncation);
        data.y = gen_response(data.x, cfg.dgp.design, cfg.dgp.snr, rng).y;

        TestSpec spec;
        spec.split = setup.split;
        spec.loss = rescaled_square_loss();
        spec.fit.budget = cfg.budget_multiplier * sample_sd(data.y);
        spec.fit.solver = setup.solver;
        spec.fit.norm_kind = setup.norm_kind;
        spec.fit.iterations = cfg.iterations;
        spec.fit.step_rule = cfg.step_rule;
        spec.options.instrument_mode = setup.instrument_mode;
        spec.options.instrument_count = cfg.instrument_count;
        spec.options.proj_rho = cfg.proj_rho;
        spec.options.covariance = cfg.covariance;
        spec.options.null_draws = cfg.null_draws;
        spec.options.seed = rng();
        const TestResult res = run_test(data, spec);
        out.p_pi = res.p_value;
        out.p_no_pi = res.naive_p_value;
        out.ok = true;
    } catch (const std::exception &e) {
        out.error = "replicate " + std::to_string(r) + ": " + e.what();
    }
    return out;
}

inline std::vector<ReplicateOutcome> run_replicates(const McConfig &cfg) {
    if (cfg.replicates < 1) { throw Error(ErrorKind::invalid_argument, "replicates must be >= 1"); }
    const HypothesisSetup setup = null_kernel_for(cfg.hypothesis, cfg.dgp.K, cfg.scope);
    std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(cfg.replicates));
    const unsigned threads = std::max(1U, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.replicates)));
    std::atomic<Index> next{0};
    auto worker = [&] {
        for (Index r = next++; r < cfg.replicates; r = next++) {
            outcomes[static_cast<std::size_t>(r)] = run_replicate(cfg, setup, r);
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) { pool.emplace_back(worker); }
        for (auto &t : pool) { t.join(); }
    }
    return outcomes;
}

inline RejectionTable tabulate(const McConfig &cfg, const std::vector<ReplicateOutcome> &outcomes) {
    for (double s : cfg.sizes) {
        if (!(s > 0.0 && s < 1.0)) { throw Error(ErrorKind::invalid_argument, "sizes must lie in (0, 1)"); }
    }
    RejectionTable table;
    table.correlation_shape = to_string(cfg.dgp.shape);
    Index ok = 0;
    for (const auto &o : outcomes) {
        if (o.ok) {
            ++ok;
        } else {
            ++table.failed;
            table.failures.push_back(o.error);
        }
    }
    for (double size : cfg.sizes) {
        Index rej_pi = 0;
        Index rej_no = 0;
        for (const auto &o : outcomes) {
            if (!o.ok) { continue; }
            rej_pi += o.p_pi <= size ? 1 : 0;
            rej_no += o.p_no_pi <= size ? 1 : 0;
        }
        RejectionRow row;
        row.design = to_string(cfg.dgp.design);
        row.null = to_string(cfg.hypothesis);
        row.n = cfg.dgp.n;
        row.rho = cfg.dgp.pair_corr;
        row.snr = cfg.dgp.snr;
        row.size = size;
        row.replicates = ok;
        if (ok > 0) {
            row.freq_pi = static_cast<double>(rej_pi) / static_cast<double>(ok);
            row.freq_no_pi = static_cast<double>(rej_no) / static_cast<double>(ok);
            row.mc_se = std::sqrt(row.freq_pi * (1.0 - row.freq_pi) / static_cast<double>(ok));
        }
        table.rows.push_back(row);
    }
    return table;
}

inline RejectionTable run_monte_carlo(const McConfig &cfg) { return tabulate(cfg, run_replicates(cfg)); }

}  // namespace rkhstest
