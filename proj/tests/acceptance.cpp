// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Pass a criterion number to run only that one.

#include "rkhstest/rkhstest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace rkhstest;

namespace {

constexpr std::uint64_t kSeed = 20240601;

unsigned worker_threads() { return std::max(1U, std::thread::hardware_concurrency()); }

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string &what) {
        pass = pass && ok;
        detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [miss]");
    }
};

std::string num(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

const RejectionRow &row_at(const RejectionTable &t, double size) {
    for (const auto &r : t.rows) {
        if (std::abs(r.size - size) < 1e-12) { return r; }
    }
    throw Error(ErrorKind::invalid_argument, "size not tabulated");
}

McConfig mc(Design design, NullHypothesis null, Index n, Index k, double pair_corr, CorrelationShape shape, double snr,
            Index replicates, std::uint64_t seed) {
    McConfig c;
    c.dgp.design = design;
    c.dgp.n = n;
    c.dgp.K = k;
    c.dgp.pair_corr = pair_corr;
    c.dgp.shape = shape;
    c.dgp.snr = snr;
    c.hypothesis = null;
    c.replicates = replicates;
    c.sizes = {0.05};
    c.seed = seed;
    c.threads = worker_threads();
    return c;
}

std::string describe(const RejectionTable &t) {
    const auto &r = row_at(t, 0.05);
    std::string s = "no_pi=" + num(r.freq_no_pi) + " pi=" + num(r.freq_pi) + " (" + std::to_string(r.replicates) +
                    " reps";
    if (t.failed > 0) { s += ", " + std::to_string(t.failed) + " failed"; }
    return s + ")";
}

// ------------------------------------------------------------------ 1

Verdict criterion1() {
    Verdict v;
    struct Cell {
        double rho, pi, no_pi;
    };
    for (const Cell &cell : {Cell{0.0, 0.06, 0.03}, Cell{0.75, 0.05, 0.02}}) {
        const RejectionTable t = run_monte_carlo(
            mc(Design::Lin3, NullHypothesis::Lin3, 100, 10, cell.rho, CorrelationShape::equi, 1.0, 500, kSeed));
        const auto &r = row_at(t, 0.05);
        v.check(std::abs(r.freq_pi - cell.pi) <= 0.03 && t.failed == 0,
                "rho=" + num(cell.rho, 2) + " pi=" + num(r.freq_pi) + " vs " + num(cell.pi, 2));
        v.check(std::abs(r.freq_no_pi - cell.no_pi) <= 0.03,
                "rho=" + num(cell.rho, 2) + " no_pi=" + num(r.freq_no_pi) + " vs " + num(cell.no_pi, 2));
    }
    return v;
}

// ------------------------------------------------------------------ 2

Verdict criterion2() {
    Verdict v;
    McConfig c = mc(Design::LinAll, NullHypothesis::Lin3, 1000, 10, 0.0, CorrelationShape::geometric, 1.0, 200,
                    kSeed + 2);
    c.scope = InstrumentScope::complement;
    const RejectionTable t = run_monte_carlo(c);
    const auto &r = row_at(t, 0.05);
    v.check(r.freq_pi >= 0.98 && r.freq_no_pi >= 0.98 && t.failed == 0, "n=1000 " + describe(t));
    c.dgp.n = 400;
    const RejectionTable f = run_monte_carlo(c);
    const auto &rf = row_at(f, 0.05);
    v.check(rf.freq_pi >= 0.95 && rf.freq_no_pi >= 0.95 && f.failed == 0, "n=400 " + describe(f));
    return v;
}

// ------------------------------------------------------------------ 3

Verdict criterion3() {
    Verdict v;
    const RejectionTable t = run_monte_carlo(
        mc(Design::LinAll, NullHypothesis::LinAll, 1000, 10, 0.0, CorrelationShape::geometric, 1.0, 200, kSeed + 3));
    const auto &r = row_at(t, 0.05);
    v.check(r.freq_no_pi >= 0.15, "no_pi=" + num(r.freq_no_pi) + " >= 0.15");
    v.check(std::abs(r.freq_pi - 0.05) <= 0.04 && t.failed == 0, "pi=" + num(r.freq_pi) + " within 0.05+-0.04");
    return v;
}

// ------------------------------------------------------------------ 4

Verdict criterion4() {
    Verdict v;
    McConfig c = mc(Design::Bivariate, NullHypothesis::BivLinAll, 1000, 2, 0.0, CorrelationShape::geometric, 0.2, 100,
                    kSeed + 4);
    c.instrument_count = 200;
    const RejectionTable t = run_monte_carlo(c);
    const auto &r = row_at(t, 0.05);
    v.check(r.freq_pi >= 0.95 && t.failed == 0, "pi=" + num(r.freq_pi) + " >= 0.95");
    v.check(r.freq_no_pi <= 0.10, "no_pi=" + num(r.freq_no_pi) + " <= 0.10");
    return v;
}

// ------------------------------------------------------------------ 5

Verdict criterion5() {
    Verdict v;
    const Index n = 200;
    std::mt19937_64 rng(kSeed + 5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> z;
    Dataset d;
    d.x.resize(n, 3);
    d.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < 3; ++j) { d.x(i, j) = u(rng); }
        d.y[i] = std::sin(3.0 * d.x(i, 0)) + d.x(i, 1) * d.x(i, 1) - 0.5 * d.x(i, 2) + 0.3 * z(rng);
    }
    const Kernel k =
        additive(std::make_shared<const SeriesKernel>(SeriesKernel::polynomial(10, 2.2)), coordinate_range(0, 3));
    const Matrix c = gram_matrix(k, d.x);
    const SymmetricEigen eig(c);
    const Vector free_a = fit_ridge(eig, d.y, 0.0);
    const double budget = 0.5 * std::sqrt(free_a.dot(c * free_a));
    const double rho = solve_rho_for_budget(eig, d.y, budget);
    const Vector oracle_fit = c * fit_ridge(eig, d.y, rho);
    const LossSpec loss = square_loss();
    const double best = empirical_risk(loss, d.y, oracle_fit);

    // Curvature of P_n (y - f)^2 over the ball: 2 sup P_n (s - x)^2 = 8 B^2 lambda_max(C) / n.
    const double curvature = 8.0 * budget * budget * eig.values().maxCoeff() / static_cast<double>(n);
    v.check(rho > 0.0, "budget binding (rho=" + sci(rho) + ")");

    auto gaps = [&](StepRule rule) {
        FitConfig cfg;
        cfg.budget = budget;
        cfg.norm_kind = NormKind::HK;
        cfg.iterations = 500;
        cfg.step_rule = rule;
        cfg.line_search_tol = 1e-10;
        const FittedModel m = greedy_fit(d, loss, k, cfg);
        std::vector<double> out;
        for (int it = 50; it <= 500; it += 50) {
            out.push_back(std::max(0.0, m.trace[static_cast<std::size_t>(it - 1)].objective - best));
        }
        return out;
    };
    double harmonic = 0.0;
    std::vector<double> h(501);
    for (int m = 1; m <= 500; ++m) { h[static_cast<std::size_t>(m)] = harmonic += 1.0 / m; }

    for (StepRule rule : {StepRule::line_search, StepRule::two_over_m_plus_two}) {
        const auto e = gaps(rule);
        double worst = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) { worst = std::max(worst, e[i] * 50.0 * (i + 1)); }
        const std::string name = rule == StepRule::line_search ? "line_search" : "2/(m+2)";
        v.check(worst <= 2.0 * curvature, name + " max m*eps=" + sci(worst) + " <= 2C=" + sci(2.0 * curvature));
        v.check(gaps(rule) == e, name + " rerun reproduces c");
    }
    const auto e = gaps(StepRule::one_over_m);
    double worst = 0.0;
    double ratio = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const int m = 50 * static_cast<int>(i + 1);
        worst = std::max(worst, m * e[i] / (0.5 * curvature * h[static_cast<std::size_t>(m)]));
        ratio = std::max(ratio, m * e[i] / std::log(1.0 + m));
    }
    v.check(worst <= 1.0, "1/m max m*eps/ln(1+m)=" + sci(ratio) + ", bound use " + num(worst, 4));
    return v;
}

// ------------------------------------------------------------------ 6

Matrix gaussian_matrix(Index n, Index k, std::mt19937_64 &rng) {
    std::normal_distribution<double> z;
    Matrix a(n, k);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < k; ++j) { a(i, j) = z(rng); }
    }
    return a;
}

Verdict criterion6() {
    Verdict v;
    std::mt19937_64 rng(kSeed + 6);

    {
        const Matrix a = gaussian_matrix(60, 40, rng);
        const Matrix c = a * a.transpose();
        const Vector y = gaussian_matrix(60, 1, rng).col(0);
        double worst = 0.0;
        for (double rho : {1e-4, 0.1, 10.0}) {
            const Vector coef = fit_ridge(c, y, rho);
            worst = std::max(worst, (c * coef + rho * coef - y).norm() / y.norm());
        }
        v.check(worst <= 1e-8, "ridge residual " + sci(worst));

        const SymmetricEigen eig(c);
        const Vector free_a = fit_ridge(eig, y, 0.0);
        const double b = 0.2 * std::sqrt(free_a.dot(c * free_a));
        const Vector coef = fit_ridge(eig, y, solve_rho_for_budget(eig, y, b));
        const double rel = std::abs(coef.dot(c * coef) - b * b) / (b * b);
        v.check(rel <= 1e-6, "budget equation " + sci(rel));
    }
    {
        Matrix x(50, 3);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (Index i = 0; i < 50; ++i) {
            for (Index j = 0; j < 3; ++j) { x(i, j) = u(rng); }
        }
        const Matrix c0 = gram_matrix(additive(std::make_shared<const LinearKernel>(), {0, 1, 2}), x);
        const Matrix raw = cross_gram(Kernel(GaussianRbf(0.75)), x, x.topRows(12));
        const Matrix h = project_instruments(c0, Vector::Ones(50), raw, 0.0);
        double worst = 0.0;
        for (Index r = 0; r < h.cols(); ++r) {
            worst = std::max(worst, (c0.transpose() * h.col(r)).norm() / (c0.norm() * h.col(r).norm()));
        }
        v.check(worst <= 1e-8, "orthogonality " + sci(worst));

        bool psd = true;
        for (const Kernel &k : {Kernel(GaussianRbf(0.5)), Kernel(PolynomialKernel::with_decay(10, 2.2)),
                                additive(std::make_shared<const IntegratedBrownianKernel>(2), {0})}) {
            Matrix pts = x.topRows(20);
            pts = (pts.array() + 2.0) / 4.0;
            const Matrix g = gram_matrix(k, pts);
            const Eigen::SelfAdjointEigenSolver<Matrix> es(g);
            psd = psd && es.eigenvalues().minCoeff() >= -1e-8 * g.trace();
        }
        v.check(psd, "Gram PSD");

        const SeriesKernel series = SeriesKernel::polynomial(10, 2.2);
        const Matrix f = feature_matrix(series, x.col(0) / 2.0, 10);
        const Matrix g = f * f.transpose();
        const Matrix gk = gram_matrix(Kernel(series), Matrix(x.col(0) / 2.0));
        double gap = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const Vector grad = gaussian_matrix(50, 1, rng).col(0);
            const GreedyDirection a = greedy_direction_series(grad, f);
            const GreedyDirection b = greedy_direction(grad, gk);
            gap = std::max(gap, (a.values - b.values).cwiseAbs().maxCoeff());
            gap = std::max(gap, std::abs(a.multiplier - b.multiplier));
        }
        (void)g;
        v.check(gap <= 1e-10, "series/Gram direction " + sci(gap));
    }
    {
        double worst = 0.0;
        std::uniform_real_distribution<double> t(-5.0, 5.0);
        for (const auto &loss : {square_loss(), rescaled_square_loss(), poisson_loss(), logistic_loss(), duration_loss()}) {
            for (int rep = 0; rep < 100; ++rep) {
                double y = 1.0;
                if (loss.kind == LossKind::logistic) { y = rep % 2 ? 1.0 : -1.0; }
                if (loss.kind == LossKind::poisson_count) { y = rep % 5; }
                if (loss.kind == LossKind::duration_hazard) { y = 0.1 + 0.05 * rep; }
                if (loss.kind == LossKind::square || loss.kind == LossKind::rescaled_square) { y = t(rng); }
                const double at = t(rng);
                const double h = 1e-5;
                for (int order = 1; order <= 3; ++order) {
                    auto f = [&](double s) {
                        return order == 1 ? loss_value(loss, y, s) : loss_deriv(loss, order - 1, y, s);
                    };
                    const double fd = (f(at + h) - f(at - h)) / (2.0 * h);
                    const double an = loss_deriv(loss, order, y, at);
                    worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
                }
            }
        }
        v.check(worst <= 1e-6, "loss derivatives " + sci(worst));
    }
    {
        Vector w(2);
        w << 0.5, 0.5;
        std::mt19937_64 sim(stream_seed(kSeed, 6));
        Vector draws = simulate_null(w, 100000, sim);
        std::sort(draws.begin(), draws.end());
        double ks = 0.0;
        const double m = static_cast<double>(draws.size());
        for (Index i = 0; i < draws.size(); ++i) {
            const double cdf = 1.0 - std::exp(-draws[i]);
            ks = std::max({ks, (i + 1) / m - cdf, cdf - i / m});
        }
        v.check(ks < 1.628 / std::sqrt(m), "KS " + sci(ks));

        const double lo = p_value(1e9, draws);
        const double hi = p_value(-1.0, draws);
        v.check(lo == 1.0 / (m + 1.0) && hi == 1.0, "p-value bounds");
    }
    {
        McConfig c = mc(Design::Lin3, NullHypothesis::Lin3, 60, 5, 0.3, CorrelationShape::geometric, 1.0, 3, kSeed);
        c.iterations = 50;
        c.null_draws = 500;
        const auto a = run_replicates(c);
        const auto b = run_replicates(c);
        bool same = true;
        for (std::size_t i = 0; i < a.size(); ++i) { same = same && a[i].ok && a[i].p_pi == b[i].p_pi; }
        v.check(same, "determinism");
    }
    return v;
}

// ------------------------------------------------------------------ 7

// Straight-line version of the matrix recipe: ridge fit on the null Gram with
// the multiplier that meets the budget, residuals, projected normalized
// sections, product-form covariance and its spectrum.
struct OracleOut {
    double stat;
    std::vector<double> eig;
};

OracleOut straight_line(const Matrix &x, const Vector &y, double budget, Index r) {
    const Index n = x.rows();
    auto c0 = [&](Index i, Index j) {
        return 0.5 + 0.5 * (x(i, 0) * x(j, 0) + x(i, 1) * x(j, 1));
    };
    auto c1 = [&](Index i, Index j) {
        const double d0 = x(i, 0) - x(j, 0);
        const double d1 = x(i, 1) - x(j, 1);
        return 0.5 * std::exp(-0.5 * (d0 * d0 + d1 * d1) / (0.75 * 0.75));
    };
    Matrix C0(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) { C0(i, j) = c0(i, j); }
    }
    // |a|_C^2 as a function of rho through the solve itself.
    auto coef = [&](double rho) -> Vector { return (C0 + rho * Matrix::Identity(n, n)).fullPivLu().solve(y); };
    auto norm2 = [&](double rho) {
        const Vector a = coef(rho);
        return a.dot(C0 * a);
    };
    double lo = 0.0;
    double hi = 1.0;
    while (norm2(hi) > budget * budget) { hi *= 2.0; }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (norm2(mid) > budget * budget ? lo : hi) = mid;
    }
    const Vector a = coef(0.5 * (lo + hi));
    Vector e0(n);
    for (Index i = 0; i < n; ++i) {
        double fit = 0.0;
        for (Index j = 0; j < n; ++j) { fit += C0(i, j) * a[j]; }
        e0[i] = fit - y[i];
    }
    Matrix H(n, r);
    for (Index k = 0; k < r; ++k) {
        const double diag = std::sqrt(c1(k, k));
        for (Index i = 0; i < n; ++i) { H(i, k) = c1(i, k) / diag; }
    }
    const double rho_p = static_cast<double>(n) * std::pow(static_cast<double>(n), -0.4);
    const Matrix B = (C0 + rho_p * Matrix::Identity(n, n)).fullPivLu().solve(H);
    const Matrix Hp = H - C0 * B;
    double stat = 0.0;
    for (Index k = 0; k < r; ++k) {
        double m = 0.0;
        for (Index i = 0; i < n; ++i) { m += e0[i] * Hp(i, k); }
        stat += m * m;
    }
    stat /= static_cast<double>(n * r);
    double s2 = 0.0;
    for (Index i = 0; i < n; ++i) { s2 += e0[i] * e0[i]; }
    s2 /= static_cast<double>(n);
    Matrix sigma(r, r);
    for (Index k = 0; k < r; ++k) {
        for (Index l = 0; l < r; ++l) {
            double acc = 0.0;
            for (Index i = 0; i < n; ++i) { acc += Hp(i, k) * Hp(i, l); }
            sigma(k, l) = s2 * acc / static_cast<double>(n) / static_cast<double>(r);
        }
    }
    const Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
    std::vector<double> w(es.eigenvalues().data(), es.eigenvalues().data() + r);
    std::sort(w.begin(), w.end(), std::greater<>());
    for (double &x_ : w) { x_ = std::max(x_, 0.0); }
    return {stat, w};
}

Verdict criterion7() {
    Verdict v;
    std::mt19937_64 rng(kSeed + 7);
    const Index n = 50;
    Dataset d;
    d.x = gen_covariates(n, 2, 0.0, CorrelationShape::geometric, rng);
    d.y = gen_response(d.x, Design::Bivariate, 1.0, rng).y;

    const HypothesisSetup setup = null_kernel_for(NullHypothesis::BivLinAll, 2);
    const Matrix c0 = gram_matrix(setup.split.null_kernel, d.x);
    const Vector free_a = fit_ridge(c0, d.y, 0.0);
    const double budget = 0.5 * std::sqrt(free_a.dot(c0 * free_a));

    TestSpec spec;
    spec.split = setup.split;
    spec.fit.solver = Solver::ridge_closed_form;
    spec.fit.norm_kind = NormKind::HK;
    spec.fit.budget = budget;
    spec.options.instrument_mode = InstrumentMode::kernel_sections_normalized;
    spec.options.null_draws = 1000;
    spec.options.seed = kSeed;
    const TestResult res = run_test(d, spec);
    const OracleOut oracle = straight_line(d.x, d.y, budget, n);

    const double stat_err = std::abs(res.statistic - oracle.stat) / std::max(1e-300, std::abs(oracle.stat));
    v.check(stat_err <= 1e-10 && res.restricted_ridge_rho > 0.0, "statistic rel err " + sci(stat_err));
    double eig_err = static_cast<Index>(oracle.eig.size()) == res.spectrum.size() ? 0.0 : 1.0;
    for (std::size_t k = 0; k < oracle.eig.size() && eig_err < 1.0; ++k) {
        eig_err = std::max(eig_err, std::abs(res.spectrum[static_cast<Index>(k)] - oracle.eig[k]) /
                                        std::max(1e-300, oracle.eig[0]));
    }
    v.check(eig_err <= 1e-10, "eigenvalue err " + sci(eig_err) + " (R=" + std::to_string(res.spectrum.size()) + ")");
    return v;
}

}  // namespace

int main(int argc, char **argv) {
    std::vector<std::function<Verdict()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                   criterion5, criterion6, criterion7};
    std::vector<int> which;
    for (int i = 1; i < argc; ++i) { which.push_back(std::atoi(argv[i])); }
    if (which.empty()) {
        which.resize(criteria.size());
        std::iota(which.begin(), which.end(), 1);
    }
    int failed = 0;
    for (int c : which) {
        if (c < 1 || c > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion " << c << "\n";
            return 2;
        }
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[static_cast<std::size_t>(c - 1)]();
        } catch (const std::exception &e) {
            v.pass = false;
            v.detail << "error: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << "criterion " << c << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail.str() << "  ["
                  << num(secs, 1) << "s]" << std::endl;
        failed += v.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
