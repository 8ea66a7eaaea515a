#include "rkhstest/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace rkhstest;

namespace {

double sample_corr(VectorRef a, VectorRef b) {
    const Vector ca = a.array() - a.mean();
    const Vector cb = b.array() - b.mean();
    return ca.dot(cb) / (ca.norm() * cb.norm());
}

McConfig small_config() {
    McConfig cfg;
    cfg.dgp.design = Design::Lin3;
    cfg.dgp.n = 60;
    cfg.dgp.K = 5;
    cfg.hypothesis = NullHypothesis::Lin3;
    cfg.replicates = 4;
    cfg.iterations = 50;
    cfg.null_draws = 500;
    cfg.seed = 321;
    return cfg;
}

}  // namespace

TEST(Covariates, UncorrelatedAtZero) {
    std::mt19937_64 rng(1);
    const Matrix x = gen_covariates(100000, 3, 0.0, CorrelationShape::geometric, rng);
    for (Index a = 0; a < 3; ++a) {
        for (Index b = a + 1; b < 3; ++b) { EXPECT_LE(std::abs(sample_corr(x.col(a), x.col(b))), 0.05); }
    }
}

TEST(Covariates, TruncatedToBound) {
    for (Truncation t : {Truncation::clip, Truncation::reject}) {
        std::mt19937_64 rng(2);
        const Matrix x = gen_covariates(5000, 4, 0.5, CorrelationShape::equi, rng, t);
        EXPECT_LE(x.cwiseAbs().maxCoeff(), 2.0);
    }
    std::mt19937_64 rng(3);
    const Matrix x = gen_covariates(5000, 2, 0.0, CorrelationShape::geometric, rng);
    EXPECT_EQ(x.cwiseAbs().maxCoeff(), 2.0);  // clipping piles mass on the bound
}

TEST(Covariates, CorrelationShapes) {
    const Matrix g = correlation_matrix(3, 0.75, CorrelationShape::geometric);
    EXPECT_DOUBLE_EQ(g(0, 2), 0.5625);
    EXPECT_DOUBLE_EQ(g(0, 1), 0.75);
    const Matrix e = correlation_matrix(3, 0.75, CorrelationShape::equi);
    EXPECT_DOUBLE_EQ(e(0, 2), 0.75);
    EXPECT_DOUBLE_EQ(e(1, 1), 1.0);
    std::mt19937_64 rng(4);
    EXPECT_THROW(gen_covariates(10, 4, -0.5, CorrelationShape::equi, rng), Error);
    EXPECT_THROW(gen_covariates(10, 4, 1.0, CorrelationShape::equi, rng), Error);
}

TEST(Response, SnrIdentity) {
    for (Design d : {Design::Lin3, Design::LinAll, Design::NonLinear, Design::Bivariate}) {
        for (double snr : {1.0, 0.2}) {
            std::mt19937_64 rng(5);
            const Index k = d == Design::Bivariate ? 2 : 10;
            const Matrix x = gen_covariates(300, k, 0.3, CorrelationShape::geometric, rng);
            const GeneratedResponse r = gen_response(x, d, snr, rng);
            const double ratio = sample_variance(r.mu) / (r.noise_sd * r.noise_sd);
            EXPECT_NEAR(ratio, snr, 1e-12) << to_string(d);
            EXPECT_EQ(r.y.size(), 300);
        }
    }
}

TEST(Response, LowSnrGivesSmallRSquared) {
    std::mt19937_64 rng(55);
    const Matrix x = gen_covariates(100000, 10, 0.0, CorrelationShape::geometric, rng);
    const GeneratedResponse r = gen_response(x, Design::LinAll, 0.2, rng);
    EXPECT_NEAR(sample_variance(r.mu) / sample_variance(r.y), 0.167, 0.01);
}

TEST(Response, Lin3Mean) {
    std::mt19937_64 rng(6);
    const Matrix x = gen_covariates(20, 10, 0.0, CorrelationShape::geometric, rng);
    const GeneratedResponse r = gen_response(x, Design::Lin3, 1.0, rng);
    for (Index i = 0; i < 20; ++i) { EXPECT_NEAR(r.mu[i], (x(i, 0) + x(i, 1) + x(i, 2)) / 3.0, 1e-15); }
}

TEST(Response, ZeroVarianceSignal) {
    std::mt19937_64 rng(7);
    try {
        (void)gen_response(Matrix::Zero(50, 10), Design::Lin3, 1.0, rng);
        FAIL() << "expected an error";
    } catch (const Error &e) { EXPECT_EQ(e.kind(), ErrorKind::data); }
}

TEST(Hypotheses, LinThreeSplit) {
    const HypothesisSetup s = null_kernel_for(NullHypothesis::Lin3, 10);
    std::mt19937_64 rng(8);
    const Matrix x = gen_covariates(15, 10, 0.0, CorrelationShape::geometric, rng);
    const Matrix lin = x.leftCols(3) * x.leftCols(3).transpose();
    EXPECT_LE((gram_matrix(s.split.null_kernel, x) - lin).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(s.split.alt_kernel.series_size(10), 27);
    EXPECT_EQ(s.split.null_kernel.series_size(10), 3);
    EXPECT_EQ(s.instrument_mode, InstrumentMode::series_features);
    EXPECT_EQ(s.solver, Solver::greedy);
    EXPECT_EQ(s.norm_kind, NormKind::LK);

    const HypothesisSetup c = null_kernel_for(NullHypothesis::Lin3, 10, InstrumentScope::complement);
    EXPECT_EQ(c.split.alt_kernel.series_size(10), 27 + 70);
}

TEST(Hypotheses, LinPolySplit) {
    const HypothesisSetup s = null_kernel_for(NullHypothesis::LinPoly, 10);
    EXPECT_EQ(s.split.alt_kernel.series_size(10), 9);
    EXPECT_EQ(s.split.null_kernel.series_size(10), 1 + 90);
}

TEST(Hypotheses, BivariateSplits) {
    for (NullHypothesis h : {NullHypothesis::Lin1NonLin, NullHypothesis::BivLinAll}) {
        const HypothesisSetup s = null_kernel_for(h, 2);
        EXPECT_EQ(s.instrument_mode, InstrumentMode::kernel_sections_normalized);
        EXPECT_EQ(s.solver, Solver::ridge_closed_form);
        EXPECT_EQ(s.norm_kind, NormKind::HK);
        std::mt19937_64 rng(9);
        EXPECT_TRUE(s.split.psd_on(gen_covariates(25, 2, 0.0, CorrelationShape::geometric, rng)));
    }
    // Decaying Gaussian on the second coordinate inside the Lin1NonLin null.
    const HypothesisSetup s = null_kernel_for(NullHypothesis::Lin1NonLin, 2);
    Vector a(2), b(2);
    a << 0.0, 0.0;
    b << 0.0, 3.0;
    const double expect = 0.5 + 0.5 * std::exp(-0.5 * std::pow(3.0 / 0.75, 2));
    EXPECT_NEAR(s.split.null_kernel(a, b), expect, 1e-15);
    EXPECT_THROW(null_kernel_for(NullHypothesis::BivLinAll, 3), Error);
}

TEST(Hypotheses, NamesRoundTrip) {
    for (NullHypothesis h : {NullHypothesis::Lin1, NullHypothesis::Lin2, NullHypothesis::Lin3, NullHypothesis::LinAll,
                             NullHypothesis::LinPoly, NullHypothesis::Lin1NonLin, NullHypothesis::BivLinAll}) {
        EXPECT_EQ(hypothesis_from_string(to_string(h)), h);
    }
    for (Design d : {Design::Lin3, Design::LinAll, Design::NonLinear, Design::Bivariate}) {
        EXPECT_EQ(design_from_string(to_string(d)), d);
    }
    EXPECT_THROW(hypothesis_from_string("Lin4"), Error);
    EXPECT_THROW(design_from_string("Cubic"), Error);
}

TEST(MonteCarlo, DeterministicAcrossRunsAndThreads) {
    McConfig cfg = small_config();
    const RejectionTable a = run_monte_carlo(cfg);
    const RejectionTable b = run_monte_carlo(cfg);
    cfg.threads = 3;
    const RejectionTable c = run_monte_carlo(cfg);
    ASSERT_EQ(a.rows.size(), 2U);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].freq_pi, b.rows[i].freq_pi);
        EXPECT_EQ(a.rows[i].freq_no_pi, b.rows[i].freq_no_pi);
        EXPECT_EQ(a.rows[i].freq_pi, c.rows[i].freq_pi);
        EXPECT_EQ(a.rows[i].freq_no_pi, c.rows[i].freq_no_pi);
    }
    const auto ra = run_replicates(small_config());
    cfg.threads = 2;
    const auto rc = run_replicates(cfg);
    for (std::size_t r = 0; r < ra.size(); ++r) {
        EXPECT_EQ(ra[r].p_pi, rc[r].p_pi);
        EXPECT_EQ(ra[r].p_no_pi, rc[r].p_no_pi);
    }
}

TEST(MonteCarlo, SingleReplicateIsStable) {
    McConfig cfg = small_config();
    cfg.replicates = 1;
    const auto a = run_replicates(cfg);
    const auto b = run_replicates(cfg);
    ASSERT_TRUE(a[0].ok) << a[0].error;
    EXPECT_EQ(a[0].p_pi, b[0].p_pi);
}

TEST(MonteCarlo, TableFieldsAndStandardError) {
    McConfig cfg = small_config();
    cfg.replicates = 6;
    const RejectionTable t = run_monte_carlo(cfg);
    EXPECT_EQ(t.correlation_shape, "geometric");
    EXPECT_EQ(t.failed, 0);
    for (const auto &row : t.rows) {
        EXPECT_EQ(row.design, "Lin3");
        EXPECT_EQ(row.null, "Lin3");
        EXPECT_EQ(row.replicates, 6);
        EXPECT_GE(row.freq_pi, 0.0);
        EXPECT_LE(row.freq_pi, 1.0);
        EXPECT_NEAR(row.mc_se, std::sqrt(row.freq_pi * (1 - row.freq_pi) / 6.0), 1e-15);
    }
    EXPECT_EQ(t.rows[0].size, 0.10);
    EXPECT_EQ(t.rows[1].size, 0.05);
}

TEST(MonteCarlo, FailedReplicatesAreCounted) {
    McConfig cfg = small_config();
    cfg.dgp.design = Design::NonLinear;
    cfg.dgp.K = 3;  // NonLinear needs four covariates
    cfg.hypothesis = NullHypothesis::Lin1;
    cfg.replicates = 3;
    const RejectionTable t = run_monte_carlo(cfg);
    EXPECT_EQ(t.failed, 3);
    EXPECT_EQ(t.failures.size(), 3U);
    EXPECT_EQ(t.rows[0].replicates, 0);
}

TEST(MonteCarlo, RejectsBadSizes) {
    McConfig cfg = small_config();
    cfg.sizes = {1.5};
    EXPECT_THROW(run_monte_carlo(cfg), Error);
    cfg = small_config();
    cfg.replicates = 0;
    EXPECT_THROW(run_monte_carlo(cfg), Error);
}
