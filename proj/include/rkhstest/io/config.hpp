#pragma once

#include "rkhstest/estimator.hpp"
#include "rkhstest/hypothesis.hpp"
#include "rkhstest/kernel.hpp"
#include "rkhstest/loss.hpp"
#include "rkhstest/simulation.hpp"
#include "rkhstest/types.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace rkhstest::io {

/// One kernel term in a config file. `kind` selects which parameters apply.
struct KernelTermSpec {
    std::string kind = "linear";
    std::vector<Index> coords;
    /// Expand into one term per listed coordinate.
    bool per_coordinate = false;
    double scale = 1.0;
    double value = 1.0;
    double lengthscale = 1.0;
    double variance = 1.0;
    int degree = 10;
    int first = 1;
    double decay = 2.2;
    int order = 1;

    bool operator==(const KernelTermSpec &) const = default;
};

struct DataSpec {
    std::string path;
    std::string response = "y";
    std::vector<std::string> covariates;
    bool standardize = false;

    bool operator==(const DataSpec &) const = default;
};

struct FitSpec {
    /// Absolute budget; 0 means budget_multiplier * sd(y).
    double budget = 0.0;
    double budget_multiplier = 10.0;
    std::string norm = "LK";
    std::string solver = "greedy";
    int iterations = 500;
    std::string step = "line_search";

    bool operator==(const FitSpec &) const = default;
};

struct TestSpecConfig {
    std::string instruments = "series_features";
    Index count = 0;
    std::string projection = "auto";
    /// Negative selects n^{-0.4}.
    double proj_rho = -1.0;
    Index draws = 10000;
    std::string covariance = "product_form";

    bool operator==(const TestSpecConfig &) const = default;
};

struct SimulateSpec {
    std::string design = "Lin3";
    Index n = 100;
    Index K = 10;
    double pair_corr = 0.0;
    std::string correlation = "geometric";
    std::string truncation = "clip";
    double snr = 1.0;
    std::string null = "Lin3";
    std::string instrument_scope = "restricted_only";
    Index replicates = 100;
    std::vector<double> sizes{0.10, 0.05};

    bool operator==(const SimulateSpec &) const = default;
};

struct OutputSpec {
    std::string dir = "out";
    bool csv = true;
    bool text = true;
    bool json = true;

    bool operator==(const OutputSpec &) const = default;
};

struct RunConfig {
    std::string command;
    DataSpec data;
    std::vector<KernelTermSpec> kernel;
    std::vector<KernelTermSpec> null_kernel;
    std::vector<KernelTermSpec> alt_kernel;
    std::string loss = "rescaled_square";
    FitSpec fit;
    TestSpecConfig test;
    SimulateSpec simulate;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    OutputSpec output;

    bool operator==(const RunConfig &) const = default;
};

// ----------------------------------------------------------------- parse

namespace detail {

inline void check_keys(const YAML::Node &node, const std::set<std::string> &allowed, const std::string &where) {
    if (!node.IsMap()) { throw Error(ErrorKind::config, where + " must be a mapping"); }
    for (const auto &kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) {
            throw Error(ErrorKind::config, "unknown key '" + key + "' in " + where);
        }
    }
}

template<class T>
void read(const YAML::Node &node, const char *key, T &out, const std::string &where) {
    const YAML::Node v = node[key];
    if (!v) { return; }
    try {
        out = v.as<T>();
    } catch (const YAML::Exception &) {
        throw Error(ErrorKind::config, std::string("bad value for '") + key + "' in " + where);
    }
}

inline void one_of(const std::string &value, const std::set<std::string> &allowed, const std::string &what) {
    if (!allowed.count(value)) {
        std::string list;
        for (const auto &a : allowed) { list += (list.empty() ? "" : ", ") + a; }
        throw Error(ErrorKind::config, what + " '" + value + "' is not one of {" + list + "}");
    }
}

inline std::vector<KernelTermSpec> parse_kernel(const YAML::Node &node, const std::string &where) {
    if (!node.IsSequence()) { throw Error(ErrorKind::config, where + " must be a list of kernel terms"); }
    std::vector<KernelTermSpec> out;
    for (std::size_t i = 0; i < node.size(); ++i) {
        const YAML::Node t = node[i];
        const std::string w = where + "[" + std::to_string(i) + "]";
        check_keys(t, {"kind", "coords", "per_coordinate", "scale", "value", "lengthscale", "variance", "degree",
                       "first", "decay", "order"},
                   w);
        KernelTermSpec s;
        read(t, "kind", s.kind, w);
        read(t, "coords", s.coords, w);
        read(t, "per_coordinate", s.per_coordinate, w);
        read(t, "scale", s.scale, w);
        read(t, "value", s.value, w);
        read(t, "lengthscale", s.lengthscale, w);
        read(t, "variance", s.variance, w);
        read(t, "degree", s.degree, w);
        read(t, "first", s.first, w);
        read(t, "decay", s.decay, w);
        read(t, "order", s.order, w);
        one_of(s.kind, {"linear", "constant", "gaussian", "polynomial", "polynomial_series", "integrated_brownian"},
               w + " kind");
        out.push_back(s);
    }
    return out;
}

}  // namespace detail

/// Cross-field checks that do not need the data.
inline void validate(const RunConfig &c) {
    detail::one_of(c.command, {"fit", "test", "simulate"}, "command");
    detail::one_of(c.fit.norm, {"HK", "LK"}, "fit.norm");
    detail::one_of(c.fit.solver, {"greedy", "ridge"}, "fit.solver");
    detail::one_of(c.fit.step, {"line_search", "two_over_m_plus_two", "one_over_m"}, "fit.step");
    detail::one_of(c.test.instruments, {"series_features", "kernel_sections", "gram_columns"}, "test.instruments");
    detail::one_of(c.test.projection, {"auto", "gram", "features"}, "test.projection");
    detail::one_of(c.test.covariance, {"product_form", "pointwise"}, "test.covariance");
    detail::one_of(c.loss, {"square", "rescaled_square", "poisson_count", "logistic", "duration_hazard", "absolute"},
                   "loss");
    if (c.fit.iterations < 0) { throw Error(ErrorKind::config, "fit.iterations must be >= 0"); }
    if (c.fit.budget < 0.0 || !(c.fit.budget_multiplier > 0.0)) {
        throw Error(ErrorKind::config, "fit.budget must be >= 0 and fit.budget_multiplier > 0");
    }
    if (c.test.draws < 1) { throw Error(ErrorKind::config, "test.draws must be >= 1"); }
    if (c.threads < 1) { throw Error(ErrorKind::config, "threads must be >= 1"); }

    const bool ridge = c.fit.solver == "ridge";
    if (c.command != "simulate") {
        if (c.loss == "absolute" && c.fit.solver == "greedy") {
            throw Error(ErrorKind::config, "absolute loss is not differentiable; greedy fitting needs a smooth loss");
        }
        if (ridge && c.loss != "square" && c.loss != "rescaled_square") {
            throw Error(ErrorKind::config, "ridge solver needs a square loss, got " + c.loss);
        }
        if (ridge && c.fit.norm != "HK") { throw Error(ErrorKind::config, "ridge solver works in the HK ball"); }
        if (c.data.path.empty()) { throw Error(ErrorKind::config, c.command + " needs data.path"); }
        if (!std::filesystem::exists(c.data.path)) {
            throw Error(ErrorKind::config, "data.path '" + c.data.path + "' does not exist");
        }
    }
    if (c.command == "fit" && c.kernel.empty()) { throw Error(ErrorKind::config, "fit needs a kernel"); }
    if (c.command == "test" && (c.null_kernel.empty() || c.alt_kernel.empty())) {
        throw Error(ErrorKind::config, "test needs null_kernel and alt_kernel");
    }
    if (c.command == "test" && c.loss == "absolute") {
        throw Error(ErrorKind::config, "absolute loss needs known weights, which a config file cannot supply");
    }
    if (c.command == "simulate") {
        if (!c.seed) { throw Error(ErrorKind::config, "simulate needs an explicit seed"); }
        const auto &s = c.simulate;
        detail::one_of(s.design, {"Lin3", "LinAll", "NonLinear", "Bivariate"}, "simulate.design");
        detail::one_of(s.null, {"Lin1", "Lin2", "Lin3", "LinAll", "LinPoly", "Lin1NonLin", "BivLinAll"},
                       "simulate.null");
        detail::one_of(s.correlation, {"geometric", "equi"}, "simulate.correlation");
        detail::one_of(s.truncation, {"clip", "reject"}, "simulate.truncation");
        detail::one_of(s.instrument_scope, {"restricted_only", "complement"}, "simulate.instrument_scope");
        if (s.replicates < 1) { throw Error(ErrorKind::config, "simulate.replicates must be >= 1"); }
        if (s.n < 2 || s.K < 1) { throw Error(ErrorKind::config, "simulate needs n >= 2 and K >= 1"); }
        if (!(s.snr > 0.0)) { throw Error(ErrorKind::config, "simulate.snr must be > 0"); }
        if (!(std::abs(s.pair_corr) < 1.0)) { throw Error(ErrorKind::config, "simulate.pair_corr must be in (-1, 1)"); }
        if (s.sizes.empty()) { throw Error(ErrorKind::config, "simulate.sizes must not be empty"); }
        for (double a : s.sizes) {
            if (!(a > 0.0 && a < 1.0)) { throw Error(ErrorKind::config, "simulate.sizes must lie in (0, 1)"); }
        }
    }
}

inline RunConfig parse_config_node(const YAML::Node &root) {
    using detail::check_keys;
    using detail::read;
    check_keys(root, {"command", "data", "kernel", "null_kernel", "alt_kernel", "loss", "fit", "test", "simulate",
                      "seed", "threads", "output"},
               "config");
    RunConfig c;
    read(root, "command", c.command, "config");
    read(root, "loss", c.loss, "config");
    read(root, "threads", c.threads, "config");
    if (root["seed"]) {
        std::uint64_t s = 0;
        read(root, "seed", s, "config");
        c.seed = s;
    }
    if (const auto d = root["data"]) {
        check_keys(d, {"path", "response", "covariates", "standardize"}, "data");
        read(d, "path", c.data.path, "data");
        read(d, "response", c.data.response, "data");
        read(d, "covariates", c.data.covariates, "data");
        read(d, "standardize", c.data.standardize, "data");
    }
    if (const auto k = root["kernel"]) { c.kernel = detail::parse_kernel(k, "kernel"); }
    if (const auto k = root["null_kernel"]) { c.null_kernel = detail::parse_kernel(k, "null_kernel"); }
    if (const auto k = root["alt_kernel"]) { c.alt_kernel = detail::parse_kernel(k, "alt_kernel"); }
    if (const auto f = root["fit"]) {
        check_keys(f, {"budget", "budget_multiplier", "norm", "solver", "iterations", "step"}, "fit");
        read(f, "budget", c.fit.budget, "fit");
        read(f, "budget_multiplier", c.fit.budget_multiplier, "fit");
        read(f, "norm", c.fit.norm, "fit");
        read(f, "solver", c.fit.solver, "fit");
        read(f, "iterations", c.fit.iterations, "fit");
        read(f, "step", c.fit.step, "fit");
    }
    if (const auto t = root["test"]) {
        check_keys(t, {"instruments", "count", "projection", "proj_rho", "draws", "covariance"}, "test");
        read(t, "instruments", c.test.instruments, "test");
        read(t, "count", c.test.count, "test");
        read(t, "projection", c.test.projection, "test");
        if (const auto r = t["proj_rho"]) {
            if (r.IsScalar() && r.as<std::string>() == "auto") {
                c.test.proj_rho = -1.0;
            } else {
                read(t, "proj_rho", c.test.proj_rho, "test");
                if (c.test.proj_rho < 0.0) { throw Error(ErrorKind::config, "test.proj_rho must be >= 0 or auto"); }
            }
        }
        read(t, "draws", c.test.draws, "test");
        read(t, "covariance", c.test.covariance, "test");
    }
    if (const auto s = root["simulate"]) {
        check_keys(s, {"design", "n", "K", "pair_corr", "correlation", "truncation", "snr", "null", "instrument_scope",
                       "replicates", "sizes"},
                   "simulate");
        auto &m = c.simulate;
        read(s, "design", m.design, "simulate");
        read(s, "n", m.n, "simulate");
        read(s, "K", m.K, "simulate");
        read(s, "pair_corr", m.pair_corr, "simulate");
        read(s, "correlation", m.correlation, "simulate");
        read(s, "truncation", m.truncation, "simulate");
        read(s, "snr", m.snr, "simulate");
        read(s, "null", m.null, "simulate");
        read(s, "instrument_scope", m.instrument_scope, "simulate");
        read(s, "replicates", m.replicates, "simulate");
        read(s, "sizes", m.sizes, "simulate");
    }
    if (const auto o = root["output"]) {
        check_keys(o, {"dir", "csv", "text", "json"}, "output");
        read(o, "dir", c.output.dir, "output");
        read(o, "csv", c.output.csv, "output");
        read(o, "text", c.output.text, "output");
        read(o, "json", c.output.json, "output");
    }
    return c;
}

/// Parse YAML text. Validation is separate so that flag overrides can be
/// applied first.
inline RunConfig parse_config_text(const std::string &text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception &e) {
        throw Error(ErrorKind::config, std::string("malformed config: ") + e.what());
    }
    if (!root || root.IsNull()) { throw Error(ErrorKind::config, "empty config"); }
    return parse_config_node(root);
}

inline RunConfig parse_config_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) { throw Error(ErrorKind::io, "cannot read config '" + path + "'"); }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ------------------------------------------------------------------ emit

namespace detail {

inline void emit_kernel(YAML::Emitter &out, const char *key, const std::vector<KernelTermSpec> &terms) {
    if (terms.empty()) { return; }
    out << YAML::Key << key << YAML::Value << YAML::BeginSeq;
    for (const auto &t : terms) {
        out << YAML::BeginMap;
        out << YAML::Key << "kind" << YAML::Value << t.kind;
        out << YAML::Key << "coords" << YAML::Value << YAML::Flow << t.coords;
        out << YAML::Key << "per_coordinate" << YAML::Value << t.per_coordinate;
        out << YAML::Key << "scale" << YAML::Value << t.scale;
        out << YAML::Key << "value" << YAML::Value << t.value;
        out << YAML::Key << "lengthscale" << YAML::Value << t.lengthscale;
        out << YAML::Key << "variance" << YAML::Value << t.variance;
        out << YAML::Key << "degree" << YAML::Value << t.degree;
        out << YAML::Key << "first" << YAML::Value << t.first;
        out << YAML::Key << "decay" << YAML::Value << t.decay;
        out << YAML::Key << "order" << YAML::Value << t.order;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
}

}  // namespace detail

/// Fully resolved config as YAML; parse_config_text(emit_config(c)) == c.
inline std::string emit_config(const RunConfig &c) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "command" << YAML::Value << c.command;
    if (c.seed) { out << YAML::Key << "seed" << YAML::Value << *c.seed; }
    out << YAML::Key << "threads" << YAML::Value << c.threads;
    out << YAML::Key << "loss" << YAML::Value << c.loss;

    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "path" << YAML::Value << c.data.path;
    out << YAML::Key << "response" << YAML::Value << c.data.response;
    out << YAML::Key << "covariates" << YAML::Value << YAML::Flow << c.data.covariates;
    out << YAML::Key << "standardize" << YAML::Value << c.data.standardize;
    out << YAML::EndMap;

    detail::emit_kernel(out, "kernel", c.kernel);
    detail::emit_kernel(out, "null_kernel", c.null_kernel);
    detail::emit_kernel(out, "alt_kernel", c.alt_kernel);

    out << YAML::Key << "fit" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "budget" << YAML::Value << c.fit.budget;
    out << YAML::Key << "budget_multiplier" << YAML::Value << c.fit.budget_multiplier;
    out << YAML::Key << "norm" << YAML::Value << c.fit.norm;
    out << YAML::Key << "solver" << YAML::Value << c.fit.solver;
    out << YAML::Key << "iterations" << YAML::Value << c.fit.iterations;
    out << YAML::Key << "step" << YAML::Value << c.fit.step;
    out << YAML::EndMap;

    out << YAML::Key << "test" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "instruments" << YAML::Value << c.test.instruments;
    out << YAML::Key << "count" << YAML::Value << c.test.count;
    out << YAML::Key << "projection" << YAML::Value << c.test.projection;
    if (c.test.proj_rho < 0.0) {
        out << YAML::Key << "proj_rho" << YAML::Value << "auto";
    } else {
        out << YAML::Key << "proj_rho" << YAML::Value << c.test.proj_rho;
    }
    out << YAML::Key << "draws" << YAML::Value << c.test.draws;
    out << YAML::Key << "covariance" << YAML::Value << c.test.covariance;
    out << YAML::EndMap;

    const auto &s = c.simulate;
    out << YAML::Key << "simulate" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "design" << YAML::Value << s.design;
    out << YAML::Key << "n" << YAML::Value << s.n;
    out << YAML::Key << "K" << YAML::Value << s.K;
    out << YAML::Key << "pair_corr" << YAML::Value << s.pair_corr;
    out << YAML::Key << "correlation" << YAML::Value << s.correlation;
    out << YAML::Key << "truncation" << YAML::Value << s.truncation;
    out << YAML::Key << "snr" << YAML::Value << s.snr;
    out << YAML::Key << "null" << YAML::Value << s.null;
    out << YAML::Key << "instrument_scope" << YAML::Value << s.instrument_scope;
    out << YAML::Key << "replicates" << YAML::Value << s.replicates;
    out << YAML::Key << "sizes" << YAML::Value << YAML::Flow << s.sizes;
    out << YAML::EndMap;

    out << YAML::Key << "output" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "dir" << YAML::Value << c.output.dir;
    out << YAML::Key << "csv" << YAML::Value << c.output.csv;
    out << YAML::Key << "text" << YAML::Value << c.output.text;
    out << YAML::Key << "json" << YAML::Value << c.output.json;
    out << YAML::EndMap;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

// ------------------------------------------------------------ resolution

inline Kernel build_kernel(const std::vector<KernelTermSpec> &terms) {
    Kernel k;
    for (const auto &t : terms) {
        std::shared_ptr<const KernelFunction> f;
        if (t.kind == "linear") {
            f = std::make_shared<const LinearKernel>(t.scale);
        } else if (t.kind == "constant") {
            f = std::make_shared<const ConstantKernel>(t.value);
        } else if (t.kind == "gaussian") {
            f = std::make_shared<const GaussianRbf>(t.lengthscale, t.variance);
        } else if (t.kind == "polynomial") {
            f = std::make_shared<const PolynomialKernel>(PolynomialKernel::with_decay(t.degree, t.decay));
        } else if (t.kind == "polynomial_series") {
            f = std::make_shared<const SeriesKernel>(SeriesKernel::polynomial_range(t.first, t.degree, t.decay));
        } else if (t.kind == "integrated_brownian") {
            f = std::make_shared<const IntegratedBrownianKernel>(t.order);
        } else {
            throw Error(ErrorKind::config, "unknown kernel kind '" + t.kind + "'");
        }
        if (t.per_coordinate) {
            if (t.coords.empty()) { throw Error(ErrorKind::config, "per_coordinate needs coords"); }
            k += additive(f, t.coords);
        } else {
            k.add(f, t.coords);
        }
    }
    return k;
}

inline StepRule step_rule_from(const std::string &s) {
    if (s == "line_search") { return StepRule::line_search; }
    if (s == "two_over_m_plus_two") { return StepRule::two_over_m_plus_two; }
    if (s == "one_over_m") { return StepRule::one_over_m; }
    throw Error(ErrorKind::config, "unknown step rule '" + s + "'");
}

inline FitConfig fit_config_from(const RunConfig &c, VectorRef y) {
    FitConfig f;
    f.budget = c.fit.budget > 0.0 ? c.fit.budget : c.fit.budget_multiplier * sample_sd(y);
    f.norm_kind = c.fit.norm == "HK" ? NormKind::HK : NormKind::LK;
    f.solver = c.fit.solver == "ridge" ? Solver::ridge_closed_form : Solver::greedy;
    f.iterations = c.fit.iterations;
    f.step_rule = step_rule_from(c.fit.step);
    return f;
}

inline TestOptions test_options_from(const RunConfig &c) {
    TestOptions o;
    if (c.test.instruments == "series_features") {
        o.instrument_mode = InstrumentMode::series_features;
    } else if (c.test.instruments == "kernel_sections") {
        o.instrument_mode = InstrumentMode::kernel_sections_normalized;
    } else {
        o.instrument_mode = InstrumentMode::gram_columns;
    }
    o.instrument_count = c.test.count;
    o.projection = c.test.projection == "gram"       ? ProjectionPath::gram
                   : c.test.projection == "features" ? ProjectionPath::features
                                                     : ProjectionPath::automatic;
    o.proj_rho = c.test.proj_rho;
    o.covariance = c.test.covariance == "pointwise" ? CovarianceVariant::pointwise : CovarianceVariant::product_form;
    o.null_draws = c.test.draws;
    o.seed = c.seed.value_or(0);
    return o;
}

inline McConfig mc_config_from(const RunConfig &c) {
    McConfig m;
    const auto &s = c.simulate;
    m.dgp.design = design_from_string(s.design);
    m.dgp.n = s.n;
    m.dgp.K = s.K;
    m.dgp.pair_corr = s.pair_corr;
    m.dgp.shape = s.correlation == "equi" ? CorrelationShape::equi : CorrelationShape::geometric;
    m.dgp.truncation = s.truncation == "reject" ? Truncation::reject : Truncation::clip;
    m.dgp.snr = s.snr;
    m.hypothesis = hypothesis_from_string(s.null);
    m.scope = s.instrument_scope == "complement" ? InstrumentScope::complement : InstrumentScope::restricted_only;
    m.replicates = s.replicates;
    m.sizes = s.sizes;
    m.seed = c.seed.value_or(0);
    m.threads = c.threads;
    m.iterations = c.fit.iterations;
    m.step_rule = step_rule_from(c.fit.step);
    m.budget_multiplier = c.fit.budget_multiplier;
    m.instrument_count = c.test.count;
    m.proj_rho = c.test.proj_rho;
    m.covariance = c.test.covariance == "pointwise" ? CovarianceVariant::pointwise : CovarianceVariant::product_form;
    m.null_draws = c.test.draws;
    return m;
}

}  // namespace rkhstest::io
