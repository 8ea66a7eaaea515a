// Command-line front end: fit, test and simulate from a YAML run config.

#include "rkhstest/io/config.hpp"
#include "rkhstest/io/csv.hpp"
#include "rkhstest/io/emit.hpp"
#include "rkhstest/rkhstest.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace rkhstest;

struct Overrides {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<Index> replicates;
    std::optional<unsigned> threads;
};

void add_common(CLI::App *cmd, Overrides &o) {
    cmd->add_option("--config", o.config, "YAML run config")->required();
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--replicates", o.replicates, "Monte Carlo replicates (simulate)");
    cmd->add_option("--threads", o.threads, "worker threads (simulate)");
}

std::vector<io::Format> formats_of(const io::RunConfig &c) {
    std::vector<io::Format> f;
    if (c.output.csv) { f.push_back(io::Format::csv); }
    if (c.output.text) { f.push_back(io::Format::aligned_text); }
    if (c.output.json) { f.push_back(io::Format::structured_record); }
    return f;
}

Dataset load_data(const io::RunConfig &c) {
    return io::ingest_csv(c.data.path, c.data.response, c.data.covariates, c.data.standardize).data;
}

int run(const std::string &command, const Overrides &o) {
    io::RunConfig c = io::parse_config_file(o.config);
    if (c.command.empty()) { c.command = command; }
    if (c.command != command) {
        throw Error(ErrorKind::config, "config is for '" + c.command + "' but '" + command + "' was invoked");
    }
    if (o.out) { c.output.dir = *o.out; }
    if (o.seed) { c.seed = *o.seed; }
    if (o.replicates) { c.simulate.replicates = *o.replicates; }
    if (o.threads) { c.threads = *o.threads; }
    io::validate(c);

    const std::filesystem::path dir = c.output.dir;
    io::write_file(dir / "config.resolved.yaml", io::emit_config(c));
    const auto formats = formats_of(c);

    if (command == "fit") {
        const Dataset data = load_data(c);
        const FitConfig fc = io::fit_config_from(c, data.y);
        const FittedModel model = fit(data, make_loss(c.loss), io::build_kernel(c.kernel), fc);
        io::emit_results(model, dir, "fit", formats);
        std::cout << io::to_text(model);
    } else if (command == "test") {
        const Dataset data = load_data(c);
        TestSpec spec;
        spec.split = {io::build_kernel(c.null_kernel), io::build_kernel(c.alt_kernel)};
        spec.loss = make_loss(c.loss);
        spec.fit = io::fit_config_from(c, data.y);
        spec.options = io::test_options_from(c);
        const TestResult result = run_test(data, spec);
        io::emit_results(result, dir, "test", formats);
        std::cout << io::to_text(result);
    } else {
        const McConfig mc = io::mc_config_from(c);
        const RejectionTable table = run_monte_carlo(mc);
        io::emit_results(table, dir, "rejections", formats);
        std::cout << io::to_text(table);
    }
    return 0;
}

std::string escape(const std::string &s) {
    std::string out;
    for (char ch : s) {
        if (ch == '"' || ch == '\\') { out += '\\'; }
        out += ch == '\n' ? ' ' : ch;
    }
    return out;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Constrained RKHS estimation and tests of functional restrictions"};
    app.require_subcommand(1);
    Overrides fit_o;
    Overrides test_o;
    Overrides sim_o;
    auto *fit_cmd = app.add_subcommand("fit", "fit a constrained additive model");
    auto *test_cmd = app.add_subcommand("test", "test a restriction against a kernel alternative");
    auto *sim_cmd = app.add_subcommand("simulate", "Monte Carlo size and power study");
    add_common(fit_cmd, fit_o);
    add_common(test_cmd, test_o);
    add_common(sim_cmd, sim_o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) { return app.exit(e); }
        std::cerr << "error kind=usage message=\"" << escape(e.what()) << "\"\n";
        return 2;
    }

    try {
        if (*fit_cmd) { return run("fit", fit_o); }
        if (*test_cmd) { return run("test", test_o); }
        return run("simulate", sim_o);
    } catch (const Error &e) {
        std::cerr << "error kind=" << to_string(e.kind()) << " message=\"" << escape(e.what()) << "\"\n";
        return e.kind() == ErrorKind::config ? 2 : 1;
    } catch (const std::exception &e) {
        std::cerr << "error kind=internal message=\"" << escape(e.what()) << "\"\n";
        return 1;
    }
}
