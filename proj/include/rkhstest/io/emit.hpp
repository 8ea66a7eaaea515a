#pragma once

#include "rkhstest/estimator.hpp"
#include "rkhstest/hypothesis.hpp"
#include "rkhstest/simulation.hpp"
#include "rkhstest/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace rkhstest::io {

using Json = nlohmann::ordered_json;

enum class Format { csv, aligned_text, structured_record };

inline std::string fmt(double v, int digits = 10) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline std::vector<double> to_std(const Vector &v) { return {v.data(), v.data() + v.size()}; }

// ---------------------------------------------------------------- fitted

inline Json to_json(const FittedModel &m) {
    Json j;
    j["kind"] = "fitted_model";
    j["norm_hk"] = m.norm_hk;
    j["norm_lk"] = m.norm_lk;
    j["ridge_rho"] = m.ridge_rho;
    j["budget"] = m.budget;
    j["budget_binding"] = m.budget_binding;
    Json comps = Json::array();
    for (std::size_t k = 0; k < m.components.size(); ++k) {
        Json c;
        c["kernel"] = m.components[k].describe();
        if (m.forms[k] == FittedModel::Form::series) {
            c["form"] = "series";
            c["coefficients"] = to_std(m.series_coeffs[k]);
        } else {
            c["form"] = "representer";
            c["coefficients"] = to_std(m.coeffs.col(static_cast<Index>(k)));
        }
        comps.push_back(c);
    }
    j["components"] = comps;
    j["iterations"] = m.trace.size();
    if (!m.trace.empty()) { j["final_objective"] = m.trace.back().objective; }
    j["fitted"] = to_std(m.fitted);
    return j;
}

inline std::string to_csv(const FittedModel &m) {
    std::ostringstream out;
    out << "index,fitted\n";
    for (Index i = 0; i < m.fitted.size(); ++i) { out << i << ',' << fmt(m.fitted[i], 17) << '\n'; }
    return out.str();
}

inline std::string to_text(const FittedModel &m) {
    std::ostringstream out;
    out << "fitted model\n";
    out << "  budget           " << fmt(m.budget) << (m.budget_binding ? " (binding)" : "") << '\n';
    out << "  norm HK          " << fmt(m.norm_hk) << '\n';
    out << "  norm LK          " << fmt(m.norm_lk) << '\n';
    out << "  ridge rho        " << fmt(m.ridge_rho) << '\n';
    out << "  iterations       " << m.trace.size() << '\n';
    if (!m.trace.empty()) { out << "  final objective  " << fmt(m.trace.back().objective) << '\n'; }
    out << "  components       " << m.components.size() << '\n';
    for (const auto &c : m.components) { out << "    " << c.describe() << '\n'; }
    return out.str();
}

// ----------------------------------------------------------------- test

inline Json to_json(const TestResult &r) {
    Json j;
    j["kind"] = "test_result";
    j["n"] = r.n;
    j["instruments"] = r.instruments;
    j["statistic"] = r.statistic;
    j["p_value"] = r.p_value;
    j["spectrum"] = to_std(r.spectrum);
    j["null_draws"] = r.null_draws;
    j["proj_rho"] = r.proj_rho;
    if (r.has_naive) {
        j["naive_statistic"] = r.naive_statistic;
        j["naive_p_value"] = r.naive_p_value;
        j["naive_spectrum"] = to_std(r.naive_spectrum);
    }
    j["residual_mean_square"] = r.residual_mean_square;
    j["max_orthogonality"] = r.max_orthogonality;
    j["restricted_norm_hk"] = r.restricted_norm_hk;
    j["restricted_norm_lk"] = r.restricted_norm_lk;
    j["restricted_ridge_rho"] = r.restricted_ridge_rho;
    j["scaling_note"] = r.scaling_note;
    return j;
}

inline std::string to_csv(const TestResult &r) {
    std::ostringstream out;
    out << "n,instruments,statistic,p_value,naive_statistic,naive_p_value,proj_rho,null_draws\n";
    out << r.n << ',' << r.instruments << ',' << fmt(r.statistic, 17) << ',' << fmt(r.p_value, 17) << ','
        << (r.has_naive ? fmt(r.naive_statistic, 17) : "") << ',' << (r.has_naive ? fmt(r.naive_p_value, 17) : "")
        << ',' << fmt(r.proj_rho, 17) << ',' << r.null_draws << '\n';
    return out.str();
}

inline std::string to_text(const TestResult &r) {
    std::ostringstream out;
    auto top = [](const Vector &w) {
        std::string s;
        for (Index i = 0; i < std::min<Index>(5, w.size()); ++i) { s += (i ? "  " : "") + fmt(w[i], 6); }
        return s;
    };
    out << "test result (n = " << r.n << ", R = " << r.instruments << ", M = " << r.null_draws << ")\n";
    out << "                 statistic        p-value   top-5 eigenvalues\n";
    char line[256];
    std::snprintf(line, sizeof line, "  projected  %14.6g %14.6g   ", r.statistic, r.p_value);
    out << line << top(r.spectrum) << '\n';
    if (r.has_naive) {
        std::snprintf(line, sizeof line, "  naive      %14.6g %14.6g   ", r.naive_statistic, r.naive_p_value);
        out << line << top(r.naive_spectrum) << '\n';
    }
    out << "  projection penalty " << fmt(r.proj_rho) << ", residual mean square " << fmt(r.residual_mean_square)
        << '\n';
    out << "  " << r.scaling_note << '\n';
    return out.str();
}

// ---------------------------------------------------------------- table

inline constexpr const char *kRejectionHeader = "design,null,n,rho,snr,size,freq_no_pi,freq_pi,mc_se,replicates";

inline std::string to_csv(const RejectionTable &t) {
    std::ostringstream out;
    out << kRejectionHeader << '\n';
    for (const auto &r : t.rows) {
        out << r.design << ',' << r.null << ',' << r.n << ',' << fmt(r.rho) << ',' << fmt(r.snr) << ','
            << fmt(r.size) << ',' << fmt(r.freq_no_pi) << ',' << fmt(r.freq_pi) << ',' << fmt(r.mc_se) << ','
            << r.replicates << '\n';
    }
    return out.str();
}

inline std::string to_text(const RejectionTable &t) {
    std::ostringstream out;
    out << "simulated rejection frequencies (correlation: " << t.correlation_shape << ")\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-11s %6s %6s %6s %6s %8s %8s %8s %6s\n", "design", "null", "n", "rho",
                  "snr", "size", "No Pi", "Pi", "mc_se", "reps");
    out << line;
    for (const auto &r : t.rows) {
        std::snprintf(line, sizeof line, "%-10s %-11s %6lld %6.2f %6.2f %6.2f %8.3f %8.3f %8.4f %6lld\n",
                      r.design.c_str(), r.null.c_str(), static_cast<long long>(r.n), r.rho, r.snr, r.size,
                      r.freq_no_pi, r.freq_pi, r.mc_se, static_cast<long long>(r.replicates));
        out << line;
    }
    if (t.failed > 0) {
        out << "failed replicates: " << t.failed << '\n';
        for (const auto &f : t.failures) { out << "  " << f << '\n'; }
    }
    return out.str();
}

inline Json to_json(const RejectionTable &t) {
    Json j;
    j["kind"] = "rejection_table";
    j["correlation_shape"] = t.correlation_shape;
    j["failed"] = t.failed;
    j["failures"] = t.failures;
    Json rows = Json::array();
    for (const auto &r : t.rows) {
        rows.push_back({{"design", r.design},
                        {"null", r.null},
                        {"n", r.n},
                        {"rho", r.rho},
                        {"snr", r.snr},
                        {"size", r.size},
                        {"freq_no_pi", r.freq_no_pi},
                        {"freq_pi", r.freq_pi},
                        {"mc_se", r.mc_se},
                        {"replicates", r.replicates}});
    }
    j["rows"] = rows;
    return j;
}

// ---------------------------------------------------------------- files

inline void write_file(const std::filesystem::path &path, const std::string &content) {
    std::error_code ec;
    if (path.has_parent_path()) { std::filesystem::create_directories(path.parent_path(), ec); }
    std::ofstream out(path, std::ios::binary);
    if (!out) { throw Error(ErrorKind::io, "cannot write '" + path.string() + "'"); }
    out << content;
    if (!out) { throw Error(ErrorKind::io, "write failed for '" + path.string() + "'"); }
}

/// Write `<dir>/<stem>.{csv,txt,json}` for the requested formats.
template<class Result>
std::vector<std::filesystem::path> emit_results(const Result &result, const std::filesystem::path &dir,
                                                const std::string &stem, const std::vector<Format> &formats) {
    std::vector<std::filesystem::path> written;
    for (Format f : formats) {
        std::filesystem::path p = dir / stem;
        switch (f) {
        case Format::csv:
            p += ".csv";
            write_file(p, to_csv(result));
            break;
        case Format::aligned_text:
            p += ".txt";
            write_file(p, to_text(result));
            break;
        case Format::structured_record:
            p += ".json";
            write_file(p, to_json(result).dump(2) + "\n");
            break;
        }
        written.push_back(p);
    }
    return written;
}

}  // namespace rkhstest::io
