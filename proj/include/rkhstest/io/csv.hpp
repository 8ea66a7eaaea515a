#pragma once

#include "rkhstest/types.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

namespace rkhstest::io {

struct IngestResult {
    Dataset data;
    /// One per covariate; identity unless standardization was requested.
    std::vector<ColumnScaler> scalers;
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) { return ""; }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_row(const std::string &line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            out.push_back(trim(cell));
            cell.clear();
        } else {
            cell += ch;
        }
    }
    out.push_back(trim(cell));
    return out;
}

inline double parse_number(const std::string &cell, std::size_t row, const std::string &column) {
    if (cell == "NaN" || cell == "nan" || cell == "NA" || cell.empty()) { return std::nan(""); }
    errno = 0;
    char *end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0' || errno == ERANGE) {
        throw Error(ErrorKind::data, "non-numeric cell '" + cell + "' at row " + std::to_string(row) + ", column '" +
                                         column + "'");
    }
    return v;
}

}  // namespace detail

/// Read a header-led numeric CSV. Rows are numbered from 1 after the header.
/// Empty covariate list selects every column except the response.
inline IngestResult ingest_csv(const std::string &path, const std::string &response,
                               std::vector<std::string> covariates = {}, bool standardize = false) {
    std::ifstream in(path);
    if (!in) { throw Error(ErrorKind::io, "cannot open '" + path + "'"); }
    std::string line;
    if (!std::getline(in, line) || detail::trim(line).empty()) {
        throw Error(ErrorKind::data, "'" + path + "' is empty");
    }
    const auto header = detail::split_row(line);
    auto column_of = [&](const std::string &name) -> std::size_t {
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (header[j] == name) { return j; }
        }
        throw Error(ErrorKind::data, "column '" + name + "' not found in '" + path + "'");
    };
    const std::size_t ycol = column_of(response);
    if (covariates.empty()) {
        for (const auto &h : header) {
            if (h != response) { covariates.push_back(h); }
        }
    }
    if (covariates.empty()) { throw Error(ErrorKind::data, "no covariate columns in '" + path + "'"); }
    std::vector<std::size_t> xcols;
    for (const auto &c : covariates) { xcols.push_back(column_of(c)); }

    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> nan_rows;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) { continue; }
        ++row;
        const auto cells = detail::split_row(line);
        if (cells.size() != header.size()) {
            throw Error(ErrorKind::data, "ragged row " + std::to_string(row) + ": " + std::to_string(cells.size()) +
                                             " cells, header has " + std::to_string(header.size()));
        }
        std::vector<double> values;
        bool has_nan = false;
        values.push_back(detail::parse_number(cells[ycol], row, response));
        has_nan |= std::isnan(values.back());
        for (std::size_t j = 0; j < xcols.size(); ++j) {
            values.push_back(detail::parse_number(cells[xcols[j]], row, covariates[j]));
            has_nan |= std::isnan(values.back());
        }
        if (has_nan) { nan_rows.push_back(row); }
        rows.push_back(std::move(values));
    }
    if (!nan_rows.empty()) {
        std::string list;
        for (auto r : nan_rows) { list += (list.empty() ? "" : ", ") + std::to_string(r); }
        throw Error(ErrorKind::data, "missing values in row(s) " + list);
    }
    if (rows.empty()) { throw Error(ErrorKind::data, "'" + path + "' has a header but no data rows"); }

    IngestResult out;
    const Index n = static_cast<Index>(rows.size());
    const Index k = static_cast<Index>(xcols.size());
    out.data.y.resize(n);
    out.data.x.resize(n, k);
    for (Index i = 0; i < n; ++i) {
        out.data.y[i] = rows[static_cast<std::size_t>(i)][0];
        for (Index j = 0; j < k; ++j) { out.data.x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)]; }
    }
    out.data.covariate_names = covariates;
    out.data.response_name = response;
    out.scalers.assign(static_cast<std::size_t>(k), ColumnScaler{});
    if (standardize) {
        if (n < 2) { throw Error(ErrorKind::data, "standardization needs at least two rows"); }
        for (Index j = 0; j < k; ++j) {
            auto col = out.data.x.col(j);
            const double mean = col.mean();
            const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1));
            if (!(sd > 0.0)) {
                throw Error(ErrorKind::data, "column '" + covariates[static_cast<std::size_t>(j)] +
                                                 "' is constant and cannot be standardized");
            }
            col = (col.array() - mean) / sd;
            out.scalers[static_cast<std::size_t>(j)] = {mean, sd};
        }
    }
    return out;
}

}  // namespace rkhstest::io
