#ifndef GEKF_IO_HPP
#define GEKF_IO_HPP

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gekf/model.hpp"
#include "gekf/montecarlo.hpp"
#include "gekf/stability.hpp"

namespace gekf {

using Json = nlohmann::ordered_json;

namespace detail {

inline Matrix parse_matrix(const Json& node, const std::string& key) {
    if (!node.is_array() || node.empty())
        throw std::invalid_argument("system file: \"" + key + "\" must be a non-empty array of rows");
    const std::size_t rows = node.size();
    std::size_t cols = 0;
    Matrix out;
    for (std::size_t r = 0; r < rows; ++r) {
        const Json& row = node[r];
        if (!row.is_array() || row.empty())
            throw std::invalid_argument("system file: \"" + key + "\" row " + std::to_string(r + 1) +
                                        " must be a non-empty array of numbers");
        if (r == 0) {
            cols = row.size();
            out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        } else if (row.size() != cols) {
            throw std::invalid_argument("system file: \"" + key + "\" row " + std::to_string(r + 1) +
                                        " has " + std::to_string(row.size()) + " columns, expected " +
                                        std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (!row[c].is_number())
                throw std::invalid_argument("system file: \"" + key + "\" row " + std::to_string(r + 1) +
                                            " column " + std::to_string(c + 1) + " is not a number");
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<double>();
        }
    }
    return out;
}

} // namespace detail

/// Reads a system description: object with keys "A", "C", "Q", "R", "Sigma0",
/// each a row-major array of arrays of numbers.
inline LtiSystem load_system(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open system file: " + path);
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& err) {
        throw std::runtime_error("system file " + path + ": " + err.what());
    }
    LtiSystem sys;
    for (const char* key : {"A", "C", "Q", "R", "Sigma0"})
        if (!doc.contains(key))
            throw std::invalid_argument("system file " + path + ": missing key \"" + key + "\"");
    sys.a = detail::parse_matrix(doc["A"], "A");
    sys.c = detail::parse_matrix(doc["C"], "C");
    sys.q_cov = detail::parse_matrix(doc["Q"], "Q");
    sys.r_cov = detail::parse_matrix(doc["R"], "R");
    sys.sigma0 = detail::parse_matrix(doc["Sigma0"], "Sigma0");
    validate(sys);
    return sys;
}

inline Json to_json(const Matrix& x) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < x.cols(); ++c) row.push_back(x(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Json to_json(const StabilityReport& report) {
    Json doc;
    doc["p"] = report.p;
    doc["q"] = report.q;
    doc["diagnostics"] = {{"observable", report.diagnostics.observable},
                          {"controllable", report.diagnostics.controllable},
                          {"a1_satisfied", report.diagnostics.a1_satisfied},
                          {"spectral_radius_a", report.diagnostics.spectral_radius_a},
                          {"observability_index", report.diagnostics.observability_index}};
    doc["necessary"] = {{"ok", report.necessary.ok}, {"value", report.necessary.value}};
    doc["closed_form"] = {{"ok", report.closed_form.ok},
                          {"lhs", report.closed_form.lhs},
                          {"rhs", report.closed_form.rhs},
                          {"max_p", report.closed_form_max_p}};
    Json gain_blocks = Json::array();
    for (const auto& block : report.best_gain.blocks) gain_blocks.push_back(to_json(block));
    doc["spectral_test"] = {{"ok", report.spectral_test_ok},
                            {"best_radius", report.best_radius},
                            {"best_gain", gain_blocks}};
    doc["p_lower_bound"] = report.p_lower_bound;
    doc["mean_square_certified"] = report.mean_square_certified;
    doc["notes"] = report.notes;
    doc["stable_verdict"] = report.spectral_test_ok || report.closed_form.ok;
    return doc;
}

inline Json to_json(const EnsembleEstimate& est) {
    Json doc;
    doc["horizon"] = est.horizon;
    doc["trials"] = est.trials;
    doc["verdict"] = to_string(est.verdict);
    doc["reason"] = est.reason;
    doc["diverged_fraction"] = est.diverged_fraction;
    doc["growth_slope"] = est.growth_slope;
    doc["typical_slope"] = est.typical_slope;
    doc["typical_level"] = est.typical_level;
    doc["baseline_level"] = est.baseline_level;
    return doc;
}

/// Grid specification "start:stop:step", inclusive of endpoints up to
/// rounding slack.
inline std::vector<double> parse_grid(const std::string& text) {
    double start = 0, stop = 0, step = 0;
    char sep1 = 0, sep2 = 0;
    std::istringstream in(text);
    if (!(in >> start >> sep1 >> stop >> sep2 >> step) || sep1 != ':' || sep2 != ':' ||
        step <= 0 || stop < start)
        throw std::invalid_argument("grid must be start:stop:step with step > 0: " + text);
    std::vector<double> values;
    for (double v = start; v <= stop + 0.5 * step; v += step)
        values.push_back(std::min(v, stop));
    return values;
}

} // namespace gekf

#endif
