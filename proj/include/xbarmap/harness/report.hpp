#pragma once

// JSON encoding of mapping results. Reports carry no timestamps or timings,
// so identical inputs give byte-identical output.

#include "xbarmap/analysis.hpp"
#include "xbarmap/harness/config.hpp"

#include <algorithm>

namespace xbar::io {

using nlohmann::json;

inline json errors_to_json(const ErrorBreakdown& e) {
    return {{"total", e.total}, {"value_range", e.value_range}, {"precision", e.precision}};
}

inline ErrorBreakdown errors_from_json(const json& j) {
    return {j.at("total").get<double>(), j.at("value_range").get<double>(), j.at("precision").get<double>()};
}

inline json solution_to_json(const MappingSolution& sol, const CrossbarConfig& config) {
    json flags = json::array();
    for (const CellFlag& f : sol.flagged_cells) flags.push_back({{"row", f.row}, {"col", f.col}, {"reason", f.reason}});
    json out = {
        {"method", to_string(sol.method)},
        {"alpha", sol.alpha},
        {"errors", errors_to_json(sol.errors)},
        {"calibration_residual_initial", sol.calibration_residual_initial},
        {"calibration_residual", sol.calibration_residual},
        {"utilization", utilization(sol.g, config)},
        {"g", matrix_to_json(sol.g.values())},
        {"g_quantized", matrix_to_json(sol.g_quantized.values())},
        {"flagged_cells", flags},
        {"rows_without_headroom", sol.rows_without_headroom},
    };
    if (sol.search_errors) out["search_errors"] = errors_to_json(*sol.search_errors);
    if (sol.s) out["s"] = matrix_to_json(*sol.s);
    return out;
}

inline MappingSolution solution_from_json(const json& j, const std::string& source = "<solution>") {
    try {
        MappingSolution sol;
        sol.method = mapping_method_from_string(j.at("method").get<std::string>());
        sol.alpha = j.at("alpha").get<double>();
        sol.errors = errors_from_json(j.at("errors"));
        if (j.contains("search_errors")) sol.search_errors = errors_from_json(j["search_errors"]);
        sol.calibration_residual_initial = j.value("calibration_residual_initial", 0.0);
        sol.calibration_residual = j.value("calibration_residual", 0.0);
        sol.g = ConductanceGrid(matrix_from_json(j.at("g"), source + " g"));
        sol.g_quantized = ConductanceGrid(matrix_from_json(j.at("g_quantized"), source + " g_quantized"));
        if (j.contains("s")) sol.s = matrix_from_json(j["s"], source + " s");
        for (const auto& f : j.value("flagged_cells", json::array())) {
            sol.flagged_cells.push_back({f.at("row").get<int>(), f.at("col").get<int>(), f.at("reason").get<std::string>()});
        }
        sol.rows_without_headroom = j.value("rows_without_headroom", std::vector<int>{});
        if (!(sol.alpha > 0.0)) throw FormatError(source, 0, 0, "alpha must be positive");
        return sol;
    } catch (const json::exception& e) {
        throw FormatError(source, 0, 0, e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(source, 0, 0, e.what());
    }
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace xbar::io
