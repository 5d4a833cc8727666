#pragma once

// Reimplementations of two prior mapping approaches, used as comparison
// points for map_matrix.

#include "xbarmap/mapping.hpp"

namespace xbar {

/// Descent at a fixed alpha from the linear initial mapping; no alpha search,
/// no redistribution.
inline MappingSolution baseline_fixed_alpha_map(const Matrix& w, const CrossbarConfig& config, double alpha,
                                                const DescentOptions& descent = {}) {
    config.validate();
    detail::check_target(w, config);
    MappingSolution sol;
    sol.method = MappingMethod::FixedAlpha;
    sol.alpha = alpha;
    sol.g = descend_conductances(w, alpha, config, linear_map_initial(w, config, alpha), descent).g;
    sol.g_quantized = quantize_grid(sol.g, config);
    sol.errors = error_decomposition(w, sol.g, alpha, config);
    return sol;
}

struct CalibrationOptions {
    int max_iterations = 200;
    double relative_change = 1e-8;
    // when some cell would need more than g_max, shrink the ideal currents
    // by this factor and start over
    double rescale = 0.9;
    int max_rescales = 40;
};

struct CalibrationTrace {
    int iterations = 0;       // fixed-point iterations of the final attempt
    int rescales = 0;
    bool converged = false;
    bool saturated = false;   // some cell still wanted more than g_max
    double calibration_residual = 0.0; // ||(W - W^r) v_cal|| / ||W v_cal|| of the returned g
};

namespace detail {

struct ForcingResult {
    Matrix g;
    int iterations = 0;
    bool converged = false;
    bool saturated = false;
};

// g <- clamp(i_ideal / (v_col - v_row)) until the relative change settles.
inline ForcingResult force_cell_currents(const std::shared_ptr<const CrossbarNetwork>& net, const Matrix& g_ideal,
                                         const Matrix& i_ideal, const Vector& v_cal, const CalibrationOptions& opts) {
    const CrossbarConfig& config = net->config();
    ForcingResult r{g_ideal};
    for (int it = 0; it < opts.max_iterations; ++it) {
        const NodeVoltageSolution nv = cell_solution(MnaSystem(net, r.g), v_cal);
        Matrix next = r.g;
        r.saturated = false;
        for (Eigen::Index k = 0; k < next.size(); ++k) {
            const double dv = nv.v_col(k) - nv.v_row(k);
            if (dv <= 0.0) continue;
            next(k) = i_ideal(k) / dv;
            if (next(k) > config.g_max) r.saturated = true;
        }
        next = clamp_to_bounds(next, config);
        const double change = ((next - r.g).cwiseAbs().array() / r.g.array()).maxCoeff();
        r.g = std::move(next);
        r.iterations = it + 1;
        if (change < opts.relative_change) {
            r.converged = true;
            break;
        }
    }
    return r;
}

} // namespace detail

/// Current-forcing calibration. W is first scaled so its peak lands on g_max;
/// each cell's target current at v_cal is G_ideal * v_cal and g follows the
/// fixed point g <- clamp(i_ideal / (v_col - v_row)). If a cell cannot reach
/// its current even at g_max, the ideal currents are scaled down and the
/// forcing restarts, so the calibration input is reproduced whenever possible.
inline MappingSolution baseline_calibration_map(const Matrix& w, const CrossbarConfig& config,
                                                const std::optional<DeviceModel>& model, const Vector& v_cal,
                                                const CalibrationOptions& opts = {},
                                                CalibrationTrace* trace = nullptr) {
    config.validate();
    detail::check_target(w, config);
    detail::check_inputs(config, v_cal);
    const double peak = w.maxCoeff() > 0.0 ? w.maxCoeff() : 1.0;
    auto net = std::make_shared<const CrossbarNetwork>(config);

    double alpha = config.g_max / peak;
    detail::ForcingResult forced;
    CalibrationTrace tr;
    for (int attempt = 0;; ++attempt) {
        const Matrix g_ideal = linear_map_initial(w, config, alpha).values();
        Matrix i_ideal = g_ideal;
        for (Eigen::Index j = 0; j < i_ideal.cols(); ++j) i_ideal.col(j) *= v_cal[j];
        forced = detail::force_cell_currents(net, g_ideal, i_ideal, v_cal, opts);
        tr.rescales = attempt;
        if (!forced.saturated || attempt >= opts.max_rescales) break;
        alpha *= opts.rescale;
    }
    tr.iterations = forced.iterations;
    tr.converged = forced.converged;
    tr.saturated = forced.saturated;
    tr.calibration_residual = calibration_residual(w, ConductanceGrid(forced.g), alpha, config, v_cal);
    if (trace) *trace = tr;

    MappingSolution sol;
    sol.method = MappingMethod::Calibration;
    sol.alpha = alpha;
    sol.g = ConductanceGrid(forced.g);
    sol.g_quantized = quantize_grid(sol.g, config);
    sol.errors = error_decomposition(w, sol.g, alpha, config);
    sol.calibration_residual_initial = sol.calibration_residual = tr.calibration_residual;
    if (model) {
        StateSolveResult st = solve_state_variables(sol.g_quantized, config, *model, v_cal);
        sol.s = std::move(st.s);
        sol.flagged_cells = std::move(st.flagged);
    }
    return sol;
}

} // namespace xbar
