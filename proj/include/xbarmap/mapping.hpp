#pragma once

// Mapping a non-negative target matrix W onto a crossbar: choose the scaling
// factor alpha and conductances g so that G(g)/alpha approximates W, then
// derive the device state variables that reproduce g at a calibration input.

#include "xbarmap/device_model.hpp"
#include "xbarmap/mna.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xbar {

/// Squared-Frobenius error split into its two sources.
struct ErrorBreakdown {
    double total = 0.0;       // with quantized conductances
    double value_range = 0.0; // with unquantized conductances
    double precision = 0.0;   // total - value_range, floored at 0
};

struct AlphaSearchParams {
    double alpha_0 = 0.0; // <= 0 selects max(W) -> 0.5 g_max
    double beta = 0.1;
    int patience = 3;
    int max_iters = 40;

    void validate() const {
        if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must be in (0, 1)");
        if (patience < 1) throw std::invalid_argument("patience must be >= 1");
        if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    }
};

struct DescentOptions {
    int max_iters = 500;
    int window = 5;               // iterations over which progress is measured
    double relative_decrease = 1e-6;
    double armijo = 1e-4;
    int max_halvings = 50;
};

struct DescentResult {
    ConductanceGrid g;
    double objective = 0.0;
    int iterations = 0;
};

enum class MappingMethod { Proposed, FixedAlpha, Calibration };

inline const char* to_string(MappingMethod m) {
    switch (m) {
    case MappingMethod::Proposed: return "proposed";
    case MappingMethod::FixedAlpha: return "baseline-fixed-alpha";
    case MappingMethod::Calibration: return "baseline-calibration";
    }
    return "unknown";
}

inline MappingMethod mapping_method_from_string(const std::string& s) {
    if (s == "proposed") return MappingMethod::Proposed;
    if (s == "baseline-fixed-alpha" || s == "fixed-alpha") return MappingMethod::FixedAlpha;
    if (s == "baseline-calibration" || s == "calibration") return MappingMethod::Calibration;
    throw std::invalid_argument("unknown mapping method: " + s);
}

struct CellFlag {
    int row;
    int col;
    std::string reason;
};

struct MappingSolution {
    ConductanceGrid g;
    ConductanceGrid g_quantized;
    double alpha = 1.0;
    std::optional<Matrix> s;
    MappingMethod method = MappingMethod::Proposed;
    ErrorBreakdown errors;                       // of the returned g against W
    std::optional<ErrorBreakdown> search_errors; // best alpha-search candidate, before redistribution
    std::vector<CellFlag> flagged_cells;         // from the state solve
    std::vector<int> rows_without_headroom;      // from redistribution
    // ||(W - W^r) v_cal|| / ||W v_cal|| before quantization; the first value is
    // taken before redistribution (equal to the second when there is none)
    double calibration_residual_initial = 0.0;
    double calibration_residual = 0.0;
};

namespace detail {

inline void check_target(const Matrix& w, const CrossbarConfig& config) {
    if (w.rows() != config.rows || w.cols() != config.cols) {
        throw std::invalid_argument("target matrix shape does not match crossbar");
    }
    if (!w.allFinite()) throw std::invalid_argument("target matrix has non-finite entries");
    if ((w.array() < 0.0).any()) throw std::invalid_argument("target matrix must be non-negative");
}

inline Matrix clamp_to_bounds(const Matrix& g, const CrossbarConfig& c) {
    return g.cwiseMax(c.g_min).cwiseMin(c.g_max);
}

/// G(g) for a fixed topology.
inline Matrix conductance_matrix(const std::shared_ptr<const CrossbarNetwork>& net, const Matrix& g) {
    return MnaSystem(net, g).conductance_matrix();
}

} // namespace detail

/// g = clamp(alpha W, g_min, g_max).
inline ConductanceGrid linear_map_initial(const Matrix& w, const CrossbarConfig& config, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    return ConductanceGrid(detail::clamp_to_bounds(alpha * w, config));
}

/// Round each entry to the nearest of the 2^bits equidistant levels in
/// [g_min, g_max]; ties go up.
inline ConductanceGrid quantize_grid(const ConductanceGrid& g, const CrossbarConfig& config) {
    const double step = config.level_step();
    const double top = std::ldexp(1.0, config.bits) - 1.0;
    Matrix q(g.rows(), g.cols());
    for (Eigen::Index k = 0; k < q.size(); ++k) {
        double level = std::floor((g.values()(k) - config.g_min) / step + 0.5);
        level = std::clamp(level, 0.0, top);
        q(k) = level == top ? config.g_max : config.g_min + level * step;
    }
    return ConductanceGrid(q);
}

/// Projected steepest descent on F(g) = ||W - G(g)/alpha||_F^2 with
/// backtracking (Armijo) step selection. Returns the best iterate.
inline DescentResult descend_conductances(const Matrix& w, double alpha, const CrossbarConfig& config,
                                          const ConductanceGrid& g_init, const DescentOptions& opts = {}) {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (w.rows() != config.rows || w.cols() != config.cols || !w.allFinite()) {
        throw std::invalid_argument("target matrix shape does not match crossbar");
    }
    auto net = std::make_shared<const CrossbarNetwork>(config);
    Matrix g = detail::clamp_to_bounds(g_init.values(), config);
    auto sys = std::make_unique<MnaSystem>(net, g);
    Matrix resid = w - sys->conductance_matrix() / alpha;
    double f = resid.squaredNorm();
    const double floor = 1e-28 * std::max(w.squaredNorm(), std::numeric_limits<double>::min());

    std::deque<double> history{f};
    // each iteration first tries twice the last accepted step; the opening
    // trial t = alpha^2 / 2 lands exactly on the parasitic-free optimum
    double t = 0.25 * alpha * alpha;
    int it = 0;
    for (; it < opts.max_iters && f > floor; ++it) {
        const Matrix grad = conductance_gradient(*sys, resid) / alpha;
        bool accepted = false;
        t *= 2.0;
        for (int h = 0; h < opts.max_halvings; ++h, t *= 0.5) {
            Matrix trial = detail::clamp_to_bounds(g - t * grad, config);
            const double predicted = grad.cwiseProduct(g - trial).sum();
            if (predicted <= 0.0) break; // projected gradient vanished
            auto trial_sys = std::make_unique<MnaSystem>(net, trial);
            Matrix trial_resid = w - trial_sys->conductance_matrix() / alpha;
            const double ft = trial_resid.squaredNorm();
            if (ft <= f - opts.armijo * predicted) {
                g = std::move(trial);
                sys = std::move(trial_sys);
                resid = std::move(trial_resid);
                f = ft;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        history.push_back(f);
        if (static_cast<int>(history.size()) > opts.window) {
            const double old = history.front();
            history.pop_front();
            if (old - f <= opts.relative_decrease * old) {
                ++it;
                break;
            }
        }
    }
    return {ConductanceGrid(g), f, it};
}

/// value_range uses g as is, total uses quantize_grid(g).
inline ErrorBreakdown error_decomposition(const Matrix& w, const ConductanceGrid& g, double alpha,
                                          const CrossbarConfig& config) {
    auto net = std::make_shared<const CrossbarNetwork>(config);
    ErrorBreakdown e;
    e.value_range = (w - realized_matrix(detail::conductance_matrix(net, g.values()), alpha)).squaredNorm();
    const ConductanceGrid q = quantize_grid(g, config);
    e.total = (w - realized_matrix(detail::conductance_matrix(net, q.values()), alpha)).squaredNorm();
    e.precision = std::max(0.0, e.total - e.value_range);
    return e;
}

inline double default_alpha(const Matrix& w, const CrossbarConfig& config) {
    const double peak = w.size() ? w.maxCoeff() : 0.0;
    return 0.5 * config.g_max / (peak > 0.0 ? peak : 1.0);
}

struct AlphaSample {
    double alpha;
    ErrorBreakdown errors;
};

struct AlphaSearchResult {
    double alpha = 0.0;
    ErrorBreakdown errors;
    ConductanceGrid g;
    std::vector<AlphaSample> trace;
};

/// Balance value-range against precision error by scaling alpha down when
/// value-range error dominates and up otherwise; keep the best total error.
inline AlphaSearchResult search_alpha(const Matrix& w, const CrossbarConfig& config,
                                      const AlphaSearchParams& params, const DescentOptions& descent = {}) {
    params.validate();
    detail::check_target(w, config);
    double alpha = params.alpha_0 > 0.0 ? params.alpha_0 : default_alpha(w, config);
    AlphaSearchResult best;
    best.errors.total = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (int k = 0; k < params.max_iters; ++k) {
        DescentResult d = descend_conductances(w, alpha, config, linear_map_initial(w, config, alpha), descent);
        const ErrorBreakdown e = error_decomposition(w, d.g, alpha, config);
        best.trace.push_back({alpha, e});
        if (e.total < best.errors.total) {
            best.alpha = alpha;
            best.errors = e;
            best.g = std::move(d.g);
            stale = 0;
        } else if (++stale >= params.patience) {
            break;
        }
        alpha *= e.value_range > e.precision ? (1.0 - params.beta) : (1.0 + params.beta);
    }
    return best;
}

struct Redistribution {
    Matrix targets;
    std::vector<int> rows_without_headroom;
};

/// Spread each row's realized-sum error over the row's adjustable cells
/// so that a uniform calibration input sees zero row error.
/// W^t = W - u_i on adjustable cells, u_i = rowsum(W_r - W)/c_i. A cell is
/// adjustable when it sits above the lowest level; when the row needs larger
/// targets (u_i < 0), cells already at the top level are skipped too.
inline Redistribution redistribute_targets(const Matrix& w, const Matrix& w_r, const ConductanceGrid& g,
                                           const CrossbarConfig& config) {
    if (w.rows() != w_r.rows() || w.cols() != w_r.cols() || w.rows() != g.rows() || w.cols() != g.cols()) {
        throw std::invalid_argument("redistribution inputs differ in shape");
    }
    const double floor = config.g_min + 0.5 * config.level_step();
    const double ceiling = config.g_max - 0.5 * config.level_step();
    Redistribution out{w, {}};
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double r = (w_r.row(i) - w.row(i)).sum();
        auto adjustable = [&](Eigen::Index j) { return g(i, j) > floor && (r >= 0.0 || g(i, j) < ceiling); };
        int count = 0;
        for (Eigen::Index j = 0; j < w.cols(); ++j) count += adjustable(j) ? 1 : 0;
        if (count == 0) {
            out.rows_without_headroom.push_back(static_cast<int>(i));
            continue;
        }
        const double u = r / count;
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            if (adjustable(j)) out.targets(i, j) -= u;
        }
    }
    return out;
}

struct StateSolveOptions {
    int max_iterations = 100;
    int max_halvings = 30;
    double relative_tolerance = 1e-9;
};

struct StateSolveResult {
    Matrix s;
    std::vector<CellFlag> flagged;
    double max_relative_residual = 0.0;
};

/// Per-cell Newton on X = (s, v_p):
///   i_m(s, v_c - v_p) = i_g,  i_t(v_p, v_r, v_g) = i_g,
/// where (v_c, v_r, i_g) come from the ideal network driven by v_cal.
inline StateSolveResult solve_state_variables(const ConductanceGrid& g, const CrossbarConfig& config,
                                              const DeviceModel& model, const Vector& v_cal,
                                              const StateSolveOptions& opts = {}) {
    const NodeVoltageSolution nv = solve_node_voltages(config, g, v_cal);
    const MemristorLaw& mem = model.memristor;
    const TransistorLaw& tr = model.transistor;
    StateSolveResult out;
    out.s.resize(g.rows(), g.cols());
    const double i_scale = nv.i_cell.cwiseAbs().maxCoeff();

    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            const double gc = g(i, j);
            const double vc = nv.v_col(i, j);
            const double vr = nv.v_row(i, j);
            const double ig = nv.i_cell(i, j);
            auto flag = [&](const std::string& why) {
                out.flagged.push_back({static_cast<int>(i), static_cast<int>(j), why});
            };

            double s = model.state_for_small_signal(gc, vr);
            if (ig == 0.0 || std::abs(ig) <= 1e-12 * i_scale) {
                // no calibration current: match the zero-bias conductance instead
            } else {
                double vp = tr.ideal() ? vr : vr + ig / tr.small_signal_conductance(vr);
                auto residual = [&](double s_, double vp_) {
                    const double f1 = ig - mem.current(s_, vc - vp_);
                    const double f2 = tr.ideal() ? gc * (vp_ - vr) : ig - tr.current(vp_, vr);
                    return std::pair{f1, f2};
                };
                auto norm = [](std::pair<double, double> f) { return std::max(std::abs(f.first), std::abs(f.second)); };
                auto f = residual(s, vp);
                const double tol = opts.relative_tolerance * std::abs(ig);
                int it = 0;
                bool ok = norm(f) <= tol;
                for (; !ok && it < opts.max_iterations; ++it) {
                    // J = dF/dX
                    const double j11 = -mem.dcurrent_ds(vc - vp);
                    const double j12 = mem.dcurrent_dv(s, vc - vp);
                    const double j22 = tr.ideal() ? gc : -tr.eval(vp, vr).d_first;
                    const double det = j11 * j22;
                    if (det == 0.0) break;
                    // solve [j11 j12; 0 j22] d = -f
                    const double d2 = -f.second / j22;
                    const double d1 = (-f.first - j12 * d2) / j11;
                    double lambda = 1.0;
                    auto trial = residual(s + d1, vp + d2);
                    int h = 0;
                    while (norm(trial) >= norm(f) && norm(trial) > tol && h < opts.max_halvings) {
                        lambda *= 0.5;
                        trial = residual(s + lambda * d1, vp + lambda * d2);
                        ++h;
                    }
                    s += lambda * d1;
                    vp += lambda * d2;
                    f = trial;
                    ok = norm(f) <= tol;
                }
                out.max_relative_residual = std::max(out.max_relative_residual, norm(f) / std::abs(ig));
                if (!ok) flag("newton did not converge");
            }
            if (!std::isfinite(s)) {
                flag("non-finite state");
                s = 0.0;
            }
            if (s < 0.0 || s > 1.0) {
                flag("state outside [0, 1], clamped");
                s = std::clamp(s, 0.0, 1.0);
            }
            out.s(i, j) = s;
        }
    }
    return out;
}

/// ||(W - W^r(g)) v|| / ||W v||, or the absolute residual norm when W v = 0.
inline double calibration_residual(const Matrix& w, const ConductanceGrid& g, double alpha,
                                   const CrossbarConfig& config, const Vector& v) {
    const MnaSystem sys = assemble_mna(config, g);
    const Vector target = w * v;
    const Vector out = sys.output_currents(sys.node_voltages(v)) / alpha;
    const double scale = target.norm();
    return (target - out).norm() / (scale > 0.0 ? scale : 1.0);
}

/// v_max / 2 on every input.
inline Vector default_calibration_vector(const CrossbarConfig& config) {
    return Vector::Constant(config.cols, 0.5 * config.v_max);
}

struct MappingOptions {
    DescentOptions descent;
    StateSolveOptions state;
    int redistribution_rounds = 4;        // cap
    double redistribution_tolerance = 1e-6; // stop once the calibration residual is below this
};

/// Full flow: alpha search, conductance descent, calibration redistribution
/// and re-descent, quantization, and (given a device model) state solve.
inline MappingSolution map_matrix(const Matrix& w, const CrossbarConfig& config,
                                  const std::optional<DeviceModel>& model, const AlphaSearchParams& params,
                                  const Vector& v_cal, const MappingOptions& opts = {}) {
    config.validate();
    detail::check_target(w, config);
    detail::check_inputs(config, v_cal);
    MappingSolution sol;
    sol.method = MappingMethod::Proposed;

    if (w.maxCoeff() <= 0.0) {
        sol.alpha = params.alpha_0 > 0.0 ? params.alpha_0 : default_alpha(w, config);
        sol.g = ConductanceGrid::filled(config, config.g_min);
        sol.errors = error_decomposition(w, sol.g, sol.alpha, config);
        sol.search_errors = sol.errors;
        sol.calibration_residual_initial = sol.calibration_residual =
            calibration_residual(w, sol.g, sol.alpha, config, v_cal);
    } else {
        AlphaSearchResult search = search_alpha(w, config, params, opts.descent);
        sol.alpha = search.alpha;
        sol.search_errors = search.errors;
        sol.g = std::move(search.g);

        auto net = std::make_shared<const CrossbarNetwork>(config);
        sol.calibration_residual_initial = calibration_residual(w, sol.g, sol.alpha, config, v_cal);
        sol.calibration_residual = sol.calibration_residual_initial;
        Matrix targets = w;
        for (int round = 0; round < opts.redistribution_rounds; ++round) {
            if (sol.calibration_residual <= opts.redistribution_tolerance) break;
            const Matrix w_r = realized_matrix(detail::conductance_matrix(net, sol.g.values()), sol.alpha);
            // each round corrects the remaining row error of the previous targets
            Redistribution rd = redistribute_targets(w, w_r, sol.g, config);
            Matrix next_targets = targets + (rd.targets - w);
            ConductanceGrid next = descend_conductances(next_targets, sol.alpha, config, sol.g, opts.descent).g;
            const double residual = calibration_residual(w, next, sol.alpha, config, v_cal);
            if (round > 0 && residual >= sol.calibration_residual) break;
            targets = std::move(next_targets);
            sol.g = std::move(next);
            sol.calibration_residual = residual;
            sol.rows_without_headroom = std::move(rd.rows_without_headroom);
        }
        sol.errors = error_decomposition(w, sol.g, sol.alpha, config);
    }

    sol.g_quantized = quantize_grid(sol.g, config);
    if (model) {
        StateSolveResult st = solve_state_variables(sol.g_quantized, config, *model, v_cal, opts.state);
        sol.s = std::move(st.s);
        sol.flagged_cells = std::move(st.flagged);
    }
    return sol;
}

} // namespace xbar
