#pragma once

// Representable-value analysis, alpha sweeps, device noise and the output
// error metric used to compare mappings.

#include "xbarmap/mapping.hpp"
#include "xbarmap/nonlinear.hpp"

#include <random>
#include <span>
#include <variant>

namespace xbar {

/// Per-cell realizable interval [lo, hi] of W^r at a given alpha.
struct ValueRangeMap {
    Matrix lo;
    Matrix hi;
    [[nodiscard]] Matrix length() const { return hi - lo; }
};

/// Conductances assumed for every cell other than the one being probed.
struct Background {
    enum class Kind { AllMin, AllMax, Grid };
    Kind kind = Kind::AllMax;
    std::optional<ConductanceGrid> grid;

    static Background all_min() { return {Kind::AllMin, std::nullopt}; }
    static Background all_max() { return {Kind::AllMax, std::nullopt}; }
    static Background given(ConductanceGrid g) { return {Kind::Grid, std::move(g)}; }
};

inline ValueRangeMap value_range_map(const CrossbarConfig& config, double alpha,
                                     const Background& background = Background::all_max()) {
    config.validate();
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    Matrix base;
    switch (background.kind) {
    case Background::Kind::AllMin: base = Matrix::Constant(config.rows, config.cols, config.g_min); break;
    case Background::Kind::AllMax: base = Matrix::Constant(config.rows, config.cols, config.g_max); break;
    case Background::Kind::Grid:
        if (!background.grid) throw std::invalid_argument("grid background needs a grid");
        background.grid->validate(config);
        base = background.grid->values();
        break;
    }
    auto net = std::make_shared<const CrossbarNetwork>(config);
    ValueRangeMap out{Matrix(config.rows, config.cols), Matrix(config.rows, config.cols)};
    for (int i = 0; i < config.rows; ++i) {
        for (int j = 0; j < config.cols; ++j) {
            Matrix g = base;
            g(i, j) = config.g_max;
            out.hi(i, j) = detail::conductance_matrix(net, g)(i, j) / alpha;
            g(i, j) = config.g_min;
            out.lo(i, j) = detail::conductance_matrix(net, g)(i, j) / alpha;
        }
    }
    return out;
}

struct ErrorCurveSample {
    double alpha;
    ErrorBreakdown errors;
    double utilization; // (mean g - g_min) / (g_max - g_min)
    int saturated;      // cells driven to g_max
};

struct ErrorCurve {
    std::vector<ErrorCurveSample> samples;
};

inline double utilization(const ConductanceGrid& g, const CrossbarConfig& config) {
    return (g.values().mean() - config.g_min) / (config.g_max - config.g_min);
}

/// Error decomposition at each alpha after descending from the linear map.
inline ErrorCurve sweep_alpha(const Matrix& w, const CrossbarConfig& config, std::span<const double> alphas,
                              const DescentOptions& descent = {}) {
    detail::check_target(w, config);
    for (std::size_t k = 0; k < alphas.size(); ++k) {
        if (!(alphas[k] > 0.0)) throw std::invalid_argument("alphas must be positive");
        if (k > 0 && !(alphas[k] > alphas[k - 1])) throw std::invalid_argument("alphas must be strictly increasing");
    }
    ErrorCurve curve;
    for (double a : alphas) {
        const DescentResult d = descend_conductances(w, a, config, linear_map_initial(w, config, a), descent);
        const int sat = static_cast<int>((d.g.values().array() >= config.g_max).count());
        curve.samples.push_back({a, error_decomposition(w, d.g, a, config), utilization(d.g, config), sat});
    }
    return curve;
}

/// n log-spaced values from lo to hi inclusive.
inline std::vector<double> log_space(double lo, double hi, int n) {
    std::vector<double> out;
    for (int k = 0; k < n; ++k) {
        const double t = n > 1 ? static_cast<double>(k) / (n - 1) : 0.0;
        out.push_back(lo * std::pow(hi / lo, t));
    }
    return out;
}

/// Static random-telegraph-noise model: each entry scaled by (1 + e),
/// e ~ U[-delta, delta], then clamped to [lo, hi].
inline Matrix apply_rtn_noise(const Matrix& values, double delta, std::uint64_t seed, double lo, double hi) {
    if (!(delta >= 0.0 && delta <= 0.2)) throw std::invalid_argument("RTN delta must be in [0, 0.2]");
    if (delta == 0.0) return values;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> eps(-delta, delta);
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        out(k) = std::clamp(values(k) * (1.0 + eps(rng)), lo, hi);
    }
    return out;
}

/// Analog outputs y (in W units) of a mapped tile for a batch of inputs.
/// Uses the non-ideal network when states and a model are present, otherwise
/// the ideal network with quantized conductances.
class MappedTile {
public:
    MappedTile(const CrossbarConfig& config, const MappingSolution& sol, const std::optional<DeviceModel>& model)
        : config_(config), alpha_(sol.alpha) {
        if (sol.s && model) {
            nonlinear_ = std::make_shared<NonlinearCrossbar>(config, *sol.s, *model);
        } else {
            g_eff_ = assemble_mna(config, sol.g_quantized).conductance_matrix();
        }
    }

    /// Raw TIA currents for one input voltage vector.
    [[nodiscard]] Vector currents(const Vector& v) const {
        if (nonlinear_) return nonlinear_->solve(v).output_current;
        detail::check_inputs(config_, v);
        return g_eff_ * v;
    }

    /// W^r v estimate: currents / alpha.
    [[nodiscard]] Vector outputs(const Vector& v) const { return currents(v) / alpha_; }
    [[nodiscard]] double alpha() const { return alpha_; }

private:
    CrossbarConfig config_;
    double alpha_;
    std::shared_ptr<NonlinearCrossbar> nonlinear_;
    Matrix g_eff_;
};

/// max over inputs and rows of |W v - y(v)|, divided by max |W v|.
inline double max_output_error(const Matrix& w, const MappingSolution& sol, const CrossbarConfig& config,
                               const std::optional<DeviceModel>& model, std::span<const Vector> inputs) {
    if (inputs.empty()) throw std::invalid_argument("max_output_error needs at least one input");
    detail::check_target(w, config);
    const MappedTile tile(config, sol, model);
    double worst = 0.0;
    double scale = 0.0;
    for (const Vector& v : inputs) {
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            if (v[j] < 0.0) throw std::invalid_argument("inputs must be non-negative");
        }
        const Vector ideal = w * v;
        scale = std::max(scale, ideal.cwiseAbs().maxCoeff());
        worst = std::max(worst, (ideal - tile.outputs(v)).cwiseAbs().maxCoeff());
    }
    if (scale == 0.0) return worst == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return worst / scale;
}

/// Uniform random inputs in [0, v_max].
inline std::vector<Vector> random_inputs(const CrossbarConfig& config, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, config.v_max);
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        Vector v(config.cols);
        for (int j = 0; j < config.cols; ++j) v[j] = u(rng);
        out.push_back(std::move(v));
    }
    return out;
}

} // namespace xbar
