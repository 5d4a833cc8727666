#pragma once

// Core value types shared by every part of the mapping library: crossbar
// geometry/parasitics and the conductance grid that mapping decides.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace xbar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Geometry and parasitics of one crossbar tile.
///
/// Rows are outputs (horizontal lines, read by a TIA at the right end),
/// columns are inputs (vertical lines, driven by a DAC at the top).
struct CrossbarConfig {
    int rows = 1;
    int cols = 1;
    double r_wire = 1.0;     // ohms, one segment per cell per direction
    double r_input = 100.0;  // DAC to column head
    double r_output = 100.0; // row end to TIA virtual ground
    double g_min = 1.0 / 3.0e6;
    double g_max = 1.0 / 2.0e3;
    int bits = 8;
    double v_max = 0.2;

    [[nodiscard]] std::size_t cells() const {
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    /// Distance between adjacent programmable levels.
    [[nodiscard]] double level_step() const {
        return (g_max - g_min) / (std::ldexp(1.0, bits) - 1.0);
    }

    [[nodiscard]] bool parasitic_free() const {
        return r_wire == 0.0 && r_input == 0.0 && r_output == 0.0;
    }

    void validate() const {
        if (rows < 1 || cols < 1) {
            throw std::invalid_argument("crossbar dimensions must be positive");
        }
        auto bad_r = [](double r) { return !std::isfinite(r) || r < 0.0; };
        if (bad_r(r_wire) || bad_r(r_input) || bad_r(r_output)) {
            throw std::invalid_argument("parasitic resistances must be finite and >= 0");
        }
        if (!(g_min > 0.0) || !(g_max > g_min) || !std::isfinite(g_max)) {
            throw std::invalid_argument("conductance bounds require 0 < g_min < g_max");
        }
        if (bits < 1 || bits > 52) {
            throw std::invalid_argument("bits must be in [1, 52]");
        }
        if (!(v_max > 0.0) || !std::isfinite(v_max)) {
            throw std::invalid_argument("v_max must be positive");
        }
    }
};

/// Per-cell ideal conductances in siemens (the mapping decision variable).
class ConductanceGrid {
public:
    ConductanceGrid() = default;
    explicit ConductanceGrid(Matrix values) : values_(std::move(values)) {}

    static ConductanceGrid filled(const CrossbarConfig& config, double g) {
        return ConductanceGrid(Matrix::Constant(config.rows, config.cols, g));
    }

    [[nodiscard]] const Matrix& values() const { return values_; }
    [[nodiscard]] Matrix& values() { return values_; }
    [[nodiscard]] Eigen::Index rows() const { return values_.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return values_.cols(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }
    double& operator()(Eigen::Index i, Eigen::Index j) { return values_(i, j); }

    /// Throws unless the grid matches the config shape and every entry is a
    /// finite conductance inside [g_min, g_max] (relative slack for round-off).
    void validate(const CrossbarConfig& config) const {
        if (values_.rows() != config.rows || values_.cols() != config.cols) {
            throw std::invalid_argument("conductance grid shape does not match crossbar");
        }
        const double slack = 1e-12 * config.g_max;
        for (Eigen::Index i = 0; i < values_.rows(); ++i) {
            for (Eigen::Index j = 0; j < values_.cols(); ++j) {
                const double g = values_(i, j);
                if (!std::isfinite(g) || g < config.g_min - slack || g > config.g_max + slack) {
                    throw std::invalid_argument("conductance out of bounds at (" +
                                                std::to_string(i) + ", " + std::to_string(j) +
                                                "): " + std::to_string(g));
                }
            }
        }
    }

private:
    Matrix values_;
};

/// Squared Frobenius norm.
inline double frob2(const Matrix& m) { return m.squaredNorm(); }

} // namespace xbar
