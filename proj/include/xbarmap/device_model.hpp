#pragma once

// Pluggable non-ideal cell model: a memristor i_m(s, v) in series with an
// access transistor i_t(v_s, v_d, v_g).

#include <cmath>
#include <stdexcept>

namespace xbar {

struct MemristorLaw {
    enum class Kind { Linear, Sinh };

    Kind kind = Kind::Sinh;
    double g_dev_min = 1.0e-7;  // siemens at s = 0
    double g_dev_max = 1.0e-3;  // siemens at s = 1
    double nonlinearity = 1.0;  // 1/V, used by Sinh only

    [[nodiscard]] double conductance(double s) const {
        return g_dev_min + s * (g_dev_max - g_dev_min);
    }
    [[nodiscard]] double dconductance_ds() const { return g_dev_max - g_dev_min; }

    /// Inverse of conductance(); not clamped.
    [[nodiscard]] double state_for_conductance(double g) const {
        return (g - g_dev_min) / (g_dev_max - g_dev_min);
    }

    // sinh(c v)/c, and its derivative cosh(c v). c -> 0 gives v and 1.
    [[nodiscard]] double shape(double v) const {
        if (kind == Kind::Linear || nonlinearity == 0.0) return v;
        return std::sinh(nonlinearity * v) / nonlinearity;
    }
    [[nodiscard]] double dshape(double v) const {
        if (kind == Kind::Linear || nonlinearity == 0.0) return 1.0;
        return std::cosh(nonlinearity * v);
    }

    [[nodiscard]] double current(double s, double v) const { return conductance(s) * shape(v); }
    [[nodiscard]] double dcurrent_dv(double s, double v) const {
        return conductance(s) * dshape(v);
    }
    [[nodiscard]] double dcurrent_ds(double v) const { return dconductance_ds() * shape(v); }
};

/// Square-law NMOS access device used symmetrically: the terminal at the
/// higher potential acts as drain. Ideal means a short circuit.
struct TransistorLaw {
    enum class Kind { Ideal, SquareLaw };

    Kind kind = Kind::SquareLaw;
    double threshold = 0.4;  // V
    double k = 5.0e-3;       // A/V^2
    double v_gate = 1.8;     // V

    struct Eval {
        double current;  // from first terminal into second
        double d_first;  // d current / d v_first
        double d_second; // d current / d v_second
    };

    [[nodiscard]] bool ideal() const { return kind == Kind::Ideal; }

    /// Current flowing from terminal a to terminal b, with partials.
    [[nodiscard]] Eval eval(double va, double vb) const {
        if (ideal()) throw std::logic_error("ideal transistor has no current law");
        if (va >= vb) {
            const auto [i, d_vgs, d_vds] = forward(v_gate - vb, va - vb);
            // vgs = vg - vb, vds = va - vb
            return {i, d_vds, -d_vgs - d_vds};
        }
        const auto [i, d_vgs, d_vds] = forward(v_gate - va, vb - va);
        // current = -f(vg - va, vb - va)
        return {-i, d_vgs + d_vds, -d_vds};
    }

    [[nodiscard]] double current(double va, double vb) const { return eval(va, vb).current; }

    /// Small-signal conductance at zero drain-source voltage with the source
    /// held at v_source.
    [[nodiscard]] double small_signal_conductance(double v_source = 0.0) const {
        const double vov = v_gate - v_source - threshold;
        return vov > 0.0 ? k * vov : 0.0;
    }

private:
    struct Forward {
        double i, d_vgs, d_vds;
    };

    [[nodiscard]] Forward forward(double vgs, double vds) const {
        const double vov = vgs - threshold;
        if (vov <= 0.0) return {0.0, 0.0, 0.0};
        if (vds < vov) {
            return {k * (vov * vds - 0.5 * vds * vds), k * vds, k * (vov - vds)};
        }
        return {0.5 * k * vov * vov, k * vov, 0.0};
    }
};

struct DeviceModel {
    MemristorLaw memristor;
    TransistorLaw transistor;

    /// sinh memristor with a square-law access transistor.
    static DeviceModel standard() { return {}; }

    /// Linear memristor with a shorted access transistor; the series cell
    /// then behaves exactly like an ideal conductor g_dev(s).
    static DeviceModel linear() {
        DeviceModel m;
        m.memristor.kind = MemristorLaw::Kind::Linear;
        m.transistor.kind = TransistorLaw::Kind::Ideal;
        return m;
    }

    /// Conductance of the series cell linearized at zero bias.
    [[nodiscard]] double small_signal_conductance(double s, double v_row = 0.0) const {
        const double gm = memristor.dcurrent_dv(s, 0.0);
        if (transistor.ideal()) return gm;
        const double gt = transistor.small_signal_conductance(v_row);
        if (gm <= 0.0 || gt <= 0.0) return 0.0;
        return 1.0 / (1.0 / gm + 1.0 / gt);
    }

    /// State whose zero-bias series conductance equals g (not clamped).
    [[nodiscard]] double state_for_small_signal(double g, double v_row = 0.0) const {
        double g_dev = g;
        if (!transistor.ideal()) {
            const double gt = transistor.small_signal_conductance(v_row);
            g_dev = 1.0 / (1.0 / g - 1.0 / gt);
        }
        return memristor.state_for_conductance(g_dev);
    }
};

} // namespace xbar
