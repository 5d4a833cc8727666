#pragma once

// Full non-ideal crossbar: each cell is a memristor from the column node to an
// internal node p, then an access transistor from p to the row node. Solved by
// global Newton-Raphson on KCL with residual-halving damping, starting from
// the linearized (small-signal) network.

#include "xbarmap/device_model.hpp"
#include "xbarmap/mna.hpp"

#include <Eigen/SparseLU>

#include <sstream>
#include <stdexcept>
#include <string>

namespace xbar {

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, int worst_node, double residual)
        : std::runtime_error(what), worst_node_(worst_node), residual_(residual) {}
    [[nodiscard]] int worst_node() const { return worst_node_; }
    [[nodiscard]] double residual() const { return residual_; }

private:
    int worst_node_;
    double residual_;
};

struct NewtonOptions {
    int max_iterations = 100;
    int max_halvings = 30;
    double relative_tolerance = 1e-9;
};

struct NonlinearSolution {
    Vector output_current; // per row, into the TIA
    Vector input_current;  // per column, out of the DAC
    Matrix v_col;
    Matrix v_row;
    Matrix v_mid;          // memristor/transistor junction (== v_row for ideal transistors)
    Matrix i_cell;
    int iterations = 0;
    double residual = 0.0; // max KCL residual in amps
};

/// Non-ideal tile with fixed state variables; reusable across many inputs.
class NonlinearCrossbar {
public:
    NonlinearCrossbar(const CrossbarConfig& config, Matrix states, DeviceModel model,
                      NewtonOptions options = {})
        : net_(std::make_shared<const CrossbarNetwork>(config)), s_(std::move(states)),
          model_(model), opts_(options) {
        if (s_.rows() != config.rows || s_.cols() != config.cols) {
            throw std::invalid_argument("state matrix shape does not match crossbar");
        }
        for (Eigen::Index k = 0; k < s_.size(); ++k) {
            if (!std::isfinite(s_(k)) || s_(k) < 0.0 || s_(k) > 1.0) {
                throw std::invalid_argument("state variables must lie in [0, 1]");
            }
        }
        cells_ = config.rows * config.cols;
        unknowns_ = net_->free_count() + (model_.transistor.ideal() ? 0 : cells_);

        Matrix g_lin(config.rows, config.cols);
        for (Eigen::Index k = 0; k < s_.size(); ++k) g_lin(k) = model_.small_signal_conductance(s_(k));
        if ((g_lin.array() <= 0.0).any()) {
            throw std::invalid_argument("device model has no conduction at zero bias");
        }
        linear_ = std::make_shared<MnaSystem>(net_, g_lin);
    }

    [[nodiscard]] const CrossbarNetwork& network() const { return *net_; }
    [[nodiscard]] int unknowns() const { return unknowns_; }

    [[nodiscard]] NonlinearSolution solve(const Vector& v_in) const {
        detail::check_inputs(net_->config(), v_in);
        const int n = net_->rows();
        const int m = net_->cols();

        Vector x = initial_guess(v_in);
        Eval ev = evaluate(x, v_in, true);
        Eigen::SparseLU<SparseMatrix> lu;
        bool analyzed = false;
        int it = 0;
        while (!converged(ev)) {
            if (it >= opts_.max_iterations) fail(ev, "iteration limit reached");
            if (!analyzed) {
                lu.analyzePattern(ev.jacobian);
                analyzed = true;
            }
            lu.factorize(ev.jacobian);
            if (lu.info() != Eigen::Success) fail(ev, "singular Jacobian");
            const Vector dx = lu.solve(-ev.residual);

            double lambda = 1.0;
            const double f0 = ev.residual.cwiseAbs().maxCoeff();
            Eval trial = evaluate(x + dx, v_in, false);
            int halvings = 0;
            while (!(trial.residual.cwiseAbs().maxCoeff() < f0) && !converged(trial)) {
                if (++halvings > opts_.max_halvings) fail(ev, "damping exhausted");
                lambda *= 0.5;
                trial = evaluate(x + lambda * dx, v_in, false);
            }
            x += lambda * dx;
            ev = evaluate(x, v_in, true);
            ++it;
        }

        NonlinearSolution out;
        out.iterations = it;
        out.residual = ev.residual.size() ? ev.residual.cwiseAbs().maxCoeff() : 0.0;
        out.v_col.resize(n, m);
        out.v_row.resize(n, m);
        out.v_mid.resize(n, m);
        out.i_cell.resize(n, m);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                out.v_col(i, j) = node_v(net_->col(i, j), x, v_in);
                out.v_row(i, j) = node_v(net_->row(i, j), x, v_in);
                out.v_mid(i, j) = mid_v(i * m + j, x, v_in);
                out.i_cell(i, j) = model_.memristor.current(s_(i, j), out.v_col(i, j) - out.v_mid(i, j));
            }
        }
        out.output_current.resize(n);
        const double y_out = net_->output_conductance();
        for (int i = 0; i < n; ++i) {
            out.output_current[i] = y_out > 0.0 ? y_out * node_v(net_->row(i, m - 1), x, v_in)
                                                : out.i_cell.row(i).sum();
        }
        out.input_current.resize(m);
        const double y_in = net_->input_conductance();
        for (int j = 0; j < m; ++j) {
            out.input_current[j] = y_in > 0.0 ? y_in * (v_in[j] - node_v(net_->col(0, j), x, v_in))
                                              : out.i_cell.col(j).sum();
        }
        return out;
    }

private:
    struct Eval {
        Vector residual;
        SparseMatrix jacobian;
        double max_branch = 0.0;
    };

    [[nodiscard]] double node_v(int node, const Vector& x, const Vector& v_in) const {
        return net_->voltage(node, x, v_in);
    }
    [[nodiscard]] double mid_v(int cell, const Vector& x, const Vector& v_in) const {
        if (model_.transistor.ideal()) {
            const int m = net_->cols();
            return node_v(net_->row(cell / m, cell % m), x, v_in);
        }
        return x[net_->free_count() + cell];
    }

    [[nodiscard]] bool converged(const Eval& ev) const {
        const double r = ev.residual.size() ? ev.residual.cwiseAbs().maxCoeff() : 0.0;
        return r <= opts_.relative_tolerance * ev.max_branch;
    }

    [[noreturn]] void fail(const Eval& ev, const char* why) const {
        Eigen::Index worst = 0;
        const double r = ev.residual.cwiseAbs().maxCoeff(&worst);
        std::ostringstream msg;
        msg << "nonlinear crossbar solve did not converge (" << why << "); worst residual "
            << r << " A at unknown " << worst;
        throw ConvergenceError(msg.str(), static_cast<int>(worst), r);
    }

    [[nodiscard]] Vector initial_guess(const Vector& v_in) const {
        const Vector free = linear_->solve_free(v_in);
        Vector x(unknowns_);
        x.head(net_->free_count()) = free;
        if (!model_.transistor.ideal()) {
            const int m = net_->cols();
            for (int k = 0; k < cells_; ++k) {
                const double vc = net_->voltage(net_->col(k / m, k % m), free, v_in);
                const double vr = net_->voltage(net_->row(k / m, k % m), free, v_in);
                const double i = linear_->conductances()(k / m, k % m) * (vc - vr);
                const double gt = model_.transistor.small_signal_conductance(vr);
                x[net_->free_count() + k] = vr + i / gt;
            }
        }
        return x;
    }

    // Unknown index of a node, -1 when its voltage is fixed.
    [[nodiscard]] int unknown_of(int node) const {
        const Terminal t = net_->terminal(node);
        return t.kind == Terminal::Kind::Free ? t.index : -1;
    }

    [[nodiscard]] Eval evaluate(const Vector& x, const Vector& v_in, bool with_jacobian) const {
        Eval ev;
        ev.residual = Vector::Zero(unknowns_);
        std::vector<Eigen::Triplet<double>> trip;
        if (with_jacobian) trip.reserve(static_cast<std::size_t>(unknowns_) * 6);

        // current i flows from unknown a to unknown b (-1 = fixed); da, db partials
        auto element = [&](int a, int b, double i, double da, double db) {
            ev.max_branch = std::max(ev.max_branch, std::abs(i));
            if (a >= 0) ev.residual[a] += i;
            if (b >= 0) ev.residual[b] -= i;
            if (!with_jacobian) return;
            if (a >= 0) {
                trip.emplace_back(a, a, da);
                if (b >= 0) trip.emplace_back(a, b, db);
            }
            if (b >= 0) {
                trip.emplace_back(b, b, -db);
                if (a >= 0) trip.emplace_back(b, a, -da);
            }
        };

        for (const Branch& br : net_->parasitics()) {
            const double i = br.conductance * (node_v(br.a, x, v_in) - node_v(br.b, x, v_in));
            element(unknown_of(br.a), unknown_of(br.b), i, br.conductance, -br.conductance);
        }
        const int m = net_->cols();
        for (int k = 0; k < cells_; ++k) {
            const int ci = k / m;
            const int cj = k % m;
            const int col = net_->col(ci, cj);
            const int row = net_->row(ci, cj);
            const double vc = node_v(col, x, v_in);
            const double vr = node_v(row, x, v_in);
            const double s = s_(ci, cj);
            if (model_.transistor.ideal()) {
                const double gm = model_.memristor.dcurrent_dv(s, vc - vr);
                element(unknown_of(col), unknown_of(row), model_.memristor.current(s, vc - vr), gm, -gm);
                continue;
            }
            const int p = net_->free_count() + k;
            const double vp = x[p];
            const double gm = model_.memristor.dcurrent_dv(s, vc - vp);
            element(unknown_of(col), p, model_.memristor.current(s, vc - vp), gm, -gm);
            const auto t = model_.transistor.eval(vp, vr);
            element(p, unknown_of(row), t.current, t.d_first, t.d_second);
        }
        if (with_jacobian) {
            ev.jacobian.resize(unknowns_, unknowns_);
            ev.jacobian.setFromTriplets(trip.begin(), trip.end());
        }
        return ev;
    }

    std::shared_ptr<const CrossbarNetwork> net_;
    Matrix s_;
    DeviceModel model_;
    NewtonOptions opts_;
    int cells_ = 0;
    int unknowns_ = 0;
    std::shared_ptr<MnaSystem> linear_;
};

/// TIA output currents of the non-ideal network for one input vector.
inline Vector simulate_nonlinear(const CrossbarConfig& config, const Matrix& states,
                                 const DeviceModel& model, const Vector& v_in) {
    return NonlinearCrossbar(config, states, model).solve(v_in).output_current;
}

} // namespace xbar
