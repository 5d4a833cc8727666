#pragma once

// Nodal analysis of the ideal crossbar (every cell an ideal conductor).
//
// Node layout for an N x M tile, 2NM + M logical nodes:
//   col(i, j)  column-side node of cell (i, j)
//   row(i, j)  row-side node of cell (i, j)
//   dac(j)     DAC output driving column j
//
//   dac(j) --(r_input + r_wire)-- col(0, j) --r_wire-- col(1, j) -- ... col(N-1, j)
//   row(i, 0) --r_wire-- row(i, 1) -- ... row(i, M-1) --(r_wire + r_output)-- TIA (0 V)
//   col(i, j) --g(i, j)-- row(i, j)
//
// Every cell owns one wire segment per direction. Cell (0, M-1) sits next to
// both drivers; (N-1, 0) is the far corner.
//
// DAC nodes are held at v_in, so the system actually factorized is the
// free-node block of Y, which is symmetric positive definite. Zero-ohm
// elements are handled by merging their end nodes before assembly.

#include "xbarmap/types.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace xbar {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Where a logical node's voltage comes from after zero-ohm merging.
struct Terminal {
    enum class Kind { Free, Source, Ground };
    Kind kind = Kind::Free;
    int index = 0; // unknown index for Free, input column for Source
};

/// Two-terminal linear element between logical nodes (ground is -1).
struct Branch {
    int a;
    int b;
    double conductance;
};

/// Topology of a tile: node numbering, merged node classes and the
/// parasitic resistor list. Depends only on the config, never on g.
class CrossbarNetwork {
public:
    static constexpr int kGround = -1;

    explicit CrossbarNetwork(const CrossbarConfig& config) : config_(config) {
        config_.validate();
        const int n = config_.rows;
        const int m = config_.cols;
        const int nodes = logical_nodes();

        // union-find over logical nodes plus a ground slot at index `nodes`
        std::vector<int> parent(static_cast<std::size_t>(nodes) + 1);
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[x] != x) {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            return x;
        };
        auto slot = [&](int node) { return node == kGround ? nodes : node; };
        auto connect = [&](int a, int b, double r) {
            if (r == 0.0) {
                parent[find(slot(a))] = find(slot(b));
            } else {
                parasitics_.push_back({a, b, 1.0 / r});
            }
        };

        const double r_in = config_.r_input + config_.r_wire;
        const double r_out = config_.r_wire + config_.r_output;
        for (int j = 0; j < m; ++j) {
            connect(dac(j), col(0, j), r_in);
            for (int i = 1; i < n; ++i) connect(col(i - 1, j), col(i, j), config_.r_wire);
        }
        for (int i = 0; i < n; ++i) {
            for (int j = 1; j < m; ++j) connect(row(i, j - 1), row(i, j), config_.r_wire);
            connect(row(i, m - 1), kGround, r_out);
        }
        input_conductance_ = r_in > 0.0 ? 1.0 / r_in : 0.0;
        output_conductance_ = r_out > 0.0 ? 1.0 / r_out : 0.0;

        // classify each merged class
        std::vector<Terminal> by_root(static_cast<std::size_t>(nodes) + 1);
        std::vector<bool> seen(by_root.size(), false);
        for (int j = 0; j < m; ++j) {
            const int r = find(dac(j));
            by_root[r] = {Terminal::Kind::Source, j};
            seen[r] = true;
        }
        {
            const int r = find(nodes);
            if (seen[r]) throw std::logic_error("DAC shorted to ground");
            by_root[r] = {Terminal::Kind::Ground, 0};
            seen[r] = true;
        }
        terminals_.resize(static_cast<std::size_t>(nodes));
        for (int v = 0; v < nodes; ++v) {
            const int r = find(v);
            if (!seen[r]) {
                by_root[r] = {Terminal::Kind::Free, free_count_++};
                seen[r] = true;
            }
            terminals_[v] = by_root[r];
        }
    }

    [[nodiscard]] const CrossbarConfig& config() const { return config_; }
    [[nodiscard]] int rows() const { return config_.rows; }
    [[nodiscard]] int cols() const { return config_.cols; }
    [[nodiscard]] int logical_nodes() const { return 2 * rows() * cols() + cols(); }
    [[nodiscard]] int free_count() const { return free_count_; }

    [[nodiscard]] int col(int i, int j) const { return i * cols() + j; }
    [[nodiscard]] int row(int i, int j) const { return rows() * cols() + i * cols() + j; }
    [[nodiscard]] int dac(int j) const { return 2 * rows() * cols() + j; }

    [[nodiscard]] Terminal terminal(int node) const {
        if (node == kGround) return {Terminal::Kind::Ground, 0};
        return terminals_[static_cast<std::size_t>(node)];
    }

    [[nodiscard]] const std::vector<Branch>& parasitics() const { return parasitics_; }

    /// Conductance of the DAC-to-column-head element; 0 means a short.
    [[nodiscard]] double input_conductance() const { return input_conductance_; }
    /// Conductance of the row-end-to-TIA element; 0 means a short.
    [[nodiscard]] double output_conductance() const { return output_conductance_; }

    /// Voltage of a logical node given the free-node solution and inputs.
    template <class FreeVec, class InputVec>
    [[nodiscard]] double voltage(int node, const FreeVec& x, const InputVec& v_in) const {
        const Terminal t = terminal(node);
        switch (t.kind) {
        case Terminal::Kind::Free: return x[t.index];
        case Terminal::Kind::Source: return v_in[t.index];
        case Terminal::Kind::Ground: return 0.0;
        }
        return 0.0;
    }

private:
    CrossbarConfig config_;
    std::vector<Terminal> terminals_;
    std::vector<Branch> parasitics_;
    int free_count_ = 0;
    double input_conductance_ = 0.0;
    double output_conductance_ = 0.0;
};

namespace detail {

/// Accumulates KCL stamps of the free-node block A and the source coupling C
/// so that A x + C v_in = 0.
class StampBuffer {
public:
    StampBuffer(const CrossbarNetwork& net) : net_(net) {}

    void stamp(int a, int b, double y) {
        const Terminal ta = net_.terminal(a);
        const Terminal tb = net_.terminal(b);
        const bool fa = ta.kind == Terminal::Kind::Free;
        const bool fb = tb.kind == Terminal::Kind::Free;
        if (fa && fb && ta.index == tb.index) return;
        if (fa) a_.emplace_back(ta.index, ta.index, y);
        if (fb) a_.emplace_back(tb.index, tb.index, y);
        if (fa && fb) {
            a_.emplace_back(ta.index, tb.index, -y);
            a_.emplace_back(tb.index, ta.index, -y);
        }
        if (fa && tb.kind == Terminal::Kind::Source) c_.emplace_back(ta.index, tb.index, -y);
        if (fb && ta.kind == Terminal::Kind::Source) c_.emplace_back(tb.index, ta.index, -y);
    }

    [[nodiscard]] SparseMatrix system() const {
        SparseMatrix m(net_.free_count(), net_.free_count());
        m.setFromTriplets(a_.begin(), a_.end());
        return m;
    }
    [[nodiscard]] SparseMatrix coupling() const {
        SparseMatrix m(net_.free_count(), net_.cols());
        m.setFromTriplets(c_.begin(), c_.end());
        return m;
    }

private:
    const CrossbarNetwork& net_;
    std::vector<Eigen::Triplet<double>> a_;
    std::vector<Eigen::Triplet<double>> c_;
};

} // namespace detail

/// Assembled and factorized nodal system for one conductance grid.
/// Immutable after construction; concurrent solves are safe.
class MnaSystem {
public:
    using Solver = Eigen::SimplicialLDLT<SparseMatrix>;

    /// Any positive finite conductances; bounds are the caller's business.
    MnaSystem(std::shared_ptr<const CrossbarNetwork> net, const Matrix& g)
        : net_(std::move(net)), g_(g) {
        if (g_.rows() != net_->rows() || g_.cols() != net_->cols()) {
            throw std::invalid_argument("conductance grid shape does not match crossbar");
        }
        if (!g_.allFinite() || (g_.array() <= 0.0).any()) {
            throw std::invalid_argument("conductances must be positive and finite");
        }
        detail::StampBuffer buf(*net_);
        for (const Branch& br : net_->parasitics()) buf.stamp(br.a, br.b, br.conductance);
        for (int i = 0; i < net_->rows(); ++i) {
            for (int j = 0; j < net_->cols(); ++j) buf.stamp(net_->col(i, j), net_->row(i, j), g_(i, j));
        }
        a_ = buf.system();
        c_ = buf.coupling();
        if (net_->free_count() > 0) {
            solver_ = std::make_shared<Solver>(a_);
            if (solver_->info() != Eigen::Success) {
                throw std::runtime_error("internal fault: nodal matrix is singular");
            }
        }
    }

    [[nodiscard]] const CrossbarNetwork& network() const { return *net_; }
    [[nodiscard]] const std::shared_ptr<const CrossbarNetwork>& network_ptr() const { return net_; }
    [[nodiscard]] const Matrix& conductances() const { return g_; }

    /// Size of the full system [v; v_dac] including DAC nodes.
    [[nodiscard]] int dimension() const { return net_->logical_nodes(); }
    /// Size of the factorized free-node block.
    [[nodiscard]] int reduced_dimension() const { return net_->free_count(); }
    [[nodiscard]] const SparseMatrix& reduced_matrix() const { return a_; }

    /// The full (2NM + M)-square matrix Y with rows Y [v; v_dac] = [0; v_in].
    /// Only defined when no parasitic element is a short.
    [[nodiscard]] SparseMatrix full_matrix() const {
        if (net_->free_count() != net_->logical_nodes() - net_->cols()) {
            throw std::logic_error("full nodal matrix needs all parasitic resistances > 0");
        }
        const int dim = dimension();
        std::vector<Eigen::Triplet<double>> t;
        auto stamp = [&](int a, int b, double y) {
            // KCL rows exist for non-DAC nodes; DAC rows are identity below
            auto is_kcl = [&](int n) { return n != CrossbarNetwork::kGround && n < net_->dac(0); };
            if (is_kcl(a)) t.emplace_back(a, a, y);
            if (is_kcl(b)) t.emplace_back(b, b, y);
            if (is_kcl(a) && b != CrossbarNetwork::kGround) t.emplace_back(a, b, -y);
            if (is_kcl(b) && a != CrossbarNetwork::kGround) t.emplace_back(b, a, -y);
        };
        for (const Branch& br : net_->parasitics()) stamp(br.a, br.b, br.conductance);
        for (int i = 0; i < net_->rows(); ++i) {
            for (int j = 0; j < net_->cols(); ++j) stamp(net_->col(i, j), net_->row(i, j), g_(i, j));
        }
        for (int j = 0; j < net_->cols(); ++j) t.emplace_back(net_->dac(j), net_->dac(j), 1.0);
        SparseMatrix y(dim, dim);
        y.setFromTriplets(t.begin(), t.end());
        return y;
    }

    /// Free-node voltages for one input vector.
    [[nodiscard]] Vector solve_free(const Vector& v_in) const {
        if (!solver_) return Vector(0);
        Vector rhs = -(c_ * v_in);
        return solver_->solve(rhs);
    }

    /// Free-node voltages for each unit input (column j: input j at 1 V).
    [[nodiscard]] Matrix unit_responses() const {
        if (!solver_) return Matrix(0, net_->cols());
        Matrix rhs = -Matrix(c_);
        return solver_->solve(rhs);
    }

    /// Solve A X = B for arbitrary right-hand sides (adjoint solves).
    [[nodiscard]] Matrix solve_reduced(const Matrix& rhs) const {
        if (!solver_) return Matrix(0, rhs.cols());
        return solver_->solve(rhs);
    }

    /// Voltages of all logical nodes.
    [[nodiscard]] Vector node_voltages(const Vector& v_in) const {
        const Vector x = solve_free(v_in);
        Vector v(dimension());
        for (int n = 0; n < dimension(); ++n) v[n] = net_->voltage(n, x, v_in);
        return v;
    }

    /// TIA currents per row for the given logical node voltages.
    [[nodiscard]] Vector output_currents(const Vector& v) const {
        const int n = net_->rows();
        const int m = net_->cols();
        Vector out(n);
        const double y_out = net_->output_conductance();
        for (int i = 0; i < n; ++i) {
            if (y_out > 0.0) {
                out[i] = y_out * v[net_->row(i, m - 1)];
            } else {
                double s = 0.0;
                for (int j = 0; j < m; ++j) s += g_(i, j) * (v[net_->col(i, j)] - v[net_->row(i, j)]);
                out[i] = s;
            }
        }
        return out;
    }

    /// Currents drawn from each DAC for the given logical node voltages.
    [[nodiscard]] Vector input_currents(const Vector& v) const {
        const int n = net_->rows();
        const int m = net_->cols();
        Vector in(m);
        const double y_in = net_->input_conductance();
        for (int j = 0; j < m; ++j) {
            if (y_in > 0.0) {
                in[j] = y_in * (v[net_->dac(j)] - v[net_->col(0, j)]);
            } else {
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += g_(i, j) * (v[net_->col(i, j)] - v[net_->row(i, j)]);
                in[j] = s;
            }
        }
        return in;
    }

    /// G = S Y^-1 B: output current at row i per volt at input j.
    [[nodiscard]] Matrix conductance_matrix() const {
        const int m = net_->cols();
        const Matrix x = unit_responses();
        Matrix out(net_->rows(), m);
        Vector unit = Vector::Zero(m);
        Vector v(dimension());
        for (int j = 0; j < m; ++j) {
            unit.setZero();
            unit[j] = 1.0;
            for (int k = 0; k < dimension(); ++k) v[k] = net_->voltage(k, x.col(j), unit);
            out.col(j) = output_currents(v);
        }
        return out;
    }

private:
    std::shared_ptr<const CrossbarNetwork> net_;
    Matrix g_;
    SparseMatrix a_;
    SparseMatrix c_;
    std::shared_ptr<Solver> solver_;
};

/// Per-cell voltages and currents of the ideal network for one input.
struct NodeVoltageSolution {
    Matrix v_col;
    Matrix v_row;
    Matrix i_cell;
    Vector output_current; // per row, into the TIA
    Vector input_current;  // per column, out of the DAC
};

inline MnaSystem assemble_mna(const CrossbarConfig& config, const ConductanceGrid& g) {
    config.validate();
    g.validate(config);
    return MnaSystem(std::make_shared<const CrossbarNetwork>(config), g.values());
}

inline Matrix extract_conductance_matrix(const CrossbarConfig& config, const ConductanceGrid& g) {
    return assemble_mna(config, g).conductance_matrix();
}

/// W^r = G / alpha.
inline Matrix realized_matrix(const Matrix& G, double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("scaling factor alpha must be positive");
    }
    return G / alpha;
}

namespace detail {

inline void check_inputs(const CrossbarConfig& config, const Vector& v_in) {
    if (v_in.size() != config.cols) throw std::invalid_argument("input vector length must equal cols");
    const double slack = 1e-12 * config.v_max;
    for (Eigen::Index j = 0; j < v_in.size(); ++j) {
        if (!std::isfinite(v_in[j]) || v_in[j] < -slack || v_in[j] > config.v_max + slack) {
            throw std::invalid_argument("input voltage out of range [0, v_max] at column " +
                                        std::to_string(j));
        }
    }
}

inline NodeVoltageSolution cell_solution(const MnaSystem& sys, const Vector& v_in) {
    const CrossbarNetwork& net = sys.network();
    const Vector v = sys.node_voltages(v_in);
    NodeVoltageSolution out;
    out.v_col.resize(net.rows(), net.cols());
    out.v_row.resize(net.rows(), net.cols());
    for (int i = 0; i < net.rows(); ++i) {
        for (int j = 0; j < net.cols(); ++j) {
            out.v_col(i, j) = v[net.col(i, j)];
            out.v_row(i, j) = v[net.row(i, j)];
        }
    }
    out.i_cell = sys.conductances().cwiseProduct(out.v_col - out.v_row);
    out.output_current = sys.output_currents(v);
    out.input_current = sys.input_currents(v);
    return out;
}

} // namespace detail

inline NodeVoltageSolution solve_node_voltages(const CrossbarConfig& config, const ConductanceGrid& g,
                                               const Vector& v_in) {
    detail::check_inputs(config, v_in);
    return detail::cell_solution(assemble_mna(config, g), v_in);
}

/// Gradient with respect to g of ||R||_F^2 where R = W - G(g) is held as
/// `residual`, i.e. -2 sum_ij R_ij dG_ij/dg. For W^r = G/alpha divide by alpha.
///
/// Adjoint form: with A the free-node block, x_j the response to unit input
/// j and l_i the output functional of row i,
///   dG_ij/dg_k = [l_i depends on g_k] dV_jk - (lambda_i . s_k) dV_jk,
/// where lambda_i = A^-1 l_i, s_k the incidence of cell k and dV_jk the
/// voltage across cell k under input j. One factorization, N adjoint solves.
inline Matrix conductance_gradient(const MnaSystem& sys, const Matrix& residual) {
    const CrossbarNetwork& net = sys.network();
    const int n = net.rows();
    const int m = net.cols();
    const int cells = n * m;
    if (residual.rows() != n || residual.cols() != m) {
        throw std::invalid_argument("residual shape does not match crossbar");
    }

    // dV(k, j): voltage across cell k for unit input j
    const Matrix x = sys.unit_responses();
    Matrix dv(cells, m);
    Vector unit = Vector::Zero(m);
    for (int j = 0; j < m; ++j) {
        unit.setZero();
        unit[j] = 1.0;
        const auto xj = x.col(j);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < m; ++c) {
                dv(i * m + c, j) = net.voltage(net.col(i, c), xj, unit) - net.voltage(net.row(i, c), xj, unit);
            }
        }
    }

    const bool cell_sum_output = net.output_conductance() == 0.0;
    Matrix across_adj = Matrix::Zero(n, cells); // lambda_i . s_k
    if (net.free_count() > 0) {
        Matrix l = Matrix::Zero(net.free_count(), n);
        for (int i = 0; i < n; ++i) {
            if (!cell_sum_output) {
                const Terminal t = net.terminal(net.row(i, m - 1));
                if (t.kind == Terminal::Kind::Free) l(t.index, i) += net.output_conductance();
            } else {
                for (int c = 0; c < m; ++c) {
                    const Terminal tc = net.terminal(net.col(i, c));
                    const Terminal tr = net.terminal(net.row(i, c));
                    if (tc.kind == Terminal::Kind::Free) l(tc.index, i) += sys.conductances()(i, c);
                    if (tr.kind == Terminal::Kind::Free) l(tr.index, i) -= sys.conductances()(i, c);
                }
            }
        }
        const Matrix lambda = sys.solve_reduced(l);
        const Vector zero_in = Vector::Zero(m);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < cells; ++k) {
                const int ci = k / m;
                const int cj = k % m;
                across_adj(i, k) = net.voltage(net.col(ci, cj), lambda.col(i), zero_in) -
                                   net.voltage(net.row(ci, cj), lambda.col(i), zero_in);
            }
        }
    }

    // t(k, j) = sum_i lambda_ik R_ij
    const Matrix t = across_adj.transpose() * residual;
    Matrix grad(n, m);
    for (int k = 0; k < cells; ++k) {
        const int ci = k / m;
        const int cj = k % m;
        double acc = 0.0;
        for (int j = 0; j < m; ++j) {
            const double direct = cell_sum_output ? residual(ci, j) : 0.0;
            acc += dv(k, j) * (direct - t(k, j));
        }
        grad(ci, cj) = -2.0 * acc;
    }
    return grad;
}

inline Matrix conductance_gradient(const CrossbarConfig& config, const ConductanceGrid& g,
                                   const Matrix& residual) {
    return conductance_gradient(assemble_mna(config, g), residual);
}

} // namespace xbar
