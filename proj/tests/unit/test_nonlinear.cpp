#include <catch_amalgamated.hpp>

#include "xbarmap/nonlinear.hpp"

#include <random>

using namespace xbar;
using Catch::Matchers::WithinRel;

namespace {

CrossbarConfig make_config(int n, int m) {
    CrossbarConfig c;
    c.rows = n;
    c.cols = m;
    return c;
}

Matrix random_states(int n, int m, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix s(n, m);
    for (Eigen::Index k = 0; k < s.size(); ++k) s(k) = u(rng);
    return s;
}

Vector random_inputs(int m, double v_max, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, v_max);
    Vector v(m);
    for (int j = 0; j < m; ++j) v[j] = u(rng);
    return v;
}

} // namespace

TEST_CASE("memristor law invariants", "[device]") {
    const MemristorLaw law = DeviceModel::standard().memristor;
    for (double s : {0.0, 0.3, 1.0}) CHECK(law.current(s, 0.0) == 0.0);
    for (double v : {0.01, 0.1, 0.2}) {
        CHECK(law.current(0.2, v) < law.current(0.6, v));
        CHECK(law.current(0.5, v) < law.current(0.5, v * 1.1));
    }
    MemristorLaw lin = law;
    lin.kind = MemristorLaw::Kind::Linear;
    CHECK(lin.current(0.5, 0.1) == lin.conductance(0.5) * 0.1);
    // small nonlinearity approaches the linear law
    MemristorLaw weak = law;
    weak.nonlinearity = 1e-6;
    CHECK_THAT(weak.current(0.5, 0.1), WithinRel(lin.current(0.5, 0.1), 1e-10));
}

TEST_CASE("transistor law invariants and derivatives", "[device]") {
    const TransistorLaw t = DeviceModel::standard().transistor;
    CHECK(t.current(0.1, 0.1) == 0.0);
    CHECK(t.current(0.0, 0.0) == 0.0);
    double prev = -1.0;
    for (double d : {-0.1, -0.05, 0.0, 0.05, 0.1, 0.2}) {
        const double i = t.current(0.05 + d, 0.05);
        CHECK(i > prev);
        prev = i;
    }
    for (auto [a, b] : {std::pair{0.12, 0.03}, {0.02, 0.15}, {1.6, 0.1}}) {
        const double h = 1e-7;
        const auto e = t.eval(a, b);
        CHECK_THAT(e.d_first, WithinRel((t.current(a + h, b) - t.current(a - h, b)) / (2 * h), 1e-6));
        CHECK_THAT(e.d_second, WithinRel((t.current(a, b + h) - t.current(a, b - h)) / (2 * h), 1e-6));
    }
}

TEST_CASE("linear device with shorted transistor reproduces the ideal network", "[nonlinear]") {
    std::mt19937_64 rng(4);
    auto c = make_config(4, 3);
    const DeviceModel model = DeviceModel::linear();
    // keep g_dev(s) inside the idealized bounds so the ideal network is valid
    const double s_lo = model.memristor.state_for_conductance(c.g_min);
    const double s_hi = model.memristor.state_for_conductance(c.g_max);
    const Matrix s = random_states(4, 3, rng, s_lo, s_hi);
    Matrix g(4, 3);
    for (Eigen::Index k = 0; k < s.size(); ++k) g(k) = model.memristor.conductance(s(k));
    const Matrix G = extract_conductance_matrix(c, ConductanceGrid(g));
    const Vector v = random_inputs(3, c.v_max, rng);
    const Vector y = simulate_nonlinear(c, s, model, v);
    CHECK((y - G * v).cwiseAbs().maxCoeff() < 1e-8 * (G * v).cwiseAbs().maxCoeff());
}

TEST_CASE("zero input gives zero output", "[nonlinear]") {
    std::mt19937_64 rng(5);
    auto c = make_config(3, 3);
    const Vector y = simulate_nonlinear(c, random_states(3, 3, rng), DeviceModel::standard(), Vector::Zero(3));
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("default model conserves current and converges tightly", "[nonlinear]") {
    std::mt19937_64 rng(6);
    auto c = make_config(4, 4);
    NonlinearCrossbar xbar(c, random_states(4, 4, rng), DeviceModel::standard());
    for (int trial = 0; trial < 5; ++trial) {
        const auto sol = xbar.solve(random_inputs(4, c.v_max, rng));
        CHECK_THAT(sol.input_current.sum(), WithinRel(sol.output_current.sum(), 1e-9));
        CHECK(sol.residual <= 1e-9 * sol.i_cell.cwiseAbs().maxCoeff());
        CHECK(sol.iterations < 20);
        // transistor carries the same current as its memristor
        const auto& t = DeviceModel::standard().transistor;
        for (Eigen::Index k = 0; k < sol.i_cell.size(); ++k) {
            const double it = t.current(sol.v_mid(k), sol.v_row(k));
            CHECK(std::abs(it - sol.i_cell(k)) < 1e-8 * sol.i_cell.cwiseAbs().maxCoeff());
        }
    }
}

TEST_CASE("zero-ohm parasitics work in the nonlinear solve", "[nonlinear]") {
    std::mt19937_64 rng(8);
    auto c = make_config(3, 4);
    c.r_wire = c.r_input = c.r_output = 0.0;
    const Matrix s = random_states(3, 4, rng);
    const Vector v = random_inputs(4, c.v_max, rng);
    const auto sol = NonlinearCrossbar(c, s, DeviceModel::standard()).solve(v);
    CHECK_THAT(sol.input_current.sum(), WithinRel(sol.output_current.sum(), 1e-9));
    // column nodes sit at the input voltage, row nodes at ground
    for (int j = 0; j < 4; ++j) CHECK((sol.v_col.col(j).array() - v[j]).abs().maxCoeff() == 0.0);
    CHECK(sol.v_row.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bad states rejected", "[nonlinear]") {
    auto c = make_config(2, 2);
    CHECK_THROWS_AS(NonlinearCrossbar(c, Matrix::Constant(2, 2, 1.5), DeviceModel::standard()),
                    std::invalid_argument);
    CHECK_THROWS_AS(NonlinearCrossbar(c, Matrix::Constant(3, 2, 0.5), DeviceModel::standard()),
                    std::invalid_argument);
}

TEST_CASE("iteration cap reports the worst node", "[nonlinear]") {
    std::mt19937_64 rng(10);
    auto c = make_config(3, 3);
    NewtonOptions opts;
    opts.max_iterations = 0;
    NonlinearCrossbar xbar(c, random_states(3, 3, rng), DeviceModel::standard(), opts);
    try {
        (void)xbar.solve(Vector::Constant(3, 0.2));
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.worst_node() >= 0);
        CHECK(e.residual() > 0.0);
    }
}
