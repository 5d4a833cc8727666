#include <catch_amalgamated.hpp>

#include "oracle/dense_mna.hpp"
#include "xbarmap/baselines.hpp"
#include "xbarmap/nonlinear.hpp"

#include <random>

using namespace xbar;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

CrossbarConfig make_config(int n, int m) {
    CrossbarConfig c;
    c.rows = n;
    c.cols = m;
    return c;
}

Matrix random_matrix(int n, int m, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix w(n, m);
    for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = u(rng);
    return w;
}

oracle::Parasitics parasitics(const CrossbarConfig& c) { return {c.r_wire, c.r_input, c.r_output}; }

} // namespace

TEST_CASE("linear initial map", "[mapping]") {
    auto c = make_config(4, 4);
    const auto zero = linear_map_initial(Matrix::Zero(4, 4), c, 1e-3);
    CHECK((zero.values().array() == c.g_min).all());

    std::mt19937_64 rng(1);
    Matrix w = random_matrix(4, 4, rng);
    const double alpha = c.g_max / w.maxCoeff();
    CHECK(linear_map_initial(w, c, alpha).values().maxCoeff() == c.g_max);

    const double mid = 0.3 * alpha;
    const auto g = linear_map_initial(w, c, mid);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        const double expect = std::min(std::max(mid * w(k), c.g_min), c.g_max);
        CHECK(g.values()(k) == expect);
    }
    CHECK_THROWS_AS(linear_map_initial(w, c, 0.0), std::invalid_argument);
}

TEST_CASE("quantization levels", "[mapping]") {
    auto c = make_config(1, 5);
    const double step = c.level_step();
    Matrix g(1, 5);
    g << c.g_min, c.g_max, c.g_min + 0.3 * step, c.g_min + 0.5 * step, c.g_max - 0.49 * step;
    const Matrix q = quantize_grid(ConductanceGrid(g), c).values();
    CHECK(q(0, 0) == c.g_min);
    CHECK(q(0, 1) == c.g_max);
    CHECK(q(0, 2) == c.g_min);
    CHECK_THAT(q(0, 3), WithinRel(c.g_min + step, 1e-12)); // tie rounds up
    CHECK(q(0, 4) == c.g_max);

    std::mt19937_64 rng(2);
    auto big = make_config(6, 6);
    const Matrix r = random_matrix(6, 6, rng, big.g_min, big.g_max);
    const Matrix rq = quantize_grid(ConductanceGrid(r), big).values();
    CHECK((rq - r).cwiseAbs().maxCoeff() <= 0.5 * big.level_step() * (1 + 1e-9));
    // every output sits on a level
    for (Eigen::Index k = 0; k < rq.size(); ++k) {
        const double level = (rq(k) - big.g_min) / big.level_step();
        CHECK_THAT(level, WithinAbs(std::round(level), 1e-6));
    }
}

TEST_CASE("descent recovers a realizable target", "[mapping][descent]") {
    std::mt19937_64 rng(3);
    auto c = make_config(4, 4);
    const double span = c.g_max - c.g_min;
    const Matrix g_star = random_matrix(4, 4, rng, c.g_min + 0.2 * span, c.g_min + 0.8 * span);
    const double alpha = 1e-3;
    const Matrix w = realized_matrix(extract_conductance_matrix(c, ConductanceGrid(g_star)), alpha);
    const auto r = descend_conductances(w, alpha, c, linear_map_initial(w, c, alpha));
    CHECK(r.objective < 1e-10 * w.squaredNorm());
    const double f0 = (w - realized_matrix(extract_conductance_matrix(c, linear_map_initial(w, c, alpha)), alpha))
                          .squaredNorm();
    CHECK(r.objective <= f0);
}

TEST_CASE("descent without parasitics is exact in one step", "[mapping][descent]") {
    std::mt19937_64 rng(4);
    auto c = make_config(3, 5);
    c.r_wire = c.r_input = c.r_output = 0.0;
    const double alpha = 2e-4;
    const Matrix w = random_matrix(3, 5, rng, c.g_min / alpha * 1.01, c.g_max / alpha * 0.99);
    const auto r = descend_conductances(w, alpha, c, ConductanceGrid::filled(c, c.g_min));
    CHECK(r.iterations == 1);
    CHECK((r.g.values() - alpha * w).cwiseAbs().maxCoeff() < 1e-12 * c.g_max);
}

TEST_CASE("descent clips an unreachable entry at g_max", "[mapping][descent]") {
    std::mt19937_64 rng(5);
    auto c = make_config(4, 4);
    const double alpha = 1e-3;
    Matrix w = random_matrix(4, 4, rng, 0.1, 0.3);
    w(2, 1) = 5.0 * c.g_max / alpha;
    const auto r = descend_conductances(w, alpha, c, linear_map_initial(w, c, alpha));
    CHECK(r.g(2, 1) == c.g_max);
    const Matrix G = oracle::dense_conductance_matrix(r.g.values(), parasitics(c));
    const Matrix resid = (w - G / alpha).cwiseAbs();
    Eigen::Index wi = 0;
    Eigen::Index wj = 0;
    resid.maxCoeff(&wi, &wj);
    CHECK(wi == 2);
    CHECK(wj == 1);
    CHECK_THAT(r.objective, WithinRel((w - G / alpha).squaredNorm(), 1e-9));
}

TEST_CASE("error decomposition", "[mapping]") {
    std::mt19937_64 rng(6);
    auto c = make_config(8, 8);
    const Matrix w = random_matrix(8, 8, rng);
    for (double alpha : {1e-4, 4e-4}) {
        const auto g = descend_conductances(w, alpha, c, linear_map_initial(w, c, alpha)).g;
        const auto e = error_decomposition(w, g, alpha, c);
        CHECK(e.precision >= 0.0);
        CHECK_THAT(e.total, WithinRel(e.value_range + e.precision, 1e-12));
        const Matrix G = oracle::dense_conductance_matrix(g.values(), parasitics(c));
        const Matrix Gq = oracle::dense_conductance_matrix(quantize_grid(g, c).values(), parasitics(c));
        const double tol = 1e-8 * w.squaredNorm();
        CHECK_THAT(e.value_range, WithinAbs((w - G / alpha).squaredNorm(), tol));
        CHECK_THAT(e.total, WithinAbs((w - Gq / alpha).squaredNorm(), tol));
    }
    auto fine = c;
    fine.bits = 30;
    const auto g = descend_conductances(w, 2e-4, fine, linear_map_initial(w, fine, 2e-4)).g;
    const auto e = error_decomposition(w, g, 2e-4, fine);
    CHECK(e.precision < 1e-12 * w.squaredNorm());
}

TEST_CASE("alpha search keeps the best candidate", "[mapping][search]") {
    std::mt19937_64 rng(7);
    auto c = make_config(16, 16);
    const Matrix w = random_matrix(16, 16, rng);
    AlphaSearchParams p;
    const auto r = search_alpha(w, c, p);
    REQUIRE(!r.trace.empty());
    CHECK(r.trace.front().alpha == default_alpha(w, c));
    CHECK(r.errors.total <= r.trace.front().errors.total);
    std::size_t best = 0;
    for (std::size_t k = 0; k < r.trace.size(); ++k) {
        CHECK(r.errors.total <= r.trace[k].errors.total);
        if (r.trace[k].alpha == r.alpha) best = k;
    }
    CHECK(r.trace.size() - 1 - best <= static_cast<std::size_t>(p.patience));
    // neither component dominates the other by more than about an order of magnitude
    const double hi = std::max(r.errors.value_range, r.errors.precision);
    const double lo = std::min(r.errors.value_range, r.errors.precision);
    CHECK(hi <= 20.0 * std::max(lo, 1e-300));

    // the returned alpha lies in the low-error basin of an independent sweep
    double sweep_best = std::numeric_limits<double>::infinity();
    for (double f = 0.4; f <= 1.6; f += 0.1) {
        const double a = f * default_alpha(w, c);
        const auto g = descend_conductances(w, a, c, linear_map_initial(w, c, a)).g;
        sweep_best = std::min(sweep_best, error_decomposition(w, g, a, c).total);
    }
    CHECK(r.errors.total <= 1.5 * sweep_best);
}

TEST_CASE("alpha search parameters are validated", "[mapping][search]") {
    auto c = make_config(2, 2);
    AlphaSearchParams p;
    p.beta = 1.5;
    CHECK_THROWS_AS(search_alpha(Matrix::Ones(2, 2), c, p), std::invalid_argument);
    p = {};
    p.patience = 0;
    CHECK_THROWS_AS(search_alpha(Matrix::Ones(2, 2), c, p), std::invalid_argument);
}

TEST_CASE("stopping on patience at an optimal starting alpha", "[mapping][search]") {
    // no parasitics, targets in range: alpha_0 gives zero value-range error and
    // the search only moves alpha up, where precision never beats alpha_0 by much
    auto c = make_config(3, 3);
    c.r_wire = c.r_input = c.r_output = 0.0;
    c.bits = 52;
    Matrix w(3, 3);
    w << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    AlphaSearchParams p;
    p.alpha_0 = c.g_max / 9.0;
    const auto r = search_alpha(w, c, p);
    CHECK(r.alpha == p.alpha_0);
    CHECK(static_cast<int>(r.trace.size()) == 1 + p.patience);
}

TEST_CASE("redistribution arithmetic", "[mapping][redistribution]") {
    auto c = make_config(1, 4);
    Matrix w(1, 4);
    w << 1.0, 2.0, 3.0, 4.0;
    Matrix w_r = w;
    ConductanceGrid g(Matrix::Constant(1, 4, c.g_max));
    g(0, 2) = c.g_min;
    CHECK(redistribute_targets(w, w_r, g, c).targets == w);

    w_r(0, 0) += 0.6; // residual r = +0.6 over three adjustable cells
    const auto rd = redistribute_targets(w, w_r, g, c);
    const Matrix shift = rd.targets - w;
    CHECK_THAT(shift(0, 0), WithinRel(-0.2, 1e-12));
    CHECK_THAT(shift(0, 1), WithinRel(-0.2, 1e-12));
    CHECK(shift(0, 2) == 0.0);
    CHECK_THAT(shift(0, 3), WithinRel(-0.2, 1e-12));
    CHECK_THAT(shift.sum(), WithinRel(-0.6, 1e-12));
    CHECK(rd.rows_without_headroom.empty());

    const auto none = redistribute_targets(w, w_r, ConductanceGrid::filled(c, c.g_min), c);
    CHECK(none.targets == w);
    CHECK(none.rows_without_headroom == std::vector<int>{0});
}

TEST_CASE("redistribution skips saturated cells when targets must grow", "[mapping][redistribution]") {
    auto c = make_config(1, 3);
    Matrix w(1, 3);
    w << 1.0, 2.0, 3.0;
    Matrix w_r = w;
    w_r(0, 2) -= 0.4; // realized too small
    Matrix g(1, 3);
    g << 0.5 * c.g_max, 0.5 * c.g_max, c.g_max;
    const auto up = redistribute_targets(w, w_r, ConductanceGrid(g), c);
    CHECK_THAT(up.targets(0, 0) - w(0, 0), WithinRel(0.2, 1e-12));
    CHECK_THAT(up.targets(0, 1) - w(0, 1), WithinRel(0.2, 1e-12));
    CHECK(up.targets(0, 2) == w(0, 2));

    w_r(0, 2) += 0.7; // realized too large: the saturated cell can move down
    const auto down = redistribute_targets(w, w_r, ConductanceGrid(g), c);
    CHECK_THAT(down.targets(0, 2) - w(0, 2), WithinRel(-0.1, 1e-12));

    const auto stuck = redistribute_targets(w, w - Matrix::Constant(1, 3, 0.1), ConductanceGrid::filled(c, c.g_max), c);
    CHECK(stuck.rows_without_headroom == std::vector<int>{0});
}

TEST_CASE("redistribution cancels the calibration residual", "[mapping][redistribution]") {
    auto c = make_config(8, 8);
    const Vector v_cal = default_calibration_vector(c);
    int checked = 0;
    for (std::uint64_t seed = 500; seed < 510; ++seed) {
        std::mt19937_64 rng(seed);
        const Matrix w = random_matrix(8, 8, rng);
        const auto sol = map_matrix(w, c, std::nullopt, {}, v_cal);
        CHECK(sol.calibration_residual < 1e-3);
        CHECK(sol.rows_without_headroom.empty());
        if (sol.calibration_residual_initial > 1e-9) {
            CHECK(sol.calibration_residual_initial >= 100.0 * sol.calibration_residual);
            ++checked;
        }
        CHECK_THAT(sol.calibration_residual,
                   WithinRel(calibration_residual(w, sol.g, sol.alpha, c, v_cal), 1e-12));
    }
    CHECK(checked >= 3);
}

TEST_CASE("state solve closed form for the linear device", "[mapping][state]") {
    std::mt19937_64 rng(8);
    auto c = make_config(4, 4);
    const Matrix g = random_matrix(4, 4, rng, c.g_min, c.g_max);
    const DeviceModel model = DeviceModel::linear();
    const auto r = solve_state_variables(ConductanceGrid(g), c, model, default_calibration_vector(c));
    CHECK(r.flagged.empty());
    const auto& m = model.memristor;
    for (Eigen::Index k = 0; k < g.size(); ++k) {
        CHECK_THAT(r.s(k), WithinRel((g(k) - m.g_dev_min) / (m.g_dev_max - m.g_dev_min), 1e-9));
    }
}

TEST_CASE("state solve round trip under the default model", "[mapping][state]") {
    auto c = make_config(4, 4);
    const DeviceModel model = DeviceModel::standard();
    const Vector v_cal = default_calibration_vector(c);
    for (std::uint64_t seed : {9u, 10u, 11u}) {
        std::mt19937_64 rng(seed);
        const auto g = quantize_grid(ConductanceGrid(random_matrix(4, 4, rng, c.g_min, c.g_max)), c);
        const auto r = solve_state_variables(g, c, model, v_cal);
        CHECK(r.flagged.empty());
        CHECK(r.max_relative_residual < 1e-9);
        const Vector ideal = extract_conductance_matrix(c, g) * v_cal;
        const Vector real = simulate_nonlinear(c, r.s, model, v_cal);
        CHECK((real - ideal).norm() < 1e-3 * ideal.norm());
    }
}

TEST_CASE("state solve handles zero calibration current", "[mapping][state]") {
    auto c = make_config(2, 3);
    c.r_wire = c.r_input = c.r_output = 0.0; // no sneak path into the idle column
    const auto g = ConductanceGrid::filled(c, 0.5 * (c.g_min + c.g_max));
    Vector v_cal = default_calibration_vector(c);
    v_cal[1] = 0.0;
    const DeviceModel model = DeviceModel::standard();
    const auto r = solve_state_variables(g, c, model, v_cal);
    CHECK(r.flagged.empty());
    for (int i = 0; i < 2; ++i) {
        CHECK_THAT(r.s(i, 1), WithinRel(model.state_for_small_signal(g(i, 1), 0.0), 1e-12));
    }
}

TEST_CASE("state solve flags unreachable conductances", "[mapping][state]") {
    auto c = make_config(1, 1);
    c.g_max = 1e-2; // above the device's g_dev_max
    const auto g = ConductanceGrid::filled(c, c.g_max);
    const auto r = solve_state_variables(g, c, DeviceModel::standard(), default_calibration_vector(c));
    REQUIRE(!r.flagged.empty());
    CHECK(r.s(0, 0) >= 0.0);
    CHECK(r.s(0, 0) <= 1.0);
}

TEST_CASE("map_matrix edge cases", "[mapping][flow]") {
    SECTION("single cell") {
        auto c = make_config(1, 1);
        Matrix w(1, 1);
        w << 0.7;
        const auto sol = map_matrix(w, c, std::nullopt, {}, default_calibration_vector(c));
        const double realized = extract_conductance_matrix(c, sol.g_quantized)(0, 0) / sol.alpha;
        CHECK(std::abs(realized - 0.7) / 0.7 < c.level_step() / sol.g_quantized(0, 0));
    }
    SECTION("zero matrix") {
        auto c = make_config(3, 3);
        const auto sol = map_matrix(Matrix::Zero(3, 3), c, std::nullopt, {}, default_calibration_vector(c));
        CHECK((sol.g.values().array() == c.g_min).all());
        CHECK(sol.alpha == default_alpha(Matrix::Zero(3, 3), c));
        CHECK(sol.errors.value_range > 0.0);
    }
    SECTION("bad inputs") {
        auto c = make_config(2, 2);
        CHECK_THROWS_AS(map_matrix(Matrix::Ones(3, 2), c, std::nullopt, {}, default_calibration_vector(c)),
                        std::invalid_argument);
        CHECK_THROWS_AS(map_matrix(-Matrix::Ones(2, 2), c, std::nullopt, {}, default_calibration_vector(c)),
                        std::invalid_argument);
        CHECK_THROWS_AS(map_matrix(Matrix::Ones(2, 2), c, std::nullopt, {}, Vector::Constant(2, 1.0)),
                        std::invalid_argument);
    }
    SECTION("method names") {
        for (auto m : {MappingMethod::Proposed, MappingMethod::FixedAlpha, MappingMethod::Calibration}) {
            CHECK(mapping_method_from_string(to_string(m)) == m);
        }
        CHECK_THROWS_AS(mapping_method_from_string("magic"), std::invalid_argument);
    }
}

TEST_CASE("map_matrix with a device model", "[mapping][flow]") {
    std::mt19937_64 rng(12);
    auto c = make_config(6, 6);
    const Matrix w = random_matrix(6, 6, rng);
    const auto sol = map_matrix(w, c, DeviceModel::standard(), {}, default_calibration_vector(c));
    REQUIRE(sol.s.has_value());
    CHECK(sol.s->rows() == 6);
    CHECK(sol.flagged_cells.empty());
    CHECK(sol.method == MappingMethod::Proposed);
    CHECK((sol.s->array() >= 0.0).all());
    CHECK((sol.s->array() <= 1.0).all());
}
