#include "cli.hpp"

#include "xbarmap/harness/dnn.hpp"
#include "xbarmap/harness/report.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace xbar::cli {
namespace {

using nlohmann::json;

struct Globals {
    std::string config_path;
    std::string out_path;
    std::string series_path;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool timing = false;
};

struct Output {
    json report;
    std::string series; // TSV, empty when the command has none
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

io::ExperimentConfig resolve_config(const Globals& g) {
    io::ExperimentConfig c = g.config_path.empty() ? io::ExperimentConfig{} : io::load_config(g.config_path);
    if (g.seed) c.seed = *g.seed;
    return c;
}

json report_header(const std::string& command, const io::ExperimentConfig& c) {
    return {{"command", command}, {"config", io::config_to_json(c)}, {"config_hash", io::config_hash(c)}};
}

void check_shape(const Matrix& w, const CrossbarConfig& c, const std::string& what) {
    if (w.rows() != c.rows || w.cols() != c.cols) {
        std::ostringstream os;
        os << what << " is " << w.rows() << "x" << w.cols() << " but the crossbar is " << c.rows << "x" << c.cols;
        throw std::invalid_argument(os.str());
    }
}

LayerMappingOptions mapping_options(const io::ExperimentConfig& c, MappingMethod method, unsigned threads) {
    LayerMappingOptions o;
    o.method = method;
    o.model = c.device;
    o.search = c.search;
    o.mapping = c.mapping_options();
    o.v_cal = c.calibration_vector();
    o.threads = threads;
    return o;
}

std::string tsv_number(double v) { return io::detail::format_number(v); }

Output cmd_map(const Globals& g, const std::string& matrix_path, const std::string& method) {
    const io::ExperimentConfig c = resolve_config(g);
    const Matrix w = io::load_matrix(matrix_path);
    check_shape(w, c.crossbar, matrix_path);
    const MappingSolution sol = map_plane(w, c.crossbar, mapping_options(c, mapping_method_from_string(method), 1));
    json r = report_header("map", c);
    r["target"] = io::matrix_to_json(w);
    r["solution"] = io::solution_to_json(sol, c.crossbar);
    return {r, {}};
}

Output cmd_simulate(const std::string& solution_path, const std::string& inputs_path) {
    const json file = io::read_json_file(solution_path);
    if (!file.contains("config") || !file.contains("solution")) {
        throw io::FormatError(solution_path, 0, 0, "not a solution file (run `xbarmap map` to create one)");
    }
    const io::ExperimentConfig c = io::config_from_json(file["config"]);
    const MappingSolution sol = io::solution_from_json(file["solution"], solution_path);
    check_shape(sol.g.values(), c.crossbar, solution_path);
    const Matrix inputs = io::load_matrix(inputs_path);
    if (inputs.cols() != c.crossbar.cols) {
        throw std::invalid_argument(inputs_path + ": each row must hold " + std::to_string(c.crossbar.cols) +
                                    " input voltages");
    }
    const MappedTile tile(c.crossbar, sol, c.device);
    Matrix y(inputs.rows(), c.crossbar.rows);
    std::vector<Vector> vs;
    for (Eigen::Index k = 0; k < inputs.rows(); ++k) {
        vs.push_back(inputs.row(k).transpose());
        y.row(k) = tile.outputs(vs.back()).transpose();
    }
    json r = report_header("simulate", c);
    r["model"] = sol.s && c.device ? "nonlinear" : "linear";
    r["outputs"] = io::matrix_to_json(y);
    if (file.contains("target")) {
        const Matrix w = io::matrix_from_json(file["target"], solution_path + " target");
        r["max_output_error"] = max_output_error(w, sol, c.crossbar, c.device, vs);
    }
    std::ostringstream tsv;
    tsv << "input";
    for (int i = 0; i < c.crossbar.rows; ++i) tsv << "\ty" << i;
    tsv << '\n';
    for (Eigen::Index k = 0; k < y.rows(); ++k) {
        tsv << k;
        for (Eigen::Index i = 0; i < y.cols(); ++i) tsv << '\t' << tsv_number(y(k, i));
        tsv << '\n';
    }
    return {r, tsv.str()};
}

Output cmd_range(const Globals& g, std::optional<double> alpha, const std::string& background) {
    const io::ExperimentConfig c = resolve_config(g);
    const double a = alpha.value_or(0.5 * c.crossbar.g_max);
    Background bg;
    if (background == "max") {
        bg = Background::all_max();
    } else if (background == "min") {
        bg = Background::all_min();
    } else {
        throw UsageError("--background must be max or min");
    }
    const ValueRangeMap m = value_range_map(c.crossbar, a, bg);
    json r = report_header("analyze range", c);
    r["alpha"] = a;
    r["background"] = background;
    r["lo"] = io::matrix_to_json(m.lo);
    r["hi"] = io::matrix_to_json(m.hi);
    r["length"] = io::matrix_to_json(m.length());
    std::ostringstream tsv;
    tsv << "row\tcol\tlo\thi\tlength\n";
    for (Eigen::Index i = 0; i < m.lo.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.lo.cols(); ++j) {
            tsv << i << '\t' << j << '\t' << tsv_number(m.lo(i, j)) << '\t' << tsv_number(m.hi(i, j)) << '\t'
                << tsv_number(m.hi(i, j) - m.lo(i, j)) << '\n';
        }
    }
    return {r, tsv.str()};
}

Output cmd_sweep(const Globals& g, const std::string& matrix_path) {
    const io::ExperimentConfig c = resolve_config(g);
    const Matrix w = io::load_matrix(matrix_path);
    check_shape(w, c.crossbar, matrix_path);
    const double a0 = c.search.alpha_0 > 0.0 ? c.search.alpha_0 : default_alpha(w, c.crossbar);
    const std::vector<double> alphas = log_space(c.sweep.lo * a0, c.sweep.hi * a0, c.sweep.points);
    std::vector<ErrorCurveSample> samples(alphas.size());
    parallel_for(alphas.size(), g.threads, [&](std::size_t k) {
        samples[k] = sweep_alpha(w, c.crossbar, std::span<const double>(&alphas[k], 1)).samples.front();
    });
    json r = report_header("analyze sweep", c);
    r["alpha_0"] = a0;
    json rows = json::array();
    std::ostringstream tsv;
    tsv << "alpha\ttotal\tvalue_range\tprecision\tutilization\tsaturated_cells\n";
    for (const auto& s : samples) {
        rows.push_back({{"alpha", s.alpha}, {"errors", io::errors_to_json(s.errors)}, {"utilization", s.utilization},
                        {"saturated_cells", s.saturated}});
        tsv << tsv_number(s.alpha) << '\t' << tsv_number(s.errors.total) << '\t' << tsv_number(s.errors.value_range)
            << '\t' << tsv_number(s.errors.precision) << '\t' << tsv_number(s.utilization) << '\t' << s.saturated
            << '\n';
    }
    r["samples"] = rows;
    return {r, tsv.str()};
}

Matrix random_target(const CrossbarConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix w(c.rows, c.cols);
    for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = u(rng);
    return w;
}

Output cmd_compare(const Globals& g, std::optional<int> instances) {
    io::ExperimentConfig c = resolve_config(g);
    if (instances) c.instances = *instances;
    c.validate();
    struct Row {
        MappingSolution proposed;
        MappingSolution calibration;
        MappingSolution fixed;
        double err_proposed = 0.0;
        double err_calibration = 0.0;
    };
    std::vector<Row> rows(static_cast<std::size_t>(c.instances));
    const Vector v_cal = c.calibration_vector();
    parallel_for(rows.size(), g.threads, [&](std::size_t k) {
        const Matrix w = random_target(c.crossbar, derive_seed(c.seed, 1, k));
        const std::vector<Vector> inputs = random_inputs(c.crossbar, c.input_count, derive_seed(c.seed, 2, k));
        Row& row = rows[k];
        row.proposed = map_matrix(w, c.crossbar, c.device, c.search, v_cal, c.mapping_options());
        row.calibration = baseline_calibration_map(w, c.crossbar, c.device, v_cal);
        const double a0 = c.search.alpha_0 > 0.0 ? c.search.alpha_0 : default_alpha(w, c.crossbar);
        row.fixed = baseline_fixed_alpha_map(w, c.crossbar, a0);
        row.err_proposed = max_output_error(w, row.proposed, c.crossbar, c.device, inputs);
        row.err_calibration = max_output_error(w, row.calibration, c.crossbar, c.device, inputs);
    });

    json r = report_header("compare", c);
    json list = json::array();
    std::vector<double> ratios;
    int wins = 0;
    int dominates = 0;
    int strictly_better = 0;
    std::ostringstream tsv;
    tsv << "instance\tproposed_max_error\tcalibration_max_error\tratio\tproposed_total\tfixed_alpha_total\n";
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Row& row = rows[k];
        const double ratio = row.err_calibration / std::max(row.err_proposed, std::numeric_limits<double>::min());
        ratios.push_back(ratio);
        wins += row.err_proposed < row.err_calibration;
        dominates += row.proposed.search_errors->total <= row.fixed.errors.total;
        strictly_better += row.proposed.errors.total < row.fixed.errors.total;
        list.push_back({
            {"instance", k},
            {"proposed",
             {{"alpha", row.proposed.alpha},
              {"errors", io::errors_to_json(row.proposed.errors)},
              {"search_errors", io::errors_to_json(*row.proposed.search_errors)},
              {"calibration_residual", row.proposed.calibration_residual},
              {"utilization", utilization(row.proposed.g, c.crossbar)},
              {"flagged_cells", row.proposed.flagged_cells.size()},
              {"max_output_error", row.err_proposed}}},
            {"baseline_calibration",
             {{"alpha", row.calibration.alpha},
              {"errors", io::errors_to_json(row.calibration.errors)},
              {"calibration_residual", row.calibration.calibration_residual},
              {"utilization", utilization(row.calibration.g, c.crossbar)},
              {"flagged_cells", row.calibration.flagged_cells.size()},
              {"max_output_error", row.err_calibration}}},
            {"baseline_fixed_alpha", {{"alpha", row.fixed.alpha}, {"errors", io::errors_to_json(row.fixed.errors)}}},
            {"error_ratio", ratio},
        });
        tsv << k << '\t' << tsv_number(row.err_proposed) << '\t' << tsv_number(row.err_calibration) << '\t'
            << tsv_number(ratio) << '\t' << tsv_number(row.proposed.errors.total) << '\t'
            << tsv_number(row.fixed.errors.total) << '\n';
    }
    const double n = static_cast<double>(rows.size());
    r["instances"] = list;
    r["summary"] = {
        {"instances", rows.size()},
        {"proposed_wins_fraction", wins / n},
        {"median_error_ratio", io::median(ratios)},
        {"search_dominates_fixed_alpha_fraction", dominates / n},
        {"proposed_total_below_fixed_alpha_fraction", strictly_better / n},
    };
    return {r, tsv.str()};
}

Output cmd_dnn(const Globals& g, const std::string& network_path, const std::string& dataset_path,
               const std::string& method) {
    const io::ExperimentConfig c = resolve_config(g);
    const Network net = load_network(network_path);
    const Dataset data = load_dataset(dataset_path);
    if (data.x.cols() != net.layers.front().w.cols()) {
        throw std::invalid_argument(dataset_path + ": sample length does not match the network input");
    }
    if ((data.x.array() < 0.0).any()) throw std::invalid_argument(dataset_path + ": inputs must be non-negative");
    const LayerMappingOptions opts = mapping_options(c, mapping_method_from_string(method), g.threads);
    const MappedNetwork mapped = map_network(net, c.crossbar, opts);
    const Converters conv{c.dac_bits, c.adc_bits};

    json r = report_header("dnn-eval", c);
    r["method"] = method;
    r["samples"] = data.x.rows();
    r["accuracy_float"] = accuracy(data, [&](const Vector& x) { return net.forward(x); }, g.threads);
    r["accuracy_mapped"] = accuracy(data, [&](const Vector& x) { return mapped.forward(x, conv); }, g.threads);
    if (c.rtn_delta > 0.0) {
        const MappedNetwork noisy = perturb_network(mapped, c.rtn_delta, derive_seed(c.seed, 3), c.device);
        r["accuracy_noisy"] = accuracy(data, [&](const Vector& x) { return noisy.forward(x, conv); }, g.threads);
    }
    json layers = json::array();
    for (const TiledLayer& l : mapped.layers) {
        json alphas = json::array();
        std::size_t flagged = 0;
        for (const auto& p : l.planes) {
            for (const auto& q : p) {
                alphas.push_back(q.solution ? json(q.solution->alpha) : json(nullptr));
                if (q.solution) flagged += q.solution->flagged_cells.size();
            }
        }
        layers.push_back({{"out", l.out_dim}, {"in", l.in_dim}, {"tiles", l.blocks.size()},
                          {"plane_alphas", alphas}, {"flagged_cells", flagged}});
    }
    r["layers"] = layers;
    return {r, {}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

json diagnostic(const std::string& kind, const std::string& message) {
    return {{"error", {{"kind", kind}, {"message", message}}}};
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Map matrices onto memristor crossbars with parasitic-aware conductance optimization", "xbarmap"};
    app.fallthrough();
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "experiment configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed, overrides the configuration");
    app.add_option("--out", g.out_path, "report path (default: stdout)");
    app.add_option("--series", g.series_path, "plot-ready TSV path");
    app.add_option("--threads", g.threads, "worker threads")->check(CLI::Range(1u, 1024u));
    app.add_flag("--timing", g.timing, "print wall time to stderr");

    std::function<Output()> run;

    auto* map = app.add_subcommand("map", "map a matrix and write the solution");
    std::string map_matrix_path;
    std::string method = "proposed";
    map->add_option("matrix", map_matrix_path, "target matrix (CSV or JSON)")->required();
    map->add_option("--method", method, "proposed, baseline-fixed-alpha or baseline-calibration");
    map->callback([&] { run = [&] { return cmd_map(g, map_matrix_path, method); }; });

    auto* sim = app.add_subcommand("simulate", "evaluate a mapped solution on input vectors");
    std::string sol_path;
    std::string inputs_path;
    sim->add_option("solution", sol_path, "solution file from `map`")->required();
    sim->add_option("inputs", inputs_path, "input voltages, one vector per row")->required();
    sim->callback([&] { run = [&] { return cmd_simulate(sol_path, inputs_path); }; });

    auto* analyze = app.add_subcommand("analyze", "representable-value and alpha analyses");
    analyze->require_subcommand(1);
    auto* range = analyze->add_subcommand("range", "per-cell realizable value range");
    std::optional<double> alpha;
    std::string background = "max";
    range->add_option("--alpha", alpha, "scaling factor (default 0.5 g_max)");
    range->add_option("--background", background, "max or min conductance for the other cells");
    range->callback([&] { run = [&] { return cmd_range(g, alpha, background); }; });
    auto* sweep = analyze->add_subcommand("sweep", "error decomposition over log-spaced alphas");
    std::string sweep_path;
    sweep->add_option("matrix", sweep_path, "target matrix (CSV or JSON)")->required();
    sweep->callback([&] { run = [&] { return cmd_sweep(g, sweep_path); }; });

    auto* compare = app.add_subcommand("compare", "proposed mapping against the baselines on random instances");
    std::optional<int> instances;
    compare->add_option("--instances", instances, "number of random matrices");
    compare->callback([&] { run = [&] { return cmd_compare(g, instances); }; });

    auto* dnn = app.add_subcommand("dnn-eval", "classification accuracy of a mapped network");
    std::string net_path;
    std::string data_path;
    std::string dnn_method = "proposed";
    dnn->add_option("network", net_path, "network JSON")->required();
    dnn->add_option("dataset", data_path, "dataset CSV, label in the last column")->required();
    dnn->add_option("--method", dnn_method, "mapping method");
    dnn->callback([&] { run = [&] { return cmd_dnn(g, net_path, data_path, dnn_method); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << diagnostic("usage", e.what()).dump() << '\n';
        return 2;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        Output o = run();
        const io::ExperimentConfig c = g.config_path.empty() ? io::ExperimentConfig{} : io::load_config(g.config_path);
        const std::string out_path = !g.out_path.empty() ? g.out_path : c.report_path;
        const std::string series_path = !g.series_path.empty() ? g.series_path : c.series_path;
        const std::string text = o.report.dump(2) + "\n";
        if (out_path.empty()) {
            out << text;
        } else {
            write_text(out_path, text);
        }
        if (!series_path.empty()) {
            if (o.series.empty()) throw UsageError("this command has no TSV series");
            write_text(series_path, o.series);
        }
    } catch (const UsageError& e) {
        err << diagnostic("usage", e.what()).dump() << '\n';
        return 2;
    } catch (const io::ConfigError& e) {
        err << diagnostic("config", e.what()).dump() << '\n';
        return 1;
    } catch (const io::FormatError& e) {
        err << diagnostic("format", e.what()).dump() << '\n';
        return 1;
    } catch (const ConvergenceError& e) {
        json d = diagnostic("convergence", e.what());
        d["error"]["worst_unknown"] = e.worst_node();
        d["error"]["residual"] = e.residual();
        err << d.dump() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        err << diagnostic("invalid_argument", e.what()).dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << diagnostic("runtime", e.what()).dump() << '\n';
        return 1;
    }
    if (g.timing) {
        err << "wall time " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
            << " s\n";
    }
    return 0;
}

} // namespace xbar::cli
