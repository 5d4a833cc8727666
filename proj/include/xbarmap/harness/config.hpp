#pragma once

// Experiment configuration: JSON with an explicit schema_version. Every
// section is optional; unknown keys are rejected so typos do not silently
// fall back to defaults.

#include "xbarmap/device_model.hpp"
#include "xbarmap/harness/matrix_io.hpp"
#include "xbarmap/mapping.hpp"

#include <cstdint>
#include <optional>
#include <set>

namespace xbar::io {

inline constexpr int kSchemaVersion = 1;

struct SweepSpec {
    int points = 8;
    double lo = 0.1; // multiples of the default alpha
    double hi = 4.0;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 1;
    CrossbarConfig crossbar = [] {
        CrossbarConfig c;
        c.rows = 16;
        c.cols = 16;
        return c;
    }();
    std::optional<DeviceModel> device = DeviceModel::standard();
    AlphaSearchParams search;
    int redistribution_rounds = MappingOptions{}.redistribution_rounds;
    double redistribution_tolerance = MappingOptions{}.redistribution_tolerance;
    std::optional<double> calibration_voltage; // default v_max / 2
    double rtn_delta = 0.0;
    std::optional<int> dac_bits; // empty = ideal converter
    std::optional<int> adc_bits;
    int input_count = 100;
    int instances = 50;
    SweepSpec sweep;
    std::string report_path;
    std::string series_path;

    [[nodiscard]] Vector calibration_vector() const {
        return Vector::Constant(crossbar.cols, calibration_voltage.value_or(0.5 * crossbar.v_max));
    }
    [[nodiscard]] MappingOptions mapping_options() const {
        MappingOptions o;
        o.redistribution_rounds = redistribution_rounds;
        o.redistribution_tolerance = redistribution_tolerance;
        return o;
    }
    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

using nlohmann::json;

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_[key];
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError(field(key) + ": wrong type (" + v.dump() + ")");
        }
    }

    // null or "inf" selects an ideal converter
    void bits(const char* key, std::optional<int>& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_[key];
        if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) {
            out.reset();
        } else if (v.is_number_integer() && v.get<int>() >= 1 && v.get<int>() <= 52) {
            out = v.get<int>();
        } else {
            throw ConfigError(field(key) + ": expected an integer in [1, 52], null or \"inf\"");
        }
    }

    [[nodiscard]] std::optional<Reader> section(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return Reader(j_[key], field(key));
    }

    [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }
    [[nodiscard]] std::string field(const char* key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(path_ + ": unknown field '" + k + "'");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline nlohmann::json bits_json(const std::optional<int>& b) {
    return b ? nlohmann::json(*b) : nlohmann::json("inf");
}

} // namespace detail

inline void ExperimentConfig::validate() const {
    if (schema_version != kSchemaVersion) {
        throw ConfigError("unsupported schema_version " + std::to_string(schema_version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
    }
    try {
        crossbar.validate();
        search.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (redistribution_rounds < 0) throw ConfigError("mapping.redistribution_rounds must be >= 0");
    if (!(redistribution_tolerance >= 0.0)) throw ConfigError("mapping.redistribution_tolerance must be >= 0");
    if (calibration_voltage && !(*calibration_voltage > 0.0 && *calibration_voltage <= crossbar.v_max)) {
        throw ConfigError("mapping.calibration_voltage must be in (0, v_max]");
    }
    if (!(rtn_delta >= 0.0 && rtn_delta <= 0.2)) throw ConfigError("noise.rtn_delta must be in [0, 0.2]");
    if (input_count < 1) throw ConfigError("inputs.count must be positive");
    if (instances < 1) throw ConfigError("compare.instances must be positive");
    if (sweep.points < 1 || !(sweep.lo > 0.0) || !(sweep.hi >= sweep.lo)) {
        throw ConfigError("sweep needs points >= 1 and 0 < lo <= hi");
    }
    if (sweep.points > 1 && !(sweep.hi > sweep.lo)) throw ConfigError("sweep.hi must exceed sweep.lo");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    detail::Reader root(j, "config");
    if (!root.has("schema_version")) throw ConfigError("config: missing schema_version");
    root.get("schema_version", c.schema_version);
    root.get("seed", c.seed);
    if (auto s = root.section("crossbar")) {
        s->get("rows", c.crossbar.rows);
        s->get("cols", c.crossbar.cols);
        s->get("r_wire", c.crossbar.r_wire);
        s->get("r_input", c.crossbar.r_input);
        s->get("r_output", c.crossbar.r_output);
        s->get("g_min", c.crossbar.g_min);
        s->get("g_max", c.crossbar.g_max);
        s->get("bits", c.crossbar.bits);
        s->get("v_max", c.crossbar.v_max);
        s->finish();
    }
    if (auto s = root.section("device")) {
        std::string kind = "standard";
        s->get("kind", kind);
        if (kind == "none") {
            c.device.reset();
        } else if (kind == "standard" || kind == "linear") {
            DeviceModel d = kind == "standard" ? DeviceModel::standard() : DeviceModel::linear();
            if (auto m = s->section("memristor")) {
                std::string law = d.memristor.kind == MemristorLaw::Kind::Sinh ? "sinh" : "linear";
                m->get("law", law);
                if (law != "sinh" && law != "linear") throw ConfigError(m->field("law") + ": expected sinh or linear");
                d.memristor.kind = law == "sinh" ? MemristorLaw::Kind::Sinh : MemristorLaw::Kind::Linear;
                m->get("g_dev_min", d.memristor.g_dev_min);
                m->get("g_dev_max", d.memristor.g_dev_max);
                m->get("nonlinearity", d.memristor.nonlinearity);
                m->finish();
            }
            if (auto t = s->section("transistor")) {
                std::string tk = d.transistor.ideal() ? "ideal" : "square-law";
                t->get("kind", tk);
                if (tk != "ideal" && tk != "square-law") {
                    throw ConfigError(t->field("kind") + ": expected ideal or square-law");
                }
                d.transistor.kind = tk == "ideal" ? TransistorLaw::Kind::Ideal : TransistorLaw::Kind::SquareLaw;
                t->get("threshold", d.transistor.threshold);
                t->get("k", d.transistor.k);
                t->get("v_gate", d.transistor.v_gate);
                t->finish();
            }
            if (!(d.memristor.g_dev_min > 0.0 && d.memristor.g_dev_max > d.memristor.g_dev_min &&
                  d.memristor.nonlinearity > 0.0)) {
                throw ConfigError("device.memristor: need 0 < g_dev_min < g_dev_max and nonlinearity > 0");
            }
            if (!d.transistor.ideal() && !(d.transistor.k > 0.0 && d.transistor.v_gate > d.transistor.threshold)) {
                throw ConfigError("device.transistor: need k > 0 and v_gate > threshold");
            }
            c.device = d;
        } else {
            throw ConfigError(s->field("kind") + ": expected standard, linear or none");
        }
        s->finish();
    }
    if (auto s = root.section("search")) {
        s->get("alpha_0", c.search.alpha_0);
        s->get("beta", c.search.beta);
        s->get("patience", c.search.patience);
        s->get("max_iters", c.search.max_iters);
        s->finish();
    }
    if (auto s = root.section("mapping")) {
        s->get("redistribution_rounds", c.redistribution_rounds);
        s->get("redistribution_tolerance", c.redistribution_tolerance);
        double v = 0.0;
        if (s->has("calibration_voltage")) {
            s->get("calibration_voltage", v);
            c.calibration_voltage = v;
        }
        s->finish();
    }
    if (auto s = root.section("noise")) {
        s->get("rtn_delta", c.rtn_delta);
        s->finish();
    }
    if (auto s = root.section("converters")) {
        s->bits("dac_bits", c.dac_bits);
        s->bits("adc_bits", c.adc_bits);
        s->finish();
    }
    if (auto s = root.section("inputs")) {
        s->get("count", c.input_count);
        s->finish();
    }
    if (auto s = root.section("compare")) {
        s->get("instances", c.instances);
        s->finish();
    }
    if (auto s = root.section("sweep")) {
        s->get("points", c.sweep.points);
        s->get("lo", c.sweep.lo);
        s->get("hi", c.sweep.hi);
        s->finish();
    }
    if (auto s = root.section("output")) {
        s->get("report", c.report_path);
        s->get("series", c.series_path);
        s->finish();
    }
    root.finish();
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(read_json_file(path));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    json device;
    if (!c.device) {
        device = {{"kind", "none"}};
    } else {
        const DeviceModel& d = *c.device;
        device = {
            {"kind", "standard"},
            {"memristor",
             {{"law", d.memristor.kind == MemristorLaw::Kind::Sinh ? "sinh" : "linear"},
              {"g_dev_min", d.memristor.g_dev_min},
              {"g_dev_max", d.memristor.g_dev_max},
              {"nonlinearity", d.memristor.nonlinearity}}},
            {"transistor",
             {{"kind", d.transistor.ideal() ? "ideal" : "square-law"},
              {"threshold", d.transistor.threshold},
              {"k", d.transistor.k},
              {"v_gate", d.transistor.v_gate}}},
        };
    }
    json mapping = {{"redistribution_rounds", c.redistribution_rounds},
                    {"redistribution_tolerance", c.redistribution_tolerance}};
    if (c.calibration_voltage) mapping["calibration_voltage"] = *c.calibration_voltage;
    json out = {
        {"schema_version", c.schema_version},
        {"seed", c.seed},
        {"crossbar",
         {{"rows", c.crossbar.rows},
          {"cols", c.crossbar.cols},
          {"r_wire", c.crossbar.r_wire},
          {"r_input", c.crossbar.r_input},
          {"r_output", c.crossbar.r_output},
          {"g_min", c.crossbar.g_min},
          {"g_max", c.crossbar.g_max},
          {"bits", c.crossbar.bits},
          {"v_max", c.crossbar.v_max}}},
        {"device", device},
        {"search",
         {{"alpha_0", c.search.alpha_0},
          {"beta", c.search.beta},
          {"patience", c.search.patience},
          {"max_iters", c.search.max_iters}}},
        {"mapping", mapping},
        {"noise", {{"rtn_delta", c.rtn_delta}}},
        {"converters", {{"dac_bits", detail::bits_json(c.dac_bits)}, {"adc_bits", detail::bits_json(c.adc_bits)}}},
        {"inputs", {{"count", c.input_count}}},
        {"compare", {{"instances", c.instances}}},
        {"sweep", {{"points", c.sweep.points}, {"lo", c.sweep.lo}, {"hi", c.sweep.hi}}},
    };
    return out;
}

/// FNV-1a over the canonical JSON dump (output paths excluded).
inline std::string config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : config_to_json(c).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

} // namespace xbar::io
