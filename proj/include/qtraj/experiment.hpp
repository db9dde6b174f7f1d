#pragma once

// Experiment configs (strict JSON), runners for each experiment kind, CSV and
// run-manifest output.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtraj/integrate.hpp"
#include "qtraj/model.hpp"
#include "qtraj/noise.hpp"
#include "qtraj/observe.hpp"
#include "qtraj/oracle.hpp"
#include "qtraj/presets.hpp"

namespace qtraj {

using json = nlohmann::json;

inline constexpr const char* code_version = "qtraj 0.1.0";

enum class ExperimentKind {
    simulate_linear,
    simulate_nonlinear,
    heating,
    ehrenfest,
    regularity,
    verify_identities,
    oracle_compare,
    resolvent_convergence
};

inline const std::vector<std::pair<ExperimentKind, std::string>>& experiment_kind_names() {
    static const std::vector<std::pair<ExperimentKind, std::string>> names = {
        {ExperimentKind::simulate_linear, "simulate-linear"},
        {ExperimentKind::simulate_nonlinear, "simulate-nonlinear"},
        {ExperimentKind::heating, "heating"},
        {ExperimentKind::ehrenfest, "ehrenfest"},
        {ExperimentKind::regularity, "regularity"},
        {ExperimentKind::verify_identities, "verify-identities"},
        {ExperimentKind::oracle_compare, "oracle-compare"},
        {ExperimentKind::resolvent_convergence, "resolvent-convergence"}};
    return names;
}

inline std::string to_string(ExperimentKind k) {
    for (const auto& [kind, name] : experiment_kind_names()) {
        if (kind == k) return name;
    }
    return "?";
}

/// Invalid or inconsistent configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::invalid_argument("config field '" + field + "': " + what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

inline ExperimentKind parse_kind(const std::string& s) {
    for (const auto& [kind, name] : experiment_kind_names()) {
        if (name == s) return kind;
    }
    throw ConfigError("kind", "unknown experiment kind '" + s + "'");
}

struct InitialSpec {
    std::vector<double> center;
    double width = 1.0;
    std::vector<double> momentum;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::simulate_linear;
    std::string preset;      // empty with inline coefficients
    ParameterMap parameters;  // effective preset parameters
    json coefficients;       // inline spec, null with a preset
    int dimension = 1;
    double L = 10.0;
    int N = 256;
    Boundary boundary = Boundary::dirichlet;
    SchemeConfig scheme;
    std::size_t n_traj = 100;
    std::uint64_t seed = 0;
    double T = 1.0;
    int sample_every = 1;
    std::vector<std::string> observables;
    std::vector<int> n_values = {1, 4, 16, 64, 256};
    std::optional<InitialSpec> initial;
    std::string potential = "harmonic";  // heating only
    double V0 = 1.0;
    double kappa = 1.0;
    double tolerance = 0.05;
    double residual_constant = 0.0;  // ehrenfest band c in 3 stderr + c (dt + h^2)
    std::optional<double> alpha;     // regularity: fixed alpha instead of the estimate

    GridSpec grid() const { return GridSpec(dimension, L, N, boundary); }
    json echo() const;
};

namespace detail {

inline const std::set<std::string>& config_keys() {
    static const std::set<std::string> keys = {
        "kind", "preset", "coefficients", "dimension", "L", "N", "boundary", "dt", "scheme", "renormalize",
        "abort_boundary_mass", "solver_tolerance", "max_iterations", "n_traj", "seed", "T", "sample_every",
        "observables", "n_values", "initial", "potential", "V0", "kappa", "tolerance", "residual_constant",
        "alpha"};
    return keys;
}

inline double default_tolerance(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::resolvent_convergence: return 10.0;
        default: return 0.05;
    }
}

inline const std::vector<std::string>& observable_names() {
    static const std::vector<std::string> names = {"norm", "x", "x^2", "px^2", "y", "y^2", "py^2", "energy"};
    return names;
}

inline double get_number(const json& j, const std::string& key) {
    if (!j.is_number()) throw ConfigError(key, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(key, "must be finite");
    return v;
}

inline std::int64_t get_integer(const json& j, const std::string& key) {
    if (!j.is_number_integer()) throw ConfigError(key, "expected an integer");
    return j.get<std::int64_t>();
}

inline std::string get_string(const json& j, const std::string& key) {
    if (!j.is_string()) throw ConfigError(key, "expected a string");
    return j.get<std::string>();
}

inline bool get_bool(const json& j, const std::string& key) {
    if (!j.is_boolean()) throw ConfigError(key, "expected true or false");
    return j.get<bool>();
}

inline std::vector<double> get_vector(const json& j, const std::string& key) {
    if (!j.is_array()) throw ConfigError(key, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], key + "[" + std::to_string(i) + "]"));
    return out;
}

/// Inline coefficient object: alpha, V, A, sigma, eta, constants.
inline CoefficientSet parse_coefficients(const json& c, int dimension) {
    const std::string root = "coefficients";
    if (!c.is_object()) throw ConfigError(root, "expected an object");
    static const std::set<std::string> keys = {"alpha", "V", "A", "sigma", "eta", "constants"};
    for (const auto& [key, value] : c.items()) {
        if (!keys.count(key)) throw ConfigError(root + "." + key, "unknown field '" + key + "'");
    }
    std::map<std::string, double> constants;
    if (c.contains("constants")) {
        if (!c["constants"].is_object()) throw ConfigError(root + ".constants", "expected an object");
        for (const auto& [key, value] : c["constants"].items()) {
            constants[key] = get_number(value, root + ".constants." + key);
        }
    }
    auto field = [&](const json& j, const std::string& path) -> ScalarField {
        if (j.is_number()) return ScalarField(Expr::constant(get_number(j, path)));
        if (!j.is_string()) throw ConfigError(path, "expected an expression string or a number");
        try {
            return ScalarField(Expr::parse(j.get<std::string>(), constants));
        } catch (const std::exception& e) {
            throw ConfigError(path, e.what());
        }
    };
    CoefficientSet co;
    co.dimension = dimension;
    if (!c.contains("alpha")) throw ConfigError(root + ".alpha", "required");
    co.alpha = get_number(c["alpha"], root + ".alpha");
    co.V = c.contains("V") ? field(c["V"], root + ".V") : ScalarField::zero();
    if (c.contains("A")) {
        if (!c["A"].is_array() || static_cast<int>(c["A"].size()) != dimension) {
            throw ConfigError(root + ".A", "expected an array of " + std::to_string(dimension) + " expressions");
        }
        for (std::size_t j = 0; j < c["A"].size(); ++j) {
            co.A.push_back(field(c["A"][j], root + ".A[" + std::to_string(j) + "]"));
        }
    }
    if (c.contains("eta")) {
        if (!c["eta"].is_array()) throw ConfigError(root + ".eta", "expected an array, one entry per channel");
        for (std::size_t l = 0; l < c["eta"].size(); ++l) {
            co.eta.push_back(field(c["eta"][l], root + ".eta[" + std::to_string(l) + "]"));
        }
    }
    co.sigma.assign(co.eta.size(), {});
    if (c.contains("sigma")) {
        const json& s = c["sigma"];
        if (!s.is_array() || s.size() != co.eta.size()) {
            throw ConfigError(root + ".sigma", "expected one row per channel (" + std::to_string(co.eta.size()) + ")");
        }
        for (std::size_t l = 0; l < s.size(); ++l) {
            const std::string path = root + ".sigma[" + std::to_string(l) + "]";
            if (!s[l].is_array()) throw ConfigError(path, "expected an array");
            if (s[l].empty()) continue;
            if (static_cast<int>(s[l].size()) != dimension) {
                throw ConfigError(path, "expected " + std::to_string(dimension) + " expressions or an empty row");
            }
            for (std::size_t j = 0; j < s[l].size(); ++j) {
                co.sigma[l].push_back(field(s[l][j], path + "[" + std::to_string(j) + "]"));
            }
        }
    }
    return co;
}

inline ObservableSpec observable_spec(const std::string& name) {
    if (name == "norm") return ObservableSpec::identity();
    if (name == "x") return ObservableSpec::position(0);
    if (name == "x^2") return ObservableSpec::position_squared(0);
    if (name == "px^2") return ObservableSpec::momentum_squared(0);
    if (name == "y") return ObservableSpec::position(1);
    if (name == "y^2") return ObservableSpec::position_squared(1);
    if (name == "py^2") return ObservableSpec::momentum_squared(1);
    throw std::invalid_argument("observable '" + name + "' has no operator form");
}

}  // namespace detail

inline Scheme default_scheme(const ExperimentConfig& cfg);

/**
 * Validates a config object and applies defaults. A run manifest (an object
 * with "config" and "code_version") is accepted and its config re-used.
 * `kind` is the kind implied by the CLI subcommand, if any.
 */
inline ExperimentConfig parse_config(const json& input, std::optional<ExperimentKind> kind = {}) {
    using namespace detail;
    const json& j = (input.is_object() && input.contains("config") && input.contains("code_version"))
                        ? input["config"]
                        : input;
    if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
    ExperimentConfig cfg;

    if (j.contains("kind")) {
        cfg.kind = parse_kind(get_string(j["kind"], "kind"));
        if (kind && *kind != cfg.kind) {
            const bool simulate = (*kind == ExperimentKind::simulate_linear || *kind == ExperimentKind::simulate_nonlinear) &&
                                  (cfg.kind == ExperimentKind::simulate_linear ||
                                   cfg.kind == ExperimentKind::simulate_nonlinear);
            if (!simulate) {
                throw ConfigError("kind", "config kind '" + to_string(cfg.kind) + "' does not match the subcommand");
            }
        }
    } else if (kind) {
        cfg.kind = *kind;
    } else {
        throw ConfigError("kind", "required when no subcommand is given");
    }

    std::set<std::string> preset_keys;
    if (j.contains("preset") && j.contains("coefficients")) {
        throw ConfigError("coefficients", "give either a preset or inline coefficients, not both");
    }
    if (j.contains("preset")) {
        cfg.preset = get_string(j["preset"], "preset");
        try {
            cfg.parameters = preset_defaults(cfg.preset);
        } catch (const std::invalid_argument&) {
            throw ConfigError("preset", "unknown preset '" + cfg.preset + "'");
        }
        for (auto& [key, value] : cfg.parameters) {
            preset_keys.insert(key);
            if (j.contains(key)) value = get_number(j[key], key);
        }
    } else if (j.contains("coefficients")) {
        cfg.coefficients = j["coefficients"];
    } else {
        throw ConfigError("preset", "a preset or inline coefficients are required");
    }
    for (const auto& [key, value] : j.items()) {
        if (!config_keys().count(key) && !preset_keys.count(key)) {
            throw ConfigError(key, "unknown field '" + key + "'");
        }
    }

    if (j.contains("dimension")) cfg.dimension = static_cast<int>(get_integer(j["dimension"], "dimension"));
    if (cfg.dimension != 1 && cfg.dimension != 2) throw ConfigError("dimension", "must be 1 or 2");
    if (!cfg.preset.empty() && cfg.dimension != 1) throw ConfigError("dimension", "presets are one-dimensional");
    if (j.contains("L")) cfg.L = get_number(j["L"], "L");
    if (!(cfg.L > 0.0)) throw ConfigError("L", "must be positive");
    if (j.contains("N")) cfg.N = static_cast<int>(get_integer(j["N"], "N"));
    if (cfg.N < 4) throw ConfigError("N", "must be at least 4");
    if (j.contains("boundary")) {
        const std::string b = get_string(j["boundary"], "boundary");
        if (b == "dirichlet") {
            cfg.boundary = Boundary::dirichlet;
        } else if (b == "periodic") {
            cfg.boundary = Boundary::periodic;
        } else {
            throw ConfigError("boundary", "expected 'dirichlet' or 'periodic'");
        }
    }
    try {
        (void)cfg.grid();
    } catch (const std::exception& e) {
        throw ConfigError("N", e.what());
    }

    if (j.contains("dt")) cfg.scheme.dt = get_number(j["dt"], "dt");
    if (!(cfg.scheme.dt > 0.0)) throw ConfigError("dt", "must be positive");
    if (j.contains("scheme")) {
        try {
            cfg.scheme.scheme = parse_scheme(get_string(j["scheme"], "scheme"));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("scheme", e.what());
        }
    }
    if (j.contains("renormalize")) cfg.scheme.renormalize_nonlinear = get_bool(j["renormalize"], "renormalize");
    // trajectories and the master equation share the truncated grid, so edge mass is not an error there
    if (cfg.kind == ExperimentKind::oracle_compare) cfg.scheme.abort_boundary_mass = 1.0;
    if (j.contains("abort_boundary_mass")) {
        cfg.scheme.abort_boundary_mass = get_number(j["abort_boundary_mass"], "abort_boundary_mass");
    }
    if (!(cfg.scheme.abort_boundary_mass > 0.0)) throw ConfigError("abort_boundary_mass", "must be positive");
    if (j.contains("solver_tolerance")) {
        cfg.scheme.solver_tolerance = get_number(j["solver_tolerance"], "solver_tolerance");
    }
    if (!(cfg.scheme.solver_tolerance > 0.0)) throw ConfigError("solver_tolerance", "must be positive");
    if (j.contains("max_iterations")) {
        cfg.scheme.max_iterations = static_cast<int>(get_integer(j["max_iterations"], "max_iterations"));
    }
    if (cfg.scheme.max_iterations < 1) throw ConfigError("max_iterations", "must be >= 1");

    if (j.contains("n_traj")) {
        const auto n = get_integer(j["n_traj"], "n_traj");
        if (n < 1) throw ConfigError("n_traj", "must be >= 1");
        cfg.n_traj = static_cast<std::size_t>(n);
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0)) {
            throw ConfigError("seed", "expected a non-negative integer");
        }
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("T")) cfg.T = get_number(j["T"], "T");
    if (!(cfg.T > 0.0)) throw ConfigError("T", "must be positive");
    std::size_t steps = 0;
    try {
        steps = step_count(cfg.T, cfg.scheme.dt, 1);
    } catch (const std::exception& e) {
        throw ConfigError("dt", e.what());
    }
    if (j.contains("sample_every")) {
        cfg.sample_every = static_cast<int>(get_integer(j["sample_every"], "sample_every"));
    } else {
        cfg.sample_every = (steps >= 20 && steps % 20 == 0) ? static_cast<int>(steps / 20) : 1;
    }
    try {
        (void)step_count(cfg.T, cfg.scheme.dt, cfg.sample_every);
    } catch (const std::exception& e) {
        throw ConfigError("sample_every", e.what());
    }

    if (j.contains("observables")) {
        const json& o = j["observables"];
        if (!o.is_array()) throw ConfigError("observables", "expected an array of names");
        for (std::size_t i = 0; i < o.size(); ++i) {
            const std::string path = "observables[" + std::to_string(i) + "]";
            const std::string name = get_string(o[i], path);
            const auto& known = observable_names();
            if (std::find(known.begin(), known.end(), name) == known.end()) {
                throw ConfigError(path, "unknown observable '" + name + "'");
            }
            if (name[0] == 'y' || name == "py^2") {
                if (cfg.dimension < 2) throw ConfigError(path, "'" + name + "' needs dimension 2");
            }
            if (name == "energy" && cfg.kind == ExperimentKind::ehrenfest) {
                throw ConfigError(path, "'energy' is not available for ehrenfest runs");
            }
            cfg.observables.push_back(name);
        }
    } else if (cfg.kind == ExperimentKind::ehrenfest) {
        cfg.observables = {"x", "x^2", "px^2"};
    } else {
        cfg.observables = {"x", "x^2", "energy"};
    }

    if (j.contains("n_values")) {
        const json& n = j["n_values"];
        if (!n.is_array() || n.empty()) throw ConfigError("n_values", "expected a non-empty array of integers");
        cfg.n_values.clear();
        for (std::size_t i = 0; i < n.size(); ++i) {
            const auto v = get_integer(n[i], "n_values[" + std::to_string(i) + "]");
            if (v < 1) throw ConfigError("n_values[" + std::to_string(i) + "]", "must be >= 1");
            cfg.n_values.push_back(static_cast<int>(v));
        }
    }

    if (j.contains("initial")) {
        const json& in = j["initial"];
        if (!in.is_object()) throw ConfigError("initial", "expected an object");
        for (const auto& [key, value] : in.items()) {
            if (key != "center" && key != "width" && key != "momentum") {
                throw ConfigError("initial." + key, "unknown field '" + key + "'");
            }
        }
        InitialSpec s;
        s.center = in.contains("center") ? get_vector(in["center"], "initial.center")
                                         : std::vector<double>(static_cast<std::size_t>(cfg.dimension), 0.0);
        s.momentum = in.contains("momentum") ? get_vector(in["momentum"], "initial.momentum")
                                             : std::vector<double>(static_cast<std::size_t>(cfg.dimension), 0.0);
        if (!in.contains("width")) throw ConfigError("initial.width", "required");
        s.width = get_number(in["width"], "initial.width");
        if (static_cast<int>(s.center.size()) != cfg.dimension) throw ConfigError("initial.center", "wrong length");
        if (static_cast<int>(s.momentum.size()) != cfg.dimension) {
            throw ConfigError("initial.momentum", "wrong length");
        }
        try {
            (void)make_gaussian(cfg.grid(), s.center, s.width, s.momentum);
        } catch (const std::exception& e) {
            throw ConfigError("initial", e.what());
        }
        cfg.initial = s;
    }

    if (j.contains("potential")) cfg.potential = get_string(j["potential"], "potential");
    if (cfg.potential != "harmonic" && cfg.potential != "gaussian-well") {
        throw ConfigError("potential", "expected 'harmonic' or 'gaussian-well'");
    }
    if (!preset_keys.count("V0") && j.contains("V0")) cfg.V0 = get_number(j["V0"], "V0");
    if (!preset_keys.count("kappa") && j.contains("kappa")) cfg.kappa = get_number(j["kappa"], "kappa");
    if (cfg.kind == ExperimentKind::heating) {
        if (cfg.preset != "paul-trap-e4") {
            throw ConfigError("preset", "heating runs use the 'paul-trap-e4' preset");
        }
        if (cfg.potential == "gaussian-well" && !(cfg.V0 > 0.0 && cfg.kappa > 0.0)) {
            throw ConfigError("V0", "V0 and kappa must be positive");
        }
    }

    cfg.tolerance = default_tolerance(cfg.kind);
    if (j.contains("tolerance")) cfg.tolerance = get_number(j["tolerance"], "tolerance");
    if (!(cfg.tolerance > 0.0)) throw ConfigError("tolerance", "must be positive");
    if (j.contains("residual_constant")) cfg.residual_constant = get_number(j["residual_constant"], "residual_constant");
    if (!(cfg.residual_constant >= 0.0)) throw ConfigError("residual_constant", "must be non-negative");
    if (j.contains("alpha")) {
        cfg.alpha = get_number(j["alpha"], "alpha");
        if (!(*cfg.alpha >= 0.0)) throw ConfigError("alpha", "must be non-negative");
    }

    if (!cfg.coefficients.is_null()) (void)parse_coefficients(cfg.coefficients, cfg.dimension);
    if (!cfg.preset.empty()) {
        try {
            (void)make_preset(cfg.preset, cfg.parameters, cfg.grid());
        } catch (const std::exception& e) {
            throw ConfigError("preset", e.what());
        }
    }
    if (cfg.kind == ExperimentKind::oracle_compare && cfg.grid().size() > max_dense_size) {
        throw ConfigError("N", "oracle-compare needs N^d <= " + std::to_string(max_dense_size));
    }
    if (!j.contains("scheme")) cfg.scheme.scheme = default_scheme(cfg);
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path, std::optional<ExperimentKind> kind = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, false);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
    }
    return parse_config(j, kind);
}

inline json ExperimentConfig::echo() const {
    json j;
    j["kind"] = to_string(kind);
    if (!preset.empty()) {
        j["preset"] = preset;
        for (const auto& [key, value] : parameters) j[key] = value;
    } else {
        j["coefficients"] = coefficients;
    }
    j["dimension"] = dimension;
    j["L"] = L;
    j["N"] = N;
    j["boundary"] = qtraj::to_string(boundary);
    j["dt"] = scheme.dt;
    j["scheme"] = qtraj::to_string(scheme.scheme);
    j["renormalize"] = scheme.renormalize_nonlinear;
    j["abort_boundary_mass"] = scheme.abort_boundary_mass;
    j["solver_tolerance"] = scheme.solver_tolerance;
    j["max_iterations"] = scheme.max_iterations;
    j["n_traj"] = n_traj;
    j["seed"] = seed;
    j["T"] = T;
    j["sample_every"] = sample_every;
    j["observables"] = observables;
    j["n_values"] = n_values;
    if (initial) j["initial"] = {{"center", initial->center}, {"width", initial->width}, {"momentum", initial->momentum}};
    if (kind == ExperimentKind::heating) {
        j["potential"] = potential;
        if (potential == "gaussian-well") {
            j["V0"] = V0;
            j["kappa"] = kappa;
        }
    }
    j["tolerance"] = tolerance;
    if (kind == ExperimentKind::ehrenfest) j["residual_constant"] = residual_constant;
    if (alpha) j["alpha"] = *alpha;
    return j;
}

// ---------------------------------------------------------------------------
// CSV

/// %.17g, the shortest format that round-trips every double.
inline std::string csv_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Quotes a field when it contains a comma, quote or line break.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != header_.size()) throw std::logic_error("csv row width differs from header");
        rows_.push_back(cells);
    }
    void row(const std::vector<double>& values) {
        std::vector<std::string> cells;
        for (double v : values) cells.push_back(csv_number(v));
        row(cells);
    }
    std::string str() const {
        std::string out;
        auto line = [&out](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += csv_field(cells[i]);
            }
            out += "\r\n";
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// Runners

struct Artifact {
    std::string name;
    std::string content;
};

struct ExperimentResult {
    VerificationReport checks;
    std::vector<Artifact> files;
    json summary = json::object();

    bool passed() const { return checks.passed(); }
};

/// Grid, coefficients and initial state described by a config.
struct ExperimentModel {
    GridSpec grid;
    CoefficientSet coefficients;
    WaveFunction initial;
};

inline ExperimentModel build_model(const ExperimentConfig& cfg) {
    const GridSpec g = cfg.grid();
    CoefficientSet co;
    double width = std::min(1.0, 0.95 * g.half_width() / 4.0);
    if (!cfg.preset.empty()) {
        Preset p = make_preset(cfg.preset, cfg.parameters, g);
        co = std::move(p.coefficients);
        width = p.initial_width;
    } else {
        co = detail::parse_coefficients(cfg.coefficients, cfg.dimension);
    }
    co.validate(g);
    WaveFunction xi = cfg.initial
                          ? make_gaussian(g, cfg.initial->center, cfg.initial->width, cfg.initial->momentum)
                          : make_gaussian(g, std::vector<double>(static_cast<std::size_t>(g.dimension()), 0.0),
                                          width, std::vector<double>(static_cast<std::size_t>(g.dimension()), 0.0));
    return {g, std::move(co), std::move(xi)};
}

/**
 * Euler-Maruyama unless the highest grid mode would grow by more than a factor
 * sqrt(2) over the run (rho^2 dt T > ln 2), then semi_implicit.
 */
inline Scheme default_scheme(const ExperimentConfig& cfg) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    const double rho = spectral_radius_estimate(ops, 0.0);
    return rho * rho * cfg.scheme.dt * cfg.T > std::log(2.0) ? Scheme::semi_implicit : Scheme::euler_maruyama;
}

namespace detail {

inline ExperimentResult run_simulate(const ExperimentConfig& cfg, int threads) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    const Stepper stepper(ops, cfg.scheme);
    const bool linear = cfg.kind == ExperimentKind::simulate_linear;

    std::vector<std::optional<PreparedObservable>> prepared;
    for (const auto& name : cfg.observables) {
        if (name == "energy") {
            prepared.emplace_back();
        } else {
            prepared.emplace_back(PreparedObservable(observable_spec(name), m.grid));
        }
    }
    Observer obs = [&](double t, const WaveFunction& X) {
        std::vector<double> v;
        for (const auto& p : prepared) {
            v.push_back(p ? p->pairing(X, X).real() : inner_product(X, ops.H.apply(t, X)).real());
        }
        v.push_back(norm_squared(X));
        return v;
    };
    RunOptions opt;
    opt.sample_every = cfg.sample_every;
    const NoiseSource noise(cfg.seed);
    const auto records = run_ensemble(m.initial, cfg.T, stepper, noise,
                                      linear ? Dynamics::linear() : Dynamics::nonlinear(), obs, cfg.n_traj,
                                      threads, opt);
    std::vector<std::string> names = cfg.observables;
    names.push_back("norm2");
    const EnsembleSummary s = summarize(records, names);

    std::vector<std::string> header = {"time"};
    for (const auto& n : names) {
        header.push_back("mean_" + n);
        header.push_back("stderr_" + n);
    }
    CsvTable csv(header);
    for (std::size_t k = 0; k < s.times.size(); ++k) {
        std::vector<double> row = {s.times[k]};
        for (std::size_t j = 0; j < names.size(); ++j) {
            row.push_back(s.mean[j][k]);
            row.push_back(s.std_error[j][k]);
        }
        csv.row(row);
    }
    ExperimentResult r;
    r.files.push_back({"simulate.csv", csv.str()});
    double boundary = 0.0;
    for (const auto& rec : records) boundary = std::max(boundary, rec.max_boundary_fraction);
    r.summary["max_boundary_fraction"] = boundary;
    return r;
}

inline ExperimentResult run_heating(const ExperimentConfig& cfg, int threads) {
    HeatingParameters p;
    p.M = cfg.parameters.at("M");
    p.omega = cfg.parameters.at("omega");
    p.eta = cfg.parameters.at("eta");
    p.potential = cfg.potential;
    p.V0 = cfg.V0;
    p.kappa = cfg.kappa;
    const GridSpec g = cfg.grid();
    const NoiseSource noise(cfg.seed);
    std::optional<WaveFunction> xi;
    if (cfg.initial) xi = make_gaussian(g, cfg.initial->center, cfg.initial->width, cfg.initial->momentum);
    const HeatingResult h =
        heating_experiment(p, g, cfg.scheme, cfg.T, cfg.sample_every, cfg.n_traj, noise, threads, xi ? &*xi : nullptr);

    CsvTable csv({"time", "mean_H", "stderr_H", "mean_norm2", "stderr_norm2", "mean_compensator",
                  "stderr_compensator"});
    for (std::size_t k = 0; k < h.times.size(); ++k) {
        csv.row(std::vector<double>{h.times[k], h.mean_H[k], h.stderr_H[k], h.mean_norm2[k], h.stderr_norm2[k],
                                    h.mean_compensator[k], h.stderr_compensator[k]});
    }
    ExperimentResult r;
    r.files.push_back({"heating.csv", csv.str()});
    const double rel = std::abs(h.fit.slope - h.reference_slope) / h.reference_slope;
    r.checks.add("heating slope relative error", rel, cfg.tolerance, rel <= cfg.tolerance);
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < h.times.size(); ++k) {
        const double excess = std::abs(h.mean_norm2[k] - 1.0) - (3.0 * h.stderr_norm2[k] + 5.0 * cfg.scheme.dt);
        worst = std::max(worst, excess);
    }
    r.checks.add("norm martingale |mean|X|^2 - 1| - (3 stderr + 5 dt)", worst, 0.0, worst <= 0.0);
    double scale = 1.0;
    for (double v : h.mean_H) scale = std::max(scale, std::abs(v));
    r.checks.add("max |Im <X,HX>| (relative)", h.max_imag_H / scale, 1e-10, h.max_imag_H / scale <= 1e-10);
    r.summary["slope"] = h.fit.slope;
    r.summary["slope_fit_stderr"] = h.fit.slope_stderr;
    r.summary["slope_mc_stderr"] = h.slope_mc_stderr;
    r.summary["reference_slope"] = h.reference_slope;
    r.summary["relative_error"] = rel;
    return r;
}

inline ExperimentResult run_ehrenfest(const ExperimentConfig& cfg, int threads) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    const Stepper stepper(ops, cfg.scheme);
    std::vector<Observer> parts;
    for (const auto& name : cfg.observables) parts.push_back(ehrenfest_observer(observable_spec(name), ops));
    Observer obs = [&parts](double t, const WaveFunction& X) {
        std::vector<double> v;
        for (const auto& p : parts) {
            const auto w = p(t, X);
            v.insert(v.end(), w.begin(), w.end());
        }
        return v;
    };
    RunOptions opt;
    opt.sample_every = cfg.sample_every;
    const auto records =
        run_ensemble(m.initial, cfg.T, stepper, NoiseSource(cfg.seed), Dynamics::linear(), obs, cfg.n_traj, threads,
                     opt);
    const double h = m.grid.spacing();
    const double floor = cfg.residual_constant * (cfg.scheme.dt + h * h);

    std::vector<EhrenfestSeries> series;
    for (std::size_t j = 0; j < cfg.observables.size(); ++j) series.push_back(ehrenfest_residual(records, 2 * j));
    std::vector<std::string> header = {"time"};
    for (const auto& n : cfg.observables) {
        for (const char* p : {"mean_", "residual_", "stderr_"}) header.push_back(p + n);
    }
    CsvTable csv(header);
    const auto& times = series.front().times;
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::vector<double> row = {times[k]};
        for (const auto& s : series) {
            row.push_back(s.mean_value[k]);
            row.push_back(s.residual[k]);
            row.push_back(s.std_error[k]);
        }
        csv.row(row);
    }
    ExperimentResult r;
    r.files.push_back({"ehrenfest.csv", csv.str()});
    for (std::size_t j = 0; j < series.size(); ++j) {
        double worst = -std::numeric_limits<double>::infinity();
        double max_res = 0.0;
        for (std::size_t k = 0; k < times.size(); ++k) {
            const double res = std::abs(series[j].residual[k]);
            worst = std::max(worst, res - (3.0 * series[j].std_error[k] + floor));
            max_res = std::max(max_res, res);
        }
        r.checks.add("ehrenfest " + cfg.observables[j] + " |residual| - (3 stderr + c(dt + h^2))", worst, 0.0,
                     worst <= 0.0);
        r.summary["max_residual_" + cfg.observables[j]] = max_res;
    }
    r.summary["band_floor"] = floor;
    return r;
}

/// alpha from estimate_alpha over the initial state and the default test functions, maximised over sample times.
inline double regularity_alpha(const OperatorSet& ops, const WaveFunction& xi, double T, double dt,
                               int sample_every) {
    std::vector<WaveFunction> samples = {xi};
    for (const auto& s : default_test_functions(ops.grid())) samples.push_back(s.sample_on(ops.grid()));
    if (!ops.sampler->time_dependent()) return estimate_alpha(ops, 0.0, samples);
    const std::size_t steps = step_count(T, dt, sample_every);
    double a = 0.0;
    for (std::size_t k = 0; k <= steps; k += static_cast<std::size_t>(sample_every)) {
        a = std::max(a, estimate_alpha(ops, static_cast<double>(k) * dt, samples));
    }
    return a;
}

inline ExperimentResult run_regularity(const ExperimentConfig& cfg, int threads) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    const Stepper stepper(ops, cfg.scheme);
    const double alpha =
        cfg.alpha ? *cfg.alpha : regularity_alpha(ops, m.initial, cfg.T, cfg.scheme.dt, cfg.sample_every);
    RunOptions opt;
    opt.sample_every = cfg.sample_every;
    const auto records = run_ensemble(m.initial, cfg.T, stepper, NoiseSource(cfg.seed), Dynamics::linear(),
                                      regularity_observer(ops), cfg.n_traj, threads, opt);
    const RegularityReport rep = regularity_monitor(records, alpha);
    CsvTable csv({"time", "mean_C", "stderr_C", "bound"});
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
        csv.row(std::vector<double>{rep.times[k], rep.mean_C[k], rep.stderr_C[k], rep.bound[k]});
    }
    ExperimentResult r;
    r.files.push_back({"regularity.csv", csv.str()});
    r.checks.add("regularity bound violations", static_cast<double>(rep.violations.size()), 0.0,
                 rep.violations.empty());
    r.summary["alpha"] = alpha;
    return r;
}

/// Identity residuals are only meaningful once h resolves the test functions; coarser grids are refined.
inline GridSpec identity_grid(const GridSpec& g) {
    const int min_points = 256;
    if (g.points_per_axis() >= min_points) return g;
    return GridSpec(g.dimension(), g.half_width(), min_points, g.boundary());
}

inline ExperimentResult run_verify(const ExperimentConfig& cfg) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    ExperimentResult r;
    const GridSpec ig = identity_grid(m.grid);
    const VerificationReport ids = identity_suite(m.coefficients, ig, {}, 0.0, cfg.tolerance);
    const VerificationReport st = structural_checks(ops);
    for (const auto& rep : {ids, st}) {
        for (const auto& l : rep.lines) r.checks.lines.push_back(l);
    }
    CsvTable csv({"check", "value", "tolerance", "passed", "note"});
    for (const auto& l : r.checks.lines) {
        csv.row(std::vector<std::string>{l.name, csv_number(l.value), csv_number(l.tolerance),
                                         l.passed ? "true" : "false", l.note});
    }
    r.files.push_back({"verify.csv", csv.str()});
    r.files.push_back({"verify.txt", r.checks.str()});
    r.summary["identity_grid_N"] = ig.points_per_axis();
    return r;
}

inline ExperimentResult run_oracle_compare(const ExperimentConfig& cfg, int threads) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    const Stepper stepper(ops, cfg.scheme);
    RunOptions opt;
    opt.sample_every = cfg.sample_every;
    opt.keep_snapshots = true;
    const auto records = run_ensemble(m.initial, cfg.T, stepper, NoiseSource(cfg.seed), Dynamics::linear(),
                                      Observer{}, cfg.n_traj, threads, opt);
    const auto& times = records.front().times;
    const double master_dt = cfg.scheme.dt / 10.0;
    const double span = cfg.scheme.dt * cfg.sample_every;

    CsvTable csv({"time", "trace_distance", "master_trace", "estimate_min_eigenvalue"});
    DensityMatrix rho = pure_density(m.initial);
    double drift = 0.0;
    double final_distance = 0.0;
    std::vector<WaveFunction> states;
    states.reserve(records.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (k > 0) {
            const MasterSolution sol = solve_master_detailed(rho, span, ops, master_dt, times[k - 1]);
            rho = sol.rho;
            drift = std::max(drift, std::abs(rho.trace() - cplx(1.0)));
        }
        states.clear();
        for (const auto& rec : records) states.push_back(rec.snapshots[k]);
        const DensityMatrix est = density_estimate(states);
        final_distance = trace_distance(est, rho);
        csv.row(std::vector<double>{times[k], final_distance, rho.trace().real(), min_eigenvalue(est)});
    }
    ExperimentResult r;
    r.files.push_back({"oracle.csv", csv.str()});
    r.checks.add("trace distance at T", final_distance, cfg.tolerance, final_distance <= cfg.tolerance);
    r.checks.add("master equation trace drift", drift, 1e-8, drift <= 1e-8);
    r.summary["trace_distance"] = final_distance;
    r.summary["master_dt"] = master_dt;
    return r;
}

/**
 * One fixed Brownian path (trajectory 0). X_T at dt and the regularised X^n_T
 * use the same explicit stepping; the discretisation noise is the change of
 * <u, X_T> when dt is halved on the same path.
 */
inline ExperimentResult run_resolvent(const ExperimentConfig& cfg) {
    const ExperimentModel m = build_model(cfg);
    const OperatorSet ops = build_operators(m.grid, m.coefficients);
    SchemeConfig em = cfg.scheme;
    em.scheme = Scheme::euler_maruyama;
    SchemeConfig half = em;
    half.dt = em.dt / 2.0;
    const Stepper coarse(ops, em), fine(ops, half);
    const NoiseSource path(cfg.seed, 2), fine_path(cfg.seed, 1);
    RunOptions opt;
    opt.sample_every = 1;
    opt.keep_final_state = true;
    const WaveFunction& u = m.initial;
    auto probe = [&](const TrajectoryRecord& rec) { return inner_product(u, *rec.final_state); };

    const cplx ref = probe(run_trajectory(m.initial, cfg.T, coarse, path, 0, Dynamics::linear(), {}, opt));
    const cplx ref_half = probe(run_trajectory(m.initial, cfg.T, fine, fine_path, 0, Dynamics::linear(), {}, opt));
    const double noise = std::abs(ref - ref_half);

    CsvTable csv({"n", "overlap_re", "overlap_im", "difference", "discretization_noise"});
    std::vector<double> diffs;
    for (int n : cfg.n_values) {
        const cplx v = probe(run_trajectory(m.initial, cfg.T, coarse, path, 0, Dynamics::regularized(n), {}, opt));
        diffs.push_back(std::abs(v - ref));
        csv.row(std::vector<double>{static_cast<double>(n), v.real(), v.imag(), diffs.back(), noise});
    }
    int rises = 0;
    for (std::size_t k = 1; k < diffs.size(); ++k) {
        if (diffs[k] > diffs[k - 1]) ++rises;
    }
    ExperimentResult r;
    r.files.push_back({"resolvent.csv", csv.str()});
    const double plateau = diffs.back() / std::max(noise, std::numeric_limits<double>::min());
    r.checks.add("final difference / discretization noise", plateau, cfg.tolerance, plateau <= cfg.tolerance);
    r.checks.add("non-monotone steps", rises, 1.0, rises <= 1);
    r.summary["reference_overlap"] = {ref.real(), ref.imag()};
    r.summary["discretization_noise"] = noise;
    return r;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads = default_thread_count()) {
    switch (cfg.kind) {
        case ExperimentKind::simulate_linear:
        case ExperimentKind::simulate_nonlinear: return detail::run_simulate(cfg, threads);
        case ExperimentKind::heating: return detail::run_heating(cfg, threads);
        case ExperimentKind::ehrenfest: return detail::run_ehrenfest(cfg, threads);
        case ExperimentKind::regularity: return detail::run_regularity(cfg, threads);
        case ExperimentKind::verify_identities: return detail::run_verify(cfg);
        case ExperimentKind::oracle_compare: return detail::run_oracle_compare(cfg, threads);
        case ExperimentKind::resolvent_convergence: return detail::run_resolvent(cfg);
    }
    throw std::logic_error("unhandled experiment kind");
}

inline json make_manifest(const ExperimentConfig& cfg, const ExperimentResult& r, double wall_seconds, int threads) {
    json j;
    j["code_version"] = code_version;
    j["kind"] = to_string(cfg.kind);
    j["seed"] = cfg.seed;
    j["threads"] = threads;
    j["wall_time_seconds"] = wall_seconds;
    j["config"] = cfg.echo();
    j["outputs"] = json::array();
    for (const auto& f : r.files) j["outputs"].push_back(f.name);
    j["checks"] = json::array();
    for (const auto& l : r.checks.lines) {
        j["checks"].push_back(
            {{"name", l.name}, {"value", l.value}, {"tolerance", l.tolerance}, {"passed", l.passed}, {"note", l.note}});
    }
    j["passed"] = r.passed();
    j["summary"] = r.summary;
    return j;
}

/// Writes every artifact and manifest.json into `dir` (created if missing).
inline void write_outputs(const std::filesystem::path& dir, const ExperimentResult& r, const json& manifest) {
    std::filesystem::create_directories(dir);
    auto write = [&dir](const std::string& name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        out << content;
    };
    for (const auto& f : r.files) write(f.name, f.content);
    write("manifest.json", manifest.dump(2) + "\n");
}

}  // namespace qtraj
