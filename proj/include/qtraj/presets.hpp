#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtraj/expr.hpp"
#include "qtraj/grid.hpp"
#include "qtraj/model.hpp"

// Named one-dimensional models with m = 1:
//   qbm-e1                  particle in a thermal oscillator bath: A = c x, sigma = b, eta = a x
//   position-measurement-e2 continuous position measurement: sigma = 0, eta = eta x
//   laser-e3                soft-core atom in a pulsed laser field, eta = -i eta x
//   paul-trap-e4            fluctuating parabolic trap, eta = -i eta x
//   gaussian-well-e5        moving Gaussian well in a heat bath: sigma = b, eta = a x

namespace qtraj {

using ParameterMap = std::map<std::string, double>;

struct Preset {
    std::string name;
    ParameterMap parameters;  // every parameter with its effective value
    GridSpec grid;
    CoefficientSet coefficients;
    double initial_width = 1.0;  // width w of the default initial Gaussian

    WaveFunction initial_state() const { return make_gaussian(grid, {0.0}, initial_width, {0.0}); }
};

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"qbm-e1", "position-measurement-e2", "laser-e3",
                                                   "paul-trap-e4", "gaussian-well-e5"};
    return names;
}

/// Default parameter values of a preset; throws on unknown names.
inline ParameterMap preset_defaults(const std::string& name) {
    if (name == "qbm-e1") return {{"M", 1.0}, {"omega", 1.0}, {"a", 0.5}, {"b", 0.2}, {"c", 0.1}};
    if (name == "position-measurement-e2") return {{"M", 1.0}, {"omega", 1.0}, {"eta", 1.0}};
    if (name == "laser-e3") {
        return {{"eta", 0.1},  {"epsilon", 1.0}, {"F0", 0.05},      {"beta", 1.0},
                {"delta", 0.0}, {"tau", 1.0},    {"T_pulse", 10.0}};
    }
    if (name == "paul-trap-e4") return {{"M", 1.0}, {"omega", 1.0}, {"eta", 0.5}};
    if (name == "gaussian-well-e5") {
        return {{"M", 1.0},     {"V0", 1.0},    {"kappa", 1.0},  {"a", 0.5},
                {"b", 0.2},     {"r_amp", 0.5}, {"r_freq", 1.0}};
    }
    throw std::invalid_argument("unknown preset '" + name + "'");
}

/// Full-size grid used by presets unless overridden.
inline GridSpec default_grid() { return GridSpec(1, 10.0, 256); }
/// Small grid on which dense oracle algebra is affordable (N = 16).
inline GridSpec oracle_grid() { return GridSpec(1, 4.0, 16); }

inline Preset make_preset(const std::string& name, const ParameterMap& overrides = {},
                          const GridSpec& grid = default_grid()) {
    ParameterMap p = preset_defaults(name);
    for (const auto& [key, value] : overrides) {
        if (!p.count(key)) throw std::invalid_argument("preset '" + name + "' has no parameter '" + key + "'");
        if (!std::isfinite(value)) throw std::invalid_argument("parameter '" + key + "' must be finite");
        p[key] = value;
    }
    if (grid.dimension() != 1) throw std::invalid_argument("presets are one-dimensional");
    auto positive = [&](const char* key) {
        if (!(p.at(key) > 0.0)) throw std::invalid_argument(std::string("parameter '") + key + "' must be positive");
    };

    const Expr x = Expr::x(0);
    CoefficientSet co;
    co.dimension = 1;
    double width = 1.0;

    if (name == "qbm-e1") {
        positive("M");
        const double M = p["M"], w = p["omega"];
        co.alpha = 1.0 / (2.0 * M);
        co.V = 0.5 * M * w * w * x * x;
        co.A = {p["c"] * x};
        co.sigma = {{ScalarField::constant(p["b"])}};
        co.eta = {p["a"] * x};
        width = 1.0 / std::sqrt(2.0 * M * std::abs(w));
    } else if (name == "position-measurement-e2") {
        positive("M");
        const double M = p["M"], w = p["omega"];
        co.alpha = 1.0 / (2.0 * M);
        co.V = 0.5 * M * w * w * x * x;
        co.sigma = {{}};
        co.eta = {p["eta"] * x};
        width = 1.0 / std::sqrt(2.0 * M * std::abs(w));
    } else if (name == "laser-e3") {
        positive("epsilon");
        positive("tau");
        if (!(p["T_pulse"] >= 2.0 * p["tau"])) throw std::invalid_argument("T_pulse must be at least 2 tau");
        co.alpha = 0.5;
        const double eps = p["epsilon"];
        co.V = -1.0 / sqrt(x * x + eps * eps) +
               x * Expr::envelope(p["F0"], p["beta"], p["delta"], p["tau"], p["T_pulse"]);
        co.sigma = {{}};
        co.eta = {-I * p["eta"] * x};
        width = 1.0;
    } else if (name == "paul-trap-e4") {
        positive("M");
        positive("eta");
        const double M = p["M"], w = p["omega"];
        co.alpha = 1.0 / (2.0 * M);
        co.V = 0.5 * M * w * w * x * x;
        co.sigma = {{}};
        co.eta = {-I * p["eta"] * x};
        width = 1.0 / std::sqrt(2.0 * M * std::abs(w));
    } else if (name == "gaussian-well-e5") {
        positive("M");
        positive("V0");
        positive("kappa");
        const double M = p["M"];
        co.alpha = 1.0 / (2.0 * M);
        const Expr r = p["r_amp"] * sin(p["r_freq"] * Expr::t());
        const Expr dx = x - r;
        co.V = -p["V0"] * exp(-p["kappa"] * dx * dx);
        co.sigma = {{ScalarField::constant(p["b"])}};
        co.eta = {p["a"] * x};
        // harmonic approximation of the well bottom
        const double w_eff = std::sqrt(2.0 * p["V0"] * p["kappa"] / M);
        width = 1.0 / std::sqrt(2.0 * M * w_eff);
    }
    if (name == "qbm-e1" || name == "position-measurement-e2" || name == "paul-trap-e4") {
        if (p["omega"] == 0.0) width = 1.0;
    }
    // keep the initial Gaussian inside small boxes
    width = std::min(width, 0.95 * grid.half_width() / 4.0);
    return Preset{name, p, grid, std::move(co), width};
}

}  // namespace qtraj
