#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qtraj/expr.hpp"
#include "qtraj/grid.hpp"

namespace qtraj {

/// Derivative orders per axis, e.g. {2, 0} is d^2/dx^2 and {1, 1} is d^2/dxdy.
using MultiIndex = std::array<int, 2>;

/**
 * A coefficient function (t, x) -> complex.
 *
 * Derivatives come from the analytic callback when one is supplied and from
 * central differences of the value callback (step = grid spacing) otherwise.
 * Expression-backed fields precompute all derivatives up to third order.
 */
class ScalarField {
public:
    using ValueFn = std::function<cplx(double, const Point&)>;
    using DerivativeFn = std::function<cplx(double, const Point&, const MultiIndex&)>;

    ScalarField() : ScalarField(Expr::constant(0.0)) {}

    ScalarField(Expr e) {  // NOLINT(google-explicit-constructor): expressions are fields
        auto table = std::make_shared<std::map<MultiIndex, Expr>>();
        for (int a = 0; a <= 3; ++a) {
            for (int b = 0; a + b <= 3; ++b) {
                (*table)[{a, b}] = e.derivative(0, a).derivative(1, b);
            }
        }
        value_ = [e](double t, const Point& p) { return e.eval(t, p); };
        derivative_ = [table](double t, const Point& p, const MultiIndex& mu) -> cplx {
            auto it = table->find(mu);
            if (it == table->end()) throw std::invalid_argument("derivative order above 3");
            return it->second.eval(t, p);
        };
        zero_ = e.is_zero();
        time_dependent_ = e.depends_on_time();
        label_ = e.str();
    }

    static ScalarField zero() { return ScalarField(Expr::constant(0.0)); }
    static ScalarField constant(cplx v) { return ScalarField(Expr::constant(v)); }
    static ScalarField parse(const std::string& text, const std::map<std::string, double>& k = {}) {
        return ScalarField(Expr::parse(text, k));
    }

    /// Arbitrary callback; `derivative` may be empty.
    static ScalarField callback(ValueFn value, bool time_dependent, DerivativeFn derivative = {},
                                std::string label = "callback") {
        ScalarField f;
        f.value_ = std::move(value);
        f.derivative_ = std::move(derivative);
        f.zero_ = false;
        f.time_dependent_ = time_dependent;
        f.label_ = std::move(label);
        return f;
    }

    cplx operator()(double t, const Point& p) const { return value_(t, p); }

    bool has_analytic_derivatives() const { return static_cast<bool>(derivative_); }
    bool is_zero() const { return zero_; }
    bool time_dependent() const { return time_dependent_; }
    const std::string& label() const { return label_; }

    /// d^mu f at (t, p); `step` is the finite-difference step used without an analytic callback.
    cplx derivative(double t, const Point& p, const MultiIndex& mu, double step) const {
        if (mu[0] == 0 && mu[1] == 0) return value_(t, p);
        if (zero_) return 0.0;
        if (derivative_) return derivative_(t, p, mu);
        return finite_difference(t, p, mu, step);
    }

private:
    cplx finite_difference(double t, const Point& p, MultiIndex mu, double h) const {
        int axis = mu[0] > 0 ? 0 : 1;
        int order = mu[axis];
        mu[axis] = 0;
        auto at = [&](double offset) {
            Point q = p;
            q[axis] += offset;
            return derivative(t, q, mu, h);
        };
        switch (order) {
            case 1: return (at(h) - at(-h)) / (2.0 * h);
            case 2: return (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
            case 3: return (at(2 * h) - 2.0 * at(h) + 2.0 * at(-h) - at(-2 * h)) / (2.0 * h * h * h);
            default: throw std::invalid_argument("derivative order above 3");
        }
    }

    ValueFn value_;
    DerivativeFn derivative_;
    bool zero_ = true;
    bool time_dependent_ = false;
    std::string label_;
};

/// Samples d^mu f(t, .) at every node of the grid.
inline std::vector<cplx> sample(const ScalarField& f, const GridSpec& g, double t,
                                const MultiIndex& mu = {0, 0}) {
    std::vector<cplx> out(g.size());
    if (f.is_zero()) return out;
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = f.derivative(t, g.position(i), mu, g.spacing());
    return out;
}

inline MultiIndex unit_index(int axis, int order = 1) {
    MultiIndex mu{0, 0};
    mu[axis] = order;
    return mu;
}

inline MultiIndex add_index(MultiIndex a, const MultiIndex& b) {
    a[0] += b[0];
    a[1] += b[1];
    return a;
}

}  // namespace qtraj
