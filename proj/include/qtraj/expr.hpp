#pragma once

// Small symbolic expression language for coefficient fields.
//
// Expressions are complex-valued functions of (t, x, y) built from numbers,
// named constants, + - * / ^, exp/sin/cos/sqrt and the laser envelope
// envelope(F0, beta, delta, tau, Tp). They differentiate symbolically in the
// spatial variables so presets carry exact coefficient derivatives.

#include <cctype>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qtraj/grid.hpp"

namespace qtraj {

class Expr {
public:
    enum class Op { constant, var_x, var_y, var_t, add, mul, div, neg, pow, exp, sin, cos, sqrt, envelope };

    Expr() : Expr(constant(0.0)) {}
    Expr(double v) : Expr(constant(v)) {}  // NOLINT(google-explicit-constructor)
    Expr(cplx v) : Expr(constant(v)) {}    // NOLINT(google-explicit-constructor)

    static Expr constant(cplx v) { return Expr(make(Op::constant, {}, v)); }
    static Expr x(int axis) { return Expr(make(axis == 0 ? Op::var_x : Op::var_y, {})); }
    static Expr t() { return Expr(make(Op::var_t, {})); }
    /// F(t) = F0 sin(beta t + delta) * ramp(t) with sin / 1 / cos^2 pieces of length tau inside [0, Tp], zero outside.
    static Expr envelope(double f0, double beta, double delta, double tau, double tp) {
        auto n = make(Op::envelope, {});
        n->params = {f0, beta, delta, tau, tp};
        return Expr(n);
    }

    static Expr parse(std::string_view text, const std::map<std::string, double>& constants = {});

    cplx eval(double t, const Point& p) const { return eval_node(*node_, t, p); }

    Expr derivative(int axis) const { return Expr(diff(node_, axis)); }
    Expr derivative(int axis, int order) const {
        Expr e = *this;
        for (int k = 0; k < order; ++k) e = e.derivative(axis);
        return e;
    }

    bool is_constant() const { return node_->op == Op::constant; }
    bool is_zero() const { return is_constant() && node_->value == cplx{0.0}; }
    cplx constant_value() const { return node_->value; }
    bool depends_on_time() const { return has_time(*node_); }
    bool depends_on_space() const { return has_space(*node_); }

    std::string str() const { return to_str(*node_); }

    friend Expr operator+(const Expr& a, const Expr& b) { return Expr(add(a.node_, b.node_)); }
    friend Expr operator-(const Expr& a, const Expr& b) { return Expr(add(a.node_, neg(b.node_))); }
    friend Expr operator*(const Expr& a, const Expr& b) { return Expr(mul(a.node_, b.node_)); }
    friend Expr operator/(const Expr& a, const Expr& b) { return Expr(divide(a.node_, b.node_)); }
    friend Expr operator-(const Expr& a) { return Expr(neg(a.node_)); }
    friend Expr pow(const Expr& a, const Expr& b) { return Expr(power(a.node_, b.node_)); }
    friend Expr exp(const Expr& a) { return Expr(unary(Op::exp, a.node_)); }
    friend Expr sin(const Expr& a) { return Expr(unary(Op::sin, a.node_)); }
    friend Expr cos(const Expr& a) { return Expr(unary(Op::cos, a.node_)); }
    friend Expr sqrt(const Expr& a) { return Expr(unary(Op::sqrt, a.node_)); }

private:
    struct Node;
    using NodePtr = std::shared_ptr<const Node>;
    struct Node {
        Op op;
        std::vector<NodePtr> args;
        cplx value{0.0};
        std::vector<double> params;
    };

    explicit Expr(NodePtr n) : node_(std::move(n)) {}

    static std::shared_ptr<Node> make(Op op, std::vector<NodePtr> args, cplx value = 0.0) {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->args = std::move(args);
        n->value = value;
        return n;
    }

    static bool is_const(const NodePtr& n) { return n->op == Op::constant; }
    static bool is_const(const NodePtr& n, cplx v) { return is_const(n) && n->value == v; }

    static NodePtr constant_node(cplx v) { return make(Op::constant, {}, v); }

    static NodePtr add(const NodePtr& a, const NodePtr& b) {
        if (is_const(a) && is_const(b)) return constant_node(a->value + b->value);
        if (is_const(a, 0.0)) return b;
        if (is_const(b, 0.0)) return a;
        return make(Op::add, {a, b});
    }
    static NodePtr neg(const NodePtr& a) {
        if (is_const(a)) return constant_node(-a->value);
        if (a->op == Op::neg) return a->args[0];
        return make(Op::neg, {a});
    }
    static NodePtr mul(const NodePtr& a, const NodePtr& b) {
        if (is_const(a) && is_const(b)) return constant_node(a->value * b->value);
        if (is_const(a, 0.0) || is_const(b, 0.0)) return constant_node(0.0);
        if (is_const(a, 1.0)) return b;
        if (is_const(b, 1.0)) return a;
        if (is_const(a, -1.0)) return neg(b);
        if (is_const(b, -1.0)) return neg(a);
        return make(Op::mul, {a, b});
    }
    static NodePtr divide(const NodePtr& a, const NodePtr& b) {
        if (is_const(b, 0.0)) throw std::invalid_argument("division by the constant zero");
        if (is_const(a) && is_const(b)) return constant_node(a->value / b->value);
        if (is_const(a, 0.0)) return constant_node(0.0);
        if (is_const(b, 1.0)) return a;
        return make(Op::div, {a, b});
    }
    static NodePtr power(const NodePtr& a, const NodePtr& b) {
        if (!is_const(b)) throw std::invalid_argument("exponents must be constant");
        if (is_const(b, 0.0)) return constant_node(1.0);
        if (is_const(b, 1.0)) return a;
        if (is_const(a)) return constant_node(std::pow(a->value, b->value));
        return make(Op::pow, {a, b});
    }
    static NodePtr unary(Op op, const NodePtr& a) {
        if (is_const(a)) {
            cplx v = a->value;
            switch (op) {
                case Op::exp: return constant_node(std::exp(v));
                case Op::sin: return constant_node(std::sin(v));
                case Op::cos: return constant_node(std::cos(v));
                case Op::sqrt: return constant_node(std::sqrt(v));
                default: break;
            }
        }
        return make(op, {a});
    }

    static double envelope_value(const std::vector<double>& p, double t) {
        const double f0 = p[0], beta = p[1], delta = p[2], tau = p[3], tp = p[4];
        double ramp;
        if (t < 0.0 || t > tp) {
            ramp = 0.0;
        } else if (t < tau) {
            ramp = std::sin(std::numbers::pi * t / (2.0 * tau));
        } else if (t <= tp - tau) {
            ramp = 1.0;
        } else {
            const double c = std::cos(std::numbers::pi * (t + tau - tp) / (2.0 * tau));
            ramp = c * c;
        }
        return f0 * std::sin(beta * t + delta) * ramp;
    }

    static cplx eval_node(const Node& n, double t, const Point& p) {
        switch (n.op) {
            case Op::constant: return n.value;
            case Op::var_x: return p[0];
            case Op::var_y: return p[1];
            case Op::var_t: return t;
            case Op::add: return eval_node(*n.args[0], t, p) + eval_node(*n.args[1], t, p);
            case Op::mul: return eval_node(*n.args[0], t, p) * eval_node(*n.args[1], t, p);
            case Op::div: return eval_node(*n.args[0], t, p) / eval_node(*n.args[1], t, p);
            case Op::neg: return -eval_node(*n.args[0], t, p);
            case Op::pow: {
                cplx base = eval_node(*n.args[0], t, p);
                cplx e = n.args[1]->value;
                if (e.imag() == 0.0 && e.real() == std::round(e.real()) && std::abs(e.real()) < 64) {
                    // Integer powers by repeated multiplication keep real inputs real.
                    int k = static_cast<int>(e.real());
                    cplx r = 1.0;
                    cplx b = k < 0 ? 1.0 / base : base;
                    for (int j = 0; j < std::abs(k); ++j) r *= b;
                    return r;
                }
                return std::pow(base, e);
            }
            case Op::exp: return std::exp(eval_node(*n.args[0], t, p));
            case Op::sin: return std::sin(eval_node(*n.args[0], t, p));
            case Op::cos: return std::cos(eval_node(*n.args[0], t, p));
            case Op::sqrt: return std::sqrt(eval_node(*n.args[0], t, p));
            case Op::envelope: return envelope_value(n.params, t);
        }
        return 0.0;
    }

    static NodePtr diff(const NodePtr& n, int axis) {
        switch (n->op) {
            case Op::constant:
            case Op::var_t:
            case Op::envelope: return constant_node(0.0);
            case Op::var_x: return constant_node(axis == 0 ? 1.0 : 0.0);
            case Op::var_y: return constant_node(axis == 1 ? 1.0 : 0.0);
            case Op::add: return add(diff(n->args[0], axis), diff(n->args[1], axis));
            case Op::neg: return neg(diff(n->args[0], axis));
            case Op::mul: {
                const auto& a = n->args[0];
                const auto& b = n->args[1];
                return add(mul(diff(a, axis), b), mul(a, diff(b, axis)));
            }
            case Op::div: {
                const auto& a = n->args[0];
                const auto& b = n->args[1];
                auto num = add(mul(diff(a, axis), b), neg(mul(a, diff(b, axis))));
                return divide(num, mul(b, b));
            }
            case Op::pow: {
                const auto& a = n->args[0];
                cplx e = n->args[1]->value;
                auto outer = mul(constant_node(e), power(a, constant_node(e - 1.0)));
                return mul(outer, diff(a, axis));
            }
            case Op::exp: return mul(n, diff(n->args[0], axis));
            case Op::sin: return mul(unary(Op::cos, n->args[0]), diff(n->args[0], axis));
            case Op::cos:
                return mul(neg(unary(Op::sin, n->args[0])), diff(n->args[0], axis));
            case Op::sqrt:
                return divide(diff(n->args[0], axis), mul(constant_node(2.0), n));
        }
        return constant_node(0.0);
    }

    static bool has_time(const Node& n) {
        if (n.op == Op::var_t || n.op == Op::envelope) return true;
        for (const auto& a : n.args) {
            if (has_time(*a)) return true;
        }
        return false;
    }
    static bool has_space(const Node& n) {
        if (n.op == Op::var_x || n.op == Op::var_y) return true;
        for (const auto& a : n.args) {
            if (has_space(*a)) return true;
        }
        return false;
    }

    static std::string num_str(cplx v) {
        std::ostringstream os;
        os.precision(17);
        if (v.imag() == 0.0) {
            os << v.real();
        } else {
            os << "(" << v.real() << (v.imag() < 0 ? "-" : "+") << std::abs(v.imag()) << "*i)";
        }
        return os.str();
    }

    static std::string to_str(const Node& n) {
        switch (n.op) {
            case Op::constant: return num_str(n.value);
            case Op::var_x: return "x";
            case Op::var_y: return "y";
            case Op::var_t: return "t";
            case Op::add: return "(" + to_str(*n.args[0]) + " + " + to_str(*n.args[1]) + ")";
            case Op::mul: return "(" + to_str(*n.args[0]) + " * " + to_str(*n.args[1]) + ")";
            case Op::div: return "(" + to_str(*n.args[0]) + " / " + to_str(*n.args[1]) + ")";
            case Op::neg: return "(-" + to_str(*n.args[0]) + ")";
            case Op::pow: return "(" + to_str(*n.args[0]) + ")^" + num_str(n.args[1]->value);
            case Op::exp: return "exp(" + to_str(*n.args[0]) + ")";
            case Op::sin: return "sin(" + to_str(*n.args[0]) + ")";
            case Op::cos: return "cos(" + to_str(*n.args[0]) + ")";
            case Op::sqrt: return "sqrt(" + to_str(*n.args[0]) + ")";
            case Op::envelope: {
                std::string s = "envelope(";
                for (std::size_t k = 0; k < n.params.size(); ++k) {
                    s += (k ? ", " : "") + num_str(n.params[k]);
                }
                return s + ")";
            }
        }
        return "?";
    }

    NodePtr node_;

    friend class ExprParser;
};

/// Recursive-descent parser: sum := term (('+'|'-') term)*, term := unary (('*'|'/') unary)*,
/// unary := '-' unary | power, power := atom ('^' unary)?
class ExprParser {
public:
    ExprParser(std::string_view text, const std::map<std::string, double>& constants)
        : text_(text), constants_(constants) {}

    Expr parse() {
        Expr e = sum();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw std::invalid_argument("expression '" + std::string(text_) + "': " + what +
                                    " at offset " + std::to_string(pos_));
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    Expr sum() {
        Expr e = term();
        for (;;) {
            if (accept('+')) {
                e = e + term();
            } else if (accept('-')) {
                e = e - term();
            } else {
                return e;
            }
        }
    }
    Expr term() {
        Expr e = unary();
        for (;;) {
            if (accept('*')) {
                e = e * unary();
            } else if (accept('/')) {
                e = e / unary();
            } else {
                return e;
            }
        }
    }
    Expr unary() {
        if (accept('-')) return -unary();
        if (accept('+')) return unary();
        return power();
    }
    Expr power() {
        Expr base = atom();
        if (accept('^')) {
            Expr ex = unary();
            if (!ex.is_constant()) fail("exponent must be a constant");
            return pow(base, ex);
        }
        return base;
    }
    std::vector<Expr> arguments() {
        std::vector<Expr> args;
        expect('(');
        if (accept(')')) return args;
        do {
            args.push_back(sum());
        } while (accept(','));
        expect(')');
        return args;
    }
    Expr atom() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = sum();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            double v = std::stod(std::string(text_.substr(pos_)), &used);
            pos_ += used;
            return Expr::constant(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
                ++pos_;
            }
            std::string id(text_.substr(start, pos_ - start));
            skip_ws();
            bool call = pos_ < text_.size() && text_[pos_] == '(';
            if (call) return function(id);
            if (id == "x" || id == "x1") return Expr::x(0);
            if (id == "y" || id == "x2") return Expr::x(1);
            if (id == "t") return Expr::t();
            if (id == "i") return Expr::constant(I);
            if (id == "pi") return Expr::constant(std::numbers::pi);
            auto it = constants_.find(id);
            if (it != constants_.end()) return Expr::constant(it->second);
            pos_ = start;
            fail("unknown identifier '" + id + "'");
        }
        fail(std::string("unexpected character '") + c + "'");
    }
    Expr function(const std::string& name) {
        auto args = arguments();
        auto need = [&](std::size_t n) {
            if (args.size() != n) fail(name + " expects " + std::to_string(n) + " argument(s)");
        };
        if (name == "exp") { need(1); return exp(args[0]); }
        if (name == "sin") { need(1); return sin(args[0]); }
        if (name == "cos") { need(1); return cos(args[0]); }
        if (name == "sqrt") { need(1); return sqrt(args[0]); }
        if (name == "envelope") {
            need(5);
            double p[5];
            for (int k = 0; k < 5; ++k) {
                if (!args[k].is_constant() || args[k].constant_value().imag() != 0.0) {
                    fail("envelope parameters must be real constants");
                }
                p[k] = args[k].constant_value().real();
            }
            if (!(p[3] > 0.0) || !(p[4] >= 2.0 * p[3])) fail("envelope needs tau > 0 and Tp >= 2 tau");
            return Expr::envelope(p[0], p[1], p[2], p[3], p[4]);
        }
        fail("unknown function '" + name + "'");
    }

    std::string_view text_;
    const std::map<std::string, double>& constants_;
    std::size_t pos_ = 0;
};

inline Expr Expr::parse(std::string_view text, const std::map<std::string, double>& constants) {
    return ExprParser(text, constants).parse();
}

}  // namespace qtraj
