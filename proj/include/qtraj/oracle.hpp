#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qtraj/grid.hpp"
#include "qtraj/identities.hpp"
#include "qtraj/model.hpp"
#include "qtraj/observe.hpp"

namespace qtraj {

using DenseMatrix = Eigen::MatrixXcd;

/// Column j = apply(t, e_j) (or adjoint_apply).
inline DenseMatrix dense_assemble(const OperatorHandle& op, double t, bool adjoint = false) {
    const GridSpec& g = op.grid();
    const std::size_t n = g.size();
    if (n > max_dense_size) throw std::invalid_argument("dense_assemble needs N^d <= 64");
    DenseMatrix M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    WaveFunction e(g), y(g);
    for (std::size_t j = 0; j < n; ++j) {
        e.fill(0.0);
        e[j] = 1.0;
        if (adjoint) {
            op.adjoint_apply_into(t, e, y);
        } else {
            op.apply_into(t, e, y);
        }
        for (std::size_t i = 0; i < n; ++i) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y[i];
    }
    return M;
}

inline DensityMatrix pure_density(const WaveFunction& psi) { return density_estimate({psi}); }

/// 1/2 sum |eigenvalues(rho1 - rho2)|.
inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("trace_distance: size mismatch");
    const DensityMatrix d = 0.5 * ((a - b) + (a - b).adjoint());
    Eigen::SelfAdjointEigenSolver<DensityMatrix> es(d, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

inline double min_eigenvalue(const DensityMatrix& rho) {
    const DensityMatrix h = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<DensityMatrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double hermiticity_error(const DenseMatrix& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

struct MasterSolution {
    DensityMatrix rho;
    double trace_drift = 0.0;  // max |tr rho(t) - tr rho(0)| over the run
};

/**
 * Classical RK4 for d rho/dt = G rho + rho G* + sum_l L_l rho L_l*, no
 * renormalisation, over [t0, t0 + T]. Trace drift above 1e-6 is reported as failure.
 */
inline MasterSolution solve_master_detailed(const DensityMatrix& rho0, double T, const OperatorSet& ops, double dt,
                                            double t0 = 0.0) {
    const std::size_t n = ops.grid().size();
    if (n > max_dense_size) throw std::invalid_argument("solve_master needs N^d <= 64");
    if (rho0.rows() != static_cast<Eigen::Index>(n)) throw std::invalid_argument("rho0 has the wrong dimension");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    const std::size_t steps = step_count(T, dt, 1);
    const bool td = ops.sampler->time_dependent();

    struct Generator {
        DenseMatrix G;
        std::vector<DenseMatrix> L;
    };
    auto assemble = [&](double t) {
        Generator gen{dense_assemble(ops.G, t), {}};
        for (const auto& L : ops.L) gen.L.push_back(dense_assemble(L, t));
        return gen;
    };
    const Generator fixed = td ? Generator{} : assemble(0.0);
    auto rhs = [&](const Generator& gen, const DensityMatrix& r) {
        DensityMatrix out = gen.G * r;
        out += r * gen.G.adjoint();
        for (const auto& L : gen.L) out += L * r * L.adjoint();
        return out;
    };

    MasterSolution sol{rho0, 0.0};
    const cplx tr0 = rho0.trace();
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * dt;
        const Generator g0 = td ? assemble(t) : fixed;
        const Generator gh = td ? assemble(t + 0.5 * dt) : fixed;
        const Generator g1 = td ? assemble(t + dt) : fixed;
        const DensityMatrix k1 = rhs(g0, sol.rho);
        const DensityMatrix k2 = rhs(gh, sol.rho + 0.5 * dt * k1);
        const DensityMatrix k3 = rhs(gh, sol.rho + 0.5 * dt * k2);
        const DensityMatrix k4 = rhs(g1, sol.rho + dt * k3);
        sol.rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        sol.trace_drift = std::max(sol.trace_drift, std::abs(sol.rho.trace() - tr0));
        if (sol.trace_drift > 1e-6) {
            std::ostringstream s;
            s << "master equation trace drift " << sol.trace_drift << " at t=" << t + dt
              << " exceeds 1e-6 (scheme or model inconsistency)";
            throw std::runtime_error(s.str());
        }
    }
    return sol;
}

inline DensityMatrix solve_master(const DensityMatrix& rho0, double T, const OperatorSet& ops, double dt) {
    return solve_master_detailed(rho0, T, ops, dt).rho;
}

// ---------------------------------------------------------------------------
// Verification reports

struct CheckLine {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string note;
};

struct VerificationReport {
    std::vector<CheckLine> lines;

    void add(std::string name, double value, double tolerance, bool passed, std::string note = {}) {
        lines.push_back({std::move(name), value, tolerance, passed, std::move(note)});
    }
    bool passed() const {
        for (const auto& l : lines) {
            if (!l.passed) return false;
        }
        return true;
    }
    const CheckLine* find(const std::string& name) const {
        for (const auto& l : lines) {
            if (l.name == name) return &l;
        }
        return nullptr;
    }
    /// One line per check: name, value, tolerance, PASS/FAIL.
    std::string str() const {
        std::ostringstream s;
        s << std::setprecision(6);
        for (const auto& l : lines) {
            s << (l.passed ? "PASS " : "FAIL ") << l.name << " value=" << l.value << " tol=" << l.tolerance;
            if (!l.note.empty()) s << " (" << l.note << ")";
            s << '\n';
        }
        return s.str();
    }
};

// ---------------------------------------------------------------------------
// Structural checks

/// 2 Re<f, G f> + sum_l |L_l f|^2; zero for every f when G = -iH - 1/2 sum L*L with H symmetric.
inline double norm_defect(const OperatorSet& ops, double t, const WaveFunction& f) {
    double d = 2.0 * inner_product(f, ops.G.apply(t, f)).real();
    for (const auto& L : ops.L) d += norm_squared(L.apply(t, f));
    return d;
}

/// Unit-norm state with independent complex normal values at every node.
inline WaveFunction random_state(const GridSpec& g, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    WaveFunction f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = cplx(normal(rng), normal(rng));
    f *= 1.0 / norm(f);
    return f;
}

/**
 * |norm_defect| <= 1e-12 (2|f||Gf| + sum |L f|^2) on `count` random states and,
 * when the grid is small enough for dense algebra, adjoint = conjugate
 * transpose and G + G* + sum L*L = 0 at matrix level.
 */
inline VerificationReport structural_checks(const OperatorSet& ops, double t = 0.0, int count = 50,
                                            std::uint64_t seed = 20240611) {
    const GridSpec& g = ops.grid();
    VerificationReport rep;
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int k = 0; k < count; ++k) {
        const WaveFunction f = random_state(g, rng);
        double scale = 2.0 * norm(f) * norm(ops.G.apply(t, f));
        for (const auto& L : ops.L) scale += norm_squared(L.apply(t, f));
        worst = std::max(worst, std::abs(norm_defect(ops, t, f)) / scale);
    }
    rep.add("norm defect 2Re<f,Gf> + sum|Lf|^2 (relative)", worst, 1e-12, worst <= 1e-12);
    if (g.size() > max_dense_size) return rep;

    std::vector<std::pair<std::string, const OperatorHandle*>> handles = {{"H", &ops.H}, {"G", &ops.G}, {"C", &ops.C}};
    for (std::size_t l = 0; l < ops.L.size(); ++l) handles.push_back({"L_" + std::to_string(l), &ops.L[l]});
    for (const auto& [name, h] : handles) {
        const DenseMatrix a = dense_assemble(*h, t);
        const DenseMatrix b = dense_assemble(*h, t, true);
        const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
        const double err = (b - a.adjoint()).cwiseAbs().maxCoeff() / scale;
        rep.add("dense adjoint " + name, err, 1e-12, err <= 1e-12);
    }
    const DenseMatrix H = dense_assemble(ops.H, t);
    const double hs = std::max(1.0, H.cwiseAbs().maxCoeff());
    rep.add("dense H hermitian", hermiticity_error(H) / hs, 1e-12, hermiticity_error(H) / hs <= 1e-12);
    const DenseMatrix G = dense_assemble(ops.G, t);
    DenseMatrix sum = G + G.adjoint();
    for (const auto& L : ops.L) {
        const DenseMatrix Ld = dense_assemble(L, t);
        sum += Ld.adjoint() * Ld;
    }
    const double gs = std::max(1.0, G.cwiseAbs().maxCoeff());
    const double err = sum.cwiseAbs().maxCoeff() / gs;
    rep.add("dense G + G* + sum L*L", err, 1e-12, err <= 1e-12);
    return rep;
}

// ---------------------------------------------------------------------------
// Operator identity suite

struct GaussianSpec {
    std::vector<double> center;
    double width = 1.0;
    std::vector<double> momentum;

    WaveFunction sample_on(const GridSpec& g) const { return make_gaussian(g, center, width, momentum); }
};

/// Gaussians with widths in [0.04L, 0.07L], momenta |p| <= 2 and centres far enough from the
/// edge that the tail at the boundary is below 1e-14 of the peak.
inline std::vector<GaussianSpec> default_test_functions(const GridSpec& g, int count = 10,
                                                        std::uint64_t seed = 20240611) {
    std::mt19937_64 rng(seed);
    const double L = g.half_width();
    const int d = g.dimension();
    const double rd = std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> unit(-1.0, 1.0), width(0.04 * L, 0.07 * L);
    std::vector<GaussianSpec> out;
    for (int k = 0; k < count; ++k) {
        GaussianSpec s;
        s.width = width(rng);
        const double reach = std::min(L / 3.0, L - 12.0 * s.width) / rd;
        for (int a = 0; a < d; ++a) {
            s.center.push_back(unit(rng) * reach);
            s.momentum.push_back(2.0 * unit(rng) / rd);
        }
        out.push_back(s);
    }
    return out;
}

/// Identity name -> max over test functions of |closed form - direct| relative to max(|closed|, |direct|, |f|).
inline std::map<std::string, double> identity_residuals(const CoefficientSet& co, const GridSpec& g,
                                                        const std::vector<GaussianSpec>& fns, double t = 0.0) {
    const OperatorSet ops = build_operators(g, co);
    const int d = g.dimension();
    const bool phase_ok = check_phase_condition(co, g, t) < 1e-8;
    std::map<std::string, double> res;
    auto record = [&](const std::string& name, double value) { res[name] = std::max(res[name], value); };
    // |a - b| relative to the larger of |a|, |b| and |f|
    auto rel = [](const WaveFunction& a, const WaveFunction& b, double fn) {
        return norm(a - b) / std::max({norm(a), norm(b), fn});
    };
    auto op = [&](const OperatorHandle& o) { return [&o, t](const WaveFunction& u) { return o.apply(t, u); }; };
    auto multiply = [&g](std::function<double(const Point&)> fn) {
        return [&g, fn](const WaveFunction& u) {
            WaveFunction out(g);
            for (std::size_t i = 0; i < u.size(); ++i) out[i] = fn(g.position(i)) * u[i];
            return out;
        };
    };

    for (const auto& spec : fns) {
        const WaveFunction f = spec.sample_on(g);
        const double fn = norm(f);
        record("[H,C]", rel(commutator_HC(co, t, f), direct_commutator(op(ops.H), op(ops.C), f), fn));
        for (int l = 0; l < ops.channels(); ++l) {
            const std::string suffix = ops.channels() > 1 ? "_" + std::to_string(l) : "";
            record("[C,L]" + suffix,
                   rel(commutator_CL(co, l, t, f), direct_commutator(op(ops.C), op(ops.L[l]), f), fn));
            record("L*L" + suffix,
                   rel(lstar_l_expansion(co, l, t, f), ops.L[l].adjoint_apply(t, ops.L[l].apply(t, f)), fn));
        }
        if (ops.channels() == 0) continue;
        for (int j = 0; j < d; ++j) {
            const std::string ax = d > 1 ? "_" + std::to_string(j) : "";
            auto xj = multiply([j](const Point& x) { return x[j]; });
            record("D(x)" + ax, rel(dissipator_position(co, j, t, f), direct_dissipator(xj, ops, t, f), fn));
            if (phase_ok) {
                auto dj = [j](const WaveFunction& u) { return apply_derivative(u, j); };
                record("D(d)" + ax, rel(dissipator_derivative(co, j, t, f), direct_dissipator(dj, ops, t, f), fn));
            }
        }
        auto r2 = multiply([](const Point& x) { return x[0] * x[0] + x[1] * x[1]; });
        record("D(|x|^2)", rel(dissipator_position_squared(co, t, f), direct_dissipator(r2, ops, t, f), fn));
        if (phase_ok) {
            auto lap = [](const WaveFunction& u) { return apply_laplacian(u); };
            record("D(Lap)", rel(dissipator_laplacian(co, t, f), direct_dissipator(lap, ops, t, f), fn));
            record("D(C)", rel(dissipator_reference(co, t, f), direct_dissipator(op(ops.C), ops, t, f), fn));
        }
    }
    // relative bounds on C
    for (const auto& spec : fns) {
        const WaveFunction f = spec.sample_on(g);
        const WaveFunction cf = ops.C.apply(0.0, f);
        const double c2 = norm_squared(cf);
        double rhs = norm_squared(apply_laplacian(f)) - 2.0 * d * norm_squared(f);
        WaveFunction r2f(g);
        for (std::size_t i = 0; i < f.size(); ++i) r2f[i] = g.radius_squared(i) * f[i];
        rhs += norm_squared(r2f);
        for (int j = 0; j < d; ++j) {
            const WaveFunction df = apply_derivative(f, j);
            WaveFunction w(g);
            for (std::size_t i = 0; i < f.size(); ++i) w[i] = g.radius_squared(i) * df[i];
            rhs += 2.0 * inner_product(df, w).real();
        }
        record("|Cf|^2 expansion", std::abs(c2 - rhs) / c2);
    }
    return res;
}

struct InequalityMargins {
    double factor4 = std::numeric_limits<double>::infinity();  // min of 4|Cf|^2 - sum |(1+|x|) d_j f|^2
    double factor8 = std::numeric_limits<double>::infinity();  // min of 8|Cf|^2 - |(1+|x|^2) f|^2
    double scale = 0.0;                                        // max |Cf|^2
};

inline InequalityMargins inequality_margins(const GridSpec& g, const std::vector<GaussianSpec>& fns) {
    const OperatorHandle C = build_C(g);
    InequalityMargins m;
    for (const auto& spec : fns) {
        const WaveFunction f = spec.sample_on(g);
        const double c2 = norm_squared(C.apply(0.0, f));
        m.scale = std::max(m.scale, c2);
        double grad = 0.0;
        for (int j = 0; j < g.dimension(); ++j) {
            WaveFunction w = apply_derivative(f, j);
            for (std::size_t i = 0; i < f.size(); ++i) w[i] *= 1.0 + std::sqrt(g.radius_squared(i));
            grad += norm_squared(w);
        }
        WaveFunction w = f;
        for (std::size_t i = 0; i < f.size(); ++i) w[i] *= 1.0 + g.radius_squared(i);
        m.factor4 = std::min(m.factor4, 4.0 * c2 - grad);
        m.factor8 = std::min(m.factor8, 8.0 * c2 - norm_squared(w));
    }
    return m;
}

/**
 * Closed-form identities against direct compositions on `grid` and on the
 * refined grid with 2N points per axis. Each identity passes when its residual
 * is below `tolerance` and, unless it is exact to round-off, the refinement
 * ratio lies in 4 +- 25%. Inequality margins must be non-negative.
 */
inline VerificationReport identity_suite(const CoefficientSet& co, const GridSpec& grid,
                                         std::vector<GaussianSpec> fns = {}, double t = 0.0,
                                         double tolerance = 0.05) {
    if (fns.empty()) fns = default_test_functions(grid);
    const GridSpec fine(grid.dimension(), grid.half_width(), 2 * grid.points_per_axis(), grid.boundary());
    const auto coarse_res = identity_residuals(co, grid, fns, t);
    const auto fine_res = identity_residuals(co, fine, fns, t);
    VerificationReport rep;
    constexpr double exact_floor = 1e-8;
    for (const auto& [name, r] : coarse_res) {
        const double rf = fine_res.at(name);
        rep.add(name + " residual", r, tolerance, r <= tolerance);
        if (r <= exact_floor) {
            rep.add(name + " refinement ratio", 0.0, 0.0, rf <= exact_floor, "exact to round-off");
        } else {
            const double ratio = r / rf;
            rep.add(name + " refinement ratio", ratio, 1.0, std::abs(ratio - 4.0) <= 1.0, "expected 4 +- 1");
        }
    }
    const InequalityMargins m = inequality_margins(grid, fns);
    const double tol = 1e-10 * m.scale;
    rep.add("4|Cf|^2 - sum|(1+|x|)d_j f|^2 margin", m.factor4, -tol, m.factor4 >= -tol);
    rep.add("8|Cf|^2 - |(1+|x|^2) f|^2 margin", m.factor8, -tol, m.factor8 >= -tol);
    return rep;
}

}  // namespace qtraj
