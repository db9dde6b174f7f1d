#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtraj/grid.hpp"
#include "qtraj/linalg.hpp"
#include "qtraj/log.hpp"
#include "qtraj/model.hpp"
#include "qtraj/noise.hpp"
#include "qtraj/parallel.hpp"

namespace qtraj {

enum class Scheme { euler_maruyama, semi_implicit };

inline const char* to_string(Scheme s) { return s == Scheme::euler_maruyama ? "euler_maruyama" : "semi_implicit"; }

inline Scheme parse_scheme(const std::string& s) {
    if (s == "euler_maruyama") return Scheme::euler_maruyama;
    if (s == "semi_implicit") return Scheme::semi_implicit;
    throw std::invalid_argument("unknown scheme '" + s + "' (expected euler_maruyama or semi_implicit)");
}

struct SchemeConfig {
    double dt = 1e-3;
    Scheme scheme = Scheme::euler_maruyama;
    bool renormalize_nonlinear = true;
    double abort_boundary_mass = 1e-6;  // relative to |X|^2
    double boundary_margin = 0.0;       // width of the monitored shell; 0 selects L/8
    double solver_tolerance = 1e-10;
    int max_iterations = 1000;
};

class StepFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BoundaryAbort : public std::runtime_error {
public:
    BoundaryAbort(std::uint64_t trajectory, double time, double mass)
        : std::runtime_error(describe(trajectory, time, mass)), trajectory(trajectory), time(time), mass(mass) {}
    std::uint64_t trajectory;
    double time;
    double mass;

private:
    static std::string describe(std::uint64_t k, double t, double m) {
        std::ostringstream s;
        s << "trajectory " << k << " aborted at t=" << t << ": boundary mass " << m
          << " exceeds threshold (box too small for this run)";
        return s.str();
    }
};

/// Crude upper estimate of the spectral radius of the discrete H(t).
inline double spectral_radius_estimate(const OperatorSet& ops, double t) {
    const GridSpec& g = ops.grid();
    const auto c = ops.sampler->at(t);
    const double h = g.spacing();
    double rho = ops.coefficients().alpha * 4.0 * g.dimension() / (h * h);
    double vmax = 0.0;
    for (const auto& v : c->V) vmax = std::max(vmax, std::abs(v));
    rho += vmax;
    for (const auto& A : c->A) {
        double amax = 0.0;
        for (const auto& a : A) amax = std::max(amax, std::abs(a));
        rho += 2.0 * amax / h;
    }
    return rho;
}

/// u with (n + C^2) u = n f, by conjugate gradients.
inline WaveFunction resolvent_apply(int n, const WaveFunction& f, const OperatorHandle& C, double tol = 1e-10,
                                    int max_iter = 10000) {
    if (n < 1) throw std::invalid_argument("resolvent index n must be >= 1");
    const double dn = n;
    WaveFunction tmp(f.grid());
    LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) {
        C.apply_into(0.0, x, tmp);
        C.apply_into(0.0, tmp, out);
        out.axpy(dn, x);
    };
    WaveFunction b = dn * f;
    WaveFunction u = f;
    const SolveResult r = conjugate_gradient(A, b, u, tol, max_iter);
    if (!r.converged) throw SolverFailure("resolvent conjugate gradients", r);
    return u;
}

/**
 * One-step maps for the linear, non-linear and resolvent-regularised SSE.
 *
 * The semi-implicit scheme solves (I - dt G(t + dt)) X' = rhs. One-dimensional
 * Dirichlet grids use a banded direct solve (the band is read off by probing);
 * other grids use BiCGSTAB. Factorisations of time-independent operators are
 * computed once.
 */
class Stepper {
public:
    Stepper(OperatorSet ops, SchemeConfig cfg) : ops_(std::move(ops)), cfg_(cfg) {
        if (!(cfg_.dt > 0.0) || !std::isfinite(cfg_.dt)) throw std::invalid_argument("dt must be positive");
        if (!(cfg_.abort_boundary_mass > 0.0)) throw std::invalid_argument("abort_boundary_mass must be positive");
        const double L = ops_.grid().half_width();
        if (cfg_.boundary_margin == 0.0) cfg_.boundary_margin = L / 8.0;
        if (!(cfg_.boundary_margin > 0.0 && cfg_.boundary_margin < L)) {
            throw std::invalid_argument("boundary_margin must lie in (0, L)");
        }
        banded_ = ops_.grid().dimension() == 1 && ops_.grid().boundary() == Boundary::dirichlet;
        const bool time_dependent = ops_.sampler->time_dependent();
        if (cfg_.scheme == Scheme::euler_maruyama) {
            const double rho = spectral_radius_estimate(ops_, 0.0);
            if (cfg_.dt * rho > 0.5) {
                std::ostringstream s;
                s << "dt * spectral radius of H = " << cfg_.dt * rho
                  << " > 0.5; explicit Euler-Maruyama is likely unstable";
                log::warn(s.str());
            }
        } else if (banded_ && !time_dependent) {
            fixed_lu_ = std::make_shared<const BandedLU>(factor(0.0));
        }
    }

    const OperatorSet& operators() const { return ops_; }
    const SchemeConfig& config() const { return cfg_; }

    /**
     * X' = X + G X dt + sum L X dW (or its semi-implicit form).
     *
     * With `drift` set, also returns E[|X'|^2 | X] - |X|^2, the increment of the
     * predictable part of the norm process; the semi-implicit branch then costs
     * one extra solve per channel.
     */
    WaveFunction step_linear(const WaveFunction& X, double t, std::span<const double> dW,
                             double* drift = nullptr) const {
        check_increments(dW);
        const int m = ops_.channels();
        WaveFunction lx(X.grid());
        if (drift) {
            WaveFunction next = X;
            if (cfg_.scheme == Scheme::euler_maruyama) {
                ops_.G.apply_into(t, X, lx);
                next.axpy(cfg_.dt, lx);
            } else {
                solve_implicit(t + cfg_.dt, next);
            }
            double expected = norm_squared(next);
            for (int l = 0; l < m; ++l) {
                ops_.L[l].apply_into(t, X, lx);
                if (cfg_.scheme == Scheme::semi_implicit) solve_implicit(t + cfg_.dt, lx);
                expected += cfg_.dt * norm_squared(lx);
                next.axpy(dW[l], lx);
            }
            *drift = expected - norm_squared(X);
            check_finite(next, t);
            return next;
        }
        WaveFunction next = X;
        for (int l = 0; l < m; ++l) {
            ops_.L[l].apply_into(t, X, lx);
            next.axpy(dW[l], lx);
        }
        if (cfg_.scheme == Scheme::euler_maruyama) {
            ops_.G.apply_into(t, X, lx);
            next.axpy(cfg_.dt, lx);
        } else {
            solve_implicit(t + cfg_.dt, next);
        }
        check_finite(next, t);
        return next;
    }

    /// Norm-preserving SSE step; renormalises afterwards when configured.
    WaveFunction step_nonlinear(const WaveFunction& Y, double t, std::span<const double> dW) const {
        check_increments(dW);
        if (cfg_.renormalize_nonlinear && std::abs(norm(Y) - 1.0) > 1e-8) {
            throw StepFailure("non-linear step needs a unit-norm state; got norm " + std::to_string(norm(Y)));
        }
        const double dt = cfg_.dt;
        WaveFunction next = Y;
        WaveFunction ly(Y.grid());
        for (int l = 0; l < ops_.channels(); ++l) {
            ops_.L[l].apply_into(t, Y, ly);
            const double m = inner_product(Y, ly).real();
            next.axpy(m * dt + dW[l], ly);
            next.axpy(-0.5 * m * m * dt - m * dW[l], Y);
        }
        if (cfg_.scheme == Scheme::euler_maruyama) {
            ops_.G.apply_into(t, Y, ly);
            next.axpy(dt, ly);
        } else {
            solve_implicit(t + dt, next);
        }
        check_finite(next, t);
        const double nn = norm(next);
        if (nn < 1e-6) throw StepFailure("non-linear step produced a degenerate state (norm < 1e-6)");
        if (cfg_.renormalize_nonlinear) next *= 1.0 / nn;
        return next;
    }

    /// Euler-Maruyama step with G^n = R G R and L^n = L R, R = n (n + C^2)^-1.
    WaveFunction step_regularized(int n, const WaveFunction& X, double t, std::span<const double> dW) const {
        check_increments(dW);
        const WaveFunction rx = resolvent(n, X);
        WaveFunction next = X;
        WaveFunction tmp(X.grid());
        for (int l = 0; l < ops_.channels(); ++l) {
            ops_.L[l].apply_into(t, rx, tmp);
            next.axpy(dW[l], tmp);
        }
        ops_.G.apply_into(t, rx, tmp);
        next.axpy(cfg_.dt, resolvent(n, tmp));
        check_finite(next, t);
        return next;
    }

    WaveFunction resolvent(int n, const WaveFunction& f) const {
        return resolvent_apply(n, f, ops_.C, cfg_.solver_tolerance, 100 * cfg_.max_iterations);
    }

    double boundary_fraction(const WaveFunction& X) const {
        const double total = norm_squared(X);
        return total > 0.0 ? boundary_mass(X, cfg_.boundary_margin) / total : 0.0;
    }

private:
    BandedLU factor(double t) const {
        const double dt = cfg_.dt;
        LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) {
            ops_.G.apply_into(t, x, out);
            out *= -dt;
            out += x;
        };
        return BandedLU::probe(A, ops_.grid(), 2, 2);
    }

    void solve_implicit(double t, WaveFunction& rhs) const {
        if (banded_) {
            if (fixed_lu_) {
                fixed_lu_->solve(rhs.values());
            } else {
                factor(t).solve(rhs.values());
            }
            return;
        }
        const double dt = cfg_.dt;
        LinearOperator A = [&](const WaveFunction& x, WaveFunction& out) {
            ops_.G.apply_into(t, x, out);
            out *= -dt;
            out += x;
        };
        WaveFunction x = rhs;
        const SolveResult r = bicgstab(A, rhs, x, cfg_.solver_tolerance, cfg_.max_iterations);
        if (!r.converged) {
            std::ostringstream s;
            s << "semi-implicit solve failed at t=" << t << ": " << r.iterations << " iterations, relative residual "
              << r.relative_residual;
            throw StepFailure(s.str());
        }
        rhs = std::move(x);
    }

    void check_increments(std::span<const double> dW) const {
        if (static_cast<int>(dW.size()) != ops_.channels()) {
            throw std::invalid_argument("expected one increment per noise channel");
        }
    }

    static void check_finite(const WaveFunction& X, double t) {
        if (!X.all_finite()) throw StepFailure("state became non-finite at t=" + std::to_string(t));
    }

    OperatorSet ops_;
    SchemeConfig cfg_;
    bool banded_ = false;
    std::shared_ptr<const BandedLU> fixed_lu_;
};

inline WaveFunction step_linear(const WaveFunction& X, double t, std::span<const double> dW, const OperatorSet& ops,
                                const SchemeConfig& cfg) {
    return Stepper(ops, cfg).step_linear(X, t, dW);
}

inline WaveFunction step_nonlinear(const WaveFunction& Y, double t, std::span<const double> dW,
                                   const OperatorSet& ops, const SchemeConfig& cfg) {
    return Stepper(ops, cfg).step_nonlinear(Y, t, dW);
}

inline WaveFunction step_regularized(int n, const WaveFunction& X, double t, std::span<const double> dW,
                                     const OperatorSet& ops, const SchemeConfig& cfg) {
    return Stepper(ops, cfg).step_regularized(n, X, t, dW);
}

// ---------------------------------------------------------------------------
// Trajectories and ensembles

enum class DynamicsKind { linear, nonlinear, regularized };

struct Dynamics {
    DynamicsKind kind = DynamicsKind::linear;
    int n = 0;

    static Dynamics linear() { return {DynamicsKind::linear, 0}; }
    static Dynamics nonlinear() { return {DynamicsKind::nonlinear, 0}; }
    static Dynamics regularized(int n) {
        if (n < 1) throw std::invalid_argument("regularization index must be >= 1");
        return {DynamicsKind::regularized, n};
    }
};

/// Values recorded at each sample time.
using Observer = std::function<std::vector<double>(double t, const WaveFunction& state)>;

struct RunOptions {
    int sample_every = 1;  // in steps
    bool keep_final_state = false;
    bool keep_snapshots = false;
    bool track_compensator = false;  // linear runs: accumulate conditional norm drift
};

struct TrajectoryRecord {
    std::uint64_t index = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> values;  // [sample][observer output]
    std::vector<WaveFunction> snapshots;
    std::optional<WaveFunction> final_state;
    double final_norm2 = 0.0;
    double girsanov_weight = 1.0;  // |X_T|^2 for linear and regularised runs, 1 for non-linear
    double max_boundary_fraction = 0.0;
    // sum of E[|X_{k+1}|^2 | X_k] - |X_k|^2 up to each sample time (track_compensator)
    std::vector<double> compensator;
};

/// Number of steps of size dt in [0, T]; rejects T that is not a multiple of dt * sample_every.
inline std::size_t step_count(double T, double dt, int sample_every) {
    if (!(T >= 0.0) || !std::isfinite(T)) throw std::invalid_argument("horizon T must be non-negative");
    if (sample_every < 1) throw std::invalid_argument("sample_every must be >= 1");
    const double k = std::round(T / dt);
    if (std::abs(k * dt - T) > 1e-12 * std::max(1.0, T)) {
        throw std::invalid_argument("dt does not divide T");
    }
    const auto steps = static_cast<std::size_t>(k);
    if (steps % static_cast<std::size_t>(sample_every) != 0) {
        throw std::invalid_argument("sample_every * dt does not divide T");
    }
    return steps;
}

inline TrajectoryRecord run_trajectory(const WaveFunction& xi, double T, const Stepper& stepper,
                                       const NoiseSource& noise, std::uint64_t index, Dynamics dyn,
                                       const Observer& observer, const RunOptions& opt = {}) {
    const SchemeConfig& cfg = stepper.config();
    const std::size_t steps = step_count(T, cfg.dt, opt.sample_every);
    const int m = stepper.operators().channels();
    if (dyn.kind == DynamicsKind::nonlinear && std::abs(norm(xi) - 1.0) > 1e-8) {
        throw std::invalid_argument("non-linear runs need a normalised initial state");
    }

    TrajectoryRecord rec;
    rec.index = index;
    WaveFunction X = xi;
    std::vector<double> dW(static_cast<std::size_t>(m));
    double compensator = 0.0;
    const bool track = opt.track_compensator && dyn.kind == DynamicsKind::linear;

    auto sample = [&](std::size_t k) {
        const double t = static_cast<double>(k) * cfg.dt;
        rec.times.push_back(t);
        if (observer) rec.values.push_back(observer(t, X));
        if (opt.keep_snapshots) rec.snapshots.push_back(X);
        if (opt.track_compensator) rec.compensator.push_back(compensator);
        const double frac = stepper.boundary_fraction(X);
        rec.max_boundary_fraction = std::max(rec.max_boundary_fraction, frac);
        if (frac > cfg.abort_boundary_mass) throw BoundaryAbort(index, t, frac);
    };

    sample(0);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * cfg.dt;
        for (int l = 0; l < m; ++l) dW[l] = noise.increment(index, static_cast<std::uint32_t>(l), k, cfg.dt);
        switch (dyn.kind) {
            case DynamicsKind::linear: {
                double drift = 0.0;
                X = stepper.step_linear(X, t, dW, track ? &drift : nullptr);
                compensator += drift;
                break;
            }
            case DynamicsKind::nonlinear: X = stepper.step_nonlinear(X, t, dW); break;
            case DynamicsKind::regularized: X = stepper.step_regularized(dyn.n, X, t, dW); break;
        }
        if ((k + 1) % static_cast<std::size_t>(opt.sample_every) == 0) sample(k + 1);
    }
    rec.final_norm2 = norm_squared(X);
    rec.girsanov_weight = dyn.kind == DynamicsKind::nonlinear ? 1.0 : rec.final_norm2;
    if (opt.keep_final_state) rec.final_state = X;
    return rec;
}

/// Runs trajectories 0..n_traj-1; records come back in trajectory order.
inline std::vector<TrajectoryRecord> run_ensemble(const WaveFunction& xi, double T, const Stepper& stepper,
                                                  const NoiseSource& noise, Dynamics dyn, const Observer& observer,
                                                  std::size_t n_traj, int threads, const RunOptions& opt = {}) {
    if (n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
    const SchemeConfig& cfg = stepper.config();
    if (cfg.scheme == Scheme::euler_maruyama && dyn.kind != DynamicsKind::regularized) {
        const double rho = spectral_radius_estimate(stepper.operators(), 0.0);
        const double growth = rho * rho * cfg.dt * T;
        if (growth > std::log(2.0)) {
            std::ostringstream s;
            s << "explicit Euler-Maruyama may amplify the highest grid mode by a factor " << std::exp(0.5 * growth)
              << " over T=" << T << "; consider semi_implicit";
            log::warn(s.str());
        }
    }
    std::function<TrajectoryRecord(std::size_t)> one = [&](std::size_t k) {
        return run_trajectory(xi, T, stepper, noise, k, dyn, observer, opt);
    };
    return parallel_map<TrajectoryRecord>(n_traj, threads, one);
}

}  // namespace qtraj
