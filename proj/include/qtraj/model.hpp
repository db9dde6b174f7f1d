#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtraj/field.hpp"
#include "qtraj/grid.hpp"
#include "qtraj/log.hpp"

namespace qtraj {

/**
 * Model functions of the Hamiltonian
 *   H(t) = -alpha Lap + i sum_j (A^j d_j + d_j A^j) + V
 * and noise operators
 *   L_l(t) = sum_j sigma_lj d_j + eta_l,   l = 0..m-1.
 *
 * Empty A means A = 0; an empty row sigma[l] means sigma_l. = 0.
 */
struct CoefficientSet {
    int dimension = 1;
    double alpha = 0.0;
    ScalarField V;
    std::vector<ScalarField> A;
    std::vector<std::vector<ScalarField>> sigma;
    std::vector<ScalarField> eta;

    int channels() const { return static_cast<int>(eta.size()); }

    const ScalarField& A_at(int j) const {
        static const ScalarField zero;
        return A.empty() ? zero : A[static_cast<std::size_t>(j)];
    }
    const ScalarField& sigma_at(int l, int j) const {
        static const ScalarField zero;
        const auto& row = sigma[static_cast<std::size_t>(l)];
        return row.empty() ? zero : row[static_cast<std::size_t>(j)];
    }
    bool has_sigma(int l) const {
        for (int j = 0; j < dimension; ++j) {
            if (!sigma_at(l, j).is_zero()) return true;
        }
        return false;
    }
    bool has_magnetic() const {
        for (int j = 0; j < dimension; ++j) {
            if (!A_at(j).is_zero()) return true;
        }
        return false;
    }

    bool time_dependent() const {
        bool td = V.time_dependent();
        for (const auto& a : A) td = td || a.time_dependent();
        for (const auto& row : sigma) {
            for (const auto& s : row) td = td || s.time_dependent();
        }
        for (const auto& e : eta) td = td || e.time_dependent();
        return td;
    }

    void validate(const GridSpec& g) const {
        if (dimension != g.dimension()) throw std::invalid_argument("coefficient dimension differs from grid");
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be non-negative");
        if (!A.empty() && static_cast<int>(A.size()) != dimension) {
            throw std::invalid_argument("A must have d components");
        }
        if (sigma.size() != eta.size()) throw std::invalid_argument("sigma and eta must have m rows");
        for (const auto& row : sigma) {
            if (!row.empty() && static_cast<int>(row.size()) != dimension) {
                throw std::invalid_argument("each sigma row must have d components");
            }
        }
    }
};

/// Coefficient fields sampled on the grid at one time. Zero fields stay empty.
struct SampledCoefficients {
    double t = 0.0;
    std::vector<cplx> V;
    std::vector<std::vector<cplx>> A;                   // [j]
    std::vector<std::vector<std::vector<cplx>>> sigma;  // [l][j]
    std::vector<std::vector<cplx>> eta;                 // [l]
};

/**
 * Samples coefficient fields on demand. Time-independent sets are sampled once;
 * otherwise a bounded, mutex-guarded cache keyed by t serves concurrent callers.
 */
class CoefficientSampler {
public:
    CoefficientSampler(GridSpec grid, CoefficientSet coeffs)
        : grid_(std::move(grid)), coeffs_(std::move(coeffs)) {
        coeffs_.validate(grid_);
        time_dependent_ = coeffs_.time_dependent();
        if (!time_dependent_) fixed_ = std::make_shared<const SampledCoefficients>(compute(0.0));
    }

    const GridSpec& grid() const { return grid_; }
    const CoefficientSet& coefficients() const { return coeffs_; }
    bool time_dependent() const { return time_dependent_; }

    std::shared_ptr<const SampledCoefficients> at(double t) const {
        if (!time_dependent_) return fixed_;
        {
            std::lock_guard lock(mutex_);
            auto it = cache_.find(t);
            if (it != cache_.end()) return it->second;
        }
        auto s = std::make_shared<const SampledCoefficients>(compute(t));
        std::lock_guard lock(mutex_);
        if (cache_.size() >= max_cached) {
            cache_.erase(order_.front());
            order_.erase(order_.begin());
        }
        if (cache_.emplace(t, s).second) order_.push_back(t);
        return s;
    }

private:
    static constexpr std::size_t max_cached = 64;

    std::vector<cplx> sample_real(const ScalarField& f, double t, const char* what) const {
        auto s = sample(f, grid_, t);
        for (auto& v : s) {
            if (std::abs(v.imag()) > 1e-12 * (1.0 + std::abs(v.real()))) {
                std::ostringstream msg;
                msg << what << " must be real-valued; got imaginary part " << v.imag() << " at t=" << t;
                throw std::invalid_argument(msg.str());
            }
            v = v.real();
        }
        return s;
    }

    SampledCoefficients compute(double t) const {
        SampledCoefficients s;
        s.t = t;
        const int d = coeffs_.dimension;
        if (!coeffs_.V.is_zero()) s.V = sample_real(coeffs_.V, t, "V");
        s.A.resize(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) {
            if (!coeffs_.A_at(j).is_zero()) s.A[j] = sample_real(coeffs_.A_at(j), t, "A");
        }
        const int m = coeffs_.channels();
        s.sigma.resize(static_cast<std::size_t>(m));
        s.eta.resize(static_cast<std::size_t>(m));
        for (int l = 0; l < m; ++l) {
            s.sigma[l].resize(static_cast<std::size_t>(d));
            for (int j = 0; j < d; ++j) {
                if (!coeffs_.sigma_at(l, j).is_zero()) s.sigma[l][j] = sample(coeffs_.sigma_at(l, j), grid_, t);
            }
            if (!coeffs_.eta[l].is_zero()) s.eta[l] = sample(coeffs_.eta[l], grid_, t);
        }
        return s;
    }

    GridSpec grid_;
    CoefficientSet coeffs_;
    bool time_dependent_ = false;
    std::shared_ptr<const SampledCoefficients> fixed_;
    mutable std::mutex mutex_;
    mutable std::map<double, std::shared_ptr<const SampledCoefficients>> cache_;
    mutable std::vector<double> order_;
};

/**
 * Matrix-free, time-parameterised linear map with its exact discrete adjoint.
 *
 * Kernels write into a caller-supplied output that must not alias the input.
 */
class OperatorHandle {
public:
    using Kernel = std::function<void(double, const WaveFunction&, WaveFunction&)>;

    OperatorHandle(GridSpec grid, std::string label, Kernel apply, Kernel adjoint, bool time_dependent)
        : grid_(std::move(grid)), label_(std::move(label)), apply_(std::move(apply)),
          adjoint_(std::move(adjoint)), time_dependent_(time_dependent) {}

    static OperatorHandle identity(const GridSpec& g) {
        Kernel k = [](double, const WaveFunction& f, WaveFunction& out) { out = f; };
        return OperatorHandle(g, "I", k, k, false);
    }

    const GridSpec& grid() const { return grid_; }
    const std::string& label() const { return label_; }
    bool time_dependent() const { return time_dependent_; }

    void apply_into(double t, const WaveFunction& f, WaveFunction& out) const { apply_(t, f, out); }
    void adjoint_apply_into(double t, const WaveFunction& f, WaveFunction& out) const {
        adjoint_(t, f, out);
    }
    WaveFunction apply(double t, const WaveFunction& f) const {
        WaveFunction out(f.grid());
        apply_(t, f, out);
        return out;
    }
    WaveFunction adjoint_apply(double t, const WaveFunction& f) const {
        WaveFunction out(f.grid());
        adjoint_(t, f, out);
        return out;
    }

private:
    GridSpec grid_;
    std::string label_;
    Kernel apply_;
    Kernel adjoint_;
    bool time_dependent_;
};

namespace detail {

// out += scale * phi .* f   (phi empty means zero)
inline void add_product(std::span<const cplx> phi, const WaveFunction& f, cplx scale, WaveFunction& out) {
    if (phi.empty()) return;
    for (std::size_t i = 0; i < f.size(); ++i) out[i] += scale * phi[i] * f[i];
}

inline void multiply_into(std::span<const cplx> phi, const WaveFunction& f, WaveFunction& out,
                          bool conjugate = false) {
    if (conjugate) {
        for (std::size_t i = 0; i < f.size(); ++i) out[i] = std::conj(phi[i]) * f[i];
    } else {
        for (std::size_t i = 0; i < f.size(); ++i) out[i] = phi[i] * f[i];
    }
}

inline void hamiltonian_kernel(const CoefficientSampler& s, double t, const WaveFunction& f, WaveFunction& out) {
    const auto c = s.at(t);
    const auto& co = s.coefficients();
    out.fill(0.0);
    if (co.alpha != 0.0) {
        for (int a = 0; a < f.grid().dimension(); ++a) add_second_difference(f, a, -co.alpha, out);
    }
    detail::add_product(c->V, f, 1.0, out);
    WaveFunction tmp(f.grid()), der(f.grid());
    for (int j = 0; j < f.grid().dimension(); ++j) {
        const auto& A = c->A[j];
        if (A.empty()) continue;
        // i (A d_j f + d_j (A f))
        apply_derivative_into(f, j, der);
        add_product(A, der, I, out);
        multiply_into(A, f, tmp);
        apply_derivative_into(tmp, j, der);
        out.axpy(I, der);
    }
}

inline void noise_kernel(const CoefficientSampler& s, int l, double t, const WaveFunction& f, WaveFunction& out) {
    const auto c = s.at(t);
    out.fill(0.0);
    WaveFunction der(f.grid());
    for (int j = 0; j < f.grid().dimension(); ++j) {
        const auto& sig = c->sigma[l][j];
        if (sig.empty()) continue;
        apply_derivative_into(f, j, der);
        add_product(sig, der, 1.0, out);
    }
    add_product(c->eta[l], f, 1.0, out);
}

// L* f = -sum_j d_j(conj(sigma_j) f) + conj(eta) f, exact for the antisymmetric stencil.
inline void noise_adjoint_kernel(const CoefficientSampler& s, int l, double t, const WaveFunction& f,
                                 WaveFunction& out) {
    const auto c = s.at(t);
    out.fill(0.0);
    WaveFunction tmp(f.grid()), der(f.grid());
    for (int j = 0; j < f.grid().dimension(); ++j) {
        const auto& sig = c->sigma[l][j];
        if (sig.empty()) continue;
        multiply_into(sig, f, tmp, true);
        apply_derivative_into(tmp, j, der);
        out -= der;
    }
    const auto& eta = c->eta[l];
    if (!eta.empty()) {
        for (std::size_t i = 0; i < f.size(); ++i) out[i] += std::conj(eta[i]) * f[i];
    }
}

}  // namespace detail

/// H, the noise operators L_l, G = -iH - 1/2 sum L*L and the reference operator C, sharing one sampler.
struct OperatorSet {
    std::shared_ptr<const CoefficientSampler> sampler;
    OperatorHandle H;
    std::vector<OperatorHandle> L;
    OperatorHandle G;
    OperatorHandle C;

    const GridSpec& grid() const { return sampler->grid(); }
    const CoefficientSet& coefficients() const { return sampler->coefficients(); }
    int channels() const { return static_cast<int>(L.size()); }
};

inline OperatorHandle build_H(std::shared_ptr<const CoefficientSampler> s) {
    s->at(0.0);  // reject complex V / A early
    auto k = [s](double t, const WaveFunction& f, WaveFunction& out) { detail::hamiltonian_kernel(*s, t, f, out); };
    return OperatorHandle(s->grid(), "H", k, k, s->time_dependent());
}

inline OperatorHandle build_H(const GridSpec& g, const CoefficientSet& coeffs) {
    return build_H(std::make_shared<const CoefficientSampler>(g, coeffs));
}

inline OperatorHandle build_L(std::shared_ptr<const CoefficientSampler> s, int channel) {
    if (channel < 0 || channel >= s->coefficients().channels()) {
        throw std::invalid_argument("noise channel " + std::to_string(channel) + " out of range");
    }
    auto a = [s, channel](double t, const WaveFunction& f, WaveFunction& out) {
        detail::noise_kernel(*s, channel, t, f, out);
    };
    auto b = [s, channel](double t, const WaveFunction& f, WaveFunction& out) {
        detail::noise_adjoint_kernel(*s, channel, t, f, out);
    };
    return OperatorHandle(s->grid(), "L" + std::to_string(channel), a, b, s->time_dependent());
}

inline OperatorHandle build_L(const GridSpec& g, const CoefficientSet& coeffs, int channel) {
    return build_L(std::make_shared<const CoefficientSampler>(g, coeffs), channel);
}

inline OperatorHandle build_G(std::shared_ptr<const CoefficientSampler> s) {
    s->at(0.0);
    const int m = s->coefficients().channels();
    auto apply = [s, m](double t, const WaveFunction& f, WaveFunction& out) {
        detail::hamiltonian_kernel(*s, t, f, out);
        out *= -I;
        WaveFunction lf(f.grid()), llf(f.grid());
        for (int l = 0; l < m; ++l) {
            detail::noise_kernel(*s, l, t, f, lf);
            detail::noise_adjoint_kernel(*s, l, t, lf, llf);
            out.axpy(-0.5, llf);
        }
    };
    auto adjoint = [s, m](double t, const WaveFunction& f, WaveFunction& out) {
        detail::hamiltonian_kernel(*s, t, f, out);
        out *= I;
        WaveFunction lf(f.grid()), llf(f.grid());
        for (int l = 0; l < m; ++l) {
            detail::noise_kernel(*s, l, t, f, lf);
            detail::noise_adjoint_kernel(*s, l, t, lf, llf);
            out.axpy(-0.5, llf);
        }
    };
    return OperatorHandle(s->grid(), "G", apply, adjoint, s->time_dependent());
}

inline OperatorHandle build_G(const GridSpec& g, const CoefficientSet& coeffs) {
    return build_G(std::make_shared<const CoefficientSampler>(g, coeffs));
}

/// C = -Lap + |x|^2.
inline OperatorHandle build_C(const GridSpec& g) {
    auto r2 = std::make_shared<std::vector<double>>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) (*r2)[i] = g.radius_squared(i);
    auto k = [r2](double, const WaveFunction& f, WaveFunction& out) {
        out.fill(0.0);
        for (int a = 0; a < f.grid().dimension(); ++a) add_second_difference(f, a, -1.0, out);
        for (std::size_t i = 0; i < f.size(); ++i) out[i] += (*r2)[i] * f[i];
    };
    return OperatorHandle(g, "C", k, k, false);
}

inline OperatorSet build_operators(const GridSpec& g, const CoefficientSet& coeffs) {
    auto s = std::make_shared<const CoefficientSampler>(g, coeffs);
    std::vector<OperatorHandle> L;
    for (int l = 0; l < coeffs.channels(); ++l) L.push_back(build_L(s, l));
    return OperatorSet{s, build_H(s), std::move(L), build_G(s), build_C(g)};
}

// ---------------------------------------------------------------------------
// Observables A = B1* B2 with factors from the d_k M_a, M_b d_k, M_c classes.

enum class FactorKind { derivative_times_multiplier, multiplier_times_derivative, multiplier };

struct ObservableFactor {
    FactorKind kind = FactorKind::multiplier;
    ScalarField field = ScalarField::constant(1.0);
    int axis = 0;

    static ObservableFactor derivative_of(ScalarField a, int axis) {
        return {FactorKind::derivative_times_multiplier, std::move(a), axis};
    }
    static ObservableFactor times_derivative(ScalarField b, int axis) {
        return {FactorKind::multiplier_times_derivative, std::move(b), axis};
    }
    static ObservableFactor multiplier(ScalarField c) { return {FactorKind::multiplier, std::move(c), 0}; }
};

struct ObservableSpec {
    ObservableFactor left;   // B1
    ObservableFactor right;  // B2
    std::string label;

    static ObservableSpec identity() {
        return {ObservableFactor::multiplier(ScalarField::constant(1.0)),
                ObservableFactor::multiplier(ScalarField::constant(1.0)), "norm"};
    }
    /// M_{x_axis} = M_1* M_x
    static ObservableSpec position(int axis) {
        return {ObservableFactor::multiplier(ScalarField::constant(1.0)),
                ObservableFactor::multiplier(Expr::x(axis)), axis == 0 ? "x" : "y"};
    }
    /// M_{x^2} = M_x* M_x
    static ObservableSpec position_squared(int axis) {
        return {ObservableFactor::multiplier(Expr::x(axis)), ObservableFactor::multiplier(Expr::x(axis)),
                axis == 0 ? "x^2" : "y^2"};
    }
    /// P^2 along one axis = (d M_1)* (d M_1)
    static ObservableSpec momentum_squared(int axis) {
        return {ObservableFactor::derivative_of(ScalarField::constant(1.0), axis),
                ObservableFactor::derivative_of(ScalarField::constant(1.0), axis), axis == 0 ? "px^2" : "py^2"};
    }
};

/// Observable with factor fields sampled on a fixed grid.
class PreparedObservable {
public:
    PreparedObservable(const ObservableSpec& spec, const GridSpec& g)
        : spec_(spec), grid_(g), left_(prepare(spec.left, g)), right_(prepare(spec.right, g)) {}

    const ObservableSpec& spec() const { return spec_; }

    void apply_left(const WaveFunction& f, WaveFunction& out) const { apply(spec_.left, left_, f, out); }
    void apply_right(const WaveFunction& f, WaveFunction& out) const { apply(spec_.right, right_, f, out); }

    /// <B1 f, B2 g>
    cplx pairing(const WaveFunction& f, const WaveFunction& g) const {
        WaveFunction a(f.grid()), b(f.grid());
        apply_left(f, a);
        apply_right(g, b);
        return inner_product(a, b);
    }

private:
    static std::vector<cplx> prepare(const ObservableFactor& fac, const GridSpec& g) {
        if (fac.axis < 0 || fac.axis >= g.dimension()) throw std::invalid_argument("observable axis out of range");
        auto s = sample(fac.field, g, 0.0);
        for (auto& v : s) {
            if (std::abs(v.imag()) > 1e-12 * (1.0 + std::abs(v.real()))) {
                throw std::invalid_argument("observable factor fields must be real");
            }
        }
        check_field(s, g.size());
        return s;
    }

    static void apply(const ObservableFactor& fac, const std::vector<cplx>& phi, const WaveFunction& f,
                      WaveFunction& out) {
        switch (fac.kind) {
            case FactorKind::multiplier:
                detail::multiply_into(phi, f, out);
                break;
            case FactorKind::multiplier_times_derivative: {
                WaveFunction der(f.grid());
                apply_derivative_into(f, fac.axis, der);
                detail::multiply_into(phi, der, out);
                break;
            }
            case FactorKind::derivative_times_multiplier: {
                WaveFunction tmp(f.grid());
                detail::multiply_into(phi, f, tmp);
                apply_derivative_into(tmp, fac.axis, out);
                break;
            }
        }
    }

    ObservableSpec spec_;
    GridSpec grid_;
    std::vector<cplx> left_;
    std::vector<cplx> right_;
};

// ---------------------------------------------------------------------------
// Numeric probes of the growth and regularity hypotheses. These are evidence
// gathered on a finite grid, not proofs.

/// Smallest K with |q(x)| <= K w(x) over the grid, w = 1, 1+|x| or 1+|x|^2.
struct GrowthBound {
    std::string name;
    int weight_power = 0;
    double constant = 0.0;
    double ring_max = 0.0;      // max ratio over nodes with |x|_inf >= 0.9 L
    double mid_max = 0.0;       // max ratio over |x| <= L/2
    double interior_max = 0.0;  // max ratio over |x| <= L/4
    bool unbounded = false;     // ratio still growing at the boundary ring
};

inline GrowthBound measure_growth(std::string name, const GridSpec& g, const std::vector<double>& q,
                                  int weight_power) {
    GrowthBound b;
    b.name = std::move(name);
    b.weight_power = weight_power;
    const double L = g.half_width();
    for (std::size_t i = 0; i < g.size(); ++i) {
        Point x = g.position(i);
        const double r = std::sqrt(x[0] * x[0] + x[1] * x[1]);
        const double w = weight_power == 0 ? 1.0 : (weight_power == 1 ? 1.0 + r : 1.0 + r * r);
        const double ratio = q[i] / w;
        b.constant = std::max(b.constant, ratio);
        const double rinf = std::max(std::abs(x[0]), std::abs(x[1]));
        if (rinf >= 0.9 * L) b.ring_max = std::max(b.ring_max, ratio);
        if (r <= 0.5 * L) b.mid_max = std::max(b.mid_max, ratio);
        if (r <= 0.25 * L) b.interior_max = std::max(b.interior_max, ratio);
    }
    b.unbounded = b.ring_max > 1e-10 && b.ring_max > 1.5 * b.mid_max;
    return b;
}

struct GrowthReport {
    std::vector<GrowthBound> bounds;  // H4.1 and the common part of H4.2
    std::vector<GrowthBound> branch_a_bounds;
    bool branch_a = false;            // all branch (a) bounds finite
    bool branch_b = false;            // sigma independent of x
    bool h41 = false;
    bool h42 = false;

    const GrowthBound* find(const std::string& name) const {
        for (const auto* list : {&bounds, &branch_a_bounds}) {
            for (const auto& b : *list) {
                if (b.name == name) return &b;
            }
        }
        return nullptr;
    }
};

/// Measures every growth bound required of V, A, sigma and eta at time t.
inline GrowthReport check_growth(const CoefficientSet& co, const GridSpec& g, double t) {
    co.validate(g);
    const int d = co.dimension;
    const std::size_t n = g.size();
    auto field_abs = [&](const ScalarField& f, const MultiIndex& mu) {
        auto s = sample(f, g, t, mu);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(s[i]);
        return out;
    };
    auto max_into = [](std::vector<double>& acc, const std::vector<double>& v) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = std::max(acc[i], v[i]);
    };
    GrowthReport rep;

    std::vector<double> lapV(n, 0.0);
    {
        std::vector<cplx> acc(n);
        for (int j = 0; j < d; ++j) {
            auto s = sample(co.V, g, t, unit_index(j, 2));
            for (std::size_t i = 0; i < n; ++i) acc[i] += s[i];
        }
        for (std::size_t i = 0; i < n; ++i) lapV[i] = std::abs(acc[i]);
    }
    std::vector<double> dlapA(n, 0.0), gradV(n, 0.0), absA(n, 0.0), hessA(n, 0.0), jacA(n, 0.0);
    for (int j = 0; j < d; ++j) {
        const ScalarField& Aj = co.A_at(j);
        std::vector<cplx> acc(n);
        for (int k = 0; k < d; ++k) {
            auto s = sample(Aj, g, t, add_index(unit_index(k, 2), unit_index(j)));
            for (std::size_t i = 0; i < n; ++i) acc[i] += s[i];
        }
        std::vector<double> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = std::abs(acc[i]);
        max_into(dlapA, a);
        max_into(gradV, field_abs(co.V, unit_index(j)));
        max_into(absA, field_abs(Aj, {0, 0}));
        for (int jp = 0; jp < d; ++jp) {
            max_into(hessA, field_abs(Aj, add_index(unit_index(jp), unit_index(j))));
            max_into(jacA, field_abs(Aj, unit_index(jp)));
        }
    }
    rep.bounds.push_back(measure_growth("|V|", g, field_abs(co.V, {0, 0}), 2));
    rep.bounds.push_back(measure_growth("|Lap V|", g, lapV, 2));
    rep.bounds.push_back(measure_growth("|d_j Lap A^j|", g, dlapA, 2));
    rep.bounds.push_back(measure_growth("|d_j V|", g, gradV, 1));
    rep.bounds.push_back(measure_growth("|A^j|", g, absA, 1));
    rep.bounds.push_back(measure_growth("|d_j' d_j A^j|", g, hessA, 1));
    rep.bounds.push_back(measure_growth("|d_j' A^j|", g, jacA, 0));
    rep.h41 = std::none_of(rep.bounds.begin(), rep.bounds.end(), [](const auto& b) { return b.unbounded; });

    std::vector<double> absSigma(n, 0.0), etaDer(n, 0.0), absEta(n, 0.0), sigmaDer(n, 0.0);
    bool sigma_constant = true;
    for (int l = 0; l < co.channels(); ++l) {
        for (int k = 0; k < d; ++k) {
            const ScalarField& s = co.sigma_at(l, k);
            max_into(absSigma, field_abs(s, {0, 0}));
            max_into(sigmaDer, field_abs(s, {0, 0}));
            auto vals = sample(s, g, t);
            const cplx origin = s(t, Point{0.0, 0.0});
            for (const auto& v : vals) {
                if (std::abs(v - origin) > 1e-12 * (1.0 + std::abs(origin))) sigma_constant = false;
            }
        }
        max_into(absEta, field_abs(co.eta[l], {0, 0}));
        for (int a = 0; a <= 3; ++a) {
            for (int b = 0; a + b <= 3; ++b) {
                if (a + b == 0 || (d == 1 && b > 0)) continue;
                max_into(etaDer, field_abs(co.eta[l], {a, b}));
                for (int k = 0; k < d; ++k) max_into(sigmaDer, field_abs(co.sigma_at(l, k), {a, b}));
            }
        }
    }
    const std::size_t common_start = rep.bounds.size();
    rep.bounds.push_back(measure_growth("|sigma_lk|", g, absSigma, 0));
    rep.bounds.push_back(measure_growth("|D^mu eta_l|, 1<=|mu|<=3", g, etaDer, 0));
    bool common = true;
    for (std::size_t k = common_start; k < rep.bounds.size(); ++k) common = common && !rep.bounds[k].unbounded;

    rep.branch_a_bounds.push_back(measure_growth("|eta_l|", g, absEta, 0));
    rep.branch_a_bounds.push_back(measure_growth("|D^mu sigma_lk|, |mu|<=3", g, sigmaDer, 0));
    rep.branch_a = std::none_of(rep.branch_a_bounds.begin(), rep.branch_a_bounds.end(),
                                [](const auto& b) { return b.unbounded; });
    rep.branch_b = sigma_constant;
    rep.h42 = common && (rep.branch_a || rep.branch_b);
    return rep;
}

/**
 * max over nodes and (j, h, k) of
 *   | sum_l sigma_lk d_j conj(sigma_lh) - conj(sigma_lk) d_j sigma_lh |.
 * Zero when the phase compatibility condition holds.
 */
inline double check_phase_condition(const CoefficientSet& co, const GridSpec& g, double t) {
    co.validate(g);
    const int d = co.dimension;
    const int m = co.channels();
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        Point x = g.position(i);
        for (int j = 0; j < d; ++j) {
            for (int h = 0; h < d; ++h) {
                for (int k = 0; k < d; ++k) {
                    cplx acc = 0.0;
                    for (int l = 0; l < m; ++l) {
                        const ScalarField& sk = co.sigma_at(l, k);
                        const ScalarField& sh = co.sigma_at(l, h);
                        if (sk.is_zero() || sh.is_zero()) continue;
                        cplx vk = sk(t, x);
                        cplx dh = sh.derivative(t, x, unit_index(j), g.spacing());
                        acc += vk * std::conj(dh) - std::conj(vk) * dh;
                    }
                    worst = std::max(worst, std::abs(acc));
                }
            }
        }
    }
    return worst;
}

/**
 * Empirical lower bound for the regularity rate alpha(t):
 *   max_x (2 Re<C^2 x, G x> + sum_l |C L_l x|^2) / (|x|^2 + |Cx|^2)
 * over the supplied samples.
 */
inline double estimate_alpha(const OperatorSet& ops, double t, const std::vector<WaveFunction>& samples) {
    if (samples.empty()) throw std::invalid_argument("estimate_alpha needs at least one sample");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& x : samples) {
        WaveFunction cx = ops.C.apply(t, x);
        WaveFunction gx = ops.G.apply(t, x);
        WaveFunction cgx = ops.C.apply(t, gx);
        double num = 2.0 * inner_product(cx, cgx).real();
        for (const auto& L : ops.L) num += norm_squared(ops.C.apply(t, L.apply(t, x)));
        const double den = norm_squared(x) + norm_squared(cx);
        best = std::max(best, num / den);
    }
    return best;
}

}  // namespace qtraj
