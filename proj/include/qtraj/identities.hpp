#pragma once

#include <functional>
#include <map>
#include <tuple>
#include <vector>

#include "qtraj/field.hpp"
#include "qtraj/grid.hpp"
#include "qtraj/log.hpp"
#include "qtraj/model.hpp"

// Closed-form expansions of commutators and of the dissipative part
//   D(X) = 1/2 sum_l (L_l*[X, L_l] + [L_l*, X] L_l)
// of the Lindblad generator, each applied to a grid function. The same
// objects composed directly from the matrix-free operators are provided for
// comparison; the two agree to O(h^2) on smooth interior-supported f.

namespace qtraj {

namespace detail {

/// Sampled coefficient derivatives, cached per (field, multi-index).
class DerivativeTable {
public:
    DerivativeTable(const CoefficientSet& co, const GridSpec& g, double t) : co_(co), g_(g), t_(t) {}

    const std::vector<cplx>& V(MultiIndex mu) { return get(0, 0, 0, mu, co_.V); }
    const std::vector<cplx>& A(int j, MultiIndex mu) { return get(1, 0, j, mu, co_.A_at(j)); }
    const std::vector<cplx>& sigma(int l, int k, MultiIndex mu) { return get(2, l, k, mu, co_.sigma_at(l, k)); }
    const std::vector<cplx>& eta(int l, MultiIndex mu) { return get(3, l, 0, mu, co_.eta[l]); }

private:
    const std::vector<cplx>& get(int kind, int l, int k, MultiIndex mu, const ScalarField& f) {
        auto key = std::make_tuple(kind, l, k, mu[0], mu[1]);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(key, sample(f, g_, t_, mu)).first->second;
    }

    const CoefficientSet& co_;
    const GridSpec& g_;
    double t_;
    std::map<std::tuple<int, int, int, int, int>, std::vector<cplx>> cache_;
};

inline MultiIndex mi(std::initializer_list<int> axes) {
    MultiIndex mu{0, 0};
    for (int a : axes) mu[a] += 1;
    return mu;
}

/// d_j d_k f using the compact stencil on the diagonal.
inline WaveFunction second_derivative(const WaveFunction& f, int j, int k) {
    if (j == k) {
        WaveFunction out(f.grid());
        add_second_difference(f, j, 1.0, out);
        return out;
    }
    return apply_derivative(apply_derivative(f, k), j);
}

inline void add_term(WaveFunction& out, const std::vector<cplx>& phi, const WaveFunction& g, cplx scale = 1.0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * phi[i] * g[i];
}

inline std::vector<cplx> combine(std::size_t n, const std::function<cplx(std::size_t)>& fn) {
    std::vector<cplx> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
}

inline void warn_if_near_boundary(const WaveFunction& f, const char* what) {
    // stencils of the closed forms reach at most three nodes
    const double margin = 4.0 * f.grid().spacing();
    const double mass = boundary_mass(f, margin);
    if (mass > 1e-10 * norm_squared(f)) {
        log::warn(std::string(what) + ": test function has boundary mass " + std::to_string(mass / norm_squared(f)) +
                  " (relative); the closed form is unreliable near the box edge");
    }
}

}  // namespace detail

/// [H, C] f from the expanded formula.
inline WaveFunction commutator_HC(const CoefficientSet& co, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    detail::warn_if_near_boundary(f, "commutator_HC");
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const std::size_t n = g.size();
    WaveFunction out(g);
    std::vector<WaveFunction> df;
    for (int j = 0; j < d; ++j) df.push_back(apply_derivative(f, j));

    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) {
            if (co.A_at(j).is_zero()) continue;
            detail::add_term(out, T.A(j, detail::mi({k})), detail::second_derivative(f, k, j), 4.0 * I);
        }
    }
    for (int j = 0; j < d; ++j) {
        auto coef = detail::combine(n, [&](std::size_t i) -> cplx {
            cplx c = 2.0 * T.V(detail::mi({j}))[i] - 4.0 * co.alpha * g.position(i)[j];
            for (int k = 0; k < d; ++k) {
                c += 2.0 * I * T.A(j, detail::mi({k, k}))[i];
                c += 2.0 * I * T.A(k, detail::mi({j, k}))[i];
            }
            return c;
        });
        detail::add_term(out, coef, df[j]);
    }
    auto coef0 = detail::combine(n, [&](std::size_t i) -> cplx {
        cplx c = -2.0 * co.alpha * d;
        Point x = g.position(i);
        for (int j = 0; j < d; ++j) {
            c += T.V(detail::mi({j, j}))[i];
            for (int k = 0; k < d; ++k) c += I * T.A(j, detail::mi({j, k, k}))[i];
            c += 4.0 * I * x[j] * T.A(j, {0, 0})[i];
        }
        return c;
    });
    detail::add_term(out, coef0, f);
    return out;
}

/// [C, L_l] f from the expanded formula.
inline WaveFunction commutator_CL(const CoefficientSet& co, int l, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    if (l < 0 || l >= co.channels()) throw std::invalid_argument("noise channel out of range");
    detail::warn_if_near_boundary(f, "commutator_CL");
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const std::size_t n = g.size();
    WaveFunction out(g);
    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) {
            if (co.sigma_at(l, k).is_zero()) continue;
            detail::add_term(out, T.sigma(l, k, detail::mi({j})), detail::second_derivative(f, j, k), -2.0);
        }
    }
    for (int k = 0; k < d; ++k) {
        auto coef = detail::combine(n, [&](std::size_t i) -> cplx {
            cplx c = -2.0 * T.eta(l, detail::mi({k}))[i];
            for (int j = 0; j < d; ++j) c -= T.sigma(l, k, detail::mi({j, j}))[i];
            return c;
        });
        detail::add_term(out, coef, apply_derivative(f, k));
    }
    auto coef0 = detail::combine(n, [&](std::size_t i) -> cplx {
        cplx c = 0.0;
        Point x = g.position(i);
        for (int j = 0; j < d; ++j) {
            c -= T.eta(l, detail::mi({j, j}))[i];
            c -= 2.0 * x[j] * T.sigma(l, j, {0, 0})[i];
        }
        return c;
    });
    detail::add_term(out, coef0, f);
    return out;
}

/// L_l* L_l f from the expanded second-order form.
inline WaveFunction lstar_l_expansion(const CoefficientSet& co, int l, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    if (l < 0 || l >= co.channels()) throw std::invalid_argument("noise channel out of range");
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const std::size_t n = g.size();
    WaveFunction out(g);
    const auto& eta = T.eta(l, {0, 0});
    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) {
            if (co.sigma_at(l, j).is_zero() || co.sigma_at(l, k).is_zero()) continue;
            const auto& sj = T.sigma(l, j, {0, 0});
            const auto& sk = T.sigma(l, k, {0, 0});
            auto coef = detail::combine(n, [&](std::size_t i) { return -std::conj(sj[i]) * sk[i]; });
            detail::add_term(out, coef, detail::second_derivative(f, j, k));
        }
    }
    for (int k = 0; k < d; ++k) {
        const auto& sk = T.sigma(l, k, {0, 0});
        auto coef = detail::combine(n, [&](std::size_t i) -> cplx {
            cplx c = -std::conj(sk[i]) * eta[i] + std::conj(eta[i]) * sk[i];
            for (int j = 0; j < d; ++j) {
                c -= std::conj(T.sigma(l, j, {0, 0})[i]) * T.sigma(l, k, detail::mi({j}))[i];
                c -= std::conj(T.sigma(l, j, detail::mi({j}))[i]) * sk[i];
            }
            return c;
        });
        detail::add_term(out, coef, apply_derivative(f, k));
    }
    auto coef0 = detail::combine(n, [&](std::size_t i) -> cplx {
        cplx c = std::conj(eta[i]) * eta[i];
        for (int j = 0; j < d; ++j) {
            c -= std::conj(T.sigma(l, j, {0, 0})[i]) * T.eta(l, detail::mi({j}))[i];
            c -= std::conj(T.sigma(l, j, detail::mi({j}))[i]) * eta[i];
        }
        return c;
    });
    detail::add_term(out, coef0, f);
    return out;
}

namespace detail {

// (sigma* sigma)_kj = sum_l conj(sigma_lk) sigma_lj and its derivative d_k of the same.
inline cplx sigma_gram(DerivativeTable& T, int m, int k, int j, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) s += std::conj(T.sigma(l, k, {0, 0})[i]) * T.sigma(l, j, {0, 0})[i];
    return s;
}

inline cplx sigma_gram_divergence(DerivativeTable& T, int m, int d, int j, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        for (int k = 0; k < d; ++k) {
            s += std::conj(T.sigma(l, k, mi({k}))[i]) * T.sigma(l, j, {0, 0})[i];
            s += std::conj(T.sigma(l, k, {0, 0})[i]) * T.sigma(l, j, mi({k}))[i];
        }
    }
    return s;
}

inline double re_eta_sigma(DerivativeTable& T, int m, int j, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) s += std::conj(T.eta(l, {0, 0})[i]) * T.sigma(l, j, {0, 0})[i];
    return s.real();
}

}  // namespace detail

/// D(x_j) f.
inline WaveFunction dissipator_position(const CoefficientSet& co, int j, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const int m = co.channels();
    const std::size_t n = g.size();
    WaveFunction out(g);
    for (int k = 0; k < d; ++k) {
        auto coef = detail::combine(n, [&](std::size_t i) {
            return 0.5 * (detail::sigma_gram(T, m, k, j, i) - detail::sigma_gram(T, m, j, k, i));
        });
        detail::add_term(out, coef, apply_derivative(f, k));
    }
    auto coef0 = detail::combine(n, [&](std::size_t i) {
        return 0.5 * detail::sigma_gram_divergence(T, m, d, j, i) - detail::re_eta_sigma(T, m, j, i);
    });
    detail::add_term(out, coef0, f);
    return out;
}

/// D(|x|^2) f.
inline WaveFunction dissipator_position_squared(const CoefficientSet& co, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    detail::warn_if_near_boundary(f, "dissipator_position_squared");
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const int m = co.channels();
    const std::size_t n = g.size();
    WaveFunction out(g);
    for (int k = 0; k < d; ++k) {
        auto coef = detail::combine(n, [&](std::size_t i) {
            cplx c = 0.0;
            Point x = g.position(i);
            for (int j = 0; j < d; ++j) {
                c += x[j] * (detail::sigma_gram(T, m, k, j, i) - detail::sigma_gram(T, m, j, k, i));
            }
            return c;
        });
        detail::add_term(out, coef, apply_derivative(f, k));
    }
    auto coef0 = detail::combine(n, [&](std::size_t i) {
        cplx c = 0.0;
        Point x = g.position(i);
        for (int j = 0; j < d; ++j) {
            c += x[j] * detail::sigma_gram_divergence(T, m, d, j, i);
            c -= 2.0 * detail::re_eta_sigma(T, m, j, i) * x[j];
            c += detail::sigma_gram(T, m, j, j, i);
        }
        return c;
    });
    detail::add_term(out, coef0, f);
    return out;
}

namespace detail {

// nu_jk = Re sum_l (d_j sigma_lk conj(eta_l) - sigma_lk d_j conj(eta_l))
inline double nu(DerivativeTable& T, int m, int j, int k, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        s += T.sigma(l, k, mi({j}))[i] * std::conj(T.eta(l, {0, 0})[i]);
        s -= T.sigma(l, k, {0, 0})[i] * std::conj(T.eta(l, mi({j}))[i]);
    }
    return s.real();
}

// d_j nu_jk (no sum over j)
inline double nu_divergence_term(DerivativeTable& T, int m, int j, int k, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        s += T.sigma(l, k, mi({j, j}))[i] * std::conj(T.eta(l, {0, 0})[i]);
        s -= T.sigma(l, k, {0, 0})[i] * std::conj(T.eta(l, mi({j, j}))[i]);
    }
    return s.real();
}

// mu_jk = 1/2 sum_{l,h} (d_h sigma_lk d_j conj(sigma_lh) + sigma_lk d_j d_h conj(sigma_lh)
//                        - d_h conj(sigma_lh) d_j sigma_lk - conj(sigma_lh) d_h d_j sigma_lk)
// vanishes identically in one dimension under the phase condition
inline cplx mu(DerivativeTable& T, int m, int d, int j, int k, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        for (int h = 0; h < d; ++h) {
            s += T.sigma(l, k, mi({h}))[i] * std::conj(T.sigma(l, h, mi({j}))[i]);
            s += T.sigma(l, k, {0, 0})[i] * std::conj(T.sigma(l, h, mi({j, h}))[i]);
            s -= std::conj(T.sigma(l, h, mi({h}))[i]) * T.sigma(l, k, mi({j}))[i];
            s -= std::conj(T.sigma(l, h, {0, 0})[i]) * T.sigma(l, k, mi({h, j}))[i];
        }
    }
    return 0.5 * s;
}

// d_j mu_jk (no sum over j)
inline cplx mu_divergence_term(DerivativeTable& T, int m, int d, int j, int k, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        for (int h = 0; h < d; ++h) {
            s += T.sigma(l, k, mi({h}))[i] * std::conj(T.sigma(l, h, mi({j, j}))[i]);
            s += T.sigma(l, k, {0, 0})[i] * std::conj(T.sigma(l, h, mi({j, j, h}))[i]);
            s -= std::conj(T.sigma(l, h, mi({h}))[i]) * T.sigma(l, k, mi({j, j}))[i];
            s -= std::conj(T.sigma(l, h, {0, 0})[i]) * T.sigma(l, k, mi({j, j, h}))[i];
        }
    }
    return 0.5 * s;
}

// 2 xi_j
inline cplx two_xi(DerivativeTable& T, int m, int d, int j, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        const cplx eta = T.eta(l, {0, 0})[i];
        const cplx deta = T.eta(l, mi({j}))[i];
        for (int h = 0; h < d; ++h) {
            s += std::conj(T.sigma(l, h, mi({j, h}))[i]) * eta;
            s += std::conj(T.sigma(l, h, mi({j}))[i]) * T.eta(l, mi({h}))[i];
            s -= std::conj(T.sigma(l, h, mi({h}))[i]) * deta;
            s -= std::conj(T.sigma(l, h, {0, 0})[i]) * T.eta(l, mi({j, h}))[i];
        }
        s += 2.0 * I * (std::conj(eta) * deta).imag();
    }
    return s;
}

// d_j (2 xi_j) (no sum over j)
inline cplx two_xi_divergence_term(DerivativeTable& T, int m, int d, int j, std::size_t i) {
    cplx s = 0.0;
    for (int l = 0; l < m; ++l) {
        const cplx eta = T.eta(l, {0, 0})[i];
        const cplx djj_eta = T.eta(l, mi({j, j}))[i];
        for (int h = 0; h < d; ++h) {
            s += std::conj(T.sigma(l, h, mi({j, j, h}))[i]) * eta;
            s += std::conj(T.sigma(l, h, mi({j, j}))[i]) * T.eta(l, mi({h}))[i];
            s -= std::conj(T.sigma(l, h, mi({h}))[i]) * djj_eta;
            s -= std::conj(T.sigma(l, h, {0, 0})[i]) * T.eta(l, mi({j, j, h}))[i];
        }
        s += 2.0 * I * (std::conj(eta) * djj_eta).imag();
    }
    return s;
}

}  // namespace detail

/// D(d_j) f. Valid when the phase compatibility condition holds.
inline WaveFunction dissipator_derivative(const CoefficientSet& co, int j, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const int m = co.channels();
    const std::size_t n = g.size();
    WaveFunction out(g);
    for (int k = 0; k < d; ++k) {
        auto coef = detail::combine(n, [&](std::size_t i) -> cplx {
            return detail::nu(T, m, j, k, i) + detail::mu(T, m, d, j, k, i);
        });
        detail::add_term(out, coef, apply_derivative(f, k));
    }
    auto coef0 = detail::combine(n, [&](std::size_t i) { return 0.5 * detail::two_xi(T, m, d, j, i); });
    detail::add_term(out, coef0, f);
    return out;
}

/// D(Lap) f. Valid when the phase compatibility condition holds.
inline WaveFunction dissipator_laplacian(const CoefficientSet& co, double t, const WaveFunction& f) {
    const GridSpec& g = f.grid();
    co.validate(g);
    detail::warn_if_near_boundary(f, "dissipator_laplacian");
    detail::DerivativeTable T(co, g, t);
    const int d = g.dimension();
    const int m = co.channels();
    const std::size_t n = g.size();
    WaveFunction out(g);
    using detail::mi;

    // 2 nu_jk d_j d_k + P's second-order part
    for (int j = 0; j < d; ++j) {
        for (int k = 0; k < d; ++k) {
            auto coef = detail::combine(n, [&](std::size_t i) -> cplx {
                cplx c = 2.0 * (detail::nu(T, m, j, k, i) + detail::mu(T, m, d, j, k, i));
                // - P: + sum_{l,p} d_p conj(sigma_lj) d_p sigma_lk  (indices h=j, k=k of P)
                for (int l = 0; l < m; ++l) {
                    for (int p = 0; p < d; ++p) {
                        c += std::conj(T.sigma(l, j, mi({p}))[i]) * T.sigma(l, k, mi({p}))[i];
                    }
                }
                return c;
            });
            detail::add_term(out, coef, detail::second_derivative(f, j, k));
        }
    }
    // first order
    for (int k = 0; k < d; ++k) {
        auto coef = detail::combine(n, [&](std::size_t i) -> cplx {
            cplx c = 0.0;
            for (int j = 0; j < d; ++j) {
                c += detail::nu_divergence_term(T, m, j, k, i) + detail::mu_divergence_term(T, m, d, j, k, i);
            }
            c += detail::two_xi(T, m, d, k, i);
            for (int l = 0; l < m; ++l) {
                for (int j = 0; j < d; ++j) {
                    for (int h = 0; h < d; ++h) {
                        c += std::conj(T.sigma(l, h, mi({h, j}))[i]) * T.sigma(l, k, mi({j}))[i];
                        c += std::conj(T.sigma(l, h, mi({j}))[i]) * T.sigma(l, k, mi({h, j}))[i];
                    }
                    c -= std::conj(T.eta(l, mi({j}))[i]) * T.sigma(l, k, mi({j}))[i];
                    c += std::conj(T.sigma(l, k, mi({j}))[i]) * T.eta(l, mi({j}))[i];
                }
            }
            return c;
        });
        detail::add_term(out, coef, apply_derivative(f, k));
    }
    // zeroth order
    auto coef0 = detail::combine(n, [&](std::size_t i) -> cplx {
        cplx c = 0.0;
        for (int j = 0; j < d; ++j) c += 0.5 * detail::two_xi_divergence_term(T, m, d, j, i);
        for (int l = 0; l < m; ++l) {
            for (int j = 0; j < d; ++j) {
                for (int h = 0; h < d; ++h) {
                    c += std::conj(T.sigma(l, h, mi({h, j}))[i]) * T.eta(l, mi({j}))[i];
                    c += std::conj(T.sigma(l, h, mi({j}))[i]) * T.eta(l, mi({h, j}))[i];
                }
                c -= std::conj(T.eta(l, mi({j}))[i]) * T.eta(l, mi({j}))[i];
            }
        }
        return c;
    });
    detail::add_term(out, coef0, f);
    return out;
}

/// D(C) f with C = -Lap + |x|^2.
inline WaveFunction dissipator_reference(const CoefficientSet& co, double t, const WaveFunction& f) {
    WaveFunction out = dissipator_position_squared(co, t, f);
    out -= dissipator_laplacian(co, t, f);
    return out;
}

// ---------------------------------------------------------------------------
// Direct compositions on the grid.

using LinearMap = std::function<WaveFunction(const WaveFunction&)>;

inline WaveFunction direct_commutator(const LinearMap& a, const LinearMap& b, const WaveFunction& f) {
    return a(b(f)) - b(a(f));
}

/// sum_l [L*(X(L f)) - 1/2 L*(L(X f)) - 1/2 X(L*(L f))]
inline WaveFunction direct_dissipator(const LinearMap& x, const OperatorSet& ops, double t, const WaveFunction& f) {
    WaveFunction out(f.grid());
    for (const auto& L : ops.L) {
        const WaveFunction lf = L.apply(t, f);
        out += L.adjoint_apply(t, x(lf));
        out.axpy(-0.5, L.adjoint_apply(t, L.apply(t, x(f))));
        out.axpy(-0.5, x(L.adjoint_apply(t, lf)));
    }
    return out;
}

}  // namespace qtraj
