#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/design.hpp"
#include "stlmm/errors.hpp"
#include "stlmm/kernels.hpp"

namespace stlmm {

/// Product-sum LMM covariance parameters:
///   Sigma = d Zs Rs Zs' + g Zs Zs' + t Zt Rt Zt' + e Zt Zt' + w Rt(x)Rs + eps I.
template <typename Scalar = double>
struct ThetaPS {
    Scalar sig2_delta = 0;  // spatial dependent
    Scalar sig2_gamma = 0;  // spatial independent
    Scalar sig2_tau = 0;    // temporal dependent
    Scalar sig2_eta = 0;    // temporal independent
    Scalar sig2_omega = 0;  // spatio-temporal dependent
    Scalar sig2_eps = 0;    // completely independent
    CorrelationModel<Scalar> spatial{};
    CorrelationModel<Scalar> temporal{};

    std::array<Scalar, 6> variances() const {
        return {sig2_delta, sig2_gamma, sig2_tau, sig2_eta, sig2_omega, sig2_eps};
    }
    void set_variances(const std::array<Scalar, 6>& v) {
        sig2_delta = v[0];
        sig2_gamma = v[1];
        sig2_tau = v[2];
        sig2_eta = v[3];
        sig2_omega = v[4];
        sig2_eps = v[5];
    }
    Scalar total() const {
        Scalar s = 0;
        for (Scalar v : variances()) s += v;
        return s;
    }
    void validate() const {
        for (Scalar v : variances())
            if (!(v >= Scalar(0)) || !std::isfinite(static_cast<double>(v)))
                throw DomainError("ThetaPS: variances must be finite and >= 0");
        if (!(total() > Scalar(0))) throw DomainError("ThetaPS: variances sum to zero");
        if (!(spatial.range > Scalar(0)) || !(temporal.range > Scalar(0)))
            throw DomainError("ThetaPS: ranges must be > 0");
    }
};

/// Separable LMM: Sigma = w [(1-vt) Rt + vt I] (x) [(1-vs) Rs + vs I].
template <typename Scalar = double>
struct ThetaSep {
    Scalar sig2_omega = 1;
    Scalar v_s = 0;
    Scalar v_t = 0;
    CorrelationModel<Scalar> spatial{};
    CorrelationModel<Scalar> temporal{};

    void validate() const {
        if (!(sig2_omega > Scalar(0))) throw DomainError("ThetaSep: sig2_omega must be > 0");
        if (!(v_s >= Scalar(0) && v_s <= Scalar(1)) || !(v_t >= Scalar(0) && v_t <= Scalar(1)))
            throw DomainError("ThetaSep: v_s and v_t must lie in [0, 1]");
        if (!(spatial.range > Scalar(0)) || !(temporal.range > Scalar(0)))
            throw DomainError("ThetaSep: ranges must be > 0");
    }
};

/// Classic product-sum parameterization:
///   Sigma = s2s(1-vs) Zs Rs Zs' + s2s vs Zs Zs' + s2t(1-vt) Zt Rt Zt' + s2t vt Zt Zt'
///         + s2st [(1-vt) Rt + vt I] (x) [(1-vs) Rs + vs I].
template <typename Scalar = double>
struct ClassicPS {
    Scalar sig2_s = 0;
    Scalar v_s = 0;
    Scalar sig2_t = 0;
    Scalar v_t = 0;
    Scalar sig2_st = 0;
    CorrelationModel<Scalar> spatial{};
    CorrelationModel<Scalar> temporal{};

    /// From weights of k1 Cs Ct + k2 Cs + k3 Ct with Cs = cs[(1-vs)rho_s + vs 1{0}]
    /// and Ct = ct[(1-vt)rho_t + vt 1{0}].
    static ClassicPS from_weights(Scalar k1, Scalar k2, Scalar k3, Scalar cs, Scalar vs, Scalar ct, Scalar vt,
                                  CorrelationModel<Scalar> spatial, CorrelationModel<Scalar> temporal) {
        if (!(k1 > Scalar(0)) || k2 < Scalar(0) || k3 < Scalar(0))
            throw DomainError("ClassicPS: need k1 > 0 and k2, k3 >= 0");
        return {k2 * cs, vs, k3 * ct, vt, k1 * cs * ct, spatial, temporal};
    }
};

/// Relabels the classic product-sum parameters into the LMM parameters after
/// zeroing the independent-error proportions inside the interaction product.
/// The completely independent error is set to zero.
template <typename Scalar>
ThetaPS<Scalar> classic_to_lmm(const ClassicPS<Scalar>& c) {
    ThetaPS<Scalar> t;
    t.sig2_delta = c.sig2_s * (Scalar(1) - c.v_s);
    t.sig2_gamma = c.sig2_s * c.v_s;
    t.sig2_tau = c.sig2_t * (Scalar(1) - c.v_t);
    t.sig2_eta = c.sig2_t * c.v_t;
    t.sig2_omega = c.sig2_st;
    t.sig2_eps = 0;
    t.spatial = c.spatial;
    t.temporal = c.temporal;
    return t;
}

/// Covariance between two cells given the correlations of their site and
/// time separations.
template <typename Scalar>
Scalar cell_covariance(const ThetaPS<Scalar>& th, Scalar rho_s, Scalar rho_t, bool same_site, bool same_time) {
    Scalar c = th.sig2_delta * rho_s + th.sig2_tau * rho_t + th.sig2_omega * rho_s * rho_t;
    if (same_site) c += th.sig2_gamma;
    if (same_time) c += th.sig2_eta;
    if (same_site && same_time) c += th.sig2_eps;
    return c;
}

template <typename Scalar>
Scalar cell_covariance(const ThetaSep<Scalar>& th, Scalar rho_s, Scalar rho_t, bool same_site, bool same_time) {
    const Scalar fs = (Scalar(1) - th.v_s) * rho_s + (same_site ? th.v_s : Scalar(0));
    const Scalar ft = (Scalar(1) - th.v_t) * rho_t + (same_time ? th.v_t : Scalar(0));
    return th.sig2_omega * fs * ft;
}

/// Spatial and temporal correlation matrices of a design.
template <typename Scalar, typename Theta>
std::pair<Matrix<Scalar>, Matrix<Scalar>> correlation_factors(const Theta& th, const StDesign<Scalar>& d) {
    return {correlation_matrix(th.spatial, d.sites()), correlation_matrix(th.temporal, d.times())};
}

/// Covariance between two lists of grid cells (canonical indices).
template <typename Scalar, typename Theta>
Matrix<Scalar> cross_covariance(const Theta& th, const StDesign<Scalar>& d, const std::vector<Index>& rows,
                                const std::vector<Index>& cols) {
    const auto [rs, rt] = correlation_factors(th, d);
    Matrix<Scalar> out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (Index b = 0; b < out.cols(); ++b) {
        const Index cb = cols[static_cast<std::size_t>(b)];
        const Index sb = d.site_of(cb), tb = d.time_of(cb);
        for (Index a = 0; a < out.rows(); ++a) {
            const Index ca = rows[static_cast<std::size_t>(a)];
            const Index sa = d.site_of(ca), ta = d.time_of(ca);
            out(a, b) = cell_covariance(th, rs(sa, sb), rt(ta, tb), sa == sb, ta == tb);
        }
    }
    return out;
}

/// Dense covariance of the observed cells (n_o x n_o) for the product-sum LMM.
/// Assembled pair by pair so unobserved cells cost no memory.
template <typename Scalar>
Matrix<Scalar> dense_cov_ps(const ThetaPS<Scalar>& th, const StDesign<Scalar>& d) {
    th.validate();
    return cross_covariance(th, d, d.observed_cells(), d.observed_cells());
}

/// Dense covariance of the observed cells for the separable LMM.
template <typename Scalar>
Matrix<Scalar> dense_cov_sep(const ThetaSep<Scalar>& th, const StDesign<Scalar>& d) {
    th.validate();
    return cross_covariance(th, d, d.observed_cells(), d.observed_cells());
}

/// Theoretical semivariogram of the product-sum LMM. Exactly-zero lags
/// include the matching nugget terms; positive lags do not.
template <typename Scalar>
Scalar theoretical_sv(const ThetaPS<Scalar>& th, Scalar hs, Scalar ht) {
    const Scalar rs = correlate(th.spatial, hs), rt = correlate(th.temporal, ht);
    return th.total() - cell_covariance(th, rs, rt, hs == Scalar(0), ht == Scalar(0));
}

template <typename Scalar>
Scalar theoretical_sv(const ThetaSep<Scalar>& th, Scalar hs, Scalar ht) {
    const Scalar rs = correlate(th.spatial, hs), rt = correlate(th.temporal, ht);
    return th.sig2_omega - cell_covariance(th, rs, rt, hs == Scalar(0), ht == Scalar(0));
}

/// Lags, as multiples of the range, standing in for the limits 0+ and infinity.
inline constexpr double kZeroPlusLag = 1e-9;
inline constexpr double kInfinityLag = 1e8;

/// Re-derives the six variance components from the semivariogram evaluated at
/// the limit lags (0, 0+, infinity) in space and time.
template <typename Scalar>
ThetaPS<Scalar> recover_components(const ThetaPS<Scalar>& th) {
    const Scalar s0p = Scalar(kZeroPlusLag) * th.spatial.range;
    const Scalar sinf = Scalar(kInfinityLag) * th.spatial.range;
    const Scalar t0p = Scalar(kZeroPlusLag) * th.temporal.range;
    const Scalar tinf = Scalar(kInfinityLag) * th.temporal.range;
    auto g = [&](Scalar hs, Scalar ht) { return theoretical_sv(th, hs, ht); };

    ThetaPS<Scalar> out = th;
    out.sig2_delta = g(sinf, tinf) - g(s0p, tinf);
    out.sig2_gamma = g(s0p, tinf) - g(Scalar(0), tinf);
    out.sig2_tau = g(sinf, tinf) - g(sinf, t0p);
    out.sig2_eta = g(sinf, t0p) - g(sinf, Scalar(0));
    out.sig2_omega = g(sinf, t0p) + g(s0p, tinf) - g(sinf, tinf) - g(s0p, t0p);
    out.sig2_eps = g(s0p, t0p) + g(Scalar(0), tinf) + g(sinf, Scalar(0)) - g(sinf, t0p) - g(s0p, tinf);
    return out;
}

}  // namespace stlmm
