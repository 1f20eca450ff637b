#pragma once

// Independent reference constructions used only by tests.

#include <algorithm>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/covariance.hpp"
#include "stlmm/design.hpp"

namespace stlmm::testing {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat kron(const Mat& a, const Mat& b) {
    Mat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// Explicit Zs (ST x S) and Zt (ST x T) for canonical order.
inline Mat incidence_sites(Index s, Index t) { return kron(Vec::Ones(t), Mat::Identity(s, s)); }
inline Mat incidence_times(Index s, Index t) { return kron(Mat::Identity(t, t), Vec::Ones(s)); }

inline Mat restrict_to(const Mat& full, const std::vector<Index>& cells) {
    Mat out(static_cast<Index>(cells.size()), static_cast<Index>(cells.size()));
    for (std::size_t a = 0; a < cells.size(); ++a)
        for (std::size_t b = 0; b < cells.size(); ++b)
            out(static_cast<Index>(a), static_cast<Index>(b)) = full(cells[a], cells[b]);
    return out;
}

/// Product-sum covariance assembled from incidence matrices and Kronecker
/// products, then restricted to observed cells.
inline Mat incidence_oracle_ps(const ThetaPS<double>& th, const StDesign<double>& d) {
    const Index s = d.n_sites(), t = d.n_times();
    const Mat rs = correlation_matrix(th.spatial, d.sites());
    const Mat rt = correlation_matrix(th.temporal, d.times());
    const Mat zs = incidence_sites(s, t), zt = incidence_times(s, t);
    const Mat full = th.sig2_delta * zs * rs * zs.transpose() + th.sig2_gamma * zs * zs.transpose() +
                     th.sig2_tau * zt * rt * zt.transpose() + th.sig2_eta * zt * zt.transpose() +
                     th.sig2_omega * kron(rt, rs) + th.sig2_eps * Mat::Identity(s * t, s * t);
    return restrict_to(full, d.observed_cells());
}

inline Mat kronecker_oracle_sep(const ThetaSep<double>& th, const StDesign<double>& d) {
    const Index s = d.n_sites(), t = d.n_times();
    const Mat rs = correlation_matrix(th.spatial, d.sites());
    const Mat rt = correlation_matrix(th.temporal, d.times());
    const Mat a = (1 - th.v_t) * rt + th.v_t * Mat::Identity(t, t);
    const Mat b = (1 - th.v_s) * rs + th.v_s * Mat::Identity(s, s);
    return restrict_to(th.sig2_omega * kron(a, b), d.observed_cells());
}

inline double max_rel_err(const Mat& got, const Mat& want) {
    const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-300);
    return (got - want).cwiseAbs().maxCoeff() / scale;
}

inline double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

inline StDesign<double> random_design(std::mt19937_64& rng, Index s, Index t, double missing = 0.0) {
    std::uniform_real_distribution<double> u(0.0, 5.0);
    Coords<double> sites(s, 2);
    for (Index i = 0; i < s; ++i) sites.row(i) << u(rng), u(rng);
    Vec times(t);
    for (Index j = 0; j < t; ++j) times(j) = static_cast<double>(j + 1);
    std::vector<bool> obs(static_cast<std::size_t>(s * t), true);
    const auto n_missing = static_cast<std::size_t>(std::llround(missing * static_cast<double>(s * t)));
    std::vector<std::size_t> idx(obs.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_missing && k + 1 < idx.size(); ++k) obs[idx[k]] = false;
    return StDesign<double>(sites, times, obs);
}

inline ThetaPS<double> random_theta_ps(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> v(0.1, 5.0), r(0.5, 6.0);
    ThetaPS<double> th;
    th.set_variances({v(rng), v(rng), v(rng), v(rng), v(rng), v(rng)});
    th.spatial = {KernelKind::Exponential, r(rng)};
    th.temporal = {KernelKind::Exponential, r(rng) * 2};
    return th;
}

inline ThetaSep<double> random_theta_sep(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> p(0.05, 0.9), v(0.5, 5.0), r(0.5, 6.0);
    ThetaSep<double> th;
    th.sig2_omega = v(rng);
    th.v_s = p(rng);
    th.v_t = p(rng);
    th.spatial = {KernelKind::Exponential, r(rng)};
    th.temporal = {KernelKind::Exponential, r(rng) * 2};
    return th;
}

/// The four simulation variance configurations, kappa = 2.25, phi = 9.
inline ThetaPS<double> sim_config(int which) {
    ThetaPS<double> th;
    switch (which) {
        case 1: th.set_variances({18.0, 1.0, 18.0, 1.0, 20.0, 2.0}); break;
        case 2: th.set_variances({16.0, 4.0, 16.0, 4.0, 16.0, 4.0}); break;
        case 3: th.set_variances({10.0, 10.0, 10.0, 10.0, 10.0, 10.0}); break;
        default: th.set_variances({30.0, 0.1, 20.0, 0.1, 2.0, 7.8}); break;
    }
    th.spatial = {KernelKind::Exponential, 2.25};
    th.temporal = {KernelKind::Exponential, 9.0};
    return th;
}

}  // namespace stlmm::testing
