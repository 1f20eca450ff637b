#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../oracles.hpp"
#include "stlmm/errors.hpp"
#include "stlmm/predict.hpp"

using namespace stlmm;
using namespace stlmm::testing;

namespace {

Mat random_x(std::mt19937_64& rng, Index n, Index p) {
    std::normal_distribution<double> z;
    Mat x(n, p);
    x.col(0).setOnes();
    for (Index j = 1; j < p; ++j)
        for (Index i = 0; i < n; ++i) x(i, j) = z(rng);
    return x;
}

Vec noise(std::mt19937_64& rng, Index n) {
    std::normal_distribution<double> z;
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = z(rng);
    return v;
}

FitResult fixed_fit(const Theta& th, const Vec& beta) {
    FitResult f;
    f.theta = th;
    f.beta_hat = beta;
    f.cov_beta = Mat::Identity(beta.size(), beta.size());
    return f;
}

struct DenseBlup {
    Vec y_hat;
    Vec pred_var;
};

/// Kriging equations evaluated with explicit inverses on the full grid
/// covariance.
DenseBlup dense_blup(const Mat& full, const std::vector<Index>& obs, const std::vector<Index>& tgt, const Mat& x_o,
                     const Vec& y_o, const Mat& x_u, const Vec& beta) {
    const auto pick = [&](const std::vector<Index>& r, const std::vector<Index>& c) {
        Mat m(static_cast<Index>(r.size()), static_cast<Index>(c.size()));
        for (std::size_t a = 0; a < r.size(); ++a)
            for (std::size_t b = 0; b < c.size(); ++b)
                m(static_cast<Index>(a), static_cast<Index>(b)) = full(r[a], c[b]);
        return m;
    };
    const Mat s_oo_inv = pick(obs, obs).inverse();
    const Mat s_uo = pick(tgt, obs);
    const Mat s_uu = pick(tgt, tgt);
    const Mat h = x_u - s_uo * s_oo_inv * x_o;
    const Mat cov = s_uu - s_uo * s_oo_inv * s_uo.transpose() +
                    h * (x_o.transpose() * s_oo_inv * x_o).inverse() * h.transpose();
    return {x_u * beta + s_uo * s_oo_inv * (y_o - x_o * beta), cov.diagonal()};
}

}  // namespace

TEST(Blup, PureNugget) {
    std::mt19937_64 rng(1);
    const auto d = random_design(rng, 5, 6, 0.2);
    const Mat x = random_x(rng, d.n_observed(), 2);
    const Vec y = x * Vec::Ones(2) + noise(rng, d.n_observed());
    const FitResult f = fit_ols(d, x, y);
    const auto targets = d.unobserved_cells();
    const Mat xu = random_x(rng, static_cast<Index>(targets.size()), 2);
    const auto p = blup(f, d, x, y, xu, targets);
    const double s2 = std::get<ThetaPS<double>>(f.theta).sig2_eps;
    for (Index k = 0; k < xu.rows(); ++k) {
        EXPECT_NEAR(p.y_hat(k), xu.row(k).dot(f.beta_hat), 1e-10);
        const double want = s2 + (xu.row(k) * f.cov_beta * xu.row(k).transpose())(0, 0);
        EXPECT_NEAR(p.pred_var(k), want, 1e-10 * want);
    }
}

TEST(Blup, PerfectCorrelation) {
    Coords<double> sites(1, 2);
    sites << 0, 0;
    const StDesign<double> d(sites, Vec::LinSpaced(2, 1, 2), {true, false});
    ThetaPS<double> th;
    th.sig2_omega = 1;
    th.spatial = {KernelKind::Exponential, 1};
    th.temporal = {KernelKind::Exponential, 1e14};
    const Mat x = Mat::Ones(1, 1);
    const Vec y = Vec::Constant(1, 3.5);
    const auto p = blup(fixed_fit(th, Vec::Constant(1, 0.25)), d, x, y, x, {1});
    EXPECT_NEAR(p.y_hat(0), 3.5, 1e-6);
    EXPECT_NEAR(p.pred_var(0), 0.0, 1e-6);
}

TEST(Blup, MatchesDenseOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 4; ++trial) {
        const auto d = random_design(rng, 4 + trial, 8 - trial, 0.25);
        const Mat x = random_x(rng, d.n_observed(), 3);
        const Vec y = noise(rng, d.n_observed()) * 3;
        std::vector<Index> targets = d.unobserved_cells();
        targets.push_back(d.observed_cells().front());
        const Mat xu = random_x(rng, static_cast<Index>(targets.size()), 3);
        const Vec beta = noise(rng, 3);
        const StDesign<double> grid = d.with_mask(std::vector<bool>(static_cast<std::size_t>(d.n_cells()), true));

        const auto ps = random_theta_ps(rng);
        const auto got = blup(fixed_fit(ps, beta), d, x, y, xu, targets);
        const auto want = dense_blup(incidence_oracle_ps(ps, grid), d.observed_cells(), targets, x, y, xu, beta);
        EXPECT_LE(max_rel_err(got.y_hat, want.y_hat), 1e-8);
        EXPECT_LE(max_rel_err(got.pred_var, want.pred_var), 1e-8);

        const auto sep = random_theta_sep(rng);
        const auto got_sep = blup(fixed_fit(sep, beta), d, x, y, xu, targets);
        const auto want_sep =
            dense_blup(kronecker_oracle_sep(sep, grid), d.observed_cells(), targets, x, y, xu, beta);
        EXPECT_LE(max_rel_err(got_sep.y_hat, want_sep.y_hat), 1e-8);
        EXPECT_LE(max_rel_err(got_sep.pred_var, want_sep.pred_var), 1e-8);
    }
}

TEST(Blup, IntervalsBracketPrediction) {
    std::mt19937_64 rng(3);
    const auto d = random_design(rng, 6, 6, 0.3);
    const Mat x = random_x(rng, d.n_observed(), 2);
    const Vec y = noise(rng, d.n_observed());
    const auto targets = d.unobserved_cells();
    const Mat xu = random_x(rng, static_cast<Index>(targets.size()), 2);
    const auto p = blup(fixed_fit(sim_config(2), Vec::Zero(2)), d, x, y, xu, targets);
    for (Index k = 0; k < p.y_hat.size(); ++k) {
        EXPECT_GE(p.pred_var(k), 0.0);
        EXPECT_LE(p.lower(k), p.y_hat(k));
        EXPECT_LE(p.y_hat(k), p.upper(k));
        EXPECT_NEAR(p.upper(k) - p.y_hat(k), 1.96 * std::sqrt(p.pred_var(k)), 1e-12);
    }
}

TEST(Blup, ObservedTargetIsSmoothed) {
    std::mt19937_64 rng(4);
    const auto d = random_design(rng, 5, 5, 0.2);
    const Mat x = random_x(rng, d.n_observed(), 2);
    const Vec y = noise(rng, d.n_observed());
    ThetaPS<double> th = sim_config(1);
    auto v = th.variances();
    v[1] = v[3] = v[5] = 1e-10;
    th.set_variances(v);
    const std::vector<Index> targets = {d.observed_cells()[3]};
    const auto p = blup(fixed_fit(th, Vec::Zero(2)), d, x, y, x.row(3), targets);
    EXPECT_NEAR(p.y_hat(0), y(3), 1e-6);
}

TEST(Blup, EmptyTargets) {
    std::mt19937_64 rng(5);
    const auto d = random_design(rng, 3, 3);
    const auto p = blup(fixed_fit(sim_config(2), Vec::Zero(1)), d, Mat::Ones(9, 1), Vec::Ones(9), Mat(0, 1), {});
    EXPECT_EQ(p.y_hat.size(), 0);
    EXPECT_EQ(p.pred_var.size(), 0);
}

TEST(Blup, ShapeErrors) {
    std::mt19937_64 rng(6);
    const auto d = random_design(rng, 3, 3);
    const auto f = fixed_fit(sim_config(2), Vec::Zero(1));
    EXPECT_THROW(blup(f, d, Mat::Ones(8, 1), Vec::Ones(8), Mat::Ones(1, 1), {0}), DataError);
    EXPECT_THROW(blup(f, d, Mat::Ones(9, 1), Vec::Ones(9), Mat::Ones(1, 1), {9}), DomainError);
}
