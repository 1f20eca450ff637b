#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/covariance.hpp"
#include "stlmm/design.hpp"
#include "stlmm/optimize.hpp"
#include "stlmm/semivariogram.hpp"

namespace stlmm {

enum class Model { ProductSum, Separable, Ire };
enum class Method { Reml, Cwls, Ols };

std::string_view model_name(Model m);    // "product_sum", "separable", "ire"
std::string_view method_name(Method m);  // "reml", "cwls", "ols"
Model parse_model(std::string_view s);
Method parse_method(std::string_view s);
/// Short label such as "PS_REML" or "SEP_C-WLS".
std::string combination_label(Model m, Method k);
/// Throws UsageError unless (m, k) is one of the five supported combinations.
void check_combination(Model m, Method k);

using Theta = std::variant<ThetaPS<double>, ThetaSep<double>>;

struct FitTimings {
    double semivariogram_s = 0;
    double optimize_s = 0;
    double total() const { return semivariogram_s + optimize_s; }
};

struct FitResult {
    Model model = Model::Ire;
    Method method = Method::Ols;
    Theta theta;
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd cov_beta;
    /// -2 restricted log-likelihood (REML), WLS criterion (C-WLS) or residual
    /// sum of squares (OLS).
    double objective = 0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = true;
    FitTimings wall_time_s;
};

struct EstimateOptions {
    SimplexOptions simplex;
    BinsSpec bins;
    /// Semivariogram / WLS / FGLS passes for C-WLS.
    int fgls_iterations = 1;
    KernelKind spatial_kernel = KernelKind::Exponential;
    KernelKind temporal_kernel = KernelKind::Exponential;
};

/// -2 l_R(theta | y) without constants:
///   log|Sigma| + r' Sigma^{-1} r + log|X' Sigma^{-1} X|,  r = y - X beta_gls.
double neg2_reml(const Theta& th, const StDesign<double>& d, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct ProfiledReml {
    double sigma2 = 0;
    double objective = 0;
};

/// Sigma = sigma2 V(shape). sigma2_hat = r' V^{-1} r / (n - p) and the
/// objective is -2 l_R at sigma2_hat, i.e.
///   (n - p) log sigma2_hat + log|V| + log|X' V^{-1} X| + (n - p).
ProfiledReml profile_variance(const Theta& shape, const StDesign<double>& d, const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y);

struct GlsResult {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;
};

/// beta = (X' Sigma^{-1} X)^{-1} X' Sigma^{-1} y and its covariance.
GlsResult gls(const Theta& th, const StDesign<double>& d, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

FitResult fit_reml(Model model, const StDesign<double>& d, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                   const EstimateOptions& opts = {});
FitResult fit_cwls(Model model, const StDesign<double>& d, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                   const EstimateOptions& opts = {});
FitResult fit_ols(const StDesign<double>& d, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// Dispatches to one of the five supported combinations.
FitResult fit(Model model, Method method, const StDesign<double>& d, const Eigen::MatrixXd& x,
              const Eigen::VectorXd& y, const EstimateOptions& opts = {});

struct WaldTest {
    double statistic = 0;
    double p_value = 1;
};

/// |beta_k| / SE(beta_k) with a two-sided standard Gaussian p-value.
WaldTest wald_test(const FitResult& fit, Eigen::Index k);

/// Starting ranges: half the largest site distance and T / 4 mean time steps.
double initial_spatial_range(const StDesign<double>& d);
double initial_temporal_range(const StDesign<double>& d);

}  // namespace stlmm
