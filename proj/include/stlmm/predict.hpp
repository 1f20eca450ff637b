#pragma once

#include <vector>

#include <Eigen/Dense>

#include "stlmm/design.hpp"
#include "stlmm/estimate.hpp"

namespace stlmm {

/// Gaussian quantile for the 95% prediction interval.
inline constexpr double kIntervalZ = 1.96;

struct PredictionResult {
    std::vector<Index> targets;
    Eigen::VectorXd y_hat;
    Eigen::VectorXd pred_var;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

/// Kriging predictor at grid cells `targets` (canonical indices; observed
/// cells give the smoothed value). x_u has one row per target.
///   y_u = X_u b + S_uo S_oo^{-1} (y_o - X_o b)
///   var = diag(S_uu - S_uo S_oo^{-1} S_ou + H (X_o' S_oo^{-1} X_o)^{-1} H'),
///   H = X_u - S_uo S_oo^{-1} X_o.
PredictionResult blup(const FitResult& fit, const StDesign<double>& d, const Eigen::MatrixXd& x_o,
                      const Eigen::VectorXd& y_o, const Eigen::MatrixXd& x_u, const std::vector<Index>& targets);

}  // namespace stlmm
