#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/covariance.hpp"
#include "stlmm/design.hpp"

namespace stlmm {

/// Distance classes for the empirical semivariogram. Spatial class 0 holds
/// exactly co-located pairs; classes 1..spatial_bins split (0, max_distance]
/// into equal widths. Temporal class k holds pairs whose lag rounds to k time
/// steps, k = 0..max_lag.
struct BinsSpec {
    int spatial_bins = 15;
    /// <= 0: half the largest pairwise site distance.
    double max_distance = 0;
    /// < 0: floor(T / 2).
    int max_lag = -1;
};

struct EmpSv {
    /// (lower, upper] distance limits per spatial class; class 0 is (0, 0).
    std::vector<std::pair<double, double>> spatial_bins;
    /// Lag of each temporal class, in time units.
    std::vector<double> temporal_bins;
    /// Rows are spatial classes, columns temporal classes. Entries of empty
    /// classes are zero in gamma_hat and centers.
    Eigen::MatrixXd gamma_hat;
    Eigen::MatrixXd counts;
    /// Mean spatial distance and mean temporal lag of the pairs in each class.
    Eigen::MatrixXd center_s;
    Eigen::MatrixXd center_t;

    Eigen::Index nonempty() const { return (counts.array() > 0).count(); }
};

/// Matheron estimator over the observed cells of a design; residuals follow
/// the observed-cell order.
EmpSv empirical_sv(const StDesign<double>& d, const Eigen::VectorXd& residuals, const BinsSpec& bins = {});

/// Weighted least-squares criterion sum |N| (gamma_hat - gamma)^2 / gamma^2
/// over non-empty classes, gamma evaluated at the class centers.
template <typename Theta>
double cwls_objective(const EmpSv& sv, const Theta& th) {
    constexpr double kTiny = 1e-10;
    constexpr double kWeightCap = 1e20;
    double sum = 0;
    for (Eigen::Index i = 0; i < sv.counts.rows(); ++i)
        for (Eigen::Index j = 0; j < sv.counts.cols(); ++j) {
            const double n = sv.counts(i, j);
            if (n <= 0) continue;
            const double g = theoretical_sv(th, sv.center_s(i, j), sv.center_t(i, j));
            const double w = g < kTiny ? n * kWeightCap : n / (g * g);
            const double r = sv.gamma_hat(i, j) - g;
            sum += w * r * r;
        }
    return sum;
}

}  // namespace stlmm
