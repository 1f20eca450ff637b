#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace stlmm {

struct SimplexOptions {
    int max_evaluations = 2000;
    /// Converged when max f - min f over the simplex is below f_tolerance
    /// and every vertex lies within x_tolerance of the best one (max norm).
    double f_tolerance = 1e-6;
    double x_tolerance = 1e-4;
    double initial_step = 1.0;
    /// Restart once from a fresh simplex around the best point when the
    /// first run hits the evaluation cap. Its step is twice the final
    /// parameter spread, between 100 x_tolerance and initial_step / 2.
    bool restart_on_cap = true;
    /// Optional map applied to vertices before the spread test, e.g. the
    /// clamping a decoder applies, so that points which decode to the same
    /// parameters count as coincident.
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> canonical;
};

struct SimplexResult {
    Eigen::VectorXd x;
    double f = 0;
    int evaluations = 0;
    int iterations = 0;
    bool converged = false;
    /// Best objective value after each iteration.
    std::vector<double> best_trace;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Nelder-Mead downhill simplex. Non-finite objective values are treated as
/// +infinity.
SimplexResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const SimplexOptions& opts = {});

}  // namespace stlmm
