#include "stlmm/predict.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stlmm/errors.hpp"
#include "stlmm/fastsolve.hpp"

namespace stlmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

PredictionResult blup(const FitResult& fit, const StDesign<double>& d, const MatrixXd& x_o, const VectorXd& y_o,
                      const MatrixXd& x_u, const std::vector<Index>& targets) {
    const Index n = d.n_observed(), m = static_cast<Index>(targets.size()), p = fit.beta_hat.size();
    if (x_o.rows() != n || y_o.size() != n) throw DataError("blup: X_o / y_o do not match the observed cells");
    if (x_o.cols() != p || x_u.cols() != p) throw DataError("blup: design matrices do not match beta");
    if (x_u.rows() != m) throw DataError("blup: X_u needs one row per target");
    for (Index c : targets)
        if (c < 0 || c >= d.n_cells()) throw DomainError("blup: target cell " + std::to_string(c) + " is off the grid");

    PredictionResult out;
    out.targets = targets;
    if (m == 0) {
        out.y_hat = out.pred_var = out.lower = out.upper = VectorXd(0);
        return out;
    }

    const auto solver = std::visit([&](const auto& th) { return make_solver<double>(th, d); }, fit.theta);
    const MatrixXd s_ou = std::visit(
        [&](const auto& th) { return cross_covariance<double>(th, d, d.observed_cells(), targets); }, fit.theta);

    MatrixXd rhs(n, m + p + 1);
    rhs << s_ou, x_o, y_o - x_o * fit.beta_hat;
    const MatrixXd sol = solver->apply(rhs);
    const auto a = sol.leftCols(m);        // S_oo^{-1} S_ou
    const auto sx = sol.middleCols(m, p);  // S_oo^{-1} X_o

    MatrixXd xsx = x_o.transpose() * sx;
    xsx = 0.5 * (xsx + xsx.transpose());
    const Eigen::LLT<MatrixXd> xsx_llt(xsx);
    if (xsx_llt.info() != Eigen::Success)
        throw EstimabilityError("blup: X_o' Sigma_oo^{-1} X_o is not positive definite", 1);
    const MatrixXd h = x_u - s_ou.transpose() * sx;
    const MatrixXd hc = xsx_llt.solve(h.transpose());

    out.y_hat = x_u * fit.beta_hat + s_ou.transpose() * sol.col(m + p);
    const double s_uu =
        std::visit([](const auto& th) { return cell_covariance<double>(th, 1.0, 1.0, true, true); }, fit.theta);
    out.pred_var.resize(m);
    for (Index k = 0; k < m; ++k) {
        const double v = s_uu - s_ou.col(k).dot(a.col(k)) + h.row(k).dot(hc.col(k));
        out.pred_var(k) = std::max(v, 0.0);
    }
    const VectorXd half = kIntervalZ * out.pred_var.cwiseSqrt();
    out.lower = out.y_hat - half;
    out.upper = out.y_hat + half;
    return out;
}

}  // namespace stlmm
