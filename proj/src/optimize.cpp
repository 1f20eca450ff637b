#include "stlmm/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stlmm/errors.hpp"

namespace stlmm {

namespace {

constexpr double kReflect = 1.0;
constexpr double kExpand = 2.0;
constexpr double kContract = 0.5;
constexpr double kShrink = 0.5;

struct Run {
    const Objective& f;
    int evaluations = 0;
    int budget = 0;

    double operator()(const Eigen::VectorXd& x) {
        ++evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    }
    bool exhausted() const { return evaluations >= budget; }
};

// Returns the parameter spread of the last simplex.
double simplex_run(Run& eval, const Eigen::VectorXd& start, double step, const SimplexOptions& opts,
                   SimplexResult& out) {
    const Eigen::Index n = start.size();
    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), start);
    std::vector<double> fv(pts.size());
    for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step;
    for (std::size_t i = 0; i < pts.size(); ++i) fv[i] = eval(pts[i]);

    std::vector<std::size_t> order(pts.size());
    for (;;) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

        if (fv[best] < out.f) {
            out.f = fv[best];
            out.x = pts[best];
        }
        out.best_trace.push_back(out.f);

        double xspread = 0;
        if (opts.canonical) {
            const Eigen::VectorXd b = opts.canonical(pts[best]);
            for (const auto& p : pts) xspread = std::max(xspread, (opts.canonical(p) - b).cwiseAbs().maxCoeff());
        } else {
            for (const auto& p : pts) xspread = std::max(xspread, (p - pts[best]).cwiseAbs().maxCoeff());
        }
        const double fspread = fv[worst] - fv[best];
        if (fspread < opts.f_tolerance && xspread < opts.x_tolerance) {
            out.converged = true;
            return xspread;
        }
        if (eval.exhausted()) return xspread;
        ++out.iterations;

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (std::size_t i : order)
            if (i != worst) centroid += pts[i];
        centroid /= static_cast<double>(n);

        const Eigen::VectorXd xr = centroid + kReflect * (centroid - pts[worst]);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            const Eigen::VectorXd xe = centroid + kExpand * (xr - centroid);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                fv[worst] = fe;
            } else {
                pts[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            pts[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        // Contraction, outside if the reflected point improved on the worst.
        const bool outside = fr < fv[worst];
        const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + kContract * (xr - centroid))
                                           : Eigen::VectorXd(centroid + kContract * (pts[worst] - centroid));
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            pts[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t i : order) {
            if (i == best) continue;
            pts[i] = pts[best] + kShrink * (pts[i] - pts[best]);
            fv[i] = eval(pts[i]);
        }
    }
}

}  // namespace

SimplexResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const SimplexOptions& opts) {
    if (x0.size() == 0) throw DomainError("nelder_mead: empty parameter vector");
    if (opts.max_evaluations < 1) throw DomainError("nelder_mead: max_evaluations must be >= 1");

    SimplexResult out;
    out.x = x0;
    out.f = std::numeric_limits<double>::infinity();

    Run eval{f, 0, opts.max_evaluations};
    const double spread = simplex_run(eval, x0, opts.initial_step, opts, out);
    if (!out.converged && opts.restart_on_cap) {
        eval.budget += opts.max_evaluations;
        // New simplex on the scale the first run had shrunk to.
        const double step = std::clamp(2 * spread, 100 * opts.x_tolerance, 0.5 * opts.initial_step);
        simplex_run(eval, out.x, step, opts, out);
    }
    out.evaluations = eval.evaluations;
    return out;
}

}  // namespace stlmm
