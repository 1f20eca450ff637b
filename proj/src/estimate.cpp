#include "stlmm/estimate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <utility>

#include "stlmm/errors.hpp"
#include "stlmm/fastsolve.hpp"

namespace stlmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view model_name(Model m) {
    switch (m) {
        case Model::ProductSum: return "product_sum";
        case Model::Separable: return "separable";
        case Model::Ire: return "ire";
    }
    return "?";
}

std::string_view method_name(Method m) {
    switch (m) {
        case Method::Reml: return "reml";
        case Method::Cwls: return "cwls";
        case Method::Ols: return "ols";
    }
    return "?";
}

Model parse_model(std::string_view s) {
    if (s == "product_sum" || s == "ps") return Model::ProductSum;
    if (s == "separable" || s == "sep") return Model::Separable;
    if (s == "ire") return Model::Ire;
    throw UsageError("unknown model '" + std::string(s) + "' (expected product_sum, separable or ire)");
}

Method parse_method(std::string_view s) {
    if (s == "reml") return Method::Reml;
    if (s == "cwls" || s == "c-wls") return Method::Cwls;
    if (s == "ols") return Method::Ols;
    throw UsageError("unknown method '" + std::string(s) + "' (expected reml, cwls or ols)");
}

std::string combination_label(Model m, Method k) {
    std::string out = m == Model::ProductSum ? "PS" : m == Model::Separable ? "SEP" : "IRE";
    out += k == Method::Reml ? "_REML" : k == Method::Cwls ? "_C-WLS" : "_OLS";
    return out;
}

void check_combination(Model m, Method k) {
    const bool ok = (m == Model::Ire) == (k == Method::Ols);
    if (!ok)
        throw UsageError("unsupported combination " + std::string(model_name(m)) + "/" + std::string(method_name(k)) +
                         ": ire pairs only with ols, product_sum and separable with reml or cwls");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kProportionFloor = 1e-8;
constexpr double kLogitLimit = 30.0;
constexpr double kLogRangeLimit = 6.907755278982137;  // ln 1000
// About 1e-8 of the OLS residual variance for an equal six-way split.
constexpr double kLogVarLow = -16.62892127472431;  // ln 6e-8
constexpr double kLogVarHigh = 10.0;
// logistic(z) reaches the proportion floor at |z| = ln((1 - floor) / floor).
constexpr double kLogisticFlat = 18.420680733952367;

VectorXd clamp_box(const VectorXd& z, std::initializer_list<std::pair<double, double>> box) {
    VectorXd out = z;
    Index i = 0;
    for (const auto& [lo, hi] : box) {
        out(i) = std::clamp(z(i), lo, hi);
        ++i;
    }
    return out;
}

constexpr std::pair<double, double> kLogitBox{-kLogitLimit, kLogitLimit};
constexpr std::pair<double, double> kLogisticBox{-kLogisticFlat, kLogisticFlat};
constexpr std::pair<double, double> kRangeBox{-kLogRangeLimit, kLogRangeLimit};
constexpr std::pair<double, double> kVarBox{kLogVarLow, kLogVarHigh};

// Variance as scale (1 + z)^2: zero at a finite point, equal split at z = 0.
const double kRootLow = std::exp(0.5 * kLogVarLow);
const double kRootHigh = std::exp(0.5 * kLogVarHigh);

double root_variance(double z) {
    const double r = std::clamp(std::abs(1.0 + z), kRootLow, kRootHigh);
    return r * r;
}

double logistic(double z) {
    const double p = 1.0 / (1.0 + std::exp(-std::clamp(z, -kLogitLimit, kLogitLimit)));
    return std::clamp(p, kProportionFloor, 1.0 - kProportionFloor);
}

SolverPtr<double> solver_for(const Theta& th, const StDesign<double>& d) {
    return std::visit([&](const auto& t) { return make_solver<double>(t, d); }, th);
}

Theta scaled(const Theta& th, double c) {
    if (const auto* ps = std::get_if<ThetaPS<double>>(&th)) {
        ThetaPS<double> out = *ps;
        auto v = out.variances();
        for (double& x : v) x *= c;
        out.set_variances(v);
        return out;
    }
    ThetaSep<double> out = std::get<ThetaSep<double>>(th);
    out.sig2_omega *= c;
    return out;
}

void check_inputs(const StDesign<double>& d, const MatrixXd& x, const VectorXd& y) {
    const Index n = d.n_observed();
    if (x.rows() != n || y.size() != n)
        throw DataError("design matrix has " + std::to_string(x.rows()) + " rows and response " +
                        std::to_string(y.size()) + " entries; the design has " + std::to_string(n) +
                        " observed cells");
    if (x.cols() < 1) throw DataError("design matrix has no columns");
    if (n <= x.cols())
        throw DataError("need more observations (" + std::to_string(n) + ") than fixed effects (" +
                        std::to_string(x.cols()) + ")");
    if (!x.allFinite() || !y.allFinite()) throw DataError("non-finite values in X or y");
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    if (qr.rank() < x.cols())
        throw EstimabilityError("design matrix X is rank deficient (null-space dimension " +
                                    std::to_string(x.cols() - qr.rank()) + ")",
                                static_cast<long>(x.cols() - qr.rank()));
}

long null_dimension(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    long k = 0;
    for (Index i = 0; i < m.rows(); ++i)
        if (es.eigenvalues()(i) <= 1e-12 * top) ++k;
    return std::max(k, 1L);
}

/// Pieces shared by the REML objective, profiling and GLS.
struct GlsParts {
    double logdet = 0;
    double quad = 0;  // r' Sigma^{-1} r
    double logdet_xsx = 0;
    VectorXd beta;
    MatrixXd xsx;
    Eigen::LLT<MatrixXd> xsx_llt;
};

GlsParts gls_parts(const CovarianceSolver<double>& solver, const MatrixXd& x, const VectorXd& y) {
    const Index n = x.rows(), p = x.cols();
    MatrixXd rhs(n, p + 1);
    rhs << x, y;
    const MatrixXd sol = solver.apply(rhs);
    GlsParts out;
    out.logdet = solver.logdet();
    out.xsx = x.transpose() * sol.leftCols(p);
    out.xsx = 0.5 * (out.xsx + out.xsx.transpose());
    out.xsx_llt.compute(out.xsx);
    if (out.xsx_llt.info() != Eigen::Success) {
        const long k = null_dimension(out.xsx);
        throw EstimabilityError("X' Sigma^{-1} X is rank deficient (null-space dimension " + std::to_string(k) + ")",
                                k);
    }
    const VectorXd xsy = x.transpose() * sol.col(p);
    out.beta = out.xsx_llt.solve(xsy);
    const VectorXd r = y - x * out.beta;
    out.quad = r.dot(sol.col(p) - sol.leftCols(p) * out.beta);
    out.logdet_xsx = 2.0 * out.xsx_llt.matrixLLT().diagonal().array().log().sum();
    return out;
}

ProfiledReml profile_parts(const GlsParts& g, Index n, Index p) {
    const double dof = static_cast<double>(n - p);
    ProfiledReml out;
    out.sigma2 = g.quad / dof;
    out.objective = dof * std::log(out.sigma2) + g.logdet + g.logdet_xsx + dof;
    return out;
}

double ols_residual_variance(const MatrixXd& x, const VectorXd& y) {
    const VectorXd beta = x.colPivHouseholderQr().solve(y);
    return (y - x * beta).squaredNorm() / static_cast<double>(x.rows() - x.cols());
}

// Parameter transforms. Each maps an unconstrained vector to a covariance
// parameter set; starting points are the zero vector.

struct PsShape {
    CorrelationModel<double> spatial, temporal;
    static constexpr Index dim = 7;
    ThetaPS<double> operator()(const VectorXd& z) const {
        std::array<double, 6> e{};
        double sum = 1.0;
        for (int i = 0; i < 5; ++i) {
            e[static_cast<std::size_t>(i)] = std::exp(std::clamp(z(i), -kLogitLimit, kLogitLimit));
            sum += e[static_cast<std::size_t>(i)];
        }
        e[5] = 1.0;
        for (double& v : e) v = std::max(v / sum, kProportionFloor);
        ThetaPS<double> th;
        th.set_variances(e);
        th.spatial = {spatial.kind, spatial.range * std::exp(std::clamp(z(5), -kLogRangeLimit, kLogRangeLimit))};
        th.temporal = {temporal.kind, temporal.range * std::exp(std::clamp(z(6), -kLogRangeLimit, kLogRangeLimit))};
        return th;
    }
    static VectorXd clamp(const VectorXd& z) {
        return clamp_box(z, {kLogitBox, kLogitBox, kLogitBox, kLogitBox, kLogitBox, kRangeBox, kRangeBox});
    }
};

struct SepShape {
    CorrelationModel<double> spatial, temporal;
    static constexpr Index dim = 4;
    ThetaSep<double> operator()(const VectorXd& z) const {
        ThetaSep<double> th;
        th.sig2_omega = 1.0;
        th.v_s = logistic(z(0));
        th.v_t = logistic(z(1));
        th.spatial = {spatial.kind, spatial.range * std::exp(std::clamp(z(2), -kLogRangeLimit, kLogRangeLimit))};
        th.temporal = {temporal.kind, temporal.range * std::exp(std::clamp(z(3), -kLogRangeLimit, kLogRangeLimit))};
        return th;
    }
    static VectorXd clamp(const VectorXd& z) { return clamp_box(z, {kLogisticBox, kLogisticBox, kRangeBox, kRangeBox}); }
};

struct PsVariances {
    CorrelationModel<double> spatial, temporal;
    double scale;
    static constexpr Index dim = 8;
    ThetaPS<double> operator()(const VectorXd& z) const {
        std::array<double, 6> v{};
        for (int i = 0; i < 6; ++i)
            v[static_cast<std::size_t>(i)] = scale * root_variance(z(i));
        ThetaPS<double> th;
        th.set_variances(v);
        th.spatial = {spatial.kind, spatial.range * std::exp(std::clamp(z(6), -kLogRangeLimit, kLogRangeLimit))};
        th.temporal = {temporal.kind, temporal.range * std::exp(std::clamp(z(7), -kLogRangeLimit, kLogRangeLimit))};
        return th;
    }
    static VectorXd clamp(const VectorXd& z) {
        VectorXd c = clamp_box(z, {kRangeBox, kRangeBox, kRangeBox, kRangeBox, kRangeBox, kRangeBox, kRangeBox, kRangeBox});
        for (Index i = 0; i < 6; ++i) c(i) = std::clamp(std::abs(1.0 + z(i)), kRootLow, kRootHigh);
        return c;
    }
};

struct SepVariances {
    CorrelationModel<double> spatial, temporal;
    double scale;
    static constexpr Index dim = 5;
    ThetaSep<double> operator()(const VectorXd& z) const {
        ThetaSep<double> th;
        th.sig2_omega = scale * std::exp(std::clamp(z(0), kLogVarLow, kLogVarHigh));
        th.v_s = logistic(z(1));
        th.v_t = logistic(z(2));
        th.spatial = {spatial.kind, spatial.range * std::exp(std::clamp(z(3), -kLogRangeLimit, kLogRangeLimit))};
        th.temporal = {temporal.kind, temporal.range * std::exp(std::clamp(z(4), -kLogRangeLimit, kLogRangeLimit))};
        return th;
    }
    static VectorXd clamp(const VectorXd& z) {
        return clamp_box(z, {kVarBox, kLogisticBox, kLogisticBox, kRangeBox, kRangeBox});
    }
};

template <typename Decode>
SimplexResult minimize(const Decode& decode, const std::function<double(const typename std::invoke_result_t<
                                                                               Decode, VectorXd>&)>& objective,
                       const SimplexOptions& opts) {
    auto f = [&](const VectorXd& z) {
        try {
            return objective(decode(z));
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    SimplexOptions o = opts;
    if (!o.canonical) o.canonical = &Decode::clamp;
    return nelder_mead(f, VectorXd::Zero(Decode::dim), o);
}

struct StartRanges {
    CorrelationModel<double> spatial, temporal;
};

StartRanges start_ranges(const StDesign<double>& d, const EstimateOptions& opts) {
    return {{opts.spatial_kernel, initial_spatial_range(d)}, {opts.temporal_kernel, initial_temporal_range(d)}};
}

void finish_with_gls(FitResult& out, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y) {
    const GlsResult g = gls(out.theta, d, x, y);
    out.beta_hat = g.beta;
    out.cov_beta = g.cov_beta;
}

}  // namespace

double initial_spatial_range(const StDesign<double>& d) {
    const double h = 0.5 * spatial_distances(d.sites(), d.sites()).maxCoeff();
    return h > 0 ? h : 1.0;
}

double initial_temporal_range(const StDesign<double>& d) {
    const Index t = d.n_times();
    if (t < 2) return 1.0;
    const double spacing = (d.times().maxCoeff() - d.times().minCoeff()) / static_cast<double>(t - 1);
    const double r = 0.25 * static_cast<double>(t) * spacing;
    return r > 0 ? r : 1.0;
}

double neg2_reml(const Theta& th, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y) {
    check_inputs(d, x, y);
    const GlsParts g = gls_parts(*solver_for(th, d), x, y);
    return g.logdet + g.quad + g.logdet_xsx;
}

ProfiledReml profile_variance(const Theta& shape, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y) {
    check_inputs(d, x, y);
    return profile_parts(gls_parts(*solver_for(shape, d), x, y), x.rows(), x.cols());
}

GlsResult gls(const Theta& th, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y) {
    check_inputs(d, x, y);
    const GlsParts g = gls_parts(*solver_for(th, d), x, y);
    MatrixXd cov = g.xsx_llt.solve(MatrixXd::Identity(x.cols(), x.cols()));
    return {g.beta, 0.5 * (cov + cov.transpose())};
}

FitResult fit_reml(Model model, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y,
                   const EstimateOptions& opts) {
    check_combination(model, Method::Reml);
    check_inputs(d, x, y);
    const auto t0 = Clock::now();
    const StartRanges r0 = start_ranges(d, opts);
    const Index n = x.rows(), p = x.cols();

    FitResult out;
    out.model = model;
    out.method = Method::Reml;
    auto profiled = [&](const auto& th) { return profile_parts(gls_parts(*make_solver<double>(th, d), x, y), n, p); };
    auto run = [&](const auto& decode) {
        using T = std::invoke_result_t<decltype(decode), VectorXd>;
        const SimplexResult res =
            minimize(decode, std::function<double(const T&)>([&](const T& th) { return profiled(th).objective; }),
                     opts.simplex);
        const T shape = decode(res.x);
        const ProfiledReml pr = profiled(shape);
        out.theta = scaled(Theta(shape), pr.sigma2);
        out.objective = pr.objective;
        out.iterations = res.iterations;
        out.evaluations = res.evaluations;
        out.converged = res.converged;
    };
    if (model == Model::ProductSum)
        run(PsShape{r0.spatial, r0.temporal});
    else
        run(SepShape{r0.spatial, r0.temporal});
    finish_with_gls(out, d, x, y);
    out.wall_time_s.optimize_s = seconds_since(t0);
    return out;
}

FitResult fit_cwls(Model model, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y,
                   const EstimateOptions& opts) {
    check_combination(model, Method::Cwls);
    check_inputs(d, x, y);
    if (opts.fgls_iterations < 1) throw DomainError("fit_cwls: fgls_iterations must be >= 1");
    const StartRanges r0 = start_ranges(d, opts);
    const double s2 = ols_residual_variance(x, y);
    const double scale = s2 > 0 ? s2 : 1.0;

    FitResult out;
    out.model = model;
    out.method = Method::Cwls;
    out.converged = true;
    VectorXd resid = y - x * x.colPivHouseholderQr().solve(y);
    for (int pass = 0; pass < opts.fgls_iterations; ++pass) {
        auto t0 = Clock::now();
        const EmpSv sv = empirical_sv(d, resid, opts.bins);
        out.wall_time_s.semivariogram_s += seconds_since(t0);

        t0 = Clock::now();
        auto run = [&](const auto& decode) {
            using T = std::invoke_result_t<decltype(decode), VectorXd>;
            const SimplexResult res = minimize(
                decode, std::function<double(const T&)>([&](const T& th) { return cwls_objective(sv, th); }),
                opts.simplex);
            out.theta = decode(res.x);
            out.objective = res.f;
            out.iterations += res.iterations;
            out.evaluations += res.evaluations;
            out.converged = out.converged && res.converged;
        };
        if (model == Model::ProductSum)
            run(PsVariances{r0.spatial, r0.temporal, scale / 6.0});
        else
            run(SepVariances{r0.spatial, r0.temporal, scale});
        finish_with_gls(out, d, x, y);
        out.wall_time_s.optimize_s += seconds_since(t0);
        resid = y - x * out.beta_hat;
    }
    return out;
}

FitResult fit_ols(const StDesign<double>& d, const MatrixXd& x, const VectorXd& y) {
    check_inputs(d, x, y);
    const auto t0 = Clock::now();
    const Index n = x.rows(), p = x.cols();
    const MatrixXd xtx = x.transpose() * x;
    const Eigen::LLT<MatrixXd> llt(xtx);
    if (llt.info() != Eigen::Success)
        throw EstimabilityError("X' X is not positive definite", null_dimension(xtx));

    FitResult out;
    out.model = Model::Ire;
    out.method = Method::Ols;
    out.beta_hat = llt.solve(x.transpose() * y);
    const double rss = (y - x * out.beta_hat).squaredNorm();
    const double s2 = rss / static_cast<double>(n - p);
    out.cov_beta = s2 * llt.solve(MatrixXd::Identity(p, p));
    ThetaPS<double> th;
    th.sig2_eps = s2;
    th.spatial = {KernelKind::Exponential, initial_spatial_range(d)};
    th.temporal = {KernelKind::Exponential, initial_temporal_range(d)};
    out.theta = th;
    out.objective = rss;
    out.wall_time_s.optimize_s = seconds_since(t0);
    return out;
}

FitResult fit(Model model, Method method, const StDesign<double>& d, const MatrixXd& x, const VectorXd& y,
              const EstimateOptions& opts) {
    check_combination(model, method);
    switch (method) {
        case Method::Reml: return fit_reml(model, d, x, y, opts);
        case Method::Cwls: return fit_cwls(model, d, x, y, opts);
        case Method::Ols: break;
    }
    return fit_ols(d, x, y);
}

WaldTest wald_test(const FitResult& fit, Index k) {
    if (k < 0 || k >= fit.beta_hat.size()) throw DomainError("wald_test: coefficient index out of range");
    const double var = fit.cov_beta(k, k);
    if (!(var > 0)) throw DomainError("wald_test: zero standard error for coefficient " + std::to_string(k));
    WaldTest out;
    out.statistic = std::abs(fit.beta_hat(k)) / std::sqrt(var);
    out.p_value = std::erfc(out.statistic / std::sqrt(2.0));
    return out;
}

}  // namespace stlmm
