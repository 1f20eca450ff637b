#include "stlmm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "stlmm/errors.hpp"
#include "stlmm/fastsolve.hpp"
#include "stlmm/predict.hpp"

namespace stlmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VarianceConfig variance_config(int which) {
    VarianceConfig cfg;
    switch (which) {
        case 1: cfg.theta.set_variances({18.0, 1.0, 18.0, 1.0, 20.0, 2.0}); break;
        case 2: cfg.theta.set_variances({16.0, 4.0, 16.0, 4.0, 16.0, 4.0}); break;
        case 3: cfg.theta.set_variances({10.0, 10.0, 10.0, 10.0, 10.0, 10.0}); break;
        case 4: cfg.theta.set_variances({30.0, 0.1, 20.0, 0.1, 2.0, 7.8}); break;
        default: throw DomainError("variance_config: expected 1..4, got " + std::to_string(which));
    }
    cfg.name = "VC" + std::to_string(which);
    cfg.theta.spatial = {KernelKind::Exponential, 2.25};
    cfg.theta.temporal = {KernelKind::Exponential, 9.0};
    return cfg;
}

VarianceConfig variance_config(const std::string& name) {
    std::string s;
    for (char c : name) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (s.rfind("VC", 0) == 0) s = s.substr(2);
    if (s.size() == 1 && s[0] >= '1' && s[0] <= '4') return variance_config(s[0] - '0');
    throw UsageError("unknown variance configuration '" + name + "' (expected VC1..VC4)");
}

namespace {

MatrixXd take_rows(const MatrixXd& m, const std::vector<Index>& rows) {
    MatrixXd out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
    return out;
}

VectorXd take(const VectorXd& v, const std::vector<Index>& rows) {
    VectorXd out(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Index>(k)) = v(rows[k]);
    return out;
}

/// Lower Cholesky factor; a tiny diagonal jitter rescues numerically
/// singular correlation matrices (near-coincident sites).
MatrixXd chol_factor(const MatrixXd& r) {
    Eigen::LLT<MatrixXd> llt(r);
    double jitter = 1e-12;
    while (llt.info() != Eigen::Success && jitter < 1e-4) {
        llt.compute(r + jitter * MatrixXd::Identity(r.rows(), r.cols()));
        jitter *= 10;
    }
    if (llt.info() != Eigen::Success) throw FactorizationError("simulate_dataset: correlation matrix not p.d.");
    return llt.matrixL();
}

VectorXd normals(std::mt19937_64& rng, Index n) {
    std::normal_distribution<double> z(0.0, 1.0);
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = z(rng);
    return v;
}

}  // namespace

MatrixXd SimDataset::x_train() const { return take_rows(x_full, train); }
VectorXd SimDataset::y_train() const { return take(y_full, train); }
MatrixXd SimDataset::x_test() const { return take_rows(x_full, test); }
VectorXd SimDataset::y_test() const { return take(y_full, test); }

ObservationTable dataset_table(const SimDataset& data, const std::vector<Index>& cells) {
    ObservationTable table;
    table.covariate_names = {"x1", "x2", "x3"};
    const auto& d = data.design;
    std::vector<Index> order = cells;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return d.site_of(a) < d.site_of(b); });
    for (Index c : order) {
        ObservationRow r;
        const Index i = d.site_of(c), j = d.time_of(c);
        r.site_id = "s" + std::to_string(i + 1);
        r.x = d.sites()(i, 0);
        r.y = d.sites()(i, 1);
        r.time = d.times()(j);
        r.time_label = std::to_string(static_cast<long>(std::lround(r.time)));
        r.response = data.y_full(c);
        r.covariates = {data.x_full(c, 1), data.x_full(c, 2), data.x_full(c, 3)};
        table.rows.push_back(std::move(r));
    }
    return table;
}

std::uint64_t rep_seed(std::uint64_t root, std::uint64_t rep) {
    std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (rep + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

SimDataset simulate_dataset(const VarianceConfig& cfg, const SimProtocol& proto, std::uint64_t seed) {
    cfg.theta.validate();
    const Index s = proto.n_sites, t = proto.n_times, n = s * t;
    if (s < 1 || t < 1) throw DomainError("simulate_dataset: empty grid");
    if (proto.n_test < 0 || proto.n_test >= n) throw DomainError("simulate_dataset: n_test must be in [0, S*T)");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, proto.extent);
    Coords<double> sites(s, 2);
    for (Index i = 0; i < s; ++i) {
        sites(i, 0) = u(rng);
        sites(i, 1) = u(rng);
    }
    VectorXd times(t);
    for (Index j = 0; j < t; ++j) times(j) = static_cast<double>(j + 1);

    const auto& th = cfg.theta;
    const MatrixXd ls = chol_factor(correlation_matrix(th.spatial, sites));
    const MatrixXd lt = chol_factor(correlation_matrix(th.temporal, times));

    const VectorXd delta = std::sqrt(th.sig2_delta) * (ls * normals(rng, s));
    const VectorXd gamma = std::sqrt(th.sig2_gamma) * normals(rng, s);
    const VectorXd tau = std::sqrt(th.sig2_tau) * (lt * normals(rng, t));
    const VectorXd eta = std::sqrt(th.sig2_eta) * normals(rng, t);
    const VectorXd zw = normals(rng, n);
    const MatrixXd omega = std::sqrt(th.sig2_omega) * (ls * Eigen::Map<const MatrixXd>(zw.data(), s, t) * lt.transpose());
    const VectorXd eps = std::sqrt(th.sig2_eps) * normals(rng, n);

    const VectorXd x1 = normals(rng, t), x2 = normals(rng, s), x3 = normals(rng, n);

    SimDataset out;
    out.x_full.resize(n, 4);
    out.y_full.resize(n);
    for (Index j = 0; j < t; ++j)
        for (Index i = 0; i < s; ++i) {
            const Index c = j * s + i;
            out.x_full.row(c) << 1.0, x1(j), x2(i), x3(c);
            out.y_full(c) = delta(i) + gamma(i) + tau(j) + eta(j) + omega(i, j) + eps(c);
        }
    out.y_full += out.x_full * proto.beta;

    std::vector<Index> cells(static_cast<std::size_t>(n));
    std::iota(cells.begin(), cells.end(), Index{0});
    std::shuffle(cells.begin(), cells.end(), rng);
    out.test.assign(cells.begin(), cells.begin() + proto.n_test);
    out.train.assign(cells.begin() + proto.n_test, cells.end());
    std::sort(out.test.begin(), out.test.end());
    std::sort(out.train.begin(), out.train.end());
    std::vector<bool> mask(static_cast<std::size_t>(n), true);
    for (Index c : out.test) mask[static_cast<std::size_t>(c)] = false;
    out.design = StDesign<double>(sites, times, mask);
    return out;
}

std::vector<MethodSpec> study_methods() {
    return {{Model::ProductSum, Method::Reml},
            {Model::ProductSum, Method::Cwls},
            {Model::Separable, Method::Reml},
            {Model::Separable, Method::Cwls},
            {Model::Ire, Method::Ols}};
}

MethodSpec parse_method_spec(const std::string& label) {
    std::string s;
    for (char c : label)
        if (c != '-') s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const auto& m : study_methods()) {
        std::string l;
        for (char c : m.label())
            if (c != '-') l += c;
        if (l == s) return m;
    }
    throw UsageError("unknown model/method combination '" + label +
                     "' (expected PS_REML, PS_C-WLS, SEP_REML, SEP_C-WLS or IRE_OLS)");
}

const MethodMetrics& MetricsTable::at(const std::string& label) const {
    for (const auto& r : rows)
        if (r.label == label) return r;
    throw DomainError("MetricsTable: no row for " + label);
}

void MetricsTable::write_csv(std::ostream& os, bool with_timing) const {
    const Index p = rows.empty() ? 0 : rows.front().bias.size();
    os << "config,seed,reps,method,reps_ok,failures,nonconverged";
    for (const char* what : {"type1", "bias", "rmse"})
        for (Index k = 0; k < p; ++k) os << ',' << what << "_b" << k;
    os << ",coverage,pred_bias,rmspe";
    if (with_timing) os << ",sv_s,est_s,total_s";
    os << '\n';
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << config << ',' << seed << ',' << reps << ',' << r.label << ',' << r.reps_ok << ',' << r.failures << ','
           << r.nonconverged;
        for (const VectorXd* v : {&r.type1, &r.bias, &r.rmse})
            for (Index k = 0; k < p; ++k) os << ',' << (*v)(k);
        os << ',' << r.coverage << ',' << r.pred_bias << ',' << r.rmspe;
        if (with_timing) os << ',' << r.sv_s << ',' << r.est_s << ',' << r.total_s();
        os << '\n';
    }
}

void MetricsTable::write_text(std::ostream& os) const {
    const auto flag = [](double v, const double* band) { return v >= band[0] && v <= band[1] ? '*' : ' '; };
    os << config << ", " << reps << " repetitions, seed " << seed << "  (* = within validity band)\n";
    os << std::left << std::setw(11) << "method" << std::right;
    const Index p = rows.empty() ? 0 : rows.front().bias.size();
    for (Index k = 1; k < p; ++k) os << std::setw(9) << ("T1 b" + std::to_string(k));
    for (Index k = 1; k < p; ++k) os << std::setw(9) << ("bias b" + std::to_string(k));
    for (Index k = 1; k < p; ++k) os << std::setw(9) << ("RMSE b" + std::to_string(k));
    os << std::setw(9) << "cover" << std::setw(9) << "p.bias" << std::setw(9) << "RMSPE" << std::setw(8) << "SV s"
       << std::setw(8) << "Est s" << std::setw(8) << "fail" << '\n';
    os << std::fixed;
    for (const auto& r : rows) {
        os << std::left << std::setw(11) << r.label << std::right;
        for (Index k = 1; k < p; ++k) os << std::setw(8) << std::setprecision(4) << r.type1(k) << flag(r.type1(k), kTypeIBand);
        for (Index k = 1; k < p; ++k) os << std::setw(9) << std::setprecision(4) << r.bias(k);
        for (Index k = 1; k < p; ++k) os << std::setw(9) << std::setprecision(4) << r.rmse(k);
        os << std::setw(8) << std::setprecision(4) << r.coverage << flag(r.coverage, kCoverageBand);
        os << std::setw(9) << std::setprecision(4) << r.pred_bias << std::setw(9) << r.rmspe;
        os << std::setw(8) << std::setprecision(2) << r.sv_s << std::setw(8) << r.est_s << std::setw(8) << r.failures
           << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

int default_workers() {
    if (const char* env = std::getenv("STLMM_WORKERS")) {
        const int w = std::atoi(env);
        if (w > 0) return w;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct RepOutcome {
    bool ok = false;
    bool converged = true;
    VectorXd reject, beta_err;
    int covered = 0, n_pred = 0;
    double pred_err = 0, pred_sq = 0;
    double sv_s = 0, est_s = 0;
};

RepOutcome run_method(const MethodSpec& m, const SimDataset& data, const SimProtocol& proto,
                      const EstimateOptions& opts) {
    RepOutcome out;
    const MatrixXd x = data.x_train();
    const VectorXd y = data.y_train();
    const FitResult f = fit(m.model, m.method, data.design, x, y, opts);
    const Index p = f.beta_hat.size();
    out.reject.resize(p);
    for (Index k = 0; k < p; ++k) out.reject(k) = wald_test(f, k).statistic > kIntervalZ ? 1.0 : 0.0;
    out.beta_err = f.beta_hat - proto.beta.head(p);
    const PredictionResult pr = blup(f, data.design, x, y, data.x_test(), data.test);
    const VectorXd y_u = data.y_test();
    for (Index k = 0; k < y_u.size(); ++k) {
        const double e = pr.y_hat(k) - y_u(k);
        out.pred_err += e;
        out.pred_sq += e * e;
        if (y_u(k) >= pr.lower(k) && y_u(k) <= pr.upper(k)) ++out.covered;
    }
    out.n_pred = static_cast<int>(y_u.size());
    out.converged = f.converged;
    out.sv_s = f.wall_time_s.semivariogram_s;
    out.est_s = f.wall_time_s.optimize_s;
    out.ok = true;
    return out;
}

MethodMetrics aggregate(const std::string& label, const std::vector<RepOutcome>& reps) {
    MethodMetrics m;
    m.label = label;
    Index p = 0;
    for (const auto& r : reps)
        if (r.ok) p = r.reject.size();
    m.type1 = m.bias = m.rmse = VectorXd::Zero(p);
    long covered = 0, n_pred = 0;
    double pred_err = 0, pred_sq = 0;
    for (const auto& r : reps) {
        if (!r.ok) {
            ++m.failures;
            continue;
        }
        ++m.reps_ok;
        if (!r.converged) ++m.nonconverged;
        m.type1 += r.reject;
        m.bias += r.beta_err;
        m.rmse += r.beta_err.cwiseAbs2();
        covered += r.covered;
        n_pred += r.n_pred;
        pred_err += r.pred_err;
        pred_sq += r.pred_sq;
        m.sv_s += r.sv_s;
        m.est_s += r.est_s;
    }
    if (m.reps_ok > 0) {
        const double k = m.reps_ok;
        m.type1 /= k;
        m.bias /= k;
        m.rmse = (m.rmse / k).cwiseSqrt();
        m.sv_s /= k;
        m.est_s /= k;
    }
    if (n_pred > 0) {
        m.coverage = static_cast<double>(covered) / static_cast<double>(n_pred);
        m.pred_bias = pred_err / static_cast<double>(n_pred);
        m.rmspe = std::sqrt(pred_sq / static_cast<double>(n_pred));
    }
    return m;
}

}  // namespace

MetricsTable run_study(const VarianceConfig& cfg, const SimProtocol& proto, const std::vector<MethodSpec>& methods,
                       const StudyOptions& opts) {
    if (proto.reps < 1) throw DomainError("run_study: reps must be >= 1");
    if (methods.empty()) throw DomainError("run_study: no methods selected");
    const int reps = proto.reps;
    const int workers = std::clamp(opts.workers > 0 ? opts.workers : default_workers(), 1, reps);

    std::vector<std::vector<RepOutcome>> results(methods.size(), std::vector<RepOutcome>(static_cast<std::size_t>(reps)));
    std::atomic<int> next{0};
    std::mutex progress_mutex;
    int done = 0;
    auto work = [&] {
        for (int k = next++; k < reps; k = next++) {
            try {
                const SimDataset data = simulate_dataset(cfg, proto, rep_seed(proto.seed, static_cast<std::uint64_t>(k)));
                for (std::size_t m = 0; m < methods.size(); ++m) {
                    try {
                        results[m][static_cast<std::size_t>(k)] = run_method(methods[m], data, proto, opts.estimate);
                    } catch (const Error&) {
                    }
                }
            } catch (const Error&) {
            }
            if (opts.progress) {
                std::lock_guard<std::mutex> lock(progress_mutex);
                opts.progress(++done, reps);
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    MetricsTable table;
    table.config = cfg.name;
    table.reps = reps;
    table.seed = proto.seed;
    for (std::size_t m = 0; m < methods.size(); ++m) {
        table.rows.push_back(aggregate(methods[m].label(), results[m]));
        const auto& row = table.rows.back();
        if (row.failures > opts.max_failure_fraction * reps)
            throw Error("run_study: " + row.label + " failed in " + std::to_string(row.failures) + " of " +
                        std::to_string(reps) + " repetitions");
    }
    return table;
}

std::vector<MetricsTable> run_study(const std::vector<VarianceConfig>& cfgs, const SimProtocol& proto,
                                    const std::vector<MethodSpec>& methods, const StudyOptions& opts) {
    std::vector<MetricsTable> out;
    for (const auto& cfg : cfgs) out.push_back(run_study(cfg, proto, methods, opts));
    return out;
}

ThetaSep<double> bench_separable(const VarianceConfig& cfg) {
    ThetaSep<double> th;
    th.sig2_omega = cfg.theta.total();
    th.v_s = 0.5;
    th.v_t = 0.5;
    th.spatial = cfg.theta.spatial;
    th.temporal = cfg.theta.temporal;
    return th;
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
double mean_seconds(int repeats, F&& f) {
    double total = 0;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        f();
        total += std::chrono::duration<double>(Clock::now() - t0).count();
    }
    return total / repeats;
}

}  // namespace

std::vector<BenchRow> bench_inversion(const VarianceConfig& cfg, const BenchOptions& opts) {
    if (opts.n_matrices < 1) throw DomainError("bench_inversion: n_matrices must be >= 1");
    if (!(opts.missing >= 0 && opts.missing < 1)) throw DomainError("bench_inversion: missing must be in [0, 1)");
    const ThetaSep<double> sep = bench_separable(cfg);
    std::vector<BenchRow> rows;
    for (std::size_t k = 0; k < opts.sizes.size(); ++k) {
        BenchRow row;
        row.n_target = opts.sizes[k];
        const double f = std::sqrt(static_cast<double>(row.n_target) / 1080.0);
        row.n_sites = std::max<Index>(2, std::lround(36 * f));
        row.n_times = std::max<Index>(2, std::lround(30 * f));
        const Index cells = row.n_sites * row.n_times;
        const auto n_missing = static_cast<Index>(std::lround(opts.missing * static_cast<double>(cells)));
        row.n_obs = cells - n_missing;
        if (8.0 * static_cast<double>(row.n_obs) * static_cast<double>(row.n_obs) > opts.max_dense_bytes) {
            row.skipped = true;
            rows.push_back(row);
            continue;
        }

        std::mt19937_64 rng(rep_seed(opts.seed, k));
        std::uniform_real_distribution<double> u(0.0, 5.0);
        Coords<double> sites(row.n_sites, 2);
        for (Index i = 0; i < row.n_sites; ++i) sites.row(i) << u(rng), u(rng);
        VectorXd times(row.n_times);
        for (Index j = 0; j < row.n_times; ++j) times(j) = static_cast<double>(j + 1);
        std::vector<Index> order(static_cast<std::size_t>(cells));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> mask(static_cast<std::size_t>(cells), true);
        for (Index c = 0; c < n_missing; ++c) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(c)])] = false;
        const StDesign<double> d(sites, times, mask);
        MatrixXd rhs(row.n_obs, 5);
        for (Index c = 0; c < 5; ++c) rhs.col(c) = normals(rng, row.n_obs);

        const MatrixXd sigma_ps = dense_cov_ps(cfg.theta, d);
        const MatrixXd sigma_sep = dense_cov_sep(sep, d);

        // Agreement before any timing.
        const auto check = [&](const FastSolve<double>& fast, const FastSolve<double>& ref) {
            const double scale = ref.sigma_inv_rhs.cwiseAbs().maxCoeff();
            const double e = std::max((fast.sigma_inv_rhs - ref.sigma_inv_rhs).cwiseAbs().maxCoeff() / scale,
                                      std::abs(fast.logdet - ref.logdet) / std::abs(ref.logdet));
            row.max_rel_err = std::max(row.max_rel_err, e);
        };
        check(hw_solve(cfg.theta, d, rhs), dense_solve(sigma_ps, rhs));
        check(hw_solve(sep, d, rhs), dense_solve(sigma_sep, rhs));
        if (!(row.max_rel_err <= 1e-8))
            throw Error("bench_inversion: fast and dense solves disagree (relative error " +
                        std::to_string(row.max_rel_err) + ") at n = " + std::to_string(row.n_obs));

        volatile double sink = 0;
        row.ps_s = mean_seconds(opts.n_matrices, [&] { sink = sink + hw_solve(cfg.theta, d, rhs).logdet; });
        row.sep_s = mean_seconds(opts.n_matrices, [&] { sink = sink + hw_solve(sep, d, rhs).logdet; });
        row.dense_ps_s = mean_seconds(opts.n_matrices, [&] { sink = sink + dense_solve(sigma_ps, rhs).logdet; });
        row.dense_sep_s = mean_seconds(opts.n_matrices, [&] { sink = sink + dense_solve(sigma_sep, rhs).logdet; });
        rows.push_back(row);
    }
    return rows;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "n_target,n_sites,n_times,n_obs,skipped,ps_s,sep_s,dense_ps_s,dense_sep_s,ps_ratio,sep_ratio,max_rel_err\n";
    os << std::setprecision(8);
    for (const auto& r : rows) {
        os << r.n_target << ',' << r.n_sites << ',' << r.n_times << ',' << r.n_obs << ',' << (r.skipped ? 1 : 0);
        if (r.skipped) {
            os << ",,,,,,,\n";
            continue;
        }
        os << ',' << r.ps_s << ',' << r.sep_s << ',' << r.dense_ps_s << ',' << r.dense_sep_s << ',' << r.ps_ratio()
           << ',' << r.sep_ratio() << ',' << r.max_rel_err << '\n';
    }
}

}  // namespace stlmm
