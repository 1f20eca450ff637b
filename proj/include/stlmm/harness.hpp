#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/covariance.hpp"
#include "stlmm/design.hpp"
#include "stlmm/estimate.hpp"
#include "stlmm/io.hpp"

namespace stlmm {

/// A named product-sum parameter set for simulation.
struct VarianceConfig {
    std::string name;
    ThetaPS<double> theta;
};

/// VC1..VC4 with exponential correlations, kappa = 2.25 and phi = 9.
VarianceConfig variance_config(int which);
/// Accepts "VC1".."VC4" (case-insensitive) or "1".."4".
VarianceConfig variance_config(const std::string& name);

struct SimProtocol {
    Index n_sites = 36;
    Index n_times = 30;
    double extent = 5.0;  // sites uniform on [0, extent]^2
    Index n_test = 25;
    int reps = 200;
    std::uint64_t seed = 1;
    /// Coefficients of (1, x1, x2, x3).
    Eigen::Vector4d beta = Eigen::Vector4d::Zero();
};

/// One simulated data set on the full grid. `design` marks the training
/// cells observed; test cells are its unobserved cells.
struct SimDataset {
    StDesign<double> design;
    Eigen::MatrixXd x_full;  // n_cells x 4, canonical order
    Eigen::VectorXd y_full;
    std::vector<Index> train, test;

    Eigen::MatrixXd x_train() const;
    Eigen::VectorXd y_train() const;
    Eigen::MatrixXd x_test() const;
    Eigen::VectorXd y_test() const;
};

/// Rows of `cells` as an observation table (site ids "s<i>", integer times,
/// covariates x1..x3), grouped by site so that reading the table back
/// reproduces the site order. Unobserved cells keep their simulated response.
ObservationTable dataset_table(const SimDataset& data, const std::vector<Index>& cells);

/// Seed of repetition `rep` derived from a root seed (splitmix64 of the
/// counter), so any repetition can be reproduced on its own.
std::uint64_t rep_seed(std::uint64_t root, std::uint64_t rep);

/// Draws sites, covariates and the six random components; x1 varies over
/// time only, x2 over space only, x3 over both.
SimDataset simulate_dataset(const VarianceConfig& cfg, const SimProtocol& proto, std::uint64_t seed);

struct MethodSpec {
    Model model;
    Method method;
    std::string label() const { return combination_label(model, method); }
};

/// The five model / method combinations: PS_REML, PS_C-WLS, SEP_REML,
/// SEP_C-WLS, IRE_OLS.
std::vector<MethodSpec> study_methods();
/// Parses a label such as "PS_REML" or "sep_cwls".
MethodSpec parse_method_spec(const std::string& label);

struct MethodMetrics {
    std::string label;
    int reps_ok = 0;
    int failures = 0;
    int nonconverged = 0;
    /// Per coefficient (including the intercept).
    Eigen::VectorXd type1;
    Eigen::VectorXd bias;
    Eigen::VectorXd rmse;
    double coverage = 0;
    double pred_bias = 0;
    double rmspe = 0;
    double sv_s = 0;
    double est_s = 0;
    double total_s() const { return sv_s + est_s; }
};

struct MetricsTable {
    std::string config;
    int reps = 0;
    std::uint64_t seed = 0;
    std::vector<MethodMetrics> rows;

    const MethodMetrics& at(const std::string& label) const;
    /// Timing columns are the only non-deterministic fields.
    void write_csv(std::ostream& os, bool with_timing = true) const;
    void write_text(std::ostream& os) const;
};

/// Type-I band and coverage band used to flag valid rates.
inline constexpr double kTypeIBand[2] = {0.04, 0.06};
inline constexpr double kCoverageBand[2] = {0.948, 0.952};

struct StudyOptions {
    EstimateOptions estimate;
    /// <= 0: STLMM_WORKERS from the environment, else hardware concurrency.
    int workers = 0;
    /// Largest failed-repetition fraction tolerated per method.
    double max_failure_fraction = 0.05;
    std::function<void(int done, int total)> progress;
};

int default_workers();

MetricsTable run_study(const VarianceConfig& cfg, const SimProtocol& proto, const std::vector<MethodSpec>& methods,
                       const StudyOptions& opts = {});
std::vector<MetricsTable> run_study(const std::vector<VarianceConfig>& cfgs, const SimProtocol& proto,
                                    const std::vector<MethodSpec>& methods, const StudyOptions& opts = {});

struct BenchOptions {
    std::vector<Index> sizes{50, 1000, 3000};
    double missing = 0.05;
    int n_matrices = 10;
    std::uint64_t seed = 1;
    /// Grids whose dense covariance would exceed this many bytes are skipped.
    double max_dense_bytes = 2e9;
};

struct BenchRow {
    Index n_target = 0;
    Index n_sites = 0, n_times = 0, n_obs = 0;
    double ps_s = 0, sep_s = 0, dense_ps_s = 0, dense_sep_s = 0;
    double max_rel_err = 0;
    bool skipped = false;
    double ps_ratio() const { return dense_ps_s / ps_s; }
    double sep_ratio() const { return dense_sep_s / sep_s; }
};

/// Separable counterpart of a product-sum configuration used in the
/// benchmark: same total variance, half of it nugget in space and time.
ThetaSep<double> bench_separable(const VarianceConfig& cfg);

/// Times the structured solvers (product-sum and separable, Helmert-Wolf for
/// the missing cells) against dense Cholesky on grids scaled from 36 x 30.
/// Each timed solve is Sigma_oo^{-1} [X y] plus log|Sigma_oo|, including the
/// correlation matrices for the fast path and excluding covariance assembly
/// for the dense path.
std::vector<BenchRow> bench_inversion(const VarianceConfig& cfg, const BenchOptions& opts);
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace stlmm
