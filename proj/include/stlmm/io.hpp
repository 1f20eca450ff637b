#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/design.hpp"
#include "stlmm/estimate.hpp"
#include "stlmm/predict.hpp"
#include "stlmm/semivariogram.hpp"

namespace stlmm {

/// Column names of an observation file. An empty covariate list means every
/// column other than the five named ones, in file order.
struct Manifest {
    std::string site_id = "site_id";
    std::string x = "x_km";
    std::string y = "y_km";
    std::string time = "time";
    std::string response = "response";
    std::vector<std::string> covariates;
};

struct ObservationRow {
    std::string site_id;
    double x = 0, y = 0;
    std::string time_label;
    double time = 0;
    /// NaN when the response cell is empty (allowed for prediction targets).
    double response = 0;
    std::vector<double> covariates;
    std::size_t line = 0;
};

struct ObservationTable {
    std::vector<std::string> covariate_names;
    std::vector<ObservationRow> rows;
    /// Times were ISO dates, stored as days since 1970-01-01.
    bool iso_dates = false;
};

/// Parses a CSV file (header row, comma separated). Times are numbers or
/// ISO dates (YYYY-MM-DD); dates become day counts since 1970-01-01.
ObservationTable read_observations(const std::string& path, const Manifest& manifest = {});

/// A training set on the grid spanned by its own sites and times, optionally
/// extended by the sites and times of a target table.
struct GridData {
    StDesign<double> design;  // observed = training cells
    Eigen::MatrixXd x;        // observed cells, canonical order; intercept first
    Eigen::VectorXd y;
    std::vector<std::string> site_ids;
    std::vector<std::string> time_labels;
    std::vector<std::string> covariate_names;  // without the intercept

    /// Target cells (canonical indices) and their design rows, in table order.
    std::vector<Index> targets;
    Eigen::MatrixXd x_targets;
    Eigen::VectorXd y_targets;
};

/// Builds the grid, observed mask and design matrix. Errors on duplicate
/// (site, time) pairs, inconsistent coordinates per site, missing covariates
/// and non-finite training responses; all are DataError with line numbers.
GridData build_grid(const ObservationTable& train, const ObservationTable* targets = nullptr);

GridData load_observations(const std::string& path, const Manifest& manifest = {});
GridData load_split(const std::string& train_path, const std::string& test_path, const Manifest& manifest = {});

/// Writes a table in the format read_observations expects.
void write_observations(std::ostream& os, const ObservationTable& table, const Manifest& manifest = {});

/// Parameter CSV. Product-sum and IRE fits: sig2_delta, sig2_gamma,
/// sig2_tau, sig2_eta, sig2_omega, sig2_eps, phi (temporal range), kappa
/// (spatial range). Separable fits: sig2_omega, v_s, v_t, phi, kappa.
void write_params_csv(std::ostream& os, const FitResult& fit);
void write_fit_text(std::ostream& os, const FitResult& fit, const std::vector<std::string>& coef_names);
void write_predictions_csv(std::ostream& os, const GridData& data, const PredictionResult& pred);
/// Empirical classes: lower, upper, lag, center_s, center_t, count, gamma_hat.
void write_empirical_sv_csv(std::ostream& os, const EmpSv& sv);
/// Fitted semivariogram on a lag grid: h_s, h_t, gamma.
void write_fitted_sv_csv(std::ostream& os, const Theta& th, const std::vector<double>& hs,
                         const std::vector<double>& ht);

}  // namespace stlmm
