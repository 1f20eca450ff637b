#include "stlmm/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "stlmm/errors.hpp"
#include "stlmm/estimate.hpp"
#include "stlmm/harness.hpp"
#include "stlmm/io.hpp"
#include "stlmm/predict.hpp"

namespace stlmm {

namespace {

/// Options shared by fit, predict and semivariogram.
struct RunConfig {
    std::string model = "product_sum";
    std::string method = "reml";
    std::string spatial_kernel = "exponential";
    std::string temporal_kernel = "exponential";
    int spatial_bins = 15;
    double max_distance = 0;
    int max_lag = -1;
    int max_evals = 2000;
    int fgls_iterations = 1;
    bool allow_nonconverged = false;
    std::string train;
    Manifest manifest;
    std::string covariates;

    EstimateOptions options() const {
        EstimateOptions o;
        o.spatial_kernel = parse_kernel(spatial_kernel);
        o.temporal_kernel = parse_kernel(temporal_kernel);
        o.bins.spatial_bins = spatial_bins;
        o.bins.max_distance = max_distance;
        o.bins.max_lag = max_lag;
        o.simplex.max_evaluations = max_evals;
        o.fgls_iterations = fgls_iterations;
        return o;
    }
    Manifest columns() const {
        Manifest m = manifest;
        m.covariates = split_list(covariates);
        return m;
    }
    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    }
};

void add_run_options(CLI::App* app, RunConfig& cfg) {
    app->add_option("--config", "Flat key = value file; every key names a long flag, flags on the command line win");
    app->add_option("--train", cfg.train, "Training CSV")->required();
    app->add_option("--model", cfg.model, "product_sum | separable | ire")->capture_default_str();
    app->add_option("--method", cfg.method, "reml | cwls | ols")->capture_default_str();
    app->add_option("--spatial-kernel", cfg.spatial_kernel, "exponential | spherical | gaussian")
        ->capture_default_str();
    app->add_option("--temporal-kernel", cfg.temporal_kernel, "exponential | spherical | gaussian")
        ->capture_default_str();
    app->add_option("--spatial-bins", cfg.spatial_bins, "Positive-distance semivariogram classes")
        ->capture_default_str();
    app->add_option("--max-distance", cfg.max_distance, "Largest semivariogram distance (0: half the maximum)");
    app->add_option("--max-lag", cfg.max_lag, "Largest semivariogram lag in time steps (-1: T/2)");
    app->add_option("--max-evals", cfg.max_evals, "Optimizer evaluation cap")->capture_default_str();
    app->add_option("--fgls-iterations", cfg.fgls_iterations, "C-WLS passes")->capture_default_str();
    app->add_flag("--allow-nonconverged", cfg.allow_nonconverged, "Exit 0 even if the optimizer hit its cap");
    app->add_option("--site-col", cfg.manifest.site_id, "Site id column")->capture_default_str();
    app->add_option("--x-col", cfg.manifest.x, "Easting column (km)")->capture_default_str();
    app->add_option("--y-col", cfg.manifest.y, "Northing column (km)")->capture_default_str();
    app->add_option("--time-col", cfg.manifest.time, "Time column (number or YYYY-MM-DD)")->capture_default_str();
    app->add_option("--response-col", cfg.manifest.response, "Response column")->capture_default_str();
    app->add_option("--covariates", cfg.covariates, "Comma-separated covariate columns (default: all others)");
}

std::vector<std::string> coefficient_names(const GridData& data) {
    std::vector<std::string> names{"(intercept)"};
    names.insert(names.end(), data.covariate_names.begin(), data.covariate_names.end());
    return names;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write '" + path + "'");
    return os;
}

/// Runs the selected fit; reports non-convergence.
FitResult run_fit(const RunConfig& cfg, const GridData& data, bool& nonconverged) {
    const Model model = parse_model(cfg.model);
    const Method method = parse_method(cfg.method);
    check_combination(model, method);
    for (const auto& w : data.design.warnings()) std::cerr << "warning: " << w << '\n';
    FitResult f = fit(model, method, data.design, data.x, data.y, cfg.options());
    nonconverged = !f.converged;
    if (nonconverged)
        std::cerr << (cfg.allow_nonconverged ? "warning" : "error")
                  << ": optimizer reached its evaluation cap without converging\n";
    return f;
}

int exit_for(bool nonconverged, const RunConfig& cfg) {
    return nonconverged && !cfg.allow_nonconverged ? kExitNonConverged : kExitOk;
}

std::vector<double> parse_doubles(const std::vector<std::string>& items) {
    std::vector<double> out;
    for (const auto& s : items) out.push_back(std::stod(s));
    return out;
}

std::string unquote(std::string v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
    return v;
}

/// Expands `--config FILE` into flags. Keys use long-flag names (with '-' or
/// '_'); keys also given on the command line are dropped so flags win.
std::vector<std::string> expand_config(const CLI::App& app, const std::vector<std::string>& args) {
    const CLI::App* sub = nullptr;
    std::size_t sub_pos = 0;
    for (std::size_t k = 1; k < args.size() && !sub; ++k)
        for (const CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; }))
            if (s->get_name() == args[k]) {
                sub = s;
                sub_pos = k;
                break;
            }
    if (!sub) return args;

    std::string path;
    std::vector<std::string> rest;
    std::vector<std::string> given;
    for (std::size_t k = sub_pos + 1; k < args.size(); ++k) {
        const std::string& a = args[k];
        if (a == "--config" && k + 1 < args.size()) {
            path = args[++k];
            continue;
        }
        if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
            continue;
        }
        if (a.rfind("--", 0) == 0) given.push_back(a.substr(2, a.find('=') == std::string::npos ? std::string::npos
                                                                                             : a.find('=') - 2));
        rest.push_back(a);
    }
    if (path.empty()) return args;

    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file '" + path + "'");
    std::vector<std::string> out(args.begin(), args.begin() + static_cast<long>(sub_pos) + 1);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto strip = [](std::string v) {
            const auto b = v.find_first_not_of(" \t\r");
            const auto e = v.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
        };
        if (strip(line).empty()) continue;
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = strip(line.substr(0, eq));
        const std::string value = unquote(strip(line.substr(eq + 1)));
        std::replace(key.begin(), key.end(), '_', '-');
        if (std::find(given.begin(), given.end(), key) != given.end()) continue;
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (opt->get_expected_min() == 0) {
            if (value == "true" || value == "1" || value == "yes") out.push_back("--" + key);
            continue;
        }
        out.push_back("--" + key);
        out.push_back(value);
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Spatio-temporal linear mixed models: fitting, prediction and simulation"};
    app.require_subcommand(1);

    RunConfig fit_cfg;
    std::string fit_out, fit_params;
    auto* fit_cmd = app.add_subcommand("fit", "Estimate covariance parameters and fixed effects");
    add_run_options(fit_cmd, fit_cfg);
    fit_cmd->add_option("--out", fit_out, "Fit summary (default: stdout)");
    fit_cmd->add_option("--params", fit_params, "Parameter CSV");

    RunConfig pred_cfg;
    std::string pred_test, pred_out;
    double pred_fraction = 0;
    std::uint64_t pred_seed = 1;
    auto* pred_cmd = app.add_subcommand("predict", "Fit on training rows, then krige target rows");
    add_run_options(pred_cmd, pred_cfg);
    auto* test_opt = pred_cmd->add_option("--test", pred_test, "Target CSV (response may be empty)");
    auto* frac_opt = pred_cmd->add_option("--test-fraction", pred_fraction,
                                          "Hold out this fraction of training rows as targets instead of --test");
    test_opt->excludes(frac_opt);
    pred_cmd->add_option("--seed", pred_seed, "Seed for --test-fraction")->capture_default_str();
    pred_cmd->add_option("--out", pred_out, "Prediction CSV")->required();

    RunConfig sv_cfg;
    std::vector<std::string> sv_hs, sv_ht;
    std::string sv_fitted, sv_empirical;
    auto* sv_cmd = app.add_subcommand("semivariogram", "Empirical and fitted spatio-temporal semivariogram");
    add_run_options(sv_cmd, sv_cfg);
    sv_cmd->add_option("--spatial-lags", sv_hs, "Spatial lags for the fitted surface")->delimiter(',');
    sv_cmd->add_option("--temporal-lags", sv_ht, "Temporal lags for the fitted surface")->delimiter(',');
    sv_cmd->add_option("--fitted", sv_fitted, "Fitted-surface CSV")->required();
    sv_cmd->add_option("--empirical", sv_empirical, "Empirical-semivariogram CSV")->required();

    std::vector<std::string> sim_vcs{"VC2"}, sim_methods;
    SimProtocol proto;
    int sim_workers = 0;
    std::string sim_dir = ".", sim_dataset;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte-Carlo simulation study");
    sim_cmd->add_option("--config", "Flat key = value file");
    sim_cmd->add_option("--vc", sim_vcs, "Variance configurations (VC1..VC4)")->delimiter(',')->capture_default_str();
    sim_cmd->add_option("--methods", sim_methods, "Subset of PS_REML,PS_C-WLS,SEP_REML,SEP_C-WLS,IRE_OLS")
        ->delimiter(',');
    sim_cmd->add_option("--reps", proto.reps, "Repetitions")->capture_default_str();
    sim_cmd->add_option("--seed", proto.seed, "Root seed")->capture_default_str();
    sim_cmd->add_option("--n-sites", proto.n_sites, "Sites per data set")->capture_default_str();
    sim_cmd->add_option("--n-times", proto.n_times, "Time points per data set")->capture_default_str();
    sim_cmd->add_option("--n-test", proto.n_test, "Held-out cells per data set")->capture_default_str();
    sim_cmd->add_option("--workers", sim_workers, "Worker threads (default: STLMM_WORKERS or all cores)");
    sim_cmd->add_option("--out-dir", sim_dir, "Directory for study_<cfg>_<seed>.csv")->capture_default_str();
    sim_cmd->add_option("--dataset", sim_dataset,
                        "Write one simulated data set as <prefix>_train.csv / <prefix>_test.csv and stop");

    std::string bench_vc = "VC3", bench_dir = ".";
    BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench", "Structured solves versus dense Cholesky");
    bench_cmd->add_option("--config", "Flat key = value file");
    bench_cmd->add_option("--vc", bench_vc, "Variance configuration")->capture_default_str();
    bench_cmd->add_option("--sizes", bench.sizes, "Target sample sizes")->delimiter(',');
    bench_cmd->add_option("--missing", bench.missing, "Fraction of unobserved cells")->capture_default_str();
    bench_cmd->add_option("--matrices", bench.n_matrices, "Timed solves per size")->capture_default_str();
    bench_cmd->add_option("--seed", bench.seed, "Seed")->capture_default_str();
    bench_cmd->add_option("--out-dir", bench_dir, "Directory for bench_<cfg>.csv")->capture_default_str();

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(app, args);
        std::vector<char*> ptrs;
        for (auto& a : args) ptrs.push_back(a.data());
        app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (fit_cmd->parsed()) {
            const GridData data = load_observations(fit_cfg.train, fit_cfg.columns());
            bool nonconv = false;
            const FitResult f = run_fit(fit_cfg, data, nonconv);
            if (fit_out.empty()) {
                write_fit_text(std::cout, f, coefficient_names(data));
            } else {
                auto os = open_out(fit_out);
                write_fit_text(os, f, coefficient_names(data));
            }
            if (!fit_params.empty()) {
                auto os = open_out(fit_params);
                write_params_csv(os, f);
            }
            return exit_for(nonconv, fit_cfg);
        }
        if (pred_cmd->parsed()) {
            GridData data;
            if (!pred_test.empty()) {
                data = load_split(pred_cfg.train, pred_test, pred_cfg.columns());
            } else if (pred_fraction > 0 && pred_fraction < 1) {
                ObservationTable all = read_observations(pred_cfg.train, pred_cfg.columns());
                std::mt19937_64 rng(pred_seed);
                std::shuffle(all.rows.begin(), all.rows.end(), rng);
                const auto n_test = static_cast<std::size_t>(std::lround(pred_fraction * all.rows.size()));
                ObservationTable test;
                test.covariate_names = all.covariate_names;
                test.iso_dates = all.iso_dates;
                test.rows.assign(all.rows.begin(), all.rows.begin() + static_cast<long>(n_test));
                all.rows.erase(all.rows.begin(), all.rows.begin() + static_cast<long>(n_test));
                std::sort(all.rows.begin(), all.rows.end(), [](const auto& a, const auto& b) { return a.line < b.line; });
                std::sort(test.rows.begin(), test.rows.end(), [](const auto& a, const auto& b) { return a.line < b.line; });
                data = build_grid(all, &test);
            } else {
                throw UsageError("predict needs --test or --test-fraction in (0, 1)");
            }
            auto os = open_out(pred_out);
            if (data.targets.empty()) return kExitOk;
            bool nonconv = false;
            const FitResult f = run_fit(pred_cfg, data, nonconv);
            const PredictionResult pr = blup(f, data.design, data.x, data.y, data.x_targets, data.targets);
            write_predictions_csv(os, data, pr);
            return exit_for(nonconv, pred_cfg);
        }
        if (sv_cmd->parsed()) {
            const GridData data = load_observations(sv_cfg.train, sv_cfg.columns());
            bool nonconv = false;
            const FitResult f = run_fit(sv_cfg, data, nonconv);
            const Eigen::VectorXd resid =
                data.y - data.x * data.x.colPivHouseholderQr().solve(data.y);
            const EmpSv sv = empirical_sv(data.design, resid, sv_cfg.options().bins);
            std::vector<double> hs = parse_doubles(sv_hs), ht = parse_doubles(sv_ht);
            if (hs.empty()) {
                for (const auto& b : sv.spatial_bins) hs.push_back(b.second);
            }
            if (ht.empty()) ht = sv.temporal_bins;
            auto fo = open_out(sv_fitted);
            write_fitted_sv_csv(fo, f.theta, hs, ht);
            auto eo = open_out(sv_empirical);
            write_empirical_sv_csv(eo, sv);
            return exit_for(nonconv, sv_cfg);
        }
        if (sim_cmd->parsed()) {
            if (!sim_dataset.empty()) {
                const SimDataset data = simulate_dataset(variance_config(sim_vcs.front()), proto, proto.seed);
                auto tr = open_out(sim_dataset + "_train.csv");
                write_observations(tr, dataset_table(data, data.train));
                auto te = open_out(sim_dataset + "_test.csv");
                write_observations(te, dataset_table(data, data.test));
                return kExitOk;
            }
            std::vector<MethodSpec> methods;
            for (const auto& m : sim_methods) methods.push_back(parse_method_spec(m));
            if (methods.empty()) methods = study_methods();
            StudyOptions so;
            so.workers = sim_workers;
            so.progress = [](int done, int total) {
                if (done % 10 == 0 || done == total) std::cerr << "  " << done << "/" << total << " repetitions\n";
            };
            std::filesystem::create_directories(sim_dir);
            for (const auto& name : sim_vcs) {
                const MetricsTable t = run_study(variance_config(name), proto, methods, so);
                t.write_text(std::cout);
                auto os = open_out((std::filesystem::path(sim_dir) /
                                    ("study_" + t.config + "_" + std::to_string(proto.seed) + ".csv"))
                                       .string());
                t.write_csv(os);
            }
            return kExitOk;
        }
        if (bench_cmd->parsed()) {
            const VarianceConfig cfg = variance_config(bench_vc);
            const auto rows = bench_inversion(cfg, bench);
            std::filesystem::create_directories(bench_dir);
            auto os = open_out((std::filesystem::path(bench_dir) / ("bench_" + cfg.name + ".csv")).string());
            write_bench_csv(os, rows);
            write_bench_csv(std::cout, rows);
            for (const auto& r : rows)
                if (r.skipped) std::cerr << "notice: n = " << r.n_target << " skipped (dense matrix too large)\n";
            return kExitOk;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DomainError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const EstimabilityError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const FactorizationError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace stlmm
