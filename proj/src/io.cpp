#include "stlmm/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>
#include <unordered_map>

#include "stlmm/errors.hpp"

namespace stlmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kMaxPlausibleKm = 1e5;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::string where(const std::string& path, std::size_t line) { return path + ":" + std::to_string(line) + ": "; }

double parse_number(const std::string& s, const std::string& what, const std::string& path, std::size_t line) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size()) throw DataError(where(path, line) + "cannot parse " + what + " '" + s + "'");
    return v;
}

bool parse_iso_date(const std::string& s, double& days) {
    static const std::regex iso(R"((\d{4})-(\d{2})-(\d{2}))");
    std::smatch m;
    if (!std::regex_match(s, m, iso)) return false;
    const std::chrono::year_month_day ymd{std::chrono::year{std::stoi(m[1])},
                                          std::chrono::month{static_cast<unsigned>(std::stoi(m[2]))},
                                          std::chrono::day{static_cast<unsigned>(std::stoi(m[3]))}};
    if (!ymd.ok()) return false;
    days = static_cast<double>(std::chrono::sys_days{ymd}.time_since_epoch().count());
    return true;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

ObservationTable read_observations(const std::string& path, const Manifest& manifest) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const std::vector<std::string> header = split_csv(line);

    auto column = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(path + ": manifest column '" + name + "' is missing from the header");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_site = column(manifest.site_id), c_x = column(manifest.x), c_y = column(manifest.y),
                      c_time = column(manifest.time), c_resp = column(manifest.response);

    ObservationTable table;
    std::vector<std::size_t> c_cov;
    if (manifest.covariates.empty()) {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (k != c_site && k != c_x && k != c_y && k != c_time && k != c_resp) {
                table.covariate_names.push_back(header[k]);
                c_cov.push_back(k);
            }
    } else {
        for (const auto& name : manifest.covariates) {
            table.covariate_names.push_back(name);
            c_cov.push_back(column(name));
        }
    }

    std::size_t lineno = 1;
    int n_dates = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != header.size())
            throw DataError(where(path, lineno) + "expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()));
        ObservationRow row;
        row.line = lineno;
        row.site_id = f[c_site];
        if (row.site_id.empty()) throw DataError(where(path, lineno) + "empty site id");
        row.x = parse_number(f[c_x], manifest.x, path, lineno);
        row.y = parse_number(f[c_y], manifest.y, path, lineno);
        row.time_label = f[c_time];
        if (parse_iso_date(row.time_label, row.time))
            ++n_dates;
        else
            row.time = parse_number(row.time_label, manifest.time, path, lineno);
        row.response = f[c_resp].empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : parse_number(f[c_resp], manifest.response, path, lineno);
        for (std::size_t k = 0; k < c_cov.size(); ++k) {
            const std::string& v = f[c_cov[k]];
            if (v.empty())
                throw DataError(where(path, lineno) + "missing value for covariate '" + table.covariate_names[k] + "'");
            row.covariates.push_back(parse_number(v, table.covariate_names[k], path, lineno));
        }
        if (!std::isfinite(row.x) || !std::isfinite(row.y) || !std::isfinite(row.time))
            throw DataError(where(path, lineno) + "non-finite coordinate or time");
        table.rows.push_back(std::move(row));
    }
    if (n_dates > 0 && n_dates != static_cast<int>(table.rows.size()))
        throw DataError(path + ": time column mixes ISO dates and numbers");
    table.iso_dates = n_dates > 0;
    return table;
}

GridData build_grid(const ObservationTable& train, const ObservationTable* targets) {
    if (train.rows.empty()) throw DataError("no training rows");
    if (targets && targets->covariate_names != train.covariate_names)
        throw DataError("training and target files have different covariate columns");
    if (targets && !targets->rows.empty() && targets->iso_dates != train.iso_dates)
        throw DataError("training and target files use different time formats");

    GridData out;
    out.covariate_names = train.covariate_names;
    std::unordered_map<std::string, Index> site_index;
    std::vector<std::pair<double, double>> coords;
    std::vector<std::size_t> site_line;
    std::map<double, std::string> time_set;

    auto visit = [&](const ObservationTable& t) {
        for (const auto& r : t.rows) {
            const auto [it, fresh] = site_index.emplace(r.site_id, static_cast<Index>(coords.size()));
            if (fresh) {
                coords.emplace_back(r.x, r.y);
                site_line.push_back(r.line);
                out.site_ids.push_back(r.site_id);
            } else {
                const auto& c = coords[static_cast<std::size_t>(it->second)];
                if (c.first != r.x || c.second != r.y)
                    throw DataError("line " + std::to_string(r.line) + ": site '" + r.site_id +
                                    "' has coordinates different from line " +
                                    std::to_string(site_line[static_cast<std::size_t>(it->second)]));
            }
            time_set.emplace(r.time, r.time_label);
        }
    };
    visit(train);
    if (targets) visit(*targets);

    const Index s = static_cast<Index>(coords.size()), t = static_cast<Index>(time_set.size());
    Coords<double> sites(s, 2);
    for (Index i = 0; i < s; ++i) sites.row(i) << coords[static_cast<std::size_t>(i)].first,
        coords[static_cast<std::size_t>(i)].second;
    if (s > 1 && spatial_distances(sites, sites).maxCoeff() >= kMaxPlausibleKm)
        throw DataError("site coordinates span more than 1e5 km; coordinates must be planar kilometres");
    VectorXd times(t);
    std::map<double, Index> time_index;
    Index j = 0;
    for (const auto& [value, label] : time_set) {
        times(j) = value;
        time_index[value] = j++;
        out.time_labels.push_back(label);
    }
    auto cell_of = [&](const ObservationRow& r) { return time_index.at(r.time) * s + site_index.at(r.site_id); };

    const Index n_cells = s * t;
    std::vector<long> row_of_cell(static_cast<std::size_t>(n_cells), -1);
    std::vector<bool> mask(static_cast<std::size_t>(n_cells), false);
    for (std::size_t k = 0; k < train.rows.size(); ++k) {
        const auto& r = train.rows[k];
        const Index c = cell_of(r);
        if (row_of_cell[static_cast<std::size_t>(c)] >= 0)
            throw DataError("duplicate (site, time) pair ('" + r.site_id + "', " + r.time_label + ") on lines " +
                            std::to_string(train.rows[static_cast<std::size_t>(row_of_cell[static_cast<std::size_t>(c)])].line) +
                            " and " + std::to_string(r.line));
        if (!std::isfinite(r.response))
            throw DataError("line " + std::to_string(r.line) + ": training response is missing or non-finite");
        row_of_cell[static_cast<std::size_t>(c)] = static_cast<long>(k);
        mask[static_cast<std::size_t>(c)] = true;
    }
    out.design = StDesign<double>(sites, times, mask);

    const Index p = static_cast<Index>(train.covariate_names.size()) + 1;
    const auto& obs = out.design.observed_cells();
    out.x.resize(static_cast<Index>(obs.size()), p);
    out.y.resize(static_cast<Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) {
        const auto& r = train.rows[static_cast<std::size_t>(row_of_cell[static_cast<std::size_t>(obs[k])])];
        out.x(static_cast<Index>(k), 0) = 1.0;
        for (Index c = 1; c < p; ++c) out.x(static_cast<Index>(k), c) = r.covariates[static_cast<std::size_t>(c - 1)];
        out.y(static_cast<Index>(k)) = r.response;
    }

    if (targets) {
        const Index m = static_cast<Index>(targets->rows.size());
        out.x_targets.resize(m, p);
        out.y_targets.resize(m);
        for (Index k = 0; k < m; ++k) {
            const auto& r = targets->rows[static_cast<std::size_t>(k)];
            out.targets.push_back(cell_of(r));
            out.x_targets(k, 0) = 1.0;
            for (Index c = 1; c < p; ++c) out.x_targets(k, c) = r.covariates[static_cast<std::size_t>(c - 1)];
            out.y_targets(k) = r.response;
        }
    } else {
        out.x_targets.resize(0, p);
        out.y_targets.resize(0);
    }
    return out;
}

GridData load_observations(const std::string& path, const Manifest& manifest) {
    return build_grid(read_observations(path, manifest));
}

GridData load_split(const std::string& train_path, const std::string& test_path, const Manifest& manifest) {
    const ObservationTable train = read_observations(train_path, manifest);
    const ObservationTable test = read_observations(test_path, manifest);
    return build_grid(train, &test);
}

void write_observations(std::ostream& os, const ObservationTable& table, const Manifest& manifest) {
    os << manifest.site_id << ',' << manifest.x << ',' << manifest.y << ',' << manifest.time << ','
       << manifest.response;
    for (const auto& c : table.covariate_names) os << ',' << c;
    os << '\n';
    for (const auto& r : table.rows) {
        os << r.site_id << ',' << format_double(r.x) << ',' << format_double(r.y) << ','
           << (r.time_label.empty() ? format_double(r.time) : r.time_label) << ',';
        if (std::isfinite(r.response)) os << format_double(r.response);
        for (double v : r.covariates) os << ',' << format_double(v);
        os << '\n';
    }
}

void write_params_csv(std::ostream& os, const FitResult& fit) {
    os << std::setprecision(10);
    if (const auto* ps = std::get_if<ThetaPS<double>>(&fit.theta)) {
        os << "sig2_delta,sig2_gamma,sig2_tau,sig2_eta,sig2_omega,sig2_eps,phi,kappa\n";
        for (double v : ps->variances()) os << v << ',';
        os << ps->temporal.range << ',' << ps->spatial.range << '\n';
    } else {
        const auto& sep = std::get<ThetaSep<double>>(fit.theta);
        os << "sig2_omega,v_s,v_t,phi,kappa\n";
        os << sep.sig2_omega << ',' << sep.v_s << ',' << sep.v_t << ',' << sep.temporal.range << ','
           << sep.spatial.range << '\n';
    }
}

void write_fit_text(std::ostream& os, const FitResult& fit, const std::vector<std::string>& coef_names) {
    os << std::setprecision(8);
    os << "model: " << model_name(fit.model) << '\n';
    os << "method: " << method_name(fit.method) << '\n';
    os << "converged: " << (fit.converged ? "true" : "false") << '\n';
    os << "objective: " << fit.objective << '\n';
    os << "iterations: " << fit.iterations << '\n';
    os << "evaluations: " << fit.evaluations << '\n';
    os << "semivariogram_s: " << fit.wall_time_s.semivariogram_s << '\n';
    os << "optimize_s: " << fit.wall_time_s.optimize_s << '\n';
    if (const auto* ps = std::get_if<ThetaPS<double>>(&fit.theta)) {
        static const char* names[] = {"sig2_delta", "sig2_gamma", "sig2_tau", "sig2_eta", "sig2_omega", "sig2_eps"};
        const auto v = ps->variances();
        for (std::size_t k = 0; k < 6; ++k) os << names[k] << ": " << v[k] << '\n';
        os << "spatial_kernel: " << kernel_name(ps->spatial.kind) << '\n';
        os << "kappa: " << ps->spatial.range << '\n';
        os << "temporal_kernel: " << kernel_name(ps->temporal.kind) << '\n';
        os << "phi: " << ps->temporal.range << '\n';
    } else {
        const auto& sep = std::get<ThetaSep<double>>(fit.theta);
        os << "sig2_omega: " << sep.sig2_omega << '\n';
        os << "v_s: " << sep.v_s << '\n';
        os << "v_t: " << sep.v_t << '\n';
        os << "spatial_kernel: " << kernel_name(sep.spatial.kind) << '\n';
        os << "kappa: " << sep.spatial.range << '\n';
        os << "temporal_kernel: " << kernel_name(sep.temporal.kind) << '\n';
        os << "phi: " << sep.temporal.range << '\n';
    }
    os << "coefficients:\n";
    os << "  name,estimate,std_error,z,p_value\n";
    for (Index k = 0; k < fit.beta_hat.size(); ++k) {
        const std::string name = k < static_cast<Index>(coef_names.size()) ? coef_names[static_cast<std::size_t>(k)]
                                                                           : "b" + std::to_string(k);
        const double se = std::sqrt(std::max(fit.cov_beta(k, k), 0.0));
        os << "  " << name << ',' << fit.beta_hat(k) << ',' << se;
        if (se > 0) {
            const WaldTest w = wald_test(fit, k);
            os << ',' << std::copysign(w.statistic, fit.beta_hat(k)) << ',' << w.p_value;
        } else {
            os << ",,";
        }
        os << '\n';
    }
}

void write_predictions_csv(std::ostream& os, const GridData& data, const PredictionResult& pred) {
    os << "site_id,time,y_hat,pred_var,lower,upper,response\n";
    os << std::setprecision(10);
    for (std::size_t k = 0; k < pred.targets.size(); ++k) {
        const Index c = pred.targets[k];
        const Index i = static_cast<Index>(k);
        os << data.site_ids[static_cast<std::size_t>(data.design.site_of(c))] << ','
           << data.time_labels[static_cast<std::size_t>(data.design.time_of(c))] << ',' << pred.y_hat(i) << ','
           << pred.pred_var(i) << ',' << pred.lower(i) << ',' << pred.upper(i) << ',';
        if (i < data.y_targets.size() && std::isfinite(data.y_targets(i))) os << data.y_targets(i);
        os << '\n';
    }
}

void write_empirical_sv_csv(std::ostream& os, const EmpSv& sv) {
    os << "spatial_lower,spatial_upper,lag,center_s,center_t,count,gamma_hat\n";
    os << std::setprecision(10);
    for (Index i = 0; i < sv.counts.rows(); ++i)
        for (Index j = 0; j < sv.counts.cols(); ++j) {
            const auto& b = sv.spatial_bins[static_cast<std::size_t>(i)];
            os << b.first << ',' << b.second << ',' << sv.temporal_bins[static_cast<std::size_t>(j)] << ','
               << sv.center_s(i, j) << ',' << sv.center_t(i, j) << ',' << sv.counts(i, j) << ',';
            if (sv.counts(i, j) > 0) os << sv.gamma_hat(i, j);
            os << '\n';
        }
}

void write_fitted_sv_csv(std::ostream& os, const Theta& th, const std::vector<double>& hs,
                         const std::vector<double>& ht) {
    os << "h_s,h_t,gamma\n";
    os << std::setprecision(10);
    for (double a : hs)
        for (double b : ht)
            os << a << ',' << b << ',' << std::visit([&](const auto& t) { return theoretical_sv<double>(t, a, b); }, th)
               << '\n';
}

}  // namespace stlmm
