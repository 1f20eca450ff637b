#include "stlmm/semivariogram.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stlmm/errors.hpp"

namespace stlmm {

namespace {

/// Smallest positive gap between distinct time points; 1 for a single time.
double time_step(const Eigen::VectorXd& times) {
    std::vector<double> t(times.data(), times.data() + times.size());
    std::sort(t.begin(), t.end());
    double step = 0;
    for (std::size_t k = 1; k < t.size(); ++k) {
        const double gap = t[k] - t[k - 1];
        if (gap > 0 && (step == 0 || gap < step)) step = gap;
    }
    return step > 0 ? step : 1.0;
}

}  // namespace

EmpSv empirical_sv(const StDesign<double>& d, const Eigen::VectorXd& residuals, const BinsSpec& bins) {
    const Index n = d.n_observed();
    if (residuals.size() == 0) throw DomainError("empirical_sv: empty residuals");
    if (residuals.size() != n)
        throw DomainError("empirical_sv: " + std::to_string(residuals.size()) + " residuals for " +
                          std::to_string(n) + " observed cells");
    if (bins.spatial_bins < 1) throw DomainError("empirical_sv: need at least one spatial bin");

    const Eigen::MatrixXd ds = spatial_distances(d.sites(), d.sites());
    const Eigen::MatrixXd dt = temporal_distances(d.times(), d.times());
    const double max_d = bins.max_distance > 0 ? bins.max_distance : 0.5 * ds.maxCoeff();
    const double step = time_step(d.times());
    const int max_lag = bins.max_lag >= 0 ? bins.max_lag : static_cast<int>(d.n_times() / 2);
    const int ns = bins.spatial_bins + 1, nt = max_lag + 1;
    const double width = max_d > 0 ? max_d / bins.spatial_bins : 0.0;

    // Class index per site pair and per time pair; -1 outside every class.
    Eigen::MatrixXi site_class(d.n_sites(), d.n_sites());
    for (Index a = 0; a < d.n_sites(); ++a)
        for (Index b = 0; b < d.n_sites(); ++b) {
            const double h = ds(a, b);
            if (h == 0) {
                site_class(a, b) = 0;
            } else if (width > 0 && h <= max_d) {
                site_class(a, b) = std::clamp(static_cast<int>(std::ceil(h / width)), 1, bins.spatial_bins);
            } else {
                site_class(a, b) = -1;
            }
        }
    Eigen::MatrixXi time_class(d.n_times(), d.n_times());
    for (Index a = 0; a < d.n_times(); ++a)
        for (Index b = 0; b < d.n_times(); ++b) {
            const long k = std::lround(dt(a, b) / step);
            time_class(a, b) = k <= max_lag ? static_cast<int>(k) : -1;
        }

    EmpSv sv;
    sv.spatial_bins.emplace_back(0.0, 0.0);
    for (int k = 0; k < bins.spatial_bins; ++k) sv.spatial_bins.emplace_back(k * width, (k + 1) * width);
    for (int k = 0; k < nt; ++k) sv.temporal_bins.push_back(k * step);
    sv.gamma_hat = Eigen::MatrixXd::Zero(ns, nt);
    sv.counts = Eigen::MatrixXd::Zero(ns, nt);
    sv.center_s = Eigen::MatrixXd::Zero(ns, nt);
    sv.center_t = Eigen::MatrixXd::Zero(ns, nt);

    const auto& cells = d.observed_cells();
    std::vector<Index> site(cells.size()), time(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) {
        site[k] = d.site_of(cells[k]);
        time[k] = d.time_of(cells[k]);
    }
    for (std::size_t a = 0; a < cells.size(); ++a) {
        for (std::size_t b = a + 1; b < cells.size(); ++b) {
            const int cs = site_class(site[a], site[b]);
            if (cs < 0) continue;
            const int ct = time_class(time[a], time[b]);
            if (ct < 0) continue;
            const double diff = residuals(static_cast<Index>(a)) - residuals(static_cast<Index>(b));
            sv.gamma_hat(cs, ct) += diff * diff;
            sv.counts(cs, ct) += 1;
            sv.center_s(cs, ct) += ds(site[a], site[b]);
            sv.center_t(cs, ct) += dt(time[a], time[b]);
        }
    }
    for (Index i = 0; i < ns; ++i)
        for (Index j = 0; j < nt; ++j) {
            const double c = sv.counts(i, j);
            if (c <= 0) continue;
            sv.gamma_hat(i, j) /= 2 * c;
            sv.center_s(i, j) /= c;
            sv.center_t(i, j) /= c;
        }
    if (sv.nonempty() == 0)
        throw DataError("empirical_sv: every distance class is empty; widen the spatial bins or temporal lags");
    return sv;
}

}  // namespace stlmm
