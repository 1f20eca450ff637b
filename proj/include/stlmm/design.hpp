#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/errors.hpp"
#include "stlmm/kernels.hpp"

namespace stlmm {

using Eigen::Index;

/// The spatio-temporal index set: S sites, T time points and a mask of
/// observed cells on the S x T grid.
///
/// Cells use the canonical ordering "space within time": cell (site i,
/// time j) has index j * S + i (0-based). Observed-cell vectors (responses,
/// design-matrix rows) follow the canonical order restricted to observed
/// cells.
template <typename Scalar = double>
class StDesign {
public:
    StDesign() = default;

    /// Full grid, every cell observed.
    StDesign(Coords<Scalar> sites, Vector<Scalar> times)
        : sites_(std::move(sites)), times_(std::move(times)),
          observed_(static_cast<std::size_t>(sites_.rows() * times_.size()), true) {
        rebuild();
    }

    StDesign(Coords<Scalar> sites, Vector<Scalar> times, std::vector<bool> observed)
        : sites_(std::move(sites)), times_(std::move(times)), observed_(std::move(observed)) {
        if (static_cast<Index>(observed_.size()) != sites_.rows() * times_.size())
            throw DataError("StDesign: observed mask has " + std::to_string(observed_.size()) +
                            " entries, grid has " + std::to_string(sites_.rows() * times_.size()));
        rebuild();
    }

    Index n_sites() const { return sites_.rows(); }
    Index n_times() const { return times_.size(); }
    Index n_cells() const { return n_sites() * n_times(); }
    Index n_observed() const { return static_cast<Index>(obs_cells_.size()); }
    Index n_unobserved() const { return static_cast<Index>(unobs_cells_.size()); }
    bool full_grid() const { return unobs_cells_.empty(); }

    const Coords<Scalar>& sites() const { return sites_; }
    const Vector<Scalar>& times() const { return times_; }
    const std::vector<bool>& observed() const { return observed_; }

    Index cell(Index site, Index time) const { return time * n_sites() + site; }
    Index site_of(Index cell) const { return cell % n_sites(); }
    Index time_of(Index cell) const { return cell / n_sites(); }
    bool is_observed(Index cell) const { return observed_[static_cast<std::size_t>(cell)]; }

    /// Canonical indices of observed cells, ascending.
    const std::vector<Index>& observed_cells() const { return obs_cells_; }
    /// Canonical indices of unobserved cells, ascending.
    const std::vector<Index>& unobserved_cells() const { return unobs_cells_; }

    /// Number of sites sharing coordinates with an earlier site.
    Index duplicate_sites() const {
        Index dup = 0;
        for (Index i = 1; i < n_sites(); ++i)
            for (Index k = 0; k < i; ++k)
                if ((sites_.row(i) - sites_.row(k)).norm() == Scalar(0)) {
                    ++dup;
                    break;
                }
        return dup;
    }

    /// Non-fatal findings, e.g. co-located sites.
    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        if (Index d = duplicate_sites(); d > 0)
            w.push_back(std::to_string(d) + " site(s) share coordinates with another site; "
                        "spatial correlation matrices may be singular");
        return w;
    }

    /// Same sites and times with a different observation mask.
    StDesign with_mask(std::vector<bool> observed) const { return StDesign(sites_, times_, std::move(observed)); }

private:
    void rebuild() {
        if (sites_.rows() < 1 || times_.size() < 1) throw DataError("StDesign: need at least one site and one time");
        obs_cells_.clear();
        unobs_cells_.clear();
        for (Index c = 0; c < n_cells(); ++c) (is_observed(c) ? obs_cells_ : unobs_cells_).push_back(c);
        if (obs_cells_.empty()) throw DataError("StDesign: no observed cells");
    }

    Coords<Scalar> sites_;
    Vector<Scalar> times_;
    std::vector<bool> observed_;
    std::vector<Index> obs_cells_;
    std::vector<Index> unobs_cells_;
};

}  // namespace stlmm
