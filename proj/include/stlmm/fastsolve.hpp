#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "stlmm/covariance.hpp"
#include "stlmm/design.hpp"
#include "stlmm/errors.hpp"

// Structured inversion of spatio-temporal LMM covariances.
//
// Every solver is an operator "B -> Sigma^{-1} B" plus log|Sigma|. Sigma^{-1}
// itself is never formed except by DenseSolver, the Cholesky reference.
//
//   StegleSolver     w Rt(x)Rs + eps I via the eigendecompositions of Rs, Rt
//   SmwLayer         (Z C Z' + A)^{-1} from A^{-1} by Sherman-Morrison-Woodbury
//   SeparableSolver  w [Rt*](x)[Rs*] via the Kronecker inverse
//   SubsetSolver     observed block of a full-grid inverse (Helmert-Wolf)

namespace stlmm {

/// Result of applying Sigma^{-1} to a set of right-hand sides.
template <typename Scalar = double>
struct FastSolve {
    Matrix<Scalar> sigma_inv_rhs;
    Scalar logdet = 0;
    Index n = 0;
};

/// Eigenvalues below this are clamped before building the Stegle diagonal.
inline constexpr double kEigenvalueFloor = 1e-12;
/// A random-effect layer is dropped when both of its variances fall below
/// this fraction of the total variance.
inline constexpr double kLayerSkipFraction = 1e-10;

/// 0/1 incidence matrix mapping grid cells to their site (Zs) or time (Zt).
struct GridIncidence {
    enum class Kind { Site, Time };
    Kind kind;
    Index n_sites;
    Index n_times;

    Index groups() const { return kind == Kind::Site ? n_sites : n_times; }
    Index rows() const { return n_sites * n_times; }
    Index group_of(Index cell) const { return kind == Kind::Site ? cell % n_sites : cell / n_sites; }

    template <typename Scalar>
    Matrix<Scalar> dense() const {
        Matrix<Scalar> z = Matrix<Scalar>::Zero(rows(), groups());
        for (Index c = 0; c < rows(); ++c) z(c, group_of(c)) = Scalar(1);
        return z;
    }

    /// Z' B: sums the rows of B within each group.
    template <typename Scalar>
    Matrix<Scalar> scatter(const Matrix<Scalar>& b) const {
        Matrix<Scalar> out = Matrix<Scalar>::Zero(groups(), b.cols());
        if (kind == Kind::Time) {
            for (Index j = 0; j < n_times; ++j) out.row(j) = b.middleRows(j * n_sites, n_sites).colwise().sum();
        } else {
            for (Index j = 0; j < n_times; ++j) out += b.middleRows(j * n_sites, n_sites);
        }
        return out;
    }
};

/// Inverse-and-log-determinant operator for a symmetric positive definite
/// covariance matrix.
template <typename Scalar = double>
class CovarianceSolver {
public:
    virtual ~CovarianceSolver() = default;

    virtual Index size() const = 0;
    virtual Scalar logdet() const = 0;
    /// Sigma^{-1} rhs.
    virtual Matrix<Scalar> apply(const Matrix<Scalar>& rhs) const = 0;
    /// Sigma^{-1} Z for a grid incidence matrix; overridden where the
    /// structure of Z makes this cheaper than a generic apply.
    virtual Matrix<Scalar> apply_incidence(const GridIncidence& z) const { return apply(z.dense<Scalar>()); }

    FastSolve<Scalar> solve(const Matrix<Scalar>& rhs) const { return {apply(rhs), logdet(), size()}; }
    /// rhs' Sigma^{-1} rhs.
    Matrix<Scalar> quad(const Matrix<Scalar>& rhs) const { return rhs.transpose() * apply(rhs); }
};

template <typename Scalar>
using SolverPtr = std::shared_ptr<const CovarianceSolver<Scalar>>;

namespace detail {

template <typename Scalar>
Eigen::LLT<Matrix<Scalar>> checked_llt(const Matrix<Scalar>& m, const std::string& what) {
    Eigen::LLT<Matrix<Scalar>> llt(m);
    if (llt.info() != Eigen::Success) {
        // Locate the failing pivot with a plain Cholesky sweep.
        Matrix<Scalar> a = m;
        const Index n = a.rows();
        long pivot = -1;
        for (Index k = 0; k < n && pivot < 0; ++k) {
            Scalar d = a(k, k) - a.row(k).head(k).squaredNorm();
            if (!(d > Scalar(0))) {
                pivot = static_cast<long>(k);
                break;
            }
            a(k, k) = std::sqrt(d);
            for (Index i = k + 1; i < n; ++i) a(i, k) = (a(i, k) - a.row(i).head(k).dot(a.row(k).head(k))) / a(k, k);
            for (Index i = k + 1; i < n; ++i) a(k, i) = 0;
        }
        throw FactorizationError(what + " is not positive definite (pivot " + std::to_string(pivot) + ")", pivot);
    }
    return llt;
}

template <typename Scalar>
Scalar llt_logdet(const Eigen::LLT<Matrix<Scalar>>& llt) {
    return Scalar(2) * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// Dense Cholesky reference solver.
template <typename Scalar = double>
class DenseSolver final : public CovarianceSolver<Scalar> {
public:
    explicit DenseSolver(const Matrix<Scalar>& sigma)
        : llt_(detail::checked_llt(sigma, "covariance matrix")), logdet_(detail::llt_logdet(llt_)) {}

    Index size() const override { return llt_.rows(); }
    Scalar logdet() const override { return logdet_; }
    Matrix<Scalar> apply(const Matrix<Scalar>& rhs) const override { return llt_.solve(rhs); }

    /// Explicit inverse; debugging and oracle use only.
    Matrix<Scalar> inverse() const { return llt_.solve(Matrix<Scalar>::Identity(size(), size())); }

private:
    Eigen::LLT<Matrix<Scalar>> llt_;
    Scalar logdet_;
};

/// (w Rt (x) Rs + eps I)^{-1} = W V^{-1} W' with W = Ut (x) Us and
/// V = w Pt (x) Ps + eps I diagonal. W is applied with the vec trick, one
/// S x T block per right-hand column.
template <typename Scalar = double>
class StegleSolver final : public CovarianceSolver<Scalar> {
public:
    StegleSolver(const Matrix<Scalar>& rs, const Matrix<Scalar>& rt, Scalar sig2_omega, Scalar sig2_eps)
        : s_(rs.rows()), t_(rt.rows()) {
        Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(rs), et(rt);
        if (es.info() != Eigen::Success || et.info() != Eigen::Success)
            throw FactorizationError("eigendecomposition of a correlation matrix failed");
        us_ = es.eigenvectors();
        ut_ = et.eigenvectors();
        ps_ = es.eigenvalues();
        pt_ = et.eigenvalues();
        const Scalar floor = Scalar(kEigenvalueFloor);
        clamped_ = (ps_.array() < floor).any() || (pt_.array() < floor).any();
        ps_ = ps_.cwiseMax(floor);
        pt_ = pt_.cwiseMax(floor);
        v_ = (sig2_omega * ps_ * pt_.transpose()).array() + sig2_eps;
        if (!(v_.array() > Scalar(0)).all())
            throw FactorizationError("Stegle diagonal is not strictly positive (need sig2_eps > 0 or sig2_omega > 0)");
        vinv_ = v_.cwiseInverse();
        logdet_ = v_.array().log().sum();
    }

    Index size() const override { return s_ * t_; }
    Scalar logdet() const override { return logdet_; }

    Matrix<Scalar> apply(const Matrix<Scalar>& rhs) const override {
        Matrix<Scalar> c = rotate(rhs);
        scale_by_vinv(c);
        return unrotate(c);
    }

    Matrix<Scalar> apply_incidence(const GridIncidence& z) const override {
        Matrix<Scalar> c = rotate_incidence(z);
        scale_by_vinv(c);
        return unrotate(c);
    }

    /// W' B, columnwise.
    Matrix<Scalar> rotate(const Matrix<Scalar>& b) const {
        check_rows(b);
        const Index k = b.cols();
        Matrix<Scalar> tmp = us_.transpose() * Eigen::Map<const Matrix<Scalar>>(b.data(), s_, t_ * k);
        Matrix<Scalar> out(s_ * t_, k);
        for (Index c = 0; c < k; ++c)
            Eigen::Map<Matrix<Scalar>>(out.col(c).data(), s_, t_).noalias() = tmp.middleCols(c * t_, t_) * ut_;
        return out;
    }

    /// W C, columnwise.
    Matrix<Scalar> unrotate(const Matrix<Scalar>& c) const {
        check_rows(c);
        const Index k = c.cols();
        Matrix<Scalar> tmp = us_ * Eigen::Map<const Matrix<Scalar>>(c.data(), s_, t_ * k);
        Matrix<Scalar> out(s_ * t_, k);
        for (Index j = 0; j < k; ++j)
            Eigen::Map<Matrix<Scalar>>(out.col(j).data(), s_, t_).noalias() =
                tmp.middleCols(j * t_, t_) * ut_.transpose();
        return out;
    }

    /// W' Z without forming Z: a time column j maps to (Us' 1) Ut(j,:), a site
    /// column i maps to Us(i,:)' (1' Ut).
    Matrix<Scalar> rotate_incidence(const GridIncidence& z) const {
        Matrix<Scalar> out(s_ * t_, z.groups());
        if (z.kind == GridIncidence::Kind::Time) {
            const Vector<Scalar> a = us_.transpose() * Vector<Scalar>::Ones(s_);
            for (Index j = 0; j < t_; ++j)
                Eigen::Map<Matrix<Scalar>>(out.col(j).data(), s_, t_).noalias() = a * ut_.row(j);
        } else {
            const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> b = Vector<Scalar>::Ones(t_).transpose() * ut_;
            for (Index i = 0; i < s_; ++i)
                Eigen::Map<Matrix<Scalar>>(out.col(i).data(), s_, t_).noalias() = us_.row(i).transpose() * b;
        }
        return out;
    }

    const Matrix<Scalar>& spatial_vectors() const { return us_; }
    const Matrix<Scalar>& temporal_vectors() const { return ut_; }
    const Vector<Scalar>& spatial_values() const { return ps_; }
    const Vector<Scalar>& temporal_values() const { return pt_; }
    /// S x T matrix holding the diagonal of V (column-major = canonical order).
    const Matrix<Scalar>& diagonal() const { return v_; }
    /// True if any correlation eigenvalue was raised to the floor.
    bool clamped() const { return clamped_; }

private:
    void check_rows(const Matrix<Scalar>& b) const {
        if (b.rows() != s_ * t_)
            throw DomainError("StegleSolver: rhs has " + std::to_string(b.rows()) + " rows, expected " +
                              std::to_string(s_ * t_));
    }
    void scale_by_vinv(Matrix<Scalar>& c) const {
        const Eigen::Map<const Vector<Scalar>> w(vinv_.data(), s_ * t_);
        c.array().colwise() *= w.array();
    }

    Index s_, t_;
    Matrix<Scalar> us_, ut_;
    Vector<Scalar> ps_, pt_;
    Matrix<Scalar> v_, vinv_;
    Scalar logdet_ = 0;
    bool clamped_ = false;
};

/// (Z C Z' + A)^{-1} = A^{-1} - A^{-1} Z (C^{-1} + Z' A^{-1} Z)^{-1} Z' A^{-1}
/// with log|Z C Z' + A| = log|A| + log|C| + log|C^{-1} + Z' A^{-1} Z|.
///
/// G = A^{-1} Z is computed once; each apply then costs one inner apply plus
/// a rank-g correction.
template <typename Scalar = double>
class SmwLayer final : public CovarianceSolver<Scalar> {
public:
    SmwLayer(SolverPtr<Scalar> inner, const Matrix<Scalar>& block, GridIncidence z)
        : inner_(std::move(inner)), z_(z) {
        if (block.rows() != z.groups() || block.cols() != z.groups())
            throw DomainError("SmwLayer: block size does not match incidence groups");
        if (inner_->size() != z.rows()) throw DomainError("SmwLayer: incidence rows do not match inner solver");
        const auto block_llt = detail::checked_llt(block, "SMW layer block");
        const Matrix<Scalar> block_inv = block_llt.solve(Matrix<Scalar>::Identity(block.rows(), block.cols()));
        g_ = inner_->apply_incidence(z_);
        Matrix<Scalar> m = block_inv + z_.scatter(g_);
        m = Scalar(0.5) * (m + m.transpose());
        m_llt_ = detail::checked_llt(m, "SMW capacitance matrix");
        logdet_ = inner_->logdet() + detail::llt_logdet(block_llt) + detail::llt_logdet(m_llt_);
    }

    Index size() const override { return inner_->size(); }
    Scalar logdet() const override { return logdet_; }

    Matrix<Scalar> apply(const Matrix<Scalar>& rhs) const override {
        Matrix<Scalar> x = inner_->apply(rhs);
        x.noalias() -= g_ * m_llt_.solve(g_.transpose() * rhs);
        return x;
    }

    Matrix<Scalar> apply_incidence(const GridIncidence& z) const override {
        Matrix<Scalar> x = inner_->apply_incidence(z);
        // G' Z = (Z' G)'
        x.noalias() -= g_ * m_llt_.solve(z.scatter(g_).transpose());
        return x;
    }

private:
    SolverPtr<Scalar> inner_;
    GridIncidence z_;
    Matrix<Scalar> g_;
    Eigen::LLT<Matrix<Scalar>> m_llt_;
    Scalar logdet_ = 0;
};

/// sig2_omega [(1-vt) Rt + vt I]^{-1} (x) [(1-vs) Rs + vs I]^{-1} via the vec trick.
template <typename Scalar = double>
class SeparableSolver final : public CovarianceSolver<Scalar> {
public:
    SeparableSolver(const Matrix<Scalar>& rs, const Matrix<Scalar>& rt, const ThetaSep<Scalar>& th)
        : s_(rs.rows()), t_(rt.rows()), sig2_(th.sig2_omega) {
        th.validate();
        const Matrix<Scalar> rs_star =
            (Scalar(1) - th.v_s) * rs + th.v_s * Matrix<Scalar>::Identity(s_, s_);
        const Matrix<Scalar> rt_star =
            (Scalar(1) - th.v_t) * rt + th.v_t * Matrix<Scalar>::Identity(t_, t_);
        const auto ls = detail::checked_llt(rs_star, "spatial factor (1-v_s) Rs + v_s I");
        const auto lt = detail::checked_llt(rt_star, "temporal factor (1-v_t) Rt + v_t I");
        rs_inv_ = ls.solve(Matrix<Scalar>::Identity(s_, s_));
        rt_inv_ = lt.solve(Matrix<Scalar>::Identity(t_, t_));
        logdet_ = Scalar(s_ * t_) * std::log(sig2_) + Scalar(s_) * detail::llt_logdet(lt) +
                  Scalar(t_) * detail::llt_logdet(ls);
    }

    Index size() const override { return s_ * t_; }
    Scalar logdet() const override { return logdet_; }

    Matrix<Scalar> apply(const Matrix<Scalar>& rhs) const override {
        if (rhs.rows() != s_ * t_) throw DomainError("SeparableSolver: rhs row count mismatch");
        const Index k = rhs.cols();
        Matrix<Scalar> tmp = rs_inv_ * Eigen::Map<const Matrix<Scalar>>(rhs.data(), s_, t_ * k);
        Matrix<Scalar> out(s_ * t_, k);
        for (Index c = 0; c < k; ++c)
            Eigen::Map<Matrix<Scalar>>(out.col(c).data(), s_, t_).noalias() = tmp.middleCols(c * t_, t_) * rt_inv_;
        out /= sig2_;
        return out;
    }

private:
    Index s_, t_;
    Scalar sig2_;
    Matrix<Scalar> rs_inv_, rt_inv_;
    Scalar logdet_ = 0;
};

/// Observed-block solver from a full-grid solver:
///   Sigma_oo^{-1} = C_oo - C_ou C_uu^{-1} C_uo,  C = Sigma^{-1},
///   log|Sigma_oo| = log|Sigma| + log|C_uu|.
/// C_ou and C_uu come from applying the full solver to the n_u unit
/// indicator columns of the unobserved cells.
template <typename Scalar = double>
class SubsetSolver final : public CovarianceSolver<Scalar> {
public:
    SubsetSolver(SolverPtr<Scalar> full, std::vector<Index> observed, std::vector<Index> unobserved)
        : full_(std::move(full)), obs_(std::move(observed)), unobs_(std::move(unobserved)) {
        const Index n = full_->size();
        if (static_cast<Index>(obs_.size() + unobs_.size()) != n)
            throw DomainError("SubsetSolver: observed + unobserved cells must cover the grid");
        logdet_ = full_->logdet();
        if (unobs_.empty()) return;
        Matrix<Scalar> ind = Matrix<Scalar>::Zero(n, static_cast<Index>(unobs_.size()));
        for (std::size_t k = 0; k < unobs_.size(); ++k) ind(unobs_[k], static_cast<Index>(k)) = Scalar(1);
        const Matrix<Scalar> e = full_->apply(ind);
        e_o_ = take_rows(e, obs_);
        Matrix<Scalar> c_uu = take_rows(e, unobs_);
        c_uu = Scalar(0.5) * (c_uu + c_uu.transpose());
        cuu_llt_ = detail::checked_llt(c_uu, "unobserved block of the full-grid inverse");
        logdet_ += detail::llt_logdet(cuu_llt_);
    }

    Index size() const override { return static_cast<Index>(obs_.size()); }
    Scalar logdet() const override { return logdet_; }

    Matrix<Scalar> apply(const Matrix<Scalar>& rhs) const override {
        if (rhs.rows() != size()) throw DomainError("SubsetSolver: rhs row count mismatch");
        Matrix<Scalar> pad = Matrix<Scalar>::Zero(full_->size(), rhs.cols());
        for (std::size_t k = 0; k < obs_.size(); ++k) pad.row(obs_[k]) = rhs.row(static_cast<Index>(k));
        const Matrix<Scalar> q = full_->apply(pad);
        Matrix<Scalar> out = take_rows(q, obs_);
        if (!unobs_.empty()) out.noalias() -= e_o_ * cuu_llt_.solve(take_rows(q, unobs_));
        return out;
    }

    const CovarianceSolver<Scalar>& full() const { return *full_; }

private:
    static Matrix<Scalar> take_rows(const Matrix<Scalar>& m, const std::vector<Index>& rows) {
        Matrix<Scalar> out(static_cast<Index>(rows.size()), m.cols());
        for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
        return out;
    }

    SolverPtr<Scalar> full_;
    std::vector<Index> obs_, unobs_;
    Matrix<Scalar> e_o_;
    Eigen::LLT<Matrix<Scalar>> cuu_llt_;
    Scalar logdet_ = 0;
};

// ---------------------------------------------------------------------------
// Factories.

/// True when a layer with these variances is dropped from the recursion.
template <typename Scalar>
bool skip_layer(Scalar dep, Scalar ind, Scalar total) {
    return std::max(dep, ind) < Scalar(kLayerSkipFraction) * total;
}

/// Full-grid product-sum solver: Stegle core, then the temporal and spatial
/// SMW layers.
template <typename Scalar>
SolverPtr<Scalar> product_sum_solver(const ThetaPS<Scalar>& th, const Matrix<Scalar>& rs, const Matrix<Scalar>& rt) {
    th.validate();
    const Index s = rs.rows(), t = rt.rows();
    const Scalar total = th.total();
    SolverPtr<Scalar> solver = std::make_shared<StegleSolver<Scalar>>(rs, rt, th.sig2_omega, th.sig2_eps);
    if (!skip_layer(th.sig2_tau, th.sig2_eta, total)) {
        const Matrix<Scalar> sigma_t = th.sig2_tau * rt + th.sig2_eta * Matrix<Scalar>::Identity(t, t);
        solver = std::make_shared<SmwLayer<Scalar>>(solver, sigma_t, GridIncidence{GridIncidence::Kind::Time, s, t});
    }
    if (!skip_layer(th.sig2_delta, th.sig2_gamma, total)) {
        const Matrix<Scalar> sigma_s = th.sig2_delta * rs + th.sig2_gamma * Matrix<Scalar>::Identity(s, s);
        solver = std::make_shared<SmwLayer<Scalar>>(solver, sigma_s, GridIncidence{GridIncidence::Kind::Site, s, t});
    }
    return solver;
}

template <typename Scalar>
SolverPtr<Scalar> full_grid_solver(const ThetaPS<Scalar>& th, const StDesign<Scalar>& d) {
    const auto [rs, rt] = correlation_factors(th, d);
    return product_sum_solver(th, rs, rt);
}

template <typename Scalar>
SolverPtr<Scalar> full_grid_solver(const ThetaSep<Scalar>& th, const StDesign<Scalar>& d) {
    const auto [rs, rt] = correlation_factors(th, d);
    return std::make_shared<SeparableSolver<Scalar>>(rs, rt, th);
}

/// Solver for Sigma_oo on any design: the full-grid structured solver,
/// wrapped in Helmert-Wolf blocking when cells are missing.
template <typename Scalar, typename Theta>
SolverPtr<Scalar> make_solver(const Theta& th, const StDesign<Scalar>& d) {
    SolverPtr<Scalar> full = full_grid_solver(th, d);
    if (d.full_grid()) return full;
    return std::make_shared<SubsetSolver<Scalar>>(std::move(full), d.observed_cells(), d.unobserved_cells());
}

namespace detail {
template <typename Scalar>
void require_full_grid(const StDesign<Scalar>& d, const char* who) {
    if (!d.full_grid()) throw DomainError(std::string(who) + " requires a full grid (no unobserved cells)");
}
}  // namespace detail

/// Separable LMM on a full grid.
template <typename Scalar>
FastSolve<Scalar> sep_solve(const ThetaSep<Scalar>& th, const StDesign<Scalar>& d, const Matrix<Scalar>& rhs) {
    detail::require_full_grid(d, "sep_solve");
    return full_grid_solver(th, d)->solve(rhs);
}

/// Stegle core only: sig2_omega Rt (x) Rs + sig2_eps I on a full grid.
template <typename Scalar>
FastSolve<Scalar> stegle_solve(const ThetaPS<Scalar>& th, const StDesign<Scalar>& d, const Matrix<Scalar>& rhs) {
    detail::require_full_grid(d, "stegle_solve");
    const auto [rs, rt] = correlation_factors(th, d);
    return StegleSolver<Scalar>(rs, rt, th.sig2_omega, th.sig2_eps).solve(rhs);
}

/// One SMW update of an inner solver by a grid incidence block.
template <typename Scalar>
FastSolve<Scalar> smw_layer(SolverPtr<Scalar> inner, const Matrix<Scalar>& block, const GridIncidence& z,
                            const Matrix<Scalar>& rhs) {
    return SmwLayer<Scalar>(std::move(inner), block, z).solve(rhs);
}

/// Product-sum LMM on a full grid.
template <typename Scalar>
FastSolve<Scalar> ps_solve(const ThetaPS<Scalar>& th, const StDesign<Scalar>& d, const Matrix<Scalar>& rhs) {
    detail::require_full_grid(d, "ps_solve");
    return full_grid_solver(th, d)->solve(rhs);
}

/// Observed-cell solve on any design (delegates to the full-grid path when
/// nothing is missing). rhs rows follow the observed-cell order.
template <typename Scalar, typename Theta>
FastSolve<Scalar> hw_solve(const Theta& th, const StDesign<Scalar>& d, const Matrix<Scalar>& rhs_o) {
    return make_solver(th, d)->solve(rhs_o);
}

/// Dense Cholesky reference.
template <typename Scalar>
FastSolve<Scalar> dense_solve(const Matrix<Scalar>& sigma, const Matrix<Scalar>& rhs) {
    return DenseSolver<Scalar>(sigma).solve(rhs);
}

}  // namespace stlmm
