#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "stlmm/errors.hpp"

namespace stlmm {

enum class KernelKind { Exponential, Spherical, Gaussian };

/// Isotropic stationary correlation function with a range parameter.
///
/// The exponential and Gaussian kernels use the effective-range convention
/// (correlation ~ exp(-3) at h = range); the spherical kernel reaches exactly
/// zero at h = range.
template <typename Scalar = double>
struct CorrelationModel {
    KernelKind kind = KernelKind::Exponential;
    Scalar range = Scalar(1);
};

inline std::string_view kernel_name(KernelKind k) {
    switch (k) {
        case KernelKind::Exponential: return "exponential";
        case KernelKind::Spherical: return "spherical";
        case KernelKind::Gaussian: return "gaussian";
    }
    return "unknown";
}

inline KernelKind parse_kernel(std::string_view name) {
    if (name == "exponential") return KernelKind::Exponential;
    if (name == "spherical") return KernelKind::Spherical;
    if (name == "gaussian") return KernelKind::Gaussian;
    throw DomainError("unknown kernel '" + std::string(name) +
                      "' (expected exponential, spherical or gaussian)");
}

template <typename Scalar>
Scalar correlate(const CorrelationModel<Scalar>& model, Scalar h) {
    using std::exp;
    using std::isfinite;
    if (!isfinite(h) || h < Scalar(0)) throw DomainError("correlate: distance must be finite and >= 0");
    if (!(model.range > Scalar(0))) throw DomainError("correlate: range must be > 0");
    const Scalar u = h / model.range;
    switch (model.kind) {
        case KernelKind::Exponential:
            return exp(Scalar(-3) * u);
        case KernelKind::Spherical:
            return u >= Scalar(1) ? Scalar(0) : Scalar(1) - Scalar(1.5) * u + Scalar(0.5) * u * u * u;
        case KernelKind::Gaussian:
            return exp(Scalar(-3) * u * u);
    }
    return Scalar(0);
}

// Coordinates are planar km, one row per point.
template <typename Scalar>
using Coords = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Pairwise Euclidean distances between rows of `a` and rows of `b`.
template <typename Scalar>
Matrix<Scalar> spatial_distances(const Coords<Scalar>& a, const Coords<Scalar>& b) {
    Matrix<Scalar> d(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = (a.row(i) - b.row(j)).norm();
    return d;
}

/// Pairwise absolute differences between time stamps.
template <typename Scalar>
Matrix<Scalar> temporal_distances(const Vector<Scalar>& a, const Vector<Scalar>& b) {
    Matrix<Scalar> d(a.size(), b.size());
    for (Eigen::Index j = 0; j < b.size(); ++j)
        for (Eigen::Index i = 0; i < a.size(); ++i) d(i, j) = std::abs(a(i) - b(j));
    return d;
}

/// Elementwise correlation of a distance matrix.
template <typename Scalar>
Matrix<Scalar> correlate(const CorrelationModel<Scalar>& model, const Matrix<Scalar>& dist) {
    return dist.unaryExpr([&](Scalar h) { return correlate(model, h); });
}

/// Correlation matrix of a set of planar sites.
template <typename Scalar>
Matrix<Scalar> correlation_matrix(const CorrelationModel<Scalar>& model, const Coords<Scalar>& sites) {
    if (sites.rows() == 0) throw DomainError("correlation_matrix: no points");
    Matrix<Scalar> r = correlate(model, spatial_distances(sites, sites));
    r.diagonal().setOnes();
    return r;
}

/// Correlation matrix of a set of time stamps.
template <typename Scalar>
Matrix<Scalar> correlation_matrix(const CorrelationModel<Scalar>& model, const Vector<Scalar>& times) {
    if (times.size() == 0) throw DomainError("correlation_matrix: no points");
    Matrix<Scalar> r = correlate(model, temporal_distances(times, times));
    r.diagonal().setOnes();
    return r;
}

}  // namespace stlmm
