#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "stlmm/kernels.hpp"

using namespace stlmm;

TEST(Kernels, ExponentialAtZeroAndRange) {
    const CorrelationModel<double> m{KernelKind::Exponential, 2.25};
    EXPECT_DOUBLE_EQ(correlate(m, 0.0), 1.0);
    EXPECT_NEAR(correlate(m, 2.25), std::exp(-3.0), 1e-15);
    EXPECT_NEAR(correlate(m, 2.25), 0.049787, 1e-6);
}

TEST(Kernels, SphericalCompactSupport) {
    const CorrelationModel<double> m{KernelKind::Spherical, 5.0};
    EXPECT_DOUBLE_EQ(correlate(m, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(correlate(m, 5.0), 0.0);
    EXPECT_DOUBLE_EQ(correlate(m, 7.0), 0.0);
    // u = 0.5: 1 - 0.75 + 0.0625
    EXPECT_NEAR(correlate(m, 2.5), 0.3125, 1e-15);
}

TEST(Kernels, GaussianShape) {
    const CorrelationModel<double> m{KernelKind::Gaussian, 2.0};
    EXPECT_NEAR(correlate(m, 1.0), std::exp(-0.75), 1e-15);
}

TEST(Kernels, DomainErrors) {
    const CorrelationModel<double> m{KernelKind::Exponential, 1.0};
    EXPECT_THROW(correlate(m, -1.0), DomainError);
    EXPECT_THROW(correlate(m, std::nan("")), DomainError);
    EXPECT_THROW(correlate(m, std::numeric_limits<double>::infinity()), DomainError);
    EXPECT_THROW(correlate(CorrelationModel<double>{KernelKind::Exponential, 0.0}, 1.0), DomainError);
}

TEST(Kernels, NamesRoundTrip) {
    for (auto k : {KernelKind::Exponential, KernelKind::Spherical, KernelKind::Gaussian})
        EXPECT_EQ(parse_kernel(kernel_name(k)), k);
    EXPECT_THROW(parse_kernel("matern"), DomainError);
}

TEST(Kernels, CorrelationMatrixSinglePoint) {
    Vector<double> t(1);
    t << 3.0;
    const auto r = correlation_matrix(CorrelationModel<double>{KernelKind::Exponential, 9.0}, t);
    ASSERT_EQ(r.rows(), 1);
    EXPECT_DOUBLE_EQ(r(0, 0), 1.0);
}

TEST(Kernels, TwoTimesOffDiagonal) {
    Vector<double> t(2);
    t << 1.0, 2.0;
    const auto r = correlation_matrix(CorrelationModel<double>{KernelKind::Exponential, 9.0}, t);
    EXPECT_NEAR(r(0, 1), std::exp(-1.0 / 3.0), 1e-15);
    EXPECT_NEAR(r(0, 1), 0.716531, 1e-6);
    EXPECT_DOUBLE_EQ(r(0, 1), r(1, 0));
}

TEST(Kernels, Ar1IdentityOnIntegerTimes) {
    Vector<double> t(12);
    for (int j = 0; j < 12; ++j) t(j) = j + 1;
    const auto r = correlation_matrix(CorrelationModel<double>{KernelKind::Exponential, 9.0}, t);
    const double rho = r(0, 1);
    double worst = 0;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) worst = std::max(worst, std::abs(r(i, j) - std::pow(rho, std::abs(i - j))));
    EXPECT_LE(worst, 1e-12);
    EXPECT_NEAR(r(0, 2), r(0, 1) * r(1, 2), 1e-15);
}

TEST(Kernels, DuplicateSitesAllowed) {
    Coords<double> s(2, 2);
    s << 1.0, 1.0, 1.0, 1.0;
    const auto r = correlation_matrix(CorrelationModel<double>{KernelKind::Exponential, 2.0}, s);
    EXPECT_DOUBLE_EQ(r(0, 1), 1.0);
}
