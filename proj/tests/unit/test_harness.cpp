#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "stlmm/errors.hpp"
#include "stlmm/harness.hpp"

using namespace stlmm;

TEST(VarianceConfigs, TableValues) {
    const double want[4][6] = {{18, 1, 18, 1, 20, 2}, {16, 4, 16, 4, 16, 4}, {10, 10, 10, 10, 10, 10},
                               {30, 0.1, 20, 0.1, 2, 7.8}};
    for (int k = 1; k <= 4; ++k) {
        const auto cfg = variance_config(k);
        EXPECT_EQ(cfg.name, "VC" + std::to_string(k));
        const auto v = cfg.theta.variances();
        for (int c = 0; c < 6; ++c) EXPECT_EQ(v[static_cast<std::size_t>(c)], want[k - 1][c]);
        EXPECT_EQ(cfg.theta.spatial.range, 2.25);
        EXPECT_EQ(cfg.theta.temporal.range, 9.0);
        EXPECT_EQ(cfg.theta.spatial.kind, KernelKind::Exponential);
    }
    EXPECT_EQ(variance_config("vc3").name, "VC3");
    EXPECT_EQ(variance_config("2").name, "VC2");
    EXPECT_THROW(variance_config("VC5"), UsageError);
    EXPECT_THROW(variance_config(0), DomainError);
}

TEST(Simulate, SplitAndCovariatePatterns) {
    const SimProtocol proto;
    const auto data = simulate_dataset(variance_config(2), proto, 17);
    EXPECT_EQ(data.train.size(), 1055u);
    EXPECT_EQ(data.test.size(), 25u);
    std::set<Index> all(data.train.begin(), data.train.end());
    all.insert(data.test.begin(), data.test.end());
    EXPECT_EQ(all.size(), 1080u);
    EXPECT_EQ(data.design.n_observed(), 1055);
    EXPECT_EQ(data.design.unobserved_cells(), data.test);

    const auto& d = data.design;
    for (Index c = 0; c < d.n_cells(); ++c) {
        const Index i = d.site_of(c), j = d.time_of(c);
        EXPECT_EQ(data.x_full(c, 0), 1.0);
        EXPECT_EQ(data.x_full(c, 1), data.x_full(d.cell(0, j), 1));
        EXPECT_EQ(data.x_full(c, 2), data.x_full(d.cell(i, 0), 2));
    }
    for (Index i = 0; i < d.n_sites(); ++i) {
        EXPECT_GE(d.sites()(i, 0), 0.0);
        EXPECT_LE(d.sites()(i, 1), 5.0);
    }
    EXPECT_EQ(d.times()(0), 1.0);
    EXPECT_EQ(d.times()(29), 30.0);
}

TEST(Simulate, Reproducible) {
    const SimProtocol proto;
    const auto a = simulate_dataset(variance_config(4), proto, 99);
    const auto b = simulate_dataset(variance_config(4), proto, 99);
    const auto c = simulate_dataset(variance_config(4), proto, 100);
    EXPECT_EQ(a.y_full, b.y_full);
    EXPECT_EQ(a.x_full, b.x_full);
    EXPECT_EQ(a.test, b.test);
    EXPECT_NE(a.y_full, c.y_full);
    EXPECT_NE(rep_seed(1, 0), rep_seed(1, 1));
    EXPECT_NE(rep_seed(1, 0), rep_seed(2, 0));
}

TEST(Simulate, ZeroMeanResponse) {
    const SimProtocol proto;
    const int reps = 200;
    std::vector<double> means;
    for (int r = 0; r < reps; ++r) means.push_back(simulate_dataset(variance_config(2), proto, rep_seed(5, r)).y_full.mean());
    double m = 0, v = 0;
    for (double x : means) m += x;
    m /= reps;
    for (double x : means) v += (x - m) * (x - m);
    const double sd = std::sqrt(v / (reps - 1));
    EXPECT_LE(std::abs(m), 4 * sd / std::sqrt(static_cast<double>(reps)));
}

TEST(Simulate, MarginalVarianceAndFarLagCovariance) {
    // Cell variance should be the total variance; same-site cells 29 steps
    // apart share only the purely spatial components.
    SimProtocol proto;
    const auto cfg = variance_config(1);
    const int reps = 3000;
    double var = 0, cov = 0;
    for (int r = 0; r < reps; ++r) {
        const auto data = simulate_dataset(cfg, proto, rep_seed(11, r));
        const auto& d = data.design;
        if (r < 500) var += data.y_full(d.cell(0, 0)) * data.y_full(d.cell(0, 0));
        for (Index i = 0; i < d.n_sites(); ++i) cov += data.y_full(d.cell(i, 0)) * data.y_full(d.cell(i, 29));
    }
    var /= 500;
    cov /= reps * 36.0;
    EXPECT_NEAR(var, 60.0, 6.0);
    const double want = cfg.theta.sig2_delta + cfg.theta.sig2_gamma +
                        (cfg.theta.sig2_tau + cfg.theta.sig2_omega) * std::exp(-3.0 * 29 / 9);
    EXPECT_NEAR(cov, want, 0.1 * want);
}

TEST(Methods, LabelsAndParsing) {
    const auto all = study_methods();
    ASSERT_EQ(all.size(), 5u);
    EXPECT_EQ(all[0].label(), "PS_REML");
    EXPECT_EQ(all[3].label(), "SEP_C-WLS");
    EXPECT_EQ(all[4].label(), "IRE_OLS");
    EXPECT_EQ(parse_method_spec("sep_cwls").label(), "SEP_C-WLS");
    EXPECT_EQ(parse_method_spec("PS_C-WLS").label(), "PS_C-WLS");
    EXPECT_THROW(parse_method_spec("IRE_REML"), UsageError);
}

TEST(Study, SingleRepetition) {
    SimProtocol proto;
    proto.reps = 1;
    StudyOptions opts;
    opts.workers = 1;
    const auto t = run_study(variance_config(2), proto, {{Model::Ire, Method::Ols}}, opts);
    ASSERT_EQ(t.rows.size(), 1u);
    const auto& r = t.at("IRE_OLS");
    EXPECT_EQ(r.reps_ok, 1);
    const double k = r.coverage * 25;
    EXPECT_NEAR(k, std::round(k), 1e-9);
    EXPECT_EQ(r.type1.size(), 4);
    for (Index c = 0; c < 4; ++c) EXPECT_TRUE(r.type1(c) == 0.0 || r.type1(c) == 1.0);
    EXPECT_GE(r.rmspe, 0.0);
    EXPECT_THROW(t.at("PS_REML"), DomainError);
}

TEST(Study, WorkerCountDoesNotChangeResults) {
    SimProtocol proto;
    proto.reps = 6;
    proto.seed = 3;
    const std::vector<MethodSpec> methods = {{Model::ProductSum, Method::Cwls},
                                             {Model::Separable, Method::Cwls},
                                             {Model::Ire, Method::Ols}};
    StudyOptions one, three;
    one.workers = 1;
    three.workers = 3;
    std::ostringstream a, b, c;
    run_study(variance_config(3), proto, methods, one).write_csv(a, false);
    run_study(variance_config(3), proto, methods, three).write_csv(b, false);
    run_study(variance_config(3), proto, methods, one).write_csv(c, false);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str(), c.str());
    EXPECT_NE(a.str().find("SEP_C-WLS"), std::string::npos);
}

TEST(Study, RatesWithinUnitInterval) {
    SimProtocol proto;
    proto.reps = 4;
    StudyOptions opts;
    opts.workers = 2;
    const auto t = run_study(variance_config(4), proto, study_methods(), opts);
    ASSERT_EQ(t.rows.size(), 5u);
    for (const auto& r : t.rows) {
        EXPECT_EQ(r.reps_ok + r.failures, 4);
        EXPECT_GE(r.coverage, 0.0);
        EXPECT_LE(r.coverage, 1.0);
        EXPECT_GE(r.type1.minCoeff(), 0.0);
        EXPECT_LE(r.type1.maxCoeff(), 1.0);
        EXPECT_GE(r.rmse.minCoeff(), 0.0);
    }
    std::ostringstream text;
    t.write_text(text);
    EXPECT_NE(text.str().find("PS_REML"), std::string::npos);
}

TEST(Bench, SmallSizesAgree) {
    BenchOptions opts;
    opts.sizes = {50, 300};
    opts.n_matrices = 1;
    const auto rows = bench_inversion(variance_config(3), opts);
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& r : rows) {
        EXPECT_FALSE(r.skipped);
        EXPECT_LE(r.max_rel_err, 1e-8);
        EXPECT_EQ(r.n_obs, r.n_sites * r.n_times - std::lround(0.05 * r.n_sites * r.n_times));
        EXPECT_GT(r.ps_s, 0.0);
    }
    EXPECT_EQ(rows[0].n_sites, 8);
    EXPECT_EQ(rows[0].n_times, 6);
    opts.max_dense_bytes = 1;
    EXPECT_TRUE(bench_inversion(variance_config(3), opts)[0].skipped);
}

TEST(Bench, SeparableCounterpart) {
    const auto sep = bench_separable(variance_config(3));
    EXPECT_EQ(sep.sig2_omega, 60.0);
    EXPECT_EQ(sep.v_s, 0.5);
    EXPECT_EQ(sep.spatial.range, 2.25);
}
