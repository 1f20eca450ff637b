#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "stlmm/errors.hpp"
#include "stlmm/harness.hpp"
#include "stlmm/io.hpp"

using namespace stlmm;

namespace {

std::string write_file(const std::string& name, const std::string& text) {
    const std::string path = ::testing::TempDir() + "stlmm_io_" + name;
    std::ofstream(path) << text;
    return path;
}

std::string error_of(const std::string& path) {
    try {
        load_observations(path);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

std::string pad2(int v) { return (v < 10 ? "0" : "") + std::to_string(v); }

/// 33 sites x 31 daily dates; `held_out` cells go to the second stream.
void daily_files(std::ostream& train, std::ostream& test, std::size_t held_out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> cells(33 * 31);
    for (int k = 0; k < 33 * 31; ++k) cells[static_cast<std::size_t>(k)] = k;
    std::shuffle(cells.begin(), cells.end(), rng);
    std::vector<bool> hold(cells.size(), false);
    for (std::size_t k = 0; k < held_out; ++k) hold[static_cast<std::size_t>(cells[k])] = true;
    std::normal_distribution<double> z;
    for (auto* os : {&train, &test}) *os << "site_id,x_km,y_km,time,response,elev,day\n";
    for (int j = 0; j < 31; ++j)
        for (int i = 0; i < 33; ++i) {
            auto& os = hold[static_cast<std::size_t>(j * 33 + i)] ? test : train;
            os << "st" << i << ',' << 10.0 * i << ',' << 3.0 * (i % 7) << ",2019-01-" << pad2(j + 1) << ','
               << 2 + z(rng) << ',' << 100 + i << ',' << j + 1 << '\n';
        }
}

}  // namespace

TEST(LoadObservations, TwoRows) {
    const auto path = write_file("two.csv", "site_id,x_km,y_km,time,response\na,0,0,1,1.5\nb,3,4,1,2.5\n");
    const auto g = load_observations(path);
    EXPECT_EQ(g.design.n_sites(), 2);
    EXPECT_EQ(g.design.n_times(), 1);
    EXPECT_EQ(g.design.n_observed(), 2);
    EXPECT_EQ(g.x.cols(), 1);
    EXPECT_EQ(g.y(1), 2.5);
}

TEST(LoadObservations, DailyGridWithMissingCells) {
    std::ostringstream train, test;
    daily_files(train, test, 51, 1);
    const auto tp = write_file("daily_train.csv", train.str());
    const auto vp = write_file("daily_test.csv", test.str());
    const auto g = load_observations(tp);
    EXPECT_EQ(g.design.n_sites(), 33);
    EXPECT_EQ(g.design.n_times(), 31);
    EXPECT_EQ(g.design.n_observed(), 972);
    EXPECT_EQ(g.design.n_cells() - g.design.n_observed(), 51);
    EXPECT_EQ(g.design.times()(30) - g.design.times()(0), 30.0);
    EXPECT_EQ(g.covariate_names, (std::vector<std::string>{"elev", "day"}));
    EXPECT_EQ(g.x.cols(), 3);
    EXPECT_EQ(g.time_labels.front(), "2019-01-01");

    const auto s = load_split(tp, vp);
    EXPECT_EQ(s.design.n_observed(), 972);
    EXPECT_EQ(s.targets.size(), 51u);
    for (Index c : s.targets) EXPECT_FALSE(s.design.observed()[static_cast<std::size_t>(c)]);
}

TEST(LoadObservations, ManifestSelectsColumns) {
    const auto path =
        write_file("manifest.csv", "id,e,n,day,temp,junk,z\na,0,0,1,1.5,9,0.5\nb,3,4,1,2.5,9,0.25\n");
    Manifest m;
    m.site_id = "id";
    m.x = "e";
    m.y = "n";
    m.time = "day";
    m.response = "temp";
    m.covariates = {"z"};
    const auto g = load_observations(path, m);
    EXPECT_EQ(g.x.cols(), 2);
    EXPECT_EQ(g.x(1, 1), 0.25);
}

TEST(LoadObservations, Errors) {
    const auto no_resp = error_of(write_file("noresp.csv", "site_id,x_km,y_km,time,value\na,0,0,1,1\n"));
    EXPECT_NE(no_resp.find("response"), std::string::npos);

    const auto dup = error_of(
        write_file("dup.csv", "site_id,x_km,y_km,time,response\na,0,0,1,1\nb,1,1,1,1\na,0,0,1,2\n"));
    EXPECT_NE(dup.find("lines 2 and 4"), std::string::npos);

    const auto coords = error_of(
        write_file("coords.csv", "site_id,x_km,y_km,time,response\na,0,0,1,1\na,0,1,2,1\n"));
    EXPECT_NE(coords.find("coordinates"), std::string::npos);

    const auto cov = error_of(write_file("cov.csv", "site_id,x_km,y_km,time,response,z\na,0,0,1,1,\n"));
    EXPECT_FALSE(cov.empty());

    const auto resp = error_of(write_file("resp.csv", "site_id,x_km,y_km,time,response\na,0,0,1,\n"));
    EXPECT_FALSE(resp.empty());

    const auto far = error_of(write_file("far.csv", "site_id,x_km,y_km,time,response\na,0,0,1,1\nb,2e5,0,1,1\n"));
    EXPECT_NE(far.find("km"), std::string::npos);

    EXPECT_THROW(load_observations(::testing::TempDir() + "stlmm_io_absent.csv"), DataError);
}

TEST(LoadObservations, QuotedFields) {
    const auto path = write_file("quoted.csv", "\"site_id\",x_km,y_km,time,response\n\"a, north\",0,0,1,1\n");
    const auto g = load_observations(path);
    EXPECT_EQ(g.site_ids.front(), "a, north");
}

TEST(LoadSplit, NewSiteExtendsGrid) {
    const auto tp = write_file("ext_train.csv", "site_id,x_km,y_km,time,response\na,0,0,1,1\nb,1,0,1,2\na,0,0,2,3\n");
    const auto vp = write_file("ext_test.csv", "site_id,x_km,y_km,time,response\nc,0,1,3,\n");
    const auto g = load_split(tp, vp);
    EXPECT_EQ(g.design.n_sites(), 3);
    EXPECT_EQ(g.design.n_times(), 3);
    EXPECT_EQ(g.design.n_observed(), 3);
    ASSERT_EQ(g.targets.size(), 1u);
    EXPECT_EQ(g.targets[0], g.design.cell(2, 2));
    EXPECT_TRUE(std::isnan(g.y_targets(0)));
}

TEST(RoundTrip, SimulatedDataset) {
    const auto data = simulate_dataset(variance_config(2), SimProtocol{}, 7);
    std::ostringstream os;
    write_observations(os, dataset_table(data, data.train));
    const auto path = write_file("roundtrip.csv", os.str());
    const auto g = load_observations(path);
    EXPECT_EQ(g.design.n_observed(), 1055);
    EXPECT_EQ(g.design.sites(), data.design.sites());
    EXPECT_EQ(g.design.times(), data.design.times());
    EXPECT_EQ(g.design.observed(), data.design.observed());
    EXPECT_EQ(g.x, data.x_train());
    EXPECT_EQ(g.y, data.y_train());
}

TEST(ParamsCsv, ColumnSets) {
    FitResult f;
    ThetaPS<double> ps;
    ps.set_variances({1, 2, 3, 4, 5, 6});
    ps.spatial = {KernelKind::Exponential, 3.5};
    ps.temporal = {KernelKind::Exponential, 12};
    f.theta = ps;
    std::ostringstream a;
    write_params_csv(a, f);
    EXPECT_EQ(a.str(), "sig2_delta,sig2_gamma,sig2_tau,sig2_eta,sig2_omega,sig2_eps,phi,kappa\n1,2,3,4,5,6,12,3.5\n");

    ThetaSep<double> sep;
    sep.sig2_omega = 2;
    sep.v_s = 0.25;
    sep.v_t = 0.5;
    sep.spatial = {KernelKind::Spherical, 4};
    sep.temporal = {KernelKind::Exponential, 8};
    f.theta = sep;
    std::ostringstream b;
    write_params_csv(b, f);
    EXPECT_EQ(b.str(), "sig2_omega,v_s,v_t,phi,kappa\n2,0.25,0.5,8,4\n");
}

TEST(SemivariogramCsv, FittedSurfaceAtOrigin) {
    ThetaPS<double> ps;
    ps.set_variances({1, 1, 1, 1, 1, 1});
    ps.spatial = {KernelKind::Exponential, 2};
    ps.temporal = {KernelKind::Exponential, 2};
    std::ostringstream os;
    write_fitted_sv_csv(os, ps, {0.0, 1.0}, {0.0});
    std::istringstream is(os.str());
    std::string header, first, second;
    std::getline(is, header);
    std::getline(is, first);
    std::getline(is, second);
    EXPECT_EQ(header, "h_s,h_t,gamma");
    EXPECT_EQ(first, "0,0,0");
    EXPECT_FALSE(second.empty());
}
