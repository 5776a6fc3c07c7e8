#include <gtest/gtest.h>

#include <random>

#include "anima/errors.hpp"
#include "anima/evalmetrics.hpp"
#include "test_util.hpp"

using namespace anima;
using namespace anima::metrics;

namespace {

GaussianStats stats(const std::vector<double>& mean, const oracle::Mat& cov) {
    GaussianStats s;
    s.mean = mean;
    for (const auto& r : cov) s.cov.insert(s.cov.end(), r.begin(), r.end());
    s.count = 100;
    return s;
}

oracle::Mat eye(std::size_t d) {
    auto m = oracle::zeros(d, d);
    for (std::size_t i = 0; i < d; ++i) m[i][i] = 1;
    return m;
}

FlowField uniform_flow(std::size_t h, std::size_t w, Scalar u, Scalar v) {
    return {NdTensor({h, w}, u), NdTensor({h, w}, v)};
}

}  // namespace

TEST(Frechet, MatchesIndependentOracleOnRandomPsdPairs) {
    std::mt19937_64 g(1);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 1 + trial % 8;
        const std::size_t rank_a = trial % 3 == 0 ? std::max<std::size_t>(1, d / 2) : d + 2;
        const auto sa = oracle::random_psd(d, g, rank_a), sb = oracle::random_psd(d, g, d + 3);
        std::vector<double> ma(d), mb(d);
        for (auto& x : ma) x = n(g);
        for (auto& x : mb) x = n(g);
        const double got = frechet_distance(stats(ma, sa), stats(mb, sb));
        EXPECT_NEAR(got, oracle::frechet(ma, sa, mb, sb), 1e-6) << "d=" << d;
        EXPECT_NEAR(got, frechet_distance(stats(mb, sb), stats(ma, sa)), 1e-8);
        EXPECT_GE(got, 0.0);
    }
}

TEST(Frechet, AnalyticCases) {
    std::mt19937_64 g(2);
    const auto s = oracle::random_psd(5, g, 7);
    const std::vector<double> m{1, -2, 0.5, 3, 0};
    EXPECT_NEAR(frechet_distance(stats(m, s), stats(m, s)), 0.0, 1e-8);
    EXPECT_NEAR(frechet_distance(stats({0, 0, 0}, eye(3)), stats({1, 2, -2}, eye(3))), 9.0, 1e-8);
    EXPECT_NEAR(frechet_distance(stats({0}, {{1}}), stats({0}, {{4}})), 1.0, 1e-8);
}

TEST(Frechet, ErrorsAndTolerances) {
    EXPECT_THROW(frechet_distance(stats({0}, {{1}}), stats({0, 0}, eye(2))), ShapeError);
    EXPECT_THROW(frechet_distance(stats({0, 0}, {{1, 0}, {0, -1}}), stats({0, 0}, eye(2))), NumericError);
    EXPECT_THROW(frechet_distance(stats({0, 0}, {{1, 0.5}, {0, 1}}), stats({0, 0}, eye(2))), NumericError);
    // A tiny negative eigenvalue within tolerance is clamped.
    EXPECT_NEAR(frechet_distance(stats({0}, {{-1e-9}}), stats({0}, {{0}})), 0.0, 1e-8);
}

TEST(FitGaussian, Examples) {
    const auto two = fit_gaussian(NdTensor::matrix({{-1}, {1}}));
    EXPECT_DOUBLE_EQ(two.mean[0], 0.0);
    EXPECT_DOUBLE_EQ(two.cov[0], 2.0);
    EXPECT_EQ(two.count, 2u);

    const auto same = fit_gaussian(NdTensor::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}));
    for (double c : same.cov) EXPECT_EQ(c, 0.0);

    const auto x = testutil::random({50, 4}, 3);
    const auto f = fit_gaussian(x);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(f.cov_at(i, j), f.cov_at(j, i));
            double mi = 0, mj = 0, acc = 0;
            for (std::size_t r = 0; r < 50; ++r) {
                mi += x.at(r, i) / 50.0;
                mj += x.at(r, j) / 50.0;
            }
            for (std::size_t r = 0; r < 50; ++r) acc += (x.at(r, i) - mi) * (x.at(r, j) - mj);
            EXPECT_NEAR(f.cov_at(i, j), acc / 49.0, 1e-9);
        }
    EXPECT_THROW(fit_gaussian(NdTensor::matrix({{1, 2}})), ContractError);
}

TEST(DynamicDegree, Examples) {
    EXPECT_EQ(dynamic_degree({uniform_flow(3, 4, 0, 0)}), 0.0);
    EXPECT_NEAR(dynamic_degree({uniform_flow(3, 4, 3, 4)}), 5.0, 1e-12);
    EXPECT_NEAR(dynamic_degree({uniform_flow(2, 2, 2, 0), uniform_flow(2, 2, 0, 4)}), 3.0, 1e-12);
    EXPECT_THROW(dynamic_degree({}), ContractError);
    EXPECT_THROW(dynamic_degree({{NdTensor({2, 2}), NdTensor({2, 3})}}), ShapeError);
}

TEST(DynamicDegree, InvariantUnderFrameOrder) {
    std::vector<FlowField> flows;
    for (std::uint64_t s = 0; s < 6; ++s) flows.push_back({testutil::random({4, 5}, s), testutil::random({4, 5}, s + 10)});
    const double a = dynamic_degree(flows);
    std::reverse(flows.begin(), flows.end());
    std::rotate(flows.begin(), flows.begin() + 2, flows.end());
    EXPECT_NEAR(dynamic_degree(flows), a, 1e-12);
}

TEST(DynamicDegree, FlowsFromTensorLayout) {
    NdTensor t({2, 1, 1, 2});
    t[0] = 3;
    t[1] = 4;
    t[2] = 6;
    t[3] = 8;
    const auto f = flows_from_tensor(t);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f[1].u.at(0, 0), 6.0f);
    EXPECT_NEAR(dynamic_degree(f), 7.5, 1e-12);
}

TEST(Extractor, FixedProjectionIsDeterministicAndLinear) {
    const RandomProjectionExtractor e(6, 4);
    const auto a = testutil::random({3, 2, 2, 2}, 1), b = testutil::random({3, 2, 2, 2}, 2);
    const auto fa = e.extract(a);
    EXPECT_EQ(fa.dims(), (NdTensor::Dims{3, 6}));
    EXPECT_TRUE(e.extract(a).bit_equal(fa));
    EXPECT_LT(testutil::max_abs_diff(e.extract(kernels::add(a, b)), kernels::add(fa, e.extract(b))), 1e-5);
    EXPECT_FALSE(RandomProjectionExtractor(6, 5).extract(a).bit_equal(fa));
}
