#include <gtest/gtest.h>

#include <stackpool/bench.hpp>

using namespace stackpool;

namespace {

BenchOptions fast() {
    BenchOptions o;
    o.min_sample_ms = 0.05;
    return o;
}

BenchCase fake(const std::string& variant, Scenario s, double median) {
    BenchCase c;
    c.variant = variant;
    c.spec = variant + ":2:s2";
    c.scenario = s;
    c.median_ms = median;
    return c;
}

BenchReport fake_report(double lv, double ls, double lm, double fv, double fs, double fm, double bv, double bs, double bm) {
    BenchReport r;
    r.cases = {fake("vanilla", Scenario::layer_forward, lv), fake("stacked", Scenario::layer_forward, ls),
               fake("multi", Scenario::layer_forward, lm),   fake("vanilla", Scenario::net_forward, fv),
               fake("stacked", Scenario::net_forward, fs),   fake("multi", Scenario::net_forward, fm),
               fake("vanilla", Scenario::net_backward, bv),  fake("stacked", Scenario::net_backward, bs),
               fake("multi", Scenario::net_backward, bm)};
    return r;
}

const std::vector<PoolSpec> kSpecs{PoolSpec::vanilla(2, 2), PoolSpec::stacked({2, 2, 3}, 2), PoolSpec::multi_kernel({2, 4, 8}, 2)};

}  // namespace

TEST(BenchOptions, Validation) {
    BenchOptions o;
    o.reps = 0;
    EXPECT_THROW(o.validate(), BenchError);
    o.reps = 29;
    EXPECT_THROW(o.validate(), BenchError);
    o.reps = 30;
    o.warmups = 4;
    EXPECT_THROW(o.validate(), BenchError);
    o.warmups = 5;
    EXPECT_NO_THROW(o.validate());
    o.reps = 0;
    EXPECT_THROW(bench_pool_layer(kSpecs, 8, 8, o), BenchError);
}

TEST(Quantile, LinearInterpolation) {
    EXPECT_EQ(quantile({3, 1, 2}, 0.5), 2.0);
    EXPECT_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_EQ(quantile({1, 2, 3, 4, 5}, 0.25), 2.0);
    EXPECT_EQ(quantile({10}, 0.75), 10.0);
    EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(MeasureInterleaved, SampleCounts) {
    int a = 0, b = 0;
    auto s = measure_interleaved({[&] { ++a; }, [&] { ++b; }}, fast());
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].size(), 30u);
    EXPECT_EQ(s[1].size(), 30u);
    EXPECT_GT(a, 35);
}

TEST(BenchPoolLayer, ReportShape) {
    auto r = bench_pool_layer(kSpecs, 32, 32, fast());
    ASSERT_EQ(r.cases.size(), 3u);
    for (auto& c : r.cases) {
        EXPECT_EQ(c.scenario, Scenario::layer_forward);
        EXPECT_EQ(c.reps, 30u);
        EXPECT_EQ(c.samples_ms.size(), 30u);
        EXPECT_GT(c.median_ms, 0.0);
        EXPECT_GE(c.iqr_ms, 0.0);
        EXPECT_EQ(c.extents, (std::vector<std::size_t>{1, 1, 32, 32}));
    }
    EXPECT_TRUE(r.find("stacked", Scenario::layer_forward));
    EXPECT_FALSE(r.find("stacked", Scenario::net_forward));
}

TEST(BenchPoolLayer, DegenerateOneByOne) {
    auto r = bench_pool_layer(kSpecs, 1, 1, fast());
    EXPECT_EQ(r.cases.size(), 3u);
}

TEST(BenchPoolLayer, RefusesNonEquivalentPair) {
    std::vector<Tensor<double>> outs{Tensor<double>::from({2}, {1, 2}), Tensor<double>::from({2}, {1, 2.0000001})};
    EXPECT_THROW(detail::require_equivalent_outputs(std::vector{PoolSpec::multi_kernel({2, 4}, 2), PoolSpec::stacked({2, 2}, 2)}, outs),
                 BenchError);
    EXPECT_NO_THROW(detail::require_equivalent_outputs(std::vector{PoolSpec::multi_kernel({2, 4}, 2), PoolSpec::stacked({2, 3}, 2)}, outs));
}

TEST(BenchNetwork, ReportShape) {
    auto r = bench_network(Architecture::base_s, kSpecs, 16, 16, fast());
    ASSERT_EQ(r.cases.size(), 6u);
    for (const char* v : {"vanilla", "stacked", "multi"}) {
        ASSERT_TRUE(r.find(v, Scenario::net_forward));
        ASSERT_TRUE(r.find(v, Scenario::net_backward));
        EXPECT_EQ(r.find(v, Scenario::net_forward)->network, "base_s");
    }
}

TEST(OrderingChecks, PassAndFail) {
    auto ok = ordering_checks(fake_report(1, 2, 3, 10, 11, 13, 20, 22, 25));
    ASSERT_EQ(ok.size(), 5u);
    for (auto& c : ok) {
        EXPECT_TRUE(c.evaluated);
        EXPECT_TRUE(c.passed) << c.name;
    }
    auto bad = ordering_checks(fake_report(1, 4, 3, 10, 14, 13, 20, 12, 25));
    EXPECT_FALSE(bad[0].passed);
    EXPECT_FALSE(bad[1].passed);
    EXPECT_TRUE(bad[2].passed);
    EXPECT_FALSE(bad[3].passed);
    BenchReport empty;
    for (auto& c : ordering_checks(empty)) EXPECT_FALSE(c.evaluated);
}

TEST(BenchReport, JsonRoundTripAndRegressions) {
    auto base = fake_report(1, 2, 3, 10, 11, 13, 20, 22, 25);
    auto back = bench_report_from_json(nlohmann::json::parse(to_json(base).dump()));
    ASSERT_EQ(back.cases.size(), base.cases.size());
    for (std::size_t i = 0; i < base.cases.size(); ++i) {
        EXPECT_EQ(back.cases[i].median_ms, base.cases[i].median_ms);
        EXPECT_EQ(back.cases[i].scenario, base.cases[i].scenario);
    }
    EXPECT_TRUE(ordering_regressions(base, back).empty());
    auto worse = fake_report(1, 4, 3, 10, 11, 13, 20, 22, 25);
    auto regs = ordering_regressions(worse, base);
    ASSERT_EQ(regs.size(), 1u);
    EXPECT_NE(regs[0].find("layer-forward"), std::string::npos);
    EXPECT_TRUE(ordering_regressions(base, worse).empty());
}

TEST(BenchReport, CsvHeader) {
    auto csv = bench_csv(fake_report(1, 2, 3, 10, 11, 13, 20, 22, 25));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "spec,variant,scenario,network,extents,repetitions,warmups,inner_iterations,median_ms,iqr_ms");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
}

TEST(Scenario, Names) {
    for (auto s : {Scenario::layer_forward, Scenario::net_forward, Scenario::net_backward})
        EXPECT_EQ(parse_scenario(scenario_name(s)), s);
    EXPECT_THROW(parse_scenario("sideways"), BenchError);
}
