#include <gtest/gtest.h>

#include <stackpool/pooling.hpp>

#include "test_util.hpp"

using namespace stackpool;
using testutil::random_tensor;
using testutil::values;

namespace {

void expect_equal_to_map(const Tensor<double>& y, const oracle::Map& ref) {
    ASSERT_EQ(y.size(), ref.v.size());
    ASSERT_EQ(y.dim(2), ref.h);
    ASSERT_EQ(y.dim(3), ref.w);
    for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_EQ(y[i], ref.v[i]) << "index " << i;
}

// Integer-valued random maps with all values distinct, so window maxima are unique.
Tensor<double> tie_free(const Shape& shape, std::uint64_t seed) {
    auto rng = make_rng(seed, "tie-free");
    auto perm_size = numel(shape);
    std::vector<double> v(perm_size);
    for (std::size_t i = 0; i < perm_size; ++i) v[i] = static_cast<double>(i);
    for (std::size_t i = perm_size; i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)))]);
    return Tensor<double>::from(shape, std::move(v));
}

}  // namespace

TEST(PoolVanilla, MaxOfWindow) {
    auto y = pool_vanilla(Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y[0], 4.0);
}

TEST(PoolVanilla, ConstantMap) {
    for (auto [k, s] : {std::pair<std::size_t, std::size_t>{2, 2}, {3, 2}, {5, 3}, {1, 1}}) {
        auto y = pool_vanilla(Tensor<double>::full({1, 2, 7, 9}, -1.25), k, s);
        EXPECT_EQ(y.dim(2), (7 + s - 1) / s);
        EXPECT_EQ(y.dim(3), (9 + s - 1) / s);
        for (double v : y.data()) EXPECT_EQ(v, -1.25);
    }
}

TEST(PoolVanilla, MatchesWindowScanOracle) {
    auto x = random_tensor({1, 1, 6, 6}, 1);
    expect_equal_to_map(pool_vanilla(x, 3, 2), oracle::pool_strided(testutil::to_map(x), 3, 2));
    auto x2 = random_tensor({1, 3, 11, 7}, 2);
    expect_equal_to_map(pool_vanilla(x2, 4, 3), oracle::pool_strided(testutil::to_map(x2), 4, 3));
}

TEST(PoolVanilla, RejectsZeroKernelOrStride) {
    auto x = Tensor<double>::zeros({1, 1, 4, 4});
    EXPECT_THROW(pool_vanilla(x, 0, 2), PoolSpecError);
    EXPECT_THROW(pool_vanilla(x, 2, 0), PoolSpecError);
}

TEST(PoolVanilla, TiesRouteToFirstInScanOrder) {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {5, 5, 5, 5});
    x.set_requires_grad(true);
    backward(sum(pool_vanilla(x, 2, 2)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(PoolMulti, SingleKernelIsVanilla) {
    auto x = random_tensor({1, 2, 8, 8}, 3);
    EXPECT_EQ(values(pool_multi_kernel(x, PoolSpec::multi_kernel({2}, 2))), values(pool_vanilla(x, 2, 2)));
}

TEST(PoolMulti, ConstantMap) {
    auto y = pool_multi_kernel(Tensor<double>::full({1, 1, 16, 16}, 3.5), PoolSpec::multi_kernel({2, 4, 8}, 2));
    for (double v : y.data()) EXPECT_EQ(v, 3.5);
}

TEST(PoolMulti, MatchesOraclePoolsThenAverage) {
    auto x = random_tensor({1, 1, 16, 16}, 4);
    expect_equal_to_map(pool_multi_kernel(x, PoolSpec::multi_kernel({2, 4, 8}, 2)),
                        oracle::multi_pool(testutil::to_map(x), {2, 4, 8}, 2));
}

TEST(PoolMulti, LargerBranchesDominate) {
    auto x = random_tensor({1, 2, 20, 14}, 5);
    auto spec = PoolSpec::multi_kernel({2, 4, 8}, 2);
    auto branches = multi_kernel_branches(x, spec);
    for (std::size_t b = 1; b < branches.size(); ++b)
        for (std::size_t i = 0; i < branches[0].size(); ++i) EXPECT_GE(branches[b][i], branches[0][i]);
}

TEST(PoolStacked, SingleStageIsVanilla) {
    auto x = random_tensor({1, 2, 8, 8}, 6);
    EXPECT_EQ(values(pool_stacked(x, PoolSpec::stacked({2}, 2))), values(pool_vanilla(x, 2, 2)));
}

TEST(PoolStacked, ConstantMap) {
    auto y = pool_stacked(Tensor<double>::full({1, 1, 16, 16}, -2.0), PoolSpec::stacked({2, 2, 3}, 2));
    for (double v : y.data()) EXPECT_EQ(v, -2.0);
}

TEST(PoolStacked, MatchesChainOracle) {
    auto x = random_tensor({1, 3, 13, 10}, 7);
    expect_equal_to_map(pool_stacked(x, PoolSpec::stacked({2, 2, 3}, 2)),
                        oracle::stacked_pool(testutil::to_map(x), {2, 2, 3}, 2));
}

TEST(PoolStacked, EqualsMultiKernelExactly) {
    auto x = random_tensor({1, 1, 16, 16}, 8);
    EXPECT_EQ(values(pool_stacked(x, PoolSpec::stacked({2, 2, 3}, 2))),
              values(pool_multi_kernel(x, PoolSpec::multi_kernel({2, 4, 8}, 2))));
}

TEST(StackedKernels, Transformation) {
    EXPECT_EQ(stacked_kernels_for({2, 4, 8}, 2), (std::vector<std::size_t>{2, 2, 3}));
    EXPECT_EQ(stacked_kernels_for({2}, 2), (std::vector<std::size_t>{2}));
    EXPECT_EQ(stacked_kernels_for({2, 4, 8, 16}, 2), (std::vector<std::size_t>{2, 2, 3, 5}));
    EXPECT_EQ(stacked_kernels_for({3, 6, 9}, 3), (std::vector<std::size_t>{3, 2, 2}));
}

TEST(StackedKernels, ReceptiveFieldOfEachStage) {
    const std::vector<std::size_t> ks{2, 4, 8, 16};
    const std::size_t s = 2;
    auto st = stacked_kernels_for(ks, s);
    std::size_t field = st[0];
    EXPECT_EQ(field, ks[0]);
    for (std::size_t i = 1; i < st.size(); ++i) {
        field += (st[i] - 1) * s;
        EXPECT_EQ(field, ks[i]);
    }
    EXPECT_EQ(multi_kernels_for(st, s), ks);
}

TEST(StackedKernels, DivisibilityErrorNamesThePair) {
    try {
        stacked_kernels_for({2, 5}, 2);
        FAIL() << "expected PoolSpecError";
    } catch (const PoolSpecError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find('2'), std::string::npos);
        EXPECT_NE(msg.find('5'), std::string::npos);
        EXPECT_NE(msg.find("divisible"), std::string::npos) << msg;
    }
}

TEST(PoolSpec, Validation) {
    EXPECT_THROW(PoolSpec::vanilla(0, 2), PoolSpecError);
    EXPECT_THROW(PoolSpec::multi_kernel({4, 2}, 2), PoolSpecError);
    EXPECT_THROW(PoolSpec::multi_kernel({1, 4}, 2), PoolSpecError);
    EXPECT_THROW(PoolSpec::stacked({2, 0}, 2), PoolSpecError);
    PoolSpec bad = PoolSpec::vanilla(2, 2);
    bad.kernels = {2, 3};
    EXPECT_THROW(bad.validate(), PoolSpecError);
}

TEST(PoolSpec, TextRoundTrip) {
    for (const char* text : {"stacked:2,2,3:s2", "multi:2,4,8:s2", "vanilla:2:s2", "vanilla:3:s1"})
        EXPECT_EQ(format_pool_spec(parse_pool_spec(text)), text);
    EXPECT_EQ(parse_pool_spec("multi:2,4:s2"), PoolSpec::multi_kernel({2, 4}, 2));
    for (const char* bad : {"", "max:2:s2", "vanilla:2", "vanilla:2:2", "multi:2,,4:s2", "vanilla:x:s2", "multi:4,2:s2"})
        EXPECT_THROW(parse_pool_spec(bad), PoolSpecError) << bad;
}

TEST(VerifyEquivalence, RandomInputsAllKernelSets) {
    const std::vector<std::vector<std::size_t>> sets{{2, 4}, {2, 4, 8}, {2, 4, 8, 16}};
    for (std::uint64_t t = 0; t < 20; ++t) {
        const std::size_t h = 1 + t * 3, w = 64 - t * 2;
        auto x = random_tensor({1, 2, h, w}, 100 + t);
        for (auto& ks : sets) {
            auto r = verify_equivalence(x, PoolSpec::multi_kernel(ks, 2));
            EXPECT_EQ(r.forward_max_abs_diff, 0.0);
        }
    }
}

TEST(VerifyEquivalence, ConstantInput) {
    auto r = verify_equivalence(Tensor<double>::full({1, 1, 12, 12}, 0.5), PoolSpec::multi_kernel({2, 4, 8}, 2));
    EXPECT_EQ(r.forward_max_abs_diff, 0.0);
    EXPECT_EQ(r.stacked_kernels, (std::vector<std::size_t>{2, 2, 3}));
}

TEST(VerifyEquivalence, GradientsAgreeWithoutTies) {
    for (std::uint64_t t = 0; t < 10; ++t) {
        auto x = tie_free({1, 2, 16 + t, 24 - t}, t);
        auto r = verify_equivalence(x, PoolSpec::multi_kernel({2, 4, 8}, 2));
        EXPECT_EQ(r.forward_max_abs_diff, 0.0);
        EXPECT_EQ(r.gradient_max_abs_diff, 0.0);
    }
}

TEST(VerifyEquivalence, RejectsNonMultiSpec) {
    EXPECT_THROW(verify_equivalence(Tensor<double>::zeros({1, 1, 4, 4}), PoolSpec::stacked({2, 2}, 2)), PoolSpecError);
}

TEST(PoolGradient, EachUpstreamValueLandsInOneCellPerBranch) {
    auto x = tie_free({1, 1, 12, 12}, 42);
    for (auto spec : {PoolSpec::vanilla(3, 2), PoolSpec::multi_kernel({2, 4, 8}, 2), PoolSpec::stacked({2, 2, 3}, 2)}) {
        auto xi = x.clone();
        xi.set_requires_grad(true);
        auto y = pool(xi, spec);
        backward(sum(y));
        double mass = 0;
        for (double g : xi.grad()) mass += g;
        EXPECT_DOUBLE_EQ(mass, static_cast<double>(y.size())) << format_pool_spec(spec);
    }
}

TEST(PoolGradient, MatchesFiniteDifferences) {
    auto x = tie_free({1, 2, 9, 11}, 43);
    for (auto spec : {PoolSpec::vanilla(3, 2), PoolSpec::multi_kernel({2, 4}, 2), PoolSpec::stacked({2, 2, 3}, 2)}) {
        auto w = random_tensor(pool(x, spec).shape(), 44);
        auto xi = x.clone();
        xi.set_requires_grad(true);
        auto y = pool(xi, spec);
        double dot = 0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += w[i] * y[i];
        auto loss = Tensor<double>::make_result({}, {dot}, "dot", {y}, [w](detail::Node<double>& self) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
        });
        backward(loss);
        std::vector<double> v = values(x);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double num = oracle::central_difference(v, i, 1e-5, [&] {
                auto yy = pool(Tensor<double>::from(x.shape(), v), spec);
                double s = 0;
                for (std::size_t j = 0; j < yy.size(); ++j) s += w[j] * yy[j];
                return s;
            });
            EXPECT_LT(oracle::rel_error(xi.grad()[i], num), 1e-6);
        }
    }
}

TEST(PoolTranslation, ShiftByStrideShiftsOutputByOne) {
    const std::size_t h = 20, w = 20, s = 2;
    auto x = random_tensor({1, 1, h, w}, 45);
    std::vector<double> shifted(h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = s; xx < w; ++xx) shifted[y * w + xx] = x[y * w + xx - s];
    for (auto spec : {PoolSpec::vanilla(2, 2), PoolSpec::multi_kernel({2, 4}, 2), PoolSpec::stacked({2, 2, 3}, 2)}) {
        auto a = pool(x, spec);
        auto b = pool(Tensor<double>::from({1, 1, h, w}, shifted), spec);
        const std::size_t ow = a.dim(3);
        // Columns whose windows stay inside the image in both.
        for (std::size_t y = 0; y < a.dim(2); ++y)
            for (std::size_t xx = 1; xx + 4 < ow; ++xx) EXPECT_EQ(b[y * ow + xx], a[y * ow + xx - 1]);
    }
}
