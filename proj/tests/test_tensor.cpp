#include <gtest/gtest.h>

#include "grq/errors.hpp"
#include "grq/rng.hpp"
#include "grq/tensor.hpp"

using grq::Shape;
using grq::Tensor;

TEST(Tensor, ShapeAndIndexingRoundTrip) {
    Tensor t({2, 3, 4});
    EXPECT_EQ(t.rank(), 3);
    EXPECT_EQ(t.numel(), 24u);
    EXPECT_EQ(t.dim(0), 2);
    EXPECT_EQ(t.dim(2), 4);
    double v = 0.0;
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            for (std::int64_t k = 0; k < 4; ++k) t(i, j, k) = v += 1.0;
    // row-major layout
    EXPECT_DOUBLE_EQ(t.data()[0], 1.0);
    EXPECT_DOUBLE_EQ(t.data()[4], 5.0);
    EXPECT_DOUBLE_EQ(t.data()[23], 24.0);
    EXPECT_DOUBLE_EQ(t(1, 2, 3), 24.0);
}

TEST(Tensor, FreshTensorsAreZero) {
    Tensor t({3, 3});
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(t.data()[i], 0.0);
}

TEST(Tensor, ScalarHelper) {
    Tensor s = Tensor::scalar(2.5);
    EXPECT_EQ(s.numel(), 1u);
    EXPECT_DOUBLE_EQ(s(0), 2.5);
}

TEST(Tensor, FillZeroMaxAbs) {
    Tensor t({2, 2});
    t.fill(-3.0);
    EXPECT_DOUBLE_EQ(t.max_abs(), 3.0);
    t(0, 1) = 7.0;
    EXPECT_DOUBLE_EQ(t.max_abs(), 7.0);
    t.zero();
    EXPECT_DOUBLE_EQ(t.max_abs(), 0.0);
}

TEST(Tensor, AllFinite) {
    Tensor t({2});
    EXPECT_TRUE(t.all_finite());
    t(0) = std::numeric_limits<double>::infinity();
    EXPECT_FALSE(t.all_finite());
    t(0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, SameShape) {
    Tensor a({2, 3}), b({2, 3}), c({3, 2});
    EXPECT_TRUE(a.same_shape(b));
    EXPECT_FALSE(a.same_shape(c));
}

TEST(Tensor, RowPointer) {
    Tensor t({3, 4});
    t(2, 0) = 9.0;
    t(2, 3) = 11.0;
    const double* r = t.row(2);
    EXPECT_DOUBLE_EQ(r[0], 9.0);
    EXPECT_DOUBLE_EQ(r[3], 11.0);
    EXPECT_EQ(t.row_stride(), 4);
}

TEST(Tensor, RequireShapeThrows) {
    Tensor t({2, 3});
    EXPECT_NO_THROW(grq::require_shape(t, Shape({2, 3}), "x"));
    EXPECT_THROW(grq::require_shape(t, Shape({3, 2}), "x"), grq::dimension_error);
    EXPECT_NO_THROW(grq::require_rank(t, 2, "x"));
    EXPECT_THROW(grq::require_rank(t, 1, "x"), grq::dimension_error);
}

TEST(Tensor, ConstructFromData) {
    Tensor t({2, 2}, {1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(t(1, 0), 3.0);
    EXPECT_THROW((Tensor({2, 2}, {1.0})), grq::dimension_error);
}

TEST(Rng, DeterministicStreams) {
    grq::Rng a(123), b(123), c(124);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.next_u64(), b.next_u64());
    }
    bool differs = false;
    grq::Rng a2(123);
    for (int i = 0; i < 10; ++i) differs |= a2.next_u64() != c.next_u64();
    EXPECT_TRUE(differs);
}

TEST(Rng, UniformRangeAndIndex) {
    grq::Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        const double v = r.uniform(-2.0, 3.0);
        EXPECT_GE(v, -2.0);
        EXPECT_LT(v, 3.0);
        const std::size_t k = r.index(17);
        EXPECT_LT(k, 17u);
    }
}

TEST(Rng, GaussianMoments) {
    grq::Rng r(99);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double g = r.gaussian();
        sum += g;
        sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, ForkIsIndependent) {
    grq::Rng r(5);
    grq::Rng f1 = r.fork(1), f2 = r.fork(2);
    EXPECT_NE(f1.next_u64(), f2.next_u64());
}
