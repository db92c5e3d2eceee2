#include <gtest/gtest.h>

#include <cmath>

#include "grq/loss.hpp"
#include "oracles.hpp"

using grq::Rng;
using grq::Tape;
using grq::Tensor;
using grq::VarId;

namespace {

double closed_form(double pred, double target, double log_sigma, double delta) {
    const double r = (pred - target) / delta;
    return std::exp(-log_sigma) * delta * delta * std::log1p(r * r) + log_sigma;
}

}  // namespace

TEST(AdaptiveLoss, HandValuesAtUnitResidual) {
    // residual == delta, log_sigma == 0: per-dim loss is delta^2 * ln 2
    const double delta = 0.5;
    Tensor pred({1}, {0.5}), target({1}, {0.0}), ls({1}, {0.0});
    const double v = grq::adaptive_term_value(pred, target, ls, delta);
    EXPECT_NEAR(v, 0.25 * std::log(2.0), 1e-12);
    EXPECT_NEAR(v, 0.17328679513998632, 1e-12);
}

TEST(AdaptiveLoss, HandGradientWrtLogSigma) {
    // d/dls [exp(-ls) d^2 log(1+r^2) + ls] at ls=0, r=1: 1 - d^2 ln 2
    const double delta = 0.5;
    Tape tp;
    Tensor pred({1, 1}, {0.5}), target({1, 1}, {0.0});
    VarId ls = tp.leaf(Tensor({1}, {0.0}));
    VarId per = grq::adaptive_term(tp, tp.constant(pred), target, ls, delta);
    tp.backward(tp.sum(per));
    EXPECT_NEAR(tp.grad_of(ls)(0), 1.0 - 0.25 * std::log(2.0), 1e-12);
    EXPECT_NEAR(tp.grad_of(ls)(0), 0.82671320486001368, 1e-12);
}

TEST(AdaptiveLoss, MatchesClosedFormEverywhere) {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const double pred = rng.uniform(-3.0, 3.0);
        const double target = rng.uniform(-3.0, 3.0);
        const double ls = rng.uniform(-2.0, 2.0);
        const double delta = rng.uniform(0.1, 2.0);
        Tensor p({1}, {pred}), t({1}, {target}), s({1}, {ls});
        EXPECT_NEAR(grq::adaptive_term_value(p, t, s, delta), closed_form(pred, target, ls, delta),
                    1e-10);
    }
}

TEST(AdaptiveLoss, TapeAgreesWithValuePath) {
    Rng rng(18);
    const std::int64_t b = 4, d = 3;
    Tensor pred = oracle::rand_tensor({b, d}, rng);
    Tensor target = oracle::rand_tensor({b, d}, rng);
    Tensor ls = oracle::rand_tensor({d}, rng, -1.0, 1.0);
    Tape tp;
    VarId per = grq::adaptive_term(tp, tp.constant(pred), target, tp.constant(ls), 0.5);
    const Tensor& v = tp.value(per);
    ASSERT_EQ(v.dim(0), b);
    for (std::int64_t e = 0; e < b; ++e) {
        Tensor pe({d}), te({d});
        for (std::int64_t j = 0; j < d; ++j) {
            pe(j) = pred(e, j);
            te(j) = target(e, j);
        }
        EXPECT_NEAR(v(e), grq::adaptive_term_value(pe, te, ls, 0.5), 1e-12);
    }
}

TEST(AdaptiveLoss, MeanOverDims) {
    // two dims with different log_sigma: the term is the mean, not the sum
    Tensor pred({2}, {1.0, 2.0}), target({2}, {0.0, 0.0}), ls({2}, {0.3, -0.7});
    const double want =
        0.5 * (closed_form(1.0, 0.0, 0.3, 0.5) + closed_form(2.0, 0.0, -0.7, 0.5));
    EXPECT_NEAR(grq::adaptive_term_value(pred, target, ls, 0.5), want, 1e-12);
}

TEST(AdaptiveLoss, GradientsMatchFiniteDifferences) {
    Rng rng(19);
    const std::int64_t b = 3, d = 2;
    Tensor pred0 = oracle::rand_tensor({b, d}, rng);
    Tensor target = oracle::rand_tensor({b, d}, rng);
    Tensor ls0 = oracle::rand_tensor({d}, rng, -1.0, 1.0);

    auto eval = [&](const Tensor& pred, const Tensor& ls, Tensor* gp, Tensor* gs) {
        Tape tp;
        VarId pv = tp.leaf(pred), sv = tp.leaf(ls);
        VarId L = tp.sum(grq::adaptive_term(tp, pv, target, sv, 0.5));
        const double out = tp.value(L)(0);
        if (gp) {
            tp.backward(L);
            *gp = tp.grad_of(pv);
            *gs = tp.grad_of(sv);
        }
        return out;
    };
    Tensor gp, gs;
    eval(pred0, ls0, &gp, &gs);
    const double eps = 1e-6;
    for (std::size_t k = 0; k < pred0.numel(); ++k) {
        Tensor up = pred0, dn = pred0;
        up.data()[k] += eps;
        dn.data()[k] -= eps;
        const double fd = (eval(up, ls0, nullptr, nullptr) - eval(dn, ls0, nullptr, nullptr)) / (2 * eps);
        EXPECT_LT(oracle::rel_err(gp.data()[k], fd, 1e-4), 1e-6);
    }
    for (std::size_t k = 0; k < ls0.numel(); ++k) {
        Tensor up = ls0, dn = ls0;
        up.data()[k] += eps;
        dn.data()[k] -= eps;
        const double fd = (eval(pred0, up, nullptr, nullptr) - eval(pred0, dn, nullptr, nullptr)) / (2 * eps);
        EXPECT_LT(oracle::rel_err(gs.data()[k], fd, 1e-4), 1e-6);
    }
}

TEST(AdaptiveLoss, RejectsBadDelta) {
    Tensor p({1}, {0.0});
    EXPECT_THROW(grq::adaptive_term_value(p, p, p, 0.0), grq::validation_error);
    EXPECT_THROW(grq::adaptive_term_value(p, p, p, -1.0), grq::validation_error);
}

// --- masked pooling -------------------------------------------------------------------

namespace {

struct MaskedCase {
    Tensor targets;  // [b, T, d]
    Tensor mask;     // [b, T]
    std::vector<Tensor> preds;
};

MaskedCase masked_case(std::int64_t b, std::int64_t T, std::int64_t d,
                       const std::vector<std::int64_t>& lens, std::uint64_t seed) {
    MaskedCase c;
    Rng rng(seed);
    c.targets = oracle::rand_tensor({b, T, d}, rng);
    c.mask = Tensor({b, T});
    for (std::int64_t e = 0; e < b; ++e)
        for (std::int64_t t = 0; t < lens[std::size_t(e)]; ++t) c.mask(e, t) = 1.0;
    for (std::int64_t t = 0; t < T; ++t) c.preds.push_back(oracle::rand_tensor({b, d}, rng));
    return c;
}

}  // namespace

TEST(MaskedLoss, PoolsOverValidStepsOnly) {
    // rows valid for 5 and 3 steps: denominator is 8, padded terms never appear
    const std::int64_t b = 2, T = 5, d = 3;
    MaskedCase c = masked_case(b, T, d, {5, 3}, 71);

    Tape tp;
    std::vector<VarId> pred_ids;
    for (const Tensor& p : c.preds) pred_ids.push_back(tp.constant(p));
    VarId ls = tp.constant(Tensor({d}));
    VarId L = grq::masked_sequence_loss(tp, pred_ids, c.targets, c.mask, ls, 0.5);

    double want = 0.0;
    for (std::int64_t e = 0; e < b; ++e)
        for (std::int64_t t = 0; t < T; ++t) {
            if (c.mask(e, t) == 0.0) continue;
            Tensor pe({d}), te({d});
            for (std::int64_t j = 0; j < d; ++j) {
                pe(j) = c.preds[std::size_t(t)](e, j);
                te(j) = c.targets(e, t, j);
            }
            want += grq::adaptive_term_value(pe, te, Tensor({d}), 0.5);
        }
    want /= 8.0;
    EXPECT_NEAR(tp.value(L)(0), want, 1e-12);
}

TEST(MaskedLoss, PaddedValuesAreInert) {
    // garbage in padded slots must not move the loss at all
    const std::int64_t b = 2, T = 4, d = 2;
    MaskedCase c = masked_case(b, T, d, {4, 2}, 72);
    auto value_of = [&](const MaskedCase& mc) {
        Tape tp;
        std::vector<VarId> ids;
        for (const Tensor& p : mc.preds) ids.push_back(tp.constant(p));
        return tp.value(
            grq::masked_sequence_loss(tp, ids, mc.targets, mc.mask, tp.constant(Tensor({d})), 0.5))(0);
    };
    const double base = value_of(c);
    MaskedCase poisoned = c;
    for (std::int64_t t = 2; t < T; ++t) {
        poisoned.targets(1, t, 0) = 1e9;
        poisoned.preds[std::size_t(t)](1, 0) = -1e9;
    }
    EXPECT_EQ(value_of(poisoned), base);
}

TEST(MaskedLoss, AllZeroColumnsCreateNoNodes) {
    const std::int64_t b = 2, T = 3, d = 2;
    MaskedCase c = masked_case(b, T, d, {1, 1}, 73);  // steps 1, 2 fully masked
    Tape tp;
    std::vector<VarId> ids;
    for (const Tensor& p : c.preds) ids.push_back(tp.constant(p));
    VarId ls = tp.constant(Tensor({d}));
    const std::size_t before = tp.size();
    grq::masked_sequence_loss(tp, ids, c.targets, c.mask, ls, 0.5);
    const std::size_t with_one = tp.size() - before;

    Tape tp2;
    std::vector<VarId> ids2;
    for (const Tensor& p : c.preds) ids2.push_back(tp2.constant(p));
    VarId ls2 = tp2.constant(Tensor({d}));
    MaskedCase c2 = c;
    c2.mask(0, 1) = 1.0;  // one more live column
    const std::size_t before2 = tp2.size();
    grq::masked_sequence_loss(tp2, ids2, c2.targets, c2.mask, ls2, 0.5);
    EXPECT_GT(tp2.size() - before2, with_one);
}

TEST(MaskedLoss, EmptyMaskThrows) {
    const std::int64_t b = 2, T = 2, d = 2;
    MaskedCase c = masked_case(b, T, d, {0, 0}, 74);
    Tape tp;
    std::vector<VarId> ids;
    for (const Tensor& p : c.preds) ids.push_back(tp.constant(p));
    EXPECT_THROW(
        grq::masked_sequence_loss(tp, ids, c.targets, c.mask, tp.constant(Tensor({d})), 0.5),
        grq::contract_error);
}

TEST(MaskedLoss, NonBinaryMaskRejected) {
    const std::int64_t b = 1, T = 1, d = 1;
    MaskedCase c = masked_case(b, T, d, {1}, 75);
    c.mask(0, 0) = 0.5;
    Tape tp;
    std::vector<VarId> ids{tp.constant(c.preds[0])};
    EXPECT_THROW(
        grq::masked_sequence_loss(tp, ids, c.targets, c.mask, tp.constant(Tensor({d})), 0.5),
        grq::validation_error);
}
