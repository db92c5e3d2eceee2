#pragma once

#include <cstdint>
#include <vector>

#include "tape.hpp"

namespace grq {

namespace detail {

inline void check_delta(double delta) {
    if (!(delta > 0.0)) throw validation_error("adaptive loss: delta must be positive");
}

}  // namespace detail

/// Per-element adaptive regression loss, on tape:
///   mean_j [ exp(-log_sigma_j) * delta^2 * log(1 + (r_j/delta)^2) + log_sigma_j ]
/// pred [b, d_act] (node), target [b, d_act] (plain values), log_sigma [d_act]
/// (node). Returns a [b] node of per-element losses.
inline VarId adaptive_term(Tape& tp, VarId pred, const Tensor& target, VarId log_sigma,
                           double delta) {
    detail::check_delta(delta);
    const Tensor& P = tp.value(pred);
    require_rank(P, 2, "adaptive loss predictions");
    if (!P.same_shape(target))
        throw dimension_error("adaptive loss: target shape " + shape_str(target.shape()) +
                              " vs predictions " + shape_str(P.shape()));
    const Tensor& S = tp.value(log_sigma);
    require_shape(S, {P.dim(1)}, "adaptive loss log_sigma");

    VarId r = tp.sub(pred, tp.constant(target));
    VarId u = tp.scale(r, 1.0 / delta);
    VarId lg = tp.log1p_(tp.mul(u, u));
    VarId w = tp.scale(tp.exp_(tp.scale(log_sigma, -1.0)), delta * delta);
    VarId term = tp.add_bias(tp.mul_bias(lg, w), log_sigma);
    return tp.row_mean(term);
}

/// Value-only adaptive loss for a single prediction/target pair [d_act].
inline double adaptive_term_value(const Tensor& pred, const Tensor& target,
                                  const Tensor& log_sigma, double delta) {
    detail::check_delta(delta);
    require_rank(pred, 1, "adaptive loss prediction");
    if (!pred.same_shape(target) || !pred.same_shape(log_sigma))
        throw dimension_error("adaptive loss: width mismatch");
    const std::int64_t d = pred.dim(0);
    double acc = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
        const double r = (pred(j) - target(j)) / delta;
        acc += std::exp(-log_sigma(j)) * delta * delta * std::log1p(r * r) + log_sigma(j);
    }
    return acc / double(d);
}

/// Mask-weighted pooled sequence loss:
///   L = sum_{e,t} m[e,t] * term(e,t) / sum_{e,t} m[e,t]
/// step_preds[t] is the [b, d_act] prediction node for step t; targets is
/// [b, T, d_act]; mask is [b, T] of exact zeros and ones. Steps whose mask
/// column is all zero contribute no tape nodes at all.
inline VarId masked_sequence_loss(Tape& tp, const std::vector<VarId>& step_preds,
                                  const Tensor& targets, const Tensor& mask, VarId log_sigma,
                                  double delta) {
    require_rank(targets, 3, "sequence loss targets");
    require_rank(mask, 2, "sequence loss mask");
    const std::int64_t b = targets.dim(0), T = targets.dim(1), da = targets.dim(2);
    if (std::int64_t(step_preds.size()) != T)
        throw dimension_error("sequence loss: " + std::to_string(step_preds.size()) +
                              " prediction steps for T=" + std::to_string(T));
    if (mask.dim(0) != b || mask.dim(1) != T)
        throw dimension_error("sequence loss: mask shape " + shape_str(mask.shape()));
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        const double m = mask.data()[i];
        if (m != 0.0 && m != 1.0) throw validation_error("sequence loss: mask entries must be 0 or 1");
    }

    VarId acc = tp.constant(Tensor::scalar(0.0));
    double valid = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
        Tensor col({b});
        double csum = 0.0;
        for (std::int64_t e = 0; e < b; ++e) {
            col(e) = mask(e, t);
            csum += mask(e, t);
        }
        if (csum == 0.0) continue;
        Tensor tgt({b, da});
        for (std::int64_t e = 0; e < b; ++e)
            for (std::int64_t j = 0; j < da; ++j) tgt(e, j) = targets(e, t, j);
        VarId per = adaptive_term(tp, step_preds[std::size_t(t)], tgt, log_sigma, delta);
        acc = tp.add(acc, tp.weighted_sum(per, std::move(col)));
        valid += csum;
    }
    if (valid == 0.0) throw contract_error("sequence loss: mask selects no elements");
    return tp.scale(acc, 1.0 / valid);
}

}  // namespace grq
