#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "loss.hpp"
#include "policy.hpp"

namespace grq {

struct TrainConfig {
    std::int64_t epochs = 2000;
    std::int64_t batch_size = 400;
    std::int64_t update_period = 20;  // steps between truncation boundaries
    std::int64_t warmup_epochs = 50;  // state reset after every update while epoch <= this
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double grad_clip = 0.0;  // global L2 clip; 0 disables
    double loss_delta = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0 || batch_size < 1 || update_period < 1 || warmup_epochs < 0)
            throw validation_error("train: bad schedule values");
        if (!(lr > 0.0) || !(beta1 >= 0.0) || beta1 >= 1.0 || !(beta2 >= 0.0) || beta2 >= 1.0 ||
            !(adam_eps > 0.0))
            throw validation_error("train: bad optimizer values");
        if (grad_clip < 0.0) throw validation_error("train: grad_clip must be >= 0");
        if (!(loss_delta > 0.0)) throw validation_error("train: loss_delta must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"update_period", c.update_period},
                       {"warmup_epochs", c.warmup_epochs},
                       {"lr", c.lr},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"grad_clip", c.grad_clip},
                       {"loss_delta", c.loss_delta},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.update_period = j.value("update_period", c.update_period);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.loss_delta = j.value("loss_delta", c.loss_delta);
    c.seed = j.value("seed", c.seed);
}

// --- optimizer -----------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;  // canonical parameter order
    std::uint64_t step = 0;

    static AdamState fresh(const ModelParams& p) {
        AdamState s;
        p.for_each([&s](const std::string&, const Tensor& t) {
            s.m.emplace_back(t.shape());
            s.v.emplace_back(t.shape());
        });
        return s;
    }
};

/// One Adam step over all parameters; `grads` follows canonical order.
/// Applies optional global-norm clipping first.
inline void adam_update(ModelParams& params, const std::vector<Tensor>& grads, AdamState& opt,
                        const TrainConfig& cfg) {
    std::vector<Tensor*> ps;
    params.for_each([&ps](const std::string&, Tensor& t) { ps.push_back(&t); });
    if (grads.size() != ps.size() || opt.m.size() != ps.size())
        throw contract_error("adam_update: gradient/moment list does not match parameters");

    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Tensor& g : grads)
            for (std::size_t i = 0; i < g.numel(); ++i) sq += g.data()[i] * g.data()[i];
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
    }

    opt.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(opt.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(opt.step));
    for (std::size_t k = 0; k < ps.size(); ++k) {
        Tensor& p = *ps[k];
        const Tensor& g = grads[k];
        if (!p.same_shape(g)) throw dimension_error("adam_update: gradient shape mismatch");
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g.data()[i] * clip_scale;
            double& m = opt.m[k].data()[i];
            double& v = opt.v[k].data()[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * gi;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * gi * gi;
            p.data()[i] -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
        }
    }
}

// --- trainer ---------------------------------------------------------------------

struct EpochMetrics {
    std::int64_t epoch = 0;  // 1-based
    double loss = std::numeric_limits<double>::quiet_NaN();  // pooled over the epoch
    std::vector<double> window_losses;
    std::int64_t updates = 0;
    std::int64_t seq_length = 0;
    double valid_fraction = 0.0;
};

// Truncated-BPTT trainer. Each epoch draws one padded batch, steps through it
// in update_period-sized windows, updates after every window, and carries the
// recurrent state across window and epoch boundaries as plain values -- the
// carry re-entry is the gradient truncation. During warmup epochs the carry
// is reset to fresh after every update instead.
class Trainer {
  public:
    Trainer(const ArchConfig& arch, const TrainConfig& cfg) : arch_(arch), cfg_(cfg) {
        arch_.validate();
        cfg_.validate();
        Rng seeder(cfg_.seed);
        params_ = ModelParams::init(arch_, seeder.next_u64());
        sample_rng_ = Rng(seeder.next_u64());
        opt_ = AdamState::fresh(params_);
        carry_ = BatchCarry::fresh(arch_, cfg_.batch_size);
    }

    /// Post-update hook (epoch, window index, carry after any warmup reset).
    std::function<void(std::int64_t, std::int64_t, const BatchCarry&)> on_update;

    EpochMetrics run_epoch(const std::vector<Trajectory>& data) {
        return run_epoch_on(pad_and_batch(data, cfg_.batch_size, sample_rng_));
    }

    /// Same, but on an already-assembled batch (the sampling stream is not
    /// consumed). Exposed so batching variations can be tested in isolation.
    EpochMetrics run_epoch_on(const PaddedBatch& batch) {
        const std::int64_t b = batch.batch(), N = batch.length();
        if (b != cfg_.batch_size)
            throw contract_error("trainer: batch rows " + std::to_string(b) + " != configured " +
                                 std::to_string(cfg_.batch_size));
        if (batch.obs.dim(2) != arch_.d_in() || batch.act.dim(2) != arch_.d_act)
            throw dimension_error("trainer: batch widths do not match architecture");
        const std::int64_t epoch = done_ + 1;

        EpochMetrics met;
        met.epoch = epoch;
        met.seq_length = N;
        double acc_epoch = 0.0, valid_epoch = 0.0;
        std::int64_t window_idx = 0;

        for (std::int64_t t0 = 0; t0 < N; t0 += cfg_.update_period, ++window_idx) {
            const std::int64_t t1 = std::min(t0 + cfg_.update_period, N);
            tape_.clear();
            ParamVars pv = enter_params(tape_, params_);
            WindowVars ws = enter_carry(tape_, carry_, pv, arch_);

            VarId acc = tape_.constant(Tensor::scalar(0.0));
            double valid = 0.0;
            for (std::int64_t t = t0; t < t1; ++t) {
                VarId obs = tape_.constant(batch.obs_at(t));
                VarId act = policy_step_vars(tape_, obs, ws, pv, arch_);
                Tensor col({b});
                double csum = 0.0;
                for (std::int64_t e = 0; e < b; ++e) {
                    col(e) = batch.mask(e, t);
                    csum += col(e);
                }
                if (csum == 0.0) continue;
                Tensor tgt({b, arch_.d_act});
                for (std::int64_t e = 0; e < b; ++e)
                    for (std::int64_t j = 0; j < arch_.d_act; ++j) tgt(e, j) = batch.act(e, t, j);
                VarId per = adaptive_term(tape_, act, tgt, pv.log_sigma, cfg_.loss_delta);
                acc = tape_.add(acc, tape_.weighted_sum(per, std::move(col)));
                valid += csum;
            }

            bool updated = false;
            double wloss = std::numeric_limits<double>::quiet_NaN();
            if (valid > 0.0) {
                VarId L = tape_.scale(acc, 1.0 / valid);
                wloss = tape_.value(L)(0);
                if (!std::isfinite(wloss))
                    throw numeric_error("training loss is not finite (epoch " + std::to_string(epoch) +
                                        ", window " + std::to_string(window_idx) + ")");
                tape_.backward(L);
                std::vector<Tensor> grads;
                grads.reserve(pv.ordered.size());
                for (VarId id : pv.ordered) grads.push_back(tape_.grad_of(id));
                adam_update(params_, grads, opt_, cfg_);
                updated = true;
                acc_epoch += tape_.value(acc)(0);
                valid_epoch += valid;
            }

            carry_ = extract_carry(tape_, ws, carry_, arch_);
            if (updated) {
                if (epoch <= cfg_.warmup_epochs) carry_.reset();
                met.updates += 1;
                if (on_update) on_update(epoch, window_idx, carry_);
            }
            met.window_losses.push_back(wloss);
        }

        if (valid_epoch > 0.0) met.loss = acc_epoch / valid_epoch;
        met.valid_fraction = N > 0 ? valid_epoch / double(b * N) : 0.0;
        done_ = epoch;
        return met;
    }

    const ModelParams& params() const { return params_; }
    const ArchConfig& arch() const { return arch_; }
    const TrainConfig& config() const { return cfg_; }
    const BatchCarry& carry() const { return carry_; }
    std::int64_t epochs_done() const { return done_; }
    std::uint64_t updates_done() const { return opt_.step; }

  private:
    ArchConfig arch_;
    TrainConfig cfg_;
    ModelParams params_;
    AdamState opt_;
    BatchCarry carry_;
    Rng sample_rng_{0};
    Tape tape_;
    std::int64_t done_ = 0;
};

// --- truncation-boundary verification ----------------------------------------------

struct DetachReport {
    double forward_gap = 0.0;            // post-boundary loss: chunked vs single connected graph
    double isolated_max_abs_diff = 0.0;  // trainer-path vs re-entered-forward gradients
    double fd_max_rel_err = 0.0;         // analytic vs finite differences with the carry held fixed
    double attached_vs_detached = 0.0;   // gradient gap once truncation is disabled
    bool carry_complete = false;
    bool detached_matches_isolated = false;
    bool detached_matches_fd = false;
    bool attached_differs = false;
    bool passed() const {
        return carry_complete && detached_matches_isolated && detached_matches_fd && attached_differs;
    }
};

namespace detail {

struct TwoWindowOut {
    double loss2 = 0.0;
    std::vector<Tensor> grads;  // d loss2 / d params, canonical order
    BatchCarry carry1;          // state at the boundary
};

/// Forward two consecutive windows of `batch`; backward only the second
/// window's loss. attached=false re-enters the boundary carry as constants
/// (the trainer's behavior); attached=true keeps one connected graph.
inline TwoWindowOut two_window_grads(const ArchConfig& arch, const ModelParams& params,
                                     const PaddedBatch& batch, std::int64_t t_cut, double delta,
                                     bool attached) {
    const std::int64_t b = batch.batch(), N = batch.length();
    if (t_cut < 1 || t_cut >= N)
        throw contract_error("two_window_grads: cut must fall inside the sequence");

    auto window_loss = [&](Tape& tp, WindowVars& ws, const ParamVars& pv, std::int64_t ta,
                           std::int64_t tb) {
        VarId acc = tp.constant(Tensor::scalar(0.0));
        double valid = 0.0;
        for (std::int64_t t = ta; t < tb; ++t) {
            VarId act = policy_step_vars(tp, tp.constant(batch.obs_at(t)), ws, pv, arch);
            Tensor col({b});
            double csum = 0.0;
            for (std::int64_t e = 0; e < b; ++e) {
                col(e) = batch.mask(e, t);
                csum += col(e);
            }
            if (csum == 0.0) continue;
            Tensor tgt({b, arch.d_act});
            for (std::int64_t e = 0; e < b; ++e)
                for (std::int64_t j = 0; j < arch.d_act; ++j) tgt(e, j) = batch.act(e, t, j);
            acc = tp.add(acc, tp.weighted_sum(adaptive_term(tp, act, tgt, pv.log_sigma, delta),
                                              std::move(col)));
            valid += csum;
        }
        if (valid == 0.0) throw contract_error("two_window_grads: window has no valid steps");
        return tp.scale(acc, 1.0 / valid);
    };

    TwoWindowOut out;
    BatchCarry carry0 = BatchCarry::fresh(arch, b);
    if (attached) {
        Tape tp;
        ParamVars pv = enter_params(tp, params);
        WindowVars ws = enter_carry(tp, carry0, pv, arch);
        window_loss(tp, ws, pv, 0, t_cut);  // window 1 forward only
        out.carry1 = extract_carry(tp, ws, carry0, arch);
        VarId L2 = window_loss(tp, ws, pv, t_cut, N);
        out.loss2 = tp.value(L2)(0);
        tp.backward(L2);
        for (VarId id : pv.ordered) out.grads.push_back(tp.grad_of(id));
    } else {
        {
            Tape tp;
            ParamVars pv = enter_params(tp, params, false);
            WindowVars ws = enter_carry(tp, carry0, pv, arch);
            for (std::int64_t t = 0; t < t_cut; ++t)
                policy_step_vars(tp, tp.constant(batch.obs_at(t)), ws, pv, arch);
            out.carry1 = extract_carry(tp, ws, carry0, arch);
        }
        Tape tp;
        ParamVars pv = enter_params(tp, params);
        WindowVars ws = enter_carry(tp, out.carry1, pv, arch);
        VarId L2 = window_loss(tp, ws, pv, t_cut, N);
        out.loss2 = tp.value(L2)(0);
        tp.backward(L2);
        for (VarId id : pv.ordered) out.grads.push_back(tp.grad_of(id));
    }
    return out;
}

/// Second-window loss recomputed from a *fixed* boundary carry.
inline double window2_loss_fixed_carry(const ArchConfig& arch, const ModelParams& params,
                                       const PaddedBatch& batch, const BatchCarry& carry1,
                                       std::int64_t t_cut, double delta) {
    const std::int64_t b = batch.batch(), N = batch.length();
    Tape tp;
    ParamVars pv = enter_params(tp, params, false);
    WindowVars ws = enter_carry(tp, carry1, pv, arch);
    double acc = 0.0, valid = 0.0;
    Tensor sig = params.log_sigma;
    for (std::int64_t t = t_cut; t < N; ++t) {
        VarId act = policy_step_vars(tp, tp.constant(batch.obs_at(t)), ws, pv, arch);
        for (std::int64_t e = 0; e < b; ++e) {
            if (batch.mask(e, t) == 0.0) continue;
            Tensor pred({arch.d_act}), tgt({arch.d_act});
            for (std::int64_t j = 0; j < arch.d_act; ++j) {
                pred(j) = tp.value(act)(e, j);
                tgt(j) = batch.act(e, t, j);
            }
            acc += adaptive_term_value(pred, tgt, sig, delta);
            valid += 1.0;
        }
    }
    return acc / valid;
}

}  // namespace detail

/// Verify the truncation boundary contract on a given batch:
///  1. the trainer's post-boundary gradients equal those of a forward started
///     fresh from the carried values (the carry captures everything),
///  2. they match central finite differences of the post-boundary loss with
///     the carry held fixed (no gradient flows through pre-boundary state),
///  3. with truncation disabled the gradients move (the check can fail).
inline DetachReport detach_boundary_check(const ArchConfig& arch, const ModelParams& params,
                                          const PaddedBatch& batch, std::int64_t t_cut,
                                          double delta, double fd_eps = 1e-5,
                                          int fd_samples = 24, std::uint64_t fd_seed = 7) {
    DetachReport rep;
    detail::TwoWindowOut det = detail::two_window_grads(arch, params, batch, t_cut, delta, false);
    detail::TwoWindowOut att = detail::two_window_grads(arch, params, batch, t_cut, delta, true);

    // Truncation must not change what is computed, only what is differentiated:
    // the chunked forward has to reproduce the connected forward exactly.
    rep.forward_gap = std::abs(det.loss2 - att.loss2);

    // (1) re-run window 2 alone from the captured carry; gradients must agree
    // exactly with the trainer path (same graph, same order of operations).
    {
        Tape tp;
        ParamVars pv = enter_params(tp, params);
        WindowVars ws = enter_carry(tp, det.carry1, pv, arch);
        const std::int64_t b = batch.batch(), N = batch.length();
        VarId acc = tp.constant(Tensor::scalar(0.0));
        double valid = 0.0;
        for (std::int64_t t = t_cut; t < N; ++t) {
            VarId act = policy_step_vars(tp, tp.constant(batch.obs_at(t)), ws, pv, arch);
            Tensor col({b});
            double csum = 0.0;
            for (std::int64_t e = 0; e < b; ++e) {
                col(e) = batch.mask(e, t);
                csum += col(e);
            }
            if (csum == 0.0) continue;
            Tensor tgt({b, arch.d_act});
            for (std::int64_t e = 0; e < b; ++e)
                for (std::int64_t j = 0; j < arch.d_act; ++j) tgt(e, j) = batch.act(e, t, j);
            acc = tp.add(acc, tp.weighted_sum(adaptive_term(tp, act, tgt, pv.log_sigma, delta),
                                              std::move(col)));
            valid += csum;
        }
        tp.backward(tp.scale(acc, 1.0 / valid));
        std::size_t k = 0;
        for (VarId id : pv.ordered) {
            const Tensor g = tp.grad_of(id);
            const Tensor& g0 = det.grads[k++];
            for (std::size_t i = 0; i < g.numel(); ++i)
                rep.isolated_max_abs_diff =
                    std::max(rep.isolated_max_abs_diff, std::abs(g.data()[i] - g0.data()[i]));
        }
    }

    // (2) finite differences of window-2 loss, carry frozen at its recorded
    // values, over randomly sampled parameter coordinates.
    {
        std::vector<Tensor*> slots;
        ModelParams probe = params;
        probe.for_each([&slots](const std::string&, Tensor& t) { slots.push_back(&t); });
        std::size_t total = 0;
        for (Tensor* t : slots) total += t->numel();
        Rng rng(fd_seed);
        for (int s = 0; s < fd_samples; ++s) {
            std::size_t flat = rng.index(total);
            std::size_t ti = 0;
            while (flat >= slots[ti]->numel()) flat -= slots[ti++]->numel();
            double& coord = slots[ti]->data()[flat];
            const double keep = coord;
            coord = keep + fd_eps;
            const double lp = detail::window2_loss_fixed_carry(arch, probe, batch, det.carry1, t_cut, delta);
            coord = keep - fd_eps;
            const double lm = detail::window2_loss_fixed_carry(arch, probe, batch, det.carry1, t_cut, delta);
            coord = keep;
            const double fd = (lp - lm) / (2.0 * fd_eps);
            const double an = det.grads[ti].data()[flat];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            rep.fd_max_rel_err = std::max(rep.fd_max_rel_err, rel);
        }
    }

    // (3) negative control: the attached (untruncated) gradients must differ.
    for (std::size_t k = 0; k < det.grads.size(); ++k)
        for (std::size_t i = 0; i < det.grads[k].numel(); ++i)
            rep.attached_vs_detached = std::max(
                rep.attached_vs_detached, std::abs(det.grads[k].data()[i] - att.grads[k].data()[i]));

    rep.carry_complete = rep.forward_gap == 0.0;
    rep.detached_matches_isolated = rep.isolated_max_abs_diff == 0.0;
    rep.detached_matches_fd = rep.fd_max_rel_err < 1e-4;
    rep.attached_differs = rep.attached_vs_detached > 1e-12;
    return rep;
}

}  // namespace grq
