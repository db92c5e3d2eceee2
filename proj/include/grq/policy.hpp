#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <vector>

#include "params.hpp"
#include "tape.hpp"

namespace grq {

/// Sinusoidal position code for absolute step t: even slots sin(t * f_i),
/// odd slots cos(t * f_i), f_i = 10000^(-2i/d).
inline Tensor positional_embedding(std::int64_t t, std::int64_t d) {
    if (d < 1) throw dimension_error("positional_embedding: width must be positive");
    if (t < 0) throw contract_error("positional_embedding: negative step index");
    Tensor pe({d});
    for (std::int64_t i = 0; 2 * i < d; ++i) {
        const double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
        const double ang = double(t) * freq;
        pe(2 * i) = std::sin(ang);
        if (2 * i + 1 < d) pe(2 * i + 1) = std::cos(ang);
    }
    return pe;
}

// One control-step observation in structured form. Flattening order is
// [q, dq, a_prev1, a_prev2, gravity, omega, v_cmd, robot_enc?], so the raw
// width is 4*d_act + 9 and the encoder input adds robot_enc_width on top.
struct Observation {
    std::vector<double> q, dq, a_prev1, a_prev2;
    std::array<double, 3> gravity{0.0, 0.0, -1.0};
    std::array<double, 3> omega{0.0, 0.0, 0.0};
    std::array<double, 3> v_cmd{0.0, 0.0, 0.0};
    std::vector<double> robot_enc;

    Tensor flatten(const ArchConfig& a) const {
        const std::size_t da = std::size_t(a.d_act);
        if (q.size() != da || dq.size() != da || a_prev1.size() != da || a_prev2.size() != da)
            throw dimension_error("observation: joint-field widths must equal d_act");
        if (a.d_obs != std::int64_t(4 * da + 9))
            throw dimension_error("observation: arch d_obs " + std::to_string(a.d_obs) +
                                  " does not match structured width " + std::to_string(4 * da + 9));
        if (std::int64_t(robot_enc.size()) != a.robot_enc_width)
            throw dimension_error("observation: robot_enc width mismatch");
        Tensor o({a.d_in()});
        std::int64_t k = 0;
        for (double v : q) o(k++) = v;
        for (double v : dq) o(k++) = v;
        for (double v : a_prev1) o(k++) = v;
        for (double v : a_prev2) o(k++) = v;
        for (double v : gravity) o(k++) = v;
        for (double v : omega) o(k++) = v;
        for (double v : v_cmd) o(k++) = v;
        for (double v : robot_enc) o(k++) = v;
        return o;
    }
};

// --- recurrent state ---------------------------------------------------------

// Batched carry between TBPTT windows: GRU hidden plus the two entry rings
// (encoded observations, GRU outputs), stored pre-position-code. `t` is the
// absolute index of the next step; ring entry i (oldest first) belongs to
// absolute step t - size + i.
struct BatchCarry {
    Tensor h;  // [b, d_emb]
    std::deque<Tensor> obs_entries, gru_entries;  // [b, d_emb] each
    std::int64_t t = 0;
    std::int64_t batch = 0;

    static BatchCarry fresh(const ArchConfig& a, std::int64_t b) {
        BatchCarry c;
        c.h = Tensor({b, a.d_emb});
        c.t = 0;
        c.batch = b;
        return c;
    }

    void reset() {
        h.zero();
        obs_entries.clear();
        gru_entries.clear();
        t = 0;
    }

    bool is_fresh() const {
        return t == 0 && obs_entries.empty() && gru_entries.empty() && h.max_abs() == 0.0;
    }

    void trim(std::int64_t window) {
        while (std::int64_t(obs_entries.size()) > window) obs_entries.pop_front();
        while (std::int64_t(gru_entries.size()) > window) gru_entries.pop_front();
    }
};

// Single-element state for inference-style stepping.
struct PolicyState {
    Tensor h;  // [d_emb]
    std::deque<Tensor> obs_entries, gru_entries;  // [d_emb] each
    std::int64_t t = 0;

    static PolicyState fresh(const ArchConfig& a) {
        PolicyState s;
        s.h = Tensor({a.d_emb});
        return s;
    }

    void reset() {
        h.zero();
        obs_entries.clear();
        gru_entries.clear();
        t = 0;
    }
};

// --- tape-level forward -------------------------------------------------------

/// Parameter leaves on a tape, canonical order preserved.
struct ParamVars {
    VarId enc_w, enc_b, ln_gamma, ln_beta;
    VarId obs_q, obs_k, obs_v, obs_o;
    VarId gru_wz, gru_uz, gru_bz, gru_wr, gru_ur, gru_br, gru_wn, gru_un, gru_bn;
    VarId gru_q, gru_k, gru_v, gru_o;
    std::vector<VarId> mlp_w, mlp_b;
    VarId log_sigma = kNoVar;
    std::vector<VarId> ordered;  // canonical order, matches ModelParams::for_each
};

inline ParamVars enter_params(Tape& tp, const ModelParams& p, bool trainable = true) {
    ParamVars v;
    std::vector<VarId*> slots{&v.enc_w,  &v.enc_b,  &v.ln_gamma, &v.ln_beta, &v.obs_q,  &v.obs_k,
                              &v.obs_v,  &v.obs_o,  &v.gru_wz,   &v.gru_uz,  &v.gru_bz, &v.gru_wr,
                              &v.gru_ur, &v.gru_br, &v.gru_wn,   &v.gru_un,  &v.gru_bn, &v.gru_q,
                              &v.gru_k,  &v.gru_v,  &v.gru_o};
    std::size_t slot = 0;
    p.for_each([&](const std::string& name, const Tensor& t) {
        VarId id = trainable ? tp.leaf(t) : tp.constant(t);
        v.ordered.push_back(id);
        if (slot < slots.size()) {
            *slots[slot++] = id;
        } else if (name == "log_sigma") {
            v.log_sigma = id;
        } else if (name.rfind("mlp.w", 0) == 0) {
            v.mlp_w.push_back(id);
        } else {
            v.mlp_b.push_back(id);
        }
    });
    return v;
}

/// On-tape state while stepping through one window.
struct WindowVars {
    VarId h = kNoVar;
    AttnHistory obs_k, obs_v, gru_k, gru_v;
    std::vector<VarId> obs_entry_ids, gru_entry_ids;  // nodes pushed this window
    std::int64_t t0 = 0;     // absolute index of the first step taken here
    std::int64_t steps = 0;  // steps taken so far on this tape
    std::int64_t batch = 0;
};

namespace detail {

/// [count*b, d] block of carried entries with their position codes added,
/// laid out entry-major per batch element: row e*count + i.
inline Tensor carried_block(const std::deque<Tensor>& entries, std::int64_t t0, std::int64_t b,
                            std::int64_t d) {
    const std::int64_t count = std::int64_t(entries.size());
    Tensor block({b * count, d});
    for (std::int64_t i = 0; i < count; ++i) {
        const Tensor& ent = entries[std::size_t(i)];
        Tensor pe = positional_embedding(t0 - count + i, d);
        for (std::int64_t e = 0; e < b; ++e) {
            double* dst = block.row(e * count + i);
            const double* src = ent.row(e);
            for (std::int64_t j = 0; j < d; ++j) dst[j] = src[j] + pe(j);
        }
    }
    return block;
}

}  // namespace detail

/// Re-enter a carry as tape constants. Carried ring entries are re-projected
/// through the current key/value matrices on-tape, so those projections stay
/// differentiable while the carried activations themselves stay detached.
inline WindowVars enter_carry(Tape& tp, const BatchCarry& c, const ParamVars& pv,
                              const ArchConfig& a) {
    if (c.batch < 1 || c.h.shape() != Shape{c.batch, a.d_emb})
        throw contract_error("enter_carry: carry not initialized for this arch/batch");
    if (std::int64_t(c.obs_entries.size()) > a.window || c.obs_entries.size() != c.gru_entries.size())
        throw contract_error("enter_carry: ring state inconsistent");
    if (c.t < std::int64_t(c.obs_entries.size()))
        throw contract_error("enter_carry: step counter behind ring length");
    WindowVars w;
    w.t0 = c.t;
    w.batch = c.batch;
    w.h = tp.constant(c.h);
    const std::int64_t L0 = std::int64_t(c.obs_entries.size());
    if (L0 > 0) {
        VarId xo = tp.constant(detail::carried_block(c.obs_entries, c.t, c.batch, a.d_emb));
        w.obs_k.base = tp.matmul(xo, pv.obs_k);
        w.obs_v.base = tp.matmul(xo, pv.obs_v);
        w.obs_k.base_len = w.obs_v.base_len = L0;
        VarId xg = tp.constant(detail::carried_block(c.gru_entries, c.t, c.batch, a.d_emb));
        w.gru_k.base = tp.matmul(xg, pv.gru_k);
        w.gru_v.base = tp.matmul(xg, pv.gru_v);
        w.gru_k.base_len = w.gru_v.base_len = L0;
    }
    return w;
}

/// One policy step for a whole batch on the tape. Returns the action node
/// [b, d_act]; optionally captures the two attention weight sets.
inline VarId policy_step_vars(Tape& tp, VarId obs, WindowVars& w, const ParamVars& pv,
                              const ArchConfig& a, Tensor* obs_weights = nullptr,
                              Tensor* gru_weights = nullptr) {
    const Tensor& O = tp.value(obs);
    require_rank(O, 2, "policy step observations");
    if (O.dim(0) != w.batch || O.dim(1) != a.d_in())
        throw dimension_error("policy step: observations " + shape_str(O.shape()) + ", want [" +
                              std::to_string(w.batch) + "," + std::to_string(a.d_in()) + "]");

    // encode
    VarId e = tp.layer_norm(tp.elu(tp.add_bias(tp.matmul(obs, pv.enc_w), pv.enc_b)), pv.ln_gamma,
                            pv.ln_beta, a.ln_eps);
    w.obs_entry_ids.push_back(e);

    // attend over encoded-observation history (current step included)
    const Tensor pe = positional_embedding(w.t0 + w.steps, a.d_emb);
    VarId x = tp.add_row_const(e, pe);
    VarId q1 = tp.matmul(x, pv.obs_q);
    w.obs_k.steps.push_back(tp.matmul(x, pv.obs_k));
    w.obs_v.steps.push_back(tp.matmul(x, pv.obs_v));
    VarId attn1 = tp.matmul(tp.attention(q1, w.obs_k, w.obs_v, a.n_heads, a.window, obs_weights),
                            pv.obs_o);

    // gru over [e; attended history]
    VarId gx = tp.concat_cols({e, attn1});
    VarId z = tp.sigmoid(
        tp.add_bias(tp.add(tp.matmul(gx, pv.gru_wz), tp.matmul(w.h, pv.gru_uz)), pv.gru_bz));
    VarId r = tp.sigmoid(
        tp.add_bias(tp.add(tp.matmul(gx, pv.gru_wr), tp.matmul(w.h, pv.gru_ur)), pv.gru_br));
    VarId n = tp.tanh_(tp.add_bias(
        tp.add(tp.matmul(gx, pv.gru_wn), tp.mul(r, tp.matmul(w.h, pv.gru_un))), pv.gru_bn));
    VarId hn = tp.blend(z, n, w.h);
    w.h = hn;
    w.gru_entry_ids.push_back(hn);

    // attend over gru-output history
    VarId xg = tp.add_row_const(hn, pe);
    VarId q2 = tp.matmul(xg, pv.gru_q);
    w.gru_k.steps.push_back(tp.matmul(xg, pv.gru_k));
    w.gru_v.steps.push_back(tp.matmul(xg, pv.gru_v));
    VarId attn2 = tp.matmul(tp.attention(q2, w.gru_k, w.gru_v, a.n_heads, a.window, gru_weights),
                            pv.gru_o);

    // action head
    VarId u = tp.concat_cols({e, hn, attn2});
    for (std::size_t i = 0; i < pv.mlp_w.size(); ++i) {
        u = tp.add_bias(tp.matmul(u, pv.mlp_w[i]), pv.mlp_b[i]);
        if (i + 1 < pv.mlp_w.size()) u = tp.elu(u);
    }

    w.steps += 1;
    return u;
}

/// Pull the values back out of a finished window: this is the detachment
/// boundary. Ring entries keep only the newest `window` activations.
inline BatchCarry extract_carry(const Tape& tp, const WindowVars& w, const BatchCarry& prev,
                                const ArchConfig& a) {
    BatchCarry c;
    c.batch = w.batch;
    c.h = tp.value(w.h);
    c.t = w.t0 + w.steps;
    c.obs_entries = prev.obs_entries;
    c.gru_entries = prev.gru_entries;
    for (VarId id : w.obs_entry_ids) c.obs_entries.push_back(tp.value(id));
    for (VarId id : w.gru_entry_ids) c.gru_entries.push_back(tp.value(id));
    c.trim(a.window);
    return c;
}

// --- value-level wrappers ------------------------------------------------------
// Plain-number variants of the building blocks; each funnels through the same
// tape code so there is exactly one definition of the math.

/// LayerNorm(ELU(W o + b)) for a single flat observation.
inline Tensor encode(const ArchConfig& a, const ModelParams& p, const Tensor& obs) {
    require_shape(obs, {a.d_in()}, "encode input");
    Tape tp;
    ParamVars pv = enter_params(tp, p, false);
    Tensor row({1, a.d_in()});
    for (std::int64_t j = 0; j < a.d_in(); ++j) row(0, j) = obs(j);
    VarId e = tp.layer_norm(tp.elu(tp.add_bias(tp.matmul(tp.constant(row), pv.enc_w), pv.enc_b)),
                            pv.ln_gamma, pv.ln_beta, a.ln_eps);
    const Tensor& E = tp.value(e);
    Tensor out({a.d_emb});
    for (std::int64_t j = 0; j < a.d_emb; ++j) out(j) = E(0, j);
    return out;
}

/// One GRU update h' from input x = [e; attended] and previous hidden h.
inline Tensor gru_step(const ArchConfig& a, const ModelParams& p, const Tensor& x, const Tensor& h) {
    require_shape(x, {2 * a.d_emb}, "gru input");
    require_shape(h, {a.d_emb}, "gru hidden");
    Tape tp;
    ParamVars pv = enter_params(tp, p, false);
    Tensor xr({1, 2 * a.d_emb});
    Tensor hr({1, a.d_emb});
    for (std::int64_t j = 0; j < 2 * a.d_emb; ++j) xr(0, j) = x(j);
    for (std::int64_t j = 0; j < a.d_emb; ++j) hr(0, j) = h(j);
    VarId gx = tp.constant(xr);
    VarId hv = tp.constant(hr);
    VarId z = tp.sigmoid(
        tp.add_bias(tp.add(tp.matmul(gx, pv.gru_wz), tp.matmul(hv, pv.gru_uz)), pv.gru_bz));
    VarId r = tp.sigmoid(
        tp.add_bias(tp.add(tp.matmul(gx, pv.gru_wr), tp.matmul(hv, pv.gru_ur)), pv.gru_br));
    VarId n = tp.tanh_(tp.add_bias(
        tp.add(tp.matmul(gx, pv.gru_wn), tp.mul(r, tp.matmul(hv, pv.gru_un))), pv.gru_bn));
    const Tensor& H = tp.value(tp.blend(z, n, hv));
    Tensor out({a.d_emb});
    for (std::int64_t j = 0; j < a.d_emb; ++j) out(j) = H(0, j);
    return out;
}

struct AttentionResult {
    Tensor out;      // [d]
    Tensor weights;  // [n_heads, L], oldest entry first
};

/// Single-query multi-head attention over explicit projected histories.
inline AttentionResult single_query_attention(const Tensor& q, const std::vector<Tensor>& keys,
                                              const std::vector<Tensor>& vals, int n_heads,
                                              std::int64_t window) {
    require_rank(q, 1, "attention query");
    if (keys.size() != vals.size()) throw contract_error("attention: key/value count mismatch");
    const std::int64_t d = q.dim(0);
    Tape tp;
    auto lift = [&tp, d](const Tensor& v) {
        require_shape(v, {d}, "attention history entry");
        Tensor row({1, d});
        for (std::int64_t j = 0; j < d; ++j) row(0, j) = v(j);
        return tp.constant(row);
    };
    AttnHistory kh, vh;
    for (const Tensor& k : keys) kh.steps.push_back(lift(k));
    for (const Tensor& v : vals) vh.steps.push_back(lift(v));
    Tensor qr({1, d});
    for (std::int64_t j = 0; j < d; ++j) qr(0, j) = q(j);
    Tensor wts;
    VarId out = tp.attention(tp.constant(qr), kh, vh, n_heads, window, &wts);
    AttentionResult r;
    r.out = Tensor({d});
    for (std::int64_t j = 0; j < d; ++j) r.out(j) = tp.value(out)(0, j);
    const std::int64_t L = wts.dim(2);
    r.weights = Tensor({std::int64_t(n_heads), L});
    for (std::int64_t h = 0; h < n_heads; ++h)
        for (std::int64_t i = 0; i < L; ++i) r.weights(h, i) = wts(0, h, i);
    return r;
}

struct PolicyStepResult {
    Tensor action;       // [d_act]
    PolicyState next;
    Tensor obs_weights;  // [n_heads, L]
    Tensor gru_weights;  // [n_heads, L]
};

namespace detail {

inline BatchCarry lift_state(const PolicyState& s, const ArchConfig& a) {
    BatchCarry c = BatchCarry::fresh(a, 1);
    require_shape(s.h, {a.d_emb}, "policy state hidden");
    for (std::int64_t j = 0; j < a.d_emb; ++j) c.h(0, j) = s.h(j);
    auto lift = [&a](const std::deque<Tensor>& src, std::deque<Tensor>& dst) {
        for (const Tensor& e : src) {
            require_shape(e, {a.d_emb}, "policy state ring entry");
            Tensor row({1, a.d_emb});
            for (std::int64_t j = 0; j < a.d_emb; ++j) row(0, j) = e(j);
            dst.push_back(std::move(row));
        }
    };
    lift(s.obs_entries, c.obs_entries);
    lift(s.gru_entries, c.gru_entries);
    c.t = s.t;
    return c;
}

inline PolicyState lower_state(const BatchCarry& c, const ArchConfig& a) {
    PolicyState s = PolicyState::fresh(a);
    for (std::int64_t j = 0; j < a.d_emb; ++j) s.h(j) = c.h(0, j);
    auto lower = [&a](const std::deque<Tensor>& src, std::deque<Tensor>& dst) {
        for (const Tensor& e : src) {
            Tensor v({a.d_emb});
            for (std::int64_t j = 0; j < a.d_emb; ++j) v(j) = e(0, j);
            dst.push_back(std::move(v));
        }
    };
    lower(c.obs_entries, s.obs_entries);
    lower(c.gru_entries, s.gru_entries);
    s.t = c.t;
    return s;
}

}  // namespace detail

/// One full policy step for a single flat observation. Pure: the input state
/// is untouched, the advanced state comes back in the result.
inline PolicyStepResult policy_step(const ArchConfig& a, const ModelParams& p, const Tensor& obs,
                                    const PolicyState& state) {
    require_shape(obs, {a.d_in()}, "policy step observation");
    BatchCarry carry = detail::lift_state(state, a);
    Tape tp;
    ParamVars pv = enter_params(tp, p, false);
    WindowVars w = enter_carry(tp, carry, pv, a);
    Tensor row({1, a.d_in()});
    for (std::int64_t j = 0; j < a.d_in(); ++j) row(0, j) = obs(j);
    Tensor w1, w2;
    VarId act = policy_step_vars(tp, tp.constant(row), w, pv, a, &w1, &w2);

    PolicyStepResult r;
    r.action = Tensor({a.d_act});
    for (std::int64_t j = 0; j < a.d_act; ++j) r.action(j) = tp.value(act)(0, j);
    r.next = detail::lower_state(extract_carry(tp, w, carry, a), a);
    auto squeeze = [](const Tensor& w3) {
        Tensor out({w3.dim(1), w3.dim(2)});
        for (std::int64_t h = 0; h < w3.dim(1); ++h)
            for (std::int64_t i = 0; i < w3.dim(2); ++i) out(h, i) = w3(0, h, i);
        return out;
    };
    r.obs_weights = squeeze(w1);
    r.gru_weights = squeeze(w2);
    return r;
}

/// Stateful batched rollout without gradients: actions for every step of an
/// observation block [b, T, d_in]; the carry advances past the block.
inline Tensor forward_sequence(const ArchConfig& a, const ModelParams& p, const Tensor& obs,
                               BatchCarry& carry) {
    require_rank(obs, 3, "forward_sequence observations");
    const std::int64_t b = obs.dim(0), T = obs.dim(1);
    if (obs.dim(2) != a.d_in()) throw dimension_error("forward_sequence: observation width");
    if (carry.batch != b) throw contract_error("forward_sequence: carry batch mismatch");
    Tape tp;
    ParamVars pv = enter_params(tp, p, false);
    WindowVars w = enter_carry(tp, carry, pv, a);
    Tensor actions({b, T, a.d_act});
    for (std::int64_t t = 0; t < T; ++t) {
        Tensor slice({b, a.d_in()});
        for (std::int64_t e = 0; e < b; ++e)
            for (std::int64_t j = 0; j < a.d_in(); ++j) slice(e, j) = obs(e, t, j);
        VarId act = policy_step_vars(tp, tp.constant(slice), w, pv, a);
        for (std::int64_t e = 0; e < b; ++e)
            for (std::int64_t j = 0; j < a.d_act; ++j) actions(e, t, j) = tp.value(act)(e, j);
    }
    carry = extract_carry(tp, w, carry, a);
    return actions;
}

}  // namespace grq
