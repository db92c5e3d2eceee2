#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "alloc_counter.hpp"
#include "checkpoint.hpp"
#include "params.hpp"
#include "policy.hpp"
#include "rng.hpp"

namespace grq {

// Deployment-side forward pass. Weights are narrowed to Real once at
// construction; stepping touches only preallocated state, so the steady-state
// path performs no heap allocation. Key/value projections of history entries
// are cached in rings of the attention window size -- entries are immutable
// and position codes are absolute, so a cached projection never goes stale.
template <typename Real>
class Engine {
  public:
    Engine(const ArchConfig& arch, const ModelParams& params) : a_(arch) {
        a_.validate();
        const ModelParams check = ModelParams::zeros(a_);  // shape template
        auto* cp = const_cast<ModelParams*>(&params);
        std::vector<const Tensor*> have;
        cp->for_each([&have](const std::string&, Tensor& t) { have.push_back(&t); });
        std::size_t i = 0;
        check.for_each([&](const std::string& name, const Tensor& want) {
            if (!want.same_shape(*have[i]))
                throw dimension_error("engine: parameter " + name + " has shape " +
                                      shape_str(have[i]->shape()) + ", architecture wants " +
                                      shape_str(want.shape()));
            ++i;
        });

        auto take = [](std::vector<Real>& dst, const Tensor& src) {
            dst.resize(src.numel());
            for (std::size_t k = 0; k < src.numel(); ++k) dst[k] = Real(src.data()[k]);
        };
        take(enc_w_, params.enc_w);
        take(enc_b_, params.enc_b);
        take(ln_g_, params.ln_gamma);
        take(ln_b_, params.ln_beta);
        take(obs_q_, params.obs_q);
        take(obs_k_, params.obs_k);
        take(obs_v_, params.obs_v);
        take(obs_o_, params.obs_o);
        take(gru_wz_, params.gru_wz);
        take(gru_uz_, params.gru_uz);
        take(gru_bz_, params.gru_bz);
        take(gru_wr_, params.gru_wr);
        take(gru_ur_, params.gru_ur);
        take(gru_br_, params.gru_br);
        take(gru_wn_, params.gru_wn);
        take(gru_un_, params.gru_un);
        take(gru_bn_, params.gru_bn);
        take(gru_q_, params.gru_q);
        take(gru_k_, params.gru_k);
        take(gru_v_, params.gru_v);
        take(gru_o_, params.gru_o);
        mlp_w_.resize(params.mlp_w.size());
        mlp_b_.resize(params.mlp_b.size());
        mlp_in_.resize(params.mlp_w.size());
        mlp_out_.resize(params.mlp_w.size());
        for (std::size_t k = 0; k < params.mlp_w.size(); ++k) {
            take(mlp_w_[k], params.mlp_w[k]);
            take(mlp_b_[k], params.mlp_b[k]);
            mlp_in_[k] = params.mlp_w[k].dim(0);
            mlp_out_[k] = params.mlp_w[k].dim(1);
        }
        take(log_sigma_, params.log_sigma);

        // absolute-position code frequencies
        freqs_.resize(std::size_t((a_.d_emb + 1) / 2));
        for (std::size_t k = 0; k < freqs_.size(); ++k)
            freqs_[k] = std::pow(10000.0, -2.0 * double(k) / double(a_.d_emb));
    }

    struct State {
        std::vector<Real> h;                      // [d]
        std::vector<Real> k1, v1, k2, v2;         // rings, [window * d] each
        std::int64_t t = 0;                       // steps taken
        // attention weights of the most recent step, [n_heads * len], oldest first
        std::vector<Real> w_obs, w_gru;
        std::int64_t w_len = 0;
        // scratch
        std::vector<Real> e, pe, x, q, attn, attn_proj, gx, zg, rg, ng, hn, ua, ub;
        std::vector<Real> scores;
    };

    State make_state() const {
        State s;
        const std::size_t d = std::size_t(a_.d_emb), w = std::size_t(a_.window);
        s.h.assign(d, Real(0));
        for (auto* r : {&s.k1, &s.v1, &s.k2, &s.v2}) r->assign(w * d, Real(0));
        s.w_obs.assign(std::size_t(a_.n_heads) * w, Real(0));
        s.w_gru.assign(std::size_t(a_.n_heads) * w, Real(0));
        for (auto* v : {&s.e, &s.pe, &s.x, &s.q, &s.attn, &s.attn_proj, &s.zg, &s.rg, &s.ng, &s.hn})
            v->assign(d, Real(0));
        s.gx.assign(2 * d, Real(0));
        std::size_t umax = 3 * d;
        for (std::size_t k = 0; k < mlp_out_.size(); ++k)
            umax = std::max(umax, std::size_t(mlp_out_[k]));
        s.ua.assign(umax, Real(0));
        s.ub.assign(umax, Real(0));
        s.scores.assign(w, Real(0));
        return s;
    }

    void reset(State& s) const {
        std::fill(s.h.begin(), s.h.end(), Real(0));
        s.t = 0;
        s.w_len = 0;
    }

    const ArchConfig& arch() const { return a_; }
    const std::vector<Real>& log_sigma() const { return log_sigma_; }

    /// One control step: obs is a [d_in] row, action a [d_act] output buffer.
    /// No allocation happens here.
    void step(const Real* obs, State& s, Real* action) const {
        const std::int64_t d = a_.d_emb, W = a_.window;

        // encoder: LayerNorm(ELU(W obs + b))
        matvec(obs, enc_w_.data(), s.e.data(), a_.d_in(), d);
        for (std::int64_t j = 0; j < d; ++j) {
            Real v = s.e[std::size_t(j)] + enc_b_[std::size_t(j)];
            s.e[std::size_t(j)] = v >= Real(0) ? v : Real(std::expm1(double(v)));
        }
        layer_norm(s.e.data(), d);

        // position code for this absolute step
        for (std::int64_t i = 0; 2 * i < d; ++i) {
            const double ang = double(s.t) * freqs_[std::size_t(i)];
            s.pe[std::size_t(2 * i)] = Real(std::sin(ang));
            if (2 * i + 1 < d) s.pe[std::size_t(2 * i + 1)] = Real(std::cos(ang));
        }

        // observation attention: push projections of (e + pe), then read
        for (std::int64_t j = 0; j < d; ++j) s.x[std::size_t(j)] = s.e[std::size_t(j)] + s.pe[std::size_t(j)];
        const std::size_t slot = std::size_t(s.t % W) * std::size_t(d);
        matvec(s.x.data(), obs_k_.data(), s.k1.data() + slot, d, d);
        matvec(s.x.data(), obs_v_.data(), s.v1.data() + slot, d, d);
        matvec(s.x.data(), obs_q_.data(), s.q.data(), d, d);
        const std::int64_t len = std::min<std::int64_t>(s.t + 1, W);
        attend(s, s.k1, s.v1, len, s.w_obs.data());
        matvec(s.attn.data(), obs_o_.data(), s.attn_proj.data(), d, d);

        // gru over [e; attended]
        for (std::int64_t j = 0; j < d; ++j) {
            s.gx[std::size_t(j)] = s.e[std::size_t(j)];
            s.gx[std::size_t(d + j)] = s.attn_proj[std::size_t(j)];
        }
        gate(s.gx.data(), s.h.data(), gru_wz_, gru_uz_, gru_bz_, s.zg.data(), s.ua.data(), d, true);
        gate(s.gx.data(), s.h.data(), gru_wr_, gru_ur_, gru_br_, s.rg.data(), s.ua.data(), d, true);
        // candidate: tanh(Wn gx + r * (Un h) + bn)
        matvec(s.gx.data(), gru_wn_.data(), s.ng.data(), 2 * d, d);
        matvec(s.h.data(), gru_un_.data(), s.ua.data(), d, d);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real v = s.ng[std::size_t(j)] + s.rg[std::size_t(j)] * s.ua[std::size_t(j)] +
                           gru_bn_[std::size_t(j)];
            s.ng[std::size_t(j)] = Real(std::tanh(double(v)));
        }
        for (std::int64_t j = 0; j < d; ++j) {
            const Real z = s.zg[std::size_t(j)];
            s.hn[std::size_t(j)] =
                (Real(1) - z) * s.ng[std::size_t(j)] + z * s.h[std::size_t(j)];
        }

        // gru-output attention
        for (std::int64_t j = 0; j < d; ++j) s.x[std::size_t(j)] = s.hn[std::size_t(j)] + s.pe[std::size_t(j)];
        matvec(s.x.data(), gru_k_.data(), s.k2.data() + slot, d, d);
        matvec(s.x.data(), gru_v_.data(), s.v2.data() + slot, d, d);
        matvec(s.x.data(), gru_q_.data(), s.q.data(), d, d);
        attend(s, s.k2, s.v2, len, s.w_gru.data());
        matvec(s.attn.data(), gru_o_.data(), s.attn_proj.data(), d, d);

        // action head over [e; h'; attended]
        for (std::int64_t j = 0; j < d; ++j) {
            s.ua[std::size_t(j)] = s.e[std::size_t(j)];
            s.ua[std::size_t(d + j)] = s.hn[std::size_t(j)];
            s.ua[std::size_t(2 * d + j)] = s.attn_proj[std::size_t(j)];
        }
        Real* cur = s.ua.data();
        Real* nxt = s.ub.data();
        for (std::size_t k = 0; k < mlp_w_.size(); ++k) {
            matvec(cur, mlp_w_[k].data(), nxt, mlp_in_[k], mlp_out_[k]);
            const bool last = k + 1 == mlp_w_.size();
            for (std::int64_t j = 0; j < mlp_out_[k]; ++j) {
                Real v = nxt[std::size_t(j)] + mlp_b_[k][std::size_t(j)];
                nxt[std::size_t(j)] = last || v >= Real(0) ? v : Real(std::expm1(double(v)));
            }
            std::swap(cur, nxt);
        }
        for (std::int64_t j = 0; j < a_.d_act; ++j) action[std::size_t(j)] = cur[std::size_t(j)];

        std::copy(s.hn.begin(), s.hn.end(), s.h.begin());
        s.w_len = len;
        s.t += 1;
    }

  private:
    // y[0..n) = x[0..m) * M[m,n]; k-sequential accumulation per output, same
    // order as the training matmul.
    static void matvec(const Real* x, const Real* M, Real* y, std::int64_t m, std::int64_t n) {
        for (std::int64_t j = 0; j < n; ++j) y[std::size_t(j)] = Real(0);
        for (std::int64_t k = 0; k < m; ++k) {
            const Real xv = x[std::size_t(k)];
            const Real* row = M + std::size_t(k) * std::size_t(n);
            for (std::int64_t j = 0; j < n; ++j) y[std::size_t(j)] += xv * row[std::size_t(j)];
        }
    }

    void layer_norm(Real* v, std::int64_t d) const {
        Real mean = Real(0);
        for (std::int64_t j = 0; j < d; ++j) mean += v[std::size_t(j)];
        mean /= Real(d);
        Real var = Real(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real c = v[std::size_t(j)] - mean;
            var += c * c;
        }
        var /= Real(d);
        const Real inv = Real(1) / Real(std::sqrt(double(var) + a_.ln_eps));
        for (std::int64_t j = 0; j < d; ++j)
            v[std::size_t(j)] = ln_g_[std::size_t(j)] * ((v[std::size_t(j)] - mean) * inv) +
                                ln_b_[std::size_t(j)];
    }

    // z = act(Wx x + U h + b); two fused gates share this.
    void gate(const Real* x, const Real* h, const std::vector<Real>& Wm, const std::vector<Real>& Um,
              const std::vector<Real>& bm, Real* out, Real* tmp, std::int64_t d, bool sigmoid) const {
        matvec(x, Wm.data(), out, 2 * d, d);
        matvec(h, Um.data(), tmp, d, d);
        for (std::int64_t j = 0; j < d; ++j) {
            const Real v = out[std::size_t(j)] + tmp[std::size_t(j)] + bm[std::size_t(j)];
            out[std::size_t(j)] = sigmoid ? Real(1) / (Real(1) + Real(std::exp(-double(v))))
                                          : Real(std::tanh(double(v)));
        }
    }

    // Single-query multi-head read over a ring; writes s.attn and the
    // normalized weights (n_heads * len, oldest first).
    void attend(State& s, const std::vector<Real>& kring, const std::vector<Real>& vring,
                std::int64_t len, Real* weights) const {
        const std::int64_t d = a_.d_emb, W = a_.window;
        const int H = a_.n_heads;
        const std::int64_t dk = d / H;
        const Real inv_sqrt = Real(1.0 / std::sqrt(double(dk)));
        const std::int64_t first_step = s.t + 1 - len;  // oldest surviving entry
        for (int h = 0; h < H; ++h) {
            const std::int64_t hoff = std::int64_t(h) * dk;
            Real mx = s.scores[0];
            for (std::int64_t i = 0; i < len; ++i) {
                const std::size_t row = std::size_t((first_step + i) % W) * std::size_t(d);
                const Real* kr = kring.data() + row + std::size_t(hoff);
                Real sc = Real(0);
                for (std::int64_t c = 0; c < dk; ++c) sc += s.q[std::size_t(hoff + c)] * kr[std::size_t(c)];
                sc *= inv_sqrt;
                s.scores[std::size_t(i)] = sc;
                mx = i == 0 ? sc : std::max(mx, sc);
            }
            Real sum = Real(0);
            for (std::int64_t i = 0; i < len; ++i) {
                const Real ex = Real(std::exp(double(s.scores[std::size_t(i)] - mx)));
                s.scores[std::size_t(i)] = ex;
                sum += ex;
            }
            const Real inv = Real(1) / sum;
            Real* yr = s.attn.data() + hoff;
            for (std::int64_t c = 0; c < dk; ++c) yr[std::size_t(c)] = Real(0);
            for (std::int64_t i = 0; i < len; ++i) {
                const Real w = s.scores[std::size_t(i)] * inv;
                weights[std::size_t(h) * std::size_t(len) + std::size_t(i)] = w;
                const std::size_t row = std::size_t((first_step + i) % W) * std::size_t(d);
                const Real* vr = vring.data() + row + std::size_t(hoff);
                for (std::int64_t c = 0; c < dk; ++c) yr[std::size_t(c)] += w * vr[std::size_t(c)];
            }
        }
    }

    ArchConfig a_;
    std::vector<Real> enc_w_, enc_b_, ln_g_, ln_b_;
    std::vector<Real> obs_q_, obs_k_, obs_v_, obs_o_;
    std::vector<Real> gru_wz_, gru_uz_, gru_bz_, gru_wr_, gru_ur_, gru_br_, gru_wn_, gru_un_, gru_bn_;
    std::vector<Real> gru_q_, gru_k_, gru_v_, gru_o_;
    std::vector<std::vector<Real>> mlp_w_, mlp_b_;
    std::vector<std::int64_t> mlp_in_, mlp_out_;
    std::vector<Real> log_sigma_;
    std::vector<double> freqs_;
};

template <typename Real>
inline void infer_step(const Engine<Real>& eng, typename Engine<Real>::State& state,
                       const Real* obs, Real* action) {
    eng.step(obs, state, action);
}

template <typename Real>
inline Engine<Real> make_engine(const Checkpoint& ck) {
    return Engine<Real>(ck.arch, ck.params);
}

// --- latency measurement -----------------------------------------------------------

struct LatencyReport {
    std::int64_t steps = 0, warmup = 0;
    double mean_us = 0.0, p50_us = 0.0, p99_us = 0.0, max_us = 0.0;
    std::uint64_t steady_allocs = 0;
    bool alloc_probe_active = false;
};

/// Time single-observation inference. Inputs are pregenerated and the timed
/// loop starts after `warmup` untimed steps (ring and caches saturated).
inline LatencyReport bench(const ArchConfig& arch, const ModelParams& params, std::int64_t steps,
                           std::int64_t warmup, std::uint64_t seed) {
    if (steps < 1 || warmup < 0) throw validation_error("bench: need steps >= 1, warmup >= 0");
    Engine<float> eng(arch, params);
    auto state = eng.make_state();
    const std::int64_t din = arch.d_in(), total = steps + warmup;
    std::vector<float> obs(std::size_t(total) * std::size_t(din));
    Rng rng(seed);
    for (float& v : obs) v = float(rng.uniform(-1.0, 1.0));
    std::vector<float> action(std::size_t(arch.d_act));
    std::vector<double> times(static_cast<std::size_t>(steps));

    for (std::int64_t i = 0; i < warmup; ++i)
        eng.step(obs.data() + std::size_t(i) * std::size_t(din), state, action.data());

    const std::uint64_t allocs0 = alloc_probe::count();
    for (std::int64_t i = 0; i < steps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        eng.step(obs.data() + std::size_t(warmup + i) * std::size_t(din), state, action.data());
        const auto t1 = std::chrono::steady_clock::now();
        times[std::size_t(i)] = std::chrono::duration<double, std::micro>(t1 - t0).count();
    }
    const std::uint64_t allocs1 = alloc_probe::count();

    LatencyReport rep;
    rep.steps = steps;
    rep.warmup = warmup;
    rep.steady_allocs = allocs1 - allocs0;
    rep.alloc_probe_active = alloc_probe::active();
    double sum = 0.0;
    for (double t : times) sum += t;
    rep.mean_us = sum / double(steps);
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    auto rank = [&sorted](double p) {
        const std::size_t n = sorted.size();
        std::size_t idx = std::size_t(std::ceil(p * double(n)));
        if (idx < 1) idx = 1;
        return sorted[std::min(idx, n) - 1];
    };
    rep.p50_us = rank(0.50);
    rep.p99_us = rank(0.99);
    rep.max_us = sorted.back();
    return rep;
}

}  // namespace grq
