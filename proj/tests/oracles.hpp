#pragma once

// Shared test oracles. Everything here is deliberately written as
// straight-line reference code, independent of the tape/runtime kernels it is
// used to check: naive loops, textbook formulas, no shared helpers.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "grq/data.hpp"
#include "grq/loss.hpp"
#include "grq/params.hpp"
#include "grq/policy.hpp"
#include "grq/rng.hpp"
#include "grq/tensor.hpp"

namespace oracle {

using grq::ArchConfig;
using grq::ModelParams;
using grq::PaddedBatch;
using grq::Rng;
using grq::Tensor;

inline double rel_err(double got, double want, double floor = 1e-6) {
    const double den = std::max({std::abs(got), std::abs(want), floor});
    return std::abs(got - want) / den;
}

inline Tensor rand_tensor(const grq::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// --- parameter-vector plumbing ---------------------------------------------------

inline std::size_t param_count(const ModelParams& p) { return p.total_size(); }

inline double get_coord(const ModelParams& p, std::size_t k) {
    double out = 0.0;
    std::size_t base = 0;
    p.for_each([&](const std::string&, const Tensor& t) {
        if (k >= base && k < base + t.numel()) out = t.data()[k - base];
        base += t.numel();
    });
    return out;
}

inline void add_coord(ModelParams& p, std::size_t k, double delta) {
    std::size_t base = 0;
    p.for_each([&](const std::string&, Tensor& t) {
        if (k >= base && k < base + t.numel()) t.data()[k - base] += delta;
        base += t.numel();
    });
}

inline std::string coord_name(const ModelParams& p, std::size_t k) {
    std::string name = "?";
    std::size_t base = 0;
    p.for_each([&](const std::string& n, const Tensor& t) {
        if (k >= base && k < base + t.numel())
            name = n + "[" + std::to_string(k - base) + "]";
        base += t.numel();
    });
    return name;
}

struct FdCheck {
    double max_rel_err = 0.0;
    double worst_analytic = 0.0, worst_fd = 0.0;
    std::string worst_coord;
    std::size_t checked = 0;
};

/// Central finite differences of a scalar loss over sampled parameter
/// coordinates, compared against analytic gradients given in canonical order.
inline FdCheck fd_vs_analytic(const ModelParams& at,
                              const std::function<double(const ModelParams&)>& loss,
                              const std::vector<Tensor>& analytic, double eps,
                              std::size_t samples, std::uint64_t seed, double floor = 1e-6) {
    std::vector<double> flat;
    for (const Tensor& g : analytic)
        flat.insert(flat.end(), g.data(), g.data() + g.numel());
    const std::size_t total = param_count(at);
    if (flat.size() != total) throw grq::contract_error("fd_vs_analytic: gradient size mismatch");

    Rng rng(seed);
    FdCheck out;
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t k = rng.index(total);
        ModelParams up = at, dn = at;
        add_coord(up, k, eps);
        add_coord(dn, k, -eps);
        const double fd = (loss(up) - loss(dn)) / (2.0 * eps);
        const double an = flat[k];
        const double e = rel_err(an, fd, floor);
        if (e > out.max_rel_err) {
            out.max_rel_err = e;
            out.worst_analytic = an;
            out.worst_fd = fd;
            out.worst_coord = coord_name(at, k);
        }
        out.checked += 1;
    }
    return out;
}

// --- dense attention reference ----------------------------------------------------

/// Naive multi-head single-query attention over the last `window` of the
/// given history: per head, softmax(q.k / sqrt(dk)) over entries, weighted
/// sum of values. No max-subtraction, plain double loops.
inline Tensor dense_attention(const Tensor& q, const std::vector<Tensor>& keys,
                              const std::vector<Tensor>& vals, int n_heads, std::int64_t window,
                              Tensor* weights_out = nullptr) {
    const std::int64_t d = q.dim(0);
    const std::int64_t dk = d / n_heads;
    const std::int64_t total = std::int64_t(keys.size());
    const std::int64_t start = total > window ? total - window : 0;
    const std::int64_t L = total - start;
    Tensor out({d});
    Tensor wts({std::int64_t(n_heads), L});
    for (int h = 0; h < n_heads; ++h) {
        const std::int64_t c0 = std::int64_t(h) * dk;
        std::vector<double> e(static_cast<std::size_t>(L));
        double z = 0.0;
        for (std::int64_t i = 0; i < L; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < dk; ++j)
                s += q(c0 + j) * keys[std::size_t(start + i)](c0 + j);
            e[std::size_t(i)] = std::exp(s / std::sqrt(double(dk)));
            z += e[std::size_t(i)];
        }
        for (std::int64_t i = 0; i < L; ++i) {
            const double w = e[std::size_t(i)] / z;
            wts(h, i) = w;
            for (std::int64_t j = 0; j < dk; ++j)
                out(c0 + j) += w * vals[std::size_t(start + i)](c0 + j);
        }
    }
    if (weights_out) *weights_out = wts;
    return out;
}

// --- straight-line model math -------------------------------------------------------

inline Tensor pe_reference(std::int64_t t, std::int64_t d) {
    Tensor pe({d});
    for (std::int64_t j = 0; j < d; ++j) {
        const double freq = std::pow(10000.0, -2.0 * double(j / 2) / double(d));
        pe(j) = (j % 2 == 0) ? std::sin(double(t) * freq) : std::cos(double(t) * freq);
    }
    return pe;
}

inline Tensor encode_reference(const ArchConfig& a, const ModelParams& p, const Tensor& obs) {
    const std::int64_t d = a.d_emb;
    std::vector<double> pre(static_cast<std::size_t>(d));
    for (std::int64_t j = 0; j < d; ++j) {
        double s = p.enc_b(j);
        for (std::int64_t i = 0; i < a.d_in(); ++i) s += obs(i) * p.enc_w(i, j);
        pre[std::size_t(j)] = s > 0.0 ? s : std::expm1(s);
    }
    double mean = 0.0;
    for (double v : pre) mean += v;
    mean /= double(d);
    double var = 0.0;
    for (double v : pre) var += (v - mean) * (v - mean);
    var /= double(d);
    Tensor out({d});
    for (std::int64_t j = 0; j < d; ++j)
        out(j) = p.ln_gamma(j) * (pre[std::size_t(j)] - mean) / std::sqrt(var + a.ln_eps) +
                 p.ln_beta(j);
    return out;
}

inline Tensor gru_reference(const ArchConfig& a, const ModelParams& p, const Tensor& x,
                            const Tensor& h) {
    const std::int64_t d = a.d_emb;
    auto gate = [&](const Tensor& W, const Tensor& U, const Tensor& b, std::int64_t j) {
        double s = b(j);
        for (std::int64_t i = 0; i < 2 * d; ++i) s += x(i) * W(i, j);
        for (std::int64_t i = 0; i < d; ++i) s += h(i) * U(i, j);
        return s;
    };
    Tensor out({d});
    for (std::int64_t j = 0; j < d; ++j) {
        const double z = 1.0 / (1.0 + std::exp(-gate(p.gru_wz, p.gru_uz, p.gru_bz, j)));
        const double r = 1.0 / (1.0 + std::exp(-gate(p.gru_wr, p.gru_ur, p.gru_br, j)));
        double n = p.gru_bn(j);
        for (std::int64_t i = 0; i < 2 * d; ++i) n += x(i) * p.gru_wn(i, j);
        double hr = 0.0;
        for (std::int64_t i = 0; i < d; ++i) hr += h(i) * p.gru_un(i, j);
        n = std::tanh(n + r * hr);
        out(j) = (1.0 - z) * n + z * h(j);
    }
    return out;
}

// --- batch construction + loss closures ----------------------------------------------

/// Random padded batch with the given per-row valid lengths (0 < len <= N).
inline PaddedBatch rand_batch(const ArchConfig& a, const std::vector<std::int64_t>& lengths,
                              std::int64_t N, std::uint64_t seed) {
    const std::int64_t b = std::int64_t(lengths.size());
    Rng rng(seed);
    PaddedBatch out;
    out.obs = Tensor({b, N, a.d_in()});
    out.act = Tensor({b, N, a.d_act});
    out.mask = Tensor({b, N});
    out.indices.assign(std::size_t(b), 0);
    for (std::int64_t e = 0; e < b; ++e) {
        const std::int64_t n = lengths[std::size_t(e)];
        for (std::int64_t t = 0; t < n; ++t) {
            for (std::int64_t j = 0; j < a.d_in(); ++j) out.obs(e, t, j) = rng.uniform(-1.0, 1.0);
            for (std::int64_t j = 0; j < a.d_act; ++j) out.act(e, t, j) = rng.uniform(-0.5, 0.5);
            out.mask(e, t) = 1.0;
        }
    }
    return out;
}

/// Mask-pooled loss of one window [t0, t1) from a fresh recurrent state,
/// as a plain function of the parameters. Used as the FD target.
inline double window_loss_value(const ArchConfig& a, const ModelParams& p, const PaddedBatch& batch,
                                std::int64_t t0, std::int64_t t1, double delta) {
    grq::Tape tp;
    grq::ParamVars pv = grq::enter_params(tp, p, false);
    grq::BatchCarry carry = grq::BatchCarry::fresh(a, batch.batch());
    grq::WindowVars ws = grq::enter_carry(tp, carry, pv, a);
    std::vector<grq::VarId> preds;
    Tensor targets({batch.batch(), t1 - t0, a.d_act});
    Tensor mask({batch.batch(), t1 - t0});
    for (std::int64_t t = t0; t < t1; ++t) {
        preds.push_back(grq::policy_step_vars(tp, tp.constant(batch.obs_at(t)), ws, pv, a));
        for (std::int64_t e = 0; e < batch.batch(); ++e) {
            mask(e, t - t0) = batch.mask(e, t);
            for (std::int64_t j = 0; j < a.d_act; ++j) targets(e, t - t0, j) = batch.act(e, t, j);
        }
    }
    return tp.value(grq::masked_sequence_loss(tp, preds, targets, mask, pv.log_sigma, delta))(0);
}

/// Same loss with gradients in canonical parameter order.
inline std::pair<double, std::vector<Tensor>> window_loss_grads(const ArchConfig& a,
                                                                const ModelParams& p,
                                                                const PaddedBatch& batch,
                                                                std::int64_t t0, std::int64_t t1,
                                                                double delta) {
    grq::Tape tp;
    grq::ParamVars pv = grq::enter_params(tp, p, true);
    grq::BatchCarry carry = grq::BatchCarry::fresh(a, batch.batch());
    grq::WindowVars ws = grq::enter_carry(tp, carry, pv, a);
    std::vector<grq::VarId> preds;
    Tensor targets({batch.batch(), t1 - t0, a.d_act});
    Tensor mask({batch.batch(), t1 - t0});
    for (std::int64_t t = t0; t < t1; ++t) {
        preds.push_back(grq::policy_step_vars(tp, tp.constant(batch.obs_at(t)), ws, pv, a));
        for (std::int64_t e = 0; e < batch.batch(); ++e) {
            mask(e, t - t0) = batch.mask(e, t);
            for (std::int64_t j = 0; j < a.d_act; ++j) targets(e, t - t0, j) = batch.act(e, t, j);
        }
    }
    grq::VarId L = grq::masked_sequence_loss(tp, preds, targets, mask, pv.log_sigma, delta);
    const double value = tp.value(L)(0);
    tp.backward(L);
    std::vector<Tensor> grads;
    for (grq::VarId id : pv.ordered) grads.push_back(tp.grad_of(id));
    return {value, grads};
}

// --- tiny CSV reader -----------------------------------------------------------------

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline Csv read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw grq::contract_error("read_csv: cannot open " + path);
    Csv out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (first) {
            out.header = std::move(cells);
            first = false;
        } else {
            out.rows.push_back(std::move(cells));
        }
    }
    return out;
}

}  // namespace oracle
