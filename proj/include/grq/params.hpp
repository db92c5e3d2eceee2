#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rng.hpp"
#include "tensor.hpp"

namespace grq {

// Network dimensions. `d_obs` is the raw observation width; if
// `robot_enc_width` > 0 that many extra features are appended to every
// observation before encoding (per-morphology identity code).
struct ArchConfig {
    std::int64_t d_obs = 57;
    std::int64_t d_act = 12;
    std::int64_t d_emb = 64;
    int n_heads = 4;
    std::int64_t window = 100;
    std::int64_t mlp_hidden = 256;
    int mlp_depth = 2;  // hidden layers before the linear output layer
    std::int64_t robot_enc_width = 0;
    double ln_eps = 1e-5;

    std::int64_t d_in() const { return d_obs + robot_enc_width; }

    void validate() const {
        if (d_obs < 1 || d_act < 1 || d_emb < 2 || window < 1 || mlp_hidden < 1 || mlp_depth < 1 ||
            n_heads < 1 || robot_enc_width < 0)
            throw validation_error("arch: non-positive dimension");
        if (d_emb % n_heads != 0)
            throw validation_error("arch: d_emb " + std::to_string(d_emb) +
                                   " not divisible by n_heads " + std::to_string(n_heads));
        if (!(ln_eps > 0.0)) throw validation_error("arch: ln_eps must be positive");
    }

    bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = nlohmann::json{{"d_obs", a.d_obs},           {"d_act", a.d_act},
                       {"d_emb", a.d_emb},           {"n_heads", a.n_heads},
                       {"window", a.window},         {"mlp_hidden", a.mlp_hidden},
                       {"mlp_depth", a.mlp_depth},   {"robot_enc_width", a.robot_enc_width},
                       {"ln_eps", a.ln_eps}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
    a = ArchConfig{};
    a.d_obs = j.value("d_obs", a.d_obs);
    a.d_act = j.value("d_act", a.d_act);
    a.d_emb = j.value("d_emb", a.d_emb);
    a.n_heads = j.value("n_heads", a.n_heads);
    a.window = j.value("window", a.window);
    a.mlp_hidden = j.value("mlp_hidden", a.mlp_hidden);
    a.mlp_depth = j.value("mlp_depth", a.mlp_depth);
    a.robot_enc_width = j.value("robot_enc_width", a.robot_enc_width);
    a.ln_eps = j.value("ln_eps", a.ln_eps);
}

// All learnable tensors. Field order below is the canonical parameter order:
// serialization manifests, gradient vectors and optimizer moments all follow
// the order produced by for_each().
struct ModelParams {
    Tensor enc_w, enc_b, ln_gamma, ln_beta;
    Tensor obs_q, obs_k, obs_v, obs_o;
    Tensor gru_wz, gru_uz, gru_bz;
    Tensor gru_wr, gru_ur, gru_br;
    Tensor gru_wn, gru_un, gru_bn;
    Tensor gru_q, gru_k, gru_v, gru_o;
    std::vector<Tensor> mlp_w, mlp_b;  // mlp_depth hidden layers + 1 output layer
    Tensor log_sigma;

    template <typename F>
    void for_each(F&& f) {
        f("enc.w", enc_w);
        f("enc.b", enc_b);
        f("enc.ln_gamma", ln_gamma);
        f("enc.ln_beta", ln_beta);
        f("attn_obs.q", obs_q);
        f("attn_obs.k", obs_k);
        f("attn_obs.v", obs_v);
        f("attn_obs.o", obs_o);
        f("gru.wz", gru_wz);
        f("gru.uz", gru_uz);
        f("gru.bz", gru_bz);
        f("gru.wr", gru_wr);
        f("gru.ur", gru_ur);
        f("gru.br", gru_br);
        f("gru.wn", gru_wn);
        f("gru.un", gru_un);
        f("gru.bn", gru_bn);
        f("attn_gru.q", gru_q);
        f("attn_gru.k", gru_k);
        f("attn_gru.v", gru_v);
        f("attn_gru.o", gru_o);
        for (std::size_t i = 0; i < mlp_w.size(); ++i) {
            f("mlp.w" + std::to_string(i), mlp_w[i]);
            f("mlp.b" + std::to_string(i), mlp_b[i]);
        }
        f("log_sigma", log_sigma);
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each(
            [&f](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
        return n;
    }

    /// Shapes-only instance, everything zero.
    static ModelParams zeros(const ArchConfig& a) {
        a.validate();
        const std::int64_t d = a.d_emb, din = a.d_in(), h = a.mlp_hidden, da = a.d_act;
        ModelParams p;
        p.enc_w = Tensor({din, d});
        p.enc_b = Tensor({d});
        p.ln_gamma = Tensor({d});
        p.ln_beta = Tensor({d});
        for (Tensor* t : {&p.obs_q, &p.obs_k, &p.obs_v, &p.obs_o, &p.gru_q, &p.gru_k, &p.gru_v, &p.gru_o})
            *t = Tensor({d, d});
        for (Tensor* t : {&p.gru_wz, &p.gru_wr, &p.gru_wn}) *t = Tensor({2 * d, d});
        for (Tensor* t : {&p.gru_uz, &p.gru_ur, &p.gru_un}) *t = Tensor({d, d});
        for (Tensor* t : {&p.gru_bz, &p.gru_br, &p.gru_bn}) *t = Tensor({d});
        p.mlp_w.resize(std::size_t(a.mlp_depth) + 1);
        p.mlp_b.resize(std::size_t(a.mlp_depth) + 1);
        std::int64_t in = 3 * d;
        for (int i = 0; i < a.mlp_depth; ++i) {
            p.mlp_w[std::size_t(i)] = Tensor({in, h});
            p.mlp_b[std::size_t(i)] = Tensor({h});
            in = h;
        }
        p.mlp_w.back() = Tensor({in, da});
        p.mlp_b.back() = Tensor({da});
        p.log_sigma = Tensor({da});
        return p;
    }

    /// Seeded init: weight matrices U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn
    /// in canonical order, biases 0, layer-norm gain 1 / offset 0, log-sigma 0.
    static ModelParams init(const ArchConfig& a, std::uint64_t seed) {
        ModelParams p = zeros(a);
        Rng rng(seed);
        p.for_each([&rng](const std::string&, Tensor& t) {
            if (t.rank() != 2) return;  // vectors keep their fixed init
            const double s = 1.0 / std::sqrt(double(t.dim(0)));
            for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-s, s);
        });
        p.ln_gamma.fill(1.0);
        return p;
    }

    /// Closed-form parameter count for an architecture.
    static std::size_t expected_size(const ArchConfig& a) {
        const std::size_t d = std::size_t(a.d_emb), din = std::size_t(a.d_in()),
                          h = std::size_t(a.mlp_hidden), da = std::size_t(a.d_act),
                          depth = std::size_t(a.mlp_depth);
        return din * d + 3 * d       // encoder + layer norm
               + 8 * d * d           // two attention blocks, 4 projections each
               + 9 * d * d + 3 * d   // gru gates
               + 3 * d * h + h       // mlp input layer
               + (depth - 1) * (h * h + h)  // further hidden layers
               + h * da + da         // mlp output layer
               + da;                 // log_sigma
    }
};

/// Largest |a - b| over all parameters; shapes must agree.
inline double max_param_diff(const ModelParams& a, const ModelParams& b) {
    double m = 0.0;
    auto* bp = const_cast<ModelParams*>(&b);
    std::vector<const Tensor*> bt;
    bp->for_each([&bt](const std::string&, Tensor& t) { bt.push_back(&t); });
    std::size_t i = 0;
    a.for_each([&](const std::string& name, const Tensor& t) {
        if (!t.same_shape(*bt[i]))
            throw dimension_error("param diff: shape mismatch at " + name);
        for (std::size_t k = 0; k < t.numel(); ++k)
            m = std::max(m, std::abs(t.data()[k] - bt[i]->data()[k]));
        ++i;
    });
    return m;
}

}  // namespace grq
