#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "runtime.hpp"

namespace grq {

namespace detail {

inline std::string fmt_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// Regularized upper incomplete gamma Q(a, x): series for x < a+1, continued
// fraction otherwise (the classic gammp/gammq split).
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw contract_error("gamma_q: domain");
    if (x == 0.0) return 1.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-15) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - lg);
    }
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - lg) * h;
}

}  // namespace detail

// --- residual export -----------------------------------------------------------

struct ResidualRecord {
    std::int64_t joint = 0;
    std::string step_tag;
    double residual = 0.0;
};

struct ResidualSummary {
    std::string step_tag;
    std::vector<double> variance;   // per joint, mean squared residual
    std::vector<double> sigma;      // exp(log_sigma) per joint
    std::vector<double> log_sigma;  // raw learned values
    double pooled_variance = 0.0;
    std::int64_t rows_per_joint = 0;
};

/// Run the deployment forward over every trajectory (fresh state each) and
/// record prediction residuals per joint. Writes a CSV of raw records and a
/// JSON summary comparing empirical residual variance to the learned scales.
inline ResidualSummary export_residuals(const ArchConfig& arch, const ModelParams& params,
                                        const std::vector<Trajectory>& trajs,
                                        const std::string& step_tag, const std::string& csv_path,
                                        const std::string& json_path,
                                        const nlohmann::json& provenance) {
    if (trajs.empty()) throw validation_error("export_residuals: empty dataset");
    Engine<float> eng(arch, params);
    auto state = eng.make_state();
    std::vector<float> obs_row(std::size_t(arch.d_in()));
    std::vector<float> action(std::size_t(arch.d_act));

    std::string csv = "joint,step_tag,residual\n";
    std::vector<double> sq(std::size_t(arch.d_act), 0.0);
    std::int64_t rows = 0;
    double pooled = 0.0;
    for (const Trajectory& tr : trajs) {
        tr.check();
        if (tr.obs_width() != arch.d_in() || tr.d_act != arch.d_act)
            throw dimension_error("export_residuals: trajectory widths do not match architecture");
        eng.reset(state);
        for (std::int64_t t = 0; t < tr.n; ++t) {
            const float* o = tr.obs_row(t);
            for (std::int64_t j = 0; j < arch.d_in(); ++j) obs_row[std::size_t(j)] = o[std::size_t(j)];
            eng.step(obs_row.data(), state, action.data());
            const float* a = tr.act_row(t);
            for (std::int64_t j = 0; j < arch.d_act; ++j) {
                const double r = double(action[std::size_t(j)]) - double(a[std::size_t(j)]);
                csv += std::to_string(j);
                csv += ',';
                csv += step_tag;
                csv += ',';
                csv += detail::fmt_g9(r);
                csv += '\n';
                sq[std::size_t(j)] += r * r;
                pooled += r * r;
            }
            rows += 1;
        }
    }
    io::write_text_file(csv_path, csv);

    ResidualSummary sum;
    sum.step_tag = step_tag;
    sum.rows_per_joint = rows;
    sum.pooled_variance = pooled / double(rows * arch.d_act);
    for (std::int64_t j = 0; j < arch.d_act; ++j) {
        sum.variance.push_back(sq[std::size_t(j)] / double(rows));
        sum.log_sigma.push_back(params.log_sigma(j));
        sum.sigma.push_back(std::exp(params.log_sigma(j)));
    }

    nlohmann::json out{{"step_tag", step_tag},
                       {"rows_per_joint", rows},
                       {"pooled_variance", sum.pooled_variance},
                       {"provenance", provenance.is_null() ? nlohmann::json::object() : provenance}};
    out["per_joint"] = nlohmann::json::array();
    for (std::int64_t j = 0; j < arch.d_act; ++j)
        out["per_joint"].push_back({{"joint", j},
                                    {"residual_variance", sum.variance[std::size_t(j)]},
                                    {"sigma", sum.sigma[std::size_t(j)]},
                                    {"log_sigma", sum.log_sigma[std::size_t(j)]}});
    if (!json_path.empty()) io::write_text_file(json_path, out.dump(2) + "\n");
    return sum;
}

// --- attention export -----------------------------------------------------------

struct AttentionTrace {
    Tensor obs_mean;  // [n_heads, window], position 0 = oldest in window
    Tensor gru_mean;
    std::int64_t samples = 0;  // full-window steps averaged
};

/// Average attention weights over all full-window steps of a rollout and dump
/// them as CSV (source,head,position,mean_weight; newest position last).
inline AttentionTrace export_attention(const ArchConfig& arch, const ModelParams& params,
                                       const Trajectory& traj, const std::string& csv_path,
                                       const nlohmann::json& provenance,
                                       const std::string& json_path = std::string()) {
    traj.check();
    if (traj.obs_width() != arch.d_in())
        throw dimension_error("export_attention: trajectory width does not match architecture");
    if (traj.n < arch.window)
        throw contract_error("export_attention: need at least window=" + std::to_string(arch.window) +
                             " steps, trajectory has " + std::to_string(traj.n));
    Engine<float> eng(arch, params);
    auto state = eng.make_state();
    std::vector<float> obs_row(std::size_t(arch.d_in()));
    std::vector<float> action(std::size_t(arch.d_act));

    AttentionTrace tr;
    tr.obs_mean = Tensor({std::int64_t(arch.n_heads), arch.window});
    tr.gru_mean = Tensor({std::int64_t(arch.n_heads), arch.window});
    for (std::int64_t t = 0; t < traj.n; ++t) {
        const float* o = traj.obs_row(t);
        for (std::int64_t j = 0; j < arch.d_in(); ++j) obs_row[std::size_t(j)] = o[std::size_t(j)];
        eng.step(obs_row.data(), state, action.data());
        if (state.w_len != arch.window) continue;  // window not yet saturated
        for (int h = 0; h < arch.n_heads; ++h)
            for (std::int64_t i = 0; i < arch.window; ++i) {
                tr.obs_mean(h, i) += double(state.w_obs[std::size_t(h) * std::size_t(arch.window) + std::size_t(i)]);
                tr.gru_mean(h, i) += double(state.w_gru[std::size_t(h) * std::size_t(arch.window) + std::size_t(i)]);
            }
        tr.samples += 1;
    }
    if (tr.samples == 0) throw contract_error("export_attention: no full-window steps");
    for (std::size_t i = 0; i < tr.obs_mean.numel(); ++i) {
        tr.obs_mean.data()[i] /= double(tr.samples);
        tr.gru_mean.data()[i] /= double(tr.samples);
    }

    std::string csv = "source,head,position,mean_weight\n";
    auto emit = [&csv, &arch](const char* src, const Tensor& m) {
        for (int h = 0; h < arch.n_heads; ++h)
            for (std::int64_t i = 0; i < arch.window; ++i) {
                csv += src;
                csv += ',';
                csv += std::to_string(h);
                csv += ',';
                csv += std::to_string(i);
                csv += ',';
                csv += detail::fmt_g9(m(h, i));
                csv += '\n';
            }
    };
    emit("obs", tr.obs_mean);
    emit("gru", tr.gru_mean);
    io::write_text_file(csv_path, csv);

    if (!json_path.empty()) {
        nlohmann::json out{{"samples", tr.samples},
                           {"window", arch.window},
                           {"n_heads", arch.n_heads},
                           {"provenance", provenance.is_null() ? nlohmann::json::object() : provenance}};
        io::write_text_file(json_path, out.dump(2) + "\n");
    }
    return tr;
}

// --- uniformity test --------------------------------------------------------------

struct ChiSquareResult {
    double stat = 0.0;
    std::int64_t dof = 0;
    double p_value = 1.0;
};

/// Pearson test of mean attention weights against the uniform 1/W profile,
/// treating each averaged step as one multinomial draw over positions.
inline ChiSquareResult chi_square_uniform(const std::vector<double>& mean_weights,
                                          std::int64_t n_samples) {
    const std::int64_t W = std::int64_t(mean_weights.size());
    if (W < 2) throw contract_error("chi_square_uniform: need at least two positions");
    if (n_samples < 1) throw contract_error("chi_square_uniform: need at least one sample");
    const double u = 1.0 / double(W);
    double stat = 0.0;
    for (double w : mean_weights) stat += (w - u) * (w - u) / u;
    stat *= double(n_samples);
    ChiSquareResult r;
    r.stat = stat;
    r.dof = W - 1;
    r.p_value = detail::gamma_q(double(r.dof) / 2.0, stat / 2.0);
    return r;
}

// --- dataset-level evaluation -------------------------------------------------------

struct EvalReport {
    double mae = 0.0;  // mean |prediction - target| over all joints and steps
    std::int64_t steps = 0;
    std::map<std::string, double> per_morphology;
};

/// Deployment-forward action error over a dataset, fresh state per trajectory.
inline EvalReport evaluate(const ArchConfig& arch, const ModelParams& params,
                           const std::vector<Trajectory>& trajs) {
    if (trajs.empty()) throw validation_error("evaluate: empty dataset");
    Engine<float> eng(arch, params);
    auto state = eng.make_state();
    std::vector<float> obs_row(std::size_t(arch.d_in()));
    std::vector<float> action(std::size_t(arch.d_act));
    EvalReport rep;
    double total_abs = 0.0;
    std::int64_t total_cnt = 0;
    std::map<std::string, std::pair<double, std::int64_t>> per;
    for (const Trajectory& tr : trajs) {
        tr.check();
        if (tr.obs_width() != arch.d_in() || tr.d_act != arch.d_act)
            throw dimension_error("evaluate: trajectory widths do not match architecture");
        eng.reset(state);
        auto& acc = per[tr.morphology];
        for (std::int64_t t = 0; t < tr.n; ++t) {
            const float* o = tr.obs_row(t);
            for (std::int64_t j = 0; j < arch.d_in(); ++j) obs_row[std::size_t(j)] = o[std::size_t(j)];
            eng.step(obs_row.data(), state, action.data());
            const float* a = tr.act_row(t);
            for (std::int64_t j = 0; j < arch.d_act; ++j) {
                const double e = std::abs(double(action[std::size_t(j)]) - double(a[std::size_t(j)]));
                total_abs += e;
                acc.first += e;
            }
            total_cnt += arch.d_act;
            acc.second += arch.d_act;
            rep.steps += 1;
        }
    }
    rep.mae = total_abs / double(total_cnt);
    for (auto& [name, acc] : per) rep.per_morphology[name] = acc.first / double(acc.second);
    return rep;
}

}  // namespace grq
