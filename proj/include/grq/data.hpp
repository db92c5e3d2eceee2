#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "io_util.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grq {

enum class Behavior { periodic_flat, nonperiodic_stair };

inline const char* to_string(Behavior b) {
    return b == Behavior::periodic_flat ? "periodic_flat" : "nonperiodic_stair";
}

inline Behavior behavior_from_string(const std::string& s) {
    if (s == "periodic_flat") return Behavior::periodic_flat;
    if (s == "nonperiodic_stair") return Behavior::nonperiodic_stair;
    throw validation_error("unknown behavior '" + s + "'");
}

// Scripted gait for one morphology: sinusoidal joint targets, optionally
// overlaid with aperiodic stair events (offset ramps, phase drift, gravity
// tilt). Everything the generator does is a closed-form function of the step
// index plus seeded noise, so datasets are exactly reproducible.
struct GaitSpec {
    std::string name = "morph";
    Behavior behavior = Behavior::periodic_flat;
    std::int64_t joints = 12;
    double frequency = 1.0;  // strides per second
    double dt = 0.02;        // control period, seconds
    std::vector<double> amplitude, phase, offset;  // per joint; empty = defaults
    double omega_noise = 0.0;
    std::vector<double> action_noise;  // per-joint target jitter; empty = none
    std::array<double, 3> v_cmd{0.6, 0.0, 0.0};
    // stair-event shape (used by nonperiodic_stair only)
    double ramp_slope = 0.35;    // rad/s while an event is active
    double event_spacing = 0.9;  // seconds between event starts
    double ramp_duration = 0.4;  // seconds each event lasts
    double phase_drift = 0.25;   // rad, slow incommensurate phase modulation
    double tilt = 0.12;          // rad of gravity tilt while ramping
    std::vector<double> robot_enc;  // morphology code, attached on request

    void canonicalize() {
        if (joints < 1) throw validation_error("gait: joints must be >= 1");
        auto fit = [this](std::vector<double>& v, const char* what, double dflt, bool spread) {
            if (v.empty()) {
                v.assign(std::size_t(joints), dflt);
                if (spread)
                    for (std::int64_t j = 0; j < joints; ++j)
                        v[std::size_t(j)] = 6.283185307179586 * double(j) / double(joints);
            } else if (std::int64_t(v.size()) != joints) {
                throw validation_error(std::string("gait: ") + what + " must have one entry per joint");
            }
        };
        fit(amplitude, "amplitude", 0.3, false);
        fit(phase, "phase", 0.0, true);
        fit(offset, "offset", 0.0, false);
        if (!action_noise.empty() && std::int64_t(action_noise.size()) != joints)
            throw validation_error("gait: action_noise must be empty or one entry per joint");
        if (!(frequency > 0.0) || !(dt > 0.0)) throw validation_error("gait: frequency and dt must be positive");
        if (behavior == Behavior::nonperiodic_stair &&
            (!(event_spacing > 0.0) || !(ramp_duration > 0.0)))
            throw validation_error("gait: stair timing must be positive");
        if (omega_noise < 0.0) throw validation_error("gait: omega_noise must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const GaitSpec& s) {
    j = nlohmann::json{{"name", s.name},
                       {"behavior", to_string(s.behavior)},
                       {"joints", s.joints},
                       {"frequency", s.frequency},
                       {"dt", s.dt},
                       {"amplitude", s.amplitude},
                       {"phase", s.phase},
                       {"offset", s.offset},
                       {"omega_noise", s.omega_noise},
                       {"action_noise", s.action_noise},
                       {"v_cmd", s.v_cmd},
                       {"ramp_slope", s.ramp_slope},
                       {"event_spacing", s.event_spacing},
                       {"ramp_duration", s.ramp_duration},
                       {"phase_drift", s.phase_drift},
                       {"tilt", s.tilt},
                       {"robot_enc", s.robot_enc}};
}

inline void from_json(const nlohmann::json& j, GaitSpec& s) {
    s = GaitSpec{};
    s.name = j.value("name", s.name);
    s.behavior = behavior_from_string(j.value("behavior", std::string(to_string(s.behavior))));
    s.joints = j.value("joints", s.joints);
    s.frequency = j.value("frequency", s.frequency);
    s.dt = j.value("dt", s.dt);
    s.amplitude = j.value("amplitude", s.amplitude);
    s.phase = j.value("phase", s.phase);
    s.offset = j.value("offset", s.offset);
    s.omega_noise = j.value("omega_noise", s.omega_noise);
    s.action_noise = j.value("action_noise", s.action_noise);
    s.v_cmd = j.value("v_cmd", s.v_cmd);
    s.ramp_slope = j.value("ramp_slope", s.ramp_slope);
    s.event_spacing = j.value("event_spacing", s.event_spacing);
    s.ramp_duration = j.value("ramp_duration", s.ramp_duration);
    s.phase_drift = j.value("phase_drift", s.phase_drift);
    s.tilt = j.value("tilt", s.tilt);
    s.robot_enc = j.value("robot_enc", s.robot_enc);
}

// One recorded rollout. Rows are f32 — that is the on-disk precision, and
// keeping it here makes save/load an exact identity. `d_obs` is the raw
// observation width; attached robot encodings widen rows to obs_width().
struct Trajectory {
    std::string morphology;
    Behavior behavior = Behavior::periodic_flat;
    std::int64_t n = 0, d_obs = 0, d_act = 0;
    std::vector<float> obs, act;
    std::vector<float> robot_enc;  // non-empty iff an encoding is attached

    std::int64_t enc_width() const { return std::int64_t(robot_enc.size()); }
    std::int64_t obs_width() const { return d_obs + enc_width(); }

    const float* obs_row(std::int64_t t) const { return obs.data() + std::size_t(t) * std::size_t(obs_width()); }
    const float* act_row(std::int64_t t) const { return act.data() + std::size_t(t) * std::size_t(d_act); }

    void check() const {
        if (n < 1 || d_obs < 1 || d_act < 1) throw validation_error("trajectory: empty");
        if (std::int64_t(obs.size()) != n * obs_width() || std::int64_t(act.size()) != n * d_act)
            throw validation_error("trajectory: buffer sizes inconsistent with dims");
    }
};

/// Roll out a scripted gait for `steps` control steps.
inline Trajectory generate_trajectory(GaitSpec spec, std::int64_t steps, std::uint64_t seed) {
    spec.canonicalize();
    if (steps < 1) throw validation_error("generate_trajectory: steps must be >= 1");
    const std::int64_t J = spec.joints;
    const bool stair = spec.behavior == Behavior::nonperiodic_stair;
    const double two_pi = 6.283185307179586;
    const double kappa = 0.6180339887498949;  // incommensurate drift rate

    auto drift = [&](double tau) { return stair ? spec.phase_drift * std::sin(two_pi * spec.frequency * kappa * tau) : 0.0; };
    auto drift_rate = [&](double tau) {
        return stair ? spec.phase_drift * std::cos(two_pi * spec.frequency * kappa * tau) * two_pi *
                           spec.frequency * kappa
                     : 0.0;
    };
    auto stair_offset = [&](double tau) {
        if (!stair) return 0.0;
        double s = 0.0;
        for (std::int64_t k = 1; double(k) * spec.event_spacing < tau; ++k)
            s += spec.ramp_slope * std::min(tau - double(k) * spec.event_spacing, spec.ramp_duration);
        return s;
    };
    auto stair_rate = [&](double tau) {
        if (!stair) return 0.0;
        double r = 0.0;
        for (std::int64_t k = 1; double(k) * spec.event_spacing < tau; ++k)
            if (tau - double(k) * spec.event_spacing < spec.ramp_duration) r += spec.ramp_slope;
        return r;
    };
    auto q_at = [&](std::int64_t t, std::int64_t j) {
        const double tau = double(t) * spec.dt;
        const double arg = two_pi * std::fmod(spec.frequency * tau, 1.0) + spec.phase[std::size_t(j)] + drift(tau);
        return spec.offset[std::size_t(j)] + spec.amplitude[std::size_t(j)] * std::sin(arg) + stair_offset(tau);
    };
    auto dq_at = [&](std::int64_t t, std::int64_t j) {
        const double tau = double(t) * spec.dt;
        const double arg = two_pi * std::fmod(spec.frequency * tau, 1.0) + spec.phase[std::size_t(j)] + drift(tau);
        return spec.amplitude[std::size_t(j)] * std::cos(arg) * (two_pi * spec.frequency + drift_rate(tau)) +
               stair_rate(tau);
    };

    Trajectory traj;
    traj.morphology = spec.name;
    traj.behavior = spec.behavior;
    traj.n = steps;
    traj.d_obs = 4 * J + 9;
    traj.d_act = J;
    traj.obs.assign(std::size_t(steps) * std::size_t(traj.d_obs), 0.0f);
    traj.act.assign(std::size_t(steps) * std::size_t(traj.d_act), 0.0f);

    Rng rng(seed);
    std::vector<double> actions(std::size_t(steps) * std::size_t(J));
    std::vector<double> omega(std::size_t(steps) * 3);
    for (std::int64_t t = 0; t < steps; ++t) {
        for (int c = 0; c < 3; ++c)
            omega[std::size_t(t * 3 + c)] = spec.omega_noise * (2.0 * rng.uniform() - 1.0);
        for (std::int64_t j = 0; j < J; ++j) {
            double a = q_at(t + 1, j);
            if (!spec.action_noise.empty()) a += spec.action_noise[std::size_t(j)] * rng.gaussian();
            actions[std::size_t(t * J + j)] = a;
        }
    }

    for (std::int64_t t = 0; t < steps; ++t) {
        float* o = traj.obs.data() + std::size_t(t) * std::size_t(traj.d_obs);
        std::int64_t k = 0;
        for (std::int64_t j = 0; j < J; ++j) o[k++] = float(q_at(t, j));
        for (std::int64_t j = 0; j < J; ++j) o[k++] = float(dq_at(t, j));
        for (std::int64_t j = 0; j < J; ++j)
            o[k++] = t >= 1 ? float(actions[std::size_t((t - 1) * J + j)]) : 0.0f;
        for (std::int64_t j = 0; j < J; ++j)
            o[k++] = t >= 2 ? float(actions[std::size_t((t - 2) * J + j)]) : 0.0f;
        const double tau = double(t) * spec.dt;
        const double alpha =
            stair && spec.ramp_slope != 0.0 ? spec.tilt * (stair_rate(tau) / spec.ramp_slope) : 0.0;
        o[k++] = float(std::sin(alpha));
        o[k++] = 0.0f;
        o[k++] = float(-std::cos(alpha));
        for (int c = 0; c < 3; ++c) o[k++] = float(omega[std::size_t(t * 3 + c)]);
        for (int c = 0; c < 3; ++c) o[k++] = float(spec.v_cmd[std::size_t(c)]);
        float* arow = traj.act.data() + std::size_t(t) * std::size_t(J);
        for (std::int64_t j = 0; j < J; ++j) arow[std::size_t(j)] = float(actions[std::size_t(t * J + j)]);
    }
    return traj;
}

/// Append a morphology code to every observation row.
inline void attach_robot_encoding(Trajectory& traj, const std::vector<double>& enc) {
    traj.check();
    if (enc.empty()) throw validation_error("attach_robot_encoding: empty code");
    if (!traj.robot_enc.empty()) throw contract_error("attach_robot_encoding: already attached");
    const std::int64_t w = traj.d_obs, we = std::int64_t(enc.size());
    std::vector<float> wide(std::size_t(traj.n) * std::size_t(w + we));
    for (std::int64_t t = 0; t < traj.n; ++t) {
        const float* src = traj.obs.data() + std::size_t(t) * std::size_t(w);
        float* dst = wide.data() + std::size_t(t) * std::size_t(w + we);
        for (std::int64_t j = 0; j < w; ++j) dst[j] = src[j];
        for (std::int64_t j = 0; j < we; ++j) dst[w + j] = float(enc[std::size_t(j)]);
    }
    traj.obs = std::move(wide);
    traj.robot_enc.assign(enc.begin(), enc.end());
}

/// Remove an attached morphology code, restoring the raw rows exactly.
inline void detach_robot_encoding(Trajectory& traj) {
    if (traj.robot_enc.empty()) throw contract_error("detach_robot_encoding: nothing attached");
    const std::int64_t w = traj.d_obs, we = traj.enc_width();
    std::vector<float> narrow(std::size_t(traj.n) * std::size_t(w));
    for (std::int64_t t = 0; t < traj.n; ++t) {
        const float* src = traj.obs.data() + std::size_t(t) * std::size_t(w + we);
        float* dst = narrow.data() + std::size_t(t) * std::size_t(w);
        for (std::int64_t j = 0; j < w; ++j) dst[j] = src[j];
    }
    traj.obs = std::move(narrow);
    traj.robot_enc.clear();
}

// --- batching -------------------------------------------------------------------

struct PaddedBatch {
    Tensor obs;   // [b, N, d_in] f64
    Tensor act;   // [b, N, d_act]
    Tensor mask;  // [b, N], exact 0/1
    std::vector<std::size_t> indices;  // source trajectory per row

    std::int64_t batch() const { return obs.rank() == 3 ? obs.dim(0) : 0; }
    std::int64_t length() const { return obs.rank() == 3 ? obs.dim(1) : 0; }

    /// Observation slice for step t: [b, d_in].
    Tensor obs_at(std::int64_t t) const {
        Tensor s({obs.dim(0), obs.dim(2)});
        for (std::int64_t e = 0; e < obs.dim(0); ++e)
            for (std::int64_t j = 0; j < obs.dim(2); ++j) s(e, j) = obs(e, t, j);
        return s;
    }
};

/// Draw b trajectories uniformly with replacement and right-pad them to the
/// longest draw. Mask is 1 on real steps, 0 on padding; padded observations
/// and targets are zero.
inline PaddedBatch pad_and_batch(const std::vector<Trajectory>& trajs, std::int64_t b, Rng& rng) {
    if (trajs.empty()) throw validation_error("pad_and_batch: empty dataset");
    if (b < 1) throw validation_error("pad_and_batch: batch size must be >= 1");
    const std::int64_t w = trajs[0].obs_width(), da = trajs[0].d_act;
    for (const Trajectory& t : trajs) {
        t.check();
        if (t.obs_width() != w || t.d_act != da)
            throw validation_error("pad_and_batch: trajectories disagree on widths");
    }
    PaddedBatch out;
    out.indices.resize(std::size_t(b));
    std::int64_t n_max = 0;
    for (std::int64_t e = 0; e < b; ++e) {
        out.indices[std::size_t(e)] = rng.index(trajs.size());
        n_max = std::max(n_max, trajs[out.indices[std::size_t(e)]].n);
    }
    out.obs = Tensor({b, n_max, w});
    out.act = Tensor({b, n_max, da});
    out.mask = Tensor({b, n_max});
    for (std::int64_t e = 0; e < b; ++e) {
        const Trajectory& tr = trajs[out.indices[std::size_t(e)]];
        for (std::int64_t t = 0; t < tr.n; ++t) {
            const float* orow = tr.obs_row(t);
            const float* arow = tr.act_row(t);
            for (std::int64_t j = 0; j < w; ++j) out.obs(e, t, j) = double(orow[j]);
            for (std::int64_t j = 0; j < da; ++j) out.act(e, t, j) = double(arow[j]);
            out.mask(e, t) = 1.0;
        }
    }
    return out;
}

inline PaddedBatch pad_and_batch(const std::vector<Trajectory>& trajs, std::int64_t b,
                                 std::uint64_t seed) {
    Rng rng(seed);
    return pad_and_batch(trajs, b, rng);
}

// --- dataset container + file format ---------------------------------------------

struct Dataset {
    std::vector<Trajectory> trajectories;
    nlohmann::json meta;  // provenance: command, seed, resolved config
};

namespace detail {

constexpr char kDatasetMagic[4] = {'G', 'R', 'Q', 'D'};
constexpr std::uint8_t kDatasetVersion = 1;

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
    nlohmann::json header;
    header["meta"] = ds.meta.is_null() ? nlohmann::json::object() : ds.meta;
    header["trajectories"] = nlohmann::json::array();
    for (const Trajectory& t : ds.trajectories) {
        t.check();
        header["trajectories"].push_back({{"morphology", t.morphology},
                                          {"behavior", to_string(t.behavior)},
                                          {"n", t.n},
                                          {"d_obs", t.d_obs},
                                          {"d_act", t.d_act},
                                          {"enc_width", t.enc_width()}});
    }
    const std::string htext = header.dump();

    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), detail::kDatasetMagic, detail::kDatasetMagic + 4);
    bytes.push_back(detail::kDatasetVersion);
    io::put_u32(bytes, std::uint32_t(htext.size()));
    bytes.insert(bytes.end(), htext.begin(), htext.end());
    for (const Trajectory& t : ds.trajectories) {
        io::put_f32_span(bytes, t.obs.data(), t.obs.size());
        io::put_f32_span(bytes, t.act.data(), t.act.size());
        io::put_f32_span(bytes, t.robot_enc.data(), t.robot_enc.size());
    }
    io::write_file(path, bytes);
}

inline Dataset load_dataset(const std::string& path) {
    const std::vector<std::uint8_t> bytes = io::read_file(path);
    if (bytes.size() < 9) throw format_error(format_error_kind::truncated, path + ": shorter than any valid dataset");
    if (std::memcmp(bytes.data(), detail::kDatasetMagic, 4) != 0)
        throw format_error(format_error_kind::bad_magic, path + ": not a dataset file");
    if (bytes[4] != detail::kDatasetVersion)
        throw format_error(format_error_kind::bad_version,
                           path + ": dataset version " + std::to_string(int(bytes[4])) +
                               " not supported (want " + std::to_string(int(detail::kDatasetVersion)) + ")");
    const std::uint32_t hlen = io::get_u32(bytes.data() + 5);
    if (bytes.size() < 9 + std::size_t(hlen))
        throw format_error(format_error_kind::truncated, path + ": header extends past end of file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error_kind::bad_header, path + ": header is not valid JSON: " + e.what());
    }

    Dataset ds;
    std::size_t payload_floats = 0;
    try {
        ds.meta = header.value("meta", nlohmann::json::object());
        for (const auto& jt : header.at("trajectories")) {
            Trajectory t;
            t.morphology = jt.at("morphology").get<std::string>();
            t.behavior = behavior_from_string(jt.at("behavior").get<std::string>());
            t.n = jt.at("n").get<std::int64_t>();
            t.d_obs = jt.at("d_obs").get<std::int64_t>();
            t.d_act = jt.at("d_act").get<std::int64_t>();
            const std::int64_t we = jt.at("enc_width").get<std::int64_t>();
            if (t.n < 1 || t.d_obs < 1 || t.d_act < 1 || we < 0)
                throw format_error(format_error_kind::bad_header, path + ": non-positive dims in header");
            t.robot_enc.assign(std::size_t(we), 0.0f);
            payload_floats += std::size_t(t.n) * std::size_t(t.d_obs + we) +
                              std::size_t(t.n) * std::size_t(t.d_act) + std::size_t(we);
            ds.trajectories.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error_kind::bad_header, path + ": header missing fields: " + e.what());
    } catch (const validation_error& e) {
        throw format_error(format_error_kind::bad_header, path + ": " + e.what());
    }

    const std::size_t want = 9 + std::size_t(hlen) + payload_floats * 4;
    if (bytes.size() != want)
        throw format_error(format_error_kind::truncated,
                           path + ": payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                               std::to_string(want));

    const std::uint8_t* p = bytes.data() + 9 + hlen;
    for (Trajectory& t : ds.trajectories) {
        t.obs.resize(std::size_t(t.n) * std::size_t(t.obs_width()));
        t.act.resize(std::size_t(t.n) * std::size_t(t.d_act));
        for (float& v : t.obs) { v = io::get_f32(p); p += 4; }
        for (float& v : t.act) { v = io::get_f32(p); p += 4; }
        for (float& v : t.robot_enc) { v = io::get_f32(p); p += 4; }
    }
    return ds;
}

}  // namespace grq
