#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "params.hpp"
#include "trainer.hpp"

namespace grq {

// Resolved command configuration: architecture + training schedule + data
// generation recipe. Serialized verbatim into every artifact a command
// produces, so results can always be traced back to their settings.
struct RunConfig {
    ArchConfig arch;
    TrainConfig train;
    std::int64_t data_steps = 200;  // steps per generated trajectory
    std::int64_t data_count = 2;    // trajectories per gait spec
    std::vector<GaitSpec> gaits;

    nlohmann::json resolved() const {
        nlohmann::json j{{"arch", arch}, {"train", train}};
        j["data"] = {{"steps", data_steps}, {"count", data_count}, {"gaits", gaits}};
        return j;
    }
};

namespace cfg {

/// Deep-merge src into dst (objects merge, everything else overwrites).
inline void merge(nlohmann::json& dst, const nlohmann::json& src) {
    if (!dst.is_object() || !src.is_object()) {
        dst = src;
        return;
    }
    for (auto it = src.begin(); it != src.end(); ++it) {
        if (dst.contains(it.key()) && dst[it.key()].is_object() && it.value().is_object())
            merge(dst[it.key()], it.value());
        else
            dst[it.key()] = it.value();
    }
}

/// Expand dotted keys ("train.lr": 0.01) into nested objects; nested objects
/// pass through (and may themselves contain dotted keys).
inline nlohmann::json expand_dotted(const nlohmann::json& in) {
    if (!in.is_object()) throw validation_error("config: top level must be a JSON object");
    nlohmann::json out = nlohmann::json::object();
    for (auto it = in.begin(); it != in.end(); ++it) {
        nlohmann::json value = it.value().is_object() ? expand_dotted(it.value()) : it.value();
        // wrap "a.b.c": v as {"a":{"b":{"c":v}}}, innermost first
        std::vector<std::string> parts;
        const std::string& key = it.key();
        std::size_t start = 0;
        while (true) {
            const std::size_t dot = key.find('.', start);
            parts.push_back(key.substr(start, dot == std::string::npos ? key.size() : dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        for (auto rit = parts.rbegin(); rit != parts.rend(); ++rit) {
            nlohmann::json obj = nlohmann::json::object();
            obj[*rit] = std::move(value);
            value = std::move(obj);
        }
        merge(out, value);
    }
    return out;
}

/// Apply one --set override, e.g. "train.lr=0.005" or "arch.d_emb=32".
/// The value is parsed as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw validation_error("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    nlohmann::json flat = nlohmann::json::object();
    flat[key] = value;
    merge(root, expand_dotted(flat));
}

/// Nested JSON -> RunConfig, with validation.
inline RunConfig parse_run_config(const nlohmann::json& nested) {
    RunConfig rc;
    try {
        if (nested.contains("arch")) rc.arch = nested.at("arch").get<ArchConfig>();
        if (nested.contains("train")) rc.train = nested.at("train").get<TrainConfig>();
        // "loss.delta" is accepted as an alias for train.loss_delta
        if (nested.contains("loss") && nested.at("loss").contains("delta"))
            rc.train.loss_delta = nested.at("loss").at("delta").get<double>();
        if (nested.contains("data")) {
            const auto& d = nested.at("data");
            rc.data_steps = d.value("steps", rc.data_steps);
            rc.data_count = d.value("count", rc.data_count);
            if (d.contains("gaits")) rc.gaits = d.at("gaits").get<std::vector<GaitSpec>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("config: ") + e.what());
    }
    rc.arch.validate();
    rc.train.validate();
    if (rc.data_steps < 1 || rc.data_count < 1)
        throw validation_error("config: data.steps and data.count must be >= 1");
    for (GaitSpec& g : rc.gaits) g.canonicalize();
    return rc;
}

/// Gait set used when a config provides none: two periodic morphologies and
/// one stair morphology, all 12 joints.
inline std::vector<GaitSpec> default_gaits() {
    GaitSpec a;
    a.name = "walker_a";
    a.frequency = 1.0;
    GaitSpec b;
    b.name = "walker_b";
    b.frequency = 1.3;
    b.amplitude.assign(12, 0.25);
    GaitSpec c;
    c.name = "stair_a";
    c.behavior = Behavior::nonperiodic_stair;
    c.frequency = 1.1;
    for (GaitSpec* g : {&a, &b, &c}) g->canonicalize();
    return {a, b, c};
}

}  // namespace cfg
}  // namespace grq
