#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgrid/adversary.hpp"
#include "mgrid/common.hpp"
#include "mgrid/loads.hpp"
#include "mgrid/params.hpp"
#include "mgrid/robustify.hpp"

namespace mgrid {

enum class Strategy { nominal, robust, resilient };

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "nominal") return Strategy::nominal;
    if (s == "robust") return Strategy::robust;
    if (s == "resilient") return Strategy::resilient;
    throw ConfigError("unknown strategy '" + s + "' (expected nominal, robust or resilient)");
}

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::nominal: return "nominal";
        case Strategy::robust: return "robust";
        case Strategy::resilient: return "resilient";
    }
    return "?";
}

struct AgentSpec {
    MicrogridParams params;
    LoadProfile profile = LoadProfile::residential;
    double peak = 600.0;
};

struct ScenarioConfig {
    NetworkTopology topology;
    std::vector<AgentSpec> agents;
    int hp = 4;
    int steps = 96;
    Strategy strategy = Strategy::resilient;
    bool attacks_enabled = true;
    bool load_noise_enabled = true;
    std::vector<AdversaryPolicy> adversaries;  // agent_id is 0-based internally
    double assumed_attack_probability = 0.3;
    double gamma_step = 0.05;
    double gamma_weight = 2.0e6;
    double epsilon = 1e-3;
    int neg_max_iter = 5000;
    bool diminishing_steps = false;
    double lock_threshold = 1e-6;
    bool allow_assumption_violations = false;
    bool oracle_gap = false;
};

namespace detail {

inline double get_num(const nlohmann::json& j, const std::string& key, double fallback,
                      bool* present = nullptr) {
    if (j.contains(key)) {
        if (!j.at(key).is_number()) throw ConfigError("field '" + key + "' must be a number");
        if (present) *present = true;
        return j.at(key).get<double>();
    }
    if (present) *present = false;
    return fallback;
}

inline void apply_agent_fields(MicrogridParams& p, LoadProfile& profile, double& peak,
                               const nlohmann::json& j) {
    p.x_min = get_num(j, "x_min", p.x_min);
    p.x_max = get_num(j, "x_max", p.x_max);
    p.x0 = get_num(j, "x0", p.x0);
    p.p_ch = get_num(j, "p_ch", p.p_ch);
    p.p_dh = get_num(j, "p_dh", p.p_dh);
    p.p_gen_min = get_num(j, "p_gen_min", p.p_gen_min);
    p.p_gen_max = get_num(j, "p_gen_max", p.p_gen_max);
    p.p_import_max = get_num(j, "p_import_max", p.p_import_max);
    p.e_cap = get_num(j, "e_cap", p.e_cap);
    p.storage_eff = get_num(j, "storage_eff", p.storage_eff);
    p.c_storage = get_num(j, "c_storage", p.c_storage);
    p.c_gen = get_num(j, "c_gen", p.c_gen);
    p.c_import = get_num(j, "c_import", p.c_import);
    p.c_transfer = get_num(j, "c_transfer", p.c_transfer);
    p.d_max = get_num(j, "d_max", p.d_max);
    if (j.contains("load_profile")) profile = load_profile_from_string(j.at("load_profile").get<std::string>());
    peak = get_num(j, "load_peak", peak);
}

}  // namespace detail

// Parses the structured scenario description. Agent ids in the file are
// 1-based to match operator conventions; everything is 0-based internally.
inline ScenarioConfig parse_config(const nlohmann::json& j) {
    ScenarioConfig cfg;
    if (!j.contains("topology")) throw ConfigError("missing 'topology' section");
    const auto& jt = j.at("topology");
    if (!jt.contains("n_agents")) throw ConfigError("topology.n_agents is required");
    cfg.topology.n_agents = jt.at("n_agents").get<int>();
    cfg.topology.sampling_time = detail::get_num(jt, "sampling_time_hours", 0.25);
    double default_limit = detail::get_num(jt, "p_t_max", 100.0);
    if (default_limit <= 0) throw ConfigError("topology.p_t_max must be positive");
    if (!jt.contains("edges") || !jt.at("edges").is_array())
        throw ConfigError("topology.edges must be an array of [i, j] pairs");
    std::map<std::pair<int, int>, double> overrides;
    if (jt.contains("p_t_max_overrides")) {
        for (const auto& o : jt.at("p_t_max_overrides")) {
            if (!o.is_array() || o.size() != 3) throw ConfigError("p_t_max_overrides entries are [i, j, limit]");
            int a = o.at(0).get<int>() - 1, b = o.at(1).get<int>() - 1;
            if (a > b) std::swap(a, b);
            overrides[{a, b}] = o.at(2).get<double>();
        }
    }
    for (const auto& e : jt.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw ConfigError("each edge is an [i, j] pair");
        NetworkTopology::Edge edge;
        edge.a = e.at(0).get<int>() - 1;
        edge.b = e.at(1).get<int>() - 1;
        if (edge.a > edge.b) std::swap(edge.a, edge.b);
        auto it = overrides.find({edge.a, edge.b});
        edge.p_t_max = it != overrides.end() ? it->second : default_limit;
        cfg.topology.edges.push_back(edge);
    }
    cfg.topology.finalize();

    if (j.contains("horizon")) cfg.hp = static_cast<int>(detail::get_num(j.at("horizon"), "h_p", 4));
    if (cfg.hp <= 0) throw ConfigError("horizon.h_p must be positive");

    MicrogridParams defaults;
    LoadProfile default_profile = LoadProfile::residential;
    double default_peak = 600.0;
    if (j.contains("agent_defaults"))
        detail::apply_agent_fields(defaults, default_profile, default_peak, j.at("agent_defaults"));

    cfg.agents.assign(static_cast<size_t>(cfg.topology.n_agents), {defaults, default_profile, default_peak});
    if (j.contains("agents")) {
        for (const auto& ja : j.at("agents")) {
            if (!ja.contains("id")) throw ConfigError("each agents[] entry needs an 'id'");
            int id = ja.at("id").get<int>() - 1;
            if (id < 0 || id >= cfg.topology.n_agents)
                throw ConfigError("agent id " + std::to_string(id + 1) + " out of range");
            auto& spec = cfg.agents[static_cast<size_t>(id)];
            detail::apply_agent_fields(spec.params, spec.profile, spec.peak, ja);
        }
    }
    for (auto& spec : cfg.agents)
        spec.params.soc_per_kw = -cfg.topology.sampling_time / spec.params.e_cap;

    if (j.contains("scenario")) {
        const auto& js = j.at("scenario");
        if (js.contains("strategy")) cfg.strategy = strategy_from_string(js.at("strategy").get<std::string>());
        cfg.steps = static_cast<int>(detail::get_num(js, "steps", 96));
        if (cfg.steps <= 0) throw ConfigError("scenario.steps must be positive");
        if (js.contains("attacks_enabled")) cfg.attacks_enabled = js.at("attacks_enabled").get<bool>();
        if (js.contains("load_noise_enabled")) cfg.load_noise_enabled = js.at("load_noise_enabled").get<bool>();
        cfg.assumed_attack_probability = detail::get_num(js, "assumed_attack_probability", 0.3);
        cfg.gamma_step = detail::get_num(js, "gamma_step", 0.05);
        cfg.gamma_weight = detail::get_num(js, "gamma_weight", 2.0e6);
        cfg.epsilon = detail::get_num(js, "epsilon", 1e-3);
        cfg.neg_max_iter = static_cast<int>(detail::get_num(js, "max_iter", 5000));
        if (js.contains("diminishing_steps")) cfg.diminishing_steps = js.at("diminishing_steps").get<bool>();
        cfg.lock_threshold = detail::get_num(js, "lock_threshold", 1e-6);
        if (js.contains("allow_assumption_violations"))
            cfg.allow_assumption_violations = js.at("allow_assumption_violations").get<bool>();
        if (js.contains("oracle_gap")) cfg.oracle_gap = js.at("oracle_gap").get<bool>();
        if (js.contains("adversaries")) {
            for (const auto& ja : js.at("adversaries")) {
                AdversaryPolicy pol;
                if (!ja.contains("id")) throw ConfigError("each adversaries[] entry needs an 'id'");
                pol.agent_id = ja.at("id").get<int>() - 1;
                if (pol.agent_id < 0 || pol.agent_id >= cfg.topology.n_agents)
                    throw ConfigError("adversary id out of range");
                pol.attack_probability = detail::get_num(ja, "attack_probability", 0.3);
                pol.magnitude_fraction = detail::get_num(ja, "magnitude_fraction", 1.0);
                if (pol.attack_probability < 0 || pol.attack_probability > 1)
                    throw ConfigError("attack_probability must be in [0,1]");
                if (pol.magnitude_fraction < 0) throw ConfigError("magnitude_fraction must be nonnegative");
                cfg.adversaries.push_back(pol);
            }
        }
    }
    return cfg;
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse_config(j);
}

// Full validation pass: type invariants, the at-most-one-adversarial-neighbor
// assumption, dispatchability, and (for the tightened strategies) the
// worst-case feasibility gate. Returns human-readable warnings; throws
// ConfigError on hard violations.
inline std::vector<std::string> validate_config(const ScenarioConfig& cfg) {
    std::vector<std::string> warnings;
    for (int i = 0; i < cfg.topology.n_agents; ++i) {
        const auto& spec = cfg.agents[static_cast<size_t>(i)];
        try {
            for (auto& w : spec.params.validate())
                warnings.push_back("agent " + std::to_string(i + 1) + ": " + w);
        } catch (const ConfigError& e) {
            throw ConfigError("agent " + std::to_string(i + 1) + ": " + e.what());
        }
        if (spec.peak <= 0) throw ConfigError("agent " + std::to_string(i + 1) + ": load peak must be positive");
        double worst_load = spec.peak + spec.params.d_max;
        if (spec.params.p_gen_max + spec.params.p_import_max < worst_load + spec.params.p_ch)
            warnings.push_back("agent " + std::to_string(i + 1) +
                               ": generation plus import may not cover peak load while charging");
    }
    std::vector<char> adversarial(static_cast<size_t>(cfg.topology.n_agents), 0);
    for (const auto& pol : cfg.adversaries) {
        if (adversarial[static_cast<size_t>(pol.agent_id)])
            throw ConfigError("agent " + std::to_string(pol.agent_id + 1) + " listed as adversary twice");
        adversarial[static_cast<size_t>(pol.agent_id)] = 1;
    }
    for (int i = 0; i < cfg.topology.n_agents; ++i) {
        int count = 0;
        for (int nb : cfg.topology.neighbors(i)) count += adversarial[static_cast<size_t>(nb)];
        if (count > 1) {
            std::string msg = "agent " + std::to_string(i + 1) + " has " + std::to_string(count) +
                              " adversarial neighbors (at most one is supported)";
            if (cfg.allow_assumption_violations)
                warnings.push_back(msg + " — override in force");
            else
                throw ConfigError(msg);
        }
    }
    if (cfg.strategy != Strategy::nominal) {
        for (int i = 0; i < cfg.topology.n_agents; ++i) {
            const auto& p = cfg.agents[static_cast<size_t>(i)].params;
            double w = worst_case_disturbance(cfg.topology.neighbor_limits(i), p.d_max);
            if (!feasibility_condition(p, w))
                throw ConfigError("agent " + std::to_string(i + 1) +
                                  ": worst-case disturbance " + std::to_string(w) +
                                  " exceeds the storage feasibility threshold " +
                                  std::to_string(feasibility_threshold(p)));
            if (p.d_max >= p.p_ch)
                warnings.push_back("agent " + std::to_string(i + 1) +
                                   ": d_max >= p_ch leaves no safe recovery charging rate");
        }
    }
    if (!(cfg.assumed_attack_probability > 0.0 && cfg.assumed_attack_probability <= 1.0))
        throw ConfigError("assumed_attack_probability must be in (0,1]");
    if (!(cfg.gamma_step > 0.0 && cfg.gamma_step < 1.0)) throw ConfigError("gamma_step must be in (0,1)");
    if (cfg.gamma_weight <= 0) throw ConfigError("gamma_weight must be positive");
    if (cfg.epsilon <= 0) throw ConfigError("epsilon must be positive");
    if (cfg.neg_max_iter <= 0) throw ConfigError("max_iter must be positive");
    if (!(cfg.lock_threshold > 0.0 && cfg.lock_threshold < 0.5))
        throw ConfigError("lock_threshold must be a small positive probability tolerance");
    return warnings;
}

// Convenience view used by the reporting layer.
inline std::pair<NetworkTopology, std::vector<MicrogridParams>> build_network(const ScenarioConfig& cfg) {
    std::vector<MicrogridParams> params;
    for (const auto& a : cfg.agents) params.push_back(a.params);
    return {cfg.topology, params};
}

}  // namespace mgrid
