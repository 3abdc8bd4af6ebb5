#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mgrid/common.hpp"
#include "mgrid/config.hpp"
#include "mgrid/orchestrator.hpp"

namespace mgrid {

namespace csv {

// Fixed schemas; tests assert these strings verbatim.
inline constexpr const char* kSocHeader = "step,agent,soc,x_min,x_max";
inline constexpr const char* kDetectionsHeader =
    "step,agent,delta,threshold,attacked,n_at,hypothesis,probability";
inline constexpr const char* kConnectionsHeader = "step,agent,neighbor,v_own,edge_active";
inline constexpr const char* kTransfersHeader = "step,agent_lo,agent_hi,negotiated_kw,realized_kw";
inline constexpr const char* kCostsHeader = "step,agent,stage_cost,subopt_bound,measured_gap";
inline constexpr const char* kSummaryHeader =
    "scenario,strategy,total_cost,normalized_cost,soc_violations_regular,violations_regular,"
    "constraints_satisfied,avg_subopt_bound_pct,avg_measured_gap_pct";

// Decimal text with 12 significant digits, locale-independent.
inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace csv

// Writes the closed-loop time series as CSV files (soc, detections,
// connections, transfers, costs) under out_dir. Agent ids are 1-based as in
// the configuration file.
inline void write_timeseries_csv(const ScenarioResult& r, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto open = [&](const char* name, const char* header) {
        std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
        if (!f) throw std::runtime_error(std::string("cannot write ") + name + " in " + out_dir);
        f << header << "\n";
        return f;
    };

    {
        auto f = open("soc.csv", csv::kSocHeader);
        for (int k = 0; k < r.steps; ++k)
            for (int i = 0; i < r.n_agents; ++i)
                f << k << ',' << i + 1 << ',' << csv::num(r.soc[static_cast<size_t>(k)][static_cast<size_t>(i)])
                  << ',' << csv::num(r.x_min[static_cast<size_t>(i)]) << ','
                  << csv::num(r.x_max[static_cast<size_t>(i)]) << "\n";
    }
    {
        auto f = open("detections.csv", csv::kDetectionsHeader);
        for (int k = 0; k < r.steps; ++k) {
            for (int i = 0; i < r.n_agents; ++i) {
                const Vec& post = r.posterior[static_cast<size_t>(k)][static_cast<size_t>(i)];
                if (post.size() == 0) continue;  // agent runs no identification
                std::ostringstream prefix;
                prefix << k << ',' << i + 1 << ','
                       << csv::num(r.delta[static_cast<size_t>(k)][static_cast<size_t>(i)]) << ','
                       << csv::num(r.threshold[static_cast<size_t>(k)][static_cast<size_t>(i)]) << ','
                       << int(r.attacked[static_cast<size_t>(k)][static_cast<size_t>(i)]) << ','
                       << r.attack_count[static_cast<size_t>(k)][static_cast<size_t>(i)];
                f << prefix.str() << ",0," << csv::num(post(0)) << "\n";
                for (size_t p = 0; p < r.neighbor_ids[static_cast<size_t>(i)].size(); ++p)
                    f << prefix.str() << ',' << r.neighbor_ids[static_cast<size_t>(i)][p] + 1 << ','
                      << csv::num(post(1 + static_cast<Eigen::Index>(p))) << "\n";
            }
        }
    }
    {
        auto f = open("connections.csv", csv::kConnectionsHeader);
        for (int k = 0; k < r.steps; ++k)
            for (int i = 0; i < r.n_agents; ++i)
                for (size_t p = 0; p < r.neighbor_ids[static_cast<size_t>(i)].size(); ++p)
                    f << k << ',' << i + 1 << ',' << r.neighbor_ids[static_cast<size_t>(i)][p] + 1 << ','
                      << r.v_own[static_cast<size_t>(k)][static_cast<size_t>(i)][p] << ','
                      << r.edge_active_agent[static_cast<size_t>(k)][static_cast<size_t>(i)][p] << "\n";
    }
    {
        auto f = open("transfers.csv", csv::kTransfersHeader);
        for (int k = 0; k < r.steps; ++k)
            for (size_t e = 0; e < r.edges.size(); ++e)
                f << k << ',' << r.edges[e].first + 1 << ',' << r.edges[e].second + 1 << ','
                  << csv::num(r.edge_negotiated[static_cast<size_t>(k)][e]) << ','
                  << csv::num(r.edge_realized[static_cast<size_t>(k)][e]) << "\n";
    }
    {
        auto f = open("costs.csv", csv::kCostsHeader);
        for (int k = 0; k < r.steps; ++k)
            for (int i = 0; i < r.n_agents; ++i)
                f << k << ',' << i + 1 << ','
                  << csv::num(r.stage_cost_realized[static_cast<size_t>(k)][static_cast<size_t>(i)]) << ','
                  << csv::num(r.subopt_bound[static_cast<size_t>(k)][static_cast<size_t>(i)]) << ','
                  << csv::num(r.measured_gap[static_cast<size_t>(k)][static_cast<size_t>(i)]) << "\n";
    }
}

struct ScenarioSummary {
    int scenario = 0;
    Strategy strategy = Strategy::nominal;
    double total_cost = 0.0;
    double normalized_cost = 0.0;
    int soc_violations_regular = 0;
    int violations_regular = 0;
    double avg_bound_pct = std::numeric_limits<double>::quiet_NaN();
    double avg_gap_pct = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentSummary {
    std::vector<ScenarioSummary> rows;
    std::vector<ScenarioResult> results;  // aligned with rows
};

// The four standard presets: the baseline strategy with a clean day, the
// baseline under attacks and load error, the always-tightened strategy, and
// the identification-and-blocking strategy. Compared runs share the load
// realizations and the attack event streams so cost differences isolate the
// strategy.
inline ScenarioConfig scenario_preset(const ScenarioConfig& base, int scenario) {
    ScenarioConfig cfg = base;
    switch (scenario) {
        case 1:
            cfg.strategy = Strategy::nominal;
            cfg.attacks_enabled = false;
            cfg.load_noise_enabled = false;
            cfg.oracle_gap = false;
            break;
        case 2:
            cfg.strategy = Strategy::nominal;
            cfg.attacks_enabled = true;
            cfg.load_noise_enabled = true;
            cfg.oracle_gap = false;
            break;
        case 3:
            cfg.strategy = Strategy::robust;
            cfg.attacks_enabled = true;
            cfg.load_noise_enabled = true;
            cfg.oracle_gap = false;
            break;
        case 4:
            cfg.strategy = Strategy::resilient;
            cfg.attacks_enabled = true;
            cfg.load_noise_enabled = true;
            cfg.oracle_gap = true;
            break;
        default:
            throw ConfigError("scenario number must be 1..4");
    }
    return cfg;
}

inline std::vector<LoadTrace> shared_load_traces(const ScenarioConfig& cfg, std::uint64_t seed) {
    std::vector<LoadTrace> loads;
    for (int i = 0; i < cfg.topology.n_agents; ++i) {
        auto rng = make_stream(seed, "load", static_cast<std::uint64_t>(i));
        const auto& spec = cfg.agents[static_cast<size_t>(i)];
        loads.push_back(generate_loads(spec.profile, spec.peak, spec.params.d_max, cfg.steps, rng));
    }
    return loads;
}

inline ExperimentSummary run_experiment(const ScenarioConfig& base, std::uint64_t seed) {
    validate_config(base);
    std::vector<LoadTrace> loads = shared_load_traces(base, seed);
    ExperimentSummary summary;
    for (int s = 1; s <= 4; ++s) {
        ScenarioConfig cfg = scenario_preset(base, s);
        ScenarioResult res = run_scenario(cfg, seed, &loads);
        ScenarioSummary row;
        row.scenario = s;
        row.strategy = cfg.strategy;
        row.total_cost = res.total_cost;
        row.soc_violations_regular = res.count_violations("soc_low", true) +
                                     res.count_violations("soc_high", true);
        row.violations_regular = res.count_violations("", true);
        summary.rows.push_back(row);
        summary.results.push_back(std::move(res));
    }
    double baseline = summary.rows[0].total_cost;
    for (auto& row : summary.rows) row.normalized_cost = row.total_cost / baseline;
    for (size_t s = 0; s < summary.rows.size(); ++s) {
        const auto& res = summary.results[s];
        double bound_sum = 0.0, gap_sum = 0.0;
        bool has_gap = res.oracle_enabled;
        for (int k = 0; k < res.steps; ++k)
            for (int i = 0; i < res.n_agents; ++i) {
                bound_sum += res.subopt_bound[static_cast<size_t>(k)][static_cast<size_t>(i)];
                if (has_gap) gap_sum += res.measured_gap[static_cast<size_t>(k)][static_cast<size_t>(i)];
            }
        summary.rows[s].avg_bound_pct = 100.0 * bound_sum / baseline;
        if (has_gap) summary.rows[s].avg_gap_pct = 100.0 * gap_sum / baseline;
    }
    return summary;
}

inline void write_summary_csv(const ExperimentSummary& summary, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write summary to " + path);
    f << csv::kSummaryHeader << "\n";
    for (const auto& row : summary.rows)
        f << row.scenario << ',' << to_string(row.strategy) << ',' << csv::num(row.total_cost) << ','
          << csv::num(row.normalized_cost) << ',' << row.soc_violations_regular << ','
          << row.violations_regular << ',' << (row.violations_regular == 0 ? "yes" : "no") << ','
          << csv::num(row.avg_bound_pct) << ',' << csv::num(row.avg_gap_pct) << "\n";
}

inline std::string render_summary_table(const ExperimentSummary& summary) {
    std::ostringstream os;
    os << "scenario  strategy   norm.cost  violations(regular)  constraint-satisfaction\n";
    for (const auto& row : summary.rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%8d  %-9s  %9.4f  %19d  %s\n", row.scenario,
                      to_string(row.strategy), row.normalized_cost, row.violations_regular,
                      row.violations_regular == 0 ? "yes" : "no");
        os << buf;
    }
    return os.str();
}

}  // namespace mgrid
