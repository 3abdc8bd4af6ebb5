#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mgrid/common.hpp"

namespace mgrid {

// Static physical and economic parameters of one microgrid. Power in kW,
// energy in kWh, state of charge as a dimensionless fraction.
struct MicrogridParams {
    double x_min = 0.4;
    double x_max = 0.7;
    double x0 = 0.55;
    double p_ch = 300.0;   // max charging power
    double p_dh = 300.0;   // max discharging power
    double p_gen_min = 0.0;
    double p_gen_max = 1500.0;
    double p_import_max = 2000.0;
    double e_cap = 1000.0;      // storage capacity, kWh
    double storage_eff = 1.0;   // SoC carry-over factor per step, in (0,1]
    double c_storage = 1.0;
    double c_gen = 10.0;
    double c_import = 250.0;
    double c_transfer = 0.1;
    double d_max = 50.0;        // load-forecast error bound, kW
    double soc_per_kw = -2.5e-4;  // = -T_s / e_cap; set by build_network

    std::vector<std::string> validate() const {
        std::vector<std::string> warnings;
        if (!(0.0 <= x_min && x_min <= x_max && x_max <= 1.0))
            throw ConfigError("SoC bounds inverted or outside [0,1]");
        if (!(x_min <= x0 && x0 <= x_max))
            throw ConfigError("initial SoC outside [x_min, x_max]");
        if (p_ch < 0 || p_dh < 0) throw ConfigError("storage power limits must be nonnegative");
        if (p_gen_min < 0 || p_gen_min > p_gen_max) throw ConfigError("generation bounds invalid");
        if (p_import_max < 0) throw ConfigError("import bound must be nonnegative");
        if (e_cap <= 0) throw ConfigError("storage capacity must be positive");
        if (!(storage_eff > 0.0 && storage_eff <= 1.0)) throw ConfigError("storage efficiency must be in (0,1]");
        if (c_storage <= 0 || c_gen <= 0 || c_import <= 0 || c_transfer <= 0)
            throw ConfigError("cost weights must be strictly positive");
        if (d_max < 0) throw ConfigError("load error bound must be nonnegative");
        if (soc_per_kw >= 0) throw ConfigError("soc_per_kw must be negative (-T_s / e_cap)");
        if (c_transfer >= std::min({c_storage, c_gen, c_import}))
            warnings.push_back("transfer weight c_t is not the smallest cost weight");
        return warnings;
    }
};

// Undirected microgrid graph with per-edge symmetric transfer limits.
struct NetworkTopology {
    struct Edge {
        int a, b;          // agent indices, a < b
        double p_t_max;    // kW, same in both directions
    };

    int n_agents = 0;
    double sampling_time = 0.25;  // hours
    std::vector<Edge> edges;

    void finalize() {
        if (n_agents <= 0) throw ConfigError("topology needs at least one agent");
        if (sampling_time <= 0) throw ConfigError("sampling time must be positive");
        for (auto& e : edges) {
            if (e.a == e.b) throw ConfigError("topology contains a self-loop");
            if (e.a < 0 || e.b < 0 || e.a >= n_agents || e.b >= n_agents)
                throw ConfigError("edge references unknown agent");
            if (e.p_t_max <= 0) throw ConfigError("transfer limit must be positive");
            if (e.a > e.b) std::swap(e.a, e.b);
        }
        std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
            return std::tie(x.a, x.b) < std::tie(y.a, y.b);
        });
        for (size_t i = 1; i < edges.size(); ++i)
            if (edges[i - 1].a == edges[i].a && edges[i - 1].b == edges[i].b)
                throw ConfigError("duplicate edge in topology");
        neighbors_.assign(static_cast<size_t>(n_agents), {});
        for (const auto& e : edges) {
            neighbors_[static_cast<size_t>(e.a)].push_back(e.b);
            neighbors_[static_cast<size_t>(e.b)].push_back(e.a);
        }
        for (auto& ns : neighbors_) std::sort(ns.begin(), ns.end());  // canonical order
    }

    const std::vector<int>& neighbors(int agent) const { return neighbors_.at(static_cast<size_t>(agent)); }

    bool has_edge(int i, int j) const { return edge_limit(i, j) > 0.0; }

    double edge_limit(int i, int j) const {
        if (i > j) std::swap(i, j);
        for (const auto& e : edges)
            if (e.a == i && e.b == j) return e.p_t_max;
        return 0.0;
    }

    // Transfer limits toward each neighbor of `agent`, canonical order.
    std::vector<double> neighbor_limits(int agent) const {
        std::vector<double> out;
        for (int j : neighbors(agent)) out.push_back(edge_limit(agent, j));
        return out;
    }

private:
    std::vector<std::vector<int>> neighbors_;
};

// One dispatch decision: storage (+ = discharge), generation, main-grid
// import, and the power received from each neighbor (canonical order).
struct ControlInput {
    double storage = 0.0;
    double generation = 0.0;
    double import_power = 0.0;
    std::vector<std::pair<int, double>> transfers;  // (neighbor id, received kW)

    int dim() const { return 3 + static_cast<int>(transfers.size()); }
};

inline double stage_cost(const ControlInput& u, const MicrogridParams& p) {
    double c = p.c_storage * u.storage * u.storage + p.c_gen * u.generation * u.generation +
               p.c_import * u.import_power * u.import_power;
    for (const auto& [j, t] : u.transfers) c += p.c_transfer * t * t;
    return c;
}

// Per-step forecast and realization of the local load.
struct LoadTrace {
    std::vector<double> forecast;
    std::vector<double> actual;

    void validate(double d_max) const {
        if (forecast.size() != actual.size()) throw ConfigError("load trace length mismatch");
        for (size_t k = 0; k < forecast.size(); ++k) {
            if (forecast[k] < 0 || actual[k] < 0) throw ConfigError("loads must be nonnegative");
            if (std::abs(actual[k] - forecast[k]) > d_max + 1e-9)
                throw ConfigError("load realization violates the forecast error bound");
        }
    }
};

}  // namespace mgrid
