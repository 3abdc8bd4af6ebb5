#pragma once

#include <string>
#include <vector>

#include "mgrid/adversary.hpp"
#include "mgrid/common.hpp"
#include "mgrid/dual_decomp.hpp"
#include "mgrid/horizon.hpp"
#include "mgrid/qp.hpp"
#include "mgrid/robustify.hpp"

namespace mgrid {

// Admissible connection vectors: fully connected, or exactly one neighbor
// dropped. All-ones first, then the single-zero vectors by ascending
// neighbor position.
inline std::vector<std::vector<int>> candidate_set(int n_neighbors) {
    if (n_neighbors < 1) throw ConfigError("candidate set needs at least one neighbor");
    std::vector<std::vector<int>> cands;
    cands.emplace_back(static_cast<size_t>(n_neighbors), 1);
    for (int j = 0; j < n_neighbors; ++j) {
        std::vector<int> z(static_cast<size_t>(n_neighbors), 1);
        z[static_cast<size_t>(j)] = 0;
        cands.push_back(std::move(z));
    }
    return cands;
}

// Price of staying connected: every held connection is charged in proportion
// to how suspicious the neighbor is and how often this agent has been hit.
inline double connection_penalty(const std::vector<int>& v, const HypothesisState& h,
                                 double gamma_weight) {
    if (v.size() != h.neighbors.size()) throw InvariantError("connection vector size mismatch");
    double s = 0.0;
    for (size_t j = 0; j < v.size(); ++j) {
        double vj = static_cast<double>(v[j]);
        s += h.neighbor_prob(static_cast<int>(j)) * vj * vj;
    }
    return gamma_weight * static_cast<double>(h.n_at) * s;
}

struct CandidateCost {
    std::vector<int> v;
    double w_max = 0.0;
    double dispatch_cost = 0.0;
    double penalty = 0.0;
    double total = 0.0;
};

struct ConnectionDecision {
    std::vector<int> v;
    int blocked_pos = -1;  // position in the neighbor list, -1 if fully connected
    double w_max = 0.0;
    std::vector<CandidateCost> candidates;  // enumeration trace, candidate order
};

// Applies a connection vector to the transfer windows: a dropped neighbor's
// exchange is pinned to zero for the whole horizon.
inline void apply_connection_bounds(HorizonProblem& h, const std::vector<int>& v) {
    if (v.size() != h.neighbors.size()) throw InvariantError("connection vector size mismatch");
    for (auto& sb : h.bounds) {
        for (size_t j = 0; j < v.size(); ++j) {
            double lim = h.neighbor_limits[j] * static_cast<double>(v[j]);
            sb.transfer_lo[j] = -lim;
            sb.transfer_hi[j] = lim;
        }
    }
}

// Chooses which neighbor (at most one) to drop this step by exhaustive
// enumeration: each candidate is costed with its own worst-case disturbance,
// tightening and transfer bounds, no coupling prices, plus the connection
// penalty. Ties keep the earlier candidate, so full connectivity wins over
// blocking and lower neighbor positions win among blocks.
inline ConnectionDecision decide_connections(const MicrogridParams& params,
                                             const HorizonProblem& base_nominal,
                                             const HypothesisState& hyp, double gamma_weight,
                                             std::vector<QpWarmCache>* warm = nullptr) {
    const int nn = static_cast<int>(base_nominal.neighbors.size());
    auto cands = candidate_set(nn);
    if (warm && warm->size() != cands.size()) warm->assign(cands.size(), {});

    ConnectionDecision decision;
    double best = 0.0;
    for (size_t c = 0; c < cands.size(); ++c) {
        const auto& v = cands[c];
        CandidateCost cc;
        cc.v = v;
        cc.w_max = worst_case_disturbance(base_nominal.neighbor_limits, v, params.d_max);
        HorizonProblem hp = tighten_constraints(params, cc.w_max, base_nominal);
        apply_connection_bounds(hp, v);
        apply_state_recovery(hp, params);
        QpProblem qp = hp.to_qp();
        QpOptions opts;
        if (warm) {
            opts.factor_cache = &(*warm)[c].factor;
            if ((*warm)[c].valid) {
                opts.warm_working_set = &(*warm)[c].working_set;
                opts.warm_point = &(*warm)[c].point;
            }
        }
        QpSolution s = solve_qp(qp, opts);
        if (s.status != QpStatus::optimal)
            throw InvariantError("connection candidate subproblem not solvable (agent " +
                                 std::to_string(base_nominal.agent) + ", status " +
                                 to_string(s.status) + ")");
        if (warm) {
            (*warm)[c].valid = true;
            (*warm)[c].working_set = s.working_set;
            (*warm)[c].point = s.u;
        }
        cc.dispatch_cost = s.objective;
        cc.penalty = connection_penalty(v, hyp, gamma_weight);
        cc.total = cc.dispatch_cost + cc.penalty;
        decision.candidates.push_back(cc);
        if (c == 0 || cc.total < best) {
            best = cc.total;
            decision.v = v;
            decision.blocked_pos = c == 0 ? -1 : static_cast<int>(c) - 1;
            decision.w_max = cc.w_max;
        }
    }
    return decision;
}

}  // namespace mgrid
