#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mgrid/adversary.hpp"
#include "mgrid/common.hpp"
#include "mgrid/config.hpp"
#include "mgrid/connection.hpp"
#include "mgrid/dual_decomp.hpp"
#include "mgrid/horizon.hpp"
#include "mgrid/params.hpp"
#include "mgrid/qp.hpp"
#include "mgrid/rng.hpp"
#include "mgrid/robustify.hpp"

namespace mgrid {

// Both endpoints must keep a link up for it to carry power; either side can
// block. Adversaries always publish full connectivity, so a block by the
// regular side wins. Returns one active flag per topology edge.
inline std::vector<char> reconcile_connections(const NetworkTopology& topo,
                                               const std::vector<std::vector<int>>& v_own) {
    std::vector<char> active(topo.edges.size(), 0);
    for (size_t e = 0; e < topo.edges.size(); ++e) {
        int i = topo.edges[e].a, j = topo.edges[e].b;
        const auto& ni = topo.neighbors(i);
        const auto& nj = topo.neighbors(j);
        int pos_j = static_cast<int>(std::lower_bound(ni.begin(), ni.end(), j) - ni.begin());
        int pos_i = static_cast<int>(std::lower_bound(nj.begin(), nj.end(), i) - nj.begin());
        active[e] = v_own[static_cast<size_t>(i)][static_cast<size_t>(pos_j)] == 1 &&
                            v_own[static_cast<size_t>(j)][static_cast<size_t>(pos_i)] == 1
                        ? 1
                        : 0;
    }
    return active;
}

// Realized storage action and next SoC when the plant compensates load error
// and neighbor deviations through the storage.
inline double simulate_plant(const MicrogridParams& p, double x, double realized_storage) {
    return p.storage_eff * x + p.soc_per_kw * realized_storage;
}

struct SuboptimalityCertificate {
    double bound = 0.0;  // horizon cost of the applied plan minus the decoupled optimum
    Vec u_decoupled;
};

// Decentralized certificate: the decoupled problem drops the coupling, so its
// optimum lower-bounds any coupled solution the agent can be held to. The
// applied plan is feasible for the decoupled problem, which keeps the bound
// nonnegative up to solver tolerance.
inline SuboptimalityCertificate suboptimality_bound(const HorizonProblem& nominal_base,
                                                    const Vec& u_applied,
                                                    QpWarmCache* warm = nullptr) {
    QpProblem qp = nominal_base.to_qp();
    QpOptions opts;
    if (warm) {
        opts.factor_cache = &warm->factor;
        if (warm->valid) {
            opts.warm_working_set = &warm->working_set;
            opts.warm_point = &warm->point;
        }
    }
    QpSolution s = solve_qp(qp, opts);
    if (s.status != QpStatus::optimal)
        throw InvariantError("decoupled reference problem not solvable for agent " +
                             std::to_string(nominal_base.agent));
    if (warm) {
        warm->valid = true;
        warm->working_set = s.working_set;
        warm->point = s.u;
    }
    SuboptimalityCertificate c;
    c.u_decoupled = s.u;
    double raw = nominal_base.horizon_cost(u_applied) - nominal_base.horizon_cost(s.u);
    if (raw < -1e-6 * (1.0 + std::abs(nominal_base.horizon_cost(u_applied))))
        throw InvariantError("suboptimality bound came out negative; applied plan is not "
                             "feasible for the decoupled problem");
    c.bound = std::max(0.0, raw);
    return c;
}

// Stacks every agent's horizon problem plus the per-edge agreement rows into
// one QP and solves it directly. This is the reference the negotiation is
// checked against and the source of the measured sub-optimality gap; agents
// never use it to act.
inline std::vector<Vec> central_solve(const std::vector<HorizonProblem>& problems,
                                      const std::vector<std::pair<int, int>>& active_edges,
                                      QpWarmCache* warm = nullptr, double qp_tol = 1e-8) {
    const int n_agents = static_cast<int>(problems.size());
    std::vector<int> offset(static_cast<size_t>(n_agents) + 1, 0);
    std::vector<QpProblem> locals;
    locals.reserve(problems.size());
    int total_ineq = 0, total_eq = 0;
    for (int i = 0; i < n_agents; ++i) {
        locals.push_back(problems[static_cast<size_t>(i)].to_qp());
        offset[static_cast<size_t>(i) + 1] = offset[static_cast<size_t>(i)] + locals.back().n();
        total_ineq += locals.back().ineq_count();
        total_eq += locals.back().eq_count();
    }
    std::map<int, int> index_of_agent;
    for (int i = 0; i < n_agents; ++i) index_of_agent[problems[static_cast<size_t>(i)].agent] = i;

    int coupling_rows = 0;
    for (const auto& [a, b] : active_edges) {
        (void)b;
        coupling_rows += problems[static_cast<size_t>(index_of_agent.at(a))].hp;
    }

    const int n = offset.back();
    QpProblem qp;
    qp.H = Mat::Zero(n, n);
    qp.g = Vec::Zero(n);
    qp.A = Mat::Zero(total_ineq, n);
    qp.b = Vec::Zero(total_ineq);
    qp.E = Mat::Zero(total_eq + coupling_rows, n);
    qp.d = Vec::Zero(total_eq + coupling_rows);
    int ri = 0, re = 0;
    for (int i = 0; i < n_agents; ++i) {
        const auto& lq = locals[static_cast<size_t>(i)];
        int off = offset[static_cast<size_t>(i)];
        qp.H.block(off, off, lq.n(), lq.n()) = lq.H;
        qp.g.segment(off, lq.n()) = lq.g;
        qp.A.block(ri, off, lq.ineq_count(), lq.n()) = lq.A;
        qp.b.segment(ri, lq.ineq_count()) = lq.b;
        ri += lq.ineq_count();
        qp.E.block(re, off, lq.eq_count(), lq.n()) = lq.E;
        qp.d.segment(re, lq.eq_count()) = lq.d;
        re += lq.eq_count();
    }
    for (const auto& [a, b] : active_edges) {
        int ia = index_of_agent.at(a), ib = index_of_agent.at(b);
        const auto& ha = problems[static_cast<size_t>(ia)];
        const auto& hb = problems[static_cast<size_t>(ib)];
        int pa = ha.neighbor_pos(b), pb = hb.neighbor_pos(a);
        for (int l = 0; l < ha.hp; ++l) {
            qp.E(re, offset[static_cast<size_t>(ia)] + ha.transfer_var(l, pa)) = 1.0;
            qp.E(re, offset[static_cast<size_t>(ib)] + hb.transfer_var(l, pb)) = 1.0;
            ++re;
        }
    }

    QpOptions opts;
    opts.tol = qp_tol;
    if (warm) {
        opts.factor_cache = &warm->factor;
        if (warm->valid) {
            opts.warm_working_set = &warm->working_set;
            opts.warm_point = &warm->point;
        }
    }
    QpSolution s = solve_qp(qp, opts);
    if (s.status != QpStatus::optimal)
        throw InvariantError("centralized reference solve failed: " + std::string(to_string(s.status)));
    if (warm) {
        warm->valid = true;
        warm->working_set = s.working_set;
        warm->point = s.u;
    }
    std::vector<Vec> out;
    for (int i = 0; i < n_agents; ++i)
        out.push_back(s.u.segment(offset[static_cast<size_t>(i)],
                                  offset[static_cast<size_t>(i) + 1] - offset[static_cast<size_t>(i)]));
    return out;
}

struct ViolationRecord {
    int step;
    int agent;  // 0-based
    std::string kind;
    double value;
    double limit;
};

struct ScenarioResult {
    int steps = 0;
    int n_agents = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<char> regular;  // per agent
    std::vector<double> x_min, x_max;            // per agent, for reporting
    std::vector<std::vector<int>> neighbor_ids;  // per agent, canonical order

    // per step, per agent
    std::vector<std::vector<double>> soc;          // realized SoC after the step
    std::vector<std::vector<double>> delta;        // detection residual
    std::vector<std::vector<double>> threshold;
    std::vector<std::vector<char>> attacked;
    std::vector<std::vector<long>> attack_count;
    std::vector<std::vector<Vec>> posterior;       // hypothesis probabilities (empty if none)
    std::vector<std::vector<std::vector<int>>> v_own;        // per neighbor
    std::vector<std::vector<std::vector<int>>> edge_active_agent;  // per neighbor
    std::vector<std::vector<double>> stage_cost_realized;
    std::vector<std::vector<double>> subopt_bound;
    std::vector<std::vector<double>> measured_gap;  // NaN when the oracle is off

    // per step, per topology edge: power into the lower-id endpoint
    std::vector<std::vector<double>> edge_negotiated;
    std::vector<std::vector<double>> edge_realized;

    std::vector<ViolationRecord> violations;
    std::vector<double> agent_total_cost;
    double total_cost = 0.0;
    bool oracle_enabled = false;
    int negotiation_fallbacks = 0;
    int recovery_steps = 0;
    long negotiation_iterations = 0;

    int count_violations(const std::string& kind, bool regular_only) const {
        int c = 0;
        for (const auto& v : violations)
            if ((kind.empty() || v.kind == kind) && (!regular_only || regular[static_cast<size_t>(v.agent)]))
                ++c;
        return c;
    }
};

// Per-agent mutable state across the closed loop.
struct AgentRuntime {
    int id = 0;
    MicrogridParams params;
    bool adversarial = false;
    AdversaryPolicy policy;
    LoadTrace loads;
    double soc = 0.0;
    double soc_prev = 0.0;
    std::optional<HypothesisState> hyp;
    std::vector<int> locked;        // neighbor positions locked out permanently
    Vec multipliers;
    std::vector<int> eff_prev;      // effective connectivity during the last applied step
    ControlInput last_decided;
    double last_forecast = 0.0;
    bool has_last = false;
    QpWarmCache negotiation_warm;
    QpWarmCache decoupled_warm;
    std::vector<QpWarmCache> candidate_warm;
};

class Simulation {
public:
    Simulation(const ScenarioConfig& cfg, std::uint64_t seed,
               const std::vector<LoadTrace>* shared_loads = nullptr)
        : cfg_(cfg), seed_(seed) {
        const int n = cfg_.topology.n_agents;
        agents_.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            AgentRuntime& a = agents_[static_cast<size_t>(i)];
            a.id = i;
            a.params = cfg_.agents[static_cast<size_t>(i)].params;
            a.soc = a.params.x0;
            a.soc_prev = a.params.x0;
            const auto& nbrs = cfg_.topology.neighbors(i);
            a.multipliers = Vec::Zero(cfg_.hp * static_cast<Eigen::Index>(nbrs.size()));
            a.eff_prev.assign(nbrs.size(), 1);
            for (const auto& pol : cfg_.adversaries) {
                if (pol.agent_id == i) {
                    a.adversarial = true;
                    a.policy = pol;
                }
            }
            if (!a.adversarial && !nbrs.empty())
                a.hyp = init_priors(cfg_.assumed_attack_probability, nbrs);
            if (shared_loads) {
                a.loads = (*shared_loads)[static_cast<size_t>(i)];
            } else {
                auto rng = make_stream(seed, "load", static_cast<std::uint64_t>(i));
                a.loads = generate_loads(cfg_.agents[static_cast<size_t>(i)].profile,
                                         cfg_.agents[static_cast<size_t>(i)].peak,
                                         a.params.d_max, cfg_.steps, rng);
            }
            if (!cfg_.load_noise_enabled) a.loads.actual = a.loads.forecast;
        }
        for (const auto& pol : cfg_.adversaries)
            attack_streams_.push_back(make_stream(seed, "attack", static_cast<std::uint64_t>(pol.agent_id)));

        result_.steps = cfg_.steps;
        result_.n_agents = n;
        for (const auto& e : cfg_.topology.edges) result_.edges.emplace_back(e.a, e.b);
        for (int i = 0; i < n; ++i) {
            result_.regular.push_back(agents_[static_cast<size_t>(i)].adversarial ? 0 : 1);
            result_.x_min.push_back(agents_[static_cast<size_t>(i)].params.x_min);
            result_.x_max.push_back(agents_[static_cast<size_t>(i)].params.x_max);
            result_.neighbor_ids.push_back(cfg_.topology.neighbors(i));
        }
        result_.agent_total_cost.assign(static_cast<size_t>(n), 0.0);
        result_.oracle_enabled = cfg_.oracle_gap;
    }

    ScenarioResult run() {
        for (int k = 0; k < cfg_.steps; ++k) step(k);
        for (double c : result_.agent_total_cost) result_.total_cost += c;
        return result_;
    }

private:
    std::vector<double> horizon_forecast(const AgentRuntime& a, int k) const {
        std::vector<double> f(static_cast<size_t>(cfg_.hp));
        for (int l = 0; l < cfg_.hp; ++l)
            f[static_cast<size_t>(l)] =
                a.loads.forecast[static_cast<size_t>((k + l) % cfg_.steps)];  // wrap the daily profile
        return f;
    }

    void step(int k) {
        const int n = cfg_.topology.n_agents;
        const bool resilient = cfg_.strategy == Strategy::resilient;
        const bool tightened = cfg_.strategy != Strategy::nominal;

        // Detection and belief update from the last applied step.
        std::vector<double> delta(static_cast<size_t>(n), 0.0), thresh(static_cast<size_t>(n), 0.0);
        std::vector<char> att(static_cast<size_t>(n), 0);
        if (resilient && k > 0) {
            for (auto& a : agents_) {
                if (a.adversarial || !a.hyp || !a.has_last) continue;
                DetectionResult det = detection_residual(a.soc, a.soc_prev, a.last_decided,
                                                         a.last_forecast, a.params);
                delta[static_cast<size_t>(a.id)] = det.delta;
                thresh[static_cast<size_t>(a.id)] = det.threshold;
                att[static_cast<size_t>(a.id)] = det.attacked ? 1 : 0;
                *a.hyp = bayes_update(*a.hyp, det.attacked, a.eff_prev,
                                      cfg_.assumed_attack_probability);
                int certain = a.hyp->certain_neighbor(cfg_.lock_threshold);
                if (certain >= 0 &&
                    std::find(a.locked.begin(), a.locked.end(), certain) == a.locked.end())
                    a.locked.push_back(certain);
            }
        }

        // Connection decisions.
        std::vector<std::vector<int>> v_own(static_cast<size_t>(n));
        std::vector<double> w_max(static_cast<size_t>(n), 0.0);
        std::vector<HorizonProblem> base;
        base.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            AgentRuntime& a = agents_[static_cast<size_t>(i)];
            const auto& nbrs = cfg_.topology.neighbors(i);
            base.push_back(assemble_nominal_problem(i, a.params, nbrs,
                                                    cfg_.topology.neighbor_limits(i), a.soc,
                                                    horizon_forecast(a, k), cfg_.hp));
            v_own[static_cast<size_t>(i)].assign(nbrs.size(), 1);
            if (!tightened) continue;

            if (!resilient || a.adversarial || !a.hyp) {
                w_max[static_cast<size_t>(i)] = worst_case_disturbance(
                    cfg_.topology.neighbor_limits(i), a.params.d_max);
            } else if (!a.locked.empty()) {
                for (int pos : a.locked) v_own[static_cast<size_t>(i)][static_cast<size_t>(pos)] = 0;
                w_max[static_cast<size_t>(i)] = a.params.d_max;  // remaining neighbors are trusted
            } else {
                ConnectionDecision dec = decide_connections(a.params, base.back(), *a.hyp,
                                                            cfg_.gamma_weight, &a.candidate_warm);
                v_own[static_cast<size_t>(i)] = dec.v;
                w_max[static_cast<size_t>(i)] = dec.w_max;
            }
        }

        std::vector<char> edge_on = reconcile_connections(cfg_.topology, v_own);
        std::vector<std::vector<int>> eff(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& nbrs = cfg_.topology.neighbors(i);
            eff[static_cast<size_t>(i)].assign(nbrs.size(), 0);
            for (size_t p = 0; p < nbrs.size(); ++p)
                eff[static_cast<size_t>(i)][p] = edge_active(edge_on, i, nbrs[p]) ? 1 : 0;
        }

        // Per-agent subproblems for the negotiation.
        std::vector<HorizonProblem> problems;
        problems.reserve(static_cast<size_t>(n));
        bool any_recovery = false;
        for (int i = 0; i < n; ++i) {
            HorizonProblem h = base[static_cast<size_t>(i)];
            if (tightened)
                h = tighten_constraints(agents_[static_cast<size_t>(i)].params,
                                        w_max[static_cast<size_t>(i)], h);
            apply_connection_bounds(h, eff[static_cast<size_t>(i)]);
            if (apply_state_recovery(h, agents_[static_cast<size_t>(i)].params)) any_recovery = true;
            problems.push_back(std::move(h));
        }
        if (any_recovery) ++result_.recovery_steps;

        // Shift warm multipliers one step and negotiate.
        std::vector<Vec> lambdas(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) lambdas[static_cast<size_t>(i)] = agents_[static_cast<size_t>(i)].multipliers;
        NegotiationOptions nopts;
        nopts.eps = cfg_.epsilon;
        nopts.gamma_step = cfg_.gamma_step;
        nopts.max_iter = cfg_.neg_max_iter;
        nopts.diminishing = cfg_.diminishing_steps;
        std::vector<QpWarmCache> neg_warm(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) neg_warm[static_cast<size_t>(i)] = agents_[static_cast<size_t>(i)].negotiation_warm;
        auto active_fn = [&](int i, int j) { return edge_active(edge_on, i, j); };
        NegotiationResult neg = negotiate(problems, active_fn, lambdas, nopts, &neg_warm);
        result_.negotiation_iterations += neg.iterations;
        if (!neg.converged) {
            // Fall back to decoupled dispatch with all exchanges suspended.
            ++result_.negotiation_fallbacks;
            for (int i = 0; i < n; ++i) {
                HorizonProblem h = problems[static_cast<size_t>(i)];
                std::vector<int> none(h.neighbors.size(), 0);
                apply_connection_bounds(h, none);
                QpSolution s = solve_qp(h.to_qp());
                if (s.status != QpStatus::optimal)
                    throw InvariantError("decoupled fallback infeasible for agent " + std::to_string(i));
                neg.u[static_cast<size_t>(i)] = s.u;
            }
        }
        for (int i = 0; i < n; ++i) {
            agents_[static_cast<size_t>(i)].negotiation_warm = neg_warm[static_cast<size_t>(i)];
            agents_[static_cast<size_t>(i)].multipliers =
                shift_multipliers(lambdas[static_cast<size_t>(i)],
                                  static_cast<int>(problems[static_cast<size_t>(i)].neighbors.size()));
        }

        // Sub-optimality bookkeeping against the decoupled and centralized references.
        std::vector<double> bound(static_cast<size_t>(n), 0.0);
        std::vector<double> gap(static_cast<size_t>(n), std::numeric_limits<double>::quiet_NaN());
        for (int i = 0; i < n; ++i) {
            SuboptimalityCertificate cert = suboptimality_bound(
                base[static_cast<size_t>(i)], neg.u[static_cast<size_t>(i)],
                &agents_[static_cast<size_t>(i)].decoupled_warm);
            bound[static_cast<size_t>(i)] = cert.bound;
        }
        if (cfg_.oracle_gap) {
            std::vector<std::pair<int, int>> all_edges;
            for (const auto& e : cfg_.topology.edges) all_edges.emplace_back(e.a, e.b);
            std::vector<Vec> ref = central_solve(base, all_edges, &central_warm_);
            for (int i = 0; i < n; ++i)
                gap[static_cast<size_t>(i)] = base[static_cast<size_t>(i)].horizon_cost(neg.u[static_cast<size_t>(i)]) -
                                              base[static_cast<size_t>(i)].horizon_cost(ref[static_cast<size_t>(i)]);
        }

        // First-step decisions, negotiated edge flows.
        std::vector<ControlInput> decided(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            decided[static_cast<size_t>(i)] =
                problems[static_cast<size_t>(i)].first_step_input(neg.u[static_cast<size_t>(i)]);
        std::vector<double> flow_neg(result_.edges.size(), 0.0);
        for (size_t e = 0; e < result_.edges.size(); ++e) {
            auto [lo, hi] = result_.edges[e];
            if (!edge_on[e]) continue;
            double into_lo = transfer_of(decided[static_cast<size_t>(lo)], hi);
            double into_hi = transfer_of(decided[static_cast<size_t>(hi)], lo);
            flow_neg[e] = 0.5 * (into_lo - into_hi);  // symmetrized agreed flow
        }

        // Adversary implementation deviations.
        std::vector<double> flow_real = flow_neg;
        std::vector<ControlInput> implemented = decided;
        if (cfg_.attacks_enabled) {
            int adv_index = 0;
            for (const auto& pol : cfg_.adversaries) {
                AgentRuntime& a = agents_[static_cast<size_t>(pol.agent_id)];
                const auto& nbrs = cfg_.topology.neighbors(a.id);
                std::vector<int> drawable(nbrs.size(), 0);
                for (size_t p = 0; p < nbrs.size(); ++p)
                    drawable[p] = eff[static_cast<size_t>(a.id)][p] == 1 &&
                                          !agents_[static_cast<size_t>(nbrs[p])].adversarial
                                      ? 1
                                      : 0;
                AdversaryContext ctx;
                ctx.params = a.params;
                ctx.x_measured = a.soc;
                ctx.load_error = a.loads.actual[static_cast<size_t>(k)] -
                                 a.loads.forecast[static_cast<size_t>(k)];
                ctx.soc_window_lo = problems[static_cast<size_t>(a.id)].bounds[0].soc_lo;
                ctx.soc_window_hi = problems[static_cast<size_t>(a.id)].bounds[0].soc_hi;
                AttackOutcome out = inject_attack(pol, ctx, decided[static_cast<size_t>(a.id)],
                                                  cfg_.topology.neighbor_limits(a.id), drawable,
                                                  attack_streams_[static_cast<size_t>(adv_index)]);
                ++adv_index;
                if (out.attacked) {
                    implemented[static_cast<size_t>(a.id)] = out.implemented;
                    for (const auto& [victim, extra] : out.extra_draw) {
                        size_t e = edge_index(a.id, victim);
                        // extra power flows toward the adversary
                        flow_real[e] += result_.edges[e].first == a.id ? extra : -extra;
                    }
                }
            }
        }

        // Plant evolution: storage absorbs load error and neighbor deviations.
        std::vector<double> realized_storage(static_cast<size_t>(n), 0.0);
        std::vector<ControlInput> realized(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            AgentRuntime& a = agents_[static_cast<size_t>(i)];
            ControlInput r = implemented[static_cast<size_t>(i)];
            for (auto& [j, t] : r.transfers) {
                size_t e = edge_index(i, j);
                t = result_.edges[e].first == i ? flow_real[e] : -flow_real[e];
            }
            double received = 0.0;
            for (const auto& [j, t] : r.transfers) received += t;
            r.storage = a.loads.actual[static_cast<size_t>(k)] - r.generation - r.import_power - received;
            realized[static_cast<size_t>(i)] = r;
            realized_storage[static_cast<size_t>(i)] = r.storage;
        }

        // Record, check realized operation, and advance the state.
        record_step(k, delta, thresh, att, v_own, eff, bound, gap, flow_neg, flow_real, realized);
        for (int i = 0; i < n; ++i) {
            AgentRuntime& a = agents_[static_cast<size_t>(i)];
            double x_next = simulate_plant(a.params, a.soc, realized_storage[static_cast<size_t>(i)]);
            check_realized(k, a, realized[static_cast<size_t>(i)], x_next);
            result_.soc.back()[static_cast<size_t>(i)] = x_next;
            a.soc_prev = a.soc;
            a.soc = x_next;
            a.last_decided = decided[static_cast<size_t>(i)];
            a.last_forecast = a.loads.forecast[static_cast<size_t>(k)];
            a.has_last = true;
            a.eff_prev = eff[static_cast<size_t>(i)];
            result_.agent_total_cost[static_cast<size_t>(i)] +=
                stage_cost(realized[static_cast<size_t>(i)], a.params);
        }
    }

    static Vec shift_multipliers(const Vec& lam, int n_neighbors) {
        if (n_neighbors == 0 || lam.size() == 0) return lam;
        Vec out = lam;
        int hp = static_cast<int>(lam.size()) / n_neighbors;
        for (int l = 0; l + 1 < hp; ++l)
            out.segment(l * n_neighbors, n_neighbors) = lam.segment((l + 1) * n_neighbors, n_neighbors);
        return out;  // last step repeats
    }

    static double transfer_of(const ControlInput& u, int neighbor) {
        for (const auto& [j, t] : u.transfers)
            if (j == neighbor) return t;
        throw InvariantError("transfer entry missing");
    }

    bool edge_active(const std::vector<char>& edge_on, int i, int j) const {
        return edge_on[edge_index(i, j)] == 1;
    }

    size_t edge_index(int i, int j) const {
        if (i > j) std::swap(i, j);
        for (size_t e = 0; e < result_.edges.size(); ++e)
            if (result_.edges[e].first == i && result_.edges[e].second == j) return e;
        throw InvariantError("edge not in topology");
    }

    void check_realized(int k, const AgentRuntime& a, const ControlInput& r, double x_next) {
        auto flag = [&](const std::string& kind, double value, double limit) {
            result_.violations.push_back({k, a.id, kind, value, limit});
        };
        const double tol = 1e-7;
        const auto& p = a.params;
        if (x_next < p.x_min - tol) flag("soc_low", x_next, p.x_min);
        if (x_next > p.x_max + tol) flag("soc_high", x_next, p.x_max);
        if (r.storage < -p.p_ch - tol) flag("storage_charge", r.storage, -p.p_ch);
        if (r.storage > p.p_dh + tol) flag("storage_discharge", r.storage, p.p_dh);
        if (r.generation < p.p_gen_min - tol || r.generation > p.p_gen_max + tol)
            flag("generation", r.generation, p.p_gen_max);
        if (r.import_power < -tol || r.import_power > p.p_import_max + tol)
            flag("import", r.import_power, p.p_import_max);
        for (const auto& [j, t] : r.transfers) {
            double lim = cfg_.topology.edge_limit(a.id, j);
            if (std::abs(t) > lim + tol) flag("transfer", t, lim);
        }
    }

    void record_step(int k, const std::vector<double>& delta, const std::vector<double>& thresh,
                     const std::vector<char>& att, const std::vector<std::vector<int>>& v_own,
                     const std::vector<std::vector<int>>& eff, const std::vector<double>& bound,
                     const std::vector<double>& gap, const std::vector<double>& flow_neg,
                     const std::vector<double>& flow_real, const std::vector<ControlInput>& realized) {
        (void)k;
        const int n = cfg_.topology.n_agents;
        result_.delta.push_back(delta);
        result_.threshold.push_back(thresh);
        result_.attacked.push_back(att);
        result_.v_own.push_back(v_own);
        result_.edge_active_agent.push_back(eff);
        result_.subopt_bound.push_back(bound);
        result_.measured_gap.push_back(gap);
        result_.edge_negotiated.push_back(flow_neg);
        result_.edge_realized.push_back(flow_real);
        std::vector<double> costs(static_cast<size_t>(n), 0.0);
        std::vector<Vec> post(static_cast<size_t>(n));
        std::vector<long> counts(static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i) {
            const AgentRuntime& a = agents_[static_cast<size_t>(i)];
            costs[static_cast<size_t>(i)] = stage_cost(realized[static_cast<size_t>(i)], a.params);
            if (a.hyp) {
                post[static_cast<size_t>(i)] = a.hyp->probs;
                counts[static_cast<size_t>(i)] = a.hyp->n_at;
            }
        }
        result_.stage_cost_realized.push_back(costs);
        result_.posterior.push_back(post);
        result_.attack_count.push_back(counts);
        result_.soc.emplace_back(static_cast<size_t>(n), 0.0);  // filled after the state advance
    }

    ScenarioConfig cfg_;
    std::uint64_t seed_;
    std::vector<AgentRuntime> agents_;
    std::vector<std::mt19937_64> attack_streams_;
    QpWarmCache central_warm_;
    ScenarioResult result_;
};

inline ScenarioResult run_scenario(const ScenarioConfig& cfg, std::uint64_t seed,
                                   const std::vector<LoadTrace>* shared_loads = nullptr) {
    Simulation sim(cfg, seed, shared_loads);
    return sim.run();
}

}  // namespace mgrid
