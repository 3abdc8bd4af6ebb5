#pragma once

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "mgrid/common.hpp"
#include "mgrid/horizon.hpp"
#include "mgrid/qp.hpp"

namespace mgrid {

// Multiplier layout per agent: step-major, one entry per neighbor per step,
// neighbors in canonical (ascending) order — the same layout as the coupled
// part of the decision vector, so all agents agree on message alignment.

struct NegotiationOptions {
    double eps = 1e-3;        // stacked per-agent residual 2-norm target, kW
    double gamma_step = 0.05; // multiplier ascent step, in (0,1)
    int max_iter = 5000;
    bool diminishing = false; // use gamma/sqrt(r) instead of a constant step
    double qp_tol = 1e-8;
};

// Per-round message records. Exchange is in-process; the payload is a flat
// per-step array keyed by (sender, receiver), ready for serialization.
struct MultiplierMessage {
    int sender = 0, receiver = 0;
    Vec per_step;  // sender's multiplier for this edge, one entry per horizon step
};

struct CoupledMessage {
    int sender = 0, receiver = 0;
    Vec per_step;  // sender's received-transfer decision on this edge per step
};

struct RoundMailbox {
    std::map<std::pair<int, int>, Vec> multipliers;  // (sender, receiver) -> per-step values
    std::map<std::pair<int, int>, Vec> coupled;
};

struct QpWarmCache {
    bool valid = false;
    std::vector<int> working_set;
    Vec point;
    QpFactorCache factor;  // sound while the problem's H/A/E structure is unchanged
};

struct NegotiationResult {
    std::vector<Vec> u;  // per-agent stacked horizon decisions (last iterate)
    bool converged = false;
    int iterations = 0;
    double max_residual_norm = 0.0;
};

// Local subproblem of one negotiation round: the agent's own horizon problem
// plus the linear coupling price y on its transfer variables, where
// y[step, j] = own multiplier for edge j + the multiplier received from j.
// neighbor_multipliers is aligned with h.neighbors; a null entry means no
// exchange with that neighbor (price contribution zero).
inline QpProblem build_local_subproblem(const HorizonProblem& h, const Vec& own_multipliers,
                                        const std::vector<const Vec*>& neighbor_multipliers) {
    const int nn = static_cast<int>(h.neighbors.size());
    if (own_multipliers.size() != static_cast<Eigen::Index>(h.hp * nn))
        throw InvariantError("multiplier vector has wrong size");
    if (neighbor_multipliers.size() != h.neighbors.size())
        throw InvariantError("neighbor multiplier list size mismatch");
    Vec y = own_multipliers;
    for (int j = 0; j < nn; ++j) {
        const Vec* recv = neighbor_multipliers[static_cast<size_t>(j)];
        if (!recv) continue;
        if (recv->size() != h.hp) throw ProtocolError("neighbor multiplier message has wrong length");
        for (int l = 0; l < h.hp; ++l) y(l * nn + j) += (*recv)(l);
    }
    return h.to_qp(&y);
}

// Coupling disagreement per neighbor per step: own received transfer plus the
// neighbor's received transfer on the same edge (both are zero when agreed).
inline Vec coupling_residual(const HorizonProblem& h, const Vec& own_u,
                             const std::vector<const Vec*>& neighbor_coupled) {
    const int nn = static_cast<int>(h.neighbors.size());
    if (neighbor_coupled.size() != h.neighbors.size())
        throw InvariantError("neighbor coupled list size mismatch");
    Vec psi = Vec::Zero(h.hp * nn);
    for (int l = 0; l < h.hp; ++l) {
        for (int j = 0; j < nn; ++j) {
            double own = own_u(h.transfer_var(l, j));
            const Vec* recv = neighbor_coupled[static_cast<size_t>(j)];
            psi(l * nn + j) = own + (recv ? (*recv)(l) : 0.0);
        }
    }
    return psi;
}

// Gradient-ascent step on the coupling multipliers. No projection: the
// multipliers price equality constraints and are sign-free.
inline Vec multiplier_update(const Vec& multipliers, const Vec& psi, double gamma_step) {
    if (!(gamma_step > 0.0 && gamma_step < 1.0))
        throw ConfigError("negotiation step size must be in (0,1)");
    if (multipliers.size() != psi.size()) throw InvariantError("residual size mismatch");
    return multipliers + gamma_step * psi;
}

namespace detail {

inline const Vec& fetch_message(const std::map<std::pair<int, int>, Vec>& box, int sender,
                                int receiver) {
    auto it = box.find({sender, receiver});
    if (it == box.end())
        throw ProtocolError("missing message from agent " + std::to_string(sender) + " to agent " +
                            std::to_string(receiver));
    return it->second;
}

}  // namespace detail

// Synchronized multiplier-exchange negotiation. All agents solve their local
// subproblem each round; multiplier updates apply only after every agent has
// published its coupled decision (barrier semantics, executed sequentially so
// results are bit-reproducible). active(i, j) says whether the edge between i
// and a neighbor j exchanges messages this negotiation.
//
// On convergence every agent's stacked residual 2-norm is <= eps. Hitting the
// iteration cap returns the best (last) iterate flagged non-converged; the
// caller decides the fallback policy.
template <typename ActiveFn>
inline NegotiationResult negotiate(const std::vector<HorizonProblem>& problems,
                                   ActiveFn&& active, std::vector<Vec>& multipliers,
                                   const NegotiationOptions& opts,
                                   std::vector<QpWarmCache>* warm = nullptr) {
    const int n_agents = static_cast<int>(problems.size());
    if (static_cast<int>(multipliers.size()) != n_agents)
        throw InvariantError("one multiplier vector per agent required");
    if (warm && static_cast<int>(warm->size()) != n_agents)
        throw InvariantError("one warm cache per agent required");

    // Stale prices on inactive edges would distort the first rounds.
    for (int i = 0; i < n_agents; ++i) {
        const auto& h = problems[static_cast<size_t>(i)];
        const int nn = static_cast<int>(h.neighbors.size());
        if (multipliers[static_cast<size_t>(i)].size() != static_cast<Eigen::Index>(h.hp * nn))
            multipliers[static_cast<size_t>(i)] = Vec::Zero(h.hp * nn);
        for (int j = 0; j < nn; ++j)
            if (!active(h.agent, h.neighbors[static_cast<size_t>(j)]))
                for (int l = 0; l < h.hp; ++l) multipliers[static_cast<size_t>(i)](l * nn + j) = 0.0;
    }

    NegotiationResult result;
    result.u.assign(static_cast<size_t>(n_agents), Vec());
    QpOptions qp_opts;
    qp_opts.tol = opts.qp_tol;

    std::vector<Vec> psi(static_cast<size_t>(n_agents));
    RoundMailbox box;
    int r = 0;
    while (r < opts.max_iter) {
        ++r;
        box.multipliers.clear();
        box.coupled.clear();
        for (int i = 0; i < n_agents; ++i) {
            const auto& h = problems[static_cast<size_t>(i)];
            const int nn = static_cast<int>(h.neighbors.size());
            for (int j = 0; j < nn; ++j) {
                int peer = h.neighbors[static_cast<size_t>(j)];
                if (!active(h.agent, peer)) continue;
                Vec slice(h.hp);
                for (int l = 0; l < h.hp; ++l) slice(l) = multipliers[static_cast<size_t>(i)](l * nn + j);
                box.multipliers[{h.agent, peer}] = std::move(slice);
            }
        }

        for (int i = 0; i < n_agents; ++i) {
            const auto& h = problems[static_cast<size_t>(i)];
            std::vector<const Vec*> recv(h.neighbors.size(), nullptr);
            for (size_t j = 0; j < h.neighbors.size(); ++j) {
                int peer = h.neighbors[j];
                if (active(h.agent, peer))
                    recv[j] = &detail::fetch_message(box.multipliers, peer, h.agent);
            }
            QpProblem qp = build_local_subproblem(h, multipliers[static_cast<size_t>(i)], recv);
            QpOptions o = qp_opts;
            if (warm) {
                o.factor_cache = &(*warm)[static_cast<size_t>(i)].factor;
                if ((*warm)[static_cast<size_t>(i)].valid) {
                    o.warm_working_set = &(*warm)[static_cast<size_t>(i)].working_set;
                    o.warm_point = &(*warm)[static_cast<size_t>(i)].point;
                }
            }
            QpSolution s = solve_qp(qp, o);
            if (s.status == QpStatus::infeasible)
                throw InvariantError("negotiation subproblem infeasible for agent " +
                                     std::to_string(h.agent));
            result.u[static_cast<size_t>(i)] = s.u;
            if (warm) {
                (*warm)[static_cast<size_t>(i)].valid = true;
                (*warm)[static_cast<size_t>(i)].working_set = s.working_set;
                (*warm)[static_cast<size_t>(i)].point = s.u;
            }
        }

        for (int i = 0; i < n_agents; ++i) {
            const auto& h = problems[static_cast<size_t>(i)];
            for (size_t j = 0; j < h.neighbors.size(); ++j) {
                int peer = h.neighbors[j];
                if (!active(h.agent, peer)) continue;
                Vec slice(h.hp);
                for (int l = 0; l < h.hp; ++l)
                    slice(l) = result.u[static_cast<size_t>(i)](h.transfer_var(l, static_cast<int>(j)));
                box.coupled[{h.agent, peer}] = std::move(slice);
            }
        }

        double max_norm = 0.0;
        for (int i = 0; i < n_agents; ++i) {
            const auto& h = problems[static_cast<size_t>(i)];
            std::vector<const Vec*> recv(h.neighbors.size(), nullptr);
            for (size_t j = 0; j < h.neighbors.size(); ++j) {
                int peer = h.neighbors[j];
                if (active(h.agent, peer))
                    recv[j] = &detail::fetch_message(box.coupled, peer, h.agent);
            }
            psi[static_cast<size_t>(i)] =
                coupling_residual(h, result.u[static_cast<size_t>(i)], recv);
            max_norm = std::max(max_norm, psi[static_cast<size_t>(i)].norm());
        }

        result.iterations = r;
        result.max_residual_norm = max_norm;
        if (max_norm <= opts.eps) {
            result.converged = true;
            return result;
        }
        double step = opts.diminishing ? opts.gamma_step / std::sqrt(static_cast<double>(r))
                                       : opts.gamma_step;
        for (int i = 0; i < n_agents; ++i)
            multipliers[static_cast<size_t>(i)] =
                multiplier_update(multipliers[static_cast<size_t>(i)], psi[static_cast<size_t>(i)], step);
    }
    return result;  // non-converged; caller policy decides
}

}  // namespace mgrid
