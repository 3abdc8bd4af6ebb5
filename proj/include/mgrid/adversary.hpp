#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgrid/common.hpp"
#include "mgrid/params.hpp"
#include "mgrid/rng.hpp"

namespace mgrid {

// Behavior of one adversarial agent: with the given per-step probability it
// implements inputs that draw extra power from each connected regular
// neighbor, deviating only at implementation time — its negotiation messages
// stay honest.
struct AdversaryPolicy {
    int agent_id = -1;
    double attack_probability = 0.3;   // realized Bernoulli parameter
    double magnitude_fraction = 1.0;   // extra draw per neighbor as a fraction of the line limit
};

// Belief state of one regular agent over "nobody attacks me" plus one
// hypothesis per neighbor. probs(0) is the no-attack hypothesis, probs(1 + j)
// follows the canonical neighbor order.
struct HypothesisState {
    std::vector<int> neighbors;
    Vec probs;
    long n_at = 0;        // detected attacks so far
    bool anomaly = false; // attack observed with no connected suspect (model violation)

    double no_attack_prob() const { return probs(0); }
    double neighbor_prob(int pos) const { return probs(1 + pos); }

    // Index into `neighbors` of a hypothesis that has absorbed (essentially)
    // all probability mass, or -1. Exact lock-in happens when every competing
    // hypothesis has been driven to exactly zero; the tolerance covers the
    // asymptotic case where the remaining mass decays geometrically instead.
    int certain_neighbor(double tol = 1e-6) const {
        for (size_t j = 0; j < neighbors.size(); ++j)
            if (probs(1 + static_cast<Eigen::Index>(j)) >= 1.0 - tol) return static_cast<int>(j);
        return -1;
    }
};

// Uniform suspicion over the neighbors, weighted by the expected attack
// probability; the rest of the mass goes to the no-attack hypothesis.
inline HypothesisState init_priors(double p_at, const std::vector<int>& neighbors) {
    if (!(p_at > 0.0 && p_at <= 1.0)) throw ConfigError("expected attack probability must be in (0,1]");
    if (neighbors.empty()) throw ConfigError("hypothesis state needs at least one neighbor");
    HypothesisState h;
    h.neighbors = neighbors;
    h.probs = Vec::Zero(1 + static_cast<Eigen::Index>(neighbors.size()));
    h.probs(0) = 1.0 - p_at;
    for (size_t j = 0; j < neighbors.size(); ++j)
        h.probs(1 + static_cast<Eigen::Index>(j)) = p_at / static_cast<double>(neighbors.size());
    return h;
}

struct DetectionResult {
    double delta = 0.0;
    double threshold = 0.0;
    bool attacked = false;
};

// Residual between the measured SoC and the one predicted from the previous
// decision with the forecast load substituted through the power balance. Any
// unexplained storage compensation (load error plus attack) shows up here;
// only excursions beyond the forecast error band count as attacks.
inline DetectionResult detection_residual(double x_now, double x_prev, const ControlInput& u_prev,
                                          double forecast_prev, const MicrogridParams& p) {
    double received = 0.0;
    for (const auto& [j, t] : u_prev.transfers) received += t;
    double implied_storage = forecast_prev - u_prev.generation - u_prev.import_power - received;
    double predicted = p.storage_eff * x_prev + p.soc_per_kw * implied_storage;
    DetectionResult r;
    r.delta = std::abs(x_now - predicted);
    r.threshold = std::abs(p.soc_per_kw) * p.d_max;
    // strict comparison with a rounding guard: load noise at exactly the bound
    // must stay undetectable
    r.attacked = r.delta > r.threshold * (1.0 + 1e-9) + 1e-15;
    return r;
}

// Bayesian posterior over the hypotheses given one attacked/clean observation.
// connected_during_observation must reflect the link state that was actually
// in force while the observation accumulated: a neighbor whose link was down
// cannot have caused an attack. Zero marginal likelihood (attack seen while
// every suspect was disconnected) freezes the state and raises the anomaly
// flag instead of dividing by zero.
inline HypothesisState bayes_update(const HypothesisState& h, bool attacked,
                                    const std::vector<int>& connected_during_observation,
                                    double p_at) {
    if (connected_during_observation.size() != h.neighbors.size())
        throw InvariantError("connection vector size mismatch");
    HypothesisState out = h;
    if (attacked) out.n_at = h.n_at + 1;

    Vec likelihood(h.probs.size());
    likelihood(0) = attacked ? 0.0 : 1.0;
    for (size_t j = 0; j < h.neighbors.size(); ++j) {
        double v = connected_during_observation[j] ? 1.0 : 0.0;
        likelihood(1 + static_cast<Eigen::Index>(j)) = attacked ? v * p_at : 1.0 - v * p_at;
    }
    double marginal = h.probs.dot(likelihood);
    if (marginal <= 0.0) {
        out.anomaly = true;  // impossible under the at-most-one-adversary model
        return out;
    }
    out.probs = h.probs.cwiseProduct(likelihood) / marginal;
    return out;
}

// Context the injection needs to keep the adversary's own plant consistent:
// it only draws what it can absorb by cutting generation / imports or by
// charging its storage without leaving the SoC window its planner uses.
struct AdversaryContext {
    MicrogridParams params;
    double x_measured = 0.0;
    double load_error = 0.0;   // realized minus forecast load of the adversary
    double soc_window_lo = 0.0, soc_window_hi = 1.0;  // planner's window
};

struct AttackOutcome {
    bool attacked = false;
    ControlInput implemented;                       // adversary's realized inputs
    std::vector<std::pair<int, double>> extra_draw; // (neighbor id, extra kW taken from it)
};

// Implements the adversary's step. On a Bernoulli attack event it raises its
// received transfer on every connectable edge by magnitude_fraction * p_t_max
// (clamped to the physical line limit), scaling the total down to what it can
// absorb; the absorbed surplus first displaces generation, then imports, then
// charges the storage. Without an attack the negotiated decision is
// implemented unchanged.
inline AttackOutcome inject_attack(const AdversaryPolicy& policy, const AdversaryContext& ctx,
                                   const ControlInput& negotiated,
                                   const std::vector<double>& neighbor_limits,
                                   const std::vector<int>& drawable_neighbor,
                                   std::mt19937_64& rng) {
    AttackOutcome out;
    out.implemented = negotiated;
    out.attacked = bernoulli(rng, policy.attack_probability);
    if (!out.attacked) return out;

    const auto& p = ctx.params;
    std::vector<double> desired(negotiated.transfers.size(), 0.0);
    double desired_total = 0.0;
    for (size_t j = 0; j < negotiated.transfers.size(); ++j) {
        if (!drawable_neighbor[j]) continue;
        double limit = neighbor_limits[j];
        double room = limit - negotiated.transfers[j].second;  // up to the line limit
        desired[j] = std::clamp(policy.magnitude_fraction * limit, 0.0, std::max(0.0, room));
        desired_total += desired[j];
    }
    if (desired_total <= 0.0) {
        out.attacked = false;  // nothing to gain this step
        return out;
    }

    // What the adversary can absorb without breaking its own next subproblem.
    double gen_slack = negotiated.generation - p.p_gen_min;
    double import_slack = negotiated.import_power;
    double planned_storage = negotiated.storage + ctx.load_error;
    double charge_room_power = p.p_ch + planned_storage;  // headroom to -p_ch
    double x_after_planned = p.storage_eff * ctx.x_measured + p.soc_per_kw * planned_storage;
    double charge_room_soc = std::max(0.0, (ctx.soc_window_hi - x_after_planned) / -p.soc_per_kw);
    double storage_slack = std::max(0.0, std::min(charge_room_power, charge_room_soc));
    double absorbable = gen_slack + import_slack + storage_slack;

    double scale = std::min(1.0, absorbable / desired_total);
    if (scale <= 0.0) {
        out.attacked = false;
        return out;
    }

    double taken = 0.0;
    for (size_t j = 0; j < negotiated.transfers.size(); ++j) {
        double extra = desired[j] * scale;
        if (extra <= 0.0) continue;
        out.implemented.transfers[j].second += extra;
        out.extra_draw.emplace_back(negotiated.transfers[j].first, extra);
        taken += extra;
    }
    double cut_gen = std::min(taken, gen_slack);
    out.implemented.generation -= cut_gen;
    double rest = taken - cut_gen;
    double cut_import = std::min(rest, import_slack);
    out.implemented.import_power -= cut_import;
    rest -= cut_import;
    out.implemented.storage -= rest;  // charge the remainder
    return out;
}

}  // namespace mgrid
