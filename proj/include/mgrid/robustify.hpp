#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mgrid/common.hpp"
#include "mgrid/horizon.hpp"
#include "mgrid/params.hpp"

namespace mgrid {

// Worst-case single-step disturbance on the power balance: the largest
// connected neighbor could swing its exchange by twice the line limit, plus
// the load forecast error. With every neighbor blocked only the load term
// remains.
inline double worst_case_disturbance(const std::vector<double>& neighbor_limits,
                                     const std::vector<int>& connected, double d_max) {
    if (connected.size() != neighbor_limits.size())
        throw InvariantError("connection vector size mismatch");
    double w = 0.0;
    for (size_t j = 0; j < neighbor_limits.size(); ++j)
        if (connected[j]) w = std::max(w, 2.0 * neighbor_limits[j]);
    return w + d_max;
}

inline double worst_case_disturbance(const std::vector<double>& neighbor_limits, double d_max) {
    return worst_case_disturbance(neighbor_limits,
                                  std::vector<int>(neighbor_limits.size(), 1), d_max);
}

// Largest disturbance the storage alone can absorb while the tightened
// windows stay nonempty.
inline double feasibility_threshold(const MicrogridParams& p) {
    return std::min(0.5 * (p.p_ch + p.p_dh),
                    -(p.x_max - p.x_min) / (2.0 * p.soc_per_kw));
}

// Tightened windows are nonempty iff w_max is within the threshold (inclusive).
inline bool feasibility_condition(const MicrogridParams& p, double w_max) {
    return w_max <= feasibility_threshold(p);
}

struct RobustBounds {
    double w_max;
    double soc_lo, soc_hi;
    double storage_lo, storage_hi;
};

inline RobustBounds compute_robust_bounds(const MicrogridParams& p, double w_max) {
    if (!feasibility_condition(p, w_max))
        throw InfeasibleTighteningError(
            "worst-case disturbance exceeds what the storage can absorb (w_max = " +
            std::to_string(w_max) + ", threshold = " + std::to_string(feasibility_threshold(p)) + ")");
    RobustBounds rb;
    rb.w_max = w_max;
    // soc_per_kw < 0, so both window ends move inward by |b| * w_max.
    rb.soc_lo = p.x_min - p.soc_per_kw * w_max;
    rb.soc_hi = p.x_max + p.soc_per_kw * w_max;
    rb.storage_lo = -p.p_ch + w_max;
    rb.storage_hi = p.p_dh - w_max;
    if (rb.soc_lo > rb.soc_hi + 1e-12 || rb.storage_lo > rb.storage_hi + 1e-12)
        throw InfeasibleTighteningError("tightened window is empty");
    return rb;
}

// Replace the SoC and storage-power windows of every horizon step by their
// tightened versions; one scalar w_max covers the whole horizon. All other
// rows are unchanged.
inline HorizonProblem tighten_constraints(const MicrogridParams& p, double w_max,
                                          const HorizonProblem& base) {
    RobustBounds rb = compute_robust_bounds(p, w_max);
    HorizonProblem out = base;
    for (auto& sb : out.bounds) {
        sb.soc_lo = rb.soc_lo;
        sb.soc_hi = rb.soc_hi;
        sb.storage_lo = rb.storage_lo;
        sb.storage_hi = rb.storage_hi;
    }
    return out;
}

// Closed-loop guard: a disturbance realized at full strength can leave the
// measured SoC outside the tightened window, from where the tightened problem
// has no solution. Clamp the window of the early steps to the trajectory that
// returns at the maximum safe rate, which forces the plan back toward the
// window while realized operation keeps honoring the original bounds:
// recovery charging keeps a d_max margin (attacks can only push the storage
// toward discharge), recovery discharging keeps the full tightened margin.
// Steps whose window is reachable are left untouched. Returns true if any
// step was adjusted.
inline bool apply_state_recovery(HorizonProblem& h, const MicrogridParams& p) {
    bool adjusted = false;
    double rise = h.x_measured;  // worst admissible state entering each step
    double fall = h.x_measured;
    double charge_rate = std::max(0.0, p.p_ch - p.d_max);
    for (auto& sb : h.bounds) {
        double best = h.storage_eff * rise + h.soc_per_kw * sb.storage_lo;
        if (best < sb.soc_lo - 1e-12) {
            // Window bottom unreachable under the tightened charge bound:
            // allow charging up to the load-noise margin, then clamp the row
            // to whatever remains reachable.
            sb.storage_lo = std::min(sb.storage_lo, -charge_rate);
            adjusted = true;
            best = h.storage_eff * rise + h.soc_per_kw * sb.storage_lo;
            if (best < sb.soc_lo - 1e-12) sb.soc_lo = best;
        }
        rise = sb.soc_lo;
        double least = h.storage_eff * fall + h.soc_per_kw * std::max(0.0, sb.storage_hi);
        if (least > sb.soc_hi + 1e-12) {
            sb.soc_hi = least;  // forced descent; the discharge bound keeps its attack margin
            adjusted = true;
        }
        fall = sb.soc_hi;
    }
    return adjusted;
}

}  // namespace mgrid
