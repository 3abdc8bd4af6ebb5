#pragma once

#include <vector>

#include "mgrid/common.hpp"
#include "mgrid/params.hpp"
#include "mgrid/qp.hpp"

namespace mgrid {

// Box windows for one prediction step. soc_* bound the *next* state reached
// from this step's storage action; SoC trajectory variables are eliminated by
// forward substitution of the storage dynamics, so decisions are controls only.
struct StepBounds {
    double soc_lo, soc_hi;
    double storage_lo, storage_hi;
    double gen_lo, gen_hi;
    double import_lo, import_hi;
    std::vector<double> transfer_lo, transfer_hi;  // per neighbor, canonical order
};

// One agent's finite-horizon dispatch problem in structured form. The dense
// QP is materialized on demand; keeping the structure explicit lets the
// robustification and the connection logic replace whole windows instead of
// editing matrix rows.
//
// Decision layout: step-major, per step [storage, generation, import,
// received transfer per neighbor (ascending agent index)].
struct HorizonProblem {
    int agent = 0;
    int hp = 0;
    std::vector<int> neighbors;          // ascending
    std::vector<double> neighbor_limits; // p_t_max per neighbor
    double storage_eff = 1.0;            // a
    double soc_per_kw = -2.5e-4;         // b = -T_s / e_cap
    double x_measured = 0.0;
    std::vector<double> forecast;        // per step, length hp
    double c_storage = 1.0, c_gen = 1.0, c_import = 1.0, c_transfer = 1.0;
    std::vector<StepBounds> bounds;      // length hp

    int vars_per_step() const { return 3 + static_cast<int>(neighbors.size()); }
    int var_count() const { return hp * vars_per_step(); }
    int var(int step, int comp) const { return step * vars_per_step() + comp; }
    int transfer_var(int step, int npos) const { return var(step, 3 + npos); }

    int neighbor_pos(int j) const {
        for (size_t i = 0; i < neighbors.size(); ++i)
            if (neighbors[i] == j) return static_cast<int>(i);
        throw InvariantError("neighbor_pos: not a neighbor");
    }

    // Coupled subvector (received transfers) of one step of a stacked decision.
    Vec coupled_slice(const Vec& u, int step) const {
        return u.segment(transfer_var(step, 0), static_cast<Eigen::Index>(neighbors.size()));
    }

    // Predicted SoC after `steps_done` steps given the stacked decision.
    double predicted_soc(const Vec& u, int steps_done) const {
        double x = x_measured;
        for (int l = 0; l < steps_done; ++l) x = storage_eff * x + soc_per_kw * u(var(l, 0));
        return x;
    }

    double stage_cost_at(const Vec& u, int step) const {
        double c = c_storage * u(var(step, 0)) * u(var(step, 0)) +
                   c_gen * u(var(step, 1)) * u(var(step, 1)) +
                   c_import * u(var(step, 2)) * u(var(step, 2));
        for (size_t j = 0; j < neighbors.size(); ++j) {
            double t = u(transfer_var(step, static_cast<int>(j)));
            c += c_transfer * t * t;
        }
        return c;
    }

    double horizon_cost(const Vec& u) const {
        double c = 0.0;
        for (int l = 0; l < hp; ++l) c += stage_cost_at(u, l);
        return c;
    }

    // Materialize as a dense QP. coupling_prices, when given, is a linear cost
    // on the transfer variables (step-major, one entry per neighbor per step).
    QpProblem to_qp(const Vec* coupling_prices = nullptr) const {
        const int n = var_count();
        const int ns = vars_per_step();
        const int nn = static_cast<int>(neighbors.size());

        QpProblem qp;
        qp.H = Mat::Zero(n, n);
        qp.g = Vec::Zero(n);
        for (int l = 0; l < hp; ++l) {
            qp.H(var(l, 0), var(l, 0)) = 2.0 * c_storage;
            qp.H(var(l, 1), var(l, 1)) = 2.0 * c_gen;
            qp.H(var(l, 2), var(l, 2)) = 2.0 * c_import;
            for (int j = 0; j < nn; ++j) qp.H(transfer_var(l, j), transfer_var(l, j)) = 2.0 * c_transfer;
        }
        if (coupling_prices) {
            if (coupling_prices->size() != static_cast<Eigen::Index>(hp * nn))
                throw InvariantError("coupling price vector has wrong size");
            for (int l = 0; l < hp; ++l)
                for (int j = 0; j < nn; ++j)
                    qp.g(transfer_var(l, j)) += (*coupling_prices)(l * nn + j);
        }

        // Power balance per step: storage + generation + import + received = forecast.
        qp.E = Mat::Zero(hp, n);
        qp.d = Vec::Zero(hp);
        for (int l = 0; l < hp; ++l) {
            for (int c = 0; c < ns; ++c) qp.E(l, var(l, c)) = 1.0;
            qp.d(l) = forecast[static_cast<size_t>(l)];
        }

        // Per step: 2 SoC rows (cumulative in storage), 2 storage, 2 generation,
        // 2 import, 2 per transfer.
        const int rows_per_step = 8 + 2 * nn;
        qp.A = Mat::Zero(hp * rows_per_step, n);
        qp.b = Vec::Zero(hp * rows_per_step);
        int r = 0;
        for (int l = 0; l < hp; ++l) {
            const StepBounds& sb = bounds[static_cast<size_t>(l)];
            // SoC after step l: a^(l+1) x0 + sum_m a^(l-m) b u_st,m
            double free_term = x_measured;
            for (int m = 0; m <= l; ++m) free_term *= storage_eff;
            for (int m = 0; m <= l; ++m) {
                double coef = soc_per_kw;
                for (int q = m; q < l; ++q) coef *= storage_eff;
                qp.A(r, var(m, 0)) = coef;
                qp.A(r + 1, var(m, 0)) = -coef;
            }
            qp.b(r) = sb.soc_hi - free_term;    // x_{l+1} <= soc_hi
            qp.b(r + 1) = free_term - sb.soc_lo;  // x_{l+1} >= soc_lo
            r += 2;
            qp.A(r, var(l, 0)) = 1.0;
            qp.b(r) = sb.storage_hi;
            qp.A(r + 1, var(l, 0)) = -1.0;
            qp.b(r + 1) = -sb.storage_lo;
            r += 2;
            qp.A(r, var(l, 1)) = 1.0;
            qp.b(r) = sb.gen_hi;
            qp.A(r + 1, var(l, 1)) = -1.0;
            qp.b(r + 1) = -sb.gen_lo;
            r += 2;
            qp.A(r, var(l, 2)) = 1.0;
            qp.b(r) = sb.import_hi;
            qp.A(r + 1, var(l, 2)) = -1.0;
            qp.b(r + 1) = -sb.import_lo;
            r += 2;
            for (int j = 0; j < nn; ++j) {
                qp.A(r, transfer_var(l, j)) = 1.0;
                qp.b(r) = sb.transfer_hi[static_cast<size_t>(j)];
                qp.A(r + 1, transfer_var(l, j)) = -1.0;
                qp.b(r + 1) = -sb.transfer_lo[static_cast<size_t>(j)];
                r += 2;
            }
        }
        return qp;
    }

    ControlInput first_step_input(const Vec& u) const {
        ControlInput ci;
        ci.storage = u(var(0, 0));
        ci.generation = u(var(0, 1));
        ci.import_power = u(var(0, 2));
        for (size_t j = 0; j < neighbors.size(); ++j)
            ci.transfers.emplace_back(neighbors[j], u(transfer_var(0, static_cast<int>(j))));
        return ci;
    }
};

// Nominal finite-horizon problem: power balance, eliminated storage dynamics,
// and the plain operational windows, repeated over the horizon.
inline HorizonProblem assemble_nominal_problem(int agent, const MicrogridParams& p,
                                               const std::vector<int>& neighbors,
                                               const std::vector<double>& neighbor_limits,
                                               double x_measured,
                                               const std::vector<double>& load_forecast, int hp) {
    if (hp <= 0) throw ConfigError("prediction horizon must be positive");
    if (static_cast<int>(load_forecast.size()) < hp)
        throw ConfigError("load forecast does not cover the horizon");
    if (x_measured < 0.0 || x_measured > 1.0)
        throw ConfigError("measured SoC outside [0,1]");
    if (neighbor_limits.size() != neighbors.size())
        throw InvariantError("neighbor limit list size mismatch");

    HorizonProblem h;
    h.agent = agent;
    h.hp = hp;
    h.neighbors = neighbors;
    h.neighbor_limits = neighbor_limits;
    h.storage_eff = p.storage_eff;
    h.soc_per_kw = p.soc_per_kw;
    h.x_measured = x_measured;
    h.forecast.assign(load_forecast.begin(), load_forecast.begin() + hp);
    h.c_storage = p.c_storage;
    h.c_gen = p.c_gen;
    h.c_import = p.c_import;
    h.c_transfer = p.c_transfer;

    StepBounds sb;
    sb.soc_lo = p.x_min;
    sb.soc_hi = p.x_max;
    sb.storage_lo = -p.p_ch;
    sb.storage_hi = p.p_dh;
    sb.gen_lo = p.p_gen_min;
    sb.gen_hi = p.p_gen_max;
    sb.import_lo = 0.0;
    sb.import_hi = p.p_import_max;
    for (double lim : neighbor_limits) {
        sb.transfer_lo.push_back(-lim);
        sb.transfer_hi.push_back(lim);
    }
    h.bounds.assign(static_cast<size_t>(hp), sb);
    return h;
}

}  // namespace mgrid
