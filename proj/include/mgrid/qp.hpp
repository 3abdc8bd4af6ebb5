#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <type_traits>
#include <vector>

#include "mgrid/common.hpp"

namespace mgrid {

// Dense strictly convex quadratic program
//   minimize    0.5 u'Hu + g'u
//   subject to  A u <= b,  E u = d
// with H symmetric positive definite. Stationarity convention:
//   H u + g + A'mu + E'nu = 0,  mu >= 0.
struct QpProblem {
    Mat H;
    Vec g;
    Mat A;  // inequality rows, may be 0 x n
    Vec b;
    Mat E;  // equality rows, may be 0 x n
    Vec d;

    int n() const { return static_cast<int>(H.rows()); }
    int ineq_count() const { return static_cast<int>(A.rows()); }
    int eq_count() const { return static_cast<int>(E.rows()); }

    void validate() const {
        if (H.rows() != H.cols()) throw InvariantError("QpProblem: H not square");
        if (g.size() != H.rows()) throw InvariantError("QpProblem: g dimension mismatch");
        if (A.rows() != b.size() || (A.rows() > 0 && A.cols() != H.rows()))
            throw InvariantError("QpProblem: inequality dimension mismatch");
        if (E.rows() != d.size() || (E.rows() > 0 && E.cols() != H.rows()))
            throw InvariantError("QpProblem: equality dimension mismatch");
    }
};

enum class QpStatus { optimal, infeasible, iteration_limit };

inline const char* to_string(QpStatus s) {
    switch (s) {
        case QpStatus::optimal: return "optimal";
        case QpStatus::infeasible: return "infeasible";
        case QpStatus::iteration_limit: return "iteration-limit";
    }
    return "?";
}

struct QpSolution {
    Vec u;
    Vec ineq_duals;  // mu >= 0, one per inequality row
    Vec eq_duals;    // nu, sign-free
    QpStatus status = QpStatus::iteration_limit;
    double kkt_residual = std::numeric_limits<double>::infinity();
    double objective = std::numeric_limits<double>::infinity();
    std::vector<int> working_set;  // active inequality rows at the solution
    int iterations = 0;
};

// Caller-held cache of the KKT factorization for one working set. Reusable
// across solves only while H, A and E stay unchanged (negotiation rounds vary
// just the linear term); the caller owns that promise.
struct QpFactorCache {
    bool valid = false;
    std::vector<int> working_set;
    Eigen::Index dim = 0;
    Eigen::PartialPivLU<Mat> lu;
};

struct QpOptions {
    double tol = 1e-8;
    int max_iter = -1;  // -1: 200 + 10 * total constraint rows
    const std::vector<int>* warm_working_set = nullptr;
    const Vec* warm_point = nullptr;
    QpFactorCache* factor_cache = nullptr;
};

// Independent re-evaluation of the KKT conditions for a reported solution.
struct KktReport {
    double stationarity = 0.0;      // ||Hu + g + A'mu + E'nu||_inf
    double primal_ineq = 0.0;       // max_i (A_i u - b_i)_+
    double primal_eq = 0.0;         // ||E u - d||_inf
    double dual_feasibility = 0.0;  // max_i (-mu_i)_+
    double complementarity = 0.0;   // max_i |mu_i (A_i u - b_i)|
    double normalized = 0.0;        // worst of the above, scale-normalized
};

inline KktReport check_kkt(const QpProblem& p, const QpSolution& s) {
    KktReport r;
    Vec stat = p.H * s.u + p.g;
    if (p.ineq_count() > 0) stat += p.A.transpose() * s.ineq_duals;
    if (p.eq_count() > 0) stat += p.E.transpose() * s.eq_duals;
    r.stationarity = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;

    double stat_scale = 1.0 + (p.H * s.u).cwiseAbs().maxCoeff() + p.g.cwiseAbs().maxCoeff();
    double norm = r.stationarity / stat_scale;

    for (int i = 0; i < p.ineq_count(); ++i) {
        double slack = p.A.row(i).dot(s.u) - p.b(i);
        double scale = 1.0 + std::abs(p.b(i));
        r.primal_ineq = std::max(r.primal_ineq, slack);
        r.dual_feasibility = std::max(r.dual_feasibility, -s.ineq_duals(i));
        r.complementarity = std::max(r.complementarity, std::abs(s.ineq_duals(i) * slack));
        norm = std::max(norm, slack / scale);
        norm = std::max(norm, -s.ineq_duals(i) / (1.0 + std::abs(s.ineq_duals(i))));
        norm = std::max(norm, std::abs(s.ineq_duals(i) * slack) / (scale * (1.0 + std::abs(s.ineq_duals(i)))));
    }
    for (int i = 0; i < p.eq_count(); ++i) {
        double res = std::abs(p.E.row(i).dot(s.u) - p.d(i));
        r.primal_eq = std::max(r.primal_eq, res);
        norm = std::max(norm, res / (1.0 + std::abs(p.d(i))));
    }
    r.normalized = std::max(norm, 0.0);
    return r;
}

inline std::string to_text(const QpProblem& p) {
    std::ostringstream os;
    os.precision(12);
    os << "# qp n=" << p.n() << " ineq=" << p.ineq_count() << " eq=" << p.eq_count() << "\n";
    auto mat = [&os](const char* name, const Mat& m) {
        os << name << " " << m.rows() << " " << m.cols() << "\n";
        for (int i = 0; i < m.rows(); ++i) {
            for (int j = 0; j < m.cols(); ++j) os << m(i, j) << (j + 1 < m.cols() ? " " : "");
            os << "\n";
        }
    };
    auto vec = [&os](const char* name, const Vec& v) {
        os << name << " " << v.size() << "\n";
        for (int i = 0; i < v.size(); ++i) os << v(i) << (i + 1 < v.size() ? " " : "");
        os << "\n";
    };
    mat("H", p.H);
    vec("g", p.g);
    mat("A", p.A);
    vec("b", p.b);
    mat("E", p.E);
    vec("d", p.d);
    return os.str();
}

namespace detail {

// Solves the KKT system for the working set W (all equality rows implied):
//   [H  Aw' E'; Aw 0 0; E 0 0] [z; mu; nu] = [r0; r1; r2]
// Falls back to full-pivot LU when the partial-pivot solve looks unstable
// (rank-deficient working sets). Returns false if the system is genuinely
// inconsistent.
inline bool solve_kkt(const QpProblem& p, const std::vector<int>& W, const Vec& r0, const Vec& r1,
                      const Vec& r2, Vec& z, Vec& mu_w, Vec& nu, QpFactorCache* cache = nullptr) {
    const int n = p.n();
    const int mw = static_cast<int>(W.size());
    const int me = p.eq_count();
    const int dim = n + mw + me;
    Vec rhs(dim);
    rhs.head(n) = r0;
    rhs.segment(n, mw) = r1;
    rhs.tail(me) = r2;

    Vec sol;
    if (cache && cache->valid && cache->dim == dim && cache->working_set == W) {
        sol = cache->lu.solve(rhs);
        if (sol.allFinite()) {
            z = sol.head(n);
            mu_w = sol.segment(n, mw);
            nu = sol.tail(me);
            return true;
        }
        cache->valid = false;  // stale or unstable; fall through and refactor
    }

    Mat K = Mat::Zero(dim, dim);
    K.topLeftCorner(n, n) = p.H;
    for (int i = 0; i < mw; ++i) {
        K.block(n + i, 0, 1, n) = p.A.row(W[i]);
        K.block(0, n + i, n, 1) = p.A.row(W[i]).transpose();
    }
    if (me > 0) {
        K.block(n + mw, 0, me, n) = p.E;
        K.block(0, n + mw, n, me) = p.E.transpose();
    }

    Eigen::PartialPivLU<Mat> plu(K);
    sol = plu.solve(rhs);
    double res = (K * sol - rhs).cwiseAbs().maxCoeff();
    double scale = 1.0 + rhs.cwiseAbs().maxCoeff();
    if (!sol.allFinite() || res > 1e-7 * scale) {
        Eigen::FullPivLU<Mat> lu(K);
        sol = lu.solve(rhs);
        res = (K * sol - rhs).cwiseAbs().maxCoeff();
        if (!sol.allFinite() || res > 1e-6 * scale) return false;
        if (cache) cache->valid = false;
    } else if (cache) {
        cache->valid = true;
        cache->working_set = W;
        cache->dim = dim;
        cache->lu = std::move(plu);
    }
    z = sol.head(n);
    mu_w = sol.segment(n, mw);
    nu = sol.tail(me);
    return true;
}

inline double max_violation(const QpProblem& p, const Vec& u) {
    double v = 0.0;
    for (int i = 0; i < p.ineq_count(); ++i)
        v = std::max(v, (p.A.row(i).dot(u) - p.b(i)) / (1.0 + std::abs(p.b(i))));
    for (int i = 0; i < p.eq_count(); ++i)
        v = std::max(v, std::abs(p.E.row(i).dot(u) - p.d(i)) / (1.0 + std::abs(p.d(i))));
    return v;
}

// Primal active-set iteration from a feasible point. W must index inequality
// rows active at x. Smallest-index (Bland-style) selection on both entering
// and leaving rows keeps degenerate instances from cycling and makes the
// iteration trajectory deterministic. stop_when, if set, ends the iteration
// early once the current point satisfies it (used by the feasibility phase,
// which only needs a feasible point, not an optimum).
template <typename StopFn = std::nullptr_t>
inline QpStatus active_set_iterate(const QpProblem& p, Vec& x, std::vector<int>& W, Vec& mu_full,
                                   Vec& nu_out, int max_iter, int& iterations,
                                   StopFn stop_when = nullptr, QpFactorCache* cache = nullptr) {
    const int m = p.ineq_count();
    std::vector<char> in_w(static_cast<size_t>(std::max(m, 1)), 0);
    for (int i : W) in_w[static_cast<size_t>(i)] = 1;

    while (iterations < max_iter) {
        ++iterations;
        if constexpr (!std::is_same_v<StopFn, std::nullptr_t>) {
            if (stop_when(x)) return QpStatus::optimal;
        }
        Vec r0 = -(p.g + p.H * x);
        Vec r1(W.size());
        for (size_t i = 0; i < W.size(); ++i) r1(static_cast<Eigen::Index>(i)) = p.b(W[i]) - p.A.row(W[i]).dot(x);
        Vec r2 = p.eq_count() > 0 ? Vec(p.d - p.E * x) : Vec(0);

        Vec step, mu_w, nu;
        if (!solve_kkt(p, W, r0, r1, r2, step, mu_w, nu, cache)) {
            // Rank-deficient working set: drop the most recent addition.
            if (W.empty()) return QpStatus::iteration_limit;
            in_w[static_cast<size_t>(W.back())] = 0;
            W.pop_back();
            continue;
        }

        double step_norm = step.size() ? step.cwiseAbs().maxCoeff() : 0.0;
        if (step_norm <= 1e-11 * (1.0 + x.cwiseAbs().maxCoeff())) {
            // Stationary on W: check multiplier signs.
            int leave = -1;
            double mu_scale = 1.0 + (mu_w.size() ? mu_w.cwiseAbs().maxCoeff() : 0.0);
            for (size_t i = 0; i < W.size(); ++i) {
                if (mu_w(static_cast<Eigen::Index>(i)) < -1e-10 * mu_scale) {
                    if (leave < 0 || W[i] < W[static_cast<size_t>(leave)]) leave = static_cast<int>(i);
                }
            }
            if (leave < 0) {
                mu_full = Vec::Zero(m);
                for (size_t i = 0; i < W.size(); ++i) mu_full(W[i]) = std::max(0.0, mu_w(static_cast<Eigen::Index>(i)));
                nu_out = nu;
                return QpStatus::optimal;
            }
            in_w[static_cast<size_t>(W[static_cast<size_t>(leave)])] = 0;
            W.erase(W.begin() + leave);
            continue;
        }

        // Ratio test against rows not in W.
        double alpha = 1.0;
        for (int i = 0; i < m; ++i) {
            if (in_w[static_cast<size_t>(i)]) continue;
            double ap = p.A.row(i).dot(step);
            if (ap <= 1e-12 * (1.0 + p.A.row(i).cwiseAbs().maxCoeff())) continue;
            double gap = p.b(i) - p.A.row(i).dot(x);
            double ai = std::max(0.0, gap / ap);
            if (ai < alpha) alpha = ai;
        }
        int blocker = -1;
        if (alpha < 1.0) {
            for (int i = 0; i < m; ++i) {
                if (in_w[static_cast<size_t>(i)]) continue;
                double ap = p.A.row(i).dot(step);
                if (ap <= 1e-12 * (1.0 + p.A.row(i).cwiseAbs().maxCoeff())) continue;
                double ai = std::max(0.0, (p.b(i) - p.A.row(i).dot(x)) / ap);
                if (ai <= alpha + 1e-12 * (1.0 + alpha)) {
                    blocker = i;
                    break;  // rows scanned in index order: first hit is smallest
                }
            }
        }
        x += alpha * step;
        if (blocker >= 0) {
            W.push_back(blocker);
            in_w[static_cast<size_t>(blocker)] = 1;
        }
    }
    return QpStatus::iteration_limit;
}

}  // namespace detail

inline QpSolution solve_qp(const QpProblem& p, const QpOptions& opts = {}) {
    p.validate();
    const int n = p.n();
    const int m = p.ineq_count();
    const int me = p.eq_count();
    const int max_iter = opts.max_iter > 0 ? opts.max_iter : 200 + 10 * (m + me);
    const double feas_tol = 1e-9;

    QpSolution sol;
    sol.ineq_duals = Vec::Zero(m);
    sol.eq_duals = Vec::Zero(me);

    Vec x;
    std::vector<int> W;
    bool have_start = false;

    // Warm point: accept if feasible, keeping only rows still active there.
    if (opts.warm_point && opts.warm_point->size() == n &&
        detail::max_violation(p, *opts.warm_point) <= feas_tol) {
        x = *opts.warm_point;
        if (opts.warm_working_set) {
            for (int i : *opts.warm_working_set) {
                if (i >= 0 && i < m && std::abs(p.A.row(i).dot(x) - p.b(i)) <= 1e-8 * (1.0 + std::abs(p.b(i))))
                    W.push_back(i);
            }
            std::sort(W.begin(), W.end());
            W.erase(std::unique(W.begin(), W.end()), W.end());
        }
        have_start = true;
    }

    // Otherwise try the minimizer restricted to a candidate working set
    // (the warm set if given, else just the equalities).
    if (!have_start) {
        std::vector<int> Wc;
        if (opts.warm_working_set) {
            for (int i : *opts.warm_working_set)
                if (i >= 0 && i < m) Wc.push_back(i);
            std::sort(Wc.begin(), Wc.end());
            Wc.erase(std::unique(Wc.begin(), Wc.end()), Wc.end());
        }
        Vec r1(Wc.size());
        for (size_t i = 0; i < Wc.size(); ++i) r1(static_cast<Eigen::Index>(i)) = p.b(Wc[i]);
        Vec z, mu_w, nu;
        if (detail::solve_kkt(p, Wc, -p.g, r1, p.d, z, mu_w, nu, opts.factor_cache) &&
            detail::max_violation(p, z) <= feas_tol) {
            x = z;
            W = Wc;
            have_start = true;
        }
    }

    // Phase 1: minimize a shared violation slack over (u, s).
    if (!have_start) {
        Vec u0 = Vec::Zero(n);
        if (me > 0) {
            u0 = p.E.colPivHouseholderQr().solve(p.d);
            if ((p.E * u0 - p.d).cwiseAbs().maxCoeff() > 1e-7 * (1.0 + p.d.cwiseAbs().maxCoeff())) {
                sol.status = QpStatus::infeasible;  // inconsistent equalities
                sol.u = u0;
                return sol;
            }
        }
        double worst = 0.0;
        for (int i = 0; i < m; ++i) worst = std::max(worst, p.A.row(i).dot(u0) - p.b(i));
        double s0 = worst + 1.0;

        // The linear slack cost drives s to its bound exactly when a feasible
        // point exists; the quadratic terms only keep the problem strictly
        // convex and reasonably conditioned.
        double hscale = std::max(1.0, p.H.diagonal().cwiseAbs().maxCoeff());
        QpProblem ph;
        ph.H = Mat::Zero(n + 1, n + 1);
        ph.H.topLeftCorner(n, n) = Mat::Identity(n, n) * (1e-4 * hscale);
        ph.H(n, n) = hscale;
        ph.g = Vec::Zero(n + 1);
        ph.g(n) = hscale * (1.0 + s0);
        ph.A = Mat::Zero(m + 1, n + 1);
        ph.b = Vec::Zero(m + 1);
        ph.A.topLeftCorner(m, n) = p.A;
        ph.A.col(n).head(m).setConstant(-1.0);
        ph.b.head(m) = p.b;
        ph.A(m, n) = -1.0;  // s >= 0
        ph.b(m) = 0.0;
        ph.E = Mat::Zero(me, n + 1);
        if (me > 0) ph.E.leftCols(n) = p.E;
        ph.d = p.d;

        Vec xs(n + 1);
        xs.head(n) = u0;
        xs(n) = s0;
        std::vector<int> Wp;
        Vec mu_ph, nu_ph;
        int it1 = 0;
        const double b_scale = 1.0 + (m > 0 ? p.b.cwiseAbs().maxCoeff() : 0.0);
        const int idx_s = n;
        detail::active_set_iterate(
            ph, xs, Wp, mu_ph, nu_ph, 200 + 10 * (m + me + 1), it1,
            [idx_s, b_scale](const Vec& point) { return point(idx_s) <= 1e-9 * b_scale; });
        sol.iterations += it1;
        double s_star = xs(n);
        if (s_star > 1e-7 * b_scale) {
            sol.status = QpStatus::infeasible;
            sol.u = xs.head(n);
            sol.kkt_residual = s_star;
            return sol;
        }
        x = xs.head(n);
        W.clear();
        have_start = true;
    }

    Vec mu, nu;
    int it2 = 0;  // the feasibility phase has its own budget
    QpStatus st = detail::active_set_iterate(p, x, W, mu, nu, max_iter, it2, nullptr,
                                             opts.factor_cache);
    sol.iterations += it2;
    sol.u = x;
    sol.status = st;
    sol.working_set = W;
    std::sort(sol.working_set.begin(), sol.working_set.end());
    if (st == QpStatus::optimal) {
        sol.ineq_duals = mu;
        sol.eq_duals = nu;
    }
    sol.objective = 0.5 * x.dot(p.H * x) + p.g.dot(x);
    sol.kkt_residual = check_kkt(p, sol).normalized;
    return sol;
}

}  // namespace mgrid
