#include <catch2/catch_amalgamated.hpp>

#include "mgrid/dual_decomp.hpp"
#include "mgrid/orchestrator.hpp"
#include "mgrid/rng.hpp"
#include "support/instances.hpp"

using namespace mgrid;

namespace {

auto all_active = [](int, int) { return true; };

NegotiationOptions tight_options() {
    NegotiationOptions o;
    o.eps = 1e-6;
    o.max_iter = 20000;
    return o;
}

std::vector<Vec> zero_multipliers(const std::vector<HorizonProblem>& ps) {
    std::vector<Vec> out;
    for (const auto& h : ps)
        out.push_back(Vec::Zero(h.hp * static_cast<Eigen::Index>(h.neighbors.size())));
    return out;
}

}  // namespace

TEST_CASE("zero prices reproduce the decoupled local problem") {
    auto rng = make_stream(50, "dd");
    auto net = testing::random_network(rng, 2, 3);
    const auto& h = net.problems[0];
    Vec lam = Vec::Zero(h.hp * static_cast<Eigen::Index>(h.neighbors.size()));
    std::vector<const Vec*> recv(h.neighbors.size(), nullptr);
    QpProblem priced = build_local_subproblem(h, lam, recv);
    QpProblem plain = h.to_qp();
    CHECK((priced.g - plain.g).cwiseAbs().maxCoeff() == 0.0);
    CHECK((priced.H - plain.H).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("own multiplier prices the matching transfer variable") {
    auto rng = make_stream(51, "dd");
    auto net = testing::random_network(rng, 2, 2);
    const auto& h = net.problems[0];
    REQUIRE(h.neighbors.size() == 1);
    Vec lam = Vec::Zero(h.hp);
    lam(0) = 1.0;  // step 0, first neighbor
    std::vector<const Vec*> recv(1, nullptr);
    QpProblem qp = build_local_subproblem(h, lam, recv);
    CHECK(qp.g(h.transfer_var(0, 0)) == 1.0);
    CHECK(qp.g.cwiseAbs().sum() == 1.0);
}

TEST_CASE("received multipliers add onto the same edge entry") {
    auto rng = make_stream(52, "dd");
    auto net = testing::random_network(rng, 2, 2);
    const auto& h = net.problems[1];
    Vec lam(h.hp);
    lam << 0.5, -0.25;
    Vec from_peer(h.hp);
    from_peer << 2.0, 1.0;
    std::vector<const Vec*> recv{&from_peer};
    QpProblem qp = build_local_subproblem(h, lam, recv);
    CHECK(qp.g(h.transfer_var(0, 0)) == Catch::Approx(2.5));
    CHECK(qp.g(h.transfer_var(1, 0)) == Catch::Approx(0.75));
}

TEST_CASE("malformed or missing messages raise protocol errors") {
    auto rng = make_stream(53, "dd");
    auto net = testing::random_network(rng, 2, 3);
    const auto& h = net.problems[0];
    Vec lam = Vec::Zero(h.hp);
    Vec short_msg = Vec::Zero(h.hp - 1);
    std::vector<const Vec*> recv{&short_msg};
    CHECK_THROWS_AS(build_local_subproblem(h, lam, recv), ProtocolError);

    RoundMailbox box;
    CHECK_THROWS_AS(detail::fetch_message(box.multipliers, 1, 0), ProtocolError);
}

TEST_CASE("coupling residual is the per-edge disagreement") {
    auto rng = make_stream(54, "dd");
    auto net = testing::random_network(rng, 2, 1);
    const auto& h = net.problems[0];
    Vec u = Vec::Zero(h.var_count());
    u(h.transfer_var(0, 0)) = 5.0;
    Vec agreed = Vec::Constant(1, -5.0);
    Vec stubborn = Vec::Constant(1, 0.0);
    std::vector<const Vec*> r1{&agreed}, r2{&stubborn};
    CHECK(coupling_residual(h, u, r1)(0) == 0.0);
    CHECK(coupling_residual(h, u, r2)(0) == 5.0);
}

TEST_CASE("multiplier ascent arithmetic and fixed point") {
    Vec lam = Vec::Zero(1), psi = Vec::Constant(1, 2.0);
    CHECK(multiplier_update(lam, psi, 0.5)(0) == Catch::Approx(1.0));
    Vec quiet = Vec::Zero(1);
    CHECK(multiplier_update(psi, quiet, 0.5)(0) == Catch::Approx(2.0));
    CHECK_THROWS_AS(multiplier_update(lam, psi, 0.0), ConfigError);
    CHECK_THROWS_AS(multiplier_update(lam, psi, 1.0), ConfigError);
}

TEST_CASE("an isolated agent converges immediately to its decoupled optimum") {
    MicrogridParams p;
    auto h = assemble_nominal_problem(0, p, {}, {}, 0.55, {400.0, 450.0}, 2);
    std::vector<HorizonProblem> ps{h};
    auto lams = zero_multipliers(ps);
    NegotiationResult res = negotiate(ps, all_active, lams, tight_options());
    REQUIRE(res.converged);
    CHECK(res.iterations == 1);
    QpSolution direct = solve_qp(h.to_qp());
    CHECK((res.u[0] - direct.u).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("power flows from the cheap producer to the expensive one") {
    MicrogridParams cheap, dear;
    cheap.c_gen = 5.0;
    dear.c_gen = 10.0;
    int hp = 3;
    std::vector<double> loads(static_cast<size_t>(hp), 500.0);
    std::vector<HorizonProblem> ps{
        assemble_nominal_problem(0, cheap, {1}, {100.0}, 0.55, loads, hp),
        assemble_nominal_problem(1, dear, {0}, {100.0}, 0.55, loads, hp)};
    auto lams = zero_multipliers(ps);
    NegotiationResult res = negotiate(ps, all_active, lams, tight_options());
    REQUIRE(res.converged);
    CHECK(res.max_residual_norm <= 1e-6);
    for (int l = 0; l < hp; ++l) {
        double into_expensive = res.u[1](ps[1].transfer_var(l, 0));
        CHECK(into_expensive > 50.0);
        CHECK(into_expensive <= 100.0 + 1e-6);
    }
    // centralized reference on the same problems
    std::vector<Vec> ref = central_solve(ps, {{0, 1}});
    for (int i = 0; i < 2; ++i) {
        double scale = 1.0 + ref[static_cast<size_t>(i)].cwiseAbs().maxCoeff();
        CHECK((res.u[static_cast<size_t>(i)] - ref[static_cast<size_t>(i)]).cwiseAbs().maxCoeff() <=
              1e-3 * scale);
    }
}

TEST_CASE("negotiation matches the centralized solution on random networks") {
    auto rng = make_stream(2025, "dd-oracle");
    for (int trial = 0; trial < 12; ++trial) {
        int n = 2 + static_cast<int>(rng() % 3);
        int hp = 1 + static_cast<int>(rng() % 4);
        auto net = testing::random_network(rng, n, hp);
        auto lams = zero_multipliers(net.problems);
        NegotiationResult res = negotiate(net.problems, all_active, lams, tight_options());
        REQUIRE(res.converged);
        std::vector<Vec> ref = central_solve(net.problems, net.edges);
        for (int i = 0; i < n; ++i) {
            double scale = 1.0 + ref[static_cast<size_t>(i)].cwiseAbs().maxCoeff();
            INFO("trial " << trial << " agent " << i);
            CHECK((res.u[static_cast<size_t>(i)] - ref[static_cast<size_t>(i)]).cwiseAbs().maxCoeff() <=
                  1e-3 * scale);
        }
        // the centralized answer itself honors the agreement rows
        for (auto& [a, b] : net.edges) {
            const auto& ha = net.problems[static_cast<size_t>(a)];
            const auto& hb = net.problems[static_cast<size_t>(b)];
            for (int l = 0; l < hp; ++l) {
                double sum = ref[static_cast<size_t>(a)](ha.transfer_var(l, ha.neighbor_pos(b))) +
                             ref[static_cast<size_t>(b)](hb.transfer_var(l, hb.neighbor_pos(a)));
                CHECK(std::abs(sum) <= 1e-7);
            }
        }
    }
}

TEST_CASE("both endpoints of an edge see the same residual") {
    auto rng = make_stream(57, "dd-sym");
    auto net = testing::random_network(rng, 3, 2);
    auto lams = zero_multipliers(net.problems);
    NegotiationOptions o;
    o.eps = 1e-9;   // force several rounds
    o.max_iter = 3;  // stop early: inspect a non-converged iterate
    NegotiationResult res = negotiate(net.problems, all_active, lams, o);
    for (auto& [a, b] : net.edges) {
        const auto& ha = net.problems[static_cast<size_t>(a)];
        const auto& hb = net.problems[static_cast<size_t>(b)];
        for (int l = 0; l < ha.hp; ++l) {
            double via_a = res.u[static_cast<size_t>(a)](ha.transfer_var(l, ha.neighbor_pos(b))) +
                           res.u[static_cast<size_t>(b)](hb.transfer_var(l, hb.neighbor_pos(a)));
            double via_b = res.u[static_cast<size_t>(b)](hb.transfer_var(l, hb.neighbor_pos(a))) +
                           res.u[static_cast<size_t>(a)](ha.transfer_var(l, ha.neighbor_pos(b)));
            CHECK(via_a == via_b);  // identical by construction, kept as a regression guard
        }
    }
}

TEST_CASE("multipliers stay bounded while disagreement shrinks on a two-agent toy") {
    MicrogridParams a, b;
    a.c_gen = 5.0;
    b.c_gen = 10.0;
    std::vector<HorizonProblem> ps{
        assemble_nominal_problem(0, a, {1}, {100.0}, 0.5, {600.0}, 1),
        assemble_nominal_problem(1, b, {0}, {100.0}, 0.6, {300.0}, 1)};
    std::vector<Vec> lams = zero_multipliers(ps);
    NegotiationOptions o;
    o.eps = 1e-10;
    double first_norm = 0.0, last_norm = 0.0;
    double lam_bound = 0.0;
    for (int round = 0; round < 400; ++round) {
        o.max_iter = 1;
        NegotiationResult res = negotiate(ps, all_active, lams, o);
        lam_bound = std::max({lam_bound, lams[0].cwiseAbs().maxCoeff(), lams[1].cwiseAbs().maxCoeff()});
        if (round == 0) first_norm = res.max_residual_norm;
        last_norm = res.max_residual_norm;
        if (last_norm < 1e-10) break;
    }
    CHECK(lam_bound < 1e4);                 // prices stay bounded
    CHECK(last_norm < 0.25 * first_norm);   // disagreement keeps shrinking
}

TEST_CASE("negotiation trajectories are bit-identical across runs") {
    auto run_once = [](std::uint64_t seed) {
        auto rng = make_stream(seed, "dd-det");
        auto net = testing::random_network(rng, 3, 3);
        auto lams = zero_multipliers(net.problems);
        NegotiationResult res = negotiate(net.problems, all_active, lams, tight_options());
        return std::make_pair(res, lams);
    };
    auto [r1, l1] = run_once(77);
    auto [r2, l2] = run_once(77);
    REQUIRE(r1.iterations == r2.iterations);
    REQUIRE(r1.converged == r2.converged);
    for (size_t i = 0; i < r1.u.size(); ++i) {
        for (int c = 0; c < r1.u[i].size(); ++c) CHECK(r1.u[i](c) == r2.u[i](c));
        for (int c = 0; c < l1[i].size(); ++c) CHECK(l1[i](c) == l2[i](c));
    }
}

TEST_CASE("hitting the round cap reports a non-converged best iterate") {
    auto rng = make_stream(58, "dd-cap");
    auto net = testing::random_network(rng, 3, 2);
    auto lams = zero_multipliers(net.problems);
    NegotiationOptions o;
    o.eps = 1e-12;
    o.max_iter = 2;
    NegotiationResult res = negotiate(net.problems, all_active, lams, o);
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 2);
    for (const auto& u : res.u) CHECK(u.size() > 0);
}
