#include <catch2/catch_amalgamated.hpp>

#include "mgrid/adversary.hpp"
#include "mgrid/rng.hpp"

using namespace mgrid;

namespace {

MicrogridParams table_params() { return MicrogridParams{}; }

// A balanced previous decision so the prediction error isolates the
// disturbance: storage covers whatever the forecast leaves open.
ControlInput balanced_input(double forecast, double gen, double imp, std::vector<std::pair<int, double>> tr) {
    ControlInput u;
    u.generation = gen;
    u.import_power = imp;
    u.transfers = std::move(tr);
    double received = 0.0;
    for (auto& [j, t] : u.transfers) received += t;
    u.storage = forecast - gen - imp - received;
    return u;
}

}  // namespace

TEST_CASE("priors split the expected attack probability over the neighbors") {
    HypothesisState h = init_priors(0.3, {4, 7});
    CHECK(h.probs(0) == Catch::Approx(0.7));
    CHECK(h.probs(1) == Catch::Approx(0.15));
    CHECK(h.probs(2) == Catch::Approx(0.15));
    CHECK(h.probs.sum() == Catch::Approx(1.0).margin(1e-15));

    HypothesisState certain = init_priors(1.0, {1, 2, 3, 5});
    CHECK(certain.probs(0) == 0.0);
    for (int j = 1; j <= 4; ++j) CHECK(certain.probs(j) == Catch::Approx(0.25));

    CHECK_THROWS_AS(init_priors(0.0, {1}), ConfigError);
    CHECK_THROWS_AS(init_priors(0.3, std::vector<int>{}), ConfigError);
}

TEST_CASE("clean steps produce a zero residual") {
    MicrogridParams p = table_params();
    double forecast = 500.0;
    ControlInput u = balanced_input(forecast, 300.0, 0.0, {{1, 40.0}, {2, -10.0}});
    double x_prev = 0.55;
    double x_now = p.storage_eff * x_prev + p.soc_per_kw * u.storage;  // actual load == forecast
    DetectionResult det = detection_residual(x_now, x_prev, u, forecast, p);
    CHECK(det.delta == Catch::Approx(0.0).margin(1e-15));
    CHECK(det.threshold == Catch::Approx(0.0125));
    CHECK_FALSE(det.attacked);
}

TEST_CASE("a load error at the bound sits exactly on the threshold and does not trigger") {
    MicrogridParams p = table_params();
    double forecast = 400.0;
    ControlInput u = balanced_input(forecast, 350.0, 0.0, {{1, 0.0}});
    double x_prev = 0.5;
    double w_d = p.d_max;  // realized load ran hot by exactly the bound
    double x_now = p.storage_eff * x_prev + p.soc_per_kw * (u.storage + w_d);
    DetectionResult det = detection_residual(x_now, x_prev, u, forecast, p);
    CHECK(det.delta == Catch::Approx(det.threshold).margin(1e-15));
    CHECK_FALSE(det.attacked);  // strict inequality
}

TEST_CASE("an attack-sized storage compensation trips the detector") {
    MicrogridParams p = table_params();
    double forecast = 450.0;
    ControlInput u = balanced_input(forecast, 400.0, 0.0, {{3, 20.0}});
    double x_prev = 0.6;
    double w_a = 150.0;
    double x_now = p.storage_eff * x_prev + p.soc_per_kw * (u.storage + w_a);
    DetectionResult det = detection_residual(x_now, x_prev, u, forecast, p);
    CHECK(det.delta == Catch::Approx(0.0375));
    CHECK(det.threshold == Catch::Approx(0.0125));
    CHECK(det.attacked);
}

TEST_CASE("posterior arithmetic follows the hand-computed updates") {
    HypothesisState h = init_priors(0.3, {2, 5});

    SECTION("attack with everyone connected wipes out the clean hypothesis") {
        HypothesisState h1 = bayes_update(h, true, {1, 1}, 0.3);
        CHECK(h1.probs(0) == Catch::Approx(0.0).margin(1e-15));
        CHECK(h1.probs(1) == Catch::Approx(0.5));
        CHECK(h1.probs(2) == Catch::Approx(0.5));
        CHECK(h1.n_at == 1);

        SECTION("a second attack while one suspect is blocked convicts the other") {
            HypothesisState h2 = bayes_update(h1, true, {0, 1}, 0.3);
            CHECK(h2.probs(1) == Catch::Approx(0.0).margin(1e-15));
            CHECK(h2.probs(2) == Catch::Approx(1.0));
            CHECK(h2.n_at == 2);
            CHECK(h2.certain_neighbor() == 1);
        }
    }

    SECTION("clean observations favor the no-attack hypothesis") {
        HypothesisState h1 = bayes_update(h, false, {1, 1}, 0.3);
        CHECK(h1.probs(0) == Catch::Approx(0.7 / 0.91));
        CHECK(h1.probs(1) == Catch::Approx(0.15 * 0.7 / 0.91));
        CHECK(h1.probs(2) == Catch::Approx(0.15 * 0.7 / 0.91));
        CHECK(h1.n_at == 0);
    }
}

TEST_CASE("an attack with every suspect blocked freezes the state and flags the anomaly") {
    HypothesisState h = init_priors(0.3, {2});
    HypothesisState h1 = bayes_update(h, true, {1}, 0.3);  // adversary identified outright
    HypothesisState frozen = bayes_update(h1, true, {0}, 0.3);
    CHECK(frozen.anomaly);
    CHECK(frozen.probs(1) == h1.probs(1));
}

TEST_CASE("posteriors conserve probability and zeros absorb") {
    auto rng = make_stream(3001, "bayes");
    for (int run = 0; run < 200; ++run) {
        int nn = 1 + static_cast<int>(rng() % 4);
        std::vector<int> nbrs;
        for (int j = 0; j < nn; ++j) nbrs.push_back(j + 1);
        double p_at = uniform(rng, 0.05, 1.0);
        HypothesisState h = init_priors(p_at, nbrs);
        for (int k = 0; k < 50; ++k) {
            std::vector<int> v(static_cast<size_t>(nn));
            for (auto& b : v) b = bernoulli(rng, 0.7) ? 1 : 0;
            bool attacked = bernoulli(rng, 0.3);
            Vec before = h.probs;
            HypothesisState next = bayes_update(h, attacked, v, p_at);
            if (!next.anomaly) {
                CHECK(next.probs.sum() == Catch::Approx(1.0).margin(1e-12));
                CHECK(next.probs.minCoeff() >= 0.0);
                for (int i = 0; i < before.size(); ++i)
                    if (before(i) == 0.0) CHECK(next.probs(i) == 0.0);
            }
            h = next;
        }
    }
}

TEST_CASE("no attack event leaves the decision untouched") {
    AdversaryPolicy pol;
    pol.attack_probability = 0.0;
    AdversaryContext ctx;
    ctx.params = table_params();
    ctx.x_measured = 0.55;
    ctx.soc_window_lo = 0.4;
    ctx.soc_window_hi = 0.7;
    ControlInput negotiated = balanced_input(500.0, 400.0, 0.0, {{1, 20.0}});
    auto rng = make_stream(1, "attack", 0);
    AttackOutcome out = inject_attack(pol, ctx, negotiated, {100.0}, {1}, rng);
    CHECK_FALSE(out.attacked);
    CHECK(out.implemented.generation == negotiated.generation);
    CHECK(out.implemented.transfers[0].second == negotiated.transfers[0].second);
    CHECK(out.extra_draw.empty());
}

TEST_CASE("attack draws the configured fraction and respects the line limit") {
    AdversaryPolicy pol;
    pol.attack_probability = 1.0;
    pol.magnitude_fraction = 0.5;
    AdversaryContext ctx;
    ctx.params = table_params();
    ctx.x_measured = 0.55;
    ctx.soc_window_lo = 0.4;
    ctx.soc_window_hi = 0.7;
    auto rng = make_stream(2, "attack", 0);

    SECTION("room on the line: the full fraction is taken") {
        ControlInput negotiated = balanced_input(500.0, 400.0, 0.0, {{1, 20.0}});
        AttackOutcome out = inject_attack(pol, ctx, negotiated, {100.0}, {1}, rng);
        REQUIRE(out.attacked);
        CHECK(out.implemented.transfers[0].second == Catch::Approx(70.0));
        REQUIRE(out.extra_draw.size() == 1);
        CHECK(out.extra_draw[0].second == Catch::Approx(50.0));
        // the stolen power displaces generation first
        CHECK(out.implemented.generation == Catch::Approx(350.0));
    }

    SECTION("near the line limit the draw is clamped") {
        ControlInput negotiated = balanced_input(500.0, 400.0, 0.0, {{1, 80.0}});
        AttackOutcome out = inject_attack(pol, ctx, negotiated, {100.0}, {1}, rng);
        REQUIRE(out.attacked);
        CHECK(out.implemented.transfers[0].second == Catch::Approx(100.0));
        CHECK(out.extra_draw[0].second == Catch::Approx(20.0));
    }
}

TEST_CASE("the draw is scaled down to what the adversary can absorb") {
    AdversaryPolicy pol;
    pol.attack_probability = 1.0;
    pol.magnitude_fraction = 1.0;
    AdversaryContext ctx;
    ctx.params = table_params();
    ctx.x_measured = 0.55;
    ctx.soc_window_lo = 0.4625;
    ctx.soc_window_hi = 0.6375;
    auto rng = make_stream(3, "attack", 0);
    // generation already at its floor, imports zero, planned storage at the
    // charging limit: only the power headroom absorbs.
    ControlInput negotiated;
    negotiated.generation = 0.0;
    negotiated.import_power = 0.0;
    negotiated.storage = -280.0;
    negotiated.transfers = {{1, 0.0}, {2, 0.0}};
    AttackOutcome out = inject_attack(pol, ctx, negotiated, {100.0, 100.0}, {1, 1}, rng);
    REQUIRE(out.attacked);
    double total = 0.0;
    for (auto& [j, extra] : out.extra_draw) total += extra;
    CHECK(total <= 20.0 + 1e-9);  // p_ch headroom: 300 - 280
    CHECK(out.implemented.storage >= -300.0 - 1e-9);
    // per-edge draw stays within twice the line limit in any case
    for (auto& [j, extra] : out.extra_draw) CHECK(extra <= 200.0);
}

TEST_CASE("blocked or adversarial neighbors are not drawn from") {
    AdversaryPolicy pol;
    pol.attack_probability = 1.0;
    pol.magnitude_fraction = 1.0;
    AdversaryContext ctx;
    ctx.params = table_params();
    ctx.x_measured = 0.5;
    ctx.soc_window_lo = 0.4;
    ctx.soc_window_hi = 0.7;
    auto rng = make_stream(4, "attack", 0);
    ControlInput negotiated = balanced_input(500.0, 450.0, 0.0, {{1, 0.0}, {2, 0.0}});
    AttackOutcome out = inject_attack(pol, ctx, negotiated, {100.0, 100.0}, {0, 1}, rng);
    REQUIRE(out.attacked);
    REQUIRE(out.extra_draw.size() == 1);
    CHECK(out.extra_draw[0].first == 2);
    CHECK(out.implemented.transfers[0].second == 0.0);
}
