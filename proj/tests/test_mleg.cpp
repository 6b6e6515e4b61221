#include <doctest.h>

#include <cmath>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/eval.hpp"
#include "chaoscope/mleg.hpp"
#include "chaoscope/policy.hpp"
#include "chaoscope/rng.hpp"
#include "oracles.hpp"
#include "reference_trainer.hpp"

using namespace chaoscope;

TEST_CASE("lambda returns") {
    SUBCASE("lambda zero collapses to one-step TD targets") {
        const Vec r{1.0, 2.0, 3.0};
        const Vec v{10.0, 20.0, 30.0, 40.0};
        const Vec out = lambda_returns(r, v, 0.9, 0.0);
        CHECK(out[0] == doctest::Approx(1.0 + 0.9 * 20.0));
        CHECK(out[1] == doctest::Approx(2.0 + 0.9 * 30.0));
        CHECK(out[2] == doctest::Approx(3.0 + 0.9 * 40.0));
        CHECK(out[3] == 40.0);
    }
    SUBCASE("lambda one with zero tail gives Monte-Carlo returns") {
        const Vec r{1.0, 1.0, 1.0};
        const Vec v{0.0, 0.0, 0.0, 0.0};
        const Vec out = lambda_returns(r, v, 0.5, 1.0);
        CHECK(out[0] == doctest::Approx(1.0 + 0.5 + 0.25));
        CHECK(out[1] == doctest::Approx(1.0 + 0.5));
        CHECK(out[2] == doctest::Approx(1.0));
    }
    SUBCASE("hand-evaluated recursion") {
        const Vec out = lambda_returns({1.0, 1.0}, {0.0, 0.0, 10.0}, 0.9, 0.5);
        CHECK(out[0] == doctest::Approx(5.5));
        CHECK(out[1] == doctest::Approx(10.0));
        CHECK(out[2] == doctest::Approx(10.0));
    }
    SUBCASE("recursion equals the unrolled n-step mixture") {
        Rng rng(31);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t T = 1 + rng.next_u64() % 8;
            Vec r(T), v(T + 1);
            for (auto& x : r) x = rng.uniform(-1.0, 1.0);
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
            const double gamma = rng.uniform(0.0, 0.99);
            const double lambda = rng.uniform(0.0, 1.0);
            const Vec fast = lambda_returns(r, v, gamma, lambda);
            const Vec slow = oracle::lambda_return_unrolled(r, v, gamma, lambda);
            for (std::size_t t = 0; t <= T; ++t)
                CHECK(fast[t] == doctest::Approx(slow[t]).epsilon(1e-11));
        }
    }
    SUBCASE("length mismatch is an error") {
        CHECK_THROWS_AS(lambda_returns({1.0, 1.0}, {0.0, 0.0}, 0.9, 0.5), ConfigError);
    }
}

namespace {

struct BundleSetup {
    ad::Tape tape;
    PolicyParams policy;
    int policy_leaf = -1;
    TrajectoryBundle bundle;
};

BundleSetup make_logistic_bundle(int T, int L, std::uint64_t seed, double init_log_std = -1.0) {
    BundleSetup s;
    auto sys = make_system("logistic_control");
    s.policy = make_mlp(sys->info(), {8}, true, 11, init_log_std);
    s.policy_leaf = s.tape.input(s.policy.flat);
    s.bundle = imagine_bundle(s.tape, *sys, s.policy, s.policy_leaf, {0.4}, HiddenState{}, T, L,
                              seed);
    return s;
}

}  // namespace

TEST_CASE("bundles with near-zero std stay together") {
    auto setup = make_logistic_bundle(10, 3, 5, -5.0);
    for (int t = 0; t <= 10; ++t) {
        const double s0 = setup.tape.value(setup.bundle.state_nodes[t][0])[0];
        for (int l = 1; l < 3; ++l)
            CHECK(std::fabs(setup.tape.value(setup.bundle.state_nodes[t][l])[0] - s0) <= 1e-2);
    }
}

TEST_CASE("forcing equal member seeds collapses the bundle variance to zero") {
    ad::Tape tape;
    auto sys = make_system("logistic_control");
    const auto policy = make_mlp(sys->info(), {8}, true, 11, -0.5);
    const int leaf = tape.input(policy.flat);
    const auto bundle = imagine_bundle(tape, *sys, policy, leaf, {0.4}, HiddenState{}, 6,
                                       {42ull, 42ull});
    for (int t = 0; t <= 6; ++t)
        CHECK(tape.value(bundle.state_nodes[t][0]) == tape.value(bundle.state_nodes[t][1]));
    const int reg = mle_reg_loss(tape, bundle);
    CHECK(tape.scalar_value(reg) == 0.0);
}

TEST_CASE("bundle rewards replay from the recorded seeds") {
    auto first = make_logistic_bundle(8, 3, 123);
    ad::Tape tape2;
    auto sys = make_system("logistic_control");
    const int leaf2 = tape2.input(first.policy.flat);
    const auto replay = imagine_bundle(tape2, *sys, first.policy, leaf2, {0.4}, HiddenState{}, 8,
                                       first.bundle.member_seeds);
    CHECK(replay.rewards == first.bundle.rewards);
    CHECK(replay.actions == first.bundle.actions);
}

TEST_CASE("hand-computed variance of a two-member one-dimensional bundle") {
    ad::Tape tape;
    TrajectoryBundle bundle;
    bundle.members = 2;
    bundle.horizon = 1;
    bundle.state_dim = 1;
    bundle.state_nodes.resize(2);
    bundle.state_nodes[0] = {tape.constant({0.5}), tape.constant({0.5})};
    bundle.state_nodes[1] = {tape.constant({0.0}), tape.constant({2.0})};
    const int reg = mle_reg_loss(tape, bundle);
    CHECK(tape.scalar_value(reg) == doctest::Approx(1.0));  // population variance of {0, 2}
}

TEST_CASE("regularizer is non-negative and zero only for coincident members") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto setup = make_logistic_bundle(5, 3, seed);
        const int reg = mle_reg_loss(setup.tape, setup.bundle);
        CHECK(setup.tape.scalar_value(reg) > 0.0);
    }
}

TEST_CASE("regularizer gradient matches finite differences") {
    auto sys = make_system("logistic_control");
    const PolicyParams proto = make_mlp(sys->info(), {8}, true, 11, -1.0);
    for (int T : {3, 5}) {
        const auto res = ad::grad_check(
            [&](ad::Tape& t, int p) {
                PolicyParams pol = proto;  // shapes only; values live on the tape leaf
                pol.flat = t.value(p);
                const auto bundle =
                    imagine_bundle(t, *sys, pol, p, {0.4}, HiddenState{}, T, 3, 99);
                return mle_reg_loss(t, bundle);
            },
            proto.flat, 1e-5);
        INFO("horizon ", T, " worst index ", res.index);
        CHECK(res.max_rel_err <= 1e-4);
    }
}

TEST_CASE("shrinking the policy std shrinks the expected regularizer") {
    auto sys = make_system("linear1d");
    Vec means;
    for (double log_std : {std::log(0.3), std::log(0.1), std::log(0.03)}) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            ad::Tape tape;
            const auto policy = make_mlp(sys->info(), {8}, true, 4, log_std);
            const int leaf = tape.input(policy.flat);
            const auto bundle =
                imagine_bundle(tape, *sys, policy, leaf, {0.5}, HiddenState{}, 6, 3, seed);
            total += tape.scalar_value(mle_reg_loss(tape, bundle));
        }
        means.push_back(total / 20.0);
    }
    CHECK(means[0] > means[1]);
    CHECK(means[1] > means[2]);
}

TEST_CASE("policy loss structure") {
    auto setup = make_logistic_bundle(4, 2, 17);
    const int T = 4, L = 2;
    std::vector<Vec> values(L, Vec(T + 1, 0.0));
    std::vector<Vec> returns(L, Vec(T + 1, 0.0));
    ReturnScale scale;

    SUBCASE("zero advantage reduces the loss to the entropy term") {
        const int loss = policy_loss(setup.tape, setup.bundle, values, returns, scale, 0.5);
        double entropy_sum = 0.0;
        for (int t = 0; t < T; ++t)
            for (int l = 0; l < L; ++l)
                entropy_sum += setup.tape.scalar_value(setup.bundle.entropy_nodes[t][l]);
        CHECK(setup.tape.scalar_value(loss) ==
              doctest::Approx(-0.5 * entropy_sum / L).epsilon(1e-12));
    }
    SUBCASE("unit advantage with no entropy is the negative log-likelihood") {
        for (auto& r : returns) r.assign(T + 1, 1.0);
        const int loss = policy_loss(setup.tape, setup.bundle, values, returns, scale, 0.0);
        double lp_sum = 0.0;
        for (int t = 0; t < T; ++t)
            for (int l = 0; l < L; ++l)
                lp_sum += setup.tape.scalar_value(setup.bundle.log_prob_nodes[t][l]);
        CHECK(setup.tape.scalar_value(loss) == doctest::Approx(-lp_sum / L).epsilon(1e-12));
    }
    SUBCASE("the advantage path carries no gradient to value parameters") {
        const ValueNet value = ValueNet::make(1, {8}, 3);
        const int value_leaf = setup.tape.input(value.flat);
        // critic values enter the advantages numerically
        for (int l = 0; l < L; ++l)
            for (int t = 0; t <= T; ++t)
                values[l][t] = value.eval(setup.tape.value(setup.bundle.state_nodes[t][l]));
        for (auto& r : returns) r.assign(T + 1, 0.7);
        const int loss = policy_loss(setup.tape, setup.bundle, values, returns, scale, 0.1);
        setup.tape.backward(loss);
        for (double g : setup.tape.grad(value_leaf)) CHECK(g == 0.0);
        // while the loss value itself depends on the critic
        std::vector<Vec> shifted = values;
        for (auto& row : shifted)
            for (auto& v : row) v += 0.25;
        const int loss2 = policy_loss(setup.tape, setup.bundle, shifted, returns, scale, 0.1);
        CHECK(setup.tape.scalar_value(loss2) != setup.tape.scalar_value(loss));
    }
}

TEST_CASE("total loss composition") {
    auto setup = make_logistic_bundle(3, 2, 23);
    std::vector<Vec> values(2, Vec(4, 0.0));
    std::vector<Vec> returns(2, Vec(4, 0.5));
    ReturnScale scale;
    const int ploss = policy_loss(setup.tape, setup.bundle, values, returns, scale, 0.01);
    const int reg = mle_reg_loss(setup.tape, setup.bundle);

    SUBCASE("beta zero returns the policy node untouched") {
        CHECK(total_loss(setup.tape, ploss, -1, 0.0) == ploss);
    }
    SUBCASE("beta one is the plain sum") {
        const int total = total_loss(setup.tape, ploss, reg, 1.0);
        CHECK(setup.tape.scalar_value(total) ==
              doctest::Approx(setup.tape.scalar_value(ploss) + setup.tape.scalar_value(reg)));
    }
    SUBCASE("gradients are linear in beta") {
        const int p = setup.policy_leaf;
        setup.tape.backward(ploss);
        const Vec g0 = setup.tape.grad(p);
        setup.tape.backward(total_loss(setup.tape, ploss, reg, 1.0));
        const Vec g1 = setup.tape.grad(p);
        setup.tape.backward(total_loss(setup.tape, ploss, reg, 2.0));
        const Vec g2 = setup.tape.grad(p);
        for (std::size_t i = 0; i < g0.size(); ++i)
            CHECK(g2[i] - g1[i] == doctest::Approx(g1[i] - g0[i]).epsilon(1e-9));
    }
}

TEST_CASE("return scale tracks the percentile range with a floor of one") {
    ReturnScale scale;
    CHECK(scale.denom() == 1.0);
    scale.update(50.0);
    CHECK(scale.ema == doctest::Approx(0.5));
    CHECK(scale.denom() == 1.0);  // still under the floor
    for (int k = 0; k < 500; ++k) scale.update(50.0);
    CHECK(scale.denom() == doctest::Approx(50.0).epsilon(0.02));
}

TEST_CASE("deterministic policies cannot build bundles") {
    ad::Tape tape;
    auto sys = make_system("logistic_control");
    const auto policy = make_constant(sys->info(), {2.0});
    const int leaf = tape.constant(policy.flat);
    CHECK_THROWS_AS(
        imagine_bundle(tape, *sys, policy, leaf, {0.4}, HiddenState{}, 4, 3, 1), ConfigError);
}

TEST_CASE("recurrent bundles carry hidden-state variance") {
    ad::Tape tape;
    auto sys = make_system("logistic_control");
    const auto policy = make_mlp(sys->info(), {6}, true, 9, -0.5, 4);
    const int leaf = tape.input(policy.flat);
    const auto bundle =
        imagine_bundle(tape, *sys, policy, leaf, {0.4}, initial_hidden(policy), 5, 3, 77);
    REQUIRE(bundle.hidden_dim == 4);
    REQUIRE_FALSE(bundle.hidden_nodes.empty());
    const int reg = mle_reg_loss(tape, bundle);
    CHECK(tape.scalar_value(reg) > 0.0);
}

TEST_CASE("training is reproducible and the unregularized run matches the reference") {
    auto sys = make_system("logistic_control");
    TrainerConfig cfg;
    cfg.updates = 3;
    cfg.batch = 2;
    cfg.members = 2;
    cfg.horizon = 4;
    cfg.policy_hidden = {8};
    cfg.value_hidden = {8};
    cfg.spectrum_every = 1000;
    cfg.seed = 5;

    SUBCASE("identical configs give identical histories and weights") {
        cfg.beta = 1.0;
        const TrainResult a = train(*sys, cfg);
        const TrainResult b = train(*sys, cfg);
        CHECK(a.policy.flat == b.policy.flat);
        CHECK(a.value.flat == b.value.flat);
        REQUIRE(a.history.size() == b.history.size());
        for (std::size_t i = 0; i < a.history.size(); ++i) {
            CHECK(a.history[i].return_iqm == b.history[i].return_iqm);
            CHECK(a.history[i].reg_loss == b.history[i].reg_loss);
            CHECK(a.history[i].mle == b.history[i].mle);
        }
    }
    SUBCASE("beta = 0 bit-matches a trainer with no regularizer code") {
        cfg.beta = 0.0;
        const TrainResult real = train(*sys, cfg);
        const Vec ref = reference::train_unregularized(*sys, cfg);
        CHECK(real.policy.flat == ref);
        for (const auto& row : real.history) CHECK(row.reg_loss == 0.0);
    }
    SUBCASE("beta changes the run") {
        cfg.beta = 0.0;
        const TrainResult base = train(*sys, cfg);
        cfg.beta = 1.0;
        const TrainResult reg = train(*sys, cfg);
        CHECK(base.policy.flat != reg.policy.flat);
    }
}

TEST_CASE("recurrent policies train with the hidden-variance term") {
    auto sys = make_system("logistic_control");
    TrainerConfig cfg;
    cfg.updates = 3;
    cfg.batch = 2;
    cfg.horizon = 5;
    cfg.policy_hidden = {8};
    cfg.value_hidden = {8};
    cfg.policy_recurrent_dim = 4;
    cfg.seed = 9;
    const TrainResult a = train(*sys, cfg);
    const TrainResult b = train(*sys, cfg);
    CHECK(a.policy.flat == b.policy.flat);
    CHECK(a.policy.hidden_dim == 4);
    for (const auto& row : a.history) CHECK(row.reg_loss > 0.0);
}

TEST_CASE("balance training improves the smoothed return") {
    auto sys = make_system("cartpole");
    TrainerConfig cfg;
    cfg.updates = 100;
    cfg.horizon = 100;
    cfg.batch = 4;
    cfg.lr = 5e-3;
    cfg.value_lr = 5e-3;
    cfg.init_log_std = 0.7;
    cfg.spectrum_every = 1000;
    cfg.seed = 1;
    const TrainResult res = train(*sys, cfg);
    auto window = [&](int lo, int hi) {
        double s = 0.0;
        for (int i = lo; i < hi; ++i) s += res.history[static_cast<std::size_t>(i)].return_iqm;
        return s / (hi - lo);
    };
    CHECK(window(90, 100) > window(0, 10));
}

TEST_CASE("trainer configuration is validated") {
    TrainerConfig cfg;
    cfg.members = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainerConfig{};
    cfg.gamma = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
