#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/policy.hpp"
#include "chaoscope/report.hpp"
#include "chaoscope/rng.hpp"
#include "oracles.hpp"

using namespace chaoscope;

namespace {

SystemInfo wide_bounds_info(int state_dim, int action_dim, double bound) {
    SystemInfo info;
    info.state_dim = state_dim;
    info.action_dim = action_dim;
    info.bounds.lo.assign(static_cast<std::size_t>(action_dim), -bound);
    info.bounds.hi.assign(static_cast<std::size_t>(action_dim), bound);
    return info;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("no-action policy returns the zero vector") {
    auto sys = make_system("pointmass");
    const auto policy = make_no_action(sys->info());
    const HiddenState h;
    CHECK(act_mean(policy, {0.3, -0.2, 1.0, 2.0}, h).mean == Action{0.0, 0.0});
    CHECK(act_mean(policy, {9.0, 9.0, 9.0, 9.0}, h).mean == Action{0.0, 0.0});
}

TEST_CASE("zero-weight MLP gives a bias-driven constant action") {
    const auto info = wide_bounds_info(3, 2, 5.0);
    PolicyParams p = make_mlp(info, {4}, false, 1);
    for (auto& v : p.flat) v = 0.0;
    // set the output biases
    const std::size_t bias_off = p.flat.size() - 2;
    p.flat[bias_off] = 0.7;
    p.flat[bias_off + 1] = -1.3;
    const HiddenState h;
    const Action a1 = act_mean(p, {1.0, 2.0, 3.0}, h).mean;
    const Action a2 = act_mean(p, {-5.0, 0.0, 9.0}, h).mean;
    CHECK(a1 == a2);
    CHECK(a1[0] == doctest::Approx(5.0 * std::tanh(0.7 / 5.0)).epsilon(1e-14));
    CHECK(a1[1] == doctest::Approx(5.0 * std::tanh(-1.3 / 5.0)).epsilon(1e-14));
}

TEST_CASE("MLP mean matches an independent dense matrix chain") {
    const auto info = wide_bounds_info(4, 2, 3.0);
    const PolicyParams p = make_mlp(info, {16, 8}, true, 77);
    const State s{0.2, -0.9, 1.4, 0.33};
    const HiddenState h;
    const ActOut out = act_mean(p, s, h);

    const std::vector<int> dims{4, 16, 8, 2};
    const oracle::Vec pre = oracle::dense_chain(p.flat, dims, s);
    for (int d = 0; d < 2; ++d) {
        const double squashed = 3.0 * std::tanh(pre[static_cast<std::size_t>(d)] / 3.0);
        CHECK(std::fabs(out.mean[static_cast<std::size_t>(d)] - squashed) <= 1e-12);
    }
}

TEST_CASE("tape forward agrees with the plain forward") {
    const auto info = wide_bounds_info(3, 2, 2.0);
    for (int hidden_dim : {0, 5}) {
        const PolicyParams p = make_mlp(info, {8, 8}, true, 5, -0.7, hidden_dim);
        const State s{0.4, -0.2, 0.8};
        const HiddenState h = initial_hidden(p);
        const ActOut plain = act_mean(p, s, h);

        ad::Tape tape;
        const int pn = tape.constant(p.flat);
        const int sn = tape.constant(s);
        const int hn = hidden_dim > 0 ? tape.constant(h.h) : -1;
        const auto fwd = policy_tape_forward(tape, p, pn, sn, hn);
        for (int d = 0; d < 2; ++d) {
            CHECK(std::fabs(tape.value(fwd.mean)[static_cast<std::size_t>(d)] -
                            plain.mean[static_cast<std::size_t>(d)]) <= 1e-12);
            CHECK(tape.value(fwd.log_std)[static_cast<std::size_t>(d)] ==
                  plain.log_std[static_cast<std::size_t>(d)]);
        }
        if (hidden_dim > 0)
            for (int d = 0; d < hidden_dim; ++d)
                CHECK(std::fabs(tape.value(fwd.hidden)[static_cast<std::size_t>(d)] -
                                plain.next.h[static_cast<std::size_t>(d)]) <= 1e-12);
    }
}

TEST_CASE("near-zero std samples collapse onto the mean") {
    // log-std at the -5 clamp: std = e^-5, so the typical deviation sits well
    // under 1e-2 (individual 2-sigma draws can poke just past it)
    const auto info = wide_bounds_info(2, 2, 4.0);
    const PolicyParams p = make_mlp(info, {8}, true, 3, -5.0);
    const State s{0.5, -0.5};
    const HiddenState h;
    const ActOut mean = act_mean(p, s, h);
    double mean_abs = 0.0;
    double worst = 0.0;
    const int n = 200;
    for (std::uint64_t seed = 0; seed < n; ++seed) {
        const SampleOut out = sample_action(p, s, h, seed);
        for (int d = 0; d < 2; ++d) {
            const double dev = std::fabs(out.action[static_cast<std::size_t>(d)] -
                                         mean.mean[static_cast<std::size_t>(d)]);
            mean_abs += dev;
            worst = std::max(worst, dev);
        }
    }
    CHECK(mean_abs / (2 * n) <= 1e-2);
    CHECK(worst <= 5.0 * std::exp(-5.0));
}

TEST_CASE("sampling statistics match the declared Gaussian") {
    // wide bounds keep the squash in its identity regime
    const auto info = wide_bounds_info(2, 2, 50.0);
    PolicyParams p = make_linear(info, true, 11, 0.0);  // std = 1
    const State s{0.3, 0.7};
    const HiddenState h;
    const ActOut stats = act_mean(p, s, h);

    const int n = 100000;
    Rng rng(1234);
    Vec mean(2, 0.0), sq(2, 0.0);
    for (int k = 0; k < n; ++k) {
        const SampleOut out = sample_action(p, s, h, rng);
        for (int d = 0; d < 2; ++d) {
            mean[static_cast<std::size_t>(d)] += out.pre_squash[static_cast<std::size_t>(d)];
            sq[static_cast<std::size_t>(d)] += out.pre_squash[static_cast<std::size_t>(d)] *
                                               out.pre_squash[static_cast<std::size_t>(d)];
        }
    }
    // pre-squash mean = squash^{-1}(mean action); with wide bounds the
    // sampled actions effectively carry the same statistics
    for (int d = 0; d < 2; ++d) {
        const double m = mean[static_cast<std::size_t>(d)] / n;
        const double v = sq[static_cast<std::size_t>(d)] / n - m * m;
        const double se_mean = 1.0 / std::sqrt(static_cast<double>(n));
        const double se_std = 1.0 / std::sqrt(2.0 * n);
        const double pre_mean = 50.0 * std::atanh(stats.mean[static_cast<std::size_t>(d)] / 50.0);
        CHECK(std::fabs(m - pre_mean) <= 3.0 * se_mean);
        CHECK(std::fabs(std::sqrt(v) - 1.0) <= 3.0 * se_std);
    }
}

TEST_CASE("log probability matches the analytic diagonal Gaussian density") {
    const auto info = wide_bounds_info(3, 3, 10.0);
    const PolicyParams p = make_mlp(info, {6}, true, 21, -0.4);
    const State s{0.1, 0.2, -0.3};
    const HiddenState h;
    const ActOut stats = act_mean(p, s, h);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const SampleOut out = sample_action(p, s, h, seed);
        double expected = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double pre_mean =
                10.0 * std::atanh(stats.mean[static_cast<std::size_t>(d)] / 10.0);
            const double sd = std::exp(stats.log_std[static_cast<std::size_t>(d)]);
            const double z = (out.pre_squash[static_cast<std::size_t>(d)] - pre_mean) / sd;
            expected += -std::log(sd) - 0.5 * std::log(2.0 * 3.14159265358979323846) - 0.5 * z * z;
        }
        CHECK(std::fabs(out.log_prob - expected) <= 1e-10);
        CHECK(std::fabs(log_prob_pre_squash(p, s, h, out.pre_squash) - out.log_prob) <= 1e-10);
    }
}

TEST_CASE("entropy is the analytic diagonal-Gaussian value") {
    const double half_log_2pie = 1.4189385332046727418;
    const auto info1 = wide_bounds_info(1, 1, 2.0);
    const PolicyParams one = make_linear(info1, true, 2, 0.0);
    const HiddenState h;
    CHECK(entropy(one, {0.5}, h) == doctest::Approx(half_log_2pie).epsilon(1e-12));

    // doubling the std adds ln 2 per dimension
    const PolicyParams doubled = make_linear(info1, true, 2, std::log(2.0));
    CHECK(entropy(doubled, {0.5}, h) - entropy(one, {0.5}, h) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const auto info3 = wide_bounds_info(2, 3, 2.0);
    const PolicyParams three = make_linear(info3, true, 2, 0.0);
    CHECK(entropy(three, {0.5, 0.5}, h) == doctest::Approx(3.0 * half_log_2pie).epsilon(1e-12));
}

TEST_CASE("deterministic policies have no sampler or entropy") {
    auto sys = make_system("pointmass");
    const auto policy = make_no_action(sys->info());
    const HiddenState h;
    CHECK_THROWS_WITH_AS(sample_action(policy, {0.0, 0.0, 0.0, 0.0}, h, 1),
                         doctest::Contains("no sampler"), ConfigError);
    CHECK_THROWS_AS(entropy(policy, {0.0, 0.0, 0.0, 0.0}, h), ConfigError);
}

TEST_CASE("squashed actions always satisfy the bounds") {
    Rng rng(31415);
    for (int trial = 0; trial < 50; ++trial) {
        const double bound = rng.uniform(0.1, 20.0);
        const auto info = wide_bounds_info(3, 2, bound);
        PolicyParams p = make_mlp(info, {8}, true, rng.next_u64(), rng.uniform(-2.0, 1.0));
        for (auto& v : p.flat) v *= rng.uniform(0.0, 40.0);  // includes saturating nets
        const State s{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
        const HiddenState h;
        const SampleOut out = sample_action(p, s, h, rng.next_u64());
        for (int d = 0; d < 2; ++d) {
            CHECK(out.action[static_cast<std::size_t>(d)] >= -bound);
            CHECK(out.action[static_cast<std::size_t>(d)] <= bound);
        }
    }
}

TEST_CASE("density integrates to one over a pre-squash grid") {
    const auto info = wide_bounds_info(1, 1, 30.0);
    const PolicyParams p = make_linear(info, true, 8, -0.3);
    const State s{0.4};
    const HiddenState h;
    const ActOut stats = act_mean(p, s, h);
    const double pre_mean = 30.0 * std::atanh(stats.mean[0] / 30.0);
    const double sd = std::exp(stats.log_std[0]);
    const double lo = pre_mean - 8.0 * sd, hi = pre_mean + 8.0 * sd;
    const int n = 2000;
    double integral = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double u = lo + (hi - lo) * k / n;
        const double weight = (k == 0 || k == n) ? 0.5 : 1.0;
        integral += weight * std::exp(log_prob_pre_squash(p, s, h, {u}));
    }
    integral *= (hi - lo) / n;
    CHECK(std::fabs(integral - 1.0) <= 1e-2);
}

TEST_CASE("recurrent policies carry an Elman hidden state") {
    const auto info = wide_bounds_info(2, 1, 1.0);
    const PolicyParams p = make_mlp(info, {6}, true, 3, -0.5, 4);
    HiddenState h = initial_hidden(p);
    REQUIRE(h.h.size() == 4);
    const State s{0.3, -0.6};
    const ActOut out1 = act_mean(p, s, h);
    CHECK(out1.next.h != h.h);
    // the hidden state influences subsequent actions
    const ActOut out2 = act_mean(p, s, out1.next);
    CHECK(out2.mean != out1.mean);
}

TEST_CASE("weight files round-trip bit-exactly") {
    const auto info = wide_bounds_info(3, 2, 7.5);
    const PolicyParams p = make_mlp(info, {5, 4}, true, 99, -0.25, 3);
    const auto path1 = temp_file("chaoscope_w1.txt");
    const auto path2 = temp_file("chaoscope_w2.txt");
    save_weights(p, path1.string());
    const PolicyParams loaded = load_weights(path1.string());
    CHECK(loaded.flat == p.flat);
    CHECK(loaded.hidden_layers == p.hidden_layers);
    CHECK(loaded.bounds.lo == p.bounds.lo);
    save_weights(loaded, path2.string());
    CHECK(read_file(path1.string()) == read_file(path2.string()));
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}

TEST_CASE("wrong parameter count is reported with expected vs found") {
    const auto path = temp_file("chaoscope_w3.txt");
    {
        std::ofstream out(path);
        out << "chaoscope-policy v1\nkind linear\ngaussian 0\nstate_dim 1\naction_dim 1\n"
            << "hidden_dim 0\nhidden_layers\nbounds_lo -1\nbounds_hi 1\nparam_count 5\n";
    }
    CHECK_THROWS_WITH_AS(load_weights(path.string()), doctest::Contains("expected 2"),
                         ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("hand-written 1x1 linear policy evaluates to w s + b") {
    // wide bounds keep the squash within 1e-5 of the identity here
    const auto path = temp_file("chaoscope_w4.txt");
    {
        std::ofstream out(path);
        out << "chaoscope-policy v1\nkind linear\ngaussian 0\nstate_dim 1\naction_dim 1\n"
            << "hidden_dim 0\nhidden_layers\nbounds_lo -100\nbounds_hi 100\nparam_count 2\n"
            << "block W0 1 1\n0.5\nblock b0 1\n-0.25\nend\n";
    }
    const PolicyParams p = load_weights(path.string());
    const HiddenState h;
    CHECK(act_mean(p, {2.0}, h).mean[0] == doctest::Approx(0.5 * 2.0 - 0.25).epsilon(1e-5));
    std::filesystem::remove(path);
}

TEST_CASE("malformed weight files fail with a line number") {
    const auto path = temp_file("chaoscope_w5.txt");
    {
        std::ofstream out(path);
        out << "chaoscope-policy v1\nkind linear\ngaussian 0\nstate_dim 1\naction_dim 1\n"
            << "hidden_dim 0\nhidden_layers\nbounds_lo -1\nbounds_hi 1\nparam_count 2\n"
            << "block W0 1 1\nnot_a_number\nblock b0 1\n0\nend\n";
    }
    CHECK_THROWS_WITH_AS(load_weights(path.string()), doctest::Contains(":12"), ConfigError);
    std::filesystem::remove(path);
}
