// eval.hpp — robustness evaluation under observation noise and the
// statistics layer (interquartile mean, percentile bootstrap).
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/linalg.hpp"
#include "chaoscope/policy.hpp"

namespace chaoscope {

// Linear-interpolation quantile of unsorted values, q in [0, 1].
double percentile(Vec values, double q);

// Mean of the middle 50% by sorted rank. For n not divisible by 4 the edge
// order statistics get fractional weight: value i (1-based rank) contributes
// the overlap of [i-1, i] with [n/4, 3n/4], and the weights total n/2.
// [1..8] -> mean{3,4,5,6} = 4.5.
double iqm(const Vec& values);

// Percentile bootstrap of the IQM: `resamples` draws with replacement,
// interval = (lower, upper) quantiles at (1 -/+ level)/2. Deterministic in
// seed; requires at least 2 values.
std::pair<double, double> bootstrap_ci(const Vec& values, double level = 0.95,
                                       int resamples = 2000, std::uint64_t seed = 0);

// Runs `episodes` fixed-length rollouts with per-episode derived seeds
// (fresh initial state each episode, observation noise at the policy input
// only) and returns the undiscounted episode reward sums.
Vec noisy_eval(const System& sys, const PolicyParams& policy, const NoiseConfig& noise,
               int episodes, int T, std::uint64_t seed);

struct RobustnessRow {
    double sigma = 0.0;
    Vec returns;
    double iqm = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int episodes = 0;
    int episode_len = 0;
};

struct RobustnessReport {
    std::vector<RobustnessRow> rows;
};

// One noisy_eval per sigma, aggregated with iqm + bootstrap_ci.
RobustnessReport robustness_sweep(const System& sys, const PolicyParams& policy,
                                  const Vec& sigmas, int episodes, int T, std::uint64_t seed);

}  // namespace chaoscope
