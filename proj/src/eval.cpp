#include "chaoscope/eval.hpp"

#include <algorithm>
#include <cmath>

#include "chaoscope/rng.hpp"

namespace chaoscope {

double percentile(Vec values, double q) {
    if (values.empty()) throw ConfigError("percentile of empty list");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double iqm(const Vec& values) {
    if (values.empty()) throw ConfigError("iqm of empty list");
    Vec sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    const double lo = 0.25 * n;
    const double hi = 0.75 * n;
    double wsum = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        // overlap of [i, i+1) with [lo, hi)
        const double a = std::max(static_cast<double>(i), lo);
        const double b = std::min(static_cast<double>(i) + 1.0, hi);
        const double w = std::max(0.0, b - a);
        acc += w * sorted[i];
        wsum += w;
    }
    return acc / wsum;
}

std::pair<double, double> bootstrap_ci(const Vec& values, double level, int resamples,
                                       std::uint64_t seed) {
    if (values.size() < 2) throw ConfigError("bootstrap_ci needs at least 2 values");
    if (level <= 0.0 || level >= 1.0) throw ConfigError("bootstrap_ci level must be in (0, 1)");
    if (resamples < 1) throw ConfigError("bootstrap_ci needs at least 1 resample");
    Rng rng(seed);
    Vec stats(static_cast<std::size_t>(resamples));
    Vec draw(values.size());
    for (int r = 0; r < resamples; ++r) {
        for (auto& v : draw)
            v = values[static_cast<std::size_t>(rng.next_u64() % values.size())];
        stats[static_cast<std::size_t>(r)] = iqm(draw);
    }
    const double alpha = (1.0 - level) / 2.0;
    return {percentile(stats, alpha), percentile(stats, 1.0 - alpha)};
}

Vec noisy_eval(const System& sys, const PolicyParams& policy, const NoiseConfig& noise,
               int episodes, int T, std::uint64_t seed) {
    if (episodes < 1) throw ConfigError("noisy_eval needs at least 1 episode");
    if (T < 1) throw ConfigError("noisy_eval needs T >= 1");
    Vec returns(static_cast<std::size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t ep_seed = derive_seed(seed, static_cast<std::uint64_t>(e));
        const State s0 = sys.sample_initial(derive_seed(ep_seed, 0));
        const Trajectory traj = rollout(sys, policy, s0, T, noise, derive_seed(ep_seed, 1));
        double sum = 0.0;
        for (double r : traj.rewards) sum += r;
        returns[static_cast<std::size_t>(e)] = sum;
    }
    return returns;
}

RobustnessReport robustness_sweep(const System& sys, const PolicyParams& policy, const Vec& sigmas,
                                  int episodes, int T, std::uint64_t seed) {
    RobustnessReport report;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (sigmas[i] < 0.0) throw ConfigError("robustness_sweep: sigma must be >= 0");
        RobustnessRow row;
        row.sigma = sigmas[i];
        row.episodes = episodes;
        row.episode_len = T;
        NoiseConfig noise;
        noise.sigma = sigmas[i];
        row.returns = noisy_eval(sys, policy, noise, episodes, T,
                                 derive_seed(seed, static_cast<std::uint64_t>(i)));
        row.iqm = iqm(row.returns);
        auto ci = bootstrap_ci(row.returns, 0.95, 2000,
                               derive_seed(seed, 1000 + static_cast<std::uint64_t>(i)));
        row.ci_low = ci.first;
        row.ci_high = ci.second;
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace chaoscope
