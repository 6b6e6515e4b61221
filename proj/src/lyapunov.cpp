#include "chaoscope/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "chaoscope/eval.hpp"
#include "chaoscope/rng.hpp"

namespace chaoscope {

void SpectrumConfig::validate() const {
    if (iterations < 1 || norm_period < 1 || samples < 1)
        throw ConfigError("spectrum config: counts must be >= 1");
    if (epsilon <= 0.0) throw ConfigError("spectrum config: epsilon must be > 0");
    if (total_steps != static_cast<long long>(iterations) * norm_period)
        throw ConfigError("spectrum config: total_steps (" + std::to_string(total_steps) +
                          ") must equal iterations * norm_period (" +
                          std::to_string(static_cast<long long>(iterations) * norm_period) + ")");
}

SpectrumConfig SpectrumConfig::with_total_steps(long long total_steps, int norm_period) {
    SpectrumConfig cfg;
    cfg.norm_period = norm_period;
    if (total_steps % norm_period != 0)
        throw ConfigError("spectrum config: total_steps must be divisible by norm_period");
    cfg.iterations = static_cast<int>(total_steps / norm_period);
    cfg.total_steps = total_steps;
    return cfg;
}

Vec LyapunovSpectrum::exponents_per_time() const {
    Vec out = exponents;
    if (dt > 0.0)
        for (auto& v : out) v /= dt;
    return out;
}

const char* to_string(StabilityClass c) {
    switch (c) {
        case StabilityClass::Stable: return "Stable";
        case StabilityClass::Chaotic: return "Chaotic";
        case StabilityClass::Unstable: return "Unstable";
    }
    return "?";
}

std::pair<std::vector<Vec>, Vec> gram_schmidt(const std::vector<Vec>& vectors) {
    if (vectors.empty()) throw ConfigError("gram_schmidt: no vectors");
    const std::size_t dim = vectors[0].size();
    for (const auto& v : vectors)
        if (v.size() != dim) throw ConfigError("gram_schmidt: inconsistent dimensions");

    std::vector<Vec> basis;
    basis.reserve(vectors.size());
    Vec norms(vectors.size(), 0.0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        Vec v = vectors[i];
        // two projection passes: the second removes the first's rounding residue
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t j = 0; j < basis.size(); ++j) axpy(-dot(v, basis[j]), basis[j], v);
        const double norm = nrm2(v);
        if (!(norm > 1e-300)) throw NumericError("degenerate perturbation set");
        norms[i] = norm;
        for (auto& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    return {std::move(basis), std::move(norms)};
}

namespace {

void require_memoryless(const PolicyParams& policy) {
    if (policy.hidden_dim > 0)
        throw ConfigError("spectrum estimation requires a memoryless policy");
}

Action mean_action(const PolicyParams& policy, const State& s) {
    static const HiddenState kNoHidden{};
    return act_mean(policy, s, kNoHidden).mean;
}

LyapunovSpectrum finalize(Vec acc, Mat window_log, long long total_steps, double dt) {
    LyapunovSpectrum spec;
    for (auto& v : acc) v /= static_cast<double>(total_steps);
    std::sort(acc.begin(), acc.end(), std::greater<double>());
    spec.exponents = std::move(acc);
    spec.mle = spec.exponents.front();
    double sum = 0.0;
    for (double v : spec.exponents) sum += v;
    spec.sle = sum;
    spec.dt = dt;
    spec.window_log_growth = std::move(window_log);
    return spec;
}

}  // namespace

namespace {

// Per-window orthonormalization with a resolution floor. A companion offset
// of epsilon cannot resolve a window growth factor below roughly the machine
// epsilon of the state scale over epsilon; when the independent residual of a
// difference vector falls below epsilon * kGrowthFloor the window's growth is
// recorded at the floor and the direction is carried over from the previous
// frame (orthonormalized against the accepted ones). Exponents this deep are
// reported saturated and counted in floor_hits.
constexpr double kGrowthFloor = 1e-12;

void project_out(Vec& v, const std::vector<Vec>& basis) {
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : basis) axpy(-dot(v, q), q, v);
}

// Orthonormal frame + per-vector log growth for one window of companion
// differences. `frame` holds the previous window's directions and receives
// the new ones.
Vec window_orthonormalize(const std::vector<Vec>& diffs, double epsilon, std::vector<Vec>& frame,
                          long long& floor_hits) {
    const std::size_t n = diffs.size();
    std::vector<Vec> accepted;
    accepted.reserve(n);
    Vec log_growth(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        Vec v = diffs[i];
        project_out(v, accepted);
        const double norm = nrm2(v);
        if (norm >= epsilon * kGrowthFloor) {
            for (auto& x : v) x /= norm;
            accepted.push_back(std::move(v));
            log_growth[i] = std::log(norm / epsilon);
            continue;
        }
        // saturated: growth floored, direction carried over from the old frame
        ++floor_hits;
        log_growth[i] = std::log(kGrowthFloor);
        Vec dir = frame[i];
        project_out(dir, accepted);
        double dn = nrm2(dir);
        if (dn < 1e-6) {
            // old direction collapsed into the accepted span: complete the
            // frame from the standard basis, largest residual first
            double best = -1.0;
            for (std::size_t j = 0; j < diffs[i].size(); ++j) {
                Vec e(diffs[i].size(), 0.0);
                e[j] = 1.0;
                project_out(e, accepted);
                const double r = nrm2(e);
                if (r > best) {
                    best = r;
                    dir = std::move(e);
                }
            }
            dn = nrm2(dir);
        }
        for (auto& x : dir) x /= dn;
        accepted.push_back(std::move(dir));
    }
    frame = std::move(accepted);
    return log_growth;
}

}  // namespace

// The seed parameter is accepted for interface symmetry; with mean-action
// policy evaluation the estimate is fully determined by (sys, policy, s0, cfg).
LyapunovSpectrum benettin_spectrum(const System& sys, const PolicyParams& policy, const State& s0,
                                   const SpectrumConfig& cfg, std::uint64_t /*seed*/) {
    cfg.validate();
    require_memoryless(policy);
    const int n = sys.info().state_dim;
    if (static_cast<int>(s0.size()) != n) throw ConfigError("benettin_spectrum: bad initial state dim");
    if (!all_finite(s0)) throw NumericError("non-finite state");

    State s = s0;
    std::vector<State> companions(static_cast<std::size_t>(n), s0);
    std::vector<Vec> frame(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) {
        companions[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += cfg.epsilon;
        frame[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    }

    Vec acc(static_cast<std::size_t>(n), 0.0);
    Mat window_log(cfg.iterations, n);
    long long floor_hits = 0;
    long long step_index = 0;
    for (int k = 0; k < cfg.iterations; ++k) {
        for (int t = 0; t < cfg.norm_period; ++t, ++step_index) {
            s = sys.step(s, mean_action(policy, s));
            if (!all_finite(s)) throw NumericError("trajectory blow-up", step_index + 1);
            for (auto& c : companions) {
                c = sys.step(c, mean_action(policy, c));
                if (!all_finite(c)) throw NumericError("companion blow-up", step_index + 1);
            }
        }
        std::vector<Vec> diffs(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(n)));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                diffs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    companions[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - s[static_cast<std::size_t>(j)];
        const Vec log_growth = window_orthonormalize(diffs, cfg.epsilon, frame, floor_hits);
        for (int i = 0; i < n; ++i) {
            window_log(k, i) = log_growth[static_cast<std::size_t>(i)];
            acc[static_cast<std::size_t>(i)] += log_growth[static_cast<std::size_t>(i)];
        }
        // rescale offsets back to exactly epsilon along the new frame
        for (int i = 0; i < n; ++i) {
            companions[static_cast<std::size_t>(i)] = s;
            axpy(cfg.epsilon, frame[static_cast<std::size_t>(i)], companions[static_cast<std::size_t>(i)]);
        }
    }
    LyapunovSpectrum spec = finalize(std::move(acc), std::move(window_log), cfg.total_steps,
                                     sys.info().dt);
    spec.floor_hits = floor_hits;
    return spec;
}

LyapunovSpectrum tangent_qr_spectrum(const System& sys, const PolicyParams& policy,
                                     const State& s0, const SpectrumConfig& cfg) {
    cfg.validate();
    require_memoryless(policy);
    const int n = sys.info().state_dim;
    if (static_cast<int>(s0.size()) != n) throw ConfigError("tangent_qr_spectrum: bad initial state dim");

    State s = s0;
    std::vector<Vec> basis(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) basis[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;

    Vec acc(static_cast<std::size_t>(n), 0.0);
    Mat window_log(cfg.iterations, n);
    long long step_index = 0;
    for (int k = 0; k < cfg.iterations; ++k) {
        for (int t = 0; t < cfg.norm_period; ++t, ++step_index) {
            const Mat jac = closed_loop_jacobian(sys, policy, s);
            for (auto& v : basis) v = matvec(jac, v);
            s = sys.step(s, mean_action(policy, s));
            if (!all_finite(s)) throw NumericError("trajectory blow-up", step_index + 1);
        }
        auto [ortho, norms] = gram_schmidt(basis);
        basis = std::move(ortho);
        for (int i = 0; i < n; ++i) {
            const double lg = std::log(norms[static_cast<std::size_t>(i)]);
            window_log(k, i) = lg;
            acc[static_cast<std::size_t>(i)] += lg;
        }
    }
    return finalize(std::move(acc), std::move(window_log), cfg.total_steps, sys.info().dt);
}

StabilityClass classify(double mle, double sle, double tau0) {
    if (!std::isfinite(mle) || !std::isfinite(sle))
        throw ConfigError("classify: inputs must be finite");
    if (mle <= tau0) return StabilityClass::Stable;
    return sle < 0.0 ? StabilityClass::Chaotic : StabilityClass::Unstable;
}

SpectrumSamples spectrum_over_states(const System& sys, const PolicyParams& policy,
                                     const SpectrumConfig& cfg,
                                     const std::vector<State>& initial_states,
                                     std::uint64_t ci_seed) {
    SpectrumSamples out;
    out.dt = sys.info().dt;
    for (std::size_t i = 0; i < initial_states.size(); ++i) {
        try {
            out.per_sample.push_back(
                benettin_spectrum(sys, policy, initial_states[i], cfg, derive_seed(ci_seed, i)));
            out.sample_seeds.push_back(derive_seed(ci_seed, i));
        } catch (const NumericError& e) {
            out.excluded.emplace_back(static_cast<int>(i), e.what());
        }
    }
    if (out.per_sample.empty())
        throw NumericError("spectrum estimation failed for every sample");

    const int n = sys.info().state_dim;
    out.exponents_iqm.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        Vec vals;
        vals.reserve(out.per_sample.size());
        for (const auto& s : out.per_sample) vals.push_back(s.exponents[static_cast<std::size_t>(j)]);
        out.exponents_iqm[static_cast<std::size_t>(j)] = iqm(vals);
    }
    Vec mles, sles;
    for (const auto& s : out.per_sample) {
        mles.push_back(s.mle);
        sles.push_back(s.sle);
    }
    out.mle_iqm = iqm(mles);
    out.sle_iqm = iqm(sles);
    if (out.per_sample.size() >= 2) {
        out.mle_ci = bootstrap_ci(mles, 0.95, 2000, derive_seed(ci_seed, 900001));
        out.sle_ci = bootstrap_ci(sles, 0.95, 2000, derive_seed(ci_seed, 900002));
    } else {
        out.mle_ci = {out.mle_iqm, out.mle_iqm};
        out.sle_ci = {out.sle_iqm, out.sle_iqm};
    }
    return out;
}

SpectrumSamples spectrum_over_samples(const System& sys, const PolicyParams& policy,
                                      const SpectrumConfig& cfg, std::uint64_t master_seed) {
    cfg.validate();
    std::vector<State> states;
    states.reserve(static_cast<std::size_t>(cfg.samples));
    for (int i = 0; i < cfg.samples; ++i)
        states.push_back(sys.sample_initial(derive_seed(master_seed, 10000 + static_cast<std::uint64_t>(i))));
    return spectrum_over_states(sys, policy, cfg, states, master_seed);
}

namespace {

// Least-squares slope of y over x = 0..n-1.
double ls_slope(const Vec& y) {
    const double n = static_cast<double>(y.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double x = static_cast<double>(t);
        sx += x;
        sy += y[t];
        sxx += x * x;
        sxy += x * y[t];
    }
    const double denom = n * sxx - sx * sx;
    return denom == 0.0 ? 0.0 : (n * sxy - sx * sy) / denom;
}

// Least-squares slope of (x_t, y_t) pairs.
double ls_slope_xy(const Vec& xs, const Vec& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    return denom == 0.0 ? 0.0 : (n * sxy - sx * sy) / denom;
}

Vec seeded_unit_direction(int dim, std::uint64_t seed) {
    Rng rng(seed);
    Vec d(static_cast<std::size_t>(dim));
    double norm = 0.0;
    while (norm == 0.0) {
        for (auto& v : d) v = rng.normal();
        norm = nrm2(d);
    }
    for (auto& v : d) v /= norm;
    return d;
}

}  // namespace

double log_gap_slope(const Vec& gaps, double saturation_fraction) {
    if (gaps.size() < 2) throw ConfigError("log_gap_slope needs at least 2 points");
    const double gmax = *std::max_element(gaps.begin(), gaps.end());
    const double threshold = saturation_fraction * gmax;
    std::size_t end = gaps.size();
    for (std::size_t t = 0; t < gaps.size(); ++t)
        if (gaps[t] > threshold) {
            end = t;
            break;
        }
    end = std::max<std::size_t>(end, 2);
    Vec y(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto& v : y) v = std::log(v + 1e-12);
    return ls_slope(y);
}

RewardMleResult reward_mle_single(const System& sys, const PolicyParams& policy, const State& s0,
                                  const SpectrumConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    require_memoryless(policy);
    const double range = sys.info().r_max - sys.info().r_min;

    State twin = s0;
    axpy(cfg.epsilon, seeded_unit_direction(sys.info().state_dim, seed), twin);

    NoiseConfig no_noise;
    const int T = static_cast<int>(cfg.total_steps);
    const Trajectory a = rollout(sys, policy, s0, T, no_noise, 0);
    const Trajectory b = rollout(sys, policy, twin, T, no_noise, 0);

    Vec gap(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        gap[static_cast<std::size_t>(t)] =
            std::fabs(a.rewards[static_cast<std::size_t>(t)] - b.rewards[static_cast<std::size_t>(t)]);

    std::size_t end = gap.size();
    for (std::size_t t = 0; t < gap.size(); ++t)
        if (gap[t] > 0.1 * range) {
            end = t;
            break;
        }
    end = std::max<std::size_t>(end, 2);

    // Points below the floor carry no gap information (the +delta pad would
    // dominate the regression); they are dropped from the fit.
    constexpr double kDelta = 1e-12;
    constexpr double kFloor = 100.0 * kDelta;
    Vec xs, ys;
    for (std::size_t t = 0; t < end; ++t)
        if (gap[t] >= kFloor) {
            xs.push_back(static_cast<double>(t));
            ys.push_back(std::log(gap[t] + kDelta));
        }

    RewardMleResult res;
    res.samples_used = 1;
    if (xs.size() < 2) {
        res.measurable = false;
        res.value = -std::numeric_limits<double>::infinity();
        return res;
    }
    res.value = ls_slope_xy(xs, ys);
    if (sys.info().dt > 0.0) res.value /= sys.info().dt;
    return res;
}

RewardMleResult reward_mle(const System& sys, const PolicyParams& policy,
                           const SpectrumConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    double sum = 0.0;
    int used = 0;
    for (int i = 0; i < cfg.samples; ++i) {
        const State s0 = sys.sample_initial(derive_seed(seed, 2 * static_cast<std::uint64_t>(i)));
        const RewardMleResult one =
            reward_mle_single(sys, policy, s0, cfg, derive_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1));
        if (one.measurable) {
            sum += one.value;
            ++used;
        }
    }
    RewardMleResult res;
    res.samples_used = used;
    if (used == 0) {
        res.measurable = false;
        res.value = -std::numeric_limits<double>::infinity();
    } else {
        res.value = sum / static_cast<double>(used);
    }
    return res;
}

DivergenceCurve divergence_curve(const System& sys, const PolicyParams& policy, const State& s0,
                                 double epsilon, int T, std::uint64_t seed) {
    if (epsilon < 0.0) throw ConfigError("divergence_curve: epsilon must be >= 0");
    if (T < 1) throw ConfigError("divergence_curve: T must be >= 1");
    require_memoryless(policy);

    State s = s0;
    State twin = s0;
    if (epsilon > 0.0)
        axpy(epsilon, seeded_unit_direction(sys.info().state_dim, seed), twin);

    DivergenceCurve curve;
    curve.state_gap.reserve(static_cast<std::size_t>(T) + 1);
    curve.reward_gap.reserve(static_cast<std::size_t>(T));
    Vec diff(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) diff[i] = s[i] - twin[i];
    curve.state_gap.push_back(nrm2(diff));
    for (int t = 0; t < T; ++t) {
        try {
            const Action a1 = mean_action(policy, s);
            const Action a2 = mean_action(policy, twin);
            curve.reward_gap.push_back(std::fabs(sys.reward(s, a1) - sys.reward(twin, a2)));
            s = sys.step(s, a1);
            twin = sys.step(twin, a2);
            if (!all_finite(s) || !all_finite(twin)) throw NumericError("blow-up", t + 1);
        } catch (const NumericError&) {
            curve.truncated = true;
            curve.reward_gap.resize(curve.state_gap.size() - 1);
            break;
        }
        for (std::size_t i = 0; i < s.size(); ++i) diff[i] = s[i] - twin[i];
        curve.state_gap.push_back(nrm2(diff));
    }
    return curve;
}

}  // namespace chaoscope
