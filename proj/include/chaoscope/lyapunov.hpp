// lyapunov.hpp — Lyapunov spectrum estimation for closed-loop systems.
//
// The primary estimator evolves one nominal trajectory plus N companion
// trajectories offset by epsilon along an orthonormal frame. Every
// norm_period steps the companion differences are Gram-Schmidt
// orthonormalized; the log of each pre-normalization norm over epsilon is the
// window growth factor, and exponents are the per-step averages of those
// logs. Rescaling the offsets back to exactly epsilon each window keeps the
// separations infinitesimal and avoids saturation on bounded attractors.
// Finite offsets cannot resolve window growth below epsilon * 1e-12 (machine
// resolution); such windows are recorded at that floor and counted in
// LyapunovSpectrum::floor_hits, so very strongly contracting exponents
// saturate at ln(1e-12)/norm_period per step instead of failing.
//
// A tangent-space variant propagates an orthonormal basis through exact
// closed-loop Jacobians (via the autodiff module) instead of finite
// perturbations. It is an independent validation mode for the primary
// estimator and shares nothing with its finite-difference path.
//
// Exponents are stored in nats per step. For flow systems (dt > 0) the
// per-unit-time spectrum is the per-step spectrum divided by dt; reports use
// per-unit-time values for flows while classification always applies the
// zero threshold in nats per step.
//
// Stochastic policies are evaluated at their mean action so the closed loop
// stays deterministic. Estimation requires a memoryless policy.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/linalg.hpp"
#include "chaoscope/policy.hpp"

namespace chaoscope {

struct SpectrumConfig {
    long long total_steps = 1000;  // T = iterations * norm_period
    int iterations = 100;          // K windows
    int norm_period = 10;          // tau steps between orthonormalizations
    int samples = 20;              // initial states per aggregate estimate
    double epsilon = 1e-4;         // perturbation size
    double zero_threshold = 0.005; // tau0, nats/step, for classification

    void validate() const;
    // Keeps norm_period, sets iterations = total_steps / norm_period.
    static SpectrumConfig with_total_steps(long long total_steps, int norm_period = 10);
};

struct LyapunovSpectrum {
    Vec exponents;          // nats/step, sorted descending
    double mle = 0.0;       // exponents[0]
    double sle = 0.0;       // sum of exponents
    double dt = 0.0;        // 0 for maps
    Mat window_log_growth;  // iterations x N, ln(norm/epsilon) per window, unsorted
    int samples_used = 1;
    // Windows where a difference vector contracted below the finite-offset
    // resolution (norm < epsilon * 1e-12): the growth is recorded at that
    // floor, so exponents near ln(1e-12)/norm_period are saturated estimates.
    long long floor_hits = 0;

    Vec exponents_per_time() const;
    double mle_reported() const { return dt > 0.0 ? mle / dt : mle; }
    double sle_reported() const { return dt > 0.0 ? sle / dt : sle; }
};

enum class StabilityClass { Stable, Chaotic, Unstable };
const char* to_string(StabilityClass c);

// Classical Gram-Schmidt with a re-orthogonalization pass. Returns the
// orthonormal basis and the pre-normalization norms (the growth factors).
// Throws NumericError("degenerate perturbation set") on rank deficiency.
std::pair<std::vector<Vec>, Vec> gram_schmidt(const std::vector<Vec>& vectors);

LyapunovSpectrum benettin_spectrum(const System& sys, const PolicyParams& policy, const State& s0,
                                   const SpectrumConfig& cfg, std::uint64_t seed);

// Validation mode: same windowing, growth factors from exact Jacobian
// products instead of finite perturbations.
LyapunovSpectrum tangent_qr_spectrum(const System& sys, const PolicyParams& policy,
                                     const State& s0, const SpectrumConfig& cfg);

// mle <= tau0        -> Stable   (finite-T estimates never return exactly 0)
// mle > tau0, sle < 0 -> Chaotic
// mle > tau0, sle >= 0 -> Unstable
StabilityClass classify(double mle, double sle, double tau0);

struct SpectrumSamples {
    std::vector<LyapunovSpectrum> per_sample;            // successful samples
    std::vector<std::uint64_t> sample_seeds;             // aligned with per_sample
    std::vector<std::pair<int, std::string>> excluded;   // sample index -> reason
    Vec exponents_iqm;                                   // per-exponent IQM, nats/step
    double mle_iqm = 0.0;
    double sle_iqm = 0.0;
    std::pair<double, double> mle_ci{0.0, 0.0};          // bootstrap 95% CI, nats/step
    std::pair<double, double> sle_ci{0.0, 0.0};
    double dt = 0.0;

    double mle_iqm_reported() const { return dt > 0.0 ? mle_iqm / dt : mle_iqm; }
    double sle_iqm_reported() const { return dt > 0.0 ? sle_iqm / dt : sle_iqm; }
};

// Runs benettin_spectrum from cfg.samples initial states drawn with seeds
// derived from master_seed. Failing samples are excluded with a recorded
// warning; fewer than one surviving sample is an error.
SpectrumSamples spectrum_over_samples(const System& sys, const PolicyParams& policy,
                                      const SpectrumConfig& cfg, std::uint64_t master_seed);

// Same aggregation over caller-provided initial states.
SpectrumSamples spectrum_over_states(const System& sys, const PolicyParams& policy,
                                     const SpectrumConfig& cfg,
                                     const std::vector<State>& initial_states,
                                     std::uint64_t ci_seed);

struct RewardMleResult {
    double value = 0.0;      // slope of ln|r_t - r'_t| per step (per unit time for flows)
    bool measurable = true;  // false -> no measurable divergence, value is -inf
    int samples_used = 0;
};

// Lyapunov exponent of the one-dimensional reward trajectory: twin rollouts
// separated by epsilon in state space (seeded random unit direction), least
// squares slope of ln(|r_t - r'_t| + 1e-12) against t over the pre-saturation
// window, which ends when the gap first exceeds 10% of the declared reward
// range. Averaged over cfg.samples initial states.
RewardMleResult reward_mle(const System& sys, const PolicyParams& policy,
                           const SpectrumConfig& cfg, std::uint64_t seed);
RewardMleResult reward_mle_single(const System& sys, const PolicyParams& policy, const State& s0,
                                  const SpectrumConfig& cfg, std::uint64_t seed);

struct DivergenceCurve {
    Vec state_gap;    // ||s_t - s'_t||, length <= T+1 (index 0 = epsilon)
    Vec reward_gap;   // |r_t - r'_t|, length <= T
    bool truncated = false;  // blow-up hit before T steps
};

// Raw (unrenormalized) twin-trajectory gaps for plotting and CSV export.
DivergenceCurve divergence_curve(const System& sys, const PolicyParams& policy, const State& s0,
                                 double epsilon, int T, std::uint64_t seed);

// Least-squares slope of ln(gap + 1e-12) per step over the early window:
// from the first step, until the gap exceeds saturation_fraction of the
// curve's maximum. Used by divergence-curve annotations.
double log_gap_slope(const Vec& gaps, double saturation_fraction = 0.1);

}  // namespace chaoscope
