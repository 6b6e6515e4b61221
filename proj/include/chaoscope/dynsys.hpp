// dynsys.hpp — deterministic discrete-time dynamical systems and closed-loop
// rollouts.
//
// A System couples a deterministic transition f(s, a), a bounded deterministic
// reward r(s, a) and a seeded initial-state sampler. Continuous-time systems
// advance by one fixed-step RK4 integration of duration dt per step; maps have
// dt == 0. Actions outside the declared bounds are clamped (saturating
// actuators), never rejected.
//
// Shipped systems (constants documented in the README and in config_echo()):
//   logistic          1-D map s' = a s (1-s), action = growth rate in [0,4]
//   logistic_control  same map with a band reward; the trainer's benchmark
//   henon             2-D map, a=1.4 b=0.3, no action
//   lorenz            3-D flow, sigma=10 rho=28 beta=8/3, RK4 dt=0.01, no action
//   pointmass         4-D damped point mass, 2-D force action
//   cartpole          4-D cart-pole, 1-D force action, balance/swingup rewards
//   linear1d          1-D contraction s' = c s + g u, validation system
//
// All systems are immutable after construction; step/rollout are pure
// functions of their explicit inputs and safe to call concurrently.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "chaoscope/autodiff.hpp"
#include "chaoscope/config.hpp"
#include "chaoscope/errors.hpp"
#include "chaoscope/linalg.hpp"

namespace chaoscope {

using State = Vec;
using Action = Vec;

struct ActionBounds {
    Vec lo;
    Vec hi;
};

// Additive Gaussian observation noise, applied to what the policy sees only;
// the environment always advances from the true state. `scale` optionally
// rescales sigma per dimension (empty = all ones).
struct NoiseConfig {
    double sigma = 0.0;
    Vec scale;
};

struct Trajectory {
    std::vector<State> states;        // length T+1, true states
    std::vector<State> observations;  // length T, what the policy saw
    std::vector<Action> actions;      // length T
    Vec rewards;                      // length T
};

struct SystemInfo {
    std::string id;
    int state_dim = 0;
    int action_dim = 0;
    ActionBounds bounds;
    double dt = 0.0;  // 0 = discrete map; > 0 = RK4 flow, exponents reported per unit time
    std::string reward_id;
    double r_min = 0.0;
    double r_max = 1.0;
};

class System {
  public:
    virtual ~System() = default;

    const SystemInfo& info() const { return info_; }

    // One deterministic step. Validates finiteness and dimensions, clamps the
    // action into bounds, then applies the transition.
    State step(const State& s, const Action& a) const;

    virtual double reward(const State& s, const Action& a) const = 0;
    virtual State sample_initial(std::uint64_t seed) const = 0;

    // The same transition recorded on a tape. `a` is clamped on-tape; pass -1
    // for systems with no action.
    virtual int step_tape(ad::Tape& tape, int s, int a) const = 0;

    // Resolved constants for report embedding.
    virtual KeyValueConfig config_echo() const = 0;

    Action clamp_action(const Action& a) const;

  protected:
    virtual State step_impl(const State& s, const Action& a) const = 0;
    SystemInfo info_;
};

// Factory. `make_system(id)` builds a system with its documented defaults;
// the config form accepts `system = <id>` plus per-system `system.<param>`
// overrides and rejects unknown keys.
std::unique_ptr<System> make_system(const std::string& id);
std::unique_ptr<System> make_system(const KeyValueConfig& cfg);
std::vector<std::string> system_ids();

struct PolicyParams;  // policy.hpp

// Closed-loop rollout for T steps. At each step the policy observes
// s_t + eta_t with eta_t ~ N(0, sigma^2 I) drawn from `seed` (sigma = 0 means
// the observation equals the state) and acts at its mean; the environment
// advances from the true state. Throws NumericError carrying the step index
// if a non-finite state is produced.
Trajectory rollout(const System& sys, const PolicyParams& policy, const State& s0, int T,
                   const NoiseConfig& noise, std::uint64_t seed);

// sum_t gamma^t r_t; requires 0 <= gamma < 1. Empty input returns 0.
double discounted_return(const Vec& rewards, double gamma);

// Jacobian of the closed-loop map s -> f(s, pi(s)) at s, via the tape.
Mat closed_loop_jacobian(const System& sys, const PolicyParams& policy, const State& s);

// Shared RK4 helpers for the flow systems.
namespace detail {
using Deriv = std::function<Vec(const Vec&)>;
Vec rk4_step(const Vec& s, double dt, const Deriv& f);
using DerivTape = std::function<int(ad::Tape&, int)>;
int rk4_step_tape(ad::Tape& tape, int s, double dt, const DerivTape& f);
}  // namespace detail

}  // namespace chaoscope
