// policy.hpp — parameterized state -> action maps.
//
// Policy kinds: a no-action baseline, a constant action, a linear map and a
// small tanh MLP (default 2 x 64). Linear and MLP means are squashed into the
// action bounds with tanh. A policy is Gaussian when it carries per-dimension
// log-stds (clamped to [-5, 2]); sampling is the reparameterized draw
// u = mean + std * eps with tanh squashing applied afterwards, and
// log-probabilities are computed on the pre-squash Gaussian.
//
// The optional recurrent variant inserts one Elman recurrence
// h' = tanh(Wh h + Ws s + bh) in front of the feedforward stack and feeds h'
// to it instead of s.
//
// PolicyParams is immutable in use: evaluation functions are pure and safe
// for concurrent readers.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chaoscope/autodiff.hpp"
#include "chaoscope/dynsys.hpp"
#include "chaoscope/linalg.hpp"
#include "chaoscope/rng.hpp"

namespace chaoscope {

enum class PolicyKind { NoAction, Constant, Linear, Mlp };

const char* to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

struct HiddenState {
    Vec h;  // empty for memoryless policies
};

struct PolicyParams {
    PolicyKind kind = PolicyKind::NoAction;
    bool gaussian = false;
    int state_dim = 0;
    int action_dim = 0;
    int hidden_dim = 0;              // > 0: Elman recurrence in front of the stack
    std::vector<int> hidden_layers;  // MLP hidden widths; empty for other kinds
    ActionBounds bounds;
    Vec flat;

    // Parameter count implied by the shape fields; flat.size() must equal it.
    std::size_t param_count() const;
    void validate() const;
};

HiddenState initial_hidden(const PolicyParams& p);

struct ActOut {
    Action mean;     // squashed into bounds
    Vec log_std;     // empty for deterministic policies
    HiddenState next;
};

// Deterministic mean action (and the log-stds alongside it for Gaussian
// policies). Pure function of (params, s, h).
ActOut act_mean(const PolicyParams& p, const State& s, const HiddenState& h);

struct SampleOut {
    Action action;   // squashed draw
    Vec pre_squash;  // u = pre-squash mean + std * eps
    double log_prob; // density of u under the pre-squash Gaussian
    HiddenState next;
};

// Reparameterized draw, deterministic in the seed. Throws for deterministic
// policies ("policy has no sampler").
SampleOut sample_action(const PolicyParams& p, const State& s, const HiddenState& h,
                        std::uint64_t seed);
SampleOut sample_action(const PolicyParams& p, const State& s, const HiddenState& h, Rng& rng);

// Pre-squash Gaussian log density of u at state s.
double log_prob_pre_squash(const PolicyParams& p, const State& s, const HiddenState& h,
                           const Vec& u);

// Analytic diagonal-Gaussian entropy sum_i (0.5 ln(2 pi e) + log_std_i).
double entropy(const PolicyParams& p, const State& s, const HiddenState& h);

// ---------------------------------------------------------------------------
// Weight files: versioned structured text, full-precision decimal values,
// bit-exact round trip. See README for the format.
// ---------------------------------------------------------------------------
void save_weights(const PolicyParams& p, const std::string& path);
PolicyParams load_weights(const std::string& path);

// ---------------------------------------------------------------------------
// Builders. Weights are initialized U(-1, 1)/sqrt(fan_in), biases zero,
// log-stds to init_log_std.
// ---------------------------------------------------------------------------
PolicyParams make_no_action(const SystemInfo& sys);
PolicyParams make_constant(const SystemInfo& sys, Vec action);
PolicyParams make_linear(const SystemInfo& sys, bool gaussian, std::uint64_t init_seed,
                         double init_log_std = -0.5);
PolicyParams make_mlp(const SystemInfo& sys, std::vector<int> hidden, bool gaussian,
                      std::uint64_t init_seed, double init_log_std = -0.5, int hidden_dim = 0);

// ---------------------------------------------------------------------------
// Tape forwards for the trainer and Jacobian validation. `params_node` holds
// the flat parameter vector (-1 allowed for parameter-free policies);
// `h_node` is -1 for memoryless policies. The recorded arithmetic matches
// act_mean's.
// ---------------------------------------------------------------------------
struct PolicyTapeOut {
    int mean = -1;       // squashed mean node (dim = action_dim; empty node when 0)
    int pre_mean = -1;   // pre-squash mean node
    int log_std = -1;    // clamped log-std node, -1 for deterministic policies
    int hidden = -1;     // next hidden node, -1 for memoryless
};
PolicyTapeOut policy_tape_forward(ad::Tape& tape, const PolicyParams& p, int params_node,
                                  int s_node, int h_node);

// Squash node u into the policy bounds: lo + (hi - lo) * (tanh(u) + 1) / 2.
int squash_tape(ad::Tape& tape, const PolicyParams& p, int u);

// Pre-squash Gaussian log density on-tape, with the evaluation point u fixed
// (a constant node): the REINFORCE score path.
int log_prob_tape(ad::Tape& tape, const PolicyParams& p, int pre_mean, int log_std, const Vec& u);

// Entropy node sum(log_std) + dim * 0.5 ln(2 pi e).
int entropy_tape(ad::Tape& tape, const PolicyParams& p, int log_std);

}  // namespace chaoscope
