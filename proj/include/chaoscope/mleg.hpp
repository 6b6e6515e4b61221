// mleg.hpp — divergence-regularized policy training on imagined rollouts.
//
// A TrajectoryBundle holds L sampled rollouts from one shared start, built on
// a tape so states stay differentiable through the dynamics and the
// reparameterized action draws (pathwise gradients). The regularizer sums,
// over the horizon, the per-dimension population variance across members of
// the states (and hidden states, for recurrent policies), averaged over
// dimensions; it is zero exactly when all members coincide, and shrinking it
// suppresses local trajectory divergence.
//
// The policy loss is the REINFORCE form: advantages are computed from
// lambda-returns and critic values, normalized by max(1, S) where S is an
// EMA of the batch return percentile range, and enter the loss as constants
// (the stop-gradient), so gradients flow only through log-probabilities and
// the entropy bonus. The combined objective adds beta times the regularizer;
// with beta = 0 the regularizer term is never constructed and training is
// bit-identical to an unregularized run.
//
// Training update, in order (the reference for reproducing a run):
//   1. for each batch element b: s0 = sample_initial(derive(update_seed, 2b)),
//      bundle with seed derive(update_seed, 2b+1); critic values at detached
//      imagined states; lambda-returns per member.
//   2. S update: EMA (decay 0.99) of the 5th-95th percentile range of all
//      lambda-returns in the batch.
//   3. per element: total loss = policy_loss + beta * reg_loss, backward,
//      accumulate policy gradient; value loss = (1/L) sum_l sum_t
//      (v(s_t) - R_t)^2 with detached targets, backward, accumulate.
//   4. average gradients over the batch, clip each to grad_clip by norm, one
//      SGD step on policy (lr) and critic (value_lr), then project the
//      policy log-std block into [-5, 2].
#pragma once

#include <cstdint>
#include <vector>

#include "chaoscope/autodiff.hpp"
#include "chaoscope/dynsys.hpp"
#include "chaoscope/lyapunov.hpp"
#include "chaoscope/policy.hpp"

namespace chaoscope {

struct TrajectoryBundle {
    int members = 0;  // L
    int horizon = 0;  // T
    int state_dim = 0;
    int hidden_dim = 0;
    State s0;
    HiddenState h0;

    // Tape node ids
    std::vector<std::vector<int>> state_nodes;     // [t][l], t = 0..T (row 0 shared)
    std::vector<std::vector<int>> hidden_nodes;    // [t][l] when hidden_dim > 0
    std::vector<std::vector<int>> log_prob_nodes;  // [t][l], t = 0..T-1
    std::vector<std::vector<int>> entropy_nodes;   // [t][l]

    // Recorded values
    std::vector<std::vector<Action>> actions;  // [l][t]
    std::vector<Vec> rewards;                  // [l], length T
    std::vector<std::uint64_t> member_seeds;
};

// Builds L imagined rollouts from the shared (s0, h0) on `tape`, each drawing
// its own action sequence with a member seed derived from `seed`. Requires a
// Gaussian policy and L >= 2 (a deterministic policy would make every
// variance identically zero).
TrajectoryBundle imagine_bundle(ad::Tape& tape, const System& sys, const PolicyParams& policy,
                                int policy_params_node, const State& s0, const HiddenState& h0,
                                int T, int L, std::uint64_t seed);

// Same with explicit per-member seeds (size L); members given equal seeds
// draw identical action sequences.
TrajectoryBundle imagine_bundle(ad::Tape& tape, const System& sys, const PolicyParams& policy,
                                int policy_params_node, const State& s0, const HiddenState& h0,
                                int T, const std::vector<std::uint64_t>& member_seeds);

// sum_{t=1..T} [ mean_d Var_L(S_t[d]) + mean_d Var_L(H_t[d]) ]; the hidden
// term is absent for memoryless policies.
int mle_reg_loss(ad::Tape& tape, const TrajectoryBundle& bundle);

// R_T = v_T; R_t = r_t + gamma ((1 - lambda) v_{t+1} + lambda R_{t+1}).
// values has length T+1 (bootstrap tail); returns length T+1.
Vec lambda_returns(const Vec& rewards, const Vec& values, double gamma, double lambda);

// S of the advantage normalizer max(1, S): an EMA of the 5th-95th percentile
// range of batch lambda-returns.
struct ReturnScale {
    double ema = 0.0;
    double decay = 0.99;

    void update(double range) { ema = decay * ema + (1.0 - decay) * range; }
    double denom() const { return ema > 1.0 ? ema : 1.0; }
};

// -(1/L) sum_l sum_t [ A_{t,l} log pi(a|s) + eta H ] with
// A = (R_t - v(s_t)) / max(1, S) entering as a constant.
int policy_loss(ad::Tape& tape, const TrajectoryBundle& bundle,
                const std::vector<Vec>& values, const std::vector<Vec>& returns,
                const ReturnScale& scale, double eta);

// policy + beta * reg. With beta == 0 returns `policy_loss_node` itself and
// never touches `reg_loss_node` (pass -1).
int total_loss(ad::Tape& tape, int policy_loss_node, int reg_loss_node, double beta);

// (1/L) sum_l sum_t (v_nodes[t][l] - targets[l][t])^2, targets detached.
int value_regression_loss(ad::Tape& tape, const std::vector<std::vector<int>>& v_nodes,
                          const std::vector<Vec>& targets);

// Small tanh MLP critic, state -> scalar, linear output.
struct ValueNet {
    int state_dim = 0;
    std::vector<int> hidden;
    Vec flat;

    static ValueNet make(int state_dim, std::vector<int> hidden, std::uint64_t init_seed);
    std::size_t param_count() const;
    double eval(const State& s) const;
    int tape_forward(ad::Tape& tape, int params_node, int s_node) const;
};

struct TrainerConfig {
    int members = 3;   // L
    int horizon = 15;  // T
    double gamma = 0.99;
    double lambda = 0.95;
    double entropy_weight = 0.02;  // eta
    double beta = 1.0;
    double lr = 3e-3;
    double value_lr = 3e-3;
    double grad_clip = 100.0;
    int batch = 8;
    int updates = 600;
    std::vector<int> policy_hidden{32, 32};
    int policy_recurrent_dim = 0;
    double init_log_std = -1.0;
    std::vector<int> value_hidden{32, 32};
    int spectrum_every = 50;      // estimate the MLE of the mean policy every E updates
    SpectrumConfig spectrum_cfg;  // defaults shrunk to 5 samples for speed
    std::uint64_t seed = 0;

    TrainerConfig() { spectrum_cfg.samples = 5; }
    void validate() const;
};

struct TrainHistoryRow {
    int update = 0;
    double return_iqm = 0.0;  // IQM of imagined member reward sums
    double reg_loss = 0.0;    // batch mean; 0 when beta == 0
    double mle = 0.0;         // latest spectrum estimate, nats/step
};

struct TrainResult {
    PolicyParams policy;
    ValueNet value;
    std::vector<TrainHistoryRow> history;
};

TrainResult train(const System& sys, const TrainerConfig& cfg);

}  // namespace chaoscope
