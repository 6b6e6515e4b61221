#include "chaoscope/mleg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "chaoscope/eval.hpp"
#include "chaoscope/rng.hpp"

namespace chaoscope {

TrajectoryBundle imagine_bundle(ad::Tape& tape, const System& sys, const PolicyParams& policy,
                                int policy_params_node, const State& s0, const HiddenState& h0,
                                int T, int L, std::uint64_t seed) {
    std::vector<std::uint64_t> member_seeds;
    member_seeds.reserve(static_cast<std::size_t>(L > 0 ? L : 0));
    for (int l = 0; l < L; ++l) member_seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(l)));
    return imagine_bundle(tape, sys, policy, policy_params_node, s0, h0, T, member_seeds);
}

TrajectoryBundle imagine_bundle(ad::Tape& tape, const System& sys, const PolicyParams& policy,
                                int policy_params_node, const State& s0, const HiddenState& h0,
                                int T, const std::vector<std::uint64_t>& member_seeds) {
    const int L = static_cast<int>(member_seeds.size());
    if (!policy.gaussian)
        throw ConfigError("imagine_bundle requires a Gaussian policy (a deterministic policy has zero bundle variance)");
    if (L < 2) throw ConfigError("imagine_bundle needs L >= 2");
    if (T < 1) throw ConfigError("imagine_bundle needs T >= 1");
    if (static_cast<int>(s0.size()) != sys.info().state_dim)
        throw ConfigError("imagine_bundle: bad initial state dim");
    if (static_cast<int>(h0.h.size()) != policy.hidden_dim)
        throw ConfigError("imagine_bundle: bad initial hidden dim");

    TrajectoryBundle bundle;
    bundle.members = L;
    bundle.horizon = T;
    bundle.state_dim = sys.info().state_dim;
    bundle.hidden_dim = policy.hidden_dim;
    bundle.s0 = s0;
    bundle.h0 = h0;
    bundle.state_nodes.assign(static_cast<std::size_t>(T) + 1, std::vector<int>(static_cast<std::size_t>(L), -1));
    if (policy.hidden_dim > 0)
        bundle.hidden_nodes.assign(static_cast<std::size_t>(T) + 1, std::vector<int>(static_cast<std::size_t>(L), -1));
    bundle.log_prob_nodes.assign(static_cast<std::size_t>(T), std::vector<int>(static_cast<std::size_t>(L), -1));
    bundle.entropy_nodes.assign(static_cast<std::size_t>(T), std::vector<int>(static_cast<std::size_t>(L), -1));
    bundle.actions.assign(static_cast<std::size_t>(L), {});
    bundle.rewards.assign(static_cast<std::size_t>(L), {});

    const int s0_node = tape.constant(s0);
    const int h0_node = policy.hidden_dim > 0 ? tape.constant(h0.h) : -1;

    for (int l = 0; l < L; ++l) {
        const std::uint64_t member_seed = member_seeds[static_cast<std::size_t>(l)];
        bundle.member_seeds.push_back(member_seed);
        Rng rng(member_seed);

        int s_node = s0_node;
        int h_node = h0_node;
        bundle.state_nodes[0][static_cast<std::size_t>(l)] = s_node;
        if (h0_node >= 0) bundle.hidden_nodes[0][static_cast<std::size_t>(l)] = h_node;

        for (int t = 0; t < T; ++t) {
            // pathwise branch: live forward, reparameterized draw, dynamics
            const auto fwd = policy_tape_forward(tape, policy, policy_params_node, s_node, h_node);
            Vec eps(static_cast<std::size_t>(policy.action_dim));
            for (auto& e : eps) e = rng.normal();
            const int std_node = tape.exp_(fwd.log_std);
            const int u_node = tape.add(fwd.pre_mean, tape.mul(std_node, tape.constant(eps)));
            const int a_node = squash_tape(tape, policy, u_node);

            // score branch: the same point evaluated from detached inputs, so
            // log-prob gradients are the plain REINFORCE score
            const int det_s = tape.constant(tape.value(s_node));
            const int det_h = h_node >= 0 ? tape.constant(tape.value(h_node)) : -1;
            const auto score = policy_tape_forward(tape, policy, policy_params_node, det_s, det_h);
            const Vec u_val = tape.value(u_node);
            bundle.log_prob_nodes[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] =
                log_prob_tape(tape, policy, score.pre_mean, score.log_std, u_val);
            bundle.entropy_nodes[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] =
                entropy_tape(tape, policy, score.log_std);

            bundle.actions[static_cast<std::size_t>(l)].push_back(tape.value(a_node));
            bundle.rewards[static_cast<std::size_t>(l)].push_back(
                sys.reward(tape.value(s_node), tape.value(a_node)));

            s_node = sys.step_tape(tape, s_node, a_node);
            if (!all_finite(tape.value(s_node)))
                throw NumericError("imagined rollout blow-up (member " + std::to_string(l) + ")", t + 1);
            bundle.state_nodes[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(l)] = s_node;
            if (fwd.hidden >= 0) {
                h_node = fwd.hidden;
                bundle.hidden_nodes[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(l)] = h_node;
            }
        }
    }
    return bundle;
}

namespace {

// mean over dimensions of the per-dimension variance across members
int bundle_row_variance(ad::Tape& tape, const std::vector<int>& member_nodes, int dim) {
    std::vector<int> per_dim;
    per_dim.reserve(static_cast<std::size_t>(dim));
    for (int d = 0; d < dim; ++d) {
        std::vector<int> across;
        across.reserve(member_nodes.size());
        for (int node : member_nodes) across.push_back(tape.pick(node, d));
        per_dim.push_back(tape.variance(tape.pack(across)));
    }
    return tape.mean(tape.pack(per_dim));
}

}  // namespace

int mle_reg_loss(ad::Tape& tape, const TrajectoryBundle& bundle) {
    if (bundle.members < 2) throw ConfigError("mle_reg_loss needs L >= 2");
    std::vector<int> terms;
    for (int t = 1; t <= bundle.horizon; ++t) {
        int term = bundle_row_variance(tape, bundle.state_nodes[static_cast<std::size_t>(t)],
                                       bundle.state_dim);
        if (bundle.hidden_dim > 0)
            term = tape.add(term, bundle_row_variance(tape, bundle.hidden_nodes[static_cast<std::size_t>(t)],
                                                      bundle.hidden_dim));
        terms.push_back(term);
    }
    return tape.sum(tape.pack(terms));
}

Vec lambda_returns(const Vec& rewards, const Vec& values, double gamma, double lambda) {
    if (values.size() != rewards.size() + 1)
        throw ConfigError("lambda_returns: values must have length T+1, got " +
                          std::to_string(values.size()) + " for T = " + std::to_string(rewards.size()));
    if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("lambda_returns: gamma must be in [0, 1)");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda_returns: lambda must be in [0, 1]");
    const std::size_t T = rewards.size();
    Vec out(T + 1);
    out[T] = values[T];
    for (std::size_t t = T; t-- > 0;)
        out[t] = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * out[t + 1]);
    return out;
}

int policy_loss(ad::Tape& tape, const TrajectoryBundle& bundle, const std::vector<Vec>& values,
                const std::vector<Vec>& returns, const ReturnScale& scale, double eta) {
    const std::size_t L = static_cast<std::size_t>(bundle.members);
    const std::size_t T = static_cast<std::size_t>(bundle.horizon);
    if (values.size() != L || returns.size() != L)
        throw ConfigError("policy_loss: need one value/return sequence per member");
    for (std::size_t l = 0; l < L; ++l)
        if (values[l].size() != T + 1 || returns[l].size() != T + 1)
            throw ConfigError("policy_loss: value/return sequences must have length T+1");

    const double denom = scale.denom();
    std::vector<int> terms;
    terms.reserve(L * T);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t t = 0; t < T; ++t) {
            // the normalized advantage is a constant multiplier: the
            // stop-gradient of the loss definition realized by construction
            const double adv = (returns[l][t] - values[l][t]) / denom;
            int term = tape.scale(bundle.log_prob_nodes[t][l], adv);
            if (eta != 0.0) term = tape.add(term, tape.scale(bundle.entropy_nodes[t][l], eta));
            terms.push_back(term);
        }
    }
    return tape.scale(tape.sum(tape.pack(terms)), -1.0 / static_cast<double>(L));
}

int total_loss(ad::Tape& tape, int policy_loss_node, int reg_loss_node, double beta) {
    if (beta == 0.0) return policy_loss_node;
    return tape.add(policy_loss_node, tape.scale(reg_loss_node, beta));
}

int value_regression_loss(ad::Tape& tape, const std::vector<std::vector<int>>& v_nodes,
                          const std::vector<Vec>& targets) {
    if (v_nodes.empty() || v_nodes[0].empty()) throw ConfigError("value_regression_loss: empty nodes");
    const std::size_t L = v_nodes[0].size();
    std::vector<int> terms;
    for (std::size_t t = 0; t < v_nodes.size(); ++t)
        for (std::size_t l = 0; l < L; ++l) {
            const int diff = tape.add_const(v_nodes[t][l], -targets[l][t]);
            terms.push_back(tape.square(diff));
        }
    return tape.scale(tape.sum(tape.pack(terms)), 1.0 / static_cast<double>(L));
}

// ---------------------------------------------------------------------------
// ValueNet
// ---------------------------------------------------------------------------

ValueNet ValueNet::make(int state_dim, std::vector<int> hidden, std::uint64_t init_seed) {
    ValueNet net;
    net.state_dim = state_dim;
    net.hidden = std::move(hidden);
    net.flat.assign(net.param_count(), 0.0);
    Rng rng(init_seed);
    std::size_t off = 0;
    int in = state_dim;
    std::vector<int> dims = net.hidden;
    dims.push_back(1);
    for (int width : dims) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (int i = 0; i < width * in; ++i) net.flat[off++] = rng.uniform(-1.0, 1.0) * scale;
        off += static_cast<std::size_t>(width);  // biases stay zero
        in = width;
    }
    return net;
}

std::size_t ValueNet::param_count() const {
    std::size_t n = 0;
    int in = state_dim;
    std::vector<int> dims = hidden;
    dims.push_back(1);
    for (int width : dims) {
        n += static_cast<std::size_t>(width) * in + static_cast<std::size_t>(width);
        in = width;
    }
    return n;
}

double ValueNet::eval(const State& s) const {
    if (static_cast<int>(s.size()) != state_dim) throw ConfigError("value net: bad state dim");
    Vec x = s;
    std::size_t off = 0;
    int in = state_dim;
    std::vector<int> dims = hidden;
    dims.push_back(1);
    for (std::size_t layer = 0; layer < dims.size(); ++layer) {
        const int width = dims[layer];
        Vec y(static_cast<std::size_t>(width), 0.0);
        for (int r = 0; r < width; ++r) {
            double acc = 0.0;
            for (int c = 0; c < in; ++c) acc += flat[off + static_cast<std::size_t>(r) * in + c] * x[static_cast<std::size_t>(c)];
            y[static_cast<std::size_t>(r)] = acc;
        }
        off += static_cast<std::size_t>(width) * in;
        for (int r = 0; r < width; ++r) y[static_cast<std::size_t>(r)] += flat[off + static_cast<std::size_t>(r)];
        off += static_cast<std::size_t>(width);
        if (layer + 1 < dims.size())
            for (auto& v : y) v = std::tanh(v);
        x = std::move(y);
        in = width;
    }
    return x[0];
}

int ValueNet::tape_forward(ad::Tape& tape, int params_node, int s_node) const {
    int x = s_node;
    std::size_t off = 0;
    int in = state_dim;
    std::vector<int> dims = hidden;
    dims.push_back(1);
    for (std::size_t layer = 0; layer < dims.size(); ++layer) {
        const int width = dims[layer];
        const int w = tape.slice(params_node, static_cast<int>(off), width * in);
        off += static_cast<std::size_t>(width) * in;
        const int b = tape.slice(params_node, static_cast<int>(off), width);
        off += static_cast<std::size_t>(width);
        int y = tape.add(tape.matvec(w, x, width, in), b);
        if (layer + 1 < dims.size()) y = tape.tanh_(y);
        x = y;
        in = width;
    }
    return tape.pick(x, 0);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

void TrainerConfig::validate() const {
    if (members < 2) throw ConfigError("trainer: members (L) must be >= 2");
    if (horizon < 1) throw ConfigError("trainer: horizon must be >= 1");
    if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("trainer: gamma must be in [0, 1)");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("trainer: lambda must be in [0, 1]");
    if (beta < 0.0) throw ConfigError("trainer: beta must be >= 0");
    if (lr <= 0.0 || value_lr <= 0.0) throw ConfigError("trainer: learning rates must be > 0");
    if (batch < 1) throw ConfigError("trainer: batch must be >= 1");
    if (updates < 1) throw ConfigError("trainer: updates must be >= 1");
    if (grad_clip <= 0.0) throw ConfigError("trainer: grad_clip must be > 0");
    if (spectrum_every < 1) throw ConfigError("trainer: spectrum_every must be >= 1");
    spectrum_cfg.validate();
}

namespace {

void clip_by_norm(Vec& g, double max_norm) {
    const double norm = nrm2(g);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& v : g) v *= s;
    }
}

// One batch element's tape and bookkeeping, kept alive across the two passes
// of an update (bundles first, then losses once the return scale is known).
struct PendingElement {
    ad::Tape tape;
    int policy_leaf = -1;
    int value_leaf = -1;
    TrajectoryBundle bundle;
    std::vector<std::vector<int>> v_nodes;  // [t][l]
    std::vector<Vec> values;                // [l], length T+1
    std::vector<Vec> returns;               // [l], length T+1
};

}  // namespace

TrainResult train(const System& sys, const TrainerConfig& cfg) {
    cfg.validate();
    if (sys.info().action_dim < 1)
        throw ConfigError("trainer: system must have at least one action dimension");

    PolicyParams policy = make_mlp(sys.info(), cfg.policy_hidden, /*gaussian=*/true,
                                   derive_seed(cfg.seed, 1), cfg.init_log_std,
                                   cfg.policy_recurrent_dim);
    ValueNet value = ValueNet::make(sys.info().state_dim, cfg.value_hidden, derive_seed(cfg.seed, 2));
    ReturnScale scale;

    // locate the log-std block for the post-update projection
    const std::size_t log_std_offset = policy.flat.size() - static_cast<std::size_t>(policy.action_dim);

    TrainResult result;
    double last_mle = 0.0;

    for (int u = 0; u < cfg.updates; ++u) {
        const std::uint64_t update_seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(u));

        // pass 1: bundles, critic values, lambda-returns
        std::vector<PendingElement> batch(static_cast<std::size_t>(cfg.batch));
        Vec all_returns;
        Vec imagined_returns;
        for (int b = 0; b < cfg.batch; ++b) {
            PendingElement& el = batch[static_cast<std::size_t>(b)];
            const State s0 = sys.sample_initial(derive_seed(update_seed, 2 * static_cast<std::uint64_t>(b)));
            el.policy_leaf = el.tape.input(policy.flat);
            el.value_leaf = el.tape.input(value.flat);
            el.bundle = imagine_bundle(el.tape, sys, policy, el.policy_leaf, s0,
                                       initial_hidden(policy), cfg.horizon, cfg.members,
                                       derive_seed(update_seed, 2 * static_cast<std::uint64_t>(b) + 1));

            el.v_nodes.assign(static_cast<std::size_t>(cfg.horizon) + 1,
                              std::vector<int>(static_cast<std::size_t>(cfg.members), -1));
            el.values.assign(static_cast<std::size_t>(cfg.members), Vec(static_cast<std::size_t>(cfg.horizon) + 1, 0.0));
            for (int t = 0; t <= cfg.horizon; ++t)
                for (int l = 0; l < cfg.members; ++l) {
                    const int det_s = el.tape.constant(
                        el.tape.value(el.bundle.state_nodes[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)]));
                    const int v = value.tape_forward(el.tape, el.value_leaf, det_s);
                    el.v_nodes[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] = v;
                    el.values[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)] = el.tape.scalar_value(v);
                }
            for (int l = 0; l < cfg.members; ++l) {
                el.returns.push_back(lambda_returns(el.bundle.rewards[static_cast<std::size_t>(l)],
                                                    el.values[static_cast<std::size_t>(l)], cfg.gamma,
                                                    cfg.lambda));
                for (double r : el.returns.back()) all_returns.push_back(r);
                double sum = 0.0;
                for (double r : el.bundle.rewards[static_cast<std::size_t>(l)]) sum += r;
                imagined_returns.push_back(sum);
            }
        }
        scale.update(percentile(all_returns, 0.95) - percentile(all_returns, 0.05));

        // pass 2: losses and gradients
        Vec policy_grad(policy.flat.size(), 0.0);
        Vec value_grad(value.flat.size(), 0.0);
        double reg_sum = 0.0;
        for (auto& el : batch) {
            const int ploss = policy_loss(el.tape, el.bundle, el.values, el.returns, scale,
                                          cfg.entropy_weight);
            int tloss = ploss;
            if (cfg.beta > 0.0) {
                const int reg = mle_reg_loss(el.tape, el.bundle);
                reg_sum += el.tape.scalar_value(reg);
                tloss = total_loss(el.tape, ploss, reg, cfg.beta);
            }
            const double loss_value = el.tape.scalar_value(tloss);
            if (!std::isfinite(loss_value))
                throw NumericError("trainer: non-finite loss at update " + std::to_string(u) +
                                   " (policy term " + std::to_string(el.tape.scalar_value(ploss)) +
                                   ", scale " + std::to_string(scale.denom()) + ")");
            el.tape.backward(tloss);
            axpy(1.0, el.tape.grad(el.policy_leaf), policy_grad);

            const int vloss = value_regression_loss(el.tape, el.v_nodes, el.returns);
            el.tape.backward(vloss);
            axpy(1.0, el.tape.grad(el.value_leaf), value_grad);
        }
        const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
        for (auto& g : policy_grad) g *= inv_batch;
        for (auto& g : value_grad) g *= inv_batch;
        clip_by_norm(policy_grad, cfg.grad_clip);
        clip_by_norm(value_grad, cfg.grad_clip);
        axpy(-cfg.lr, policy_grad, policy.flat);
        axpy(-cfg.value_lr, value_grad, value.flat);
        for (int d = 0; d < policy.action_dim; ++d) {
            double& ls = policy.flat[log_std_offset + static_cast<std::size_t>(d)];
            ls = std::min(std::max(ls, -5.0), 2.0);
        }

        TrainHistoryRow row;
        row.update = u;
        row.return_iqm = iqm(imagined_returns);
        row.reg_loss = cfg.beta > 0.0 ? reg_sum * inv_batch : 0.0;
        // spectrum estimation needs a memoryless closed loop; recurrent runs
        // keep the column at its initial 0
        if (policy.hidden_dim == 0 && (u % cfg.spectrum_every == 0 || u == cfg.updates - 1)) {
            const auto spec = spectrum_over_samples(sys, policy, cfg.spectrum_cfg,
                                                    derive_seed(cfg.seed, 777 + static_cast<std::uint64_t>(u)));
            last_mle = spec.mle_iqm;
        }
        row.mle = last_mle;
        result.history.push_back(row);
    }

    result.policy = std::move(policy);
    result.value = std::move(value);
    return result;
}

}  // namespace chaoscope
