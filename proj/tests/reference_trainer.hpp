// reference_trainer.hpp — a test-side unregularized trainer.
//
// Reproduces the documented update sequence of mleg::train out of the public
// building blocks, with no regularizer code anywhere. Used to check that a
// beta = 0 run of the real trainer is bit-identical to a trainer that never
// implements the regularizer at all.
#pragma once

#include <algorithm>
#include <cmath>

#include "chaoscope/dynsys.hpp"
#include "chaoscope/eval.hpp"
#include "chaoscope/mleg.hpp"
#include "chaoscope/policy.hpp"
#include "chaoscope/rng.hpp"

namespace reference {

inline void clip_by_norm(chaoscope::Vec& g, double max_norm) {
    const double norm = chaoscope::nrm2(g);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& v : g) v *= s;
    }
}

// Final policy parameters of an unregularized run.
inline chaoscope::Vec train_unregularized(const chaoscope::System& sys,
                                          const chaoscope::TrainerConfig& cfg) {
    using namespace chaoscope;
    PolicyParams policy = make_mlp(sys.info(), cfg.policy_hidden, true, derive_seed(cfg.seed, 1),
                                   cfg.init_log_std, cfg.policy_recurrent_dim);
    ValueNet value = ValueNet::make(sys.info().state_dim, cfg.value_hidden,
                                    derive_seed(cfg.seed, 2));
    ReturnScale scale;
    const std::size_t log_std_offset =
        policy.flat.size() - static_cast<std::size_t>(policy.action_dim);

    for (int u = 0; u < cfg.updates; ++u) {
        const std::uint64_t update_seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(u));

        struct Element {
            ad::Tape tape;
            int policy_leaf = -1;
            int value_leaf = -1;
            TrajectoryBundle bundle;
            std::vector<std::vector<int>> v_nodes;
            std::vector<Vec> values;
            std::vector<Vec> returns;
        };
        std::vector<Element> batch(static_cast<std::size_t>(cfg.batch));
        Vec all_returns;
        for (int b = 0; b < cfg.batch; ++b) {
            Element& el = batch[static_cast<std::size_t>(b)];
            const State s0 = sys.sample_initial(derive_seed(update_seed, 2 * static_cast<std::uint64_t>(b)));
            el.policy_leaf = el.tape.input(policy.flat);
            el.value_leaf = el.tape.input(value.flat);
            el.bundle = imagine_bundle(el.tape, sys, policy, el.policy_leaf, s0,
                                       initial_hidden(policy), cfg.horizon, cfg.members,
                                       derive_seed(update_seed, 2 * static_cast<std::uint64_t>(b) + 1));
            el.v_nodes.assign(static_cast<std::size_t>(cfg.horizon) + 1,
                              std::vector<int>(static_cast<std::size_t>(cfg.members), -1));
            el.values.assign(static_cast<std::size_t>(cfg.members),
                             Vec(static_cast<std::size_t>(cfg.horizon) + 1, 0.0));
            for (int t = 0; t <= cfg.horizon; ++t)
                for (int l = 0; l < cfg.members; ++l) {
                    const int det = el.tape.constant(el.tape.value(
                        el.bundle.state_nodes[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)]));
                    const int v = value.tape_forward(el.tape, el.value_leaf, det);
                    el.v_nodes[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] = v;
                    el.values[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)] =
                        el.tape.scalar_value(v);
                }
            for (int l = 0; l < cfg.members; ++l) {
                el.returns.push_back(lambda_returns(el.bundle.rewards[static_cast<std::size_t>(l)],
                                                    el.values[static_cast<std::size_t>(l)],
                                                    cfg.gamma, cfg.lambda));
                for (double r : el.returns.back()) all_returns.push_back(r);
            }
        }
        scale.update(percentile(all_returns, 0.95) - percentile(all_returns, 0.05));

        Vec policy_grad(policy.flat.size(), 0.0);
        Vec value_grad(value.flat.size(), 0.0);
        for (auto& el : batch) {
            const int ploss =
                policy_loss(el.tape, el.bundle, el.values, el.returns, scale, cfg.entropy_weight);
            el.tape.backward(ploss);
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
    }
    return policy.flat;
}

}  // namespace reference
