#pragma once

// Trajectory-level group-relative policy optimization: sparse outcome reward
// plus a small format reward, group-normalized advantages, a token-factored
// clipped surrogate with asymmetric clip bounds, and an exact per-token KL
// penalty against the frozen SFT reference.
//
// The surrogate uses per-token ratios clipped per token and averaged over
// tokens then trajectories; at theta = theta_old this coincides with the
// trajectory-ratio form (all ratios are 1) and its gradient equals the
// vanilla policy-gradient estimator of the token-mean objective.

#include <cmath>
#include <string>
#include <vector>

#include "loop.hpp"
#include "optim.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "util.hpp"

namespace zoomvla {

struct RewardConfig {
    double alpha_success = 1.0;
    double alpha_format = 0.1; // must stay below alpha_success
};

/// R = alpha_s * I_success + alpha_f * I_format, where I_format is the
/// conjunction of per-step format checks over the whole episode.
inline double compute_reward(const EpisodeTrajectory& traj, const RewardConfig& cfg) {
    return cfg.alpha_success * traj.success + cfg.alpha_format * traj.format_ok;
}

/// Group-relative advantages: (R - mean) / max(population std, guard). A
/// zero-variance group yields all-zero advantages.
inline std::vector<double> normalize_advantages(const std::vector<double>& rewards,
                                                double std_guard = 1e-8) {
    const size_t m = rewards.size();
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double r : rewards) {
        var += (r - mean) * (r - mean);
    }
    double stdev = std::sqrt(var / static_cast<double>(m));
    std::vector<double> out(m);
    for (size_t i = 0; i < m; ++i) {
        out[i] = (rewards[i] - mean) / std::max(stdev, std_guard);
    }
    return out;
}

struct GrpoConfig {
    int group_size = 8;           // M
    double eps_low = 0.2;
    double eps_high = 0.28;       // asymmetric: higher headroom upward
    double kl_beta = 0.01;
    int groups_per_update = 16;   // 16 groups x M=8 = 128-trajectory mini-batch
    double learning_rate = 1e-4;  // full-scale counterpart: 2e-6
    double temperature = 1.0;
    int iterations = 200;
    double std_guard = 1e-8;
    int inner_epochs = 1;         // gradient steps per sampled batch
    uint64_t seed = 0;
};

/// Per-token KL(pi_theta || pi_ref) with full next-token distributions,
/// averaged over generated positions; action slots compare the restricted
/// action distributions.
inline double kl_term(const PolicyParams& theta, const PolicyParams& ref,
                      const PolicySequence& seq) {
    Tape t_new = forward(theta, seq);
    Tape t_ref = forward(ref, seq);
    const int V = theta.cfg.vocab_size;
    double acc = 0.0;
    int n = 0;
    for (int l = 0; l < t_new.L; ++l) {
        const SeqPos& p = seq[static_cast<size_t>(l)];
        if (p.target < 0) {
            continue;
        }
        const double* row_new = t_new.logits.data() + static_cast<size_t>(l) * V;
        const double* row_ref = t_ref.logits.data() + static_cast<size_t>(l) * V;
        double kl = 0.0;
        if (p.slot) {
            auto pn = action_softmax_row(row_new, theta.cfg.action_token_ids);
            auto pr = action_softmax_row(row_ref, theta.cfg.action_token_ids);
            for (size_t i = 0; i < pn.size(); ++i) {
                kl += pn[i] * (std::log(pn[i]) - std::log(pr[i]));
            }
        } else {
            auto pn = softmax_row(row_new, V);
            auto pr = softmax_row(row_ref, V);
            for (int v = 0; v < V; ++v) {
                kl += pn[static_cast<size_t>(v)] *
                      (std::log(pn[static_cast<size_t>(v)]) - std::log(pr[static_cast<size_t>(v)]));
            }
        }
        acc += kl;
        n += 1;
    }
    return n ? acc / n : 0.0;
}

/// One trajectory prepared for the objective: its step sequences with stored
/// old-policy logprobs, and its normalized advantage.
struct ScoredTrajectory {
    const EpisodeTrajectory* traj = nullptr;
    double advantage = 0.0;
};

struct GrpoResult {
    double objective = 0.0;  // J
    GradBuffer grad_neg;     // gradient of -J (for descent)
    double kl_mean = 0.0;
};

/// J and d(-J)/d(theta) over a flat batch of scored trajectories (already
/// group-normalized). Token-factored per the header note.
inline GrpoResult grpo_objective(const std::vector<ScoredTrajectory>& batch,
                                 const PolicyParams& theta, const PolicyParams& ref,
                                 const GrpoConfig& cfg) {
    const int V = theta.cfg.vocab_size;
    GrpoResult out;
    out.grad_neg.assign(theta.w.size(), 0.0);
    if (batch.empty()) {
        return out;
    }
    const double traj_w = 1.0 / static_cast<double>(batch.size());
    double kl_sum = 0.0;
    int kl_count = 0;

    for (const auto& scored : batch) {
        const EpisodeTrajectory& traj = *scored.traj;
        long total_tokens = 0;
        for (const auto& step : traj.steps) {
            total_tokens += static_cast<long>(step.lp_tokens.size());
        }
        if (total_tokens == 0) {
            continue;
        }
        const double tok_w = 1.0 / static_cast<double>(total_tokens);

        for (const auto& step : traj.steps) {
            const PolicySequence& seq = step.seq;
            Tape t_new = forward(theta, seq);
            Tape t_ref = forward(ref, seq);
            std::vector<double> dl(static_cast<size_t>(t_new.L) * V, 0.0);
            size_t tok_idx = 0;
            for (int l = 0; l < t_new.L; ++l) {
                const SeqPos& p = seq[static_cast<size_t>(l)];
                if (p.target < 0) {
                    continue;
                }
                const double* row_new = t_new.logits.data() + static_cast<size_t>(l) * V;
                const double* row_ref = t_ref.logits.data() + static_cast<size_t>(l) * V;
                double* dlr = dl.data() + static_cast<size_t>(l) * V;

                // --- clipped surrogate term ---
                double lp_old = step.lp_tokens[tok_idx];
                double lp_new;
                std::vector<double> pn, pr;
                std::vector<int> support;
                if (p.slot) {
                    pn = action_softmax_row(row_new, theta.cfg.action_token_ids);
                    pr = action_softmax_row(row_ref, theta.cfg.action_token_ids);
                    support = theta.cfg.action_token_ids;
                    lp_new = 0.0;
                    for (size_t i = 0; i < support.size(); ++i) {
                        if (support[i] == p.target) {
                            lp_new = std::log(pn[i]);
                        }
                    }
                } else {
                    pn = softmax_row(row_new, V);
                    pr = softmax_row(row_ref, V);
                    support.resize(static_cast<size_t>(V));
                    for (int v = 0; v < V; ++v) {
                        support[static_cast<size_t>(v)] = v;
                    }
                    lp_new = std::log(pn[static_cast<size_t>(p.target)]);
                }
                const double ratio = std::exp(lp_new - lp_old);
                const double clipped = std::min(std::max(ratio, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high);
                const double a = scored.advantage;
                const double unclipped_term = ratio * a;
                const double clipped_term = clipped * a;
                out.objective += traj_w * tok_w * std::min(unclipped_term, clipped_term);
                // min picks the unclipped branch (ties included): only then
                // does the token carry gradient
                const bool pass_grad = unclipped_term <= clipped_term;
                const double coef = pass_grad ? traj_w * tok_w * a * ratio : 0.0;

                // --- exact KL term over the full support ---
                double kl = 0.0;
                for (size_t i = 0; i < pn.size(); ++i) {
                    kl += pn[i] * (std::log(pn[i]) - std::log(pr[i]));
                }
                out.objective -= traj_w * tok_w * cfg.kl_beta * kl;
                kl_sum += kl;
                kl_count += 1;

                // d(-J)/d(logit): surrogate part is coef * (p - onehot);
                // KL part is beta * w * pn_k ((ln pn_k - ln pr_k) - KL).
                for (size_t i = 0; i < support.size(); ++i) {
                    int id = support[i];
                    double onehot = (id == p.target) ? 1.0 : 0.0;
                    double d_surr = coef * (pn[i] - onehot);
                    double d_kl = traj_w * tok_w * cfg.kl_beta * pn[i] *
                                  ((std::log(pn[i]) - std::log(pr[i])) - kl);
                    dlr[id] += d_surr + d_kl;
                }
                ++tok_idx;
            }
            backward(theta, seq, t_new, dl, out.grad_neg);
        }
    }
    if (!std::isfinite(out.objective)) {
        throw NumericalFault("non-finite GRPO objective");
    }
    out.kl_mean = kl_count ? kl_sum / kl_count : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct CurveRow {
    int iteration = 0;
    double mean_reward = 0.0;
    double mean_success = 0.0;
    double mean_response_len = 0.0;
    double tool_call_rate = 0.0; // mean tool calls per episode
    double kl_mean = 0.0;
    double grad_norm = 0.0;
};

inline std::string curves_csv(const std::vector<CurveRow>& rows) {
    std::string out = "iteration,mean_reward,mean_success,mean_response_len,tool_call_rate,kl_mean,grad_norm\n";
    for (const auto& r : rows) {
        out += std::to_string(r.iteration) + "," + format_double(r.mean_reward) + "," +
               format_double(r.mean_success) + "," + format_double(r.mean_response_len) + "," +
               format_double(r.tool_call_rate) + "," + format_double(r.kl_mean) + "," +
               format_double(r.grad_norm) + "\n";
    }
    return out;
}

struct RlResult {
    PolicyParams params;
    std::vector<CurveRow> curves;
    bool aborted = false;
};

/// The GRPO loop: snapshot theta_old, sample groups of rollouts from tasks
/// drawn uniformly over the suite, normalize rewards within each group,
/// update, repeat. Deterministic given the config seed.
inline RlResult train_rl(PolicyParams params, const PolicyParams& reference,
                         const std::vector<TaskSpec>& suite, const ToolRegistry& registry,
                         const Vocabulary& vocab, const GrammarConfig& gcfg,
                         const LoopBudget& budget, const GrpoConfig& cfg,
                         const RewardConfig& reward_cfg) {
    RlResult result{params, {}, false};
    AdamW opt(AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0}, params.w.size());

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        PolicyParams theta_old = result.params; // frozen snapshot for this iteration
        NetPolicy rollout_policy{&theta_old};

        std::vector<std::vector<EpisodeTrajectory>> groups;
        Rng task_rng = substream(cfg.seed, "rl-task", static_cast<uint64_t>(iter));
        for (int g = 0; g < cfg.groups_per_update; ++g) {
            const TaskSpec& task = suite[static_cast<size_t>(task_rng.next_below(suite.size()))];
            uint64_t env_seed = task_rng.next_u64() % 1000003ull;
            uint64_t sample_seed = fnv1a64_u64(static_cast<uint64_t>(g),
                                               fnv1a64_u64(static_cast<uint64_t>(iter),
                                                           fnv1a64_u64(cfg.seed, fnv1a64("rl-rollout"))));
            groups.push_back(rollout_group(rollout_policy, task, env_seed, cfg.group_size, registry,
                                           vocab, gcfg, budget, cfg.temperature, sample_seed));
        }

        // rewards, advantages, metrics
        std::vector<ScoredTrajectory> batch;
        double sum_reward = 0.0, sum_success = 0.0, sum_len = 0.0, sum_tools = 0.0;
        int episodes = 0;
        for (auto& group : groups) {
            std::vector<double> rewards;
            for (const auto& traj : group) {
                rewards.push_back(compute_reward(traj, reward_cfg));
            }
            auto advantages = normalize_advantages(rewards, cfg.std_guard);
            for (size_t m = 0; m < group.size(); ++m) {
                batch.push_back(ScoredTrajectory{&group[m], advantages[m]});
                sum_reward += rewards[m];
                sum_success += group[m].success;
                sum_len += group[m].response_len;
                sum_tools += group[m].tool_call_count;
                ++episodes;
            }
        }

        double grad_norm = 0.0, kl_mean = 0.0;
        try {
            for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
                GrpoResult step_result = grpo_objective(batch, result.params, reference, cfg);
                grad_norm = l2_norm(step_result.grad_neg);
                kl_mean = step_result.kl_mean;
                opt.step(result.params.w, step_result.grad_neg);
            }
        } catch (const NumericalFault&) {
            result.params = theta_old; // retain the last good checkpoint
            result.aborted = true;
            break;
        }

        CurveRow row;
        row.iteration = iter;
        row.mean_reward = sum_reward / episodes;
        row.mean_success = sum_success / episodes;
        row.mean_response_len = sum_len / episodes;
        row.tool_call_rate = sum_tools / episodes;
        row.kl_mean = kl_mean;
        row.grad_norm = grad_norm;
        result.curves.push_back(row);
    }
    return result;
}

} // namespace zoomvla
