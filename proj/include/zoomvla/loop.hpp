#pragma once

// The decision-step controller: alternates policy generation with tool
// execution and evidence injection until an action chunk closes the step,
// then executes the chunk in the environment. Sampling is unconstrained --
// the policy may emit grammar-breaking tokens and is punished through the
// format reward, never with an aborted episode. Every fault degrades to
// tool-error evidence or a forced action, so decide() always yields an
// executable chunk.
//
// Action chunks are decoded in parallel: when a chunk opens, all K query
// positions are appended at once, a single forward pass scores them, and each
// slot samples its primitive from the action sub-vocabulary.

#include <cmath>
#include <string>
#include <vector>

#include "env.hpp"
#include "policy.hpp"
#include "trace.hpp"
#include "vocab.hpp"
#include "zoom.hpp"

namespace zoomvla {

struct LoopBudget {
    int max_tool_calls = 3;
    int max_seq_len = 128;
    int max_decision_steps = 40;
};

struct LoopOptions {
    DecodeMode mode = DecodeMode::Greedy;
    double temperature = 1.0;
    bool disable_tools = false; // --no-tools: every execution yields TOOL_ERR
};

/// What the policy saw and produced during one decision step. The stored
/// sequence is sufficient to recompute per-token log-probabilities exactly.
struct StepRecord {
    PolicySequence seq;
    std::vector<int> wire_tokens;
    std::vector<double> lp_tokens; // natural-temperature logprob per generated position
    ActionChunk chunk;             // primitive indices
    int tool_calls = 0;
    bool forced_action = false;
    int format_ok = 0;
    int success_after = 0;
    uint64_t obs_hash = 0; // rendered frame the step observed
    std::vector<Region> evidence_regions; // per evidence, zero region for errors
    std::vector<uint64_t> evidence_hashes; // patch pixel hash, 0 for errors
};

struct EpisodeTrajectory {
    std::string task_id;
    uint64_t env_seed = 0;
    std::vector<StepRecord> steps;
    int success = 0;
    int format_ok = 1; // conjunction over steps
    int response_len = 0;
    int tool_call_count = 0;
    int env_steps = 0;
    uint64_t final_obs_hash = 0;
};

/// Policy interface used by the loop: anything that can score sequence
/// positions. NetPolicy wraps the transformer; tests drive the loop with
/// scripted policies.
template <class P>
concept TracePolicy = requires(const P& p, const PolicySequence& seq) {
    { p.last_logits(seq) } -> std::convertible_to<std::vector<double>>;
    { p.all_logits(seq) } -> std::convertible_to<std::vector<double>>;
};

struct NetPolicy {
    const PolicyParams* params = nullptr;

    std::vector<double> last_logits(const PolicySequence& seq) const {
        Tape tape = forward(*params, seq);
        const int V = params->cfg.vocab_size;
        std::vector<double> row(static_cast<size_t>(V));
        const double* src = tape.logits.data() + static_cast<size_t>(tape.L - 1) * V;
        std::copy(src, src + V, row.begin());
        return row;
    }

    /// Logits for every position in one pass; used for parallel slot decode.
    std::vector<double> all_logits(const PolicySequence& seq) const {
        return forward(*params, seq).logits;
    }
};

namespace detail {

/// Locates the pending tool call ending at the just-emitted </tool> token:
/// the wire suffix must be exactly <tool> zoom_in c c c c </tool> with a
/// bounds-valid region. Returns false on any malformation.
inline bool parse_pending_tool(const std::vector<int>& wire, const Vocabulary& vocab,
                               const GrammarConfig& gcfg, Region& out) {
    int open = -1;
    for (int i = static_cast<int>(wire.size()) - 1; i >= 0; --i) {
        if (wire[static_cast<size_t>(i)] == kToolOpen) {
            open = i;
            break;
        }
        if (wire[static_cast<size_t>(i)] == kEvid || wire[static_cast<size_t>(i)] == kToolClose) {
            if (i != static_cast<int>(wire.size()) - 1) {
                return false;
            }
        }
    }
    if (open < 0 || static_cast<int>(wire.size()) - open != 7) {
        return false;
    }
    if (wire[static_cast<size_t>(open) + 1] != vocab.zoom_name_token()) {
        return false;
    }
    int c[4];
    for (int k = 0; k < 4; ++k) {
        c[k] = vocab.coord_value(wire[static_cast<size_t>(open) + 2 + k]);
        if (c[k] < 0) {
            return false;
        }
    }
    out = Region{c[0], c[1], c[2], c[3]};
    return out.x0 < out.x1 && out.x1 <= gcfg.image_w && out.y0 < out.y1 && out.y1 <= gcfg.image_h;
}

inline std::vector<double> patch_features(const ObservationPatch& patch) {
    std::vector<double> f;
    f.reserve(patch.pixels.data.size());
    for (uint8_t b : patch.pixels.data) {
        f.push_back(b / 255.0);
    }
    return center_features(std::move(f));
}

} // namespace detail

/// Builds the conditioning context for one decision step: instruction tokens,
/// the pooled observation, and proprioception.
inline PolicySequence make_prompt(const std::vector<int>& instr_tokens, const Observation& obs,
                                  int obs_grid = 6) {
    PolicySequence seq;
    for (int t : instr_tokens) {
        seq_push_token(seq, t, false);
    }
    seq_push_feat(seq, InputKind::Obs, obs_features(obs.image, obs_grid));
    seq_push_feat(seq, InputKind::Proprio, obs.proprio);
    return seq;
}

/// One decision step: generate until an action chunk is produced, executing
/// tool calls as they close. Returns the full step record.
template <TracePolicy P>
StepRecord decide(const P& policy, const ToolRegistry& registry, const Vocabulary& vocab,
                  const GrammarConfig& gcfg, const LoopBudget& budget, const LoopOptions& opts,
                  const std::vector<int>& instr_tokens, const Observation& obs, Rng& rng) {
    StepRecord rec;
    rec.seq = make_prompt(instr_tokens, obs);
    const int K = gcfg.chunk_len;

    // Samples from a logits row at the requested temperature; the stored
    // logprob is always the natural-temperature one (what GRPO ratios use).
    auto sample_token_row = [&](const double* row) -> std::pair<int, double> {
        const int V = vocab.size();
        auto p_true = softmax_row(row, V, 1.0);
        auto p_samp = opts.mode == DecodeMode::Greedy ? p_true : softmax_row(row, V, opts.temperature);
        int tok = sample_index(p_samp, opts.mode, rng);
        return {tok, std::log(p_true[static_cast<size_t>(tok)])};
    };
    auto sample_slot_row = [&](const double* row) -> std::pair<int, double> {
        auto p_true = action_softmax_row(row, vocab.action_ids(), 1.0);
        auto p_samp = opts.mode == DecodeMode::Greedy
                          ? p_true
                          : action_softmax_row(row, vocab.action_ids(), opts.temperature);
        int prim = sample_index(p_samp, opts.mode, rng);
        return {prim, std::log(p_true[static_cast<size_t>(prim)])};
    };

    bool open_by_policy = false;
    while (true) {
        // Keep room for the worst case ahead: one sampled token, one injected
        // evidence position, a forced <act>, and the K slots.
        if (static_cast<int>(rec.seq.size()) + K + 3 > budget.max_seq_len) {
            rec.forced_action = true;
            break;
        }
        auto logits = policy.last_logits(rec.seq);
        auto [tok, lp] = sample_token_row(logits.data());
        rec.lp_tokens.push_back(lp);
        seq_push_token(rec.seq, tok, true);
        rec.wire_tokens.push_back(tok);

        if (tok == kActOpen) {
            open_by_policy = true;
            break;
        }
        if (tok == kEos) {
            // Premature end of trace: fail safe into a forced action. The
            // stray <eos> stays in the wire form and costs the format reward.
            rec.forced_action = true;
            break;
        }
        if (tok == kToolClose) {
            if (rec.tool_calls >= budget.max_tool_calls) {
                rec.forced_action = true;
                break;
            }
            Region region;
            bool parsed = detail::parse_pending_tool(rec.wire_tokens, vocab, gcfg, region);
            EvidenceResult ev;
            if (parsed && !opts.disable_tools) {
                ev = execute_tool_call(registry, "zoom_in", region, obs.image);
            }
            rec.wire_tokens.push_back(kEvid);
            if (ev.ok) {
                seq_push_feat(rec.seq, InputKind::Evid, detail::patch_features(ev.patch));
                rec.evidence_regions.push_back(region);
                rec.evidence_hashes.push_back(ev.patch.pixels.content_hash());
            } else {
                seq_push_token(rec.seq, vocab.tool_err_token(), false);
                rec.evidence_regions.push_back(Region{});
                rec.evidence_hashes.push_back(0);
            }
            rec.tool_calls += 1;
        }
    }

    if (!open_by_policy) {
        seq_push_token(rec.seq, kActOpen, false); // injected, not counted
        rec.wire_tokens.push_back(kActOpen);
    }

    // Parallel chunk decode: all K query slots appended first, one forward
    // scores them together, then each slot samples its primitive.
    const size_t slot_base = rec.seq.size();
    for (int k = 0; k < K; ++k) {
        seq_push_action_slot(rec.seq, -1, 0);
    }
    std::vector<double> all = policy.all_logits(rec.seq);
    const int V = vocab.size();
    for (int k = 0; k < K; ++k) {
        const double* row = all.data() + (slot_base + static_cast<size_t>(k)) * V;
        auto [prim, lp] = sample_slot_row(row);
        rec.lp_tokens.push_back(lp);
        int tok = vocab.action_id(prim);
        rec.seq[slot_base + static_cast<size_t>(k)].target = tok;
        rec.chunk.push_back(prim);
        rec.wire_tokens.push_back(tok);
    }
    rec.wire_tokens.push_back(kActClose);
    rec.wire_tokens.push_back(kEos);
    rec.format_ok = check_format(rec.wire_tokens, vocab, gcfg);
    return rec;
}

/// Rolls one full episode: decide + env.step until done.
template <TracePolicy P>
EpisodeTrajectory rollout_episode(const P& policy, const TaskSpec& task, uint64_t env_seed,
                                  const ToolRegistry& registry, const Vocabulary& vocab,
                                  const GrammarConfig& gcfg, const LoopBudget& budget,
                                  const LoopOptions& opts, uint64_t sample_seed) {
    EpisodeTrajectory traj;
    traj.task_id = task.id;
    traj.env_seed = env_seed;
    auto instr = task.instruction_tokens(vocab);
    auto [state, obs] = reset(task, env_seed);
    Rng rng = substream(sample_seed, "episode-sampling");

    for (int step_idx = 0; step_idx < budget.max_decision_steps && !state.done; ++step_idx) {
        StepRecord rec = decide(policy, registry, vocab, gcfg, budget, opts, instr, obs, rng);
        rec.obs_hash = obs.image.content_hash();
        auto result = step(state, task, rec.chunk);
        state = result.state;
        obs = result.obs;
        rec.success_after = result.success;
        traj.format_ok &= rec.format_ok;
        traj.response_len += static_cast<int>(rec.lp_tokens.size());
        traj.tool_call_count += rec.tool_calls;
        traj.steps.push_back(std::move(rec));
        if (result.done) {
            traj.success = result.success;
            break;
        }
    }
    traj.env_steps = state.step_count;
    traj.final_obs_hash = obs.image.content_hash();
    return traj;
}

/// M independent temperature rollouts from one (task, env_seed) under a
/// frozen policy snapshot; per-token logprobs under that snapshot are stored
/// in the step records.
template <TracePolicy P>
std::vector<EpisodeTrajectory> rollout_group(const P& policy_old, const TaskSpec& task,
                                             uint64_t env_seed, int group_size,
                                             const ToolRegistry& registry, const Vocabulary& vocab,
                                             const GrammarConfig& gcfg, const LoopBudget& budget,
                                             double temperature, uint64_t base_seed) {
    std::vector<EpisodeTrajectory> group;
    group.reserve(static_cast<size_t>(group_size));
    LoopOptions opts;
    opts.mode = DecodeMode::Temperature;
    opts.temperature = temperature;
    for (int m = 0; m < group_size; ++m) {
        uint64_t seed = fnv1a64_u64(static_cast<uint64_t>(m), fnv1a64_u64(base_seed, fnv1a64("group-member")));
        group.push_back(rollout_episode(policy_old, task, env_seed, registry, vocab, gcfg, budget,
                                        opts, seed));
    }
    return group;
}

} // namespace zoomvla
