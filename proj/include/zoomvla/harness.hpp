#pragma once

// Run configuration, evaluation harness, ablation runner, curve post-
// processing, and the end-to-end pipeline glue shared by the CLI and the
// acceptance suite. Every float that reaches a file goes through the same
// fixed-order accumulation and shortest-round-trip formatting, so a repeated
// run under one seed reproduces its outputs byte for byte.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cot.hpp"
#include "env.hpp"
#include "grpo.hpp"
#include "loop.hpp"
#include "policy.hpp"
#include "sft.hpp"
#include "trace.hpp"
#include "util.hpp"
#include "vocab.hpp"
#include "zoom.hpp"

namespace zoomvla {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingMetrics : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    uint64_t seed = 0;
    int demos_per_task = 50;
    int eval_episodes = 50;
    SftConfig sft;
    GrpoConfig grpo;
    RewardConfig reward;
    LoopBudget budget;
    int policy_dim = 32;
    int policy_blocks = 2;
    int policy_ffn_hidden = 128;
};

namespace detail {

inline void expect_keys(const ojson& j, const std::vector<std::string>& allowed,
                        const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown config key: " + scope + "." + it.key());
        }
    }
}

template <class T>
void maybe(const ojson& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

} // namespace detail

inline RunConfig config_from_json(const ojson& j) {
    RunConfig rc;
    detail::expect_keys(j, {"seed", "demos_per_task", "eval_episodes", "sft", "grpo", "reward",
                            "budget", "policy"},
                        "root");
    detail::maybe(j, "seed", rc.seed);
    detail::maybe(j, "demos_per_task", rc.demos_per_task);
    detail::maybe(j, "eval_episodes", rc.eval_episodes);
    if (j.contains("sft")) {
        const auto& s = j.at("sft");
        detail::expect_keys(s, {"batch_size", "learning_rate", "epochs", "weight_decay",
                                "max_records"},
                            "sft");
        detail::maybe(s, "batch_size", rc.sft.batch_size);
        detail::maybe(s, "learning_rate", rc.sft.learning_rate);
        detail::maybe(s, "epochs", rc.sft.epochs);
        detail::maybe(s, "weight_decay", rc.sft.weight_decay);
        detail::maybe(s, "max_records", rc.sft.max_records);
    }
    if (j.contains("grpo")) {
        const auto& g = j.at("grpo");
        detail::expect_keys(g, {"group_size", "eps_low", "eps_high", "kl_beta",
                                "groups_per_update", "learning_rate", "temperature", "iterations",
                                "std_guard", "inner_epochs"},
                            "grpo");
        detail::maybe(g, "group_size", rc.grpo.group_size);
        detail::maybe(g, "eps_low", rc.grpo.eps_low);
        detail::maybe(g, "eps_high", rc.grpo.eps_high);
        detail::maybe(g, "kl_beta", rc.grpo.kl_beta);
        detail::maybe(g, "groups_per_update", rc.grpo.groups_per_update);
        detail::maybe(g, "learning_rate", rc.grpo.learning_rate);
        detail::maybe(g, "temperature", rc.grpo.temperature);
        detail::maybe(g, "iterations", rc.grpo.iterations);
        detail::maybe(g, "std_guard", rc.grpo.std_guard);
        detail::maybe(g, "inner_epochs", rc.grpo.inner_epochs);
    }
    if (j.contains("reward")) {
        const auto& r = j.at("reward");
        detail::expect_keys(r, {"alpha_success", "alpha_format"}, "reward");
        detail::maybe(r, "alpha_success", rc.reward.alpha_success);
        detail::maybe(r, "alpha_format", rc.reward.alpha_format);
        if (!(rc.reward.alpha_success > 0.0) || rc.reward.alpha_format < 0.0 ||
            rc.reward.alpha_format >= rc.reward.alpha_success) {
            throw ConfigError("reward weights must satisfy 0 <= alpha_format < alpha_success");
        }
    }
    if (j.contains("budget")) {
        const auto& b = j.at("budget");
        detail::expect_keys(b, {"max_tool_calls", "max_seq_len", "max_decision_steps"}, "budget");
        detail::maybe(b, "max_tool_calls", rc.budget.max_tool_calls);
        detail::maybe(b, "max_seq_len", rc.budget.max_seq_len);
        detail::maybe(b, "max_decision_steps", rc.budget.max_decision_steps);
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        detail::expect_keys(p, {"dim", "blocks", "ffn_hidden"}, "policy");
        detail::maybe(p, "dim", rc.policy_dim);
        detail::maybe(p, "blocks", rc.policy_blocks);
        detail::maybe(p, "ffn_hidden", rc.policy_ffn_hidden);
    }
    return rc;
}

inline ojson config_to_json(const RunConfig& rc) {
    ojson j;
    j["seed"] = rc.seed;
    j["demos_per_task"] = rc.demos_per_task;
    j["eval_episodes"] = rc.eval_episodes;
    j["sft"] = {{"batch_size", rc.sft.batch_size},
                {"learning_rate", rc.sft.learning_rate},
                {"epochs", rc.sft.epochs},
                {"weight_decay", rc.sft.weight_decay},
                {"max_records", rc.sft.max_records}};
    j["grpo"] = {{"group_size", rc.grpo.group_size},
                 {"eps_low", rc.grpo.eps_low},
                 {"eps_high", rc.grpo.eps_high},
                 {"kl_beta", rc.grpo.kl_beta},
                 {"groups_per_update", rc.grpo.groups_per_update},
                 {"learning_rate", rc.grpo.learning_rate},
                 {"temperature", rc.grpo.temperature},
                 {"iterations", rc.grpo.iterations},
                 {"std_guard", rc.grpo.std_guard},
                 {"inner_epochs", rc.grpo.inner_epochs}};
    j["reward"] = {{"alpha_success", rc.reward.alpha_success},
                   {"alpha_format", rc.reward.alpha_format}};
    j["budget"] = {{"max_tool_calls", rc.budget.max_tool_calls},
                   {"max_seq_len", rc.budget.max_seq_len},
                   {"max_decision_steps", rc.budget.max_decision_steps}};
    j["policy"] = {{"dim", rc.policy_dim},
                   {"blocks", rc.policy_blocks},
                   {"ffn_hidden", rc.policy_ffn_hidden}};
    return j;
}

inline uint64_t config_hash(const RunConfig& rc) {
    return fnv1a64(config_to_json(rc).dump());
}

/// Checkpoint-compatibility hash: covers exactly what determines the
/// parameter layout and the sequence contract, so tweaking trainer settings
/// does not orphan existing checkpoints.
inline uint64_t policy_hash(const RunConfig& rc, const Vocabulary& vocab) {
    ojson j;
    j["vocab_size"] = vocab.size();
    j["dim"] = rc.policy_dim;
    j["blocks"] = rc.policy_blocks;
    j["ffn_hidden"] = rc.policy_ffn_hidden;
    j["max_seq_len"] = rc.budget.max_seq_len;
    return fnv1a64(j.dump());
}

inline PolicyConfig make_policy_config(const RunConfig& rc, const Vocabulary& vocab) {
    PolicyConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.dim = rc.policy_dim;
    cfg.n_blocks = rc.policy_blocks;
    cfg.ffn_hidden = rc.policy_ffn_hidden;
    cfg.max_seq_len = rc.budget.max_seq_len;
    cfg.action_token_ids = vocab.action_ids();
    return cfg;
}

inline GrammarConfig make_grammar_config(const RunConfig& rc) {
    GrammarConfig g;
    g.max_tool_calls = rc.budget.max_tool_calls;
    return g;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct TaskEval {
    std::string task_id;
    std::string tier;
    int episodes = 0;
    double success_rate = 0.0;
    double mean_episode_len = 0.0;   // primitive env steps
    double mean_response_len = 0.0;  // generated tokens
    double tool_call_rate = 0.0;     // tool calls per episode
    double episodes_with_tool = 0.0; // fraction of episodes with >= 1 call
    bool ambiguous = false;
};

struct TierEval {
    std::string tier;
    int episodes = 0;
    double success_rate = 0.0;
    double mean_response_len = 0.0;
};

struct EvalReport {
    std::vector<TaskEval> per_task;
    std::vector<TierEval> per_tier;
    int episodes = 0;
    double overall_success = 0.0;
    double overall_response_len = 0.0;
    double ambiguous_success = 0.0;       // over ambiguous-target tasks only
    double ambiguous_tool_episodes = 0.0; // fraction with >= 1 tool call
};

/// Greedy rollouts over seeds 0..N-1 per task. With no_tools every tool
/// execution is replaced by the error marker, isolating the contribution of
/// the injected visual evidence.
inline EvalReport run_eval(const PolicyParams& params, const std::vector<TaskSpec>& suite,
                           const Vocabulary& vocab, const GrammarConfig& gcfg,
                           const LoopBudget& budget, int episodes_per_task, bool no_tools = false) {
    EvalReport report;
    ToolRegistry registry = ToolRegistry::with_zoom();
    NetPolicy policy{&params};
    LoopOptions opts;
    opts.mode = DecodeMode::Greedy;
    opts.disable_tools = no_tools;

    std::map<std::string, TierEval> tiers;
    double sum_success = 0.0, sum_len = 0.0;
    double amb_success = 0.0, amb_tool = 0.0;
    int amb_episodes = 0;

    for (const auto& task : suite) {
        TaskEval te;
        te.task_id = task.id;
        te.tier = tier_name(task.tier);
        te.ambiguous = task.ambiguous;
        double s = 0.0, el = 0.0, rl = 0.0, tc = 0.0, wt = 0.0;
        for (int seed = 0; seed < episodes_per_task; ++seed) {
            EpisodeTrajectory traj = rollout_episode(policy, task, static_cast<uint64_t>(seed),
                                                     registry, vocab, gcfg, budget, opts, 0);
            s += traj.success;
            el += traj.env_steps;
            rl += traj.response_len;
            tc += traj.tool_call_count;
            wt += traj.tool_call_count > 0 ? 1.0 : 0.0;
        }
        te.episodes = episodes_per_task;
        te.success_rate = s / episodes_per_task;
        te.mean_episode_len = el / episodes_per_task;
        te.mean_response_len = rl / episodes_per_task;
        te.tool_call_rate = tc / episodes_per_task;
        te.episodes_with_tool = wt / episodes_per_task;
        report.per_task.push_back(te);

        auto& tier = tiers[te.tier];
        tier.tier = te.tier;
        tier.episodes += episodes_per_task;
        tier.success_rate += s;
        tier.mean_response_len += rl;
        report.episodes += episodes_per_task;
        sum_success += s;
        sum_len += rl;
        if (task.ambiguous) {
            amb_success += s;
            amb_tool += wt;
            amb_episodes += episodes_per_task;
        }
    }
    for (const char* name : {"short", "medium", "long", "extra_long"}) {
        auto it = tiers.find(name);
        if (it == tiers.end()) {
            continue;
        }
        TierEval t = it->second;
        t.success_rate /= t.episodes;
        t.mean_response_len /= t.episodes;
        report.per_tier.push_back(t);
    }
    report.overall_success = report.episodes ? sum_success / report.episodes : 0.0;
    report.overall_response_len = report.episodes ? sum_len / report.episodes : 0.0;
    report.ambiguous_success = amb_episodes ? amb_success / amb_episodes : 0.0;
    report.ambiguous_tool_episodes = amb_episodes ? amb_tool / amb_episodes : 0.0;
    return report;
}

/// Line-delimited report: one row per task, then tier aggregates, then the
/// overall row.
inline std::string eval_report_jsonl(const EvalReport& report) {
    std::string out;
    for (const auto& te : report.per_task) {
        ojson j;
        j["row"] = "task";
        j["task_id"] = te.task_id;
        j["tier"] = te.tier;
        j["episodes"] = te.episodes;
        j["success_rate"] = te.success_rate;
        j["mean_episode_len"] = te.mean_episode_len;
        j["mean_response_len"] = te.mean_response_len;
        j["tool_call_rate"] = te.tool_call_rate;
        j["episodes_with_tool"] = te.episodes_with_tool;
        j["ambiguous"] = te.ambiguous;
        out += j.dump() + "\n";
    }
    for (const auto& t : report.per_tier) {
        ojson j;
        j["row"] = "tier";
        j["tier"] = t.tier;
        j["episodes"] = t.episodes;
        j["success_rate"] = t.success_rate;
        j["mean_response_len"] = t.mean_response_len;
        out += j.dump() + "\n";
    }
    ojson j;
    j["row"] = "overall";
    j["episodes"] = report.episodes;
    j["success_rate"] = report.overall_success;
    j["mean_response_len"] = report.overall_response_len;
    j["ambiguous_success"] = report.ambiguous_success;
    j["ambiguous_tool_episodes"] = report.ambiguous_tool_episodes;
    out += j.dump() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// trajectory dumps (rollout / --replay)
// ---------------------------------------------------------------------------

inline ojson trajectory_to_json(const EpisodeTrajectory& traj) {
    ojson j;
    j["task_id"] = traj.task_id;
    j["env_seed"] = traj.env_seed;
    j["success"] = traj.success;
    j["format_ok"] = traj.format_ok;
    j["response_len"] = traj.response_len;
    j["tool_calls"] = traj.tool_call_count;
    j["env_steps"] = traj.env_steps;
    ojson steps = ojson::array();
    for (const auto& s : traj.steps) {
        ojson sj;
        sj["tokens"] = s.wire_tokens;
        sj["chunk"] = s.chunk;
        sj["obs_hash"] = s.obs_hash;
        ojson evs = ojson::array();
        for (size_t e = 0; e < s.evidence_regions.size(); ++e) {
            const Region& r = s.evidence_regions[e];
            evs.push_back({{"region", {r.x0, r.y0, r.x1, r.y1}}, {"hash", s.evidence_hashes[e]}});
        }
        sj["evidence"] = evs;
        steps.push_back(sj);
    }
    j["steps"] = steps;
    j["final_obs_hash"] = traj.final_obs_hash;
    return j;
}

struct ReplayOutcome {
    bool ok = true;
    std::string detail;
};

/// Re-executes a dumped trajectory: chunks re-step the environment, evidence
/// regions re-zoom the re-rendered frames, and everything must match.
inline ReplayOutcome replay_trajectory(const ojson& j, const std::vector<TaskSpec>& suite) {
    const TaskSpec* task = find_task(suite, j.at("task_id").get<std::string>());
    if (!task) {
        return {false, "unknown task"};
    }
    auto [state, obs] = reset(*task, j.at("env_seed").get<uint64_t>());
    for (const auto& sj : j.at("steps")) {
        if (obs.image.content_hash() != sj.at("obs_hash").get<uint64_t>()) {
            return {false, "frame hash mismatch"};
        }
        for (const auto& ev : sj.at("evidence")) {
            uint64_t want = ev.at("hash").get<uint64_t>();
            if (want == 0) {
                continue; // tool-error evidence has no pixels
            }
            auto r = ev.at("region").get<std::vector<int>>();
            auto patch = zoom_in(obs.image, Region{r[0], r[1], r[2], r[3]});
            if (patch.pixels.content_hash() != want) {
                return {false, "evidence mismatch"};
            }
        }
        auto chunk = sj.at("chunk").get<ActionChunk>();
        auto res = step(state, *task, chunk);
        state = res.state;
        obs = res.obs;
        if (res.done) {
            break;
        }
    }
    int want_success = j.at("success").get<int>();
    if ((state.success ? 1 : 0) != want_success) {
        return {false, "success flag mismatch"};
    }
    if (state.step_count != j.at("env_steps").get<int>()) {
        return {false, "env step count mismatch"};
    }
    if (obs.image.content_hash() != j.at("final_obs_hash").get<uint64_t>()) {
        return {false, "final frame mismatch"};
    }
    return {true, ""};
}

// ---------------------------------------------------------------------------
// curve post-processing
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    auto lines = split_lines(text);
    if (lines.empty()) {
        throw MissingMetrics("empty metrics file");
    }
    size_t start = 0;
    {
        std::string h = lines[0];
        size_t pos = 0;
        while (true) {
            size_t c = h.find(',', pos);
            t.header.push_back(h.substr(pos, c - pos));
            if (c == std::string::npos) {
                break;
            }
            pos = c + 1;
        }
        start = 1;
    }
    for (size_t i = start; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        std::vector<double> row;
        size_t pos = 0;
        while (true) {
            size_t c = lines[i].find(',', pos);
            row.push_back(std::stod(lines[i].substr(pos, c - pos)));
            if (c == std::string::npos) {
                break;
            }
            pos = c + 1;
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Tidy long-format plot data: metric,iteration,value plus a 10-window moving
/// mean series per metric (metric name suffixed _smooth).
inline std::string curves_long_format(const CsvTable& t, int window = 10) {
    int iter_col = -1;
    for (size_t c = 0; c < t.header.size(); ++c) {
        if (t.header[c] == "iteration") {
            iter_col = static_cast<int>(c);
        }
    }
    if (iter_col < 0) {
        throw MissingMetrics("no iteration column");
    }
    std::string out = "metric,iteration,value\n";
    for (size_t c = 0; c < t.header.size(); ++c) {
        if (static_cast<int>(c) == iter_col) {
            continue;
        }
        std::vector<double> series;
        for (const auto& row : t.rows) {
            series.push_back(row[c]);
        }
        auto smooth = moving_mean(series, window);
        for (size_t i = 0; i < series.size(); ++i) {
            int iter = static_cast<int>(t.rows[i][static_cast<size_t>(iter_col)]);
            out += t.header[c] + "," + std::to_string(iter) + "," + format_double(series[i]) + "\n";
            out += t.header[c] + "_smooth," + std::to_string(iter) + "," +
                   format_double(smooth[i]) + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// task suite IO
// ---------------------------------------------------------------------------

inline ojson suite_to_json(const std::vector<TaskSpec>& suite) {
    ojson arr = ojson::array();
    for (const auto& t : suite) {
        ojson j;
        j["id"] = t.id;
        j["tier"] = tier_name(t.tier);
        j["max_steps"] = t.max_steps;
        ojson legs = ojson::array();
        for (const auto& leg : t.legs) {
            ojson lj;
            lj["target_color"] = color_word(leg.target_color);
            if (leg.target_marking >= 0) {
                lj["target_marking"] = leg.target_marking == kDotA ? "dota" : "dotb";
            }
            if (leg.dest_color >= 0) {
                lj["dest_color"] = color_word(leg.dest_color);
            }
            legs.push_back(lj);
        }
        j["legs"] = legs;
        j["instruction"] = t.instruction_words;
        arr.push_back(j);
    }
    return arr;
}

// ---------------------------------------------------------------------------
// pipeline glue
// ---------------------------------------------------------------------------

struct PipelinePaths {
    std::string out_dir;
    std::string dataset() const { return out_dir + "/dataset.jsonl"; }
    std::string stats() const { return out_dir + "/dataset_stats.json"; }
    std::string vocab_file() const { return out_dir + "/vocab.txt"; }
    std::string tasks() const { return out_dir + "/tasks.json"; }
    std::string demos() const { return out_dir + "/demos.jsonl"; }
    std::string resolved_config() const { return out_dir + "/resolved_config.json"; }
    std::string sft_checkpoint() const { return out_dir + "/sft_checkpoint.bin"; }
    std::string sft_metrics() const { return out_dir + "/sft_metrics.csv"; }
    std::string rl_checkpoint() const { return out_dir + "/rl_checkpoint.bin"; }
    std::string rl_curves() const { return out_dir + "/rl_curves.csv"; }
    std::string eval_report() const { return out_dir + "/eval_report.jsonl"; }
};

inline void write_resolved_config(const RunConfig& rc, const PipelinePaths& paths) {
    ojson j = config_to_json(rc);
    j["config_hash"] = config_hash(rc);
    write_text_file(paths.resolved_config(), j.dump(2) + "\n");
}

inline Dataset cmd_synth(const RunConfig& rc, const PipelinePaths& paths,
                         const std::vector<TaskSpec>& suite, const Vocabulary& vocab) {
    GrammarConfig gcfg = make_grammar_config(rc);
    Dataset ds = build_dataset(suite, rc.demos_per_task, vocab, gcfg);
    write_dataset(paths.dataset(), ds);
    std::string demo_dump;
    for (const auto& task : suite) {
        for (int d = 0; d < rc.demos_per_task; ++d) {
            demo_dump += demo_dump_jsonl(run_demo(task, static_cast<uint64_t>(d)));
        }
    }
    write_text_file(paths.demos(), demo_dump);
    write_text_file(paths.stats(), stats_to_json(ds.stats).dump(2) + "\n");
    write_text_file(paths.vocab_file(), vocab.to_file_text());
    write_text_file(paths.tasks(), suite_to_json(suite).dump(2) + "\n");
    write_resolved_config(rc, paths);
    return ds;
}

inline SftResult cmd_sft(const RunConfig& rc, const PipelinePaths& paths,
                         const std::vector<TaskSpec>& suite, const Vocabulary& vocab) {
    GrammarConfig gcfg = make_grammar_config(rc);
    auto records = subsample_records(load_dataset(paths.dataset()), rc.sft.max_records);
    auto items = materialize_dataset(records, suite, vocab, gcfg);
    PolicyParams init = PolicyParams::init(make_policy_config(rc, vocab), rc.seed);
    SftConfig cfg = rc.sft;
    cfg.seed = rc.seed;
    SftResult result = train_sft(std::move(init), items, cfg);
    save_checkpoint(paths.sft_checkpoint(), result.params, policy_hash(rc, vocab));
    write_text_file(paths.sft_metrics(), loss_reports_csv(result.reports));
    return result;
}

inline RlResult cmd_rl(const RunConfig& rc, const PipelinePaths& paths,
                       const std::vector<TaskSpec>& suite, const Vocabulary& vocab,
                       std::optional<PolicyParams> start_override = std::nullopt) {
    GrammarConfig gcfg = make_grammar_config(rc);
    PolicyConfig pcfg = make_policy_config(rc, vocab);
    PolicyParams start = start_override ? std::move(*start_override)
                                        : load_checkpoint(paths.sft_checkpoint(), pcfg, policy_hash(rc, vocab));
    PolicyParams reference = start;
    ToolRegistry registry = ToolRegistry::with_zoom();
    GrpoConfig cfg = rc.grpo;
    cfg.seed = rc.seed;
    RlResult result = train_rl(start, reference, suite, registry, vocab, gcfg, rc.budget, cfg,
                               rc.reward);
    save_checkpoint(paths.rl_checkpoint(), result.params, policy_hash(rc, vocab));
    write_text_file(paths.rl_curves(), curves_csv(result.curves));
    return result;
}

inline EvalReport cmd_eval(const RunConfig& rc, const std::string& checkpoint_path,
                           const std::string& report_path, const std::vector<TaskSpec>& suite,
                           const Vocabulary& vocab, bool no_tools = false) {
    GrammarConfig gcfg = make_grammar_config(rc);
    PolicyConfig pcfg = make_policy_config(rc, vocab);
    PolicyParams params = load_checkpoint(checkpoint_path, pcfg, policy_hash(rc, vocab));
    EvalReport report = run_eval(params, suite, vocab, gcfg, rc.budget, rc.eval_episodes, no_tools);
    if (!report_path.empty()) {
        write_text_file(report_path, eval_report_jsonl(report));
    }
    return report;
}

/// synth -> sft -> rl -> eval under one seed.
inline EvalReport run_pipeline(const RunConfig& rc, const std::string& out_dir) {
    PipelinePaths paths{out_dir};
    Vocabulary vocab = Vocabulary::default_vocab();
    auto suite = default_task_suite();
    cmd_synth(rc, paths, suite, vocab);
    cmd_sft(rc, paths, suite, vocab);
    cmd_rl(rc, paths, suite, vocab);
    return cmd_eval(rc, paths.rl_checkpoint(), paths.eval_report(), suite, vocab);
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string variant;
    double overall_success = 0.0;
    double ambiguous_success = 0.0;
    std::map<std::string, double> tier_success;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    EvalReport sft_only, sft_rl, rl_scratch;
};

inline AblationRow ablation_row(const std::string& variant, const EvalReport& report) {
    AblationRow row;
    row.variant = variant;
    row.overall_success = report.overall_success;
    row.ambiguous_success = report.ambiguous_success;
    for (const auto& t : report.per_tier) {
        row.tier_success[t.tier] = t.success_rate;
    }
    return row;
}

inline std::string ablation_csv(const AblationResult& ab) {
    std::string out = "variant,short,medium,long,extra_long,ambiguous,overall\n";
    for (const auto& row : ab.rows) {
        auto tier = [&](const char* name) {
            auto it = row.tier_success.find(name);
            return it == row.tier_success.end() ? 0.0 : it->second;
        };
        out += row.variant + "," + format_double(tier("short")) + "," +
               format_double(tier("medium")) + "," + format_double(tier("long")) + "," +
               format_double(tier("extra_long")) + "," + format_double(row.ambiguous_success) +
               "," + format_double(row.overall_success) + "\n";
    }
    return out;
}

/// Trains and evaluates the three stage variants on identical seed sets:
/// cold-start only, cold-start + GRPO, and GRPO from scratch. The SFT and RL
/// artifacts in out_dir are reused as the first two variants.
inline AblationResult cmd_ablation(const RunConfig& rc, const std::string& out_dir) {
    PipelinePaths paths{out_dir};
    Vocabulary vocab = Vocabulary::default_vocab();
    auto suite = default_task_suite();
    GrammarConfig gcfg = make_grammar_config(rc);
    PolicyConfig pcfg = make_policy_config(rc, vocab);

    if (!std::filesystem::exists(paths.dataset())) {
        cmd_synth(rc, paths, suite, vocab);
    }
    if (!std::filesystem::exists(paths.sft_checkpoint())) {
        cmd_sft(rc, paths, suite, vocab);
    }
    if (!std::filesystem::exists(paths.rl_checkpoint())) {
        cmd_rl(rc, paths, suite, vocab);
    }

    AblationResult ab;
    PolicyParams sft_params = load_checkpoint(paths.sft_checkpoint(), pcfg, policy_hash(rc, vocab));
    ab.sft_only = run_eval(sft_params, suite, vocab, gcfg, rc.budget, rc.eval_episodes);
    PolicyParams rl_params = load_checkpoint(paths.rl_checkpoint(), pcfg, policy_hash(rc, vocab));
    ab.sft_rl = run_eval(rl_params, suite, vocab, gcfg, rc.budget, rc.eval_episodes);

    // GRPO from scratch: same RL config, fresh initialization as both the
    // starting point and the KL reference.
    PolicyParams scratch = PolicyParams::init(pcfg, rc.seed);
    ToolRegistry registry = ToolRegistry::with_zoom();
    GrpoConfig gr = rc.grpo;
    gr.seed = rc.seed;
    RlResult scratch_rl = train_rl(scratch, scratch, suite, registry, vocab, gcfg, rc.budget, gr,
                                   rc.reward);
    write_text_file(out_dir + "/rl_scratch_curves.csv", curves_csv(scratch_rl.curves));
    ab.rl_scratch = run_eval(scratch_rl.params, suite, vocab, gcfg, rc.budget, rc.eval_episodes);

    ab.rows.push_back(ablation_row("sft_only", ab.sft_only));
    ab.rows.push_back(ablation_row("rl_from_scratch", ab.rl_scratch));
    ab.rows.push_back(ablation_row("sft_plus_rl", ab.sft_rl));
    write_text_file(out_dir + "/ablation.csv", ablation_csv(ab));
    return ab;
}

} // namespace zoomvla
