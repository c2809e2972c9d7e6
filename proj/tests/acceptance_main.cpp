// Acceptance suite: one criterion per numbered check, one PASS/FAIL line
// each, nonzero exit if anything fails. Heavy artifacts (dataset, SFT and RL
// checkpoints) are built once in the work directory and shared between
// criteria. Run `acceptance --help` for the flags.

#include "zoomvla/harness.hpp"

#include "reference_grammar.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>

using namespace zoomvla;
using zoomvla_test::ReferenceAutomaton;
using zoomvla_test::random_valid_trace;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Tuned run configuration for the trained-behavior criteria (7, 8, 9).
RunConfig acceptance_config() {
    RunConfig rc;
    rc.seed = 12;
    rc.demos_per_task = 50;
    rc.eval_episodes = 50;
    rc.sft.epochs = 150;
    rc.sft.batch_size = 64;
    rc.sft.learning_rate = 1e-3;
    rc.sft.max_records = 0; // whole corpus; partial demos hurt more than epochs help
    rc.grpo.iterations = 200;
    rc.grpo.groups_per_update = 6;
    rc.grpo.group_size = 8;
    rc.grpo.learning_rate = 1e-4;
    rc.grpo.kl_beta = 0.01;
    rc.grpo.temperature = 1.0;
    return rc;
}

/// Small config for the end-to-end determinism check: the full pipeline, at
/// shakedown scale.
RunConfig determinism_config() {
    RunConfig rc;
    rc.seed = 7;
    rc.demos_per_task = 4;
    rc.eval_episodes = 5;
    rc.sft.epochs = 5;
    rc.sft.max_records = 300;
    rc.grpo.iterations = 3;
    rc.grpo.groups_per_update = 2;
    rc.grpo.group_size = 4;
    return rc;
}

struct Ctx {
    std::string work_dir = "acceptance_work";
    Vocabulary vocab = Vocabulary::default_vocab();
    std::vector<TaskSpec> suite = default_task_suite();
    RunConfig rc = acceptance_config();

    // lazily-built shared artifacts
    std::optional<Dataset> dataset_;
    std::optional<SftResult> sft_;
    std::optional<RlResult> rl_;
    double sft_seconds = 0.0;
    double rl_seconds = 0.0;

    PipelinePaths paths() const { return PipelinePaths{work_dir + "/main"}; }

    PolicyConfig policy_config() const { return make_policy_config(rc, vocab); }
    GrammarConfig grammar() const { return make_grammar_config(rc); }

    const Dataset& dataset() {
        if (!dataset_) {
            dataset_ = cmd_synth(rc, paths(), suite, vocab);
        }
        return *dataset_;
    }
    const SftResult& sft() {
        if (!sft_) {
            dataset();
            auto t0 = Clock::now();
            sft_ = cmd_sft(rc, paths(), suite, vocab);
            sft_seconds = seconds_since(t0);
        }
        return *sft_;
    }
    const RlResult& rl() {
        if (!rl_) {
            sft();
            auto t0 = Clock::now();
            rl_ = cmd_rl(rc, paths(), suite, vocab);
            rl_seconds = seconds_since(t0);
        }
        return *rl_;
    }
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---------------------------------------------------------------------------
// criterion 1: grammar oracle agreement + round trip
// ---------------------------------------------------------------------------
Outcome criterion_grammar(Ctx& ctx) {
    GrammarConfig gcfg = ctx.grammar();
    ReferenceAutomaton oracle(ctx.vocab, gcfg);
    Rng rng(8811);
    int disagreements = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        int len = rng.next_int(0, 65);
        std::vector<int> tokens(static_cast<size_t>(len));
        for (auto& t : tokens) {
            t = rng.next_int(0, ctx.vocab.size());
        }
        bool a = oracle.accepts(tokens);
        bool b = check_format(tokens, ctx.vocab, gcfg) == 1;
        disagreements += (a != b);
    }
    int roundtrip_fail = 0;
    for (int i = 0; i < 500; ++i) {
        Trace t = random_valid_trace(ctx.vocab, gcfg, rng);
        auto parsed = parse_trace(render_trace(t, ctx.vocab), ctx.vocab, gcfg);
        if (!std::holds_alternative<Trace>(parsed) || !(std::get<Trace>(parsed) == t)) {
            ++roundtrip_fail;
        }
    }
    Outcome out;
    out.pass = disagreements == 0 && roundtrip_fail == 0;
    out.detail = "agreement 10000/" + std::to_string(10000 - disagreements) + ", roundtrip 500/" +
                 std::to_string(500 - roundtrip_fail);
    return out;
}

// ---------------------------------------------------------------------------
// criterion 2: gradient exactness vs central finite differences
// ---------------------------------------------------------------------------
Outcome criterion_gradients(Ctx& ctx) {
    GrammarConfig gcfg = ctx.grammar();
    std::vector<TaskSpec> mini = {ctx.suite[2]};
    Dataset ds = build_dataset(mini, 1, ctx.vocab, gcfg);
    auto items = materialize_dataset(ds.records, ctx.suite, ctx.vocab, gcfg);
    std::vector<const TrainingItem*> batch = {&items[0], &items[items.size() - 1]};
    PolicyParams params = PolicyParams::init(ctx.policy_config(), 404);

    const double h = 1e-5;
    double max_rel_sft = 0.0;
    {
        GradBuffer grad(params.w.size(), 0.0);
        masked_loss(params, batch, &grad);
        Rng pick(11);
        for (int trial = 0; trial < 100; ++trial) {
            size_t idx = pick.next_below(params.w.size());
            PolicyParams p2 = params;
            p2.w[idx] += h;
            double up = masked_loss(p2, batch, nullptr).total;
            p2.w[idx] -= 2 * h;
            double dn = masked_loss(p2, batch, nullptr).total;
            double fd = (up - dn) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
            max_rel_sft = std::max(max_rel_sft, std::abs(fd - grad[idx]) / denom);
        }
    }

    double max_rel_grpo = 0.0;
    {
        PolicyParams theta_old = params;
        NetPolicy policy{&theta_old};
        ToolRegistry registry = ToolRegistry::with_zoom();
        std::vector<EpisodeTrajectory> all;
        for (uint64_t g = 0; g < 2; ++g) {
            auto group = rollout_group(policy, ctx.suite[0], g, 2, registry, ctx.vocab, gcfg,
                                       ctx.rc.budget, 1.0, 300 + g);
            for (auto& t : group) {
                all.push_back(std::move(t));
            }
        }
        std::vector<double> spread = {1.1, -0.7, 0.4, -0.8};
        std::vector<ScoredTrajectory> scored;
        for (size_t i = 0; i < all.size(); ++i) {
            scored.push_back(ScoredTrajectory{&all[i], spread[i]});
        }
        PolicyParams theta = params;
        Rng noise(5);
        for (auto& w : theta.w) {
            w += 1e-3 * noise.next_normal();
        }
        PolicyParams ref = PolicyParams::init(ctx.policy_config(), 405);
        GrpoConfig gr = ctx.rc.grpo;
        gr.kl_beta = 0.05;
        GrpoResult res = grpo_objective(scored, theta, ref, gr);
        Rng pick(21);
        for (int trial = 0; trial < 100; ++trial) {
            size_t idx = pick.next_below(theta.w.size());
            PolicyParams p2 = theta;
            p2.w[idx] += h;
            double up = grpo_objective(scored, p2, ref, gr).objective;
            p2.w[idx] -= 2 * h;
            double dn = grpo_objective(scored, p2, ref, gr).objective;
            double fd = -(up - dn) / (2 * h);
            double denom = std::max({std::abs(fd), std::abs(res.grad_neg[idx]), 1e-6});
            max_rel_grpo = std::max(max_rel_grpo, std::abs(fd - res.grad_neg[idx]) / denom);
        }
    }

    Outcome out;
    out.pass = max_rel_sft < 1e-4 && max_rel_grpo < 1e-4;
    out.detail = "sft max rel " + format_double(max_rel_sft) + ", grpo max rel " +
                 format_double(max_rel_grpo) + " (200 params total)";
    return out;
}

// ---------------------------------------------------------------------------
// criterion 3: total-probability normalization
// ---------------------------------------------------------------------------
Outcome criterion_normalization(Ctx&) {
    PolicyConfig cfg;
    cfg.vocab_size = 5;
    cfg.dim = 12;
    cfg.n_blocks = 2;
    cfg.ffn_hidden = 24;
    cfg.max_seq_len = 8;
    cfg.obs_dim = 6;
    cfg.evid_dim = 12;
    cfg.proprio_dim = 4;
    cfg.action_token_ids = {0, 1};
    PolicyParams params = PolicyParams::init(cfg, 2025);
    double total = 0.0;
    for (int a = 0; a < 5; ++a) {
        for (int b = 0; b < 5; ++b) {
            for (int c = 0; c < 5; ++c) {
                PolicySequence seq;
                seq_push_token(seq, 0, false);
                seq_push_token(seq, a, true);
                seq_push_token(seq, b, true);
                seq_push_token(seq, c, true);
                total += std::exp(sequence_logprob(params, seq).total);
            }
        }
    }
    Outcome out;
    out.pass = std::abs(total - 1.0) < 1e-10;
    out.detail = "sum over 125 sequences = 1 + " + format_double(total - 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// criterion 4: GRPO algebra
// ---------------------------------------------------------------------------
Outcome criterion_grpo_algebra(Ctx& ctx) {
    std::string fails;

    // advantage moments + guard
    Rng rng(99);
    double worst_mean = 0.0, worst_std = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> rewards(8);
        for (auto& r : rewards) {
            r = rng.next_below(2) ? 1.0 : (rng.next_below(2) ? 0.1 : 0.0);
        }
        bool flat = true;
        for (double r : rewards) {
            flat &= (r == rewards[0]);
        }
        auto adv = normalize_advantages(rewards);
        double mean = 0.0;
        for (double a : adv) {
            mean += a;
        }
        mean /= 8.0;
        if (flat) {
            for (double a : adv) {
                if (a != 0.0) {
                    fails += " guard";
                }
            }
            continue;
        }
        double var = 0.0;
        for (double a : adv) {
            var += (a - mean) * (a - mean);
        }
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_std = std::max(worst_std, std::abs(std::sqrt(var / 8.0) - 1.0));
    }
    if (worst_mean > 1e-12 || worst_std > 1e-9) {
        fails += " moments";
    }
    {
        auto z = normalize_advantages({0.5, 0.5, 0.5});
        for (double a : z) {
            if (a != 0.0) {
                fails += " guard-exact";
            }
        }
    }

    // on-policy identity and vanilla policy gradient
    GrammarConfig gcfg = ctx.grammar();
    PolicyParams params = PolicyParams::init(ctx.policy_config(), 777);
    NetPolicy policy{&params};
    ToolRegistry registry = ToolRegistry::with_zoom();
    auto group = rollout_group(policy, ctx.suite[0], 5, 4, registry, ctx.vocab, gcfg,
                               ctx.rc.budget, 1.0, 41);
    std::vector<double> spread = {1.0, -0.5, 0.25, -0.75};
    std::vector<ScoredTrajectory> batch;
    for (size_t m = 0; m < group.size(); ++m) {
        batch.push_back(ScoredTrajectory{&group[m], spread[m]});
    }
    GrpoConfig gr = ctx.rc.grpo;
    gr.kl_beta = 0.0;
    GrpoResult res = grpo_objective(batch, params, params, gr);
    double mean_adv = 0.0;
    for (double a : spread) {
        mean_adv += a;
    }
    mean_adv /= spread.size();
    if (std::abs(res.objective - mean_adv) > 1e-12) {
        fails += " on-policy-J";
    }
    {
        // vanilla estimator via plain cross-entropy rows
        const int V = params.cfg.vocab_size;
        GradBuffer vanilla(params.w.size(), 0.0);
        for (const auto& scored : batch) {
            long total_tokens = 0;
            for (const auto& step : scored.traj->steps) {
                total_tokens += static_cast<long>(step.lp_tokens.size());
            }
            double w = scored.advantage / (static_cast<double>(total_tokens) * batch.size());
            for (const auto& step : scored.traj->steps) {
                Tape tape = forward(params, step.seq);
                std::vector<double> dl(static_cast<size_t>(tape.L) * V, 0.0);
                for (int l = 0; l < tape.L; ++l) {
                    const SeqPos& p = step.seq[static_cast<size_t>(l)];
                    if (p.target < 0) {
                        continue;
                    }
                    const double* row = tape.logits.data() + static_cast<size_t>(l) * V;
                    double* dlr = dl.data() + static_cast<size_t>(l) * V;
                    if (p.slot) {
                        auto probs = action_softmax_row(row, params.cfg.action_token_ids);
                        for (size_t i = 0; i < probs.size(); ++i) {
                            int id = params.cfg.action_token_ids[i];
                            dlr[id] += w * (probs[i] - (id == p.target ? 1.0 : 0.0));
                        }
                    } else {
                        auto probs = softmax_row(row, V);
                        for (int v = 0; v < V; ++v) {
                            dlr[v] += w * (probs[static_cast<size_t>(v)] - (v == p.target ? 1.0 : 0.0));
                        }
                    }
                }
                backward(params, step.seq, tape, dl, vanilla);
            }
        }
        double max_diff = 0.0;
        for (size_t i = 0; i < vanilla.size(); ++i) {
            max_diff = std::max(max_diff, std::abs(vanilla[i] - res.grad_neg[i]));
        }
        if (max_diff > 1e-10) {
            fails += " vanilla-grad(" + format_double(max_diff) + ")";
        }
    }

    // clipped tokens contribute zero gradient (both clip directions)
    {
        PolicyConfig micro;
        micro.vocab_size = 6;
        micro.dim = 12;
        micro.n_blocks = 2;
        micro.ffn_hidden = 24;
        micro.max_seq_len = 8;
        micro.obs_dim = 6;
        micro.evid_dim = 12;
        micro.proprio_dim = 4;
        micro.action_token_ids = {0, 1};
        PolicyParams mp = PolicyParams::init(micro, 31);
        auto forged = [&](double ratio) {
            StepRecord rec;
            seq_push_token(rec.seq, 2, false);
            seq_push_token(rec.seq, 3, true);
            auto lp = sequence_logprob(mp, rec.seq);
            rec.lp_tokens = {lp.per_token[0] - std::log(ratio)};
            EpisodeTrajectory traj;
            traj.steps.push_back(std::move(rec));
            return traj;
        };
        GrpoConfig g2 = ctx.rc.grpo;
        g2.kl_beta = 0.0;
        EpisodeTrajectory hi = forged(1.5);
        std::vector<ScoredTrajectory> bhi = {{&hi, 1.0}};
        GrpoResult rhi = grpo_objective(bhi, mp, mp, g2);
        if (std::abs(rhi.objective - 1.28) > 1e-12 || l2_norm(rhi.grad_neg) != 0.0) {
            fails += " clip-high";
        }
        EpisodeTrajectory lo = forged(0.5);
        std::vector<ScoredTrajectory> blo = {{&lo, -1.0}};
        GrpoResult rlo = grpo_objective(blo, mp, mp, g2);
        if (std::abs(rlo.objective - (-0.8)) > 1e-12 || l2_norm(rlo.grad_neg) != 0.0) {
            fails += " clip-low";
        }
    }

    // reward lattice over sampled rollouts
    {
        RewardConfig rcfg = ctx.rc.reward;
        int count = 0;
        for (uint64_t s = 0; s < 25; ++s) {
            auto g = rollout_group(policy, ctx.suite[s % ctx.suite.size()], s, 4, registry,
                                   ctx.vocab, gcfg, ctx.rc.budget, 1.0, 900 + s);
            for (const auto& traj : g) {
                double r = compute_reward(traj, rcfg);
                if (!(r == 0.0 || r == 0.1 || r == 1.0 || r == 1.1)) {
                    fails += " lattice";
                }
                ++count;
            }
        }
        if (count != 100) {
            fails += " lattice-count";
        }
    }

    Outcome out;
    out.pass = fails.empty();
    out.detail = fails.empty() ? "moments, guard, on-policy identity, clip flatness, lattice"
                               : ("failed:" + fails);
    return out;
}

// ---------------------------------------------------------------------------
// criterion 5: KL properties and the high-beta pinning run
// ---------------------------------------------------------------------------
Outcome criterion_kl(Ctx& ctx) {
    std::string fails;
    PolicyConfig micro;
    micro.vocab_size = 7;
    micro.dim = 12;
    micro.n_blocks = 2;
    micro.ffn_hidden = 24;
    micro.max_seq_len = 8;
    micro.obs_dim = 6;
    micro.evid_dim = 12;
    micro.proprio_dim = 4;
    micro.action_token_ids = {0, 1};

    PolicyParams a = PolicyParams::init(micro, 5);
    PolicySequence seq;
    seq_push_token(seq, 2, false);
    seq_push_token(seq, 1, true);
    seq_push_token(seq, 3, true);
    if (std::abs(kl_term(a, a, seq)) > 1e-12) {
        fails += " self-kl";
    }

    Rng rng(606);
    for (int trial = 0; trial < 1000; ++trial) {
        PolicyParams p = PolicyParams::init(micro, rng.next_u64());
        PolicyParams q = PolicyParams::init(micro, rng.next_u64());
        PolicySequence s;
        seq_push_token(s, static_cast<int>(rng.next_below(7)), false);
        seq_push_token(s, static_cast<int>(rng.next_below(7)), true);
        if (kl_term(p, q, s) < 0.0) {
            fails += " negative-kl";
            break;
        }
    }

    // beta = 1e3 pins the update to the reference: greedy behavior identical
    {
        const SftResult& sft = ctx.sft();
        GrpoConfig pin = ctx.rc.grpo;
        pin.kl_beta = 1e3;
        pin.iterations = 8;
        pin.groups_per_update = 2;
        pin.group_size = 4;
        pin.seed = 555;
        ToolRegistry registry = ToolRegistry::with_zoom();
        RlResult pinned = train_rl(sft.params, sft.params, ctx.suite, registry, ctx.vocab,
                                   ctx.grammar(), ctx.rc.budget, pin, ctx.rc.reward);
        NetPolicy p_final{&pinned.params};
        NetPolicy p_ref{&sft.params};
        LoopOptions opts;
        int mismatches = 0;
        for (const auto& task : ctx.suite) {
            for (uint64_t s = 0; s < 4; ++s) {
                auto t1 = rollout_episode(p_final, task, s, registry, ctx.vocab, ctx.grammar(),
                                          ctx.rc.budget, opts, 0);
                auto t2 = rollout_episode(p_ref, task, s, registry, ctx.vocab, ctx.grammar(),
                                          ctx.rc.budget, opts, 0);
                if (t1.steps.size() != t2.steps.size()) {
                    ++mismatches;
                    continue;
                }
                for (size_t i = 0; i < t1.steps.size(); ++i) {
                    if (t1.steps[i].wire_tokens != t2.steps[i].wire_tokens ||
                        t1.steps[i].chunk != t2.steps[i].chunk) {
                        ++mismatches;
                        break;
                    }
                }
            }
        }
        if (mismatches > 0) {
            fails += " pinning(" + std::to_string(mismatches) + " episodes diverged)";
        }
    }

    Outcome out;
    out.pass = fails.empty();
    out.detail = fails.empty() ? "self-KL 0, 1000 nonnegative pairs, high-beta run pinned"
                               : ("failed:" + fails);
    return out;
}

// ---------------------------------------------------------------------------
// criterion 6: CoT pipeline exactness
// ---------------------------------------------------------------------------
Outcome criterion_cot(Ctx& ctx) {
    GrammarConfig gcfg = ctx.grammar();
    std::string fails;

    // keyframe recount over every generated demo
    int demos_checked = 0;
    for (const auto& task : ctx.suite) {
        for (int d = 0; d < ctx.rc.demos_per_task; ++d) {
            Demonstration demo = run_demo(task, static_cast<uint64_t>(d));
            auto keyframes = detect_keyframes(demo);
            std::set<int> expected;
            for (size_t i = 1; i < demo.steps.size(); ++i) {
                if (demo.steps[i].gripper_closed_after != demo.steps[i - 1].gripper_closed_after) {
                    expected.insert(static_cast<int>(i));
                }
            }
            if (std::set<int>(keyframes.begin(), keyframes.end()) != expected) {
                fails += " recount";
            }
            ++demos_checked;
        }
    }

    // evidence patches replay pixel-exactly across the whole dataset
    const Dataset& ds = ctx.dataset();
    int replayed = 0;
    {
        std::string cur_task;
        uint64_t cur_seed = 0;
        Demonstration demo;
        for (const auto& rec : ds.records) {
            if (!rec.is_keyframe) {
                continue;
            }
            if (rec.task_id != cur_task || rec.demo_seed != cur_seed || demo.steps.empty()) {
                demo = run_demo(*find_task(ctx.suite, rec.task_id), rec.demo_seed);
                cur_task = rec.task_id;
                cur_seed = rec.demo_seed;
            }
            auto patch = zoom_in(demo.steps[static_cast<size_t>(rec.frame_id)].obs_before.image,
                                 rec.tool_region);
            if (patch.pixels.content_hash() != rec.evidence_hash) {
                fails += " replay";
            }
            ++replayed;
        }
    }

    // mutation fuzz: 1000 single-fault records all rejected with a correctly
    // classified violation
    int rejected = 0, classified = 0;
    {
        struct PoolEntry {
            CotRecord rec;
            size_t demo_idx;
            int prev_frame;
        };
        std::vector<PoolEntry> pool;
        std::vector<Demonstration> demos;
        for (const auto& task : ctx.suite) {
            for (int d = 0; d < 4; ++d) {
                Demonstration demo = run_demo(task, static_cast<uint64_t>(d));
                auto keyframes = detect_keyframes(demo);
                int prev = -1;
                size_t di = demos.size();
                for (size_t f = 0; f < demo.steps.size(); ++f) {
                    bool kf = std::find(keyframes.begin(), keyframes.end(), static_cast<int>(f)) !=
                              keyframes.end();
                    CotRecord rec = kf
                        ? annotate_keyframe(demo, static_cast<int>(f), ctx.vocab, task)
                        : annotate_intermediate(demo, static_cast<int>(f), ctx.vocab, task);
                    pool.push_back(PoolEntry{rec, di, prev});
                    prev = static_cast<int>(f);
                }
                demos.push_back(std::move(demo));
            }
        }
        auto has_kind = [](const std::vector<ValidationError>& errs, ValidationErrorKind k) {
            for (const auto& e : errs) {
                if (e.kind == k) {
                    return true;
                }
            }
            return false;
        };
        Rng rng(424242);
        for (int trial = 0; trial < 1000; ++trial) {
            size_t ridx = rng.next_below(pool.size());
            switch (trial % 4) {
                case 0: { // tag drop -> FormatInvalid
                    CotRecord rec = pool[ridx].rec;
                    std::vector<size_t> ats;
                    for (size_t i = 0; i < rec.target_tokens.size(); ++i) {
                        if (ctx.vocab.token_class(rec.target_tokens[i]) == TokenClass::Control) {
                            ats.push_back(i);
                        }
                    }
                    rec.target_tokens.erase(rec.target_tokens.begin() +
                                            static_cast<long>(ats[rng.next_below(ats.size())]));
                    auto errs = validate_trace(rec, demos[pool[ridx].demo_idx], ctx.vocab, gcfg,
                                               pool[ridx].prev_frame);
                    rejected += !errs.empty();
                    classified += has_kind(errs, ValidationErrorKind::FormatInvalid);
                    break;
                }
                case 1: { // frame-id swap -> ordering (or content) violation
                    while (ridx + 1 >= pool.size() || pool[ridx + 1].demo_idx != pool[ridx].demo_idx) {
                        ridx = (ridx + 1) % (pool.size() - 1);
                    }
                    CotRecord first = pool[ridx].rec;
                    CotRecord second = pool[ridx + 1].rec;
                    std::swap(first.frame_id, second.frame_id);
                    const Demonstration& d = demos[pool[ridx].demo_idx];
                    auto e1 = validate_trace(first, d, ctx.vocab, gcfg, pool[ridx].prev_frame);
                    auto e2 = validate_trace(second, d, ctx.vocab, gcfg, first.frame_id);
                    std::vector<ValidationError> all = e1;
                    all.insert(all.end(), e2.begin(), e2.end());
                    rejected += !all.empty();
                    classified += has_kind(all, ValidationErrorKind::FrameOrderViolation) ||
                                  has_kind(all, ValidationErrorKind::ChunkMismatch) ||
                                  has_kind(all, ValidationErrorKind::KeyframeToolMismatch) ||
                                  has_kind(all, ValidationErrorKind::EvidenceMismatch);
                    break;
                }
                case 2: { // chunk edit -> ChunkMismatch
                    CotRecord rec = pool[ridx].rec;
                    for (size_t i = 0; i < rec.target_tokens.size(); ++i) {
                        if (ctx.vocab.token_class(rec.target_tokens[i]) == TokenClass::Action) {
                            int prim = ctx.vocab.primitive_of(rec.target_tokens[i]);
                            rec.target_tokens[i] = ctx.vocab.action_id(
                                (prim + 1 + static_cast<int>(rng.next_below(kNumActionTokens - 1))) %
                                kNumActionTokens);
                            break;
                        }
                    }
                    auto errs = validate_trace(rec, demos[pool[ridx].demo_idx], ctx.vocab, gcfg,
                                               pool[ridx].prev_frame);
                    rejected += !errs.empty();
                    classified += has_kind(errs, ValidationErrorKind::ChunkMismatch);
                    break;
                }
                default: { // region shift -> RegionOutOfFrame / EvidenceMismatch
                    size_t tries = 0;
                    while (!pool[ridx].rec.is_keyframe && tries++ < pool.size()) {
                        ridx = (ridx + 1) % pool.size();
                    }
                    CotRecord rec = pool[ridx].rec;
                    int shift = rng.next_below(2) ? 4 + static_cast<int>(rng.next_below(5))
                                                  : 40 + static_cast<int>(rng.next_below(20));
                    rec.tool_region.x0 += shift;
                    rec.tool_region.x1 += shift;
                    bool representable = rec.tool_region.x1 <= kImageSize;
                    if (representable) {
                        for (size_t i = 0; i + 4 < rec.target_tokens.size(); ++i) {
                            if (rec.target_tokens[i] == kToolOpen) {
                                rec.target_tokens[i + 2] = ctx.vocab.coord_token(rec.tool_region.x0);
                                rec.target_tokens[i + 4] = ctx.vocab.coord_token(rec.tool_region.x1);
                                break;
                            }
                        }
                    }
                    auto errs = validate_trace(rec, demos[pool[ridx].demo_idx], ctx.vocab, gcfg,
                                               pool[ridx].prev_frame);
                    rejected += !errs.empty();
                    classified += representable
                                      ? (has_kind(errs, ValidationErrorKind::EvidenceMismatch) ||
                                         has_kind(errs, ValidationErrorKind::RegionOutOfFrame))
                                      : has_kind(errs, ValidationErrorKind::RegionOutOfFrame);
                    break;
                }
            }
        }
    }
    if (rejected != 1000 || classified != 1000) {
        fails += " mutation(" + std::to_string(rejected) + "/" + std::to_string(classified) + ")";
    }

    Outcome out;
    out.pass = fails.empty();
    out.detail = fails.empty()
                     ? std::to_string(demos_checked) + " demos recounted, " +
                           std::to_string(replayed) + " patches replayed, 1000/1000 mutants rejected"
                     : ("failed:" + fails);
    return out;
}

// ---------------------------------------------------------------------------
// criterion 7: SFT gate
// ---------------------------------------------------------------------------
Outcome criterion_sft_gate(Ctx& ctx) {
    const SftResult& sft = ctx.sft();
    std::string fails;
    if (ctx.rc.sft.epochs > 200) {
        fails += " epochs>200";
    }
    size_t corpus = std::min<size_t>(ctx.dataset().records.size(),
                                     ctx.rc.sft.max_records > 0
                                         ? static_cast<size_t>(ctx.rc.sft.max_records)
                                         : ctx.dataset().records.size());
    if (corpus < 512) {
        fails += " corpus<512";
    }
    double first = sft.reports.front().loss_total;
    double last = sft.reports.back().loss_total;
    if (!(last <= 0.5 * first)) {
        fails += " loss-halving";
    }
    EvalReport report = run_eval(sft.params, ctx.suite, ctx.vocab, ctx.grammar(), ctx.rc.budget,
                                 ctx.rc.eval_episodes);
    if (!(report.overall_success >= 0.60)) {
        fails += " success(" + format_double(report.overall_success) + ")";
    }
    if (!(report.ambiguous_tool_episodes >= 0.80)) {
        fails += " tool-emission(" + format_double(report.ambiguous_tool_episodes) + ")";
    }
    if (ctx.sft_seconds > 900.0) {
        fails += " runtime(" + format_double(ctx.sft_seconds) + "s)";
    }
    Outcome out;
    out.pass = fails.empty();
    out.detail = "corpus " + std::to_string(corpus) + ", loss " + format_double(first) + "->" +
                 format_double(last) + ", success " + format_double(report.overall_success) +
                 ", tool emission " + format_double(report.ambiguous_tool_episodes) + ", " +
                 format_double(ctx.sft_seconds) + "s" + (fails.empty() ? "" : (" |" + fails));
    return out;
}

// ---------------------------------------------------------------------------
// criterion 8: RL trend reproduction
// ---------------------------------------------------------------------------
Outcome criterion_rl_trends(Ctx& ctx) {
    const RlResult& rl = ctx.rl();
    std::string fails;
    if (static_cast<int>(rl.curves.size()) != ctx.rc.grpo.iterations ||
        ctx.rc.grpo.iterations != 200) {
        fails += " iterations";
    }
    std::vector<double> success, length;
    for (const auto& row : rl.curves) {
        success.push_back(row.mean_success);
        length.push_back(row.mean_response_len);
    }
    auto s_smooth = moving_mean(success, 10);
    auto l_smooth = moving_mean(length, 10);
    double s_first = s_smooth[9 < s_smooth.size() ? 9 : s_smooth.size() - 1];
    double s_last = s_smooth.back();
    double l_first = l_smooth[9 < l_smooth.size() ? 9 : l_smooth.size() - 1];
    double l_last = l_smooth.back();
    if (!(s_last - s_first >= 0.10)) {
        fails += " reward-trend(" + format_double(s_first) + "->" + format_double(s_last) + ")";
    }
    if (!(l_last <= l_first)) {
        fails += " length-trend(" + format_double(l_first) + "->" + format_double(l_last) + ")";
    }
    if (ctx.rl_seconds > 7200.0) {
        fails += " runtime";
    }
    Outcome out;
    out.pass = fails.empty();
    out.detail = "smoothed success " + format_double(s_first) + "->" + format_double(s_last) +
                 ", smoothed length " + format_double(l_first) + "->" + format_double(l_last) +
                 ", " + format_double(ctx.rl_seconds) + "s" + (fails.empty() ? "" : (" |" + fails));
    return out;
}

// ---------------------------------------------------------------------------
// criterion 9: ablation orderings
// ---------------------------------------------------------------------------
Outcome criterion_ablation(Ctx& ctx) {
    ctx.rl(); // ensure artifacts exist in the work dir
    AblationResult ab = cmd_ablation(ctx.rc, ctx.paths().out_dir);
    // tool ablation on the final policy
    PolicyParams rl_params = load_checkpoint(ctx.paths().rl_checkpoint(), ctx.policy_config(),
                                             policy_hash(ctx.rc, ctx.vocab));
    EvalReport no_tools = run_eval(rl_params, ctx.suite, ctx.vocab, ctx.grammar(), ctx.rc.budget,
                                   ctx.rc.eval_episodes, true);
    write_text_file(ctx.paths().out_dir + "/eval_report_no_tools.jsonl",
                    eval_report_jsonl(no_tools));

    std::string fails;
    double with_tools = ab.sft_rl.ambiguous_success;
    double without = no_tools.ambiguous_success;
    if (!(ab.sft_rl.overall_success >= ab.sft_only.overall_success + 0.02)) {
        fails += " sft-margin(" + format_double(ab.sft_rl.overall_success) + " vs " +
                 format_double(ab.sft_only.overall_success) + ")";
    }
    if (!(ab.sft_rl.overall_success > ab.rl_scratch.overall_success + 0.02)) {
        fails += " scratch-margin(" + format_double(ab.rl_scratch.overall_success) + ")";
    }
    if (!(with_tools - without >= 0.10)) {
        fails += " tool-margin(" + format_double(with_tools) + " vs " + format_double(without) + ")";
    }
    Outcome out;
    out.pass = fails.empty();
    out.detail = "sft " + format_double(ab.sft_only.overall_success) + ", sft+rl " +
                 format_double(ab.sft_rl.overall_success) + ", scratch " +
                 format_double(ab.rl_scratch.overall_success) + ", tools " +
                 format_double(with_tools) + " vs no-tools " + format_double(without) +
                 (fails.empty() ? "" : (" |" + fails));
    return out;
}

// ---------------------------------------------------------------------------
// criterion 10: end-to-end determinism
// ---------------------------------------------------------------------------
Outcome criterion_determinism(Ctx& ctx) {
    RunConfig rc = determinism_config();
    EvalReport r1 = run_pipeline(rc, ctx.work_dir + "/det_a");
    EvalReport r2 = run_pipeline(rc, ctx.work_dir + "/det_b");
    std::string b1 = read_text_file(ctx.work_dir + "/det_a/eval_report.jsonl");
    std::string b2 = read_text_file(ctx.work_dir + "/det_b/eval_report.jsonl");
    Outcome out;
    out.pass = b1 == b2 && !b1.empty();
    out.detail = out.pass ? "two pipeline runs byte-identical (" +
                                std::to_string(b1.size()) + " bytes)"
                          : "reports differ";
    (void)r1;
    (void)r2;
    return out;
}

} // namespace

int main(int argc, char** argv) {
    Ctx ctx;
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--work-dir") == 0 && i + 1 < argc) {
            ctx.work_dir = argv[++i];
        } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::string list = argv[++i];
            size_t pos = 0;
            while (pos < list.size()) {
                size_t c = list.find(',', pos);
                only.insert(std::stoi(list.substr(pos, c - pos)));
                if (c == std::string::npos) {
                    break;
                }
                pos = c + 1;
            }
        }
    }
    std::filesystem::create_directories(ctx.work_dir);

    struct Criterion {
        int number;
        const char* name;
        std::function<Outcome(Ctx&)> run;
    };
    std::vector<Criterion> criteria = {
        {1, "grammar oracle agreement + round trip", criterion_grammar},
        {2, "gradient exactness vs finite differences", criterion_gradients},
        {3, "total-probability normalization", criterion_normalization},
        {4, "GRPO algebra", criterion_grpo_algebra},
        {5, "KL properties + high-beta pinning", criterion_kl},
        {6, "CoT pipeline exactness", criterion_cot},
        {7, "SFT cold-start gate", criterion_sft_gate},
        {8, "RL trend reproduction", criterion_rl_trends},
        {9, "ablation orderings", criterion_ablation},
        {10, "end-to-end determinism", criterion_determinism},
    };

    int failures = 0;
    for (auto& c : criteria) {
        if (!only.empty() && !only.count(c.number)) {
            continue;
        }
        auto t0 = Clock::now();
        Outcome out;
        try {
            out = c.run(ctx);
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        double dt = seconds_since(t0);
        std::printf("%s  %2d. %-42s %8.1fs  %s\n", out.pass ? "PASS" : "FAIL", c.number, c.name,
                    dt, out.detail.c_str());
        std::fflush(stdout);
        failures += !out.pass;
    }
    return failures == 0 ? 0 : 1;
}
