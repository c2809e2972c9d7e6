// Command-line pipeline for the thinking-with-image manipulation stack:
// dataset synthesis, cold-start SFT, GRPO reinforcement learning, seeded
// evaluation with tier breakdown, stage ablations, curve export, and
// trajectory rollout/replay.

#include "CLI11.hpp"

#include "zoomvla/harness.hpp"

#include <cstdio>
#include <iostream>

using namespace zoomvla;

namespace {

// Distinct exit codes per failure family; stderr carries one JSON error
// record for machine consumption.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kIoError = 3,
    kValidationError = 4,
    kCheckpointError = 5,
    kNumericalError = 6,
    kMetricsError = 7,
};

int fail(int code, const char* kind, const std::string& message) {
    ojson j;
    j["error"] = kind;
    j["message"] = message;
    std::cerr << j.dump() << "\n";
    return code;
}

RunConfig load_config(const std::string& path, uint64_t seed_override, bool seed_set) {
    RunConfig rc;
    if (!path.empty()) {
        rc = config_from_json(ojson::parse(read_text_file(path)));
    }
    if (seed_set) {
        rc.seed = seed_override;
    }
    return rc;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"thinking-with-image manipulation training stack"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs/default";
    uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "global seed override")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* synth = app.add_subcommand("synth", "synthesize the cold-start dataset");
    auto* sft = app.add_subcommand("sft", "cold-start supervised fine-tuning");
    auto* rl = app.add_subcommand("rl", "GRPO reinforcement learning from the SFT checkpoint");
    auto* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
    std::string eval_checkpoint;
    bool no_tools = false;
    int eval_n = -1;
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file (default: rl checkpoint)");
    eval->add_flag("--no-tools", no_tools, "replace every tool execution with the error marker");
    eval->add_option("-n,--episodes", eval_n, "episodes per task");
    auto* ablate = app.add_subcommand("ablate", "train and compare stage variants");
    auto* curves = app.add_subcommand("curves", "export tidy plot data from a run directory");
    std::string curves_dir;
    curves->add_option("--run-dir", curves_dir, "run directory with rl_curves.csv");
    auto* rollout = app.add_subcommand("rollout", "dump greedy trajectories or replay a dump");
    std::string rollout_task = "pick_marked_red";
    std::string replay_path;
    int rollout_n = 5;
    std::string rollout_checkpoint;
    rollout->add_option("--task", rollout_task, "task id");
    rollout->add_option("-n,--episodes", rollout_n, "episodes to dump");
    rollout->add_option("--checkpoint", rollout_checkpoint, "checkpoint (default: rl checkpoint)");
    rollout->add_option("--replay", replay_path, "verify a trajectory dump instead of rolling out");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig rc = load_config(config_path, seed, seed_set);
        PipelinePaths paths{out_dir};
        Vocabulary vocab = Vocabulary::default_vocab();
        auto suite = default_task_suite();

        if (synth->parsed()) {
            if (rc.demos_per_task <= 0) {
                Dataset empty;
                write_dataset(paths.dataset(), empty);
                write_text_file(paths.stats(), stats_to_json(empty.stats).dump(2) + "\n");
                std::cout << "warning: demos_per_task <= 0, wrote an empty dataset\n";
                return kOk;
            }
            Dataset ds = cmd_synth(rc, paths, suite, vocab);
            std::cout << "dataset: " << ds.records.size() << " records ("
                      << ds.stats.total_keyframes << " keyframe, " << ds.stats.total_intermediate
                      << " intermediate) -> " << paths.dataset() << "\n";
            return kOk;
        }
        if (sft->parsed()) {
            SftResult result = cmd_sft(rc, paths, suite, vocab);
            if (result.aborted) {
                return fail(kNumericalError, "NumericalFault", "SFT aborted; last checkpoint kept");
            }
            std::cout << "sft: " << result.reports.size() << " epochs, final loss "
                      << format_double(result.reports.back().loss_total) << " -> "
                      << paths.sft_checkpoint() << "\n";
            return kOk;
        }
        if (rl->parsed()) {
            RlResult result = cmd_rl(rc, paths, suite, vocab);
            if (result.aborted) {
                return fail(kNumericalError, "NumericalFault", "RL aborted; last checkpoint kept");
            }
            std::cout << "rl: " << result.curves.size() << " iterations,"
                      << " final mean reward "
                      << format_double(result.curves.empty() ? 0.0 : result.curves.back().mean_reward)
                      << " -> " << paths.rl_checkpoint() << "\n";
            return kOk;
        }
        if (eval->parsed()) {
            if (eval_n > 0) {
                rc.eval_episodes = eval_n;
            }
            std::string ckpt = eval_checkpoint.empty() ? paths.rl_checkpoint() : eval_checkpoint;
            std::string report_path = out_dir + (no_tools ? "/eval_report_no_tools.jsonl"
                                                          : "/eval_report.jsonl");
            EvalReport report = cmd_eval(rc, ckpt, report_path, suite, vocab, no_tools);
            std::cout << "eval: overall success " << format_double(report.overall_success)
                      << " over " << report.episodes << " episodes -> " << report_path << "\n";
            return kOk;
        }
        if (ablate->parsed()) {
            AblationResult ab = cmd_ablation(rc, out_dir);
            std::cout << ablation_csv(ab);
            return kOk;
        }
        if (curves->parsed()) {
            std::string dir = curves_dir.empty() ? out_dir : curves_dir;
            CsvTable t = parse_csv(read_text_file(dir + "/rl_curves.csv"));
            write_text_file(dir + "/rl_curves_long.csv", curves_long_format(t));
            std::cout << "curves: wrote " << dir + "/rl_curves_long.csv" << "\n";
            return kOk;
        }
        if (rollout->parsed()) {
            if (!replay_path.empty()) {
                int failures = 0, episodes = 0;
                for (const auto& line : split_lines(read_text_file(replay_path))) {
                    if (line.empty()) {
                        continue;
                    }
                    ReplayOutcome outcome = replay_trajectory(ojson::parse(line), suite);
                    ++episodes;
                    if (!outcome.ok) {
                        ++failures;
                        std::cout << "replay mismatch: " << outcome.detail << "\n";
                    }
                }
                std::cout << "replay: " << (episodes - failures) << "/" << episodes << " verified\n";
                return failures == 0 ? kOk : kValidationError;
            }
            const TaskSpec* task = find_task(suite, rollout_task);
            if (!task) {
                return fail(kConfigError, "ConfigError", "unknown task " + rollout_task);
            }
            std::string ckpt = rollout_checkpoint.empty() ? paths.rl_checkpoint() : rollout_checkpoint;
            PolicyParams params = load_checkpoint(ckpt, make_policy_config(rc, vocab), policy_hash(rc, vocab));
            NetPolicy policy{&params};
            ToolRegistry registry = ToolRegistry::with_zoom();
            GrammarConfig gcfg = make_grammar_config(rc);
            LoopOptions opts;
            std::string dump;
            for (int s = 0; s < rollout_n; ++s) {
                auto traj = rollout_episode(policy, *task, static_cast<uint64_t>(s), registry,
                                            vocab, gcfg, rc.budget, opts, 0);
                dump += trajectory_to_json(traj).dump() + "\n";
            }
            std::string path = out_dir + "/trajectories.jsonl";
            write_text_file(path, dump);
            std::cout << "rollout: wrote " << rollout_n << " episodes -> " << path << "\n";
            return kOk;
        }
    } catch (const ConfigError& e) {
        return fail(kConfigError, "ConfigError", e.what());
    } catch (const CheckpointMismatch& e) {
        return fail(kCheckpointError, "CheckpointMismatch", e.what());
    } catch (const ValidationAbort& e) {
        return fail(kValidationError, "ValidationAbort", e.what());
    } catch (const MissingMetrics& e) {
        return fail(kMetricsError, "MissingMetrics", e.what());
    } catch (const NumericalFault& e) {
        return fail(kNumericalError, "NumericalFault", e.what());
    } catch (const IoError& e) {
        return fail(kIoError, "IoError", e.what());
    } catch (const std::exception& e) {
        return fail(kIoError, "Error", e.what());
    }
    return kOk;
}
