#pragma once

// Cold-start dataset synthesis from scripted-expert demonstrations. Keyframes
// are the gripper open/close transitions; they get a full reasoning template
// with a justified zoom call and a marking-confirming second thought, while
// intermediate frames get text-only progress reasoning. Every record passes
// strict format validation and temporal-consistency checks before it is
// written; evidence patches are stored by (frame, region) reference plus a
// pixel hash so replays are exactly checkable.

#include <string>
#include <vector>

#include "json.hpp"

#include "env.hpp"
#include "loop.hpp"
#include "policy.hpp"
#include "trace.hpp"
#include "util.hpp"
#include "vocab.hpp"
#include "zoom.hpp"

namespace zoomvla {

using ojson = nlohmann::ordered_json;

struct TargetOffscreen : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DemoStep {
    int frame_id = 0;
    EnvState state_before;
    Observation obs_before;
    ActionChunk chunk;
    bool gripper_closed_after = false;
    ExpertPlan plan;
};

struct Demonstration {
    std::string task_id;
    uint64_t seed = 0;
    std::vector<DemoStep> steps;
    bool success = false;
};

/// Runs the scripted expert through the environment, recording frames.
inline Demonstration run_demo(const TaskSpec& task, uint64_t seed) {
    Demonstration demo;
    demo.task_id = task.id;
    demo.seed = seed;
    auto [state, obs] = reset(task, seed);
    ExpertResult plan = scripted_expert(state, task);
    EnvState s = state;
    Observation o = obs;
    for (size_t i = 0; i < plan.steps.size(); ++i) {
        DemoStep ds;
        ds.frame_id = static_cast<int>(i);
        ds.state_before = s;
        ds.obs_before = o;
        ds.chunk = plan.steps[i].chunk;
        ds.plan = plan.steps[i].plan;
        auto res = step(s, task, ds.chunk);
        s = res.state;
        o = res.obs;
        ds.gripper_closed_after = s.gripper_closed;
        demo.steps.push_back(std::move(ds));
        if (res.done) {
            demo.success = res.success == 1;
            break;
        }
    }
    return demo;
}

/// Exactly the indices i > 0 where the gripper state changed at i.
inline std::vector<int> detect_keyframes(const std::vector<bool>& closed_timeline) {
    std::vector<int> out;
    for (size_t i = 1; i < closed_timeline.size(); ++i) {
        if (closed_timeline[i] != closed_timeline[i - 1]) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

inline std::vector<int> detect_keyframes(const Demonstration& demo) {
    std::vector<bool> timeline;
    timeline.reserve(demo.steps.size());
    for (const auto& s : demo.steps) {
        timeline.push_back(s.gripper_closed_after);
    }
    return detect_keyframes(timeline);
}

struct CotRecord {
    std::string task_id;
    uint64_t demo_seed = 0;
    int frame_id = 0;
    bool is_keyframe = false;
    std::vector<int> prompt_tokens; // instruction
    std::vector<int> target_tokens; // wire-form trace
    Region tool_region;             // keyframes only
    uint64_t evidence_hash = 0;     // zoomed-patch pixel hash, keyframes only
};

namespace detail {

inline std::string dir_word(int primitive) {
    switch (primitive) {
        case kActUp: return "go_up";
        case kActDown: return "go_down";
        case kActLeft: return "go_left";
        case kActRight: return "go_right";
    }
    return "";
}

inline Region dilated_cell_region(int cx, int cy) {
    return Region{cx * kCellPx - 2, cy * kCellPx - 2,
                  cx * kCellPx + kCellPx + 2, cy * kCellPx + kCellPx + 2};
}

inline std::vector<int> think_tokens(const Vocabulary& vocab, const std::vector<std::string>& words) {
    std::vector<int> out;
    out.push_back(kThinkOpen);
    for (const auto& w : words) {
        out.push_back(vocab.require(w));
    }
    out.push_back(kThinkClose);
    return out;
}

inline void append_action_tokens(std::vector<int>& out, const Vocabulary& vocab,
                                 const ActionChunk& chunk) {
    out.push_back(kActOpen);
    for (int prim : chunk) {
        out.push_back(vocab.action_id(prim));
    }
    out.push_back(kActClose);
    out.push_back(kEos);
}

inline void append_tool_tokens(std::vector<int>& out, const Vocabulary& vocab, const Region& r) {
    out.push_back(kToolOpen);
    out.push_back(vocab.zoom_name_token());
    out.push_back(vocab.coord_token(r.x0));
    out.push_back(vocab.coord_token(r.y0));
    out.push_back(vocab.coord_token(r.x1));
    out.push_back(vocab.coord_token(r.y1));
    out.push_back(kToolClose);
    out.push_back(kEvid);
}

} // namespace detail

/// Keyframe annotation: thought naming the subgoal, a zoom at the true
/// target's dilated bounding box, a marking-confirming thought that verbalizes
/// the goal cell and the terminal move plan, then the expert chunk.
inline CotRecord annotate_keyframe(const Demonstration& demo, int frame_id, const Vocabulary& vocab,
                                   const TaskSpec& task) {
    const DemoStep& ds = demo.steps[static_cast<size_t>(frame_id)];
    const ExpertPlan& plan = ds.plan;
    if (plan.phase == ExpertPlan::Phase::Move) {
        throw ValidationAbort(demo.task_id + ": keyframe without a toggle plan");
    }
    Region region = detail::dilated_cell_region(plan.zoom_cx, plan.zoom_cy);
    if (region.x0 < 0 || region.y0 < 0 || region.x1 > kImageSize || region.y1 > kImageSize) {
        throw TargetOffscreen(demo.task_id + ": zoom region clipped at frame " +
                              std::to_string(frame_id));
    }

    CotRecord rec;
    rec.task_id = demo.task_id;
    rec.demo_seed = demo.seed;
    rec.frame_id = frame_id;
    rec.is_keyframe = true;
    rec.prompt_tokens = task.instruction_tokens(vocab);
    rec.tool_region = region;
    rec.evidence_hash = zoom_in(ds.obs_before.image, region).pixels.content_hash();

    const bool grab = plan.phase == ExpertPlan::Phase::Grab;
    std::vector<std::string> think1;
    if (grab) {
        think1 = {plan.pair ? "two" : "pick", color_word(plan.goal_color),
                  "gx" + std::to_string(plan.goal_x), "gy" + std::to_string(plan.goal_y)};
    } else {
        think1 = {"place", color_word(plan.goal_color),
                  "gx" + std::to_string(plan.goal_x), "gy" + std::to_string(plan.goal_y)};
    }

    std::vector<std::string> think2;
    if (grab) {
        const SimObject* target = nullptr;
        for (const auto& o : ds.state_before.objects) {
            if (o.cx == plan.zoom_cx && o.cy == plan.zoom_cy && o.color == plan.goal_color) {
                target = &o;
            }
        }
        think2.push_back(target && target->marking == kDotB ? "dotb" : "dota");
    }
    think2.push_back("confirmed");
    think2.push_back("gx" + std::to_string(plan.zoom_cx));
    think2.push_back("gy" + std::to_string(plan.zoom_cy));
    if (plan.count > 0) {
        think2.push_back(detail::dir_word(plan.dir));
    }
    think2.push_back("r" + std::to_string(plan.count));
    think2.push_back(grab ? "grab" : "drop");

    auto& out = rec.target_tokens;
    auto t1 = detail::think_tokens(vocab, think1);
    out.insert(out.end(), t1.begin(), t1.end());
    detail::append_tool_tokens(out, vocab, region);
    auto t2 = detail::think_tokens(vocab, think2);
    out.insert(out.end(), t2.begin(), t2.end());
    detail::append_action_tokens(out, vocab, ds.chunk);
    return rec;
}

/// Intermediate annotation: a text-only progress thought plus the expert
/// chunk; never a tool call.
inline CotRecord annotate_intermediate(const Demonstration& demo, int frame_id,
                                       const Vocabulary& vocab, const TaskSpec& task) {
    const DemoStep& ds = demo.steps[static_cast<size_t>(frame_id)];
    const ExpertPlan& plan = ds.plan;
    CotRecord rec;
    rec.task_id = demo.task_id;
    rec.demo_seed = demo.seed;
    rec.frame_id = frame_id;
    rec.is_keyframe = false;
    rec.prompt_tokens = task.instruction_tokens(vocab);

    std::vector<std::string> think = {"toward", color_word(plan.goal_color),
                                      "gx" + std::to_string(plan.goal_x),
                                      "gy" + std::to_string(plan.goal_y),
                                      detail::dir_word(plan.dir)};
    auto t = detail::think_tokens(vocab, think);
    rec.target_tokens.insert(rec.target_tokens.end(), t.begin(), t.end());
    detail::append_action_tokens(rec.target_tokens, vocab, ds.chunk);
    return rec;
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

enum class ValidationErrorKind : uint8_t {
    FormatInvalid,
    KeyframeToolMismatch,
    ChunkMismatch,
    FrameOutOfBounds,
    FrameOrderViolation,
    RegionOutOfFrame,
    EvidenceMismatch,
};

struct ValidationError {
    ValidationErrorKind kind;
    std::string detail;
};

inline const char* validation_error_name(ValidationErrorKind k) {
    switch (k) {
        case ValidationErrorKind::FormatInvalid: return "FormatInvalid";
        case ValidationErrorKind::KeyframeToolMismatch: return "KeyframeToolMismatch";
        case ValidationErrorKind::ChunkMismatch: return "ChunkMismatch";
        case ValidationErrorKind::FrameOutOfBounds: return "FrameOutOfBounds";
        case ValidationErrorKind::FrameOrderViolation: return "FrameOrderViolation";
        case ValidationErrorKind::RegionOutOfFrame: return "RegionOutOfFrame";
        case ValidationErrorKind::EvidenceMismatch: return "EvidenceMismatch";
    }
    return "?";
}

/// Collects every violation; never short-circuits. prev_frame_id carries the
/// cross-record ordering constraint (-1 for the first record of a demo).
inline std::vector<ValidationError> validate_trace(const CotRecord& rec, const Demonstration& demo,
                                                   const Vocabulary& vocab, const GrammarConfig& gcfg,
                                                   int prev_frame_id = -1) {
    std::vector<ValidationError> errs;
    auto add = [&](ValidationErrorKind k, std::string d) {
        errs.push_back(ValidationError{k, std::move(d)});
    };

    // (a) grammar
    auto parsed = parse_trace(rec.target_tokens, vocab, gcfg);
    const Trace* trace = std::get_if<Trace>(&parsed);
    if (!trace) {
        const auto& e = std::get<ParseError>(parsed);
        add(ValidationErrorKind::FormatInvalid,
            std::string(parse_error_name(e.kind)) + " at " + std::to_string(e.position));
    }

    // (b) keyframe/tool consistency, against both the record flag and the
    // demo's actual transition set
    bool in_bounds = rec.frame_id >= 0 && rec.frame_id < static_cast<int>(demo.steps.size());
    if (!in_bounds) {
        add(ValidationErrorKind::FrameOutOfBounds, "frame " + std::to_string(rec.frame_id));
    }
    if (trace) {
        int tools = trace->tool_call_count();
        if (rec.is_keyframe && tools < 1) {
            add(ValidationErrorKind::KeyframeToolMismatch, "keyframe without tool call");
        }
        if (!rec.is_keyframe && tools != 0) {
            add(ValidationErrorKind::KeyframeToolMismatch, "intermediate with tool call");
        }
    }
    if (in_bounds) {
        auto keyframes = detect_keyframes(demo);
        bool is_transition = std::find(keyframes.begin(), keyframes.end(), rec.frame_id) != keyframes.end();
        if (is_transition != rec.is_keyframe) {
            add(ValidationErrorKind::KeyframeToolMismatch, "keyframe flag does not match timeline");
        }
    }

    // (c) temporal consistency
    if (prev_frame_id >= 0 && rec.frame_id < prev_frame_id) {
        add(ValidationErrorKind::FrameOrderViolation,
            std::to_string(rec.frame_id) + " after " + std::to_string(prev_frame_id));
    }
    if (trace && in_bounds) {
        const DemoStep& ds = demo.steps[static_cast<size_t>(rec.frame_id)];
        for (const auto& seg : trace->segments) {
            if (seg.kind == TraceSegment::Kind::Action) {
                ActionChunk chunk;
                for (int tok : seg.tokens) {
                    chunk.push_back(vocab.primitive_of(tok));
                }
                if (chunk != ds.chunk) {
                    add(ValidationErrorKind::ChunkMismatch, "action differs from expert chunk");
                }
            }
        }
        if (rec.is_keyframe) {
            const Region& r = rec.tool_region;
            bool region_ok = r.x0 >= 0 && r.y0 >= 0 && r.x1 <= kImageSize && r.y1 <= kImageSize &&
                             r.x0 < r.x1 && r.y0 < r.y1;
            if (!region_ok) {
                add(ValidationErrorKind::RegionOutOfFrame, "tool region outside frame");
            } else {
                uint64_t replay = zoom_in(ds.obs_before.image, r).pixels.content_hash();
                if (replay != rec.evidence_hash) {
                    add(ValidationErrorKind::EvidenceMismatch, "evidence does not replay");
                }
                // the trace's tool call must reference the same region
                for (const auto& seg : trace->segments) {
                    if (seg.kind == TraceSegment::Kind::ToolCall && !(seg.tool.region == r)) {
                        add(ValidationErrorKind::RegionOutOfFrame, "trace region differs from record");
                    }
                }
            }
        }
    }
    return errs;
}

// ---------------------------------------------------------------------------
// dataset build + IO
// ---------------------------------------------------------------------------

struct DatasetStats {
    struct PerTask {
        std::string task_id;
        std::string tier;
        int keyframe_records = 0;
        int intermediate_records = 0;
    };
    std::vector<PerTask> per_task;
    int total_keyframes = 0;
    int total_intermediate = 0;
    int demos = 0;
};

struct Dataset {
    std::vector<CotRecord> records;
    DatasetStats stats;
};

/// Expert -> annotate -> validate over the whole suite. Aborts on any
/// validation failure (that is a pipeline bug, not bad input).
inline Dataset build_dataset(const std::vector<TaskSpec>& suite, int demos_per_task,
                             const Vocabulary& vocab, const GrammarConfig& gcfg) {
    Dataset ds;
    for (const auto& task : suite) {
        DatasetStats::PerTask pt;
        pt.task_id = task.id;
        pt.tier = tier_name(task.tier);
        for (int d = 0; d < demos_per_task; ++d) {
            Demonstration demo = run_demo(task, static_cast<uint64_t>(d));
            if (!demo.success) {
                throw ValidationAbort(task.id + ": expert demo failed, seed " + std::to_string(d));
            }
            auto keyframes = detect_keyframes(demo);
            int prev_frame = -1;
            for (size_t f = 0; f < demo.steps.size(); ++f) {
                bool kf = std::find(keyframes.begin(), keyframes.end(), static_cast<int>(f)) !=
                          keyframes.end();
                CotRecord rec = kf ? annotate_keyframe(demo, static_cast<int>(f), vocab, task)
                                   : annotate_intermediate(demo, static_cast<int>(f), vocab, task);
                auto errs = validate_trace(rec, demo, vocab, gcfg, prev_frame);
                if (!errs.empty()) {
                    throw ValidationAbort(task.id + ": synthesized record failed validation: " +
                                          validation_error_name(errs[0].kind));
                }
                prev_frame = rec.frame_id;
                (kf ? pt.keyframe_records : pt.intermediate_records) += 1;
                ds.records.push_back(std::move(rec));
            }
            ds.stats.demos += 1;
        }
        ds.stats.total_keyframes += pt.keyframe_records;
        ds.stats.total_intermediate += pt.intermediate_records;
        ds.stats.per_task.push_back(std::move(pt));
    }
    return ds;
}

inline ojson record_to_json(const CotRecord& rec) {
    ojson j;
    j["task_id"] = rec.task_id;
    j["demo_seed"] = rec.demo_seed;
    j["frame_id"] = rec.frame_id;
    j["is_keyframe"] = rec.is_keyframe;
    j["prompt_tokens"] = rec.prompt_tokens;
    j["target_tokens"] = rec.target_tokens;
    if (rec.is_keyframe) {
        j["tool_region"] = {rec.tool_region.x0, rec.tool_region.y0, rec.tool_region.x1,
                            rec.tool_region.y1};
        j["evidence_hash"] = rec.evidence_hash;
    }
    return j;
}

inline CotRecord record_from_json(const ojson& j) {
    CotRecord rec;
    rec.task_id = j.at("task_id").get<std::string>();
    rec.demo_seed = j.at("demo_seed").get<uint64_t>();
    rec.frame_id = j.at("frame_id").get<int>();
    rec.is_keyframe = j.at("is_keyframe").get<bool>();
    rec.prompt_tokens = j.at("prompt_tokens").get<std::vector<int>>();
    rec.target_tokens = j.at("target_tokens").get<std::vector<int>>();
    if (rec.is_keyframe) {
        auto r = j.at("tool_region").get<std::vector<int>>();
        rec.tool_region = Region{r[0], r[1], r[2], r[3]};
        rec.evidence_hash = j.at("evidence_hash").get<uint64_t>();
    }
    return rec;
}

/// Line-delimited records.
inline void write_dataset(const std::string& path, const Dataset& ds) {
    std::string out;
    for (const auto& rec : ds.records) {
        out += record_to_json(rec).dump();
        out += '\n';
    }
    write_text_file(path, out);
}

inline std::vector<CotRecord> load_dataset(const std::string& path) {
    std::vector<CotRecord> records;
    for (const auto& line : split_lines(read_text_file(path))) {
        if (line.empty()) {
            continue;
        }
        records.push_back(record_from_json(ojson::parse(line)));
    }
    return records;
}

/// Demonstration dump: one line per step with a state summary, the executed
/// chunk, the post-chunk gripper flag, and the frame reference. Frames
/// themselves are reconstructable by re-running the deterministic env.
inline std::string demo_dump_jsonl(const Demonstration& demo) {
    std::string out;
    for (const auto& ds : demo.steps) {
        ojson j;
        j["task_id"] = demo.task_id;
        j["demo_seed"] = demo.seed;
        j["frame_id"] = ds.frame_id;
        ojson state;
        state["gripper"] = {ds.state_before.gripper_x, ds.state_before.gripper_y};
        state["gripper_closed"] = ds.state_before.gripper_closed;
        state["held_object"] = ds.state_before.held_object;
        ojson objs = ojson::array();
        for (const auto& o : ds.state_before.objects) {
            objs.push_back({{"id", o.id}, {"cell", {o.cx, o.cy}}, {"color", color_word(o.color)},
                            {"marking", o.marking == kDotA ? "dota" : "dotb"}, {"height", o.height}});
        }
        state["objects"] = objs;
        j["state"] = state;
        j["chunk"] = ds.chunk;
        j["gripper_closed_after"] = ds.gripper_closed_after;
        out += j.dump() + "\n";
    }
    return out;
}

inline ojson stats_to_json(const DatasetStats& stats) {
    ojson j;
    j["demos"] = stats.demos;
    j["total_keyframe_records"] = stats.total_keyframes;
    j["total_intermediate_records"] = stats.total_intermediate;
    ojson per_task = ojson::array();
    for (const auto& pt : stats.per_task) {
        ojson t;
        t["task_id"] = pt.task_id;
        t["tier"] = pt.tier;
        t["keyframe_records"] = pt.keyframe_records;
        t["intermediate_records"] = pt.intermediate_records;
        per_task.push_back(t);
    }
    j["per_task"] = per_task;
    return j;
}

// ---------------------------------------------------------------------------
// training-sequence materialization (shared by the SFT trainer)
// ---------------------------------------------------------------------------

/// Rebuilds the exact policy sequence the controller would have recorded for
/// a target trace: prompt, causal tokens, injected evidence features at
/// <evid>, parallel action slots. ACT_CLOSE and EOS live only in the wire
/// form.
inline PolicySequence build_training_sequence(const Vocabulary& vocab, const GrammarConfig& gcfg,
                                              const std::vector<int>& instr,
                                              const Observation& obs,
                                              const std::vector<int>& wire_tokens,
                                              const std::vector<std::vector<double>>& evid_feats) {
    PolicySequence seq = make_prompt(instr, obs);
    size_t evid_idx = 0;
    size_t i = 0;
    const size_t n = wire_tokens.size();
    while (i < n) {
        int tok = wire_tokens[i];
        if (tok == kEvid) {
            if (evid_idx >= evid_feats.size()) {
                throw ValidationAbort("evidence features missing for <evid>");
            }
            seq_push_feat(seq, InputKind::Evid, evid_feats[evid_idx]);
            ++evid_idx;
            ++i;
            continue;
        }
        if (tok == kActOpen) {
            seq_push_token(seq, tok, true);
            ++i;
            for (int k = 0; k < gcfg.chunk_len && i < n; ++k, ++i) {
                seq_push_action_slot(seq, wire_tokens[i], 0);
            }
            // skip </act> <eos>
            i = n;
            break;
        }
        seq_push_token(seq, tok, true);
        ++i;
    }
    return seq;
}

/// A dataset record made ready for training: the full sequence with targets.
struct TrainingItem {
    PolicySequence seq;
    bool is_keyframe = false;
    std::string task_id;
};

/// Re-simulates the demos behind the records (the frame store is the
/// deterministic environment itself) and materializes training sequences.
inline std::vector<TrainingItem> materialize_dataset(const std::vector<CotRecord>& records,
                                                     const std::vector<TaskSpec>& suite,
                                                     const Vocabulary& vocab,
                                                     const GrammarConfig& gcfg) {
    std::vector<TrainingItem> items;
    items.reserve(records.size());
    std::string cur_task;
    uint64_t cur_seed = 0;
    Demonstration demo;
    for (const auto& rec : records) {
        if (rec.task_id != cur_task || rec.demo_seed != cur_seed || demo.steps.empty()) {
            const TaskSpec* task = find_task(suite, rec.task_id);
            if (!task) {
                throw ValidationAbort("dataset references unknown task " + rec.task_id);
            }
            demo = run_demo(*task, rec.demo_seed);
            cur_task = rec.task_id;
            cur_seed = rec.demo_seed;
        }
        if (rec.frame_id < 0 || rec.frame_id >= static_cast<int>(demo.steps.size())) {
            throw ValidationAbort("dataset frame out of bounds");
        }
        const DemoStep& ds = demo.steps[static_cast<size_t>(rec.frame_id)];
        std::vector<std::vector<double>> evid_feats;
        if (rec.is_keyframe) {
            auto patch = zoom_in(ds.obs_before.image, rec.tool_region);
            if (patch.pixels.content_hash() != rec.evidence_hash) {
                throw ValidationAbort("evidence hash mismatch during materialization");
            }
            evid_feats.push_back(detail::patch_features(patch));
        }
        TrainingItem item;
        item.seq = build_training_sequence(vocab, gcfg, rec.prompt_tokens, ds.obs_before,
                                           rec.target_tokens, evid_feats);
        item.is_keyframe = rec.is_keyframe;
        item.task_id = rec.task_id;
        items.push_back(std::move(item));
    }
    return items;
}

} // namespace zoomvla
