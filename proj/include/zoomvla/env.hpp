#pragma once

// MiniManip: deterministic toy manipulation world on a 12x12 cell grid,
// rendered to a 48x48 RGB image (4 px per cell). Objects carry a color and a
// one-pixel marking (dota / dotb) that is invisible at the policy's pooled
// input resolution but resolvable after a zoom. Ambiguous tasks spawn two
// same-color candidates side by side differing only in marking, so telling
// them apart requires the zoom tool.
//
// Layout discipline: task objects spawn on a 3x3 lattice of anchor sites
// spaced 4 cells apart, the gripper spawns on lattice sites too, and the
// ambiguous twin sits one cell right of its anchor. All expert routes are
// x-first; whole-axis distances are multiples of 4 except for a +-1 pair
// offset which the expert folds into the final grab/drop chunk.

#include <algorithm>
#include <array>
#include <cassert>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "image.hpp"
#include "rng.hpp"
#include "trace.hpp"
#include "vocab.hpp"

namespace zoomvla {

inline constexpr int kGridSize = 12;
inline constexpr int kCellPx = 4;
inline constexpr int kImageSize = kGridSize * kCellPx; // 48
inline constexpr int kChunkLen = 4;
inline constexpr int kNumColors = 8;
inline constexpr int kProprioDim = 28; // onehot x + onehot y + x,y scalars + closed + holding

enum Marking : int { kDotA = 0, kDotB = 1 };

enum Color : int {
    kRed = 0, kGreen = 1, kBlue = 2, kYellow = 3,
    kCyan = 4, kMagenta = 5, kOrange = 6, kWhite = 7,
};

inline const char* color_word(int c) {
    static const char* names[kNumColors] = {"red", "green", "blue", "yellow",
                                            "cyan", "magenta", "orange", "white"};
    return names[c];
}

inline std::array<uint8_t, 3> color_rgb(int c) {
    static const std::array<uint8_t, 3> rgb[kNumColors] = {
        {220, 40, 40}, {40, 200, 60}, {50, 90, 230}, {230, 220, 50},
        {40, 210, 210}, {210, 60, 210}, {240, 140, 40}, {235, 235, 235},
    };
    return rgb[c];
}

enum class HorizonTier : int { Short = 0, Medium = 1, Long = 2, ExtraLong = 3 };

inline const char* tier_name(HorizonTier t) {
    switch (t) {
        case HorizonTier::Short: return "short";
        case HorizonTier::Medium: return "medium";
        case HorizonTier::Long: return "long";
        case HorizonTier::ExtraLong: return "extra_long";
    }
    return "?";
}

inline int tier_max_steps(HorizonTier t) {
    static const int caps[4] = {12, 24, 48, 96};
    return caps[static_cast<int>(t)];
}

struct SimObject {
    int id = 0;
    int cx = 0, cy = 0;
    int color = 0;
    int marking = kDotA;
    int height = 0; // 0 on the ground, 1 stacked on the ground object

    bool operator==(const SimObject&) const = default;
};

/// One pick(-place) stage of a task. dest_color < 0 means the leg ends with
/// the target held (a pure pick).
struct TaskLeg {
    int target_color = 0;
    int target_marking = -1; // -1: any marking (unambiguous leg)
    int dest_color = -1;
};

struct TaskSpec {
    std::string id;
    HorizonTier tier = HorizonTier::Short;
    int max_steps = 12;
    std::vector<TaskLeg> legs;
    std::vector<std::string> instruction_words;
    bool ambiguous = false; // some leg requires marking disambiguation

    std::vector<int> instruction_tokens(const Vocabulary& vocab) const {
        return vocab.encode(instruction_words);
    }
};

struct InvalidTask : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SteppedAfterDone : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EnvState {
    int grid_size = kGridSize;
    int gripper_x = 0, gripper_y = 0;
    bool gripper_closed = false;
    int held_object = -1;
    std::vector<SimObject> objects;
    int step_count = 0;
    int max_steps = 12;
    uint64_t rng_seed = 0;
    bool done = false;
    bool success = false;

    bool operator==(const EnvState&) const = default;

    const SimObject* object_by_id(int id) const {
        for (const auto& o : objects) {
            if (o.id == id) {
                return &o;
            }
        }
        return nullptr;
    }

    /// Topmost grid object at a cell, ignoring the held object. -1 if none.
    int top_object_at(int cx, int cy) const {
        int best = -1, best_h = -1;
        for (const auto& o : objects) {
            if (o.id != held_object && o.cx == cx && o.cy == cy && o.height > best_h) {
                best = o.id;
                best_h = o.height;
            }
        }
        return best;
    }

    int objects_at(int cx, int cy) const {
        int n = 0;
        for (const auto& o : objects) {
            n += (o.id != held_object && o.cx == cx && o.cy == cy);
        }
        return n;
    }
};

struct Observation {
    Image image;
    std::vector<double> proprio; // kProprioDim features

    bool operator==(const Observation&) const = default;
};

using ActionChunk = std::vector<int>; // kChunkLen primitive indices (ActionToken)

// --------------------------------------------------------------------------
// success predicate
// --------------------------------------------------------------------------

inline bool object_matches(const SimObject& o, int color, int marking) {
    return o.color == color && (marking < 0 || o.marking == marking);
}

inline bool leg_satisfied(const EnvState& s, const TaskLeg& leg) {
    if (leg.dest_color < 0) {
        if (s.held_object < 0) {
            return false;
        }
        const SimObject* held = s.object_by_id(s.held_object);
        return held && object_matches(*held, leg.target_color, leg.target_marking);
    }
    for (const auto& a : s.objects) {
        if (a.id == s.held_object || !object_matches(a, leg.target_color, leg.target_marking)) {
            continue;
        }
        for (const auto& b : s.objects) {
            if (b.id == a.id || b.id == s.held_object || b.color != leg.dest_color) {
                continue;
            }
            if (a.cx == b.cx && a.cy == b.cy && a.height == b.height + 1) {
                return true;
            }
        }
    }
    return false;
}

inline bool task_success(const EnvState& s, const TaskSpec& task) {
    for (const auto& leg : task.legs) {
        if (!leg_satisfied(s, leg)) {
            return false;
        }
    }
    return true;
}

// --------------------------------------------------------------------------
// rendering
// --------------------------------------------------------------------------

inline Image render(const EnvState& s) {
    Image img(kImageSize, kImageSize);
    img.fill_rect(0, 0, kImageSize, kImageSize, 24, 24, 28);
    auto draw_object = [&](const SimObject& o, int cx, int cy) {
        auto rgb = color_rgb(o.color);
        int px = cx * kCellPx, py = cy * kCellPx;
        img.fill_rect(px, py, px + kCellPx, py + kCellPx, rgb[0], rgb[1], rgb[2]);
        // Marking dot: one dark pixel at a marking-specific sub-cell offset.
        int dx = 1, dy = (o.marking == kDotA) ? 1 : 2;
        img.set_pixel(px + dx, py + dy, 12, 12, 12);
    };
    for (int height = 0; height <= 1; ++height) {
        for (const auto& o : s.objects) {
            if (o.id != s.held_object && o.height == height) {
                draw_object(o, o.cx, o.cy);
            }
        }
    }
    if (s.held_object >= 0) {
        const SimObject* held = s.object_by_id(s.held_object);
        if (held) {
            draw_object(*held, s.gripper_x, s.gripper_y);
        }
    }
    // Gripper: four bright corner pixels of its cell, drawn on top.
    int px = s.gripper_x * kCellPx, py = s.gripper_y * kCellPx;
    for (auto [ox, oy] : {std::pair{0, 0}, std::pair{3, 0}, std::pair{0, 3}, std::pair{3, 3}}) {
        img.set_pixel(px + ox, py + oy, 230, 230, 230);
    }
    return img;
}

inline std::vector<double> proprio_features(const EnvState& s) {
    std::vector<double> f(kProprioDim, 0.0);
    f[static_cast<size_t>(s.gripper_x)] = 1.0;
    f[static_cast<size_t>(kGridSize + s.gripper_y)] = 1.0;
    f[24] = s.gripper_x / 11.0;
    f[25] = s.gripper_y / 11.0;
    f[26] = s.gripper_closed ? 1.0 : 0.0;
    f[27] = s.held_object >= 0 ? 1.0 : 0.0;
    return f;
}

inline Observation observe(const EnvState& s) {
    return Observation{render(s), proprio_features(s)};
}

// --------------------------------------------------------------------------
// reset: seeded layout generation
// --------------------------------------------------------------------------

// Anchor sites: x, y in {1, 5, 9}. The ambiguous twin occupies (x+1, y).
inline const std::vector<std::pair<int, int>>& lattice_sites() {
    static const std::vector<std::pair<int, int>> sites = [] {
        std::vector<std::pair<int, int>> v;
        for (int y : {1, 5, 9}) {
            for (int x : {1, 5, 9}) {
                v.emplace_back(x, y);
            }
        }
        return v;
    }();
    return sites;
}

namespace detail {

struct LayoutPlan {
    EnvState state;
    // Per leg: object id of the true target and, for ambiguous legs, the twin.
    std::vector<int> leg_target_ids;
    std::vector<int> leg_twin_ids;
    std::vector<int> leg_dest_ids;
};

/// Expert path length in primitive steps for a layout; used by reset to keep
/// every generated episode solvable within its tier budget.
int expert_primitive_steps(const LayoutPlan& plan, const TaskSpec& task);

inline void validate_task(const TaskSpec& task) {
    if (task.legs.empty()) {
        throw InvalidTask(task.id + ": task has no legs");
    }
    std::vector<int> used;
    for (const auto& leg : task.legs) {
        if (leg.target_color < 0 || leg.target_color >= kNumColors ||
            (leg.dest_color >= kNumColors)) {
            throw InvalidTask(task.id + ": color out of palette");
        }
        if (leg.target_marking > kDotB) {
            throw InvalidTask(task.id + ": bad marking");
        }
        for (int c : used) {
            if (c == leg.target_color || (leg.dest_color >= 0 && c == leg.dest_color)) {
                throw InvalidTask(task.id + ": colors must be distinct across legs");
            }
        }
        used.push_back(leg.target_color);
        if (leg.dest_color >= 0) {
            used.push_back(leg.dest_color);
        }
        if (leg.dest_color >= 0 && leg.dest_color == leg.target_color) {
            throw InvalidTask(task.id + ": target and destination share a color");
        }
    }
    for (size_t i = 1; i < task.legs.size(); ++i) {
        if ((task.legs[i].dest_color < 0) != (task.legs[0].dest_color < 0)) {
            throw InvalidTask(task.id + ": pick legs cannot mix with place legs");
        }
        if (task.legs[i].dest_color < 0) {
            throw InvalidTask(task.id + ": only a single pick leg is supported");
        }
    }
}

inline LayoutPlan sample_layout(const TaskSpec& task, uint64_t seed, int attempt) {
    Rng rng = substream(fnv1a64(task.id), "layout", seed, static_cast<uint64_t>(attempt));
    LayoutPlan plan;
    EnvState& s = plan.state;
    s.max_steps = task.max_steps;
    s.rng_seed = seed;

    auto sites = lattice_sites();
    rng.shuffle(sites);
    size_t next_site = 0;
    auto take_site = [&]() {
        assert(next_site < sites.size());
        return sites[next_site++];
    };

    // Gripper first.
    auto [gx, gy] = take_site();
    s.gripper_x = gx;
    s.gripper_y = gy;

    int next_id = 0;
    auto add_object = [&](int x, int y, int color, int marking) {
        s.objects.push_back(SimObject{next_id, x, y, color, marking, 0});
        return next_id++;
    };

    std::vector<bool> color_used(kNumColors, false);
    for (const auto& leg : task.legs) {
        auto [tx, ty] = take_site();
        color_used[static_cast<size_t>(leg.target_color)] = true;
        if (leg.target_marking >= 0) {
            // Ambiguity guarantee: twin of the same color, opposite marking,
            // one cell to the right; which side holds the true target is part
            // of the seeded randomness.
            bool target_left = rng.next_below(2) == 0;
            int other = leg.target_marking == kDotA ? kDotB : kDotA;
            int id_left = add_object(tx, ty, leg.target_color, target_left ? leg.target_marking : other);
            int id_right = add_object(tx + 1, ty, leg.target_color, target_left ? other : leg.target_marking);
            plan.leg_target_ids.push_back(target_left ? id_left : id_right);
            plan.leg_twin_ids.push_back(target_left ? id_right : id_left);
        } else {
            int marking = static_cast<int>(rng.next_below(2));
            plan.leg_target_ids.push_back(add_object(tx, ty, leg.target_color, marking));
            plan.leg_twin_ids.push_back(-1);
        }
        if (leg.dest_color >= 0) {
            auto [dx, dy] = take_site();
            color_used[static_cast<size_t>(leg.dest_color)] = true;
            plan.leg_dest_ids.push_back(add_object(dx, dy, leg.dest_color, static_cast<int>(rng.next_below(2))));
        } else {
            plan.leg_dest_ids.push_back(-1);
        }
    }

    // Distractors in unused colors on leftover sites.
    std::vector<int> free_colors;
    for (int c = 0; c < kNumColors; ++c) {
        if (!color_used[static_cast<size_t>(c)]) {
            free_colors.push_back(c);
        }
    }
    rng.shuffle(free_colors);
    int n_distractors = 1 + static_cast<int>(rng.next_below(2));
    for (int d = 0; d < n_distractors && next_site < sites.size() && d < static_cast<int>(free_colors.size()); ++d) {
        auto [x, y] = take_site();
        add_object(x, y, free_colors[static_cast<size_t>(d)], static_cast<int>(rng.next_below(2)));
    }
    return plan;
}

} // namespace detail

/// Deterministic seeded reset. Layouts are resampled (still deterministically)
/// until the scripted expert can finish within the tier budget and no leg
/// starts satisfied.
inline std::pair<EnvState, Observation> reset(const TaskSpec& task, uint64_t seed) {
    detail::validate_task(task);
    for (int attempt = 0; attempt < 64; ++attempt) {
        detail::LayoutPlan plan = detail::sample_layout(task, seed, attempt);
        if (task_success(plan.state, task)) {
            continue;
        }
        int steps = detail::expert_primitive_steps(plan, task);
        if (steps > task.max_steps - 1) {
            continue;
        }
        return {plan.state, observe(plan.state)};
    }
    throw InvalidTask(task.id + ": no solvable layout for seed " + std::to_string(seed));
}

// --------------------------------------------------------------------------
// step
// --------------------------------------------------------------------------

struct StepResult {
    EnvState state;
    Observation obs;
    bool done = false;
    int success = 0;
};

inline void apply_primitive(EnvState& s, int primitive) {
    switch (primitive) {
        case kActUp: s.gripper_y = std::max(0, s.gripper_y - 1); break;
        case kActDown: s.gripper_y = std::min(s.grid_size - 1, s.gripper_y + 1); break;
        case kActLeft: s.gripper_x = std::max(0, s.gripper_x - 1); break;
        case kActRight: s.gripper_x = std::min(s.grid_size - 1, s.gripper_x + 1); break;
        case kActToggle: {
            if (!s.gripper_closed) {
                int top = s.top_object_at(s.gripper_x, s.gripper_y);
                if (top >= 0) {
                    s.held_object = top;
                }
                s.gripper_closed = true; // closes even over empty air
            } else {
                if (s.held_object >= 0) {
                    int n = s.objects_at(s.gripper_x, s.gripper_y);
                    if (n <= 1) {
                        for (auto& o : s.objects) {
                            if (o.id == s.held_object) {
                                o.cx = s.gripper_x;
                                o.cy = s.gripper_y;
                                o.height = n; // ground if empty, stacked if one below
                            }
                        }
                        s.held_object = -1;
                        s.gripper_closed = false;
                    }
                    // A full cell (two objects) refuses the drop; the gripper
                    // keeps holding.
                } else {
                    s.gripper_closed = false;
                }
            }
            break;
        }
        case kActNoop: break;
        default: assert(false && "bad primitive");
    }
    // Held object tracks the gripper cell.
    if (s.held_object >= 0) {
        for (auto& o : s.objects) {
            if (o.id == s.held_object) {
                o.cx = s.gripper_x;
                o.cy = s.gripper_y;
            }
        }
    }
}

inline StepResult step(const EnvState& state, const TaskSpec& task, const ActionChunk& chunk) {
    if (state.done) {
        throw SteppedAfterDone(task.id + ": step() after episode end");
    }
    assert(static_cast<int>(chunk.size()) == kChunkLen);
    EnvState s = state;
    for (int primitive : chunk) {
        apply_primitive(s, primitive);
        s.step_count += 1;
        if (task_success(s, task)) {
            s.success = true;
            break; // episode ends the moment the predicate holds
        }
        if (s.step_count >= s.max_steps) {
            break;
        }
    }
    s.done = s.success || s.step_count >= s.max_steps;
    StepResult r;
    r.state = s;
    r.obs = observe(s);
    r.done = s.done;
    r.success = s.success ? 1 : 0;
    return r;
}

// --------------------------------------------------------------------------
// scripted expert
// --------------------------------------------------------------------------

/// Everything the annotation pipeline needs to know about one expert chunk.
struct ExpertPlan {
    enum class Phase : uint8_t { Move, Grab, Drop };
    Phase phase = Phase::Move;
    int goal_color = 0;     // color verbalized in the reasoning template
    int goal_x = 0, goal_y = 0; // anchor cell the leg navigates to
    int dir = -1;           // movement primitive for this chunk, -1 if none
    int count = 0;          // moves before the toggle (grab/drop) or 4 (move)
    int zoom_cx = -1, zoom_cy = -1; // true-target cell for the keyframe zoom
    bool pair = false;      // goal is an ambiguous side-by-side pair
    int target_marking = -1;
    int leg = 0;
};

struct ExpertStep {
    ActionChunk chunk;
    bool gripper_closed_after = false;
    ExpertPlan plan;
};

struct ExpertResult {
    std::vector<ExpertStep> steps;
    std::vector<bool> gripper_timeline; // closed-after per step
    bool success = false;
};

struct Unsolvable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline int first_unsatisfied_leg(const EnvState& s, const TaskSpec& task) {
    for (size_t i = 0; i < task.legs.size(); ++i) {
        if (!leg_satisfied(s, task.legs[i])) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

/// The true target object for a leg (unique by color+marking among ground
/// objects; ambiguous legs resolve by marking).
inline const SimObject* find_leg_target(const EnvState& s, const TaskLeg& leg) {
    for (const auto& o : s.objects) {
        if (object_matches(o, leg.target_color, leg.target_marking) && o.height == 0) {
            return &o;
        }
    }
    return nullptr;
}

inline const SimObject* find_leg_dest(const EnvState& s, const TaskLeg& leg) {
    for (const auto& o : s.objects) {
        if (o.id != s.held_object && o.color == leg.dest_color) {
            return &o;
        }
    }
    return nullptr;
}

/// Anchor cell a leg's approach navigates to: the pair's left cell for
/// ambiguous legs (the twin sits at anchor+1), the object cell otherwise.
inline std::pair<int, int> leg_anchor(const EnvState& s, const TaskLeg& leg, const SimObject& target) {
    if (leg.target_marking < 0) {
        return {target.cx, target.cy};
    }
    int ax = target.cx;
    for (const auto& o : s.objects) {
        if (o.id != target.id && o.color == leg.target_color && o.cy == target.cy &&
            (o.cx == target.cx - 1 || o.cx == target.cx + 1)) {
            ax = std::min(target.cx, o.cx);
        }
    }
    return {ax, target.cy};
}

} // namespace detail

/// Greedy x-first planner over ground-truth state. One call plans the next
/// chunk; returns false when the task is already satisfied.
inline bool expert_next_chunk(const EnvState& s, const TaskSpec& task, ExpertStep& out) {
    int leg_idx = detail::first_unsatisfied_leg(s, task);
    if (leg_idx < 0) {
        return false;
    }
    const TaskLeg& leg = task.legs[static_cast<size_t>(leg_idx)];
    ExpertPlan plan;
    plan.leg = leg_idx;
    plan.target_marking = leg.target_marking;

    const SimObject* held = s.held_object >= 0 ? s.object_by_id(s.held_object) : nullptr;
    bool carrying_leg_target = held && object_matches(*held, leg.target_color, leg.target_marking);

    int goal_x, goal_y;
    bool toggle_phase_is_grab;
    if (!carrying_leg_target) {
        if (held) {
            throw Unsolvable(task.id + ": expert holding an off-plan object");
        }
        const SimObject* target = detail::find_leg_target(s, leg);
        if (!target) {
            throw Unsolvable(task.id + ": leg target missing");
        }
        auto [ax, ay] = detail::leg_anchor(s, leg, *target);
        plan.goal_color = leg.target_color;
        plan.goal_x = ax;
        plan.goal_y = ay;
        plan.pair = leg.target_marking >= 0;
        plan.zoom_cx = target->cx;
        plan.zoom_cy = target->cy;
        // Final approach ends on the true target cell, not the anchor.
        goal_x = target->cx;
        goal_y = target->cy;
        toggle_phase_is_grab = true;
    } else {
        const SimObject* dest = detail::find_leg_dest(s, leg);
        if (!dest) {
            throw Unsolvable(task.id + ": leg destination missing");
        }
        plan.goal_color = leg.dest_color;
        plan.goal_x = dest->cx;
        plan.goal_y = dest->cy;
        plan.pair = false;
        plan.zoom_cx = dest->cx;
        plan.zoom_cy = dest->cy;
        goal_x = dest->cx;
        goal_y = dest->cy;
        toggle_phase_is_grab = false;
    }

    int dx = goal_x - s.gripper_x;
    int dy = goal_y - s.gripper_y;
    ActionChunk chunk;
    auto x_dir = [&] { return dx > 0 ? kActRight : kActLeft; };
    auto y_dir = [&] { return dy > 0 ? kActDown : kActUp; };

    if (std::abs(dx) >= kChunkLen) {
        plan.phase = ExpertPlan::Phase::Move;
        plan.dir = x_dir();
        plan.count = kChunkLen;
        chunk.assign(kChunkLen, plan.dir);
    } else if (std::abs(dx) + std::abs(dy) > kChunkLen - 1 || (dx != 0 && dy != 0)) {
        // x remainder is at most 3; finish y first so the terminal chunk
        // stays single-axis. On-plan y distances are multiples of 4; the
        // min() guard keeps off-lattice states from oscillating.
        plan.phase = ExpertPlan::Phase::Move;
        plan.dir = y_dir();
        plan.count = std::min(kChunkLen, std::abs(dy));
        chunk.assign(static_cast<size_t>(plan.count), plan.dir);
        while (static_cast<int>(chunk.size()) < kChunkLen) {
            chunk.push_back(kActNoop);
        }
    } else {
        // Terminal chunk: remaining single-axis moves plus the toggle.
        int moves = std::abs(dx) + std::abs(dy);
        plan.phase = toggle_phase_is_grab ? ExpertPlan::Phase::Grab : ExpertPlan::Phase::Drop;
        plan.dir = moves == 0 ? -1 : (dx != 0 ? x_dir() : y_dir());
        plan.count = moves;
        for (int i = 0; i < moves; ++i) {
            chunk.push_back(plan.dir);
        }
        chunk.push_back(kActToggle);
        while (static_cast<int>(chunk.size()) < kChunkLen) {
            chunk.push_back(kActNoop);
        }
    }
    out.chunk = chunk;
    out.plan = plan;
    return true;
}

inline ExpertResult scripted_expert(const EnvState& start, const TaskSpec& task) {
    ExpertResult result;
    EnvState s = start;
    if (task_success(s, task)) {
        result.success = true;
        return result; // degenerate: already satisfied, empty plan
    }
    const int step_cap = 2 * (task.max_steps / kChunkLen) + 8;
    for (int i = 0; i < step_cap; ++i) {
        ExpertStep es;
        if (!expert_next_chunk(s, task, es)) {
            break;
        }
        for (int primitive : es.chunk) {
            apply_primitive(s, primitive);
            if (task_success(s, task)) {
                break;
            }
        }
        es.gripper_closed_after = s.gripper_closed;
        result.steps.push_back(es);
        result.gripper_timeline.push_back(s.gripper_closed);
        if (task_success(s, task)) {
            result.success = true;
            return result;
        }
    }
    throw Unsolvable(task.id + ": expert exceeded its step cap");
}

namespace detail {

inline int expert_primitive_steps(const LayoutPlan& plan, const TaskSpec& task) {
    // Dry-run the expert on a copy; count primitives up to success.
    EnvState s = plan.state;
    if (task_success(s, task)) {
        return 0;
    }
    int primitives = 0;
    const int cap = 4 * tier_max_steps(HorizonTier::ExtraLong);
    try {
        while (primitives < cap) {
            ExpertStep es;
            if (!expert_next_chunk(s, task, es)) {
                return primitives;
            }
            for (int p : es.chunk) {
                apply_primitive(s, p);
                ++primitives;
                if (task_success(s, task)) {
                    return primitives;
                }
            }
        }
    } catch (const Unsolvable&) {
        return cap + 1;
    }
    return cap + 1;
}

} // namespace detail

// --------------------------------------------------------------------------
// default task suite (mirrors the four-tier / 4-4-2-2 split)
// --------------------------------------------------------------------------

inline TaskSpec make_pick_task(const std::string& id, int color, int marking) {
    TaskSpec t;
    t.id = id;
    t.tier = HorizonTier::Short;
    t.max_steps = tier_max_steps(t.tier);
    t.legs = {TaskLeg{color, marking, -1}};
    t.ambiguous = marking >= 0;
    if (marking >= 0) {
        t.instruction_words = {"pick", "the", marking == kDotA ? "dota" : "dotb", color_word(color), "block"};
    } else {
        t.instruction_words = {"pick", "the", color_word(color), "block"};
    }
    return t;
}

inline TaskSpec make_place_task(const std::string& id, HorizonTier tier,
                                std::vector<TaskLeg> legs) {
    TaskSpec t;
    t.id = id;
    t.tier = tier;
    t.max_steps = tier_max_steps(tier);
    t.legs = std::move(legs);
    t.instruction_words = {"place"};
    bool first = true;
    for (const auto& leg : t.legs) {
        if (!first) {
            t.instruction_words.push_back("and");
        }
        first = false;
        if (leg.target_marking >= 0) {
            t.ambiguous = true;
            t.instruction_words.push_back(leg.target_marking == kDotA ? "dota" : "dotb");
        }
        t.instruction_words.push_back(color_word(leg.target_color));
        t.instruction_words.push_back("on");
        t.instruction_words.push_back(color_word(leg.dest_color));
    }
    return t;
}

inline std::vector<TaskSpec> default_task_suite() {
    std::vector<TaskSpec> suite;
    // Short: four single-leg picks, two of them marking-ambiguous.
    suite.push_back(make_pick_task("pick_red", kRed, -1));
    suite.push_back(make_pick_task("pick_green", kGreen, -1));
    suite.push_back(make_pick_task("pick_marked_red", kRed, kDotA));
    suite.push_back(make_pick_task("pick_marked_green", kGreen, kDotB));
    // Medium: single pick-place legs.
    suite.push_back(make_place_task("place_red_on_blue", HorizonTier::Medium,
                                    {TaskLeg{kRed, -1, kBlue}}));
    suite.push_back(make_place_task("place_yellow_on_cyan", HorizonTier::Medium,
                                    {TaskLeg{kYellow, -1, kCyan}}));
    suite.push_back(make_place_task("place_marked_red_on_blue", HorizonTier::Medium,
                                    {TaskLeg{kRed, kDotA, kBlue}}));
    suite.push_back(make_place_task("place_marked_green_on_magenta", HorizonTier::Medium,
                                    {TaskLeg{kGreen, kDotB, kMagenta}}));
    // Long: two legs.
    suite.push_back(make_place_task("place_two", HorizonTier::Long,
                                    {TaskLeg{kRed, -1, kBlue}, TaskLeg{kGreen, -1, kYellow}}));
    suite.push_back(make_place_task("place_two_marked", HorizonTier::Long,
                                    {TaskLeg{kRed, kDotA, kBlue}, TaskLeg{kGreen, -1, kYellow}}));
    // Extra long: three legs.
    suite.push_back(make_place_task("place_three", HorizonTier::ExtraLong,
                                    {TaskLeg{kRed, -1, kBlue}, TaskLeg{kGreen, -1, kYellow},
                                     TaskLeg{kCyan, -1, kMagenta}}));
    suite.push_back(make_place_task("place_three_marked", HorizonTier::ExtraLong,
                                    {TaskLeg{kRed, kDotA, kBlue}, TaskLeg{kGreen, kDotB, kYellow},
                                     TaskLeg{kCyan, -1, kMagenta}}));
    return suite;
}

inline const TaskSpec* find_task(const std::vector<TaskSpec>& suite, const std::string& id) {
    for (const auto& t : suite) {
        if (t.id == id) {
            return &t;
        }
    }
    return nullptr;
}

} // namespace zoomvla
