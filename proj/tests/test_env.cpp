#include "doctest.h"

#include "zoomvla/env.hpp"
#include "zoomvla/zoom.hpp"

#include <map>
#include <set>

using namespace zoomvla;

namespace {

std::vector<std::tuple<int, int, int, int>> layout_signature(const EnvState& s) {
    std::vector<std::tuple<int, int, int, int>> sig;
    for (const auto& o : s.objects) {
        sig.emplace_back(o.cx, o.cy, o.color, o.marking);
    }
    sig.emplace_back(s.gripper_x, s.gripper_y, -1, -1);
    std::sort(sig.begin(), sig.end());
    return sig;
}

/// Independently recount primitives an expert episode uses, by stepping the
/// env with the expert chunks until done.
struct ExpertRun {
    int primitives = 0;
    int success = 0;
    std::vector<bool> closed_timeline;
};

ExpertRun run_expert_through_env(const TaskSpec& task, uint64_t seed) {
    auto [state, obs] = reset(task, seed);
    ExpertResult plan = scripted_expert(state, task);
    ExpertRun r;
    EnvState s = state;
    for (const auto& es : plan.steps) {
        auto res = step(s, task, es.chunk);
        s = res.state;
        r.closed_timeline.push_back(s.gripper_closed);
        if (res.done) {
            r.success = res.success;
            break;
        }
    }
    r.primitives = s.step_count;
    return r;
}

} // namespace

TEST_CASE("reset determinism: identical state and observation") {
    auto suite = default_task_suite();
    for (const auto& task : suite) {
        auto [s1, o1] = reset(task, 3);
        auto [s2, o2] = reset(task, 3);
        CHECK(s1 == s2);
        CHECK(o1 == o2);
    }
}

TEST_CASE("seeds 0..49 give 50 distinct layouts") {
    auto suite = default_task_suite();
    const TaskSpec* task = find_task(suite, "pick_marked_red");
    REQUIRE(task != nullptr);
    std::set<std::vector<std::tuple<int, int, int, int>>> seen;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        auto [s, o] = reset(*task, seed);
        seen.insert(layout_signature(s));
    }
    CHECK(seen.size() == 50);
}

TEST_CASE("ambiguity guarantee: marked tasks spawn a twin pair") {
    auto suite = default_task_suite();
    const TaskSpec* task = find_task(suite, "pick_marked_red");
    REQUIRE(task != nullptr);
    for (uint64_t seed = 0; seed < 50; ++seed) {
        auto [s, o] = reset(*task, seed);
        std::vector<const SimObject*> reds;
        for (const auto& obj : s.objects) {
            if (obj.color == kRed) {
                reds.push_back(&obj);
            }
        }
        REQUIRE(reds.size() == 2);
        CHECK(reds[0]->marking != reds[1]->marking);
        CHECK(reds[0]->cy == reds[1]->cy);
        CHECK(std::abs(reds[0]->cx - reds[1]->cx) == 1);
    }
}

TEST_CASE("movement and pick rules") {
    auto suite = default_task_suite();
    const TaskSpec* task = find_task(suite, "pick_red");
    REQUIRE(task != nullptr);
    auto [s, o] = reset(*task, 0);

    SUBCASE("right move shifts the gripper one cell") {
        EnvState start = s;
        start.gripper_x = 2;
        start.gripper_y = 3;
        auto res = step(start, *task, ActionChunk{kActRight, kActNoop, kActNoop, kActNoop});
        CHECK(res.state.gripper_x == 3);
        CHECK(res.state.gripper_y == 3);
        CHECK(res.state.step_count == 4);
    }
    SUBCASE("moves clamp at the border") {
        EnvState start = s;
        start.gripper_x = 0;
        auto res = step(start, *task, ActionChunk{kActLeft, kActLeft, kActNoop, kActNoop});
        CHECK(res.state.gripper_x == 0);
    }
    SUBCASE("toggle over an object picks it up (and ends a pick task)") {
        EnvState start = s;
        const SimObject* red = nullptr;
        for (const auto& obj : start.objects) {
            if (obj.color == kRed) {
                red = &obj;
            }
        }
        REQUIRE(red != nullptr);
        start.gripper_x = red->cx;
        start.gripper_y = red->cy;
        auto res = step(start, *task, ActionChunk{kActToggle, kActNoop, kActNoop, kActNoop});
        CHECK(res.state.held_object == red->id);
        CHECK(res.state.gripper_closed);
        CHECK(res.success == 1);
        CHECK(res.done);
        CHECK_THROWS_AS(step(res.state, *task, ActionChunk{kActNoop, kActNoop, kActNoop, kActNoop}),
                        SteppedAfterDone);
    }
}

TEST_CASE("expert succeeds on seeds 0..49 for every task within the tier budget") {
    auto suite = default_task_suite();
    for (const auto& task : suite) {
        for (uint64_t seed = 0; seed < 50; ++seed) {
            ExpertRun r = run_expert_through_env(task, seed);
            REQUIRE(r.success == 1);
            CHECK(r.primitives <= task.max_steps);
        }
    }
}

TEST_CASE("pick-place expert shows exactly two gripper transitions") {
    auto suite = default_task_suite();
    const TaskSpec* task = find_task(suite, "place_red_on_blue");
    REQUIRE(task != nullptr);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto [state, obs] = reset(*task, seed);
        ExpertResult plan = scripted_expert(state, *task);
        int transitions = 0;
        bool prev = false;
        for (bool closed : plan.gripper_timeline) {
            transitions += (closed != prev);
            prev = closed;
        }
        CHECK(transitions == 2);
    }
}

TEST_CASE("already-satisfied predicate yields an empty expert plan") {
    TaskSpec trivial;
    trivial.id = "trivial";
    trivial.tier = HorizonTier::Short;
    trivial.max_steps = 12;
    trivial.legs = {TaskLeg{kRed, -1, -1}};
    trivial.instruction_words = {"pick", "the", "red", "block"};

    EnvState s;
    s.max_steps = 12;
    s.objects.push_back(SimObject{0, 5, 5, kRed, kDotA, 0});
    s.gripper_x = 5;
    s.gripper_y = 5;
    s.held_object = 0;
    s.gripper_closed = true;

    REQUIRE(task_success(s, trivial));
    ExpertResult plan = scripted_expert(s, trivial);
    CHECK(plan.steps.empty());
    CHECK(plan.success);
}

TEST_CASE("tier calibration: mean expert episode lengths are strictly ordered") {
    auto suite = default_task_suite();
    std::map<HorizonTier, std::pair<double, int>> acc;
    for (const auto& task : suite) {
        for (uint64_t seed = 0; seed < 25; ++seed) {
            ExpertRun r = run_expert_through_env(task, seed);
            acc[task.tier].first += r.primitives;
            acc[task.tier].second += 1;
        }
    }
    double mean_short = acc[HorizonTier::Short].first / acc[HorizonTier::Short].second;
    double mean_medium = acc[HorizonTier::Medium].first / acc[HorizonTier::Medium].second;
    double mean_long = acc[HorizonTier::Long].first / acc[HorizonTier::Long].second;
    double mean_xlong = acc[HorizonTier::ExtraLong].first / acc[HorizonTier::ExtraLong].second;
    CHECK(mean_short < mean_medium);
    CHECK(mean_medium < mean_long);
    CHECK(mean_long < mean_xlong);
}

TEST_CASE("conservation and stacking invariants under random action fuzz") {
    auto suite = default_task_suite();
    const TaskSpec* task = find_task(suite, "place_two");
    REQUIRE(task != nullptr);
    Rng rng(4242);
    for (int trial = 0; trial < 30; ++trial) {
        auto [s, o] = reset(*task, static_cast<uint64_t>(trial));
        size_t n_objects = s.objects.size();
        EnvState cur = s;
        while (!cur.done) {
            ActionChunk chunk;
            for (int i = 0; i < kChunkLen; ++i) {
                chunk.push_back(rng.next_int(0, kNumActionTokens));
            }
            auto res = step(cur, *task, chunk);
            cur = res.state;
            REQUIRE(cur.objects.size() == n_objects);
            std::map<std::pair<int, int>, std::set<int>> heights;
            for (const auto& obj : cur.objects) {
                if (obj.id == cur.held_object) {
                    continue;
                }
                auto& hs = heights[{obj.cx, obj.cy}];
                REQUIRE(!hs.count(obj.height)); // one object per (cell, level)
                hs.insert(obj.height);
            }
            for (auto& [cell, hs] : heights) {
                if (hs.count(1)) {
                    REQUIRE(hs.count(0)); // a stacked object needs a base
                }
            }
        }
    }
}

TEST_CASE("markings are invisible at the pooled resolution but visible zoomed") {
    auto suite = default_task_suite();
    const TaskSpec* task = find_task(suite, "pick_marked_red");
    REQUIRE(task != nullptr);
    auto [s, o] = reset(*task, 1);

    // Flip the marking of one red object; the pooled view must not change.
    EnvState flipped = s;
    const SimObject* red = nullptr;
    for (auto& obj : flipped.objects) {
        if (obj.color == kRed) {
            obj.marking = obj.marking == kDotA ? kDotB : kDotA;
            red = &obj;
            break;
        }
    }
    REQUIRE(red != nullptr);
    Image img_a = render(s);
    Image img_b = render(flipped);
    CHECK(img_a != img_b);
    CHECK(coarse_pool(img_a, 6) == coarse_pool(img_b, 6));

    Region cell_region{red->cx * kCellPx - 2, red->cy * kCellPx - 2,
                       red->cx * kCellPx + kCellPx + 2, red->cy * kCellPx + kCellPx + 2};
    auto patch_a = zoom_in(img_a, cell_region);
    auto patch_b = zoom_in(img_b, cell_region);
    CHECK(patch_a.pixels != patch_b.pixels);
}

TEST_CASE("invalid tasks are rejected") {
    TaskSpec bad;
    bad.id = "bad";
    bad.legs = {TaskLeg{99, -1, -1}};
    CHECK_THROWS_AS(reset(bad, 0), InvalidTask);

    TaskSpec dup;
    dup.id = "dup";
    dup.legs = {TaskLeg{kRed, -1, kBlue}, TaskLeg{kRed, -1, kYellow}};
    CHECK_THROWS_AS(reset(dup, 0), InvalidTask);
}
