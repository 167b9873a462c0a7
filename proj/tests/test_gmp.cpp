#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "belief_oracles.hpp"
#include "fragplan/corpus.hpp"
#include "fragplan/gmp.hpp"
#include "test_support.hpp"

using namespace fragplan;

namespace {

std::string fixture(const std::string& name) { return read_text_file(std::string(FRAGPLAN_SOURCE_DIR) + "/corpus/fixtures/" + name); }

CellGrid random_fragment(std::mt19937_64& rng, int h, int w) {
    const GridMap m = support::random_connected_map(rng, h, w, 0.3);
    CellGrid g{h, w, {}};
    for (int i = 0; i < m.cell_count(); ++i) g.cells.push_back(m.is_wall_index(i) ? 1 : 0);
    return g;
}

std::vector<Position> floor_cells(const CellGrid& g) {
    std::vector<Position> out;
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c)
            if (!g.at(r, c)) out.push_back({r, c});
    return out;
}

std::vector<Action> sorted(std::vector<Action> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Four identical copies of one room side by side, entered from the left.
struct ReuseFixture {
    GridMap map;
    MapProgram program;
    Position exit;
};

ReuseFixture reuse_fixture() {
    std::mt19937_64 rng(7);
    const int s = 7;
    const CellGrid room = random_room(rng, s, 0.3);
    MapProgram p{s, 4 * s, {Fragment{0, room}}, {}};
    for (int k = 0; k < 4; ++k) p.placements.push_back({0, Transform{Dihedral::identity(), {0, k * s}}});
    const auto rec = reconstruct(p);
    GridMap m("reuse", s, 4 * s, std::vector<std::uint8_t>(rec.values.begin(), rec.values.end()), Position{s / 2, 0});
    // Exit in the last copy, out of sight from the other three.
    const SearchProblem prob(m);
    for (int c = 3 * s; c < 4 * s; ++c)
        for (int r = 0; r < s; ++r) {
            const Position e{r, c};
            if (!m.is_floor(e)) continue;
            bool hidden = true;
            for (int i = 0; i < m.cell_count() && hidden; ++i)
                if (m.position(i).col < 3 * s && !m.is_wall_index(i) && prob.visible_from(i).contains(m.index(e))) hidden = false;
            if (hidden) return {m, p, e};
        }
    throw std::runtime_error("no hidden exit in the last copy");
}

}  // namespace

TEST(FragmentPolicy, RejectsFragmentsWithoutFloor) {
    Fragment f{0, CellGrid{3, 3, std::vector<std::uint8_t>(9, 1)}};
    EXPECT_THROW(fragment_policy(f, {1, 1}), std::invalid_argument);
    Fragment g{0, CellGrid{1, 3, {0, 1, 0}}};
    EXPECT_THROW(fragment_policy(g, {0, 1}), InvalidPosition);
}

TEST(FragmentPolicy, ValueMatchesPrimitiveOptimumOnTheFragment) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const CellGrid g = random_fragment(rng, 3 + trial % 2, 4);
        const auto fl = floor_cells(g);
        if (fl.size() < 2) continue;
        const Position entry = fl[trial % fl.size()];
        const FragmentPolicy p = fragment_policy(Fragment{0, g}, entry);
        GridMap m("frag", g.height, g.width, g.cells, entry);
        oracle::PrimitiveBeliefMdp mdp(m);
        oracle::HypSet h;
        const CellSet vis = visible_set(m, entry);
        for (int i = 0; i < m.cell_count(); ++i)
            if (!m.is_wall_index(i) && !vis.contains(i)) h.push_back(i);
        const double expect = h.empty() ? 0.0 : mdp.optimum(entry, h);
        EXPECT_NEAR(p.value, expect, 1e-9) << "trial " << trial;
    }
}

TEST(FragmentPolicy, OnlyTheMainComponentCounts) {
    // The single cell on the right is cut off and never searched.
    Fragment f{0, CellGrid{3, 5, {0, 0, 0, 1, 0,  //
                                  0, 1, 0, 1, 1,  //
                                  0, 0, 0, 1, 0}}};
    const FragmentPolicy p = fragment_policy(f, {0, 0});
    EXPECT_EQ(p.solver->problem().floor().size(), 8u);
}

TEST(TransformPolicy, CommutesWithEverySymmetry) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const CellGrid g = random_fragment(rng, 3, 4);
        const auto fl = floor_cells(g);
        if (fl.size() < 3) continue;
        const Position entry = fl[0];
        auto p = std::make_shared<const FragmentPolicy>(fragment_policy(Fragment{0, g}, entry));
        const SearchProblem& local = p->solver->problem();
        for (Dihedral d : Dihedral::all()) {
            const Position shift{2, 5};
            const TransformedPolicy tp = transform_policy(p, Transform{d, shift});
            const CellGrid dg = apply(d, g);
            const auto [dh, dw] = d.dims(g.height, g.width);
            const Position dentry = d.apply(entry, g.height, g.width);
            const FragmentPolicy direct = fragment_policy(Fragment{0, dg}, dentry);
            EXPECT_NEAR(direct.value, p->value, 1e-9);
            for (Position agent : fl) {
                // Hide everything not visible from the entry or the agent.
                CellSet hidden = local.floor() - local.visible_from(local.map().index(entry)) -
                                 local.visible_from(local.map().index(agent));
                if (hidden.empty()) continue;
                std::vector<Action> expect;
                for (Action a : p->actions(agent, hidden)) expect.push_back(d.apply(a));
                const Position ma = d.apply(agent, g.height, g.width);
                const auto got = tp.actions({ma.row + shift.row, ma.col + shift.col}, [&](Position mp) {
                    return hidden.contains(local.map().index(tp.to_local(mp)));
                });
                EXPECT_EQ(sorted(got), sorted(expect));
                CellSet dhidden(dh * dw);
                hidden.for_each([&](int i) {
                    const Position q = d.apply(local.map().position(i), g.height, g.width);
                    dhidden.insert(q.row * dw + q.col);
                });
                EXPECT_EQ(sorted(direct.actions(ma, dhidden)), sorted(expect));
            }
        }
    }
}

TEST(PolicyCache, HitsMissesAndSharedSolver) {
    PolicyCache cache;
    const CellGrid g = canonical_form(CellGrid{3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 1}}).cells;
    const Position a = floor_cells(g)[0], b = floor_cells(g)[1];
    auto l1 = cache.get(g, a);
    auto l2 = cache.get(g, a);
    auto l3 = cache.get(g, b);
    EXPECT_FALSE(l1.hit);
    EXPECT_TRUE(l2.hit);
    EXPECT_FALSE(l3.hit);
    EXPECT_EQ(l1.policy, l2.policy);
    EXPECT_EQ(l1.policy->solver, l3.policy->solver);
    EXPECT_EQ(cache.hits(), 1u);
    EXPECT_EQ(cache.misses(), 2u);
    EXPECT_EQ(cache.size(), 2u);
}

TEST(PolicyCache, ConcurrentLookupsComputeEachKeyOnce) {
    PolicyCache cache;
    std::mt19937_64 rng(5);
    std::vector<std::pair<CellGrid, Position>> keys;
    while (keys.size() < 6) {
        const CellGrid g = canonical_form(random_fragment(rng, 4, 4)).cells;
        const auto fl = floor_cells(g);
        if (fl.size() < 4) continue;
        keys.push_back({g, fl[0]});
        keys.push_back({g, fl.back()});
    }
    std::vector<std::thread> threads;
    std::vector<std::vector<const FragmentPolicy*>> seen(4);
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&, t] {
            for (int rep = 0; rep < 3; ++rep)
                for (const auto& [g, e] : keys) seen[static_cast<std::size_t>(t)].push_back(cache.get(g, e).policy.get());
        });
    for (auto& th : threads) th.join();
    EXPECT_EQ(cache.misses(), keys.size());
    EXPECT_EQ(cache.hits(), 4 * 3 * keys.size() - keys.size());
    for (int t = 1; t < 4; ++t) EXPECT_EQ(seen[static_cast<std::size_t>(t)], seen[0]);
}

TEST(Gmp, ReusesThePolicyForIdenticalCopies) {
    const ReuseFixture fx = reuse_fixture();
    GmpPlanner planner(std::make_shared<const SearchProblem>(fx.map), GmpConfig{fx.program, {}});
    const EpisodeTrace t = planner.plan_episode(fx.exit, 1);
    EXPECT_TRUE(t.reached_exit);
    EXPECT_FALSE(t.stats.fallback);
    EXPECT_EQ(t.stats.cache_misses, 1u);
    EXPECT_EQ(t.stats.cache_hits, 3u);
    EXPECT_EQ(planner.cache().size(), 1u);
}

TEST(Gmp, ReachesEveryExitOnTheFourRoomMap) {
    const GridMap m = parse_map(fixture("four_room.maze"));
    const MapProgram p = parse_program(fixture("four_room.tiled.prog"));
    GmpPlanner planner(std::make_shared<const SearchProblem>(m), GmpConfig{p, {}});
    const CellSet vis0 = planner.problem().visible_from(m.index(m.start()));
    for (int i = 0; i < m.cell_count(); ++i) {
        if (m.is_wall_index(i) || vis0.contains(i)) continue;
        const EpisodeTrace t = planner.plan_episode(m.position(i), static_cast<std::uint64_t>(i));
        ASSERT_TRUE(t.reached_exit);
        EXPECT_FALSE(t.stats.fallback) << to_string(m.position(i));
        EXPECT_EQ(t.steps.back().position, m.position(i));
        for (std::size_t k = 1; k < t.steps.size(); ++k) EXPECT_EQ(manhattan(t.steps[k].position, t.steps[k - 1].position), 1);
    }
}

TEST(Gmp, TrivialProgramActsLikeExpectedUtility) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 8; ++trial) {
        const GridMap m = support::random_connected_map(rng, 4, 5, 0.25);
        auto prob = std::make_shared<const SearchProblem>(m);
        const CellSet vis0 = prob->visible_from(m.index(m.start()));
        const CellSet hidden = prob->floor() - vis0;
        if (hidden.empty()) continue;
        GmpPlanner planner(prob, GmpConfig{trivial_program(m), {}});
        BeliefSolver eu(prob, {});
        hidden.for_each([&](int exit) {
            const EpisodeTrace t = run_belief_episode(eu, m.position(exit), 9, "eu");
            auto agent = planner.agent(m.position(exit));
            Belief b = condition_on(*prob, Belief{m.start(), prob->floor(), std::nullopt},
                                    make_observation(m, vis0, m.start(), m.position(exit)));
            for (std::size_t k = 1; k < t.steps.size(); ++k) {
                EXPECT_EQ(sorted(agent.action_set()), sorted(eu.best_actions(b)));
                const Action a = *t.steps[k].action;
                agent.move(t.steps[k].position);
                const Position pos = t.steps[k].position;
                b = belief_update(*prob, b, a, make_observation(m, prob->visible_from(m.index(pos)), pos, m.position(exit)));
            }
            EXPECT_FALSE(agent.fallback());
        });
    }
}

TEST(Gmp, FallsBackWhenTheProgramContradictsTheMap) {
    const GridMap m = parse_map(fixture("four_room.maze"));
    MapProgram p = parse_program(fixture("four_room.tiled.prog"));
    // Claim a wall in the middle of every room; the first room is in sight.
    p.fragments[0].cells.at(1, 1) = 1;
    GmpPlanner planner(std::make_shared<const SearchProblem>(m), GmpConfig{p, {}});
    const EpisodeTrace t = planner.plan_episode({7, 7}, 2);
    EXPECT_TRUE(t.reached_exit);
    EXPECT_TRUE(t.stats.fallback);
    ASSERT_TRUE(t.stats.fallback_step.has_value());
    EXPECT_EQ(*t.stats.fallback_step, 0u);
}

TEST(Gmp, RejectsDiscountedObjectiveAndMismatchedPrograms) {
    const GridMap m = parse_map(fixture("four_room.maze"));
    auto prob = std::make_shared<const SearchProblem>(m);
    EXPECT_THROW(GmpPlanner(prob, GmpConfig{trivial_program(m), PlannerParams::discounted(0.9)}), std::invalid_argument);
    MapProgram small{3, 3, {}, {}};
    EXPECT_THROW(GmpPlanner(prob, GmpConfig{small, {}}), std::invalid_argument);
}

TEST(EpisodeStats, ExpansionsArePerEpisode) {
    const GridMap m = parse_map(fixture("four_room.maze"));
    auto prob = std::make_shared<const SearchProblem>(m);
    BeliefSolver eu(prob, {});
    const auto first = run_belief_episode(eu, {7, 7}, 1, "eu");
    const auto again = run_belief_episode(eu, {7, 7}, 1, "eu");
    EXPECT_GT(first.stats.expansions, 0u);
    EXPECT_EQ(again.stats.expansions, 0u);

    // The four-room rooms are seen whole on entry; use larger rooms.
    const ReuseFixture fx = reuse_fixture();
    GmpPlanner planner(std::make_shared<const SearchProblem>(fx.map), GmpConfig{fx.program, {}});
    const auto g1 = planner.plan_episode(fx.exit, 1);
    const auto g2 = planner.plan_episode(fx.exit, 1);
    EXPECT_GT(g1.stats.expansions, 0u);
    EXPECT_EQ(g2.stats.expansions, 0u);
    EXPECT_EQ(g1.positions(), g2.positions());
}
