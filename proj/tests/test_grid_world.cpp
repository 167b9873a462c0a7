#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <random>
#include <sstream>

#include "fragplan/world.hpp"
#include "test_support.hpp"

using namespace fragplan;

namespace {

GridMap rows(std::vector<std::string> r) { return GridMap::from_rows("t", r); }

std::set<Position> as_set(const std::vector<Position>& v) { return {v.begin(), v.end()}; }

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Visibility, OpenRoomSeesEverything) {
    auto m = rows({"...", ".S.", "..."});
    EXPECT_EQ(visible_cells(m, {1, 1}).size(), 9U);
}

TEST(Visibility, SingleCell) {
    auto m = rows({"S"});
    EXPECT_EQ(visible_cells(m, {0, 0}), std::vector<Position>({{0, 0}}));
}

TEST(Visibility, WallBlocksCorridor) {
    auto m = rows({"S.#.."});
    EXPECT_EQ(as_set(visible_cells(m, {0, 0})), (std::set<Position>{{0, 0}, {0, 1}, {0, 2}}));
}

TEST(Visibility, WallCellIsVisibleButBlocksBeyond) {
    auto m = rows({"S#."});
    auto v = as_set(visible_cells(m, {0, 0}));
    EXPECT_TRUE(v.count({0, 1}));
    EXPECT_FALSE(v.count({0, 2}));
}

TEST(Visibility, CornerGrazingCountsAsVisible) {
    // The diagonal passes exactly through the shared corner of two walls.
    auto m = rows({"S#", "#."});
    EXPECT_TRUE(line_of_sight(m, {0, 0}, {1, 1}));
}

TEST(Visibility, RejectsWallOrOutOfBounds) {
    auto m = rows({"S#"});
    EXPECT_THROW(visible_cells(m, {0, 1}), InvalidPosition);
    EXPECT_THROW(visible_cells(m, {3, 0}), InvalidPosition);
}

TEST(Visibility, RangeLimitsSight) {
    auto m = rows({"S...."});
    auto v = as_set(visible_cells(m, {0, 0}, VisibilityParams::within(2.0)));
    EXPECT_EQ(v, (std::set<Position>{{0, 0}, {0, 1}, {0, 2}}));
    EXPECT_THROW(VisibilityParams::within(0.0), std::invalid_argument);
}

TEST(Visibility, MatchesSampledRayCastOracle) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        auto m = support::random_connected_map(rng, 7, 8, 0.3);
        for (int i = 0; i < m.cell_count(); ++i) {
            if (m.is_wall_index(i)) continue;
            for (int j = 0; j < m.cell_count(); ++j) {
                const Position a = m.position(i), b = m.position(j);
                ASSERT_EQ(line_of_sight(m, a, b), support::sampled_line_of_sight(m, a, b))
                    << "trial " << trial << " " << to_string(a) << " -> " << to_string(b) << "\n"
                    << serialize_map(m);
            }
        }
    }
}

TEST(Visibility, SymmetricBetweenFloorCells) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        auto m = support::random_connected_map(rng, 8, 9, 0.35);
        VisibilityTable table(m, {});
        for (int i = 0; i < m.cell_count(); ++i)
            for (int j = 0; j < m.cell_count(); ++j)
                if (!m.is_wall_index(i) && !m.is_wall_index(j)) {
                    ASSERT_EQ(table.from(i).contains(j), table.from(j).contains(i));
                }
    }
}

TEST(Visibility, MonotoneInRange) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = support::random_connected_map(rng, 9, 9, 0.25);
        for (int i = 0; i < m.cell_count(); ++i) {
            if (m.is_wall_index(i)) continue;
            CellSet prev = visible_set(m, m.position(i), VisibilityParams::within(1.0));
            for (double r : {1.5, 2.0, 3.0, 5.0}) {
                CellSet cur = visible_set(m, m.position(i), VisibilityParams::within(r));
                ASSERT_TRUE(prev.is_subset_of(cur));
                prev = cur;
            }
            ASSERT_TRUE(prev.is_subset_of(visible_set(m, m.position(i))));
        }
    }
}

TEST(Observe, ExitAdjacentIsLabelled) {
    auto m = std::make_shared<const GridMap>(rows({"S.", ".."}));
    auto s = WorldState::initial(m, {0, 1});
    EXPECT_EQ(observe(s).at({0, 1}), ObsLabel::exit);
}

TEST(Observe, ExitBehindWallIsUnseen) {
    auto m = std::make_shared<const GridMap>(rows({"S#."}));
    auto s = WorldState::initial(m, {0, 2});
    auto o = observe(s);
    EXPECT_EQ(o.at({0, 2}), ObsLabel::unseen);
    EXPECT_FALSE(o.exit().has_value());
}

TEST(Observe, OpenRoomHasNoUnseenCells) {
    auto m = std::make_shared<const GridMap>(rows({"S..", "...", "..."}));
    EXPECT_EQ(observe(WorldState::initial(m, {2, 2})).unseen_count(), 0);
}

TEST(Observe, VisibleLabelsAgreeWithTruth) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        auto m = std::make_shared<const GridMap>(support::random_connected_map(rng, 8, 8, 0.3));
        auto o = observe(WorldState::initial(m, m->start()));
        for (int i = 0; i < m->cell_count(); ++i) {
            if (!o.seen(i)) continue;
            const bool wall = m->is_wall_index(i);
            EXPECT_EQ(o.labels[static_cast<std::size_t>(i)] == ObsLabel::wall, wall);
        }
    }
}

TEST(Step, WallBumpStaysInPlace) {
    auto m = std::make_shared<const GridMap>(rows({"S#.", "..."}));
    auto s = step(WorldState::initial(m, {1, 2}), Action::right);
    EXPECT_EQ(s.agent, (Position{0, 0}));
}

TEST(Step, OutOfBoundsStaysInPlace) {
    auto m = std::make_shared<const GridMap>(rows({"S.", ".."}));
    auto s = step(WorldState::initial(m, {1, 1}), Action::up);
    EXPECT_EQ(s.agent, (Position{0, 0}));
    EXPECT_FALSE(s.terminal);
}

TEST(Step, ReachingExitTerminates) {
    auto m = std::make_shared<const GridMap>(rows({"S."}));
    auto s = step(WorldState::initial(m, {0, 1}), Action::right);
    EXPECT_TRUE(s.terminal);
    EXPECT_THROW(step(s, Action::left), TerminalState);
}

TEST(Step, NeverEntersWallsAndMovesAtMostOneCell) {
    std::mt19937_64 rng(19);
    std::uniform_int_distribution<int> act(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = std::make_shared<const GridMap>(support::random_connected_map(rng, 9, 9, 0.3));
        Position far = m->start();
        for (int i = 0; i < m->cell_count(); ++i)
            if (!m->is_wall_index(i) && m->position(i) != m->start()) far = m->position(i);
        if (far == m->start()) continue;
        auto s = WorldState::initial(m, far);
        for (int k = 0; k < 200 && !s.terminal; ++k) {
            auto next = step(s, kActions[static_cast<std::size_t>(act(rng))]);
            ASSERT_TRUE(m->is_floor(next.agent));
            ASSERT_LE(manhattan(next.agent, s.agent), 1);
            s = next;
        }
    }
}

TEST(MapFile, ParsesGoldenFixture) {
    auto m = parse_map(read_file(std::string(FRAGPLAN_SOURCE_DIR) + "/tests/data/fixture3x3.maze"));
    EXPECT_EQ(m.id(), "fixture");
    EXPECT_EQ(m.height(), 3);
    EXPECT_EQ(m.width(), 3);
    EXPECT_EQ(m.start(), (Position{0, 0}));
    ASSERT_TRUE(m.exit().has_value());
    EXPECT_EQ(*m.exit(), (Position{2, 2}));
    EXPECT_TRUE(m.is_wall({1, 1}));
    EXPECT_EQ(m.floor_count(), 8);
}

TEST(MapFile, TwoStartsIsAnError) {
    try {
        parse_map("maze x 1 3\nS.S\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line, 2);
        EXPECT_EQ(e.column, 3);
    }
}

TEST(MapFile, MalformedInputs) {
    EXPECT_THROW(parse_map(""), ParseError);
    EXPECT_THROW(parse_map("maze x 2 2\nS.\n"), ParseError);
    EXPECT_THROW(parse_map("maze x 1 2\nS\n"), ParseError);
    EXPECT_THROW(parse_map("maze x 1 2\nSx\n"), ParseError);
    EXPECT_THROW(parse_map("maze x 1 2\n..\n"), ParseError);
    EXPECT_THROW(parse_map("grid x 1 1\nS\n"), ParseError);
    EXPECT_THROW(parse_map("maze x 1 3\nSEE\n"), ParseError);
}

TEST(MapFile, RoundTripOnRandomMaps) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> dim(1, 12);
        auto m = support::random_connected_map(rng, dim(rng), dim(rng), 0.3, "m" + std::to_string(trial));
        if (trial % 2 == 0 && m.floor_count() > 1) {
            for (int i = m.cell_count() - 1; i >= 0; --i)
                if (!m.is_wall_index(i) && m.position(i) != m.start()) {
                    m = m.with_exit(m.position(i));
                    break;
                }
        }
        ASSERT_EQ(parse_map(serialize_map(m)), m);
    }
}
