#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fragplan/cell_set.hpp"
#include "fragplan/grid.hpp"

namespace fragplan {

struct VisibilityParams {
    /// Euclidean bound between cell centers, in cells; unset means unbounded.
    std::optional<double> range;

    static VisibilityParams unbounded() { return {}; }
    static VisibilityParams within(double r) {
        if (!(r > 0)) throw std::invalid_argument("visibility range must be positive");
        return {r};
    }
};

namespace detail {

// Fraction with positive denominator.
struct Frac {
    long long num;
    long long den;
};

inline bool less(Frac a, Frac b) { return a.num * b.den < b.num * a.den; }
inline Frac max_frac(Frac a, Frac b) { return less(a, b) ? b : a; }
inline Frac min_frac(Frac a, Frac b) { return less(a, b) ? a : b; }

// Does the segment between the centers of a and b pass through the open
// interior of cell w? Coordinates are doubled so centers are even and cell
// edges odd, which keeps everything in integers.
inline bool segment_crosses_cell(Position a, Position b, Position w) {
    const long long ar = 2LL * a.row, ac = 2LL * a.col;
    const long long dr = 2LL * (b.row - a.row), dc = 2LL * (b.col - a.col);
    Frac lo{0, 1}, hi{1, 1};
    auto clip = [&](long long origin, long long d, long long center) {
        const long long edge_lo = center - 1, edge_hi = center + 1;
        if (d == 0) return origin > edge_lo && origin < edge_hi;
        Frac t1, t2;
        if (d > 0) {
            t1 = {edge_lo - origin, d};
            t2 = {edge_hi - origin, d};
        } else {
            t1 = {origin - edge_hi, -d};
            t2 = {origin - edge_lo, -d};
        }
        lo = max_frac(lo, t1);
        hi = min_frac(hi, t2);
        return true;
    };
    if (!clip(ar, dr, 2LL * w.row)) return false;
    if (!clip(ac, dc, 2LL * w.col)) return false;
    return less(lo, hi);
}

}  // namespace detail

/// True iff no wall cell other than the endpoints has its interior crossed by
/// the segment between the two cell centers. Grazing a wall corner or edge
/// does not block.
inline bool line_of_sight(const GridMap& map, Position a, Position b) {
    if (a == b) return true;
    const int r0 = std::min(a.row, b.row), r1 = std::max(a.row, b.row);
    const int c0 = std::min(a.col, b.col), c1 = std::max(a.col, b.col);
    const long long dr = 2LL * (b.row - a.row), dc = 2LL * (b.col - a.col);
    const long long len2 = dr * dr + dc * dc;
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const Position w{r, c};
            if (w == a || w == b || !map.is_wall(w)) continue;
            const long long wr = 2LL * (r - a.row), wc = 2LL * (c - a.col);
            const long long cross = wr * dc - wc * dr;
            if (cross * cross >= 2 * len2) continue;
            if (detail::segment_crosses_cell(a, b, w)) return false;
        }
    }
    return true;
}

inline bool within_range(Position a, Position b, const VisibilityParams& params) {
    if (!params.range) return true;
    const double dr = a.row - b.row, dc = a.col - b.col;
    return dr * dr + dc * dc <= *params.range * *params.range + 1e-12;
}

inline CellSet visible_set(const GridMap& map, Position from, const VisibilityParams& params = {}) {
    if (!map.in_bounds(from)) throw InvalidPosition(from, "position out of bounds");
    if (map.is_wall(from)) throw InvalidPosition(from, "position is a wall");
    CellSet out(map.cell_count());
    for (int i = 0; i < map.cell_count(); ++i) {
        const Position p = map.position(i);
        if (within_range(from, p, params) && line_of_sight(map, from, p)) out.insert(i);
    }
    return out;
}

inline std::vector<Position> visible_cells(const GridMap& map, Position from, const VisibilityParams& params = {}) {
    std::vector<Position> out;
    visible_set(map, from, params).for_each([&](int i) { out.push_back(map.position(i)); });
    return out;
}

/// Visible set for every floor cell, computed once per map.
class VisibilityTable {
public:
    VisibilityTable() = default;
    VisibilityTable(const GridMap& map, const VisibilityParams& params) : params_(params) {
        const int n = map.cell_count();
        sets_.assign(static_cast<std::size_t>(n), CellSet(n));
        for (int i = 0; i < n; ++i) {
            if (map.is_wall_index(i)) continue;
            sets_[static_cast<std::size_t>(i)].insert(i);
        }
        for (int i = 0; i < n; ++i) {
            const Position a = map.position(i);
            const bool a_floor = !map.is_wall_index(i);
            for (int j = i + 1; j < n; ++j) {
                const bool b_floor = !map.is_wall_index(j);
                if (!a_floor && !b_floor) continue;
                const Position b = map.position(j);
                if (!within_range(a, b, params) || !line_of_sight(map, a, b)) continue;
                if (a_floor) sets_[static_cast<std::size_t>(i)].insert(j);
                if (b_floor) sets_[static_cast<std::size_t>(j)].insert(i);
            }
        }
    }

    const CellSet& from(int index) const { return sets_[static_cast<std::size_t>(index)]; }
    const VisibilityParams& params() const { return params_; }

private:
    VisibilityParams params_;
    std::vector<CellSet> sets_;
};

enum class ObsLabel : std::uint8_t { unseen, wall, empty, exit };

struct Observation {
    int height = 0;
    int width = 0;
    std::vector<ObsLabel> labels;
    Position agent{};

    ObsLabel at(Position p) const { return labels[static_cast<std::size_t>(p.row * width + p.col)]; }
    bool seen(int index) const { return labels[static_cast<std::size_t>(index)] != ObsLabel::unseen; }

    std::optional<Position> exit() const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == ObsLabel::exit) return Position{static_cast<int>(i) / width, static_cast<int>(i) % width};
        return std::nullopt;
    }

    CellSet seen_set() const {
        CellSet s(height * width);
        for (int i = 0; i < height * width; ++i)
            if (seen(i)) s.insert(i);
        return s;
    }

    int unseen_count() const {
        int n = 0;
        for (auto l : labels) n += l == ObsLabel::unseen ? 1 : 0;
        return n;
    }
};

/// Labels the visible cells of the map by truth; everything else is unseen.
inline Observation make_observation(const GridMap& map, const CellSet& visible, Position agent,
                                    std::optional<Position> exit) {
    Observation o;
    o.height = map.height();
    o.width = map.width();
    o.agent = agent;
    o.labels.assign(static_cast<std::size_t>(map.cell_count()), ObsLabel::unseen);
    visible.for_each([&](int i) {
        ObsLabel l = map.is_wall_index(i) ? ObsLabel::wall : ObsLabel::empty;
        if (exit && map.index(*exit) == i) l = ObsLabel::exit;
        o.labels[static_cast<std::size_t>(i)] = l;
    });
    return o;
}

class TerminalState : public std::logic_error {
public:
    TerminalState() : std::logic_error("cannot step a terminal state") {}
};

/// Ground-truth POMDP state.
struct WorldState {
    std::shared_ptr<const GridMap> map;
    Position agent{};
    Position exit{};
    bool terminal = false;

    static WorldState initial(std::shared_ptr<const GridMap> map, Position exit) {
        if (!map->is_floor(exit)) throw InvalidPosition(exit, "exit is not a floor cell");
        WorldState s{std::move(map), {}, exit, false};
        s.agent = s.map->start();
        s.terminal = s.agent == s.exit;
        return s;
    }
};

inline Observation observe(const WorldState& state, const VisibilityParams& params = {}) {
    return make_observation(*state.map, visible_set(*state.map, state.agent, params), state.agent, state.exit);
}

inline Observation observe(const WorldState& state, const VisibilityTable& table) {
    return make_observation(*state.map, table.from(state.map->index(state.agent)), state.agent, state.exit);
}

/// Deterministic transition: bumping into a wall or the border leaves the
/// agent in place; entering the exit terminates.
inline Position transition(const GridMap& map, Position from, Action a) {
    const Position to = moved(from, a);
    return map.is_floor(to) ? to : from;
}

inline WorldState step(const WorldState& state, Action a) {
    if (state.terminal) throw TerminalState();
    WorldState next = state;
    next.agent = transition(*state.map, state.agent, a);
    next.terminal = next.agent == next.exit;
    return next;
}

}  // namespace fragplan
