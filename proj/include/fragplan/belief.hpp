#pragma once

#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fragplan/cell_set.hpp"
#include "fragplan/grid.hpp"
#include "fragplan/world.hpp"

namespace fragplan {

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

class InconsistentObservation : public std::runtime_error {
public:
    explicit InconsistentObservation(const std::string& what) : std::runtime_error("inconsistent observation: " + what) {}
};

class UnreachableRegion : public std::runtime_error {
public:
    explicit UnreachableRegion(const std::string& what) : std::runtime_error("unreachable region: " + what) {}
};

/// Breadth-first distances from `source` over floor cells.
inline std::vector<int> bfs_distances(const GridMap& map, int source) {
    std::vector<int> dist(static_cast<std::size_t>(map.cell_count()), kUnreachable);
    if (map.is_wall_index(source)) return dist;
    std::deque<int> queue{source};
    dist[static_cast<std::size_t>(source)] = 0;
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        const Position p = map.position(cur);
        for (Action a : kActions) {
            const Position q = moved(p, a);
            if (!map.is_floor(q)) continue;
            const int qi = map.index(q);
            if (dist[static_cast<std::size_t>(qi)] != kUnreachable) continue;
            dist[static_cast<std::size_t>(qi)] = dist[static_cast<std::size_t>(cur)] + 1;
            queue.push_back(qi);
        }
    }
    return dist;
}

/// Immutable per-map data shared by the belief-space planners: visibility
/// sets and all-pairs shortest-path distances.
class SearchProblem {
public:
    SearchProblem(std::shared_ptr<const GridMap> map, VisibilityParams params = {})
        : map_(std::move(map)), visibility_(*map_, params) {
        const int n = map_->cell_count();
        floor_ = CellSet(n);
        distances_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), kUnreachable);
        for (int i = 0; i < n; ++i) {
            if (map_->is_wall_index(i)) continue;
            floor_.insert(i);
            auto d = bfs_distances(*map_, i);
            std::copy(d.begin(), d.end(), distances_.begin() + static_cast<std::ptrdiff_t>(i) * n);
        }
    }

    explicit SearchProblem(const GridMap& map, VisibilityParams params = {})
        : SearchProblem(std::make_shared<const GridMap>(map), params) {}

    const GridMap& map() const { return *map_; }
    const std::shared_ptr<const GridMap>& map_ptr() const { return map_; }
    const VisibilityTable& visibility() const { return visibility_; }
    const CellSet& visible_from(int cell) const { return visibility_.from(cell); }
    const CellSet& floor() const { return floor_; }
    int distance(int from, int to) const {
        return distances_[static_cast<std::size_t>(from) * static_cast<std::size_t>(map_->cell_count()) +
                          static_cast<std::size_t>(to)];
    }

private:
    std::shared_ptr<const GridMap> map_;
    VisibilityTable visibility_;
    CellSet floor_;
    std::vector<int> distances_;
};

/// Belief collapsed to its sufficient statistic: the known agent cell plus a
/// uniform distribution over candidate exit cells.
struct Belief {
    Position agent{};
    CellSet hypotheses;
    std::optional<Position> known_exit;

    double probability(const GridMap& map, Position cell) const {
        if (known_exit) return cell == *known_exit ? 1.0 : 0.0;
        const int n = hypotheses.size();
        return n > 0 && hypotheses.contains(map.index(cell)) ? 1.0 / n : 0.0;
    }

    friend bool operator==(const Belief&, const Belief&) = default;
};

/// b0: the exit is uniform over floor cells not visible from the start.
inline Belief initial_belief(const SearchProblem& problem, Position agent) {
    const GridMap& map = problem.map();
    if (!map.is_floor(agent)) throw InvalidPosition(agent, "agent is not on a floor cell");
    Belief b{agent, problem.floor() - problem.visible_from(map.index(agent)), std::nullopt};
    return b;
}

inline Belief initial_belief(const SearchProblem& problem) { return initial_belief(problem, problem.map().start()); }

/// Applies the agent's own observation to a belief at its current cell.
inline Belief condition_on(const SearchProblem& problem, Belief b, const Observation& o) {
    const GridMap& map = problem.map();
    if (b.known_exit) {
        const int ei = map.index(*b.known_exit);
        if (o.seen(ei) && o.labels[static_cast<std::size_t>(ei)] != ObsLabel::exit)
            throw InconsistentObservation("known exit observed without exit label");
        return b;
    }
    if (auto exit = o.exit()) {
        if (!b.hypotheses.contains(map.index(*exit)))
            throw InconsistentObservation("exit at " + to_string(*exit) + " has zero prior probability");
        b.known_exit = exit;
        b.hypotheses = CellSet(map.cell_count());
        return b;
    }
    bool contradiction = false;
    b.hypotheses.for_each([&](int i) {
        if (o.labels[static_cast<std::size_t>(i)] == ObsLabel::wall) contradiction = true;
    });
    if (contradiction) throw InconsistentObservation("a hypothesis cell is observed as a wall");
    b.hypotheses -= o.seen_set();
    if (b.hypotheses.empty()) throw InconsistentObservation("no exit hypotheses remain");
    return b;
}

/// tau(b, a, o)
inline Belief belief_update(const SearchProblem& problem, const Belief& b, Action a, const Observation& o) {
    const GridMap& map = problem.map();
    const Position next = transition(map, b.agent, a);
    if (o.agent != next) throw InconsistentObservation("observation agent position disagrees with the transition");
    Belief moved_belief = b;
    moved_belief.agent = next;
    return condition_on(problem, moved_belief, o);
}

struct Outcome {
    /// Set when this outcome reveals the exit.
    std::optional<Position> exit_at;
    double probability = 0;
    Belief successor;
};

using OutcomeDistribution = std::vector<Outcome>;

/// P(o | b, a) together with the successor beliefs.
inline OutcomeDistribution outcome_distribution(const SearchProblem& problem, const Belief& b, Action a) {
    if (b.known_exit) throw std::logic_error("outcome_distribution requires an unknown exit");
    const GridMap& map = problem.map();
    const Position next = transition(map, b.agent, a);
    const CellSet& vis = problem.visible_from(map.index(next));
    const int total = b.hypotheses.size();
    if (total == 0) throw std::logic_error("belief has no hypotheses");
    OutcomeDistribution out;
    const CellSet seen = b.hypotheses & vis;
    seen.for_each([&](int i) {
        Belief s{next, CellSet(map.cell_count()), map.position(i)};
        out.push_back({map.position(i), 1.0 / total, std::move(s)});
    });
    const int remaining = total - seen.size();
    if (remaining > 0) out.push_back({std::nullopt, static_cast<double>(remaining) / total, Belief{next, b.hypotheses - vis, std::nullopt}});
    return out;
}

/// Per-cell steps to the nearest target by Bellman sweeps over passable
/// cells; unreachable cells stay at infinity.
inline std::vector<double> value_iteration(int height, int width, const std::vector<std::uint8_t>& passable,
                                           const std::vector<Position>& targets) {
    if (targets.empty()) throw std::invalid_argument("value_iteration needs at least one target");
    const double inf = std::numeric_limits<double>::infinity();
    const int n = height * width;
    std::vector<double> v(static_cast<std::size_t>(n), inf);
    std::vector<std::uint8_t> is_target(static_cast<std::size_t>(n), 0);
    for (Position t : targets) {
        if (t.row < 0 || t.row >= height || t.col < 0 || t.col >= width) throw InvalidPosition(t, "target out of bounds");
        const int ti = t.row * width + t.col;
        if (!passable[static_cast<std::size_t>(ti)]) throw InvalidPosition(t, "target is not traversable");
        is_target[static_cast<std::size_t>(ti)] = 1;
        v[static_cast<std::size_t>(ti)] = 0;
    }
    bool changed = true;
    bool forward = true;
    while (changed) {
        changed = false;
        for (int k = 0; k < n; ++k) {
            const int i = forward ? k : n - 1 - k;
            if (!passable[static_cast<std::size_t>(i)] || is_target[static_cast<std::size_t>(i)]) continue;
            const int r = i / width, c = i % width;
            double best = inf;
            if (r > 0) best = std::min(best, v[static_cast<std::size_t>(i - width)]);
            if (r + 1 < height) best = std::min(best, v[static_cast<std::size_t>(i + width)]);
            if (c > 0) best = std::min(best, v[static_cast<std::size_t>(i - 1)]);
            if (c + 1 < width) best = std::min(best, v[static_cast<std::size_t>(i + 1)]);
            const double candidate = best + 1.0;
            if (candidate < v[static_cast<std::size_t>(i)]) {
                v[static_cast<std::size_t>(i)] = candidate;
                changed = true;
            }
        }
        forward = !forward;
    }
    return v;
}

inline std::vector<double> value_iteration(const GridMap& map, const std::vector<Position>& targets) {
    std::vector<std::uint8_t> passable(static_cast<std::size_t>(map.cell_count()));
    for (int i = 0; i < map.cell_count(); ++i) passable[static_cast<std::size_t>(i)] = map.is_wall_index(i) ? 0 : 1;
    return value_iteration(map.height(), map.width(), passable, targets);
}

}  // namespace fragplan
