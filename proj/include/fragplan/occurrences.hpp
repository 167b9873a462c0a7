#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <memory>
#include <tuple>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fragplan/belief.hpp"
#include "fragplan/program.hpp"

namespace fragplan {

/// One placed copy of a fragment, with its floor cells in map coordinates.
struct Occurrence {
    int placement = 0;
    int fragment_id = 0;
    /// Canonical cells of the fragment (the policy cache key).
    CellGrid canonical;
    /// Canonical frame -> map frame (before translation).
    Dihedral to_map;
    Position origin{};
    int height = 0;  // of the placed box
    int width = 0;
    /// Largest 4-connected floor component of the fragment, as map cells.
    CellSet floor;
    /// Map cell index for every canonical cell (row-major), -1 if not floor.
    std::vector<int> local_to_map;

    Position to_map_position(Position local) const {
        const Position p = to_map.apply(local, canonical.height, canonical.width);
        return {origin.row + p.row, origin.col + p.col};
    }
    Position to_local(Position map_cell) const {
        const Position rel{map_cell.row - origin.row, map_cell.col - origin.col};
        return to_map.inverse().apply(rel, height, width);
    }
    bool contains(int map_cell) const { return floor.contains(map_cell); }
};

namespace detail {

inline std::vector<std::uint8_t> largest_floor_component(const CellGrid& g) {
    std::vector<int> comp(g.cells.size(), -1);
    std::vector<int> sizes;
    for (int start = 0; start < static_cast<int>(g.cells.size()); ++start) {
        if (g.cells[static_cast<std::size_t>(start)] || comp[static_cast<std::size_t>(start)] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        std::vector<int> stack{start};
        comp[static_cast<std::size_t>(start)] = id;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            ++sizes.back();
            const Position p{cur / g.width, cur % g.width};
            for (Action a : kActions) {
                const Position q = moved(p, a);
                if (q.row < 0 || q.col < 0 || q.row >= g.height || q.col >= g.width) continue;
                const int qi = q.row * g.width + q.col;
                if (g.cells[static_cast<std::size_t>(qi)] || comp[static_cast<std::size_t>(qi)] >= 0) continue;
                comp[static_cast<std::size_t>(qi)] = id;
                stack.push_back(qi);
            }
        }
    }
    std::vector<std::uint8_t> keep(g.cells.size(), 0);
    if (sizes.empty()) return keep;
    // Largest component; the first one found wins ties.
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = comp[i] == best ? 1 : 0;
    return keep;
}

}  // namespace detail

/// The fragment with everything outside its main floor component walled off.
inline CellGrid main_component(const CellGrid& g) {
    const auto keep = detail::largest_floor_component(g);
    CellGrid out = g;
    for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = keep[i] ? 0 : 1;
    return out;
}

inline std::vector<Occurrence> build_occurrences(const MapProgram& program) {
    check_program(program);
    std::vector<Occurrence> out;
    for (std::size_t i = 0; i < program.placements.size(); ++i) {
        const Placement& pl = program.placements[i];
        const Fragment& f = *program.find(pl.fragment_id);
        const CanonicalForm cf = canonical_form(f.cells);
        Occurrence o;
        o.placement = static_cast<int>(i);
        o.fragment_id = f.id;
        o.to_map = pl.transform.symmetry.compose(cf.to_original);
        o.origin = pl.transform.translation;
        std::tie(o.height, o.width) = o.to_map.dims(cf.cells.height, cf.cells.width);
        // Validates bounds.
        apply_transform(f, pl.transform, program.height, program.width);
        o.canonical = cf.cells;
        const auto keep = detail::largest_floor_component(cf.cells);
        o.floor = CellSet(program.height * program.width);
        o.local_to_map.assign(cf.cells.cells.size(), -1);
        for (int r = 0; r < cf.cells.height; ++r)
            for (int c = 0; c < cf.cells.width; ++c) {
                const std::size_t li = static_cast<std::size_t>(r * cf.cells.width + c);
                if (!keep[li]) continue;
                const Position m = o.to_map_position({r, c});
                const int mi = m.row * program.width + m.col;
                o.local_to_map[li] = mi;
                o.floor.insert(mi);
            }
        out.push_back(std::move(o));
    }
    return out;
}

/// What the agent believes about traversability: observed cells are taken
/// from the world, unobserved cells from the reconstruction, and unobserved
/// undefined cells are assumed to be floor.
inline bool model_passable(const GridMap& truth, const ReconstructedMap& recon, const CellSet& observed, int cell) {
    if (observed.contains(cell)) return !truth.is_wall_index(cell);
    return recon.values[static_cast<std::size_t>(cell)] != 1;
}

inline std::vector<std::uint8_t> model_passable_grid(const GridMap& truth, const ReconstructedMap& recon, const CellSet& observed) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(truth.cell_count()));
    for (int i = 0; i < truth.cell_count(); ++i) out[static_cast<std::size_t>(i)] = model_passable(truth, recon, observed, i) ? 1 : 0;
    return out;
}

struct ConsistencyResult {
    bool consistent = true;
    std::vector<Position> mismatched;
};

/// Every defined, visible cell of the reconstruction must match the
/// observation at the wall/floor level.
inline ConsistencyResult consistency_check(const Observation& obs, const ReconstructedMap& recon) {
    if (obs.height != recon.height || obs.width != recon.width) throw std::invalid_argument("observation and reconstruction dimensions differ");
    ConsistencyResult r;
    for (int i = 0; i < recon.height * recon.width; ++i) {
        const ObsLabel l = obs.labels[static_cast<std::size_t>(i)];
        const std::int8_t v = recon.values[static_cast<std::size_t>(i)];
        if (l == ObsLabel::unseen || v == kUndefined) continue;
        const bool wall = l == ObsLabel::wall;
        if (wall != (v == 1)) {
            r.consistent = false;
            r.mismatched.push_back({i / recon.width, i % recon.width});
        }
    }
    return r;
}

/// Program-derived data a tracker needs; immutable and shared by copies.
struct TrackerLayout {
    ReconstructedMap recon;
    std::vector<Occurrence> occurrences;

    explicit TrackerLayout(const MapProgram& program) : recon(reconstruct(program)), occurrences(build_occurrences(program)) {}
};

/// Follows an agent through a map and keeps the bookkeeping of the
/// conservative modular order: which occurrences are explored, which one is
/// being explored, which ones were nearest at the last decision point, and
/// whether the order has been broken. Shared by the planner and the analysis
/// so both use one definition.
class ModularTracker {
public:
    ModularTracker(const GridMap& truth, const MapProgram& program, const VisibilityTable& visibility)
        : ModularTracker(truth, std::make_shared<const TrackerLayout>(program), visibility) {
        if (program.height != truth.height() || program.width != truth.width())
            throw std::invalid_argument("program dimensions do not match the map");
    }

    ModularTracker(const GridMap& truth, std::shared_ptr<const TrackerLayout> layout, const VisibilityTable& visibility)
        : truth_(&truth), visibility_(&visibility), layout_(std::move(layout)) {
        if (layout_->recon.height != truth.height() || layout_->recon.width != truth.width())
            throw std::invalid_argument("program dimensions do not match the map");
        observed_ = CellSet(truth.cell_count());
        done_.assign(layout_->occurrences.size(), false);
    }

    /// First observation at the start cell.
    void start(Position agent) {
        agent_ = agent;
        observe_here();
        decide();
        enter();
    }

    /// The agent has moved to `agent` (possibly the same cell).
    void move(Position agent) {
        agent_ = agent;
        enter();
        observe_here();
        refresh();
    }

    Position agent() const { return agent_; }
    const CellSet& observed() const { return observed_; }
    const ReconstructedMap& reconstruction() const { return layout_->recon; }
    const std::vector<Occurrence>& occurrences() const { return layout_->occurrences; }
    bool done(int occ) const { return done_[static_cast<std::size_t>(occ)]; }
    bool all_done() const { return std::all_of(done_.begin(), done_.end(), [](bool d) { return d; }); }
    std::optional<int> current() const { return current_; }
    const std::vector<int>& allowed() const { return allowed_; }
    std::optional<int> target() const { return allowed_.empty() ? std::nullopt : std::optional<int>(allowed_.front()); }
    bool violated() const { return violated_; }
    bool exit_seen() const { return exit_seen_; }
    std::optional<Position> exit() const { return exit_; }

    std::vector<std::uint8_t> passable() const { return model_passable_grid(*truth_, layout_->recon, observed_); }

    /// Everything that determines future bookkeeping, for merging states.
    auto state_key() const { return std::make_tuple(truth_->index(agent_), observed_, current_, allowed_, violated_, exit_seen_); }

private:
    void observe_here() {
        const CellSet& vis = visibility_->from(truth_->index(agent_));
        observed_ |= vis;
        if (truth_->exit() && vis.contains(truth_->index(*truth_->exit()))) {
            exit_seen_ = true;
            exit_ = truth_->exit();
        }
        for (std::size_t i = 0; i < occ().size(); ++i)
            if (!done_[i] && occ()[i].floor.is_subset_of(observed_)) done_[i] = true;
    }

    void refresh() {
        bool decide_now = false;
        if (current_ && done(*current_)) {
            current_.reset();
            decide_now = true;
        }
        if (!current_ && (allowed_.empty() || std::any_of(allowed_.begin(), allowed_.end(), [&](int o) { return done(o); })))
            decide_now = true;
        if (decide_now) {
            decide();
            enter();
        }
    }

    // Nearest not-explored occurrences by shortest path over cells the agent
    // believes traversable.
    void decide() {
        allowed_.clear();
        const int n = truth_->cell_count();
        const auto pass = passable();
        std::vector<int> dist(static_cast<std::size_t>(n), -1);
        std::deque<int> q{truth_->index(agent_)};
        dist[static_cast<std::size_t>(q.front())] = 0;
        while (!q.empty()) {
            const int cur = q.front();
            q.pop_front();
            const Position p = truth_->position(cur);
            for (Action a : kActions) {
                const Position nb = moved(p, a);
                if (!truth_->in_bounds(nb)) continue;
                const int ni = truth_->index(nb);
                if (!pass[static_cast<std::size_t>(ni)] || dist[static_cast<std::size_t>(ni)] >= 0) continue;
                dist[static_cast<std::size_t>(ni)] = dist[static_cast<std::size_t>(cur)] + 1;
                q.push_back(ni);
            }
        }
        int best = std::numeric_limits<int>::max();
        std::vector<int> near(occ().size(), std::numeric_limits<int>::max());
        for (std::size_t i = 0; i < occ().size(); ++i) {
            if (done_[i]) continue;
            occ()[i].floor.for_each([&](int c) {
                const int d = dist[static_cast<std::size_t>(c)];
                if (d >= 0) near[i] = std::min(near[i], d);
            });
            best = std::min(best, near[i]);
        }
        if (best == std::numeric_limits<int>::max()) return;
        for (std::size_t i = 0; i < occ().size(); ++i)
            if (!done_[i] && near[i] == best) allowed_.push_back(static_cast<int>(i));
    }

    void enter() {
        if (exit_seen_) return;
        const int cell = truth_->index(agent_);
        if (current_) {
            if (occ()[static_cast<std::size_t>(*current_)].contains(cell)) return;
            for (std::size_t i = 0; i < occ().size(); ++i)
                if (!done_[i] && occ()[i].contains(cell)) {
                    // Left the current occurrence for another unexplored one.
                    violated_ = true;
                    current_ = static_cast<int>(i);
                    return;
                }
            return;
        }
        for (int o : allowed_)
            if (!done(o) && occ()[static_cast<std::size_t>(o)].contains(cell)) {
                current_ = o;
                return;
            }
        for (std::size_t i = 0; i < occ().size(); ++i)
            if (!done_[i] && occ()[i].contains(cell)) {
                violated_ = true;
                current_ = static_cast<int>(i);
                return;
            }
    }

    const std::vector<Occurrence>& occ() const { return layout_->occurrences; }

    const GridMap* truth_;
    const VisibilityTable* visibility_;
    std::shared_ptr<const TrackerLayout> layout_;
    CellSet observed_;
    std::vector<bool> done_;
    Position agent_{};
    std::optional<int> current_;
    std::vector<int> allowed_;
    bool violated_ = false;
    bool exit_seen_ = false;
    std::optional<Position> exit_;
};

}  // namespace fragplan
