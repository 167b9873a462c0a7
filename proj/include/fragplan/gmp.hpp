#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fragplan/occurrences.hpp"
#include "fragplan/solver.hpp"
#include "fragplan/trace.hpp"

namespace fragplan {

/// Exact EU search restricted to one fragment's main floor component.
class FragmentSolver {
public:
    FragmentSolver(const CellGrid& cells, PlannerParams params, VisibilityParams visibility) : cells_(cells) {
        const CellGrid local = main_component(cells);
        int first_floor = -1;
        for (std::size_t i = 0; i < local.cells.size() && first_floor < 0; ++i)
            if (!local.cells[i]) first_floor = static_cast<int>(i);
        if (first_floor < 0) throw std::invalid_argument("fragment has no floor cells");
        GridMap m("fragment", local.height, local.width, local.cells, Position{first_floor / local.width, first_floor % local.width});
        problem_ = std::make_shared<const SearchProblem>(m, visibility);
        solver_ = std::make_shared<BeliefSolver>(problem_, params);
    }

    const CellGrid& cells() const { return cells_; }
    const SearchProblem& problem() const { return *problem_; }
    BeliefSolver& solver() const { return *solver_; }
    bool is_floor(Position p) const { return problem_->map().in_bounds(p) && problem_->map().is_floor(p); }

    /// Hypotheses when the agent has just entered at `entry` knowing nothing
    /// else about the fragment.
    CellSet entry_hypotheses(Position entry) const {
        return problem_->floor() - problem_->visible_from(problem_->map().index(entry));
    }

private:
    CellGrid cells_;
    std::shared_ptr<const SearchProblem> problem_;
    std::shared_ptr<BeliefSolver> solver_;
};

struct FragmentPolicy {
    CellGrid cells;
    Position entry{};
    std::shared_ptr<const FragmentSolver> solver;
    /// Expected steps from entry until every fragment hypothesis is resolved.
    double value = 0;

    /// Argmax actions in the fragment frame for an agent at `agent` with
    /// `hidden` floor cells still unobserved (fragment cell indices).
    std::vector<Action> actions(Position agent, const CellSet& hidden) const {
        if (!solver->is_floor(agent)) throw InvalidPosition(agent, "agent is not on the fragment's floor");
        if (hidden.empty()) return {};
        return solver->solver().best_actions(Belief{agent, hidden, std::nullopt});
    }
};

inline FragmentPolicy make_policy(std::shared_ptr<const FragmentSolver> solver, Position entry) {
    if (!solver->is_floor(entry)) throw InvalidPosition(entry, "entry is not on the fragment's floor");
    FragmentPolicy p{solver->cells(), entry, solver, 0};
    const CellSet h = solver->entry_hypotheses(entry);
    if (!h.empty()) p.value = solver->solver().value(Belief{entry, h, std::nullopt});
    return p;
}

inline FragmentPolicy fragment_policy(const Fragment& f, Position entry, PlannerParams params = {},
                                      VisibilityParams visibility = {}) {
    return make_policy(std::make_shared<const FragmentSolver>(f.cells, params, visibility), entry);
}

/// Policies keyed by (canonical fragment, canonical entry). A single local
/// solver is kept per canonical fragment, so different entries share their
/// belief-node memo.
class PolicyCache {
public:
    explicit PolicyCache(PlannerParams params = {}, VisibilityParams visibility = {}) : params_(params), visibility_(visibility) {}

    struct Lookup {
        std::shared_ptr<const FragmentPolicy> policy;
        bool hit = false;
    };

    Lookup get(const CellGrid& canonical, Position entry) {
        const Key key{canonical, entry};
        {
            std::shared_lock lock(mutex_);
            if (auto it = policies_.find(key); it != policies_.end()) {
                ++hits_;
                return {it->second, true};
            }
        }
        std::unique_lock lock(mutex_);
        if (auto it = policies_.find(key); it != policies_.end()) {
            ++hits_;
            return {it->second, true};
        }
        auto& solver = solvers_[canonical];
        if (!solver) solver = std::make_shared<const FragmentSolver>(canonical, params_, visibility_);
        auto policy = std::make_shared<const FragmentPolicy>(make_policy(solver, entry));
        policies_.emplace(key, policy);
        ++misses_;
        return {policy, false};
    }

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }
    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return policies_.size();
    }
    std::size_t expansions() const {
        std::shared_lock lock(mutex_);
        std::size_t n = 0;
        for (const auto& [k, s] : solvers_) n += s->solver().expansions();
        return n;
    }
    std::size_t memo_bytes() const {
        std::shared_lock lock(mutex_);
        std::size_t n = 0;
        for (const auto& [k, s] : solvers_) n += s->solver().memo_bytes();
        return n;
    }

private:
    using Key = std::pair<CellGrid, Position>;
    PlannerParams params_;
    VisibilityParams visibility_;
    mutable std::shared_mutex mutex_;
    std::map<Key, std::shared_ptr<const FragmentPolicy>> policies_;
    std::map<CellGrid, std::shared_ptr<const FragmentSolver>> solvers_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

/// A fragment policy carried into map coordinates by a transform.
class TransformedPolicy {
public:
    TransformedPolicy(std::shared_ptr<const FragmentPolicy> policy, Transform t) : policy_(std::move(policy)), t_(t) {
        std::tie(height_, width_) = t_.symmetry.dims(policy_->cells.height, policy_->cells.width);
    }

    const FragmentPolicy& policy() const { return *policy_; }
    const Transform& transform() const { return t_; }

    Position to_map(Position local) const {
        const Position p = t_.symmetry.apply(local, policy_->cells.height, policy_->cells.width);
        return {p.row + t_.translation.row, p.col + t_.translation.col};
    }
    Position to_local(Position map_cell) const {
        return t_.symmetry.inverse().apply({map_cell.row - t_.translation.row, map_cell.col - t_.translation.col}, height_, width_);
    }

    /// `hidden(map cell)` tells whether a map cell is still unobserved.
    std::vector<Action> actions(Position map_agent, const std::function<bool(Position)>& hidden) const {
        const SearchProblem& local = policy_->solver->problem();
        CellSet h(local.map().cell_count());
        local.floor().for_each([&](int i) {
            if (hidden(to_map(local.map().position(i)))) h.insert(i);
        });
        std::vector<Action> out;
        for (Action a : policy_->actions(to_local(map_agent), h)) out.push_back(t_.symmetry.apply(a));
        return out;
    }

private:
    std::shared_ptr<const FragmentPolicy> policy_;
    Transform t_;
    int height_ = 0;
    int width_ = 0;
};

inline TransformedPolicy transform_policy(std::shared_ptr<const FragmentPolicy> p, Transform t) {
    return TransformedPolicy(std::move(p), t);
}

struct GmpConfig {
    MapProgram program;
    /// Within-fragment and fallback planning.
    PlannerParams params;
};

/// Neighbour moves that descend a distance field.
inline std::vector<Action> descend(const GridMap& map, const std::vector<double>& field, Position from) {
    std::vector<Action> out;
    const double here = field[static_cast<std::size_t>(map.index(from))];
    if (!(here < std::numeric_limits<double>::infinity())) return out;
    for (Action a : kActions) {
        const Position q = moved(from, a);
        if (!map.in_bounds(q)) continue;
        if (field[static_cast<std::size_t>(map.index(q))] == here - 1.0) out.push_back(a);
    }
    return out;
}

/// Per-map generative modular planner. Episodes on the same planner share
/// its policy cache and its fallback solver.
class GmpPlanner {
public:
    GmpPlanner(std::shared_ptr<const SearchProblem> truth, GmpConfig config, std::shared_ptr<PolicyCache> cache = nullptr)
        : truth_(std::move(truth)), config_(std::move(config)),
          cache_(cache ? std::move(cache) : std::make_shared<PolicyCache>(config_.params, VisibilityParams{})) {
        if (config_.params.mode != Objective::expected_utility)
            throw std::invalid_argument("fragment policies use the expected-utility objective");
        if (config_.program.height != truth_->map().height() || config_.program.width != truth_->map().width())
            throw std::invalid_argument("program dimensions do not match the map");
        check_program(config_.program);
        layout_ = std::make_shared<const TrackerLayout>(config_.program);
    }

    const SearchProblem& problem() const { return *truth_; }
    const MapProgram& program() const { return config_.program; }
    const std::shared_ptr<const TrackerLayout>& layout() const { return layout_; }
    PolicyCache& cache() { return *cache_; }
    const std::shared_ptr<PolicyCache>& cache_ptr() const { return cache_; }

    BeliefSolver& fallback_solver() {
        std::lock_guard lock(mutex_);
        if (!fallback_) fallback_ = std::make_unique<BeliefSolver>(truth_, config_.params);
        return *fallback_;
    }
    std::size_t fallback_expansions() const {
        std::lock_guard lock(mutex_);
        return fallback_ ? fallback_->expansions() : 0;
    }

    /// Planner state for one episode; can also be driven along an external
    /// trajectory to query what the model would do next.
    class Agent {
    public:
        Agent(GmpPlanner& planner, Position exit)
            : planner_(&planner), world_(planner.problem().map().with_exit(exit)),
              tracker_(world_, planner.layout(), planner.problem().visibility()) {
            tracker_.start(world_.start());
            after_observation();
        }
        // The tracker points into world_.
        Agent(const Agent&) = delete;
        Agent& operator=(const Agent&) = delete;

        void move(Position p) {
            if (!world_.is_floor(p) || manhattan(p, tracker_.agent()) > 1)
                throw std::invalid_argument("illegal move to " + to_string(p));
            tracker_.move(p);
            ++steps_;
            after_observation();
        }

        std::vector<Action> action_set() {
            const Position agent = tracker_.agent();
            if (tracker_.exit_seen()) {
                if (agent == *tracker_.exit()) return {};
                return navigate({*tracker_.exit()}, std::nullopt);
            }
            if (fallback_) return eu_actions();
            if (auto cur = tracker_.current()) {
                // Walked out of the occurrence before finishing it (only
                // replayed trajectories do this): head back in.
                const auto& o = tracker_.occurrences()[static_cast<std::size_t>(*cur)];
                auto acts = o.contains(world_.index(agent)) ? policy_actions(*cur) : occurrence_actions(*cur);
                if (!acts.empty()) return acts;
                trigger_fallback();
                return eu_actions();
            }
            if (auto target = tracker_.target()) {
                auto acts = occurrence_actions(*target);
                if (!acts.empty()) return acts;
                trigger_fallback();
                return eu_actions();
            }
            // Every occurrence explored (or none reachable): search the rest.
            return eu_actions();
        }

        const ModularTracker& tracker() const { return tracker_; }
        bool fallback() const { return fallback_; }
        std::optional<std::size_t> fallback_step() const { return fallback_step_; }
        std::size_t cache_hits() const { return hits_; }
        std::size_t cache_misses() const { return misses_; }
        const GridMap& world() const { return world_; }

    private:
        void after_observation() {
            const CellSet& vis = planner_->problem().visible_from(world_.index(tracker_.agent()));
            if (!fallback_) {
                const Observation obs = make_observation(world_, vis, tracker_.agent(), world_.exit());
                if (!consistency_check(obs, tracker_.reconstruction()).consistent) trigger_fallback();
            }
            if (fallback_) return;
            const auto cur = tracker_.current();
            if (cur && cur != last_current_) {
                const Occurrence& o = tracker_.occurrences()[static_cast<std::size_t>(*cur)];
                Position entry = o.to_local(tracker_.agent());
                auto lookup = planner_->cache().get(o.canonical, entry);
                (lookup.hit ? hits_ : misses_) += 1;
                policy_.emplace(lookup.policy, Transform{o.to_map, o.origin});
            }
            last_current_ = cur;
        }

        void trigger_fallback() {
            if (fallback_) return;
            fallback_ = true;
            fallback_step_ = steps_;
        }

        std::vector<Action> occurrence_actions(int occ) {
            std::vector<Position> cells;
            const auto pass = tracker_.passable();
            tracker_.occurrences()[static_cast<std::size_t>(occ)].floor.for_each([&](int c) {
                if (pass[static_cast<std::size_t>(c)]) cells.push_back(world_.position(c));
            });
            return cells.empty() ? std::vector<Action>{} : navigate(cells, occ);
        }

        std::vector<Action> policy_actions(int occ) {
            if (!policy_) return {};
            const CellSet& observed = tracker_.observed();
            auto acts = policy_->actions(tracker_.agent(), [&](Position p) { return !observed.contains(world_.index(p)); });
            // A move the agent already knows runs into a wall means the
            // fragment no longer describes this part of the map.
            const auto pass = tracker_.passable();
            std::vector<Action> out;
            for (Action a : acts) {
                const Position q = moved(tracker_.agent(), a);
                if (world_.in_bounds(q) && pass[static_cast<std::size_t>(world_.index(q))]) out.push_back(a);
            }
            (void)occ;
            return out;
        }

        /// With `heading_for` set, other unexplored occurrences are avoided
        /// when possible.
        std::vector<Action> navigate(const std::vector<Position>& targets, std::optional<int> heading_for) {
            auto pass = tracker_.passable();
            if (heading_for) {
                auto blocked = pass;
                const auto target = heading_for;
                for (std::size_t i = 0; i < tracker_.occurrences().size(); ++i) {
                    if (tracker_.done(static_cast<int>(i)) || static_cast<int>(i) == target) continue;
                    tracker_.occurrences()[i].floor.for_each([&](int c) { blocked[static_cast<std::size_t>(c)] = 0; });
                }
                blocked[static_cast<std::size_t>(world_.index(tracker_.agent()))] = 1;
                for (Position t : targets) blocked[static_cast<std::size_t>(world_.index(t))] = 1;
                auto acts = descend(world_, value_iteration(world_.height(), world_.width(), blocked, targets), tracker_.agent());
                if (!acts.empty()) return acts;
            }
            pass[static_cast<std::size_t>(world_.index(tracker_.agent()))] = 1;
            return descend(world_, value_iteration(world_.height(), world_.width(), pass, targets), tracker_.agent());
        }

        std::vector<Action> eu_actions() {
            const CellSet hidden = planner_->problem().floor() - tracker_.observed();
            if (hidden.empty()) throw std::logic_error("no exit hypotheses remain");
            return planner_->fallback_solver().best_actions(Belief{tracker_.agent(), hidden, std::nullopt});
        }

        GmpPlanner* planner_;
        GridMap world_;
        ModularTracker tracker_;
        bool fallback_ = false;
        std::optional<std::size_t> fallback_step_;
        std::size_t steps_ = 0;
        std::optional<int> last_current_;
        std::optional<TransformedPolicy> policy_;
        std::size_t hits_ = 0;
        std::size_t misses_ = 0;
    };

    Agent agent(Position exit) { return Agent(*this, exit); }

    EpisodeTrace plan_episode(Position exit, std::uint64_t seed) {
        const GridMap& map = truth_->map();
        if (!map.is_floor(exit)) throw InvalidPosition(exit, "exit is not a floor cell");
        const std::size_t exp_before = cache_->expansions() + fallback_expansions();
        std::mt19937_64 rng(seed);
        Agent a(*this, exit);
        EpisodeTrace trace;
        trace.map_id = map.id();
        trace.model = "gmp";
        CellSet observed = truth_->visible_from(map.index(map.start()));
        {
            TraceStep first{map.start(), std::nullopt, {}};
            observed.for_each([&](int i) { first.revealed.push_back(map.position(i)); });
            trace.steps.push_back(std::move(first));
        }
        const std::size_t cap = static_cast<std::size_t>(map.cell_count()) * 8 + 16;
        Position pos = map.start();
        while (pos != exit) {
            if (trace.steps.size() > cap) throw std::runtime_error("gmp episode exceeded step cap on " + map.id());
            const auto acts = a.action_set();
            if (acts.empty()) throw UnreachableRegion("no action leads towards the exit from " + to_string(pos));
            const Action act = pick_uniform(acts, rng);
            pos = transition(map, pos, act);
            a.move(pos);
            const CellSet& vis = truth_->visible_from(map.index(pos));
            TraceStep s{pos, act, {}};
            (vis - observed).for_each([&](int i) { s.revealed.push_back(map.position(i)); });
            observed |= vis;
            trace.steps.push_back(std::move(s));
        }
        trace.reached_exit = true;
        trace.stats.expansions = cache_->expansions() + fallback_expansions() - exp_before;
        trace.stats.cache_hits = a.cache_hits();
        trace.stats.cache_misses = a.cache_misses();
        trace.stats.memo_bytes = cache_->memo_bytes();
        trace.stats.fallback = a.fallback();
        trace.stats.fallback_step = a.fallback_step();
        return trace;
    }

private:
    std::shared_ptr<const SearchProblem> truth_;
    GmpConfig config_;
    std::shared_ptr<PolicyCache> cache_;
    std::shared_ptr<const TrackerLayout> layout_;
    mutable std::mutex mutex_;
    std::unique_ptr<BeliefSolver> fallback_;
};

/// One-off episode from a world state.
inline EpisodeTrace plan_episode(const WorldState& state, const GmpConfig& config, std::uint64_t seed) {
    if (state.agent != state.map->start()) throw std::invalid_argument("episodes start at the map's start cell");
    GmpPlanner planner(std::make_shared<const SearchProblem>(state.map), config);
    return planner.plan_episode(state.exit, seed);
}

}  // namespace fragplan
