#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fragplan/belief.hpp"
#include "fragplan/trace.hpp"

namespace fragplan {

enum class Objective { expected_utility, discounted_utility };

struct PlannerParams {
    Objective mode = Objective::expected_utility;
    /// Only read in discounted mode.
    double gamma = 1.0;
    bool memoize = true;

    static PlannerParams expected_utility() { return {}; }
    static PlannerParams discounted(double gamma) {
        PlannerParams p{Objective::discounted_utility, gamma, true};
        p.validate();
        return p;
    }

    void validate() const {
        if (mode == Objective::discounted_utility && !(gamma > 0.0 && gamma < 1.0))
            throw std::invalid_argument("discounted utility requires 0 < gamma < 1");
    }
};

inline constexpr double kValueTolerance = 1e-9;

struct ValueResult {
    /// Expected steps (expected utility) or E[gamma^steps] (discounted).
    double value = 0;
    /// Full argmax set; empty only when the agent already stands on the exit.
    std::vector<Action> best_actions;
    std::size_t expansions = 0;
};

/// Exact belief-space tree search over (agent cell, hypothesis set) nodes.
///
/// Between reveals the belief does not change, so a node's value is the best
/// over every cell that would reveal at least one hypothesis, reached by a
/// shortest path through non-revealing cells. Each reveal strictly shrinks the
/// hypothesis set, which makes the recursion well founded; this is the same
/// fixed point as the per-step Bellman recursion but without its cycles.
class BeliefSolver {
public:
    BeliefSolver(std::shared_ptr<const SearchProblem> problem, PlannerParams params)
        : problem_(std::move(problem)), params_(params) {
        params_.validate();
        const int n = problem_->map().cell_count();
        powers_.resize(static_cast<std::size_t>(n) + 2);
        double g = 1.0;
        for (auto& p : powers_) {
            p = g;
            g *= params_.gamma;
        }
    }

    const SearchProblem& problem() const { return *problem_; }
    const PlannerParams& params() const { return params_; }

    ValueResult evaluate(const Belief& b) {
        std::lock_guard lock(mutex_);
        ValueResult r;
        r.value = value_locked(b);
        r.best_actions = best_actions_locked(b);
        r.expansions = expansions_;
        return r;
    }

    double value(const Belief& b) {
        std::lock_guard lock(mutex_);
        return value_locked(b);
    }

    std::vector<Action> best_actions(const Belief& b) {
        std::lock_guard lock(mutex_);
        return best_actions_locked(b);
    }

    /// Value of taking `a` from a belief whose current cell has already been
    /// observed.
    double action_value(const Belief& b, Action a) {
        std::lock_guard lock(mutex_);
        return q_settled(b, a);
    }

    std::size_t expansions() const { return expansions_; }
    std::size_t memo_entries() const { return v_memo_.size() + w_memo_.size(); }
    std::size_t memo_bytes() const {
        const std::size_t words = static_cast<std::size_t>((problem_->map().cell_count() + 63) / 64);
        return memo_entries() * (sizeof(Key) + words * sizeof(std::uint64_t) + sizeof(double) + 2 * sizeof(void*));
    }

    bool better(double a, double b) const { return eu() ? a < b - kValueTolerance : a > b + kValueTolerance; }
    bool ties(double a, double b) const { return std::abs(a - b) <= kValueTolerance; }

private:
    struct Key {
        int cell;
        CellSet set;
        friend bool operator==(const Key&, const Key&) = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            const auto [a, b] = k.set.fingerprint();
            return static_cast<std::size_t>(a ^ (b * 31) ^ (static_cast<std::uint64_t>(k.cell) * 0x9e3779b97f4a7c15ULL));
        }
    };

    bool eu() const { return params_.mode == Objective::expected_utility; }
    double worst() const { return eu() ? std::numeric_limits<double>::infinity() : -1.0; }
    double after_steps(int steps, double inner) const {
        return eu() ? steps + inner : powers_[static_cast<std::size_t>(steps)] * inner;
    }
    double known_exit_value(int from, int exit) const {
        const int d = problem_->distance(from, exit);
        if (d == kUnreachable) throw UnreachableRegion("no path to exit hypothesis " + to_string(problem_->map().position(exit)));
        return eu() ? d : powers_[static_cast<std::size_t>(d)];
    }

    bool reveals(int cell, const CellSet& h) const { return problem_->visible_from(cell).intersects(h); }

    double value_locked(const Belief& b) {
        const GridMap& map = problem_->map();
        const int cell = map.index(b.agent);
        if (b.known_exit) return known_exit_value(cell, map.index(*b.known_exit));
        if (b.hypotheses.empty()) throw std::logic_error("belief has neither hypotheses nor a known exit");
        return reveals(cell, b.hypotheses) ? observe_value(cell, b.hypotheses) : settled_value(cell, b.hypotheses);
    }

    // Value of observing at `cell` (which reveals at least one hypothesis).
    double observe_value(int cell, const CellSet& h) {
        if (params_.memoize) {
            Key key{cell, h};
            if (auto it = w_memo_.find(key); it != w_memo_.end()) return it->second;
            const double v = observe_value_uncached(cell, h);
            w_memo_.emplace(std::move(key), v);
            return v;
        }
        return observe_value_uncached(cell, h);
    }

    double observe_value_uncached(int cell, const CellSet& h) {
        const CellSet& vis = problem_->visible_from(cell);
        const int total = h.size();
        double found = 0;
        int k = 0;
        h.for_each([&](int c) {
            if (!vis.contains(c)) return;
            ++k;
            found += known_exit_value(cell, c);
        });
        double v = found / total;
        if (k < total) v += static_cast<double>(total - k) / total * settled_value(cell, h - vis);
        return v;
    }

    // Value of a node whose current cell reveals nothing new.
    double settled_value(int cell, const CellSet& h) {
        if (params_.memoize) {
            Key key{cell, h};
            if (auto it = v_memo_.find(key); it != v_memo_.end()) return it->second;
            const double v = settled_value_uncached(cell, h);
            v_memo_.emplace(std::move(key), v);
            return v;
        }
        return settled_value_uncached(cell, h);
    }

    double settled_value_uncached(int cell, const CellSet& h) {
        ++expansions_;
        const GridMap& map = problem_->map();
        const int n = map.cell_count();
        std::vector<int> dist(static_cast<std::size_t>(n), -1);
        std::vector<int> queue;
        queue.reserve(static_cast<std::size_t>(n));
        queue.push_back(cell);
        dist[static_cast<std::size_t>(cell)] = 0;
        double best = worst();
        bool any = false;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const int cur = queue[head];
            const Position p = map.position(cur);
            for (Action a : kActions) {
                const Position q = moved(p, a);
                if (!map.is_floor(q)) continue;
                const int qi = map.index(q);
                if (dist[static_cast<std::size_t>(qi)] >= 0) continue;
                dist[static_cast<std::size_t>(qi)] = dist[static_cast<std::size_t>(cur)] + 1;
                if (reveals(qi, h)) {
                    const double v = after_steps(dist[static_cast<std::size_t>(qi)], observe_value(qi, h));
                    if (!any || better(v, best)) best = v;
                    any = true;
                } else {
                    queue.push_back(qi);
                }
            }
        }
        if (!any)
            throw UnreachableRegion("no reachable cell reveals the remaining " + std::to_string(h.size()) + " hypotheses from " +
                                    to_string(map.position(cell)));
        return best;
    }

    // Q(b, a) for a belief whose current cell has been observed.
    double q_settled(const Belief& b, Action a) {
        const GridMap& map = problem_->map();
        const Position next = moved(b.agent, a);
        if (!map.is_floor(next)) return worst();
        const int ni = map.index(next);
        if (b.known_exit) return after_steps(1, known_exit_value(ni, map.index(*b.known_exit)));
        return after_steps(1, reveals(ni, b.hypotheses) ? observe_value(ni, b.hypotheses) : settled_value(ni, b.hypotheses));
    }

    std::vector<Action> argbest(const std::vector<double>& q) const {
        double best = worst();
        bool any = false;
        for (double v : q) {
            if (v == worst()) continue;
            if (!any || better(v, best)) best = v;
            any = true;
        }
        std::vector<Action> out;
        if (!any) return out;
        for (std::size_t i = 0; i < q.size(); ++i)
            if (q[i] != worst() && ties(q[i], best)) out.push_back(kActions[i]);
        return out;
    }

    std::vector<Action> best_actions_locked(const Belief& b) {
        const GridMap& map = problem_->map();
        const int cell = map.index(b.agent);
        std::vector<double> q(kActions.size(), worst());
        if (b.known_exit) {
            if (b.agent == *b.known_exit) return {};
            for (std::size_t i = 0; i < kActions.size(); ++i) q[i] = q_settled(b, kActions[i]);
            return argbest(q);
        }
        if (!reveals(cell, b.hypotheses)) {
            for (std::size_t i = 0; i < kActions.size(); ++i) q[i] = q_settled(b, kActions[i]);
            return argbest(q);
        }
        // The current cell still has to be observed: rank each first move by
        // its expectation over the observation made here.
        const CellSet& vis = problem_->visible_from(cell);
        const int total = b.hypotheses.size();
        const CellSet seen = b.hypotheses & vis;
        const CellSet rest = b.hypotheses - vis;
        for (std::size_t i = 0; i < kActions.size(); ++i) {
            const Position next = moved(b.agent, kActions[i]);
            if (!map.is_floor(next)) continue;
            double acc = 0;
            seen.for_each([&](int c) { acc += after_steps(1, known_exit_value(map.index(next), c)) / total; });
            if (!rest.empty()) {
                Belief nf{b.agent, rest, std::nullopt};
                acc += static_cast<double>(rest.size()) / total * q_settled(nf, kActions[i]);
            }
            q[i] = acc;
        }
        return argbest(q);
    }

    std::shared_ptr<const SearchProblem> problem_;
    PlannerParams params_;
    std::vector<double> powers_;
    std::unordered_map<Key, double, KeyHash> v_memo_;
    std::unordered_map<Key, double, KeyHash> w_memo_;
    std::size_t expansions_ = 0;
    std::mutex mutex_;
};

/// One-shot evaluation with a private memo table.
inline ValueResult expected_value(std::shared_ptr<const SearchProblem> problem, const Belief& b, PlannerParams params) {
    BeliefSolver solver(std::move(problem), params);
    return solver.evaluate(b);
}

/// Runs a belief-space planner against a ground-truth exit until it is
/// reached. Ties are broken uniformly with the seeded generator.
inline EpisodeTrace run_belief_episode(BeliefSolver& solver, Position exit, std::uint64_t seed, std::string model_name) {
    const SearchProblem& problem = solver.problem();
    const GridMap& map = problem.map();
    std::mt19937_64 rng(seed);
    const std::size_t expansions_before = solver.expansions();
    WorldState state = WorldState::initial(problem.map_ptr(), exit);
    EpisodeTrace trace;
    trace.map_id = map.id();
    trace.model = std::move(model_name);
    CellSet observed = problem.visible_from(map.index(state.agent));
    Observation obs = observe(state, problem.visibility());
    Belief belief = condition_on(problem, Belief{state.agent, problem.floor(), std::nullopt}, obs);
    {
        TraceStep first{state.agent, std::nullopt, {}};
        observed.for_each([&](int i) { first.revealed.push_back(map.position(i)); });
        trace.steps.push_back(std::move(first));
    }
    const std::size_t cap = static_cast<std::size_t>(map.cell_count()) * 8 + 16;
    while (!state.terminal) {
        if (trace.steps.size() > cap) throw std::runtime_error("episode exceeded step cap");
        const auto actions = solver.best_actions(belief);
        if (actions.empty()) throw std::logic_error("planner returned no action");
        const Action a = pick_uniform(actions, rng);
        state = step(state, a);
        obs = observe(state, problem.visibility());
        const CellSet& vis = problem.visible_from(map.index(state.agent));
        TraceStep s{state.agent, a, {}};
        (vis - observed).for_each([&](int i) { s.revealed.push_back(map.position(i)); });
        observed |= vis;
        trace.steps.push_back(std::move(s));
        belief = belief_update(problem, belief, a, obs);
    }
    trace.reached_exit = true;
    trace.stats.expansions = solver.expansions() - expansions_before;
    trace.stats.memo_bytes = solver.memo_bytes();
    return trace;
}

}  // namespace fragplan
