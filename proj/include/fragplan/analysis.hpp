#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fragplan/corpus.hpp"
#include "fragplan/gmp.hpp"
#include "fragplan/occurrences.hpp"
#include "fragplan/solver.hpp"
#include "fragplan/trajectory.hpp"

namespace fragplan {

// ---------------------------------------------------------------- models

/// An agent that can be walked along any trajectory and asked for its
/// argmax action set at each state.
class ModelAgent {
public:
    virtual ~ModelAgent() = default;
    virtual void move(Position p) = 0;
    /// Empty once the agent stands on the exit.
    virtual std::vector<Action> action_set() = 0;
};

class Model {
public:
    virtual ~Model() = default;
    virtual std::string name() const = 0;
    virtual std::unique_ptr<ModelAgent> start(Position exit) = 0;
};

/// EU or DU over the belief; one solver (and memo) shared by all agents.
class BeliefModel : public Model {
public:
    BeliefModel(std::shared_ptr<BeliefSolver> solver, std::string name) : solver_(std::move(solver)), name_(std::move(name)) {}
    BeliefModel(std::shared_ptr<const SearchProblem> problem, PlannerParams params)
        : BeliefModel(std::make_shared<BeliefSolver>(problem, params),
                      params.mode == Objective::expected_utility ? "eu" : "du") {}

    std::string name() const override { return name_; }
    BeliefSolver& solver() { return *solver_; }

    std::unique_ptr<ModelAgent> start(Position exit) override { return std::make_unique<Agent>(*solver_, exit); }

private:
    class Agent : public ModelAgent {
    public:
        Agent(BeliefSolver& solver, Position exit) : solver_(&solver), exit_(exit) {
            const SearchProblem& pr = solver.problem();
            if (!pr.map().is_floor(exit)) throw InvalidPosition(exit, "exit is not a floor cell");
            const Position s = pr.map().start();
            belief_ = condition_on(pr, Belief{s, pr.floor(), std::nullopt},
                                   make_observation(pr.map(), pr.visible_from(pr.map().index(s)), s, exit_));
        }
        void move(Position p) override {
            const SearchProblem& pr = solver_->problem();
            const auto a = action_between(belief_.agent, p);
            if (!a || !pr.map().is_floor(p)) throw std::invalid_argument("illegal move to " + to_string(p));
            belief_ = belief_update(pr, belief_, *a, make_observation(pr.map(), pr.visible_from(pr.map().index(p)), p, exit_));
        }
        std::vector<Action> action_set() override {
            if (belief_.agent == exit_) return {};
            return solver_->best_actions(belief_);
        }

    private:
        BeliefSolver* solver_;
        Position exit_;
        Belief belief_;
    };

    std::shared_ptr<BeliefSolver> solver_;
    std::string name_;
};

class GmpModel : public Model {
public:
    explicit GmpModel(std::shared_ptr<GmpPlanner> planner) : planner_(std::move(planner)) {}
    std::string name() const override { return "gmp"; }
    GmpPlanner& planner() { return *planner_; }

    std::unique_ptr<ModelAgent> start(Position exit) override { return std::make_unique<Agent>(*planner_, exit); }

private:
    class Agent : public ModelAgent {
    public:
        Agent(GmpPlanner& planner, Position exit) : agent_(planner, exit) {}
        void move(Position p) override { agent_.move(p); }
        std::vector<Action> action_set() override { return agent_.action_set(); }

    private:
        GmpPlanner::Agent agent_;
    };

    std::shared_ptr<GmpPlanner> planner_;
};

/// Runs a model with uniform tie-breaking until it reaches the exit.
inline Trajectory simulate(Model& model, const GridMap& map, Position exit, std::uint64_t seed, std::string session = {}) {
    std::mt19937_64 rng(seed);
    auto agent = model.start(exit);
    Trajectory t{map.id(), model.name(), std::move(session), {map.start()}, TrajectorySource::simulated, false, exit};
    const std::size_t cap = static_cast<std::size_t>(map.cell_count()) * 8 + 16;
    while (t.positions.back() != exit) {
        if (t.positions.size() > cap) throw std::runtime_error("episode exceeded step cap on " + map.id());
        const auto acts = agent->action_set();
        if (acts.empty()) throw std::logic_error(model.name() + " returned no action on " + map.id());
        const Position next = transition(map, t.positions.back(), pick_uniform(acts, rng));
        agent->move(next);
        t.positions.push_back(next);
    }
    t.complete = true;
    return t;
}

inline bool disjoint(const std::vector<Action>& a, const std::vector<Action>& b) {
    for (Action x : a)
        if (std::find(b.begin(), b.end(), x) != b.end()) return false;
    return true;
}

inline bool contains(const std::vector<Action>& a, Action x) { return std::find(a.begin(), a.end(), x) != a.end(); }

// ------------------------------------------------------------ modularity

struct ModularityResult {
    bool modular = false;
    bool violated = false;
    bool exit_seen = false;
    bool all_done = false;
    /// Index into the positions where the order was first broken.
    std::optional<std::size_t> violation_step;
};

/// Replays a trajectory through the tracker. Modular means occurrences were
/// entered nearest-first, none was left before it was fully observed, and the
/// walk either saw the exit or explored every occurrence.
inline ModularityResult is_modular(const Trajectory& t, const GridMap& truth, std::shared_ptr<const TrackerLayout> layout,
                                   const VisibilityTable& vis) {
    validate_trajectory(t, truth);
    ModularTracker tracker(truth, std::move(layout), vis);
    ModularityResult r;
    tracker.start(t.positions.front());
    if (tracker.violated()) r.violation_step = 0;
    for (std::size_t k = 1; k < t.positions.size(); ++k) {
        tracker.move(t.positions[k]);
        if (tracker.violated() && !r.violation_step) r.violation_step = k;
    }
    r.violated = tracker.violated();
    r.exit_seen = tracker.exit_seen();
    r.all_done = tracker.all_done();
    r.modular = !r.violated && (r.exit_seen || r.all_done);
    return r;
}

inline ModularityResult is_modular(const Trajectory& t, const GridMap& truth, const MapProgram& program, const VisibilityTable& vis) {
    if (program.height != truth.height() || program.width != truth.width())
        throw std::invalid_argument("program dimensions do not match map " + truth.id());
    return is_modular(t, truth, std::make_shared<const TrackerLayout>(program), vis);
}

struct ModularityRecord {
    std::string agent;
    std::string map_id;
    bool modular = false;
};

struct Rate {
    int modular = 0;
    int total = 0;
    double fraction() const { return total ? static_cast<double>(modular) / total : 0.0; }
};

struct ModularityRates {
    std::map<std::string, Rate> by_agent;
    std::map<std::string, Rate> by_map;
    Rate overall;
};

inline ModularityRates modularity_rates(const std::vector<ModularityRecord>& records) {
    if (records.empty()) throw std::invalid_argument("no trajectories to summarize");
    ModularityRates out;
    for (const auto& r : records) {
        for (Rate* rate : {&out.by_agent[r.agent], &out.by_map[r.map_id], &out.overall}) {
            rate->total += 1;
            rate->modular += r.modular ? 1 : 0;
        }
    }
    return out;
}

// ------------------------------------------------- discriminating states

struct DiscriminatingDecision {
    std::string map_id;
    Position agent;
    CellSet observed;
    std::vector<Action> a;
    std::vector<Action> b;
};

/// States along the candidate trajectories where the two models' argmax
/// sets are disjoint, deduplicated by (agent cell, observed cells).
inline std::vector<DiscriminatingDecision> discriminating_decisions(const SearchProblem& problem, Model& a, Model& b,
                                                                    const std::vector<Trajectory>& candidates) {
    const GridMap& map = problem.map();
    std::vector<DiscriminatingDecision> out;
    std::set<std::pair<int, CellSet>> seen;
    for (const auto& t : candidates) {
        if (!t.exit) throw InvalidTrajectory("candidate trajectory on " + t.map_id + " has no exit");
        validate_trajectory(t, map.with_exit(t.exit));
        auto ma = a.start(*t.exit);
        auto mb = b.start(*t.exit);
        CellSet observed(map.cell_count());
        for (std::size_t k = 0; k < t.positions.size(); ++k) {
            const Position p = t.positions[k];
            if (k > 0) {
                ma->move(p);
                mb->move(p);
            }
            observed |= problem.visible_from(map.index(p));
            if (!seen.emplace(map.index(p), observed).second) continue;
            auto sa = ma->action_set();
            auto sb = mb->action_set();
            if (sa.empty() || sb.empty() || !disjoint(sa, sb)) continue;
            out.push_back({map.id(), p, observed, std::move(sa), std::move(sb)});
        }
    }
    return out;
}

/// One simulated trajectory per model for every exit hidden from the start.
inline std::vector<Trajectory> candidate_trajectories(const SearchProblem& problem, const std::vector<Model*>& models,
                                                      std::uint64_t seed) {
    const GridMap& map = problem.map();
    const CellSet hidden = problem.floor() - problem.visible_from(map.index(map.start()));
    std::vector<Trajectory> out;
    hidden.for_each([&](int e) {
        for (std::size_t m = 0; m < models.size(); ++m)
            out.push_back(simulate(*models[m], map, map.position(e), mix_seed(seed, static_cast<std::uint64_t>(e) * models.size() + m)));
    });
    return out;
}

// ------------------------------------------------------------- agreement

struct Interval {
    double lo = 0;
    double hi = 0;
};

/// Percentile bootstrap of the mean, resampling the values with replacement.
/// The generator is consumed identically for every call with the same size.
inline Interval percentile_interval(std::vector<double> stats, double level) {
    std::sort(stats.begin(), stats.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(stats.size() - 1);
        const std::size_t i = static_cast<std::size_t>(std::floor(pos));
        const std::size_t j = std::min(i + 1, stats.size() - 1);
        return stats[i] + (pos - static_cast<double>(i)) * (stats[j] - stats[i]);
    };
    const double tail = (1.0 - level) / 2.0;
    return {q(tail), q(1.0 - tail)};
}

struct ParticipantAgreement {
    std::string participant;
    int states = 0;
    int with_a = 0;
    int with_b = 0;
    double frac_a = 0;
    double frac_b = 0;
    /// Mean fraction of legal moves in each model's set at the visited states.
    double chance_a = 0;
    double chance_b = 0;
};

struct AgreementReport {
    std::string model_a;
    std::string model_b;
    std::vector<ParticipantAgreement> participants;
    std::vector<std::string> excluded;
    std::vector<std::string> notes;
    double mean_a = 0;
    double mean_b = 0;
    Interval ci_a;
    Interval ci_b;
    /// Bootstrap interval of mean_a - mean_b.
    Interval ci_diff;
    double chance_a = 0;
    double chance_b = 0;
    /// Neither model's lower bound clears its chance level.
    bool low_agreement = true;
    int resamples = 0;
    std::uint64_t seed = 0;
};

struct AgreementConfig {
    int resamples = 10000;
    double level = 0.95;
    std::uint64_t seed = 0;
};

/// Per-map models and the map the humans walked (with its exit).
struct MapModels {
    std::shared_ptr<const SearchProblem> problem;
    Model* a = nullptr;
    Model* b = nullptr;
};

/// Means, chance levels and bootstrap intervals over rep.participants.
inline void summarize_agreement(AgreementReport& rep, const AgreementConfig& config) {
    if (config.resamples <= 0) throw std::invalid_argument("resamples must be positive");
    rep.resamples = config.resamples;
    rep.seed = config.seed;
    const std::size_t n = rep.participants.size();
    if (n == 0) {
        rep.notes.push_back("no participant visited a discriminating state");
        return;
    }
    for (const auto& p : rep.participants) {
        rep.mean_a += p.frac_a / static_cast<double>(n);
        rep.mean_b += p.frac_b / static_cast<double>(n);
        rep.chance_a += p.chance_a / static_cast<double>(n);
        rep.chance_b += p.chance_b / static_cast<double>(n);
    }
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> sa, sb, sd;
    sa.reserve(static_cast<std::size_t>(config.resamples));
    sb.reserve(sa.capacity());
    sd.reserve(sa.capacity());
    for (int r = 0; r < config.resamples; ++r) {
        double a = 0, b = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = rep.participants[pick(rng)];
            a += p.frac_a;
            b += p.frac_b;
        }
        sa.push_back(a / static_cast<double>(n));
        sb.push_back(b / static_cast<double>(n));
        sd.push_back((a - b) / static_cast<double>(n));
    }
    rep.ci_a = percentile_interval(sa, config.level);
    rep.ci_b = percentile_interval(sb, config.level);
    rep.ci_diff = percentile_interval(sd, config.level);
    rep.low_agreement = rep.ci_a.lo <= rep.chance_a && rep.ci_b.lo <= rep.chance_b;
    if (n < 2) rep.notes.push_back("one participant: the bootstrap interval is degenerate");
}

/// At each visited state where the models disagree completely, counts
/// whether the human's next move lies in exactly one model's set.
inline AgreementReport agreement(const std::vector<Trajectory>& humans,
                                 const std::function<MapModels(const std::string& map_id)>& lookup,
                                 AgreementConfig config = {}) {
    if (config.resamples <= 0) throw std::invalid_argument("resamples must be positive");
    AgreementReport rep;
    rep.resamples = config.resamples;
    rep.seed = config.seed;
    std::map<std::string, ParticipantAgreement> acc;
    std::map<std::string, std::pair<double, double>> chance_sum;
    std::vector<std::string> order;
    for (const auto& t : humans) {
        const MapModels mm = lookup(t.map_id);
        if (!mm.problem || !mm.a || !mm.b) throw std::invalid_argument("no models for maze " + t.map_id);
        const GridMap& map = mm.problem->map();
        const std::optional<Position> exit = t.exit ? t.exit : map.exit();
        if (!exit) throw InvalidTrajectory("no exit known for maze " + t.map_id);
        validate_trajectory(t, map.with_exit(exit));
        if (rep.model_a.empty()) {
            rep.model_a = mm.a->name();
            rep.model_b = mm.b->name();
        }
        if (!acc.count(t.agent)) {
            order.push_back(t.agent);
            acc[t.agent].participant = t.agent;
        }
        ParticipantAgreement& pa = acc[t.agent];
        auto& cs = chance_sum[t.agent];
        auto ma = mm.a->start(*exit);
        auto mb = mm.b->start(*exit);
        for (std::size_t k = 0; k + 1 < t.positions.size(); ++k) {
            if (k > 0) {
                ma->move(t.positions[k]);
                mb->move(t.positions[k]);
            }
            const auto sa = ma->action_set();
            const auto sb = mb->action_set();
            if (sa.empty() || sb.empty() || !disjoint(sa, sb)) continue;
            const Action h = *action_between(t.positions[k], t.positions[k + 1]);
            int legal = 0;
            for (Action x : kActions) legal += map.is_floor(moved(t.positions[k], x)) ? 1 : 0;
            pa.states += 1;
            pa.with_a += contains(sa, h) ? 1 : 0;
            pa.with_b += contains(sb, h) ? 1 : 0;
            cs.first += static_cast<double>(sa.size()) / legal;
            cs.second += static_cast<double>(sb.size()) / legal;
        }
    }
    for (const auto& id : order) {
        ParticipantAgreement pa = acc[id];
        if (pa.states == 0) {
            rep.excluded.push_back(id);
            rep.notes.push_back("participant " + id + " never visited a discriminating state and is excluded");
            continue;
        }
        pa.frac_a = static_cast<double>(pa.with_a) / pa.states;
        pa.frac_b = static_cast<double>(pa.with_b) / pa.states;
        pa.chance_a = chance_sum[id].first / pa.states;
        pa.chance_b = chance_sum[id].second / pa.states;
        rep.participants.push_back(pa);
    }
    summarize_agreement(rep, config);
    return rep;
}

// ------------------------------------------------ modular path probability

/// Probability that a tie-broken planner sweeps the map in modular order.
/// The sweep is run with no exit present, so it ends when every floor cell
/// has been observed; it is an upper bound on how often a real episode
/// breaks the order. With `exact` false the tree exceeded the budget and
/// the true value lies in [lo, hi].
struct PathProbability {
    double lo = 0;
    double hi = 0;
    bool exact = true;
    std::size_t states = 0;
    double value() const { return lo; }
};

/// Argmax set of the planner at a belief; must depend only on the belief.
using ActionOracle = std::function<std::vector<Action>(const Belief&)>;

inline PathProbability modular_path_probability(const SearchProblem& problem, std::shared_ptr<const TrackerLayout> layout,
                                                const ActionOracle& oracle, std::size_t budget = 200000) {
    const GridMap sweep_map = problem.map().with_exit(std::nullopt);
    struct Node {
        ModularTracker tracker;
        CellSet hypotheses;
        double mass;
    };
    using Key = decltype(std::declval<ModularTracker>().state_key());
    PathProbability out;
    std::map<Key, Node> frontier;
    {
        ModularTracker t(sweep_map, layout, problem.visibility());
        t.start(sweep_map.start());
        CellSet h = problem.floor() - t.observed();
        frontier.emplace(t.state_key(), Node{t, h, 1.0});
    }
    double modular = 0;
    const std::size_t cap = static_cast<std::size_t>(sweep_map.cell_count()) * 8 + 16;
    for (std::size_t depth = 0; !frontier.empty(); ++depth) {
        std::map<Key, Node> next;
        double open = 0;
        for (auto& [key, node] : frontier) {
            if (node.tracker.violated()) continue;
            if (node.hypotheses.empty()) {
                modular += node.mass;
                continue;
            }
            if (out.states >= budget || depth >= cap) {
                open += node.mass;
                continue;
            }
            ++out.states;
            const Position at = node.tracker.agent();
            const auto acts = oracle(Belief{at, node.hypotheses, std::nullopt});
            if (acts.empty()) throw std::logic_error("planner returned no action during the sweep");
            const double share = node.mass / static_cast<double>(acts.size());
            for (Action a : acts) {
                ModularTracker t = node.tracker;
                t.move(transition(sweep_map, at, a));
                auto k = t.state_key();
                auto it = next.find(k);
                if (it != next.end()) {
                    it->second.mass += share;
                } else {
                    CellSet h = node.hypotheses - t.observed();
                    next.emplace(std::move(k), Node{std::move(t), std::move(h), share});
                }
            }
        }
        if (open > 0) {
            out.exact = false;
            out.lo = modular;
            out.hi = modular + open;
            for (auto& [key, node] : next)
                if (!node.tracker.violated()) out.hi += node.mass;
            return out;
        }
        frontier = std::move(next);
    }
    out.lo = out.hi = modular;
    return out;
}

inline PathProbability modular_path_probability(BeliefSolver& solver, const MapProgram& program, std::size_t budget = 200000) {
    return modular_path_probability(solver.problem(), std::make_shared<const TrackerLayout>(program),
                                    [&](const Belief& b) { return solver.best_actions(b); }, budget);
}

}  // namespace fragplan
