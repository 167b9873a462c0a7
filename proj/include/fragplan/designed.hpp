#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fragplan/analysis.hpp"
#include "fragplan/corpus.hpp"

namespace fragplan {

/// What the filter measured on one generated candidate.
struct CandidateCheck {
    std::string id;  // id the maze would get if accepted
    std::uint64_t seed = 0;
    Layout layout = Layout::grid2x2;
    int size = 0;
    PathProbability eu_modular;
    std::size_t discriminating = 0;  // GMP vs EU states with disjoint argmax sets
    bool accepted = false;
};

struct FilteredCorpus {
    std::vector<GeneratedMaze> mazes;
    std::vector<CandidateCheck> checks;
    int attempts = 0;
};

/// Measures a candidate: probability that EU with uniform tie-breaks sweeps
/// the map modularly, and how many states separate GMP from EU.
inline CandidateCheck check_candidate(const GeneratedMaze& g, std::uint64_t seed) {
    CandidateCheck c;
    c.id = g.map.id();
    c.seed = g.seed;
    c.layout = g.layout;
    c.size = g.fragment_size;
    auto problem = std::make_shared<const SearchProblem>(g.map);
    auto eu_solver = std::make_shared<BeliefSolver>(problem, PlannerParams::expected_utility());
    c.eu_modular = modular_path_probability(*eu_solver, g.program);
    BeliefModel eu(eu_solver, "eu");
    GmpModel gmp(std::make_shared<GmpPlanner>(problem, GmpConfig{g.program, PlannerParams::expected_utility()}));
    const auto cands = candidate_trajectories(*problem, {&gmp, &eu}, seed);
    c.discriminating = discriminating_decisions(*problem, gmp, eu, cands).size();
    return c;
}

/// Without max_modular_probability this is generate_corpus. With it,
/// candidates are drawn in sequence and kept when EU is at most that likely
/// to act modularly and at least one state tells GMP and EU apart. Accepted
/// mazes are numbered in acceptance order.
inline FilteredCorpus generate_filtered_corpus(const CorpusSpec& spec, std::uint64_t seed) {
    FilteredCorpus out;
    if (!spec.max_modular_probability) {
        out.mazes = generate_corpus(spec, seed);
        out.attempts = spec.count;
        return out;
    }
    const int limit = spec.attempts > 0 ? spec.attempts : 10 * spec.count;
    const std::size_t nl = spec.layouts.size();
    for (int i = 0; i < limit && static_cast<int>(out.mazes.size()) < spec.count; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const Layout layout = spec.layouts[k % nl];
        const int s = spec.sizes[(k / nl) % spec.sizes.size()];
        const std::uint64_t ms = mix_seed(seed, k);
        GeneratedMaze g = generate_maze(maze_id(spec.name, static_cast<int>(out.mazes.size())), layout, s, spec.density, ms);
        CandidateCheck c = check_candidate(g, ms);
        c.accepted = c.eu_modular.hi <= *spec.max_modular_probability && c.discriminating > 0;
        ++out.attempts;
        if (c.accepted) out.mazes.push_back(std::move(g));
        out.checks.push_back(std::move(c));
    }
    if (static_cast<int>(out.mazes.size()) < spec.count)
        throw std::runtime_error("filter accepted " + std::to_string(out.mazes.size()) + " of " + std::to_string(spec.count) +
                                 " mazes in " + std::to_string(limit) + " attempts");
    return out;
}

}  // namespace fragplan
