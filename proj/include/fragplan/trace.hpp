#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fragplan/grid.hpp"

namespace fragplan {

struct TraceStep {
    Position position{};
    /// Unset for the initial observation at the start cell.
    std::optional<Action> action;
    std::vector<Position> revealed;
};

struct EpisodeStats {
    std::size_t expansions = 0;
    std::size_t cache_hits = 0;
    std::size_t cache_misses = 0;
    std::size_t memo_bytes = 0;
    bool fallback = false;
    std::optional<std::size_t> fallback_step;
};

/// One simulated episode: the first step is the initial observation.
struct EpisodeTrace {
    std::string map_id;
    std::string model;
    std::vector<TraceStep> steps;
    EpisodeStats stats;
    bool reached_exit = false;

    int steps_to_exit() const { return steps.empty() ? 0 : static_cast<int>(steps.size()) - 1; }

    std::vector<Position> positions() const {
        std::vector<Position> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.position);
        return out;
    }
};

/// Uniform pick among ties; the generator is only consulted when there is a
/// real choice so traces without ties do not depend on the seed.
template <typename T>
const T& pick_uniform(const std::vector<T>& options, std::mt19937_64& rng) {
    if (options.size() == 1) return options.front();
    std::uniform_int_distribution<std::size_t> dist(0, options.size() - 1);
    return options[dist(rng)];
}

}  // namespace fragplan
