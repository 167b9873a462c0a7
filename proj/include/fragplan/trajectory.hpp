#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fragplan/trace.hpp"
#include "fragplan/world.hpp"

namespace fragplan {

// Trajectory log: JSON Lines, one record per position visited (step 0 is the
// start cell and its initial reveal):
//   {"session":"s1","participant":"p1","maze":"m","step":0,"row":1,"col":1,
//    "revealed":[[0,0,"wall"],[1,2,"floor"]],"timestamp":"2026-01-01T00:00:00.000Z"}
// Revealed cells are the ones first seen at that step, in row-major order.

struct RevealedCell {
    Position cell;
    ObsLabel kind = ObsLabel::empty;
    friend bool operator==(const RevealedCell&, const RevealedCell&) = default;
};

inline std::string kind_name(ObsLabel l) {
    switch (l) {
        case ObsLabel::wall: return "wall";
        case ObsLabel::empty: return "floor";
        case ObsLabel::exit: return "exit";
        case ObsLabel::unseen: break;
    }
    throw std::invalid_argument("unseen cells are never revealed");
}

inline ObsLabel parse_kind(const std::string& s) {
    if (s == "wall") return ObsLabel::wall;
    if (s == "floor") return ObsLabel::empty;
    if (s == "exit") return ObsLabel::exit;
    throw std::invalid_argument("unknown cell kind '" + s + "'");
}

struct MoveRecord {
    std::string session;
    std::string participant;
    std::string maze;
    int step = 0;
    Position position;
    std::vector<RevealedCell> revealed;
    std::string timestamp;
    friend bool operator==(const MoveRecord&, const MoveRecord&) = default;
};

class InvalidTrajectory : public std::runtime_error {
public:
    explicit InvalidTrajectory(const std::string& what) : std::runtime_error("invalid trajectory: " + what) {}
};

inline nlohmann::ordered_json revealed_json(const std::vector<RevealedCell>& cells) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : cells) arr.push_back({c.cell.row, c.cell.col, kind_name(c.kind)});
    return arr;
}

inline std::string to_log_line(const MoveRecord& r) {
    nlohmann::ordered_json j;
    j["session"] = r.session;
    j["participant"] = r.participant;
    j["maze"] = r.maze;
    j["step"] = r.step;
    j["row"] = r.position.row;
    j["col"] = r.position.col;
    j["revealed"] = revealed_json(r.revealed);
    j["timestamp"] = r.timestamp;
    return j.dump();
}

inline MoveRecord parse_log_line(const std::string& line, int line_no = 1) {
    try {
        const auto j = nlohmann::json::parse(line);
        MoveRecord r;
        r.session = j.at("session").get<std::string>();
        r.participant = j.at("participant").get<std::string>();
        r.maze = j.at("maze").get<std::string>();
        r.step = j.at("step").get<int>();
        r.position = {j.at("row").get<int>(), j.at("col").get<int>()};
        for (const auto& c : j.at("revealed")) {
            if (!c.is_array() || c.size() != 3) throw std::invalid_argument("revealed entries are [row, col, kind]");
            r.revealed.push_back({{c[0].get<int>(), c[1].get<int>()}, parse_kind(c[2].get<std::string>())});
        }
        r.timestamp = j.at("timestamp").get<std::string>();
        return r;
    } catch (const std::exception& e) {
        throw ParseError(line_no, 1, e.what());
    }
}

inline std::vector<MoveRecord> parse_log(const std::string& text) {
    std::vector<MoveRecord> out;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        out.push_back(parse_log_line(line, n));
    }
    return out;
}

inline std::string write_log(const std::vector<MoveRecord>& records) {
    std::string out;
    for (const auto& r : records) out += to_log_line(r) + "\n";
    return out;
}

/// Cells newly visible from `at`, labelled by truth; adds them to `observed`.
inline std::vector<RevealedCell> reveal_delta(const GridMap& map, const CellSet& visible, CellSet& observed) {
    std::vector<RevealedCell> out;
    (visible - observed).for_each([&](int i) {
        ObsLabel l = map.is_wall_index(i) ? ObsLabel::wall : ObsLabel::empty;
        if (map.exit() && map.index(*map.exit()) == i) l = ObsLabel::exit;
        out.push_back({map.position(i), l});
    });
    observed |= visible;
    return out;
}

enum class TrajectorySource { human, simulated };

struct Trajectory {
    std::string map_id;
    /// Participant id or model name.
    std::string agent;
    std::string session;
    std::vector<Position> positions;
    TrajectorySource source = TrajectorySource::human;
    /// Ends on the exit.
    bool complete = false;
    /// Ground-truth exit of the episode, when known.
    std::optional<Position> exit;
};

/// Start at the map's start, one step to an adjacent floor cell at a time,
/// nothing after the exit.
inline void validate_trajectory(const Trajectory& t, const GridMap& map) {
    if (t.map_id != map.id()) throw InvalidTrajectory("trajectory for '" + t.map_id + "' checked against map '" + map.id() + "'");
    if (t.positions.empty()) throw InvalidTrajectory("no positions");
    if (t.positions.front() != map.start()) throw InvalidTrajectory("does not start at the start cell on " + map.id());
    for (std::size_t k = 0; k < t.positions.size(); ++k) {
        const Position p = t.positions[k];
        if (!map.is_floor(p)) throw InvalidTrajectory("step " + std::to_string(k) + " at " + to_string(p) + " is not floor on " + map.id());
        if (k > 0 && manhattan(p, t.positions[k - 1]) != 1)
            throw InvalidTrajectory("step " + std::to_string(k) + " is not adjacent to the previous position on " + map.id());
        if (map.exit() && p == *map.exit() && k + 1 != t.positions.size())
            throw InvalidTrajectory("continues past the exit on " + map.id());
    }
}

inline Trajectory trajectory_from_trace(const EpisodeTrace& trace, const std::string& session = {}) {
    Trajectory t{trace.map_id, trace.model, session, trace.positions(), TrajectorySource::simulated, trace.reached_exit, std::nullopt};
    if (trace.reached_exit && !t.positions.empty()) t.exit = t.positions.back();
    return t;
}

/// Log records for a trajectory, recomputing reveals from the map.
/// `timestamps` may be empty (simulations) or give one entry per step.
inline std::vector<MoveRecord> records_for(const Trajectory& t, const GridMap& map, const VisibilityTable& vis,
                                           const std::vector<std::string>& timestamps = {}) {
    validate_trajectory(t, map);
    if (!timestamps.empty() && timestamps.size() != t.positions.size())
        throw std::invalid_argument("one timestamp per step required");
    std::vector<MoveRecord> out;
    CellSet observed(map.cell_count());
    for (std::size_t k = 0; k < t.positions.size(); ++k) {
        const Position p = t.positions[k];
        MoveRecord r{t.session, t.agent, t.map_id, static_cast<int>(k), p, reveal_delta(map, vis.from(map.index(p)), observed),
                     timestamps.empty() ? std::string("1970-01-01T00:00:00.000Z") : timestamps[k]};
        out.push_back(std::move(r));
    }
    return out;
}

/// Groups records into trajectories by (session, maze), in order of first
/// appearance. Steps must be contiguous from 0 within each group.
inline std::vector<Trajectory> trajectories_from_log(const std::vector<MoveRecord>& records) {
    std::vector<Trajectory> out;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& r : records) {
        const auto key = std::make_pair(r.session, r.maze);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, out.size()).first;
            out.push_back(Trajectory{r.maze, r.participant, r.session, {}, TrajectorySource::human, false, std::nullopt});
        }
        Trajectory& t = out[it->second];
        if (r.step != static_cast<int>(t.positions.size()))
            throw InvalidTrajectory("session " + r.session + " maze " + r.maze + " has step " + std::to_string(r.step) + " out of order");
        if (r.participant != t.agent) throw InvalidTrajectory("session " + r.session + " changes participant");
        t.positions.push_back(r.position);
    }
    return out;
}

/// Replays the log through the world and checks every recorded reveal.
/// The exit of each episode is the cell the log reveals as the exit; an
/// episode that never saw it is checked against a map without one. This
/// lets one maze carry simulated episodes for many exit placements.
inline std::vector<Trajectory> replay_log(const std::vector<MoveRecord>& records,
                                          const std::function<const GridMap*(const std::string&)>& find_map,
                                          const std::function<const VisibilityTable*(const std::string&)>& find_vis = {}) {
    auto trajs = trajectories_from_log(records);
    std::map<std::pair<std::string, std::string>, std::vector<const MoveRecord*>> grouped;
    for (const auto& r : records) grouped[{r.session, r.maze}].push_back(&r);
    for (auto& t : trajs) {
        const GridMap* base = find_map(t.map_id);
        if (!base) throw InvalidTrajectory("unknown maze '" + t.map_id + "'");
        const auto& recs = grouped[{t.session, t.map_id}];
        std::optional<Position> exit;
        for (const auto* r : recs)
            for (const auto& c : r->revealed)
                if (c.kind == ObsLabel::exit) {
                    if (exit && *exit != c.cell) throw InvalidTrajectory("session " + t.session + " reveals two exits on " + t.map_id);
                    if (!base->is_floor(c.cell)) throw InvalidTrajectory("exit revealed on a wall in " + t.map_id);
                    exit = c.cell;
                }
        const GridMap map = base->with_exit(exit);
        std::unique_ptr<VisibilityTable> own;
        const VisibilityTable* vis = find_vis ? find_vis(t.map_id) : nullptr;
        if (!vis) {
            own = std::make_unique<VisibilityTable>(map, VisibilityParams{});
            vis = own.get();
        }
        validate_trajectory(t, map);
        CellSet observed(map.cell_count());
        for (std::size_t k = 0; k < recs.size(); ++k) {
            const auto expect = reveal_delta(map, vis->from(map.index(recs[k]->position)), observed);
            if (expect != recs[k]->revealed)
                throw InvalidTrajectory("session " + t.session + " maze " + t.map_id + " step " + std::to_string(k) +
                                        ": recorded reveals differ from the world");
        }
        t.exit = exit ? exit : base->exit();
        t.complete = exit && t.positions.back() == *exit;
    }
    return trajs;
}

}  // namespace fragplan
