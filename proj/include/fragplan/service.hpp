#pragma once

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fragplan/corpus.hpp"
#include "fragplan/trajectory.hpp"

namespace fragplan {

// Store layout under the log directory:
//   sessions.jsonl  one line per session: {"session","participant","corpus"}
//   moves.jsonl     trajectory log, one MoveRecord per line, append-only
// Both are appended by a single writer and synced before a request is
// answered, so a restart rebuilds every session from them.

class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
    int status;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

/// Append-only text file; every append is flushed and fsynced.
class DurableLog {
public:
    explicit DurableLog(const std::filesystem::path& path) : path_(path) {
        file_ = std::fopen(path.c_str(), "ab");
        if (!file_) throw std::runtime_error("cannot open " + path.string());
    }
    DurableLog(const DurableLog&) = delete;
    DurableLog& operator=(const DurableLog&) = delete;
    ~DurableLog() {
        if (file_) std::fclose(file_);
    }

    void append(const std::string& line) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fputc('\n', file_) == EOF ||
            std::fflush(file_) != 0 || ::fsync(fileno(file_)) != 0)
            throw std::runtime_error("write failed for " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::FILE* file_ = nullptr;
    std::mutex mutex_;
};

struct MoveResult {
    Position position;
    std::vector<RevealedCell> revealed;
    /// The session has no further mazes.
    bool terminal = false;
    /// This move reached the exit of the current maze.
    bool maze_done = false;
    std::optional<std::string> next_maze;
    /// Initial observation in the next maze, when one was loaded.
    std::optional<MoveRecord> next_start;
};

struct SessionView {
    std::string session;
    std::string participant;
    std::string corpus;
    std::string maze;
    int cursor = 0;
    int step = 0;
    Position position;
    bool finished = false;
};

class ExperimentService {
public:
    using Clock = std::function<std::string()>;

    ExperimentService(std::vector<Corpus> corpora, std::filesystem::path store, Clock clock = utc_timestamp,
                      std::uint64_t token_seed = std::random_device{}())
        : store_(std::move(store)), clock_(std::move(clock)), tokens_(token_seed) {
        for (auto& c : corpora) {
            if (corpora_.count(c.id)) throw std::invalid_argument("duplicate corpus '" + c.id + "'");
            auto data = std::make_shared<CorpusData>();
            for (auto& e : c.mazes) {
                if (!e.map.exit()) throw std::invalid_argument("maze " + e.map.id() + " in corpus " + c.id + " has no exit");
                if (mazes_.count(e.map.id())) throw std::invalid_argument("maze id " + e.map.id() + " appears twice");
                auto m = std::make_shared<MazeData>(MazeData{e.map, VisibilityTable(e.map, {})});
                mazes_[e.map.id()] = m;
                data->mazes.push_back(m);
            }
            data->corpus = std::move(c);
            corpora_[data->corpus.id] = data;
        }
        std::filesystem::create_directories(store_);
        recover();
        index_log_ = std::make_unique<DurableLog>(store_ / "sessions.jsonl");
        move_log_ = std::make_unique<DurableLog>(store_ / "moves.jsonl");
    }

    nlohmann::json corpora_json() const {
        auto out = nlohmann::json::array();
        for (const auto& [id, c] : corpora_) {
            nlohmann::json j{{"id", id}, {"mazes", nlohmann::json::array()}};
            for (const auto& m : c->mazes) j["mazes"].push_back(m->map.id());
            out.push_back(j);
        }
        return out;
    }

    /// Walls, size and start only; the exit is drawn as floor.
    nlohmann::json maze_json(const std::string& id) const {
        const auto it = mazes_.find(id);
        if (it == mazes_.end()) throw ServiceError(404, "unknown maze '" + id + "'");
        const GridMap& m = it->second->map;
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < m.height(); ++r) {
            std::string row;
            for (int c = 0; c < m.width(); ++c) row += m.is_wall({r, c}) ? '#' : '.';
            rows.push_back(row);
        }
        return {{"id", id}, {"height", m.height()}, {"width", m.width()}, {"rows", rows},
                {"start", {{"row", m.start().row}, {"col", m.start().col}}}};
    }

    /// New session at the first maze; returns it with the initial reveal.
    std::pair<SessionView, MoveRecord> create_session(const std::string& participant, const std::string& corpus) {
        const auto c = corpora_.find(corpus);
        if (c == corpora_.end()) throw ServiceError(404, "unknown corpus '" + corpus + "'");
        if (participant.empty()) throw ServiceError(400, "participant is required");
        auto s = std::make_shared<Session>();
        s->participant = participant;
        s->corpus = c->second;
        // Held until the first record is written so no one sees a half-made session.
        std::lock_guard<std::mutex> slock(s->mutex);
        {
            std::unique_lock<std::shared_mutex> lock(sessions_mutex_);
            do {
                s->id = new_token();
            } while (sessions_.count(s->id));
            index_log_->append(nlohmann::ordered_json{{"session", s->id}, {"participant", participant}, {"corpus", corpus}}.dump());
            sessions_[s->id] = s;
        }
        MoveRecord first = start_maze(*s);
        return {view(*s), first};
    }

    MoveResult move(const std::string& session, Position target) {
        auto s = find(session);
        std::lock_guard<std::mutex> lock(s->mutex);
        if (s->finished) throw ServiceError(409, "session " + session + " has no active maze");
        const MazeData& maze = *s->corpus->mazes[static_cast<std::size_t>(s->cursor)];
        if (!maze.map.in_bounds(target) || manhattan(target, s->position) != 1)
            throw ServiceError(409, "target " + to_string(target) + " is not adjacent to " + to_string(s->position));
        if (maze.map.is_wall(target)) throw ServiceError(409, "target " + to_string(target) + " is a wall");
        // Work on copies so a failed write leaves the session untouched.
        CellSet observed = s->observed;
        MoveRecord r{s->id, s->participant, maze.map.id(), s->step + 1, target,
                     reveal_delta(maze.map, maze.vis.from(maze.map.index(target)), observed), clock_()};
        move_log_->append(to_log_line(r));
        s->observed = std::move(observed);
        s->position = target;
        s->step = r.step;
        s->records.push_back(r);
        MoveResult out{target, r.revealed, false, false, std::nullopt, std::nullopt};
        if (target == *maze.map.exit()) {
            out.maze_done = true;
            ++s->cursor;
            if (s->cursor == static_cast<int>(s->corpus->mazes.size())) {
                s->finished = true;
                out.terminal = true;
            } else {
                out.next_start = start_maze(*s);
                out.next_maze = out.next_start->maze;
            }
        }
        return out;
    }

    SessionView session_view(const std::string& session) {
        auto s = find(session);
        std::lock_guard<std::mutex> lock(s->mutex);
        return view(*s);
    }

    /// Every record of one session, in log order.
    std::string export_session(const std::string& session) {
        auto s = find(session);
        std::lock_guard<std::mutex> lock(s->mutex);
        return write_log(s->records);
    }

    /// Completed sessions of a corpus, ordered by session id.
    std::string export_corpus(const std::string& corpus) {
        if (!corpora_.count(corpus)) throw ServiceError(404, "unknown corpus '" + corpus + "'");
        std::vector<std::shared_ptr<Session>> list;
        {
            std::shared_lock<std::shared_mutex> lock(sessions_mutex_);
            for (const auto& [id, s] : sessions_)
                if (s->corpus->corpus.id == corpus) list.push_back(s);
        }
        std::string out;
        for (const auto& s : list) {
            std::lock_guard<std::mutex> lock(s->mutex);
            if (s->finished) out += write_log(s->records);
        }
        return out;
    }

    const GridMap* find_map(const std::string& id) const {
        const auto it = mazes_.find(id);
        return it == mazes_.end() ? nullptr : &it->second->map;
    }

private:
    struct MazeData {
        GridMap map;
        VisibilityTable vis;
    };
    struct CorpusData {
        Corpus corpus;
        std::vector<std::shared_ptr<MazeData>> mazes;
    };
    struct Session {
        std::string id;
        std::string participant;
        std::shared_ptr<CorpusData> corpus;
        int cursor = 0;
        int step = 0;
        Position position;
        CellSet observed;
        bool finished = false;
        std::vector<MoveRecord> records;
        std::mutex mutex;
    };

    std::shared_ptr<Session> find(const std::string& id) {
        std::shared_lock<std::shared_mutex> lock(sessions_mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
        return it->second;
    }

    static SessionView view(const Session& s) {
        const bool done = s.finished;
        const auto& mazes = s.corpus->mazes;
        return {s.id, s.participant, s.corpus->corpus.id,
                done ? std::string() : mazes[static_cast<std::size_t>(s.cursor)]->map.id(), s.cursor, s.step, s.position, done};
    }

    // Caller holds the session lock.
    MoveRecord start_maze(Session& s) {
        const MazeData& maze = *s.corpus->mazes[static_cast<std::size_t>(s.cursor)];
        CellSet observed(maze.map.cell_count());
        const Position at = maze.map.start();
        MoveRecord r{s.id, s.participant, maze.map.id(), 0, at, reveal_delta(maze.map, maze.vis.from(maze.map.index(at)), observed), clock_()};
        move_log_->append(to_log_line(r));
        s.observed = std::move(observed);
        s.position = at;
        s.step = 0;
        s.records.push_back(r);
        return r;
    }

    std::string new_token() {
        std::uniform_int_distribution<std::uint64_t> d;
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d(tokens_)));
        return buf;
    }

    void recover() {
        const auto index = store_ / "sessions.jsonl";
        const auto moves = store_ / "moves.jsonl";
        if (std::filesystem::exists(index)) {
            std::istringstream in(read_text_file(index));
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                const auto c = corpora_.find(j.at("corpus").get<std::string>());
                if (c == corpora_.end()) throw std::runtime_error("stored session uses unknown corpus " + j.at("corpus").get<std::string>());
                auto s = std::make_shared<Session>();
                s->id = j.at("session").get<std::string>();
                s->participant = j.at("participant").get<std::string>();
                s->corpus = c->second;
                sessions_[s->id] = s;
            }
        }
        if (!std::filesystem::exists(moves)) return;
        for (auto& r : parse_log(read_text_file(moves))) {
            const auto it = sessions_.find(r.session);
            if (it == sessions_.end()) throw std::runtime_error("stored move for unknown session " + r.session);
            Session& s = *it->second;
            if (s.finished) throw std::runtime_error("stored move after session " + s.id + " finished");
            const MazeData* maze = s.corpus->mazes[static_cast<std::size_t>(s.cursor)].get();
            if (r.step == 0) {
                s.observed = CellSet(maze->map.cell_count());
            } else if (r.maze != maze->map.id() || r.step != s.step + 1) {
                throw std::runtime_error("stored log out of order for session " + s.id);
            }
            if (r.maze != maze->map.id()) throw std::runtime_error("stored log out of order for session " + s.id);
            if (reveal_delta(maze->map, maze->vis.from(maze->map.index(r.position)), s.observed) != r.revealed)
                throw std::runtime_error("stored reveals disagree with maze " + r.maze);
            s.position = r.position;
            s.step = r.step;
            s.records.push_back(r);
            if (r.position == *maze->map.exit()) {
                ++s.cursor;
                s.finished = s.cursor == static_cast<int>(s.corpus->mazes.size());
            }
        }
    }

    std::filesystem::path store_;
    Clock clock_;
    std::mt19937_64 tokens_;
    std::map<std::string, std::shared_ptr<CorpusData>> corpora_;
    std::map<std::string, std::shared_ptr<MazeData>> mazes_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::shared_mutex sessions_mutex_;
    std::unique_ptr<DurableLog> index_log_;
    std::unique_ptr<DurableLog> move_log_;
};

// ------------------------------------------------------------ wire format

inline nlohmann::json revealed_wire(const std::vector<RevealedCell>& cells) {
    auto arr = nlohmann::json::array();
    for (const auto& c : cells) arr.push_back({{"row", c.cell.row}, {"col", c.cell.col}, {"kind", kind_name(c.kind)}});
    return arr;
}

inline nlohmann::json start_wire(const MoveRecord& r) {
    return {{"maze", r.maze}, {"position", {{"row", r.position.row}, {"col", r.position.col}}}, {"revealed", revealed_wire(r.revealed)}};
}

inline nlohmann::json move_wire(const MoveResult& m) {
    nlohmann::json j{{"position", {{"row", m.position.row}, {"col", m.position.col}}},
                     {"revealed", revealed_wire(m.revealed)},
                     {"terminal", m.terminal},
                     {"maze_done", m.maze_done},
                     {"next_maze", m.next_maze ? nlohmann::json(*m.next_maze) : nlohmann::json(nullptr)}};
    if (m.next_start) j["start"] = start_wire(*m.next_start);
    return j;
}

inline void register_routes(httplib::Server& server, ExperimentService& service) {
    auto guarded = [](auto handler) {
        return [handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const ServiceError& e) {
                res.status = e.status;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            } catch (const nlohmann::json::exception& e) {
                res.status = 400;
                res.set_content(nlohmann::json{{"error", std::string("bad request: ") + e.what()}}.dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            }
        };
    };
    server.Get("/corpora", guarded([&](const httplib::Request&, httplib::Response& res) {
                   res.set_content(service.corpora_json().dump(), "application/json");
               }));
    server.Get(R"(/corpora/([^/]+)/export)", guarded([&](const httplib::Request& req, httplib::Response& res) {
                   res.set_content(service.export_corpus(req.matches[1]), "application/x-ndjson");
               }));
    server.Get(R"(/maze/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
                   res.set_content(service.maze_json(req.matches[1]).dump(), "application/json");
               }));
    server.Post("/sessions", guarded([&](const httplib::Request& req, httplib::Response& res) {
                    const auto body = nlohmann::json::parse(req.body);
                    const auto [view, first] =
                        service.create_session(body.at("participant").get<std::string>(), body.at("corpus").get<std::string>());
                    nlohmann::json j{{"session", view.session}, {"participant", view.participant}, {"corpus", view.corpus},
                                     {"cursor", view.cursor}, {"start", start_wire(first)}};
                    res.status = 201;
                    res.set_content(j.dump(), "application/json");
                }));
    server.Post(R"(/sessions/([^/]+)/moves)", guarded([&](const httplib::Request& req, httplib::Response& res) {
                    const auto body = nlohmann::json::parse(req.body);
                    const Position target{body.at("row").get<int>(), body.at("col").get<int>()};
                    res.set_content(move_wire(service.move(req.matches[1], target)).dump(), "application/json");
                }));
    server.Get(R"(/sessions/([^/]+)/export)", guarded([&](const httplib::Request& req, httplib::Response& res) {
                   res.set_content(service.export_session(req.matches[1]), "application/x-ndjson");
               }));
    server.Get(R"(/sessions/([^/]+))", guarded([&](const httplib::Request& req, httplib::Response& res) {
                   const auto v = service.session_view(req.matches[1]);
                   res.set_content(nlohmann::json{{"session", v.session}, {"participant", v.participant}, {"corpus", v.corpus},
                                                  {"maze", v.maze}, {"cursor", v.cursor}, {"step", v.step},
                                                  {"position", {{"row", v.position.row}, {"col", v.position.col}}},
                                                  {"finished", v.finished}}
                                       .dump(),
                                   "application/json");
               }));
}

}  // namespace fragplan
