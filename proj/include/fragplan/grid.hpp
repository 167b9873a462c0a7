#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fragplan {

struct Position {
    int row = 0;
    int col = 0;

    friend constexpr auto operator<=>(const Position&, const Position&) = default;
};

inline std::string to_string(Position p) {
    return "(" + std::to_string(p.row) + "," + std::to_string(p.col) + ")";
}

enum class Action : std::uint8_t { up = 0, down = 1, left = 2, right = 3 };

inline constexpr std::array<Action, 4> kActions{Action::up, Action::down, Action::left, Action::right};

inline constexpr Position delta(Action a) {
    switch (a) {
        case Action::up: return {-1, 0};
        case Action::down: return {1, 0};
        case Action::left: return {0, -1};
        case Action::right: return {0, 1};
    }
    return {0, 0};
}

inline constexpr Position moved(Position p, Action a) {
    const Position d = delta(a);
    return {p.row + d.row, p.col + d.col};
}

inline std::optional<Action> action_between(Position from, Position to) {
    for (Action a : kActions) {
        if (moved(from, a) == to) return a;
    }
    return std::nullopt;
}

inline std::string_view action_name(Action a) {
    switch (a) {
        case Action::up: return "up";
        case Action::down: return "down";
        case Action::left: return "left";
        case Action::right: return "right";
    }
    return "?";
}

inline int manhattan(Position a, Position b) {
    return (a.row > b.row ? a.row - b.row : b.row - a.row) + (a.col > b.col ? a.col - b.col : b.col - a.col);
}

/// Labels of a ground-truth state grid.
enum class CellKind : std::uint8_t { wall, empty, exit, agent };

class InvalidPosition : public std::out_of_range {
public:
    explicit InvalidPosition(Position p, const std::string& what)
        : std::out_of_range(what + " at " + to_string(p)), position(p) {}
    Position position;
};

class ParseError : public std::runtime_error {
public:
    ParseError(int line, int column, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
          line(line),
          column(column) {}
    int line;
    int column;
};

/// Static maze layout. Walls are known; the optional exit is ground truth
/// carried by maze files for simulation and is never part of the planner's
/// knowledge.
class GridMap {
public:
    GridMap() = default;

    GridMap(std::string id, int height, int width, std::vector<std::uint8_t> walls, Position start,
            std::optional<Position> exit = std::nullopt)
        : id_(std::move(id)), height_(height), width_(width), walls_(std::move(walls)), start_(start), exit_(exit) {
        if (height_ < 1 || width_ < 1) throw std::invalid_argument("map dimensions must be positive");
        if (walls_.size() != static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_))
            throw std::invalid_argument("layout size does not match dimensions");
        if (!is_floor(start_)) throw InvalidPosition(start_, "start is not a floor cell");
        if (exit_ && !is_floor(*exit_)) throw InvalidPosition(*exit_, "exit is not a floor cell");
    }

    /// Builds a map from rows of '#', '.', 'S', 'E'.
    static GridMap from_rows(std::string id, const std::vector<std::string>& rows);

    const std::string& id() const { return id_; }
    int height() const { return height_; }
    int width() const { return width_; }
    int cell_count() const { return height_ * width_; }
    Position start() const { return start_; }
    const std::optional<Position>& exit() const { return exit_; }
    const std::vector<std::uint8_t>& walls() const { return walls_; }

    bool in_bounds(Position p) const { return p.row >= 0 && p.row < height_ && p.col >= 0 && p.col < width_; }
    int index(Position p) const { return p.row * width_ + p.col; }
    Position position(int index) const { return {index / width_, index % width_}; }

    bool is_wall(Position p) const { return walls_[static_cast<std::size_t>(index(p))] != 0; }
    bool is_wall_index(int i) const { return walls_[static_cast<std::size_t>(i)] != 0; }
    /// False for walls and out-of-bounds cells.
    bool is_floor(Position p) const { return in_bounds(p) && !is_wall(p); }

    int floor_count() const {
        int n = 0;
        for (auto w : walls_) n += w == 0 ? 1 : 0;
        return n;
    }

    GridMap with_exit(std::optional<Position> exit) const {
        GridMap m = *this;
        if (exit && !is_floor(*exit)) throw InvalidPosition(*exit, "exit is not a floor cell");
        m.exit_ = exit;
        return m;
    }

    GridMap with_id(std::string id) const {
        GridMap m = *this;
        m.id_ = std::move(id);
        return m;
    }

    GridMap with_start(Position start) const {
        if (!is_floor(start)) throw InvalidPosition(start, "start is not a floor cell");
        GridMap m = *this;
        m.start_ = start;
        return m;
    }

    GridMap with_wall(Position p, bool wall) const {
        GridMap m = *this;
        m.walls_[static_cast<std::size_t>(index(p))] = wall ? 1 : 0;
        if (!m.is_floor(m.start_)) throw InvalidPosition(m.start_, "start is not a floor cell");
        if (m.exit_ && !m.is_floor(*m.exit_)) throw InvalidPosition(*m.exit_, "exit is not a floor cell");
        return m;
    }

    friend bool operator==(const GridMap&, const GridMap&) = default;

private:
    std::string id_;
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> walls_;
    Position start_{};
    std::optional<Position> exit_;
};

namespace detail {

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        std::size_t end = text.find('\n', begin);
        if (end == std::string_view::npos) {
            if (begin < text.size()) lines.emplace_back(text.substr(begin));
            break;
        }
        lines.emplace_back(text.substr(begin, end - begin));
        begin = end + 1;
    }
    return lines;
}

}  // namespace detail

inline GridMap GridMap::from_rows(std::string id, const std::vector<std::string>& rows) {
    if (rows.empty()) throw ParseError(1, 1, "empty grid");
    const int height = static_cast<int>(rows.size());
    const int width = static_cast<int>(rows.front().size());
    if (width == 0) throw ParseError(1, 1, "empty row");
    std::vector<std::uint8_t> walls(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
    std::optional<Position> start;
    std::optional<Position> exit;
    for (int r = 0; r < height; ++r) {
        const std::string& row = rows[static_cast<std::size_t>(r)];
        if (static_cast<int>(row.size()) != width)
            throw ParseError(r + 1, static_cast<int>(row.size()) + 1, "row length differs from width");
        for (int c = 0; c < width; ++c) {
            const char ch = row[static_cast<std::size_t>(c)];
            switch (ch) {
                case '#': walls[static_cast<std::size_t>(r * width + c)] = 1; break;
                case '.': break;
                case 'S':
                    if (start) throw ParseError(r + 1, c + 1, "multiple starts");
                    start = Position{r, c};
                    break;
                case 'E':
                    if (exit) throw ParseError(r + 1, c + 1, "multiple exits");
                    exit = Position{r, c};
                    break;
                default: throw ParseError(r + 1, c + 1, std::string("unexpected character '") + ch + "'");
            }
        }
    }
    if (!start) throw ParseError(1, 1, "missing start");
    return GridMap(std::move(id), height, width, std::move(walls), *start, exit);
}

/// Parses the maze file format: a `maze <id> <N> <M>` header followed by N
/// rows of M characters.
inline GridMap parse_map(std::string_view text) {
    auto lines = detail::split_lines(text);
    if (lines.empty()) throw ParseError(1, 1, "empty maze file");
    std::istringstream header(lines.front());
    std::string keyword, id;
    int n = 0, m = 0;
    if (!(header >> keyword) || keyword != "maze") throw ParseError(1, 1, "expected 'maze' header");
    if (!(header >> id >> n >> m)) throw ParseError(1, 6, "malformed header, expected 'maze <id> <N> <M>'");
    std::string trailing;
    if (header >> trailing) throw ParseError(1, 1, "trailing tokens in header");
    if (n < 1 || m < 1) throw ParseError(1, 1, "dimensions must be positive");
    if (static_cast<int>(lines.size()) - 1 < n)
        throw ParseError(static_cast<int>(lines.size()) + 1, 1, "expected " + std::to_string(n) + " grid rows");
    for (std::size_t i = static_cast<std::size_t>(n) + 1; i < lines.size(); ++i) {
        if (!lines[i].empty()) throw ParseError(static_cast<int>(i) + 1, 1, "unexpected content after grid");
    }
    std::vector<std::string> rows(lines.begin() + 1, lines.begin() + 1 + n);
    for (int r = 0; r < n; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r)];
        if (static_cast<int>(row.size()) != m)
            throw ParseError(r + 2, std::min<int>(static_cast<int>(row.size()), m) + 1,
                             "row has " + std::to_string(row.size()) + " cells, expected " + std::to_string(m));
    }
    try {
        return GridMap::from_rows(id, rows);
    } catch (const ParseError& e) {
        // Row numbers from from_rows are grid-relative; shift past the header.
        std::string msg = e.what();
        msg = msg.substr(msg.find(": ") + 2);
        throw ParseError(e.line + 1, e.column, msg);
    }
}

inline std::string serialize_map(const GridMap& map) {
    std::string out = "maze " + map.id() + " " + std::to_string(map.height()) + " " + std::to_string(map.width()) + "\n";
    for (int r = 0; r < map.height(); ++r) {
        for (int c = 0; c < map.width(); ++c) {
            const Position p{r, c};
            if (p == map.start()) out += 'S';
            else if (map.exit() && p == *map.exit()) out += 'E';
            else out += map.is_wall(p) ? '#' : '.';
        }
        out += '\n';
    }
    return out;
}

}  // namespace fragplan
