#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fragplan/program.hpp"
#include "fragplan/world.hpp"

namespace fragplan {

enum class Layout { grid2x2, row, wings };

inline std::string to_string(Layout l) {
    switch (l) {
        case Layout::grid2x2: return "grid2x2";
        case Layout::row: return "row";
        case Layout::wings: return "wings";
    }
    return "?";
}

inline Layout parse_layout(const std::string& s) {
    if (s == "grid2x2") return Layout::grid2x2;
    if (s == "row") return Layout::row;
    if (s == "wings") return Layout::wings;
    throw std::invalid_argument("unknown layout '" + s + "'");
}

inline int copies(Layout l) { return l == Layout::grid2x2 ? 4 : l == Layout::row ? 3 : 2; }

/// Corpus spec file, one `key value` pair per line, `#` comments:
///   name <corpus id>
///   count <mazes>
///   layouts <comma list of grid2x2|row|wings>
///   sizes <comma list of odd fragment sizes>
///   density <interior wall probability>
///   max_modular_probability <p>   keep only mazes EU is nearly indifferent on
///   attempts <candidates to try when filtering>
struct CorpusSpec {
    std::string name = "corpus";
    int count = 10;
    std::vector<Layout> layouts{Layout::grid2x2, Layout::row, Layout::wings};
    std::vector<int> sizes{7};
    double density = 0.35;
    std::optional<double> max_modular_probability;
    int attempts = 0;  // 0: 10 x count
};

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

inline CorpusSpec parse_corpus_spec(const std::string& text) {
    CorpusSpec spec;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, value;
        if (!(ls >> key)) continue;
        if (!(ls >> value)) throw ParseError(line_no, 1, "missing value for '" + key + "'");
        try {
            if (key == "name") spec.name = value;
            else if (key == "count") spec.count = std::stoi(value);
            else if (key == "density") spec.density = std::stod(value);
            else if (key == "max_modular_probability") spec.max_modular_probability = std::stod(value);
            else if (key == "attempts") spec.attempts = std::stoi(value);
            else if (key == "layouts") {
                spec.layouts.clear();
                for (const auto& l : split_list(value)) spec.layouts.push_back(parse_layout(l));
            } else if (key == "sizes") {
                spec.sizes.clear();
                for (const auto& s : split_list(value)) spec.sizes.push_back(std::stoi(s));
            } else
                throw ParseError(line_no, 1, "unknown key '" + key + "'");
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(line_no, static_cast<int>(key.size()) + 2, e.what());
        }
    }
    if (spec.count < 1) throw std::invalid_argument("count must be positive");
    if (spec.layouts.empty() || spec.sizes.empty()) throw std::invalid_argument("layouts and sizes must be nonempty");
    for (int s : spec.sizes)
        // Below 7 every room with four doors has a nontrivial symmetry.
        if (s < 7 || s % 2 == 0) throw std::invalid_argument("fragment sizes must be odd and at least 7");
    if (!(spec.density >= 0 && spec.density < 1)) throw std::invalid_argument("density must be in [0, 1)");
    if (spec.max_modular_probability && !(*spec.max_modular_probability >= 0 && *spec.max_modular_probability <= 1))
        throw std::invalid_argument("max_modular_probability must be in [0, 1]");
    if (spec.attempts < 0) throw std::invalid_argument("attempts must be nonnegative");
    return spec;
}

struct GeneratedMaze {
    GridMap map;
    MapProgram program;
    Layout layout = Layout::grid2x2;
    int fragment_size = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline void keep_component(CellGrid& g, Position from) {
    std::vector<std::uint8_t> seen(g.cells.size(), 0);
    std::vector<Position> stack{from};
    seen[static_cast<std::size_t>(from.row * g.width + from.col)] = 1;
    while (!stack.empty()) {
        const Position p = stack.back();
        stack.pop_back();
        for (Action a : kActions) {
            const Position q = moved(p, a);
            if (q.row < 0 || q.col < 0 || q.row >= g.height || q.col >= g.width || g.at(q.row, q.col)) continue;
            auto& s = seen[static_cast<std::size_t>(q.row * g.width + q.col)];
            if (s) continue;
            s = 1;
            stack.push_back(q);
        }
    }
    for (std::size_t i = 0; i < g.cells.size(); ++i)
        if (!seen[i]) g.cells[i] = 1;
}

inline bool asymmetric(const CellGrid& g) {
    for (Dihedral d : Dihedral::all())
        if (d != Dihedral::identity() && apply(d, g) == g) return false;
    return true;
}

}  // namespace detail

/// Square room with wall border and a door in the middle of every edge, so
/// copies connect under any symmetry. Interior floor is one component.
inline CellGrid random_room(std::mt19937_64& rng, int s, double density) {
    const int mid = s / 2;
    std::bernoulli_distribution wall(density);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        CellGrid g{s, s, std::vector<std::uint8_t>(static_cast<std::size_t>(s * s), 1)};
        for (int r = 1; r < s - 1; ++r)
            for (int c = 1; c < s - 1; ++c) g.at(r, c) = wall(rng) ? 1 : 0;
        const Position doors[4] = {{0, mid}, {s - 1, mid}, {mid, 0}, {mid, s - 1}};
        const Position inside[4] = {{1, mid}, {s - 2, mid}, {mid, 1}, {mid, s - 2}};
        for (auto p : doors) g.at(p.row, p.col) = 0;
        for (auto p : inside) g.at(p.row, p.col) = 0;
        detail::keep_component(g, doors[0]);
        bool connected = true;
        for (auto p : doors) connected &= g.at(p.row, p.col) == 0;
        if (connected && detail::asymmetric(g)) return g;
    }
    throw std::runtime_error("could not generate an asymmetric room");
}

inline GeneratedMaze generate_maze(const std::string& id, Layout layout, int s, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const CellGrid room = random_room(rng, s, density);
    std::vector<Position> origins;
    int h = s, w = s;
    switch (layout) {
        case Layout::grid2x2:
            origins = {{0, 0}, {0, s}, {s, 0}, {s, s}};
            h = w = 2 * s;
            break;
        case Layout::row:
            origins = {{0, 0}, {0, s}, {0, 2 * s}};
            w = 3 * s;
            break;
        case Layout::wings:
            origins = {{0, 0}, {0, s}};
            w = 2 * s;
            break;
    }
    std::uniform_int_distribution<int> pick(0, 7);
    std::vector<Dihedral> syms;
    for (std::size_t i = 0; i < origins.size(); ++i) syms.push_back(Dihedral::all()[static_cast<std::size_t>(pick(rng))]);
    if (layout == Layout::wings) {
        // Right wing is the mirror image of the left one.
        syms[1] = Dihedral{0, true}.compose(syms[0]);
    }
    MapProgram truth{h, w, {Fragment{0, room}}, {}};
    for (std::size_t i = 0; i < origins.size(); ++i) truth.placements.push_back(Placement{0, Transform{syms[i], origins[i]}});
    const ReconstructedMap rec = reconstruct(truth);
    std::vector<std::uint8_t> walls(rec.values.begin(), rec.values.end());

    // Start on a floor cell of the first copy, exit uniform over hidden floor.
    std::vector<Position> floor0;
    for (int r = 1; r < s - 1; ++r)
        for (int c = 1; c < s - 1; ++c)
            if (!walls[static_cast<std::size_t>(r * w + c)]) floor0.push_back({r, c});
    const Position start = floor0[std::uniform_int_distribution<std::size_t>(0, floor0.size() - 1)(rng)];
    GridMap map(id, h, w, walls, start);
    const CellSet vis = visible_set(map, start);
    std::vector<Position> hidden;
    for (int i = 0; i < map.cell_count(); ++i)
        if (!map.is_wall_index(i) && !vis.contains(i)) hidden.push_back(map.position(i));
    if (hidden.empty()) throw std::runtime_error("generated maze has no hidden floor cells");
    const Position exit = hidden[std::uniform_int_distribution<std::size_t>(0, hidden.size() - 1)(rng)];
    return {map.with_exit(exit), std::move(truth), layout, s, seed};
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (i + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::string maze_id(const std::string& corpus, int i) {
    std::ostringstream out;
    out << corpus << "_";
    out.width(3);
    out.fill('0');
    out << i;
    return out.str();
}

inline std::vector<GeneratedMaze> generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
    std::vector<GeneratedMaze> out;
    const std::size_t nl = spec.layouts.size();
    for (int i = 0; i < spec.count; ++i) {
        const Layout layout = spec.layouts[static_cast<std::size_t>(i) % nl];
        const int s = spec.sizes[(static_cast<std::size_t>(i) / nl) % spec.sizes.size()];
        out.push_back(generate_maze(maze_id(spec.name, i), layout, s, spec.density, mix_seed(seed, static_cast<std::uint64_t>(i))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus directories: <dir>/<id>.maze, optional <dir>/<id>.prog, and an
// optional <dir>/sequence listing maze ids in presentation order.

struct CorpusEntry {
    GridMap map;
    std::optional<MapProgram> program;
};

struct Corpus {
    std::string id;
    std::vector<CorpusEntry> mazes;

    const CorpusEntry* find(const std::string& maze) const {
        for (const auto& e : mazes)
            if (e.map.id() == maze) return &e;
        return nullptr;
    }
};

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << text;
        if (!out.flush()) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, p);
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("corpus directory not found: " + dir.string());
    Corpus c;
    c.id = dir.filename().string();
    std::vector<std::string> order;
    if (std::filesystem::exists(dir / "sequence")) {
        std::istringstream in(read_text_file(dir / "sequence"));
        std::string id;
        while (in >> id) order.push_back(id);
    } else {
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.path().extension() == ".maze") order.push_back(e.path().stem().string());
        std::sort(order.begin(), order.end());
    }
    for (const auto& id : order) {
        const auto mp = dir / (id + ".maze");
        CorpusEntry entry{parse_map(read_text_file(mp)), std::nullopt};
        if (entry.map.id() != id) throw std::runtime_error(mp.string() + " declares id '" + entry.map.id() + "'");
        const auto pp = dir / (id + ".prog");
        if (std::filesystem::exists(pp)) entry.program = parse_program(read_text_file(pp));
        c.mazes.push_back(std::move(entry));
    }
    if (c.mazes.empty()) throw std::runtime_error("corpus " + dir.string() + " has no mazes");
    return c;
}

}  // namespace fragplan
