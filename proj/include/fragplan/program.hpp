#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fragplan/dihedral.hpp"
#include "fragplan/grid.hpp"

namespace fragplan {

struct Fragment {
    int id = 0;
    CellGrid cells;

    int height() const { return cells.height; }
    int width() const { return cells.width; }
    friend bool operator==(const Fragment&, const Fragment&) = default;
};

struct Transform {
    Dihedral symmetry;
    /// Top-left corner of the transformed box in map coordinates.
    Position translation{};
    friend bool operator==(const Transform&, const Transform&) = default;
};

struct Placement {
    int fragment_id = 0;
    Transform transform;
    friend bool operator==(const Placement&, const Placement&) = default;
};

struct MapProgram {
    int height = 0;
    int width = 0;
    std::vector<Fragment> fragments;
    std::vector<Placement> placements;

    const Fragment* find(int id) const {
        for (const auto& f : fragments)
            if (f.id == id) return &f;
        return nullptr;
    }
    friend bool operator==(const MapProgram&, const MapProgram&) = default;
};

class BoundsError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class InvalidProgram : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Transformed fragment cells together with their box in map coordinates.
struct PlacedCells {
    Position origin{};
    CellGrid cells;
};

inline PlacedCells apply_transform(const Fragment& f, const Transform& t, int map_height, int map_width) {
    CellGrid g = apply(t.symmetry, f.cells);
    const Position o = t.translation;
    if (o.row < 0 || o.col < 0 || o.row + g.height > map_height || o.col + g.width > map_width)
        throw BoundsError("placement of fragment " + std::to_string(f.id) + " at " + to_string(o) + " leaves the " +
                          std::to_string(map_height) + "x" + std::to_string(map_width) + " map");
    return {o, std::move(g)};
}

inline constexpr std::int8_t kUndefined = -1;

struct ReconstructedMap {
    int height = 0;
    int width = 0;
    /// -1 undefined, 0 floor, 1 wall.
    std::vector<std::int8_t> values;

    std::int8_t at(Position p) const { return values[static_cast<std::size_t>(p.row * width + p.col)]; }
    bool defined(Position p) const { return at(p) != kUndefined; }
    int undefined_count() const {
        return static_cast<int>(std::count(values.begin(), values.end(), kUndefined));
    }
};

inline void check_program(const MapProgram& p) {
    if (p.height < 1 || p.width < 1) throw InvalidProgram("program dimensions must be positive");
    for (const auto& f : p.fragments) {
        if (f.height() < 1 || f.width() < 1 || f.height() > std::max(p.height, p.width) ||
            f.width() > std::max(p.height, p.width))
            throw InvalidProgram("fragment " + std::to_string(f.id) + " has invalid dimensions");
        if (static_cast<int>(f.cells.cells.size()) != f.height() * f.width())
            throw InvalidProgram("fragment " + std::to_string(f.id) + " cell count mismatch");
    }
    for (std::size_t i = 0; i < p.fragments.size(); ++i)
        for (std::size_t j = i + 1; j < p.fragments.size(); ++j)
            if (p.fragments[i].id == p.fragments[j].id)
                throw InvalidProgram("duplicate fragment id " + std::to_string(p.fragments[i].id));
    for (const auto& pl : p.placements)
        if (!p.find(pl.fragment_id)) throw InvalidProgram("placement references unknown fragment " + std::to_string(pl.fragment_id));
}

/// Placements are applied in order; later ones overwrite earlier ones.
inline ReconstructedMap reconstruct(const MapProgram& p) {
    check_program(p);
    ReconstructedMap out{p.height, p.width, std::vector<std::int8_t>(static_cast<std::size_t>(p.height * p.width), kUndefined)};
    for (const auto& pl : p.placements) {
        const PlacedCells placed = apply_transform(*p.find(pl.fragment_id), pl.transform, p.height, p.width);
        for (int r = 0; r < placed.cells.height; ++r)
            for (int c = 0; c < placed.cells.width; ++c)
                out.values[static_cast<std::size_t>((placed.origin.row + r) * p.width + placed.origin.col + c)] =
                    static_cast<std::int8_t>(placed.cells.at(r, c));
    }
    return out;
}

inline int ceil_log2(int n) {
    int bits = 0;
    while ((1LL << bits) < n) ++bits;
    return bits;
}

inline constexpr int kRotationBits = 2;
inline constexpr int kReflectionBits = 1;

inline int shape_bits(int map_height, int map_width) { return ceil_log2(map_height) + ceil_log2(map_width); }
inline int fragment_bits(const Fragment& f, int map_height, int map_width) {
    return shape_bits(map_height, map_width) + f.height() * f.width();
}
inline int placement_bits(int map_height, int map_width) {
    return ceil_log2(map_height) + ceil_log2(map_width) + kRotationBits + kReflectionBits;
}

/// |lambda| in bits over the fragment + placement encoding.
inline double description_length(const MapProgram& p) {
    double bits = 0;
    for (const auto& f : p.fragments) bits += fragment_bits(f, p.height, p.width);
    bits += static_cast<double>(p.placements.size()) * placement_bits(p.height, p.width);
    return bits;
}

struct ScoreWeights {
    double w1 = 2.5;
    double w2 = 0.01;
};

struct ProgramScore {
    /// Mean squared reconstruction error, undefined cells valued 0.5.
    double squared_error = 0;
    /// -w1 * squared_error.
    double similarity_term = 0;
    double dl_bits = 0;
    double total = 0;
    ScoreWeights weights;
};

inline ProgramScore score(const ReconstructedMap& recon, double dl_bits, const GridMap& input, ScoreWeights w) {
    if (recon.height != input.height() || recon.width != input.width())
        throw std::invalid_argument("program dimensions " + std::to_string(recon.height) + "x" + std::to_string(recon.width) +
                                    " do not match map " + std::to_string(input.height()) + "x" + std::to_string(input.width()));
    // Accumulate in quarter units so the sum is exact.
    long long quarters = 0;
    for (int i = 0; i < input.cell_count(); ++i) {
        const int truth = input.is_wall_index(i) ? 1 : 0;
        const std::int8_t o = recon.values[static_cast<std::size_t>(i)];
        if (o == kUndefined) quarters += 1;
        else if (o != truth) quarters += 4;
    }
    ProgramScore s;
    s.weights = w;
    s.squared_error = static_cast<double>(quarters) / 4.0 / input.cell_count();
    s.similarity_term = -w.w1 * s.squared_error;
    s.dl_bits = dl_bits;
    s.total = s.similarity_term - w.w2 * dl_bits;
    return s;
}

inline ProgramScore score(const MapProgram& p, const GridMap& input, ScoreWeights w) {
    if (p.height != input.height() || p.width != input.width())
        throw std::invalid_argument("program dimensions do not match the map");
    return score(reconstruct(p), description_length(p), input, w);
}

inline CellGrid map_cells(const GridMap& map) {
    CellGrid g{map.height(), map.width(), map.walls()};
    return g;
}

/// The whole map as one fragment with an identity placement.
inline MapProgram trivial_program(const GridMap& map) {
    MapProgram p{map.height(), map.width(), {Fragment{0, map_cells(map)}}, {Placement{0, Transform{}}}};
    return p;
}

struct CanonicalFragment {
    CellGrid cells;
    /// Transform from the canonical cells to the fragment (no translation).
    Transform to_fragment;
};

inline CanonicalFragment canonical_fragment(const Fragment& f) {
    CanonicalForm c = canonical_form(f.cells);
    return {std::move(c.cells), Transform{c.to_original, {0, 0}}};
}

// Program text format:
//   program <N> <M>
//   fragment <id> <h> <w>   followed by h rows of '#'/'.'
//   placement <fragment-id> <row> <col> <rotation-degrees> <reflect 0|1>
// Lines beginning with '%' carry provenance and are ignored by the parser.
inline std::string serialize_program(const MapProgram& p, const std::vector<std::string>& provenance = {}) {
    std::ostringstream out;
    for (const auto& line : provenance) out << "% " << line << "\n";
    out << "program " << p.height << " " << p.width << "\n";
    for (const auto& f : p.fragments) {
        out << "fragment " << f.id << " " << f.height() << " " << f.width() << "\n";
        for (const auto& row : f.cells.rows()) out << row << "\n";
    }
    for (const auto& pl : p.placements)
        out << "placement " << pl.fragment_id << " " << pl.transform.translation.row << " " << pl.transform.translation.col << " "
            << pl.transform.symmetry.degrees() << " " << (pl.transform.symmetry.reflect ? 1 : 0) << "\n";
    return out.str();
}

inline MapProgram parse_program(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    MapProgram p;
    bool have_header = false;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '%') continue;
            return true;
        }
        return false;
    };
    while (next_line()) {
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "program") {
            if (have_header) throw ParseError(line_no, 1, "duplicate program header");
            if (!(ls >> p.height >> p.width)) throw ParseError(line_no, 9, "malformed program header");
            have_header = true;
        } else if (kw == "fragment") {
            if (!have_header) throw ParseError(line_no, 1, "fragment before program header");
            Fragment f;
            int h = 0, w = 0;
            if (!(ls >> f.id >> h >> w) || h < 1 || w < 1) throw ParseError(line_no, 10, "malformed fragment header");
            std::vector<std::string> rows;
            for (int r = 0; r < h; ++r) {
                if (!std::getline(in, line)) throw ParseError(line_no + 1, 1, "missing fragment rows");
                ++line_no;
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (static_cast<int>(line.size()) != w) throw ParseError(line_no, 1, "fragment row width mismatch");
                for (std::size_t c = 0; c < line.size(); ++c)
                    if (line[c] != '#' && line[c] != '.')
                        throw ParseError(line_no, static_cast<int>(c) + 1, "fragment cells must be '#' or '.'");
                rows.push_back(line);
            }
            f.cells = CellGrid::from_rows(rows);
            p.fragments.push_back(std::move(f));
        } else if (kw == "placement") {
            if (!have_header) throw ParseError(line_no, 1, "placement before program header");
            Placement pl;
            int rot = 0, refl = 0;
            if (!(ls >> pl.fragment_id >> pl.transform.translation.row >> pl.transform.translation.col >> rot >> refl))
                throw ParseError(line_no, 11, "malformed placement");
            if (rot % 90 != 0 || rot < 0 || rot >= 360) throw ParseError(line_no, 1, "rotation must be 0, 90, 180 or 270");
            if (refl != 0 && refl != 1) throw ParseError(line_no, 1, "reflect flag must be 0 or 1");
            pl.transform.symmetry = Dihedral::from_degrees(rot, refl == 1);
            p.placements.push_back(pl);
        } else {
            throw ParseError(line_no, 1, "unknown directive '" + kw + "'");
        }
    }
    if (!have_header) throw ParseError(line_no + 1, 1, "missing program header");
    return p;
}

}  // namespace fragplan
