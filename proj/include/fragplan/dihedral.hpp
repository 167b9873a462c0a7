#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fragplan/grid.hpp"

namespace fragplan {

/// Element of the dihedral group of the rectangle: reflect (mirror columns)
/// first, then rotate clockwise `rotation` quarter turns.
struct Dihedral {
    int rotation = 0;
    bool reflect = false;

    friend constexpr auto operator<=>(const Dihedral&, const Dihedral&) = default;

    static constexpr Dihedral identity() { return {}; }
    static Dihedral from_degrees(int degrees, bool reflect) {
        if (degrees % 90 != 0 || degrees < 0 || degrees >= 360) throw std::invalid_argument("rotation must be 0, 90, 180 or 270");
        return {degrees / 90, reflect};
    }
    int degrees() const { return rotation * 90; }

    static constexpr std::array<Dihedral, 8> all() {
        return {Dihedral{0, false}, Dihedral{1, false}, Dihedral{2, false}, Dihedral{3, false},
                Dihedral{0, true},  Dihedral{1, true},  Dihedral{2, true},  Dihedral{3, true}};
    }

    /// (*this) after `inner`: inner is applied first.
    constexpr Dihedral compose(Dihedral inner) const {
        const int k = reflect ? rotation - inner.rotation : rotation + inner.rotation;
        return {((k % 4) + 4) % 4, reflect != inner.reflect};
    }

    constexpr Dihedral inverse() const {
        if (reflect) return *this;
        return {(4 - rotation) % 4, false};
    }

    constexpr std::pair<int, int> dims(int height, int width) const {
        return rotation % 2 == 0 ? std::pair{height, width} : std::pair{width, height};
    }

    /// Maps a cell of an h x w grid to its cell in the transformed grid.
    constexpr Position apply(Position p, int height, int width) const {
        if (reflect) p.col = width - 1 - p.col;
        int h = height;
        int w = width;
        for (int i = 0; i < rotation; ++i) {
            p = {p.col, h - 1 - p.row};
            std::swap(h, w);
        }
        return p;
    }

    constexpr Position apply_delta(Position d) const {
        if (reflect) d.col = -d.col;
        for (int i = 0; i < rotation; ++i) d = {d.col, -d.row};
        return d;
    }

    Action apply(Action a) const {
        const Position d = apply_delta(delta(a));
        for (Action b : kActions)
            if (delta(b) == d) return b;
        throw std::logic_error("dihedral action mapping failed");
    }
};

/// Binary cell grid (1 = wall, 0 = floor).
struct CellGrid {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    std::uint8_t at(int r, int c) const { return cells[static_cast<std::size_t>(r * width + c)]; }
    std::uint8_t& at(int r, int c) { return cells[static_cast<std::size_t>(r * width + c)]; }

    friend bool operator==(const CellGrid&, const CellGrid&) = default;
    friend auto operator<=>(const CellGrid& a, const CellGrid& b) {
        if (auto c = a.height <=> b.height; c != 0) return c;
        if (auto c = a.width <=> b.width; c != 0) return c;
        return a.cells <=> b.cells;
    }

    static CellGrid from_rows(const std::vector<std::string>& rows) {
        CellGrid g;
        g.height = static_cast<int>(rows.size());
        g.width = rows.empty() ? 0 : static_cast<int>(rows.front().size());
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != g.width) throw std::invalid_argument("ragged fragment rows");
            for (char ch : row) {
                if (ch != '#' && ch != '.') throw std::invalid_argument(std::string("bad fragment cell '") + ch + "'");
                g.cells.push_back(ch == '#' ? 1 : 0);
            }
        }
        return g;
    }

    std::vector<std::string> rows() const {
        std::vector<std::string> out(static_cast<std::size_t>(height), std::string(static_cast<std::size_t>(width), '.'));
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                if (at(r, c)) out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = '#';
        return out;
    }
};

inline CellGrid apply(Dihedral d, const CellGrid& g) {
    const auto [h, w] = d.dims(g.height, g.width);
    CellGrid out{h, w, std::vector<std::uint8_t>(g.cells.size(), 0)};
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
            const Position p = d.apply(Position{r, c}, g.height, g.width);
            out.at(p.row, p.col) = g.at(r, c);
        }
    return out;
}

struct CanonicalForm {
    CellGrid cells;
    /// apply(to_original, cells) reproduces the input grid.
    Dihedral to_original;
};

/// Lexicographically smallest of the eight dihedral variants.
inline CanonicalForm canonical_form(const CellGrid& g) {
    CellGrid best = g;
    for (Dihedral d : Dihedral::all()) {
        CellGrid v = apply(d, g);
        if (v < best) best = std::move(v);
    }
    for (Dihedral d : Dihedral::all())
        if (apply(d, best) == g) return {best, d};
    throw std::logic_error("canonical form is not in the orbit");
}

}  // namespace fragplan
