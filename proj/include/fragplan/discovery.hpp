#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fragplan/program.hpp"

namespace fragplan {

struct SizeBounds {
    int h_min = 3;
    int h_max = 0;  // 0: map height
    int w_min = 3;
    int w_max = 0;  // 0: map width
};

struct DiscoveryConfig {
    /// Absolute threshold; when unset, trivial score + threshold_margin.
    std::optional<double> threshold;
    double threshold_margin = 0.1;
    int completions = 8;
    int max_rounds = 4;
    SizeBounds bounds;
    ScoreWeights weights;

    void validate(const GridMap& map) const {
        if (completions < 1) throw std::invalid_argument("completions must be at least 1");
        if (max_rounds < 1) throw std::invalid_argument("max_rounds must be at least 1");
        if (!(weights.w1 > 0 && weights.w2 > 0)) throw std::invalid_argument("score weights must be positive");
        const int hmax = bounds.h_max > 0 ? bounds.h_max : map.height();
        const int wmax = bounds.w_max > 0 ? bounds.w_max : map.width();
        if (bounds.h_min < 1 || bounds.w_min < 1 || bounds.h_min > hmax || bounds.w_min > wmax || hmax > map.height() ||
            wmax > map.width())
            throw std::invalid_argument("fragment size bounds do not fit the map");
    }
};

struct ProposerRequest {
    const GridMap* map = nullptr;
    std::vector<Fragment> fragments;
    int round = 0;
};

enum class CandidateSource { enumerative, external };

inline std::string to_string(CandidateSource s) { return s == CandidateSource::enumerative ? "enumerative" : "external"; }

struct Candidate {
    /// Unset when the payload could not be turned into a program at all.
    std::optional<MapProgram> program;
    CandidateSource source = CandidateSource::enumerative;
    std::string raw;
    std::string parse_error;
};

class ProposerFailure : public std::runtime_error {
public:
    explicit ProposerFailure(const std::string& what) : std::runtime_error("proposer failure: " + what) {}
};

class Proposer {
public:
    virtual ~Proposer() = default;
    virtual std::vector<Candidate> propose(const ProposerRequest& req, int completions) = 0;
    virtual std::string name() const = 0;
};

struct Rejection {
    std::string reason;
};

using Validation = std::variant<ProgramScore, Rejection>;

inline Validation validate_candidate(const Candidate& c, const GridMap& map, ScoreWeights w) {
    if (!c.program) return Rejection{c.parse_error.empty() ? "no program" : c.parse_error};
    const MapProgram& p = *c.program;
    if (p.height != map.height() || p.width != map.width()) return Rejection{"program dimensions do not match the map"};
    try {
        return score(p, map, w);
    } catch (const std::exception& e) {
        return Rejection{e.what()};
    }
}

// ---------------------------------------------------------------------------
// Enumerative proposer

struct RectMatch {
    Position origin{};
    /// From the canonical cells to this occurrence.
    Dihedral symmetry;
    int height = 0;
    int width = 0;
};

struct OccurrenceGroup {
    CellGrid canonical;
    std::vector<RectMatch> occurrences;
};

inline CellGrid subgrid(const GridMap& map, Position o, int h, int w) {
    CellGrid g{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.at(r, c) = map.is_wall({o.row + r, o.col + c}) ? 1 : 0;
    return g;
}

/// Every rectangle within bounds, grouped by dihedral canonical form. Only
/// groups with at least two occurrences are returned.
inline std::vector<OccurrenceGroup> repeated_groups(const GridMap& map, const SizeBounds& b) {
    const int hmax = b.h_max > 0 ? b.h_max : map.height();
    const int wmax = b.w_max > 0 ? b.w_max : map.width();
    std::map<CellGrid, std::vector<RectMatch>> groups;
    for (int h = b.h_min; h <= hmax; ++h)
        for (int w = b.w_min; w <= wmax; ++w)
            for (int r = 0; r + h <= map.height(); ++r)
                for (int c = 0; c + w <= map.width(); ++c) {
                    CanonicalForm cf = canonical_form(subgrid(map, {r, c}, h, w));
                    groups[std::move(cf.cells)].push_back(RectMatch{{r, c}, cf.to_original, h, w});
                }
    std::vector<OccurrenceGroup> out;
    for (auto& [cells, occ] : groups)
        if (occ.size() >= 2) out.push_back({cells, std::move(occ)});
    return out;
}

namespace detail {

struct GroupPlan {
    const OccurrenceGroup* group = nullptr;
    std::vector<std::size_t> chosen;  // indices into group->occurrences
    double value_per_bit = 0;
    int area = 0;
};

class Coverage {
public:
    Coverage(int h, int w) : width_(w), covered_(static_cast<std::size_t>(h * w), 0) {}
    int fresh(const RectMatch& o) const {
        int n = 0;
        for (int r = 0; r < o.height; ++r)
            for (int c = 0; c < o.width; ++c) n += covered_[idx(o.origin.row + r, o.origin.col + c)] ? 0 : 1;
        return n;
    }
    void add(const RectMatch& o) {
        for (int r = 0; r < o.height; ++r)
            for (int c = 0; c < o.width; ++c) covered_[idx(o.origin.row + r, o.origin.col + c)] = 1;
    }

private:
    std::size_t idx(int r, int c) const { return static_cast<std::size_t>(r * width_ + c); }
    int width_;
    std::vector<std::uint8_t> covered_;
};

// Greedy occurrence selection for one group on top of existing coverage.
// Returns chosen occurrence indices and the bits they add.
inline std::vector<std::size_t> choose_occurrences(const OccurrenceGroup& g, Coverage& cov, double cell_value, double w2,
                                                   int pbits, int fbits, double* net_gain) {
    std::vector<std::size_t> chosen;
    std::vector<bool> used(g.occurrences.size(), false);
    double gain = 0;
    while (true) {
        std::size_t best = g.occurrences.size();
        int best_fresh = 0;
        for (std::size_t i = 0; i < g.occurrences.size(); ++i) {
            if (used[i]) continue;
            const int f = cov.fresh(g.occurrences[i]);
            if (f > best_fresh) {
                best_fresh = f;
                best = i;
            }
        }
        if (best == g.occurrences.size()) break;
        const double marginal = cell_value * best_fresh - w2 * pbits;
        // The first two placements are judged together with the fragment cost
        // below; after that each placement must pay for itself.
        if (chosen.size() >= 2 && marginal <= 0) break;
        used[best] = true;
        chosen.push_back(best);
        cov.add(g.occurrences[best]);
        gain += marginal;
    }
    gain -= w2 * fbits;
    if (net_gain) *net_gain = gain;
    return chosen;
}

}  // namespace detail

class EnumerativeProposer : public Proposer {
public:
    explicit EnumerativeProposer(SizeBounds bounds, ScoreWeights weights) : bounds_(bounds), weights_(weights) {}

    std::string name() const override { return "enumerative"; }

    std::vector<Candidate> propose(const ProposerRequest& req, int completions) override {
        if (!req.map) throw ProposerFailure("request has no map");
        const GridMap& map = *req.map;
        if (cached_map_ != serialize_map(map)) {
            groups_ = repeated_groups(map, bounds_);
            cached_map_ = serialize_map(map);
        }
        const double cell_value = weights_.w1 * 0.25 / map.cell_count();
        const int pbits = placement_bits(map.height(), map.width());

        // Rank each group on its own by covered value per description bit.
        std::vector<detail::GroupPlan> plans;
        for (const auto& g : groups_) {
            detail::Coverage cov(map.height(), map.width());
            const Fragment f{0, g.canonical};
            const int fbits = fragment_bits(f, map.height(), map.width());
            double net = 0;
            auto chosen = detail::choose_occurrences(g, cov, cell_value, weights_.w2, pbits, fbits, &net);
            if (chosen.size() < 2) continue;
            const int bits = fbits + static_cast<int>(chosen.size()) * pbits;
            const double value = net + weights_.w2 * bits;
            plans.push_back({&g, std::move(chosen), value / bits, g.canonical.height * g.canonical.width});
        }
        std::sort(plans.begin(), plans.end(), [](const detail::GroupPlan& a, const detail::GroupPlan& b) {
            if (a.value_per_bit != b.value_per_bit) return a.value_per_bit > b.value_per_bit;
            if (a.area != b.area) return a.area < b.area;
            return a.group->canonical < b.group->canonical;
        });

        std::vector<Candidate> out;
        if (plans.empty()) {
            out.push_back(Candidate{trivial_program(map), CandidateSource::enumerative, {}, {}});
            return out;
        }
        // Round r seeds its programs with the groups ranked r*C .. r*C+C-1.
        const std::size_t first = static_cast<std::size_t>(req.round) * static_cast<std::size_t>(completions);
        for (std::size_t s = first; s < plans.size() && out.size() < static_cast<std::size_t>(completions); ++s)
            out.push_back({assemble(map, plans, s, cell_value, pbits), CandidateSource::enumerative, {}, {}});
        if (out.empty()) out.push_back({assemble(map, plans, 0, cell_value, pbits), CandidateSource::enumerative, {}, {}});
        return out;
    }

private:
    MapProgram assemble(const GridMap& map, const std::vector<detail::GroupPlan>& plans, std::size_t seed, double cell_value,
                        int pbits) const {
        MapProgram p{map.height(), map.width(), {}, {}};
        detail::Coverage cov(map.height(), map.width());
        auto add_group = [&](const OccurrenceGroup& g, const std::vector<std::size_t>& chosen) {
            const int id = static_cast<int>(p.fragments.size());
            p.fragments.push_back(Fragment{id, g.canonical});
            for (std::size_t i : chosen) {
                const RectMatch& o = g.occurrences[i];
                p.placements.push_back(Placement{id, Transform{o.symmetry, o.origin}});
                cov.add(o);
            }
        };
        add_group(*plans[seed].group, plans[seed].chosen);
        for (std::size_t i = 0; i < plans.size(); ++i) {
            if (i == seed) continue;
            const auto& g = *plans[i].group;
            detail::Coverage trial = cov;
            const int fbits = fragment_bits(Fragment{0, g.canonical}, map.height(), map.width());
            double net = 0;
            auto chosen = detail::choose_occurrences(g, trial, cell_value, weights_.w2, pbits, fbits, &net);
            if (chosen.size() < 2 || net <= 0) continue;
            add_group(g, chosen);
        }
        return p;
    }

    SizeBounds bounds_;
    ScoreWeights weights_;
    std::string cached_map_;
    std::vector<OccurrenceGroup> groups_;
};

// ---------------------------------------------------------------------------
// Discovery loop

struct RoundRecord {
    int round = 0;
    int candidates = 0;
    int valid = 0;
    std::optional<double> round_best;
    double best_so_far = 0;
    std::string warning;
};

struct DiscoveryResult {
    MapProgram program;
    ProgramScore score;
    double threshold = 0;
    double trivial_score = 0;
    std::vector<RoundRecord> rounds;
    int rounds_used = 0;
    bool threshold_met = false;
    /// Every round failed; the trivial program is returned.
    bool degraded = false;
    /// The best program is the whole-map program.
    bool trivial = false;
    std::vector<std::string> warnings;

    const std::vector<Fragment>& fragments() const { return program.fragments; }
};

inline DiscoveryResult discover(const GridMap& map, const DiscoveryConfig& config, Proposer& proposer,
                                const std::function<void(const std::string&)>& warn = {}) {
    config.validate(map);
    DiscoveryResult result;
    result.program = trivial_program(map);
    result.score = score(result.program, map, config.weights);
    result.trivial_score = result.score.total;
    result.threshold = config.threshold ? *config.threshold : result.trivial_score + config.threshold_margin;
    bool any_round_ok = false;
    for (int round = 0; round < config.max_rounds; ++round) {
        RoundRecord rec;
        rec.round = round;
        ProposerRequest req{&map, result.program.fragments, round};
        std::vector<Candidate> candidates;
        try {
            candidates = proposer.propose(req, config.completions);
        } catch (const std::exception& e) {
            rec.warning = e.what();
            rec.best_so_far = result.score.total;
            result.warnings.push_back("round " + std::to_string(round) + " skipped: " + e.what());
            if (warn) warn(result.warnings.back());
            result.rounds.push_back(rec);
            result.rounds_used = round + 1;
            continue;
        }
        rec.candidates = static_cast<int>(candidates.size());
        for (const auto& c : candidates) {
            auto v = validate_candidate(c, map, config.weights);
            if (auto* s = std::get_if<ProgramScore>(&v)) {
                ++rec.valid;
                if (!rec.round_best || s->total > *rec.round_best) rec.round_best = s->total;
                if (s->total > result.score.total) {
                    result.score = *s;
                    result.program = *c.program;
                }
            }
        }
        if (rec.valid > 0) any_round_ok = true;
        else {
            rec.warning = "no valid candidates";
            result.warnings.push_back("round " + std::to_string(round) + ": no valid candidates");
            if (warn) warn(result.warnings.back());
        }
        rec.best_so_far = result.score.total;
        result.rounds.push_back(rec);
        result.rounds_used = round + 1;
        if (result.score.total >= result.threshold) {
            result.threshold_met = true;
            break;
        }
    }
    result.degraded = !any_round_ok;
    result.trivial = result.program == trivial_program(map);
    return result;
}

/// Canonical fragment set of a program, for comparing against ground truth.
inline std::vector<CellGrid> canonical_fragment_set(const MapProgram& p) {
    std::vector<CellGrid> out;
    for (const auto& f : p.fragments) out.push_back(canonical_form(f.cells).cells);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline bool same_structure(const MapProgram& a, const MapProgram& b) {
    return canonical_fragment_set(a) == canonical_fragment_set(b) && a.placements.size() == b.placements.size();
}

}  // namespace fragplan
