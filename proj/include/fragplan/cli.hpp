#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fragplan/analysis.hpp"
#include "fragplan/corpus.hpp"
#include "fragplan/designed.hpp"
#include "fragplan/discovery.hpp"
#include "fragplan/external_proposer.hpp"
#include "fragplan/gmp.hpp"
#include "fragplan/service.hpp"
#include "fragplan/solver.hpp"
#include "fragplan/trajectory.hpp"

namespace fragplan {

namespace fs = std::filesystem;

/// Bad flag, environment value or config file; exit status 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

/// FRAGPLAN_<KEY>, upper case, dashes as underscores.
inline std::string env_name(const std::string& key) {
    std::string out = "FRAGPLAN_";
    for (char c : key) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

/// Config file: one `key = value` per line, `#` starts a comment.
inline std::map<std::string, std::string> parse_config_file(const std::string& text, const std::string& name = "config") {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int no = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    };
    while (std::getline(in, line)) {
        ++no;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(name + ":" + std::to_string(no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(name + ":" + std::to_string(no) + ": empty key");
        if (out.count(key)) throw ConfigError(name + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

struct KeySpec {
    std::string key;
    std::string fallback;
    std::string help;
    bool flag = false;
};

/// Fully resolved parameters of one command.
struct RunConfig {
    std::string command;
    std::map<std::string, std::string> values;
    std::vector<std::string> inputs;

    const std::string& get(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw std::logic_error("config key '" + key + "' not declared for " + command);
        return it->second;
    }
    bool has(const std::string& key) const { return !get(key).empty(); }

    const std::string& require(const std::string& key) const {
        if (!has(key)) throw ConfigError(command + " needs --" + key);
        return get(key);
    }

    double get_double(const std::string& key) const {
        const std::string& v = get(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError(key + " must be a number, got '" + v + "'");
        }
    }
    long long get_int(const std::string& key, long long lo, long long hi) const {
        const std::string& v = get(key);
        long long n = 0;
        try {
            std::size_t used = 0;
            n = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
        } catch (const std::exception&) {
            throw ConfigError(key + " must be an integer, got '" + v + "'");
        }
        if (n < lo || n > hi) throw ConfigError(key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return n;
    }
    std::uint64_t get_seed() const {
        const std::string& v = get("seed");
        if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("seed must be a nonnegative integer, got '" + v + "'");
        try {
            return std::stoull(v);
        } catch (const std::exception&) {
            throw ConfigError("seed out of range: " + v);
        }
    }
    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off" || v.empty()) return false;
        throw ConfigError(key + " must be true or false, got '" + v + "'");
    }
    std::vector<std::string> get_list(const std::string& key) const { return split_list(get(key)); }

    /// Secrets are recorded only as set or unset.
    static std::string shown(const std::string& key, const std::string& v) {
        if (key == "token") return v.empty() ? "" : "<redacted>";
        return v;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command;
        nlohmann::ordered_json v = nlohmann::ordered_json::object();
        for (const auto& [k, x] : values) v[k] = shown(k, x);
        j["values"] = v;
        j["inputs"] = inputs;
        return j;
    }
    std::vector<std::string> provenance() const {
        std::vector<std::string> out{"fragplan " + command};
        for (const auto& [k, v] : values) out.push_back(k + "=" + shown(k, v));
        for (const auto& in : inputs) out.push_back("input=" + in);
        return out;
    }
};

inline const std::map<std::string, std::vector<KeySpec>>& command_keys() {
    static const std::map<std::string, std::vector<KeySpec>> keys{
        {"discover",
         {{"corpus", "", "corpus directory; every .maze in it is a map"},
          {"out", "", "directory for program files and the report"},
          {"weights", "2.5,0.01", "score weights w1,w2"},
          {"threshold", "auto", "stop threshold, or auto for trivial score + margin"},
          {"completions", "8", "candidates per round"},
          {"rounds", "4", "maximum proposal rounds"},
          {"proposer", "enum", "enum or external"},
          {"endpoint", "", "external proposer URL"},
          {"token", "", "bearer token for the external proposer"},
          {"strict", "false", "fail if any map ends trivial or degraded", true},
          {"seed", "0", "seed (recorded for provenance)"}}},
        {"simulate",
         {{"corpus", "", "corpus directory"},
          {"programs", "", "directory with <maze>.prog files (default: the corpus)"},
          {"out", "", "output directory"},
          {"models", "eu,gmp", "comma list of eu, du, gmp"},
          {"gamma", "0.7", "discount for du"},
          {"trials", "20", "sampled exits per map with more than 200 hidden cells"},
          {"seed", "0", "tie-break and sampling seed"}}},
        {"analyze",
         {{"corpus", "", "corpus directory the logs were recorded on"},
          {"programs", "", "directory with <maze>.prog files (default: the corpus)"},
          {"out", "", "output directory (default: print the report)"},
          {"resamples", "10000", "bootstrap resamples"},
          {"seed", "0", "bootstrap and candidate seed"}}},
        {"gen-corpus",
         {{"spec", "", "corpus spec file"}, {"out", "", "output directory"}, {"seed", "0", "generator seed"}}},
        {"serve",
         {{"corpus", "", "comma list of corpus directories"},
          {"out", "", "log directory"},
          {"host", "127.0.0.1", "listen address"},
          {"port", "8080", "listen port"},
          {"seed", "0", "unused; recorded for provenance"}}},
    };
    return keys;
}

inline void write_json(const fs::path& p, const nlohmann::ordered_json& j) { write_text_file(p, j.dump(2) + "\n"); }

// ------------------------------------------------------------- discover

inline std::unique_ptr<Proposer> make_proposer(const RunConfig& cfg, const DiscoveryConfig& dc) {
    const std::string& kind = cfg.get("proposer");
    if (kind == "enum") return std::make_unique<EnumerativeProposer>(dc.bounds, dc.weights);
    if (kind == "external") return std::make_unique<ExternalProposer>(cfg.require("endpoint"), std::chrono::seconds(30), cfg.get("token"));
    throw ConfigError("proposer must be enum or external, got '" + kind + "'");
}

inline ScoreWeights parse_weights(const RunConfig& cfg) {
    const auto parts = cfg.get_list("weights");
    if (parts.size() != 2) throw ConfigError("weights must be w1,w2");
    ScoreWeights w;
    try {
        w.w1 = std::stod(parts[0]);
        w.w2 = std::stod(parts[1]);
    } catch (const std::exception&) {
        throw ConfigError("weights must be numbers: " + cfg.get("weights"));
    }
    if (!(w.w1 > 0 && w.w2 > 0)) throw ConfigError("weights must be positive");
    return w;
}

inline nlohmann::ordered_json score_json(const ProgramScore& s) {
    return {{"total", s.total}, {"squared_error", s.squared_error}, {"similarity_term", s.similarity_term}, {"dl_bits", s.dl_bits}};
}

inline int cmd_discover(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    DiscoveryConfig dc;
    dc.weights = parse_weights(cfg);
    if (cfg.get("threshold") != "auto") dc.threshold = cfg.get_double("threshold");
    dc.completions = static_cast<int>(cfg.get_int("completions", 1, 1000));
    dc.max_rounds = static_cast<int>(cfg.get_int("rounds", 1, 1000));
    const bool strict = cfg.get_bool("strict");
    cfg.get_seed();
    const fs::path dir = cfg.require("out");
    auto proposer = make_proposer(cfg, dc);
    if (!cfg.has("corpus") && cfg.inputs.empty()) throw ConfigError("discover needs map files or --corpus");

    std::vector<GridMap> maps;
    if (cfg.has("corpus"))
        for (auto& e : load_corpus(cfg.get("corpus")).mazes) maps.push_back(std::move(e.map));
    for (const auto& f : cfg.inputs) maps.push_back(parse_map(read_text_file(f)));
    std::set<std::string> ids;
    for (const auto& m : maps)
        if (!ids.insert(m.id()).second) throw std::runtime_error("maze id " + m.id() + " given twice");

    fs::create_directories(dir);
    nlohmann::ordered_json report;
    report["config"] = cfg.to_json();
    report["maps"] = nlohmann::ordered_json::array();
    std::vector<std::string> bad;
    for (const auto& m : maps) {
        const DiscoveryResult r = discover(m, dc, *proposer, [&](const std::string& w) { err << m.id() << ": " << w << "\n"; });
        auto prov = cfg.provenance();
        std::ostringstream sc;
        sc.precision(17);
        sc << "score=" << r.score.total << " threshold=" << r.threshold << " trivial=" << (r.trivial ? 1 : 0)
           << " degraded=" << (r.degraded ? 1 : 0);
        prov.push_back(sc.str());
        write_text_file(dir / (m.id() + ".prog"), serialize_program(r.program, prov));
        nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
        for (const auto& rr : r.rounds) {
            nlohmann::ordered_json x{{"round", rr.round}, {"candidates", rr.candidates}, {"valid", rr.valid}};
            x["round_best"] = rr.round_best ? nlohmann::ordered_json(*rr.round_best) : nlohmann::ordered_json();
            x["best_so_far"] = rr.best_so_far;
            if (!rr.warning.empty()) x["warning"] = rr.warning;
            rounds.push_back(x);
        }
        report["maps"].push_back({{"maze", m.id()},
                                  {"program", m.id() + ".prog"},
                                  {"score", score_json(r.score)},
                                  {"trivial_score", r.trivial_score},
                                  {"threshold", r.threshold},
                                  {"threshold_met", r.threshold_met},
                                  {"trivial", r.trivial},
                                  {"degraded", r.degraded},
                                  {"fragments", r.program.fragments.size()},
                                  {"placements", r.program.placements.size()},
                                  {"rounds_used", r.rounds_used},
                                  {"rounds", rounds},
                                  {"warnings", r.warnings}});
        out << m.id() << ": score " << r.score.total << ", " << r.program.fragments.size() << " fragment(s), "
            << r.program.placements.size() << " placement(s)" << (r.trivial ? ", trivial" : "") << (r.degraded ? ", degraded" : "")
            << "\n";
        if (r.trivial || r.degraded) bad.push_back(m.id());
    }
    write_json(dir / "discover_report.json", report);
    if (strict && !bad.empty()) {
        std::string ids_s;
        for (const auto& b : bad) ids_s += (ids_s.empty() ? "" : ", ") + b;
        err << "strict: trivial or degraded programs for " << ids_s << "\n";
        return 1;
    }
    return 0;
}

// ------------------------------------------------------------- programs

/// Program for a maze from --programs, else the corpus copy.
inline std::optional<MapProgram> program_for(const RunConfig& cfg, const CorpusEntry& e) {
    if (cfg.has("programs")) {
        const fs::path p = fs::path(cfg.get("programs")) / (e.map.id() + ".prog");
        if (!fs::exists(p)) return std::nullopt;
        return parse_program(read_text_file(p));
    }
    return e.program;
}

inline std::vector<std::string> parse_models(const RunConfig& cfg) {
    auto models = cfg.get_list("models");
    if (models.empty()) throw ConfigError("models must name at least one of eu, du, gmp");
    std::set<std::string> seen;
    for (const auto& m : models) {
        if (m != "eu" && m != "du" && m != "gmp") throw ConfigError("unknown model '" + m + "'");
        if (!seen.insert(m).second) throw ConfigError("model '" + m + "' listed twice");
    }
    return models;
}

// ------------------------------------------------------------- simulate

inline constexpr int kExhaustiveHiddenLimit = 200;

inline int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const auto models = parse_models(cfg);
    const double gamma = cfg.get_double("gamma");
    if (!(gamma > 0 && gamma < 1)) throw ConfigError("gamma must be in (0, 1)");
    const int trials = static_cast<int>(cfg.get_int("trials", 1, 1000000));
    const std::uint64_t seed = cfg.get_seed();
    const fs::path dir = cfg.require("out");
    const Corpus corpus = load_corpus(cfg.require("corpus"));

    std::vector<MapProgram> programs;
    const bool need_program = std::find(models.begin(), models.end(), "gmp") != models.end();
    std::vector<std::string> missing;
    for (const auto& e : corpus.mazes) {
        auto p = program_for(cfg, e);
        if (!p && need_program) missing.push_back(e.map.id());
        programs.push_back(p ? *p : trivial_program(e.map));
    }
    if (!missing.empty()) {
        std::string s;
        for (const auto& m : missing) s += (s.empty() ? "" : ", ") + m;
        throw std::runtime_error("gmp needs programs for " + s);
    }

    std::string log;
    nlohmann::ordered_json episodes = nlohmann::ordered_json::array();
    nlohmann::ordered_json per_map = nlohmann::ordered_json::array();
    for (std::size_t mi = 0; mi < corpus.mazes.size(); ++mi) {
        const GridMap& map = corpus.mazes[mi].map;
        auto problem = std::make_shared<const SearchProblem>(map);
        const CellSet hidden = problem->floor() - problem->visible_from(map.index(map.start()));
        std::vector<int> exits;
        hidden.for_each([&](int e) { exits.push_back(e); });
        const bool exhaustive = static_cast<int>(exits.size()) <= kExhaustiveHiddenLimit;
        if (!exhaustive && trials < static_cast<int>(exits.size())) {
            std::mt19937_64 rng(mix_seed(seed, 0x5eedULL + mi));
            std::vector<int> picked;
            std::sample(exits.begin(), exits.end(), std::back_inserter(picked), trials, rng);
            exits = std::move(picked);
        }
        for (std::size_t k = 0; k < models.size(); ++k) {
            const std::string& name = models[k];
            std::unique_ptr<BeliefSolver> solver;
            std::unique_ptr<GmpPlanner> planner;
            if (name == "eu") solver = std::make_unique<BeliefSolver>(problem, PlannerParams::expected_utility());
            else if (name == "du") solver = std::make_unique<BeliefSolver>(problem, PlannerParams::discounted(gamma));
            else planner = std::make_unique<GmpPlanner>(problem, GmpConfig{programs[mi], PlannerParams::expected_utility()});
            std::size_t total_exp = 0, hits = 0, misses = 0, high_water = 0, fallbacks = 0, steps = 0;
            for (std::size_t ei = 0; ei < exits.size(); ++ei) {
                const Position exit = map.position(exits[ei]);
                const std::uint64_t es = mix_seed(seed, (mi * 8 + k) * 1000003ULL + ei);
                const EpisodeTrace trace = solver ? run_belief_episode(*solver, exit, es, name) : planner->plan_episode(exit, es);
                const std::string session = "sim-" + name + "-" + std::to_string(exit.row) + "_" + std::to_string(exit.col);
                const Trajectory t = trajectory_from_trace(trace, session);
                for (const auto& r : records_for(t, map.with_exit(exit), problem->visibility())) log += to_log_line(r) + "\n";
                const EpisodeStats& s = trace.stats;
                total_exp += s.expansions;
                hits += s.cache_hits;
                misses += s.cache_misses;
                high_water = std::max(high_water, s.memo_bytes);
                fallbacks += s.fallback ? 1 : 0;
                steps += static_cast<std::size_t>(trace.steps_to_exit());
                nlohmann::ordered_json ep{{"maze", map.id()},         {"model", name},
                                          {"session", session},       {"exit", {exit.row, exit.col}},
                                          {"seed", es},               {"steps", trace.steps_to_exit()},
                                          {"expansions", s.expansions}, {"cache_hits", s.cache_hits},
                                          {"cache_misses", s.cache_misses}, {"memo_bytes", s.memo_bytes},
                                          {"fallback", s.fallback}};
                if (s.fallback_step) ep["fallback_step"] = *s.fallback_step;
                episodes.push_back(ep);
            }
            nlohmann::ordered_json pm{{"maze", map.id()},
                                      {"model", name},
                                      {"exits", exhaustive ? "all" : "sampled"},
                                      {"episodes", exits.size()},
                                      {"mean_steps", exits.empty() ? 0.0 : static_cast<double>(steps) / exits.size()},
                                      {"expansions", total_exp},
                                      {"memo_high_water_bytes", high_water},
                                      {"cache_hits", hits},
                                      {"cache_misses", misses},
                                      {"fallbacks", fallbacks}};
            if (name == "du") pm["gamma"] = gamma;
            per_map.push_back(pm);
            out << map.id() << " " << name << ": " << exits.size() << " episodes, " << total_exp << " expansions\n";
        }
    }
    fs::create_directories(dir);
    write_text_file(dir / "trajectories.jsonl", log);
    nlohmann::ordered_json stats;
    stats["config"] = cfg.to_json();
    stats["corpus"] = corpus.id;
    stats["log"] = "trajectories.jsonl";
    stats["per_map"] = per_map;
    stats["episodes"] = episodes;
    write_json(dir / "simulate_stats.json", stats);
    return 0;
}

// -------------------------------------------------------------- analyze

inline nlohmann::ordered_json rate_json(const Rate& r) {
    return {{"modular", r.modular}, {"total", r.total}, {"fraction", r.fraction()}};
}

inline nlohmann::ordered_json interval_json(const Interval& i) { return {i.lo, i.hi}; }

inline int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const int resamples = static_cast<int>(cfg.get_int("resamples", 1, 100000000));
    const std::uint64_t seed = cfg.get_seed();
    if (cfg.inputs.empty()) throw ConfigError("analyze needs at least one log file");
    const Corpus corpus = load_corpus(cfg.require("corpus"));

    std::vector<MoveRecord> records;
    for (const auto& f : cfg.inputs) {
        try {
            auto rs = parse_log(read_text_file(f));
            records.insert(records.end(), rs.begin(), rs.end());
        } catch (const ParseError& e) {
            throw std::runtime_error(f + ": " + e.what());
        }
    }
    std::set<std::string> unknown;
    for (const auto& r : records)
        if (!corpus.find(r.maze)) unknown.insert(r.maze);
    if (!unknown.empty()) {
        std::string s;
        for (const auto& u : unknown) s += (s.empty() ? "" : ", ") + u;
        throw std::runtime_error("log mazes not in corpus " + corpus.id + ": " + s);
    }

    struct MapData {
        std::shared_ptr<const SearchProblem> problem;
        std::shared_ptr<const TrackerLayout> layout;
        std::unique_ptr<BeliefModel> eu;
        std::unique_ptr<GmpModel> gmp;
    };
    std::map<std::string, MapData> data;
    std::vector<std::string> missing;
    for (const auto& e : corpus.mazes) {
        bool used = false;
        for (const auto& r : records) used |= r.maze == e.map.id();
        if (!used) continue;
        auto prog = program_for(cfg, e);
        if (!prog) {
            missing.push_back(e.map.id());
            continue;
        }
        MapData d;
        d.problem = std::make_shared<const SearchProblem>(e.map);
        auto planner = std::make_shared<GmpPlanner>(d.problem, GmpConfig{*prog, PlannerParams::expected_utility()});
        d.layout = planner->layout();
        d.eu = std::make_unique<BeliefModel>(d.problem, PlannerParams::expected_utility());
        d.gmp = std::make_unique<GmpModel>(planner);
        data.emplace(e.map.id(), std::move(d));
    }
    if (!missing.empty()) {
        std::string s;
        for (const auto& m : missing) s += (s.empty() ? "" : ", ") + m;
        throw std::runtime_error("no program for " + s);
    }

    const auto trajs = replay_log(records, [&](const std::string& id) -> const GridMap* {
        const CorpusEntry* e = corpus.find(id);
        return e ? &e->map : nullptr;
    });

    std::vector<ModularityRecord> mods;
    nlohmann::ordered_json per_traj = nlohmann::ordered_json::array();
    for (const auto& t : trajs) {
        const MapData& d = data.at(t.map_id);
        const GridMap truth = d.problem->map().with_exit(t.exit);
        const ModularityResult m = is_modular(t, truth, d.layout, d.problem->visibility());
        mods.push_back({t.agent, t.map_id, m.modular});
        nlohmann::ordered_json j{{"session", t.session}, {"participant", t.agent}, {"maze", t.map_id},
                                 {"steps", t.positions.size() - 1}, {"complete", t.complete}, {"modular", m.modular},
                                 {"violated", m.violated}, {"exit_seen", m.exit_seen}, {"all_done", m.all_done}};
        if (m.violation_step) j["violation_step"] = *m.violation_step;
        per_traj.push_back(j);
    }
    const ModularityRates rates = modularity_rates(mods);

    AgreementConfig ac;
    ac.resamples = resamples;
    ac.seed = seed;
    const AgreementReport rep = agreement(trajs, [&](const std::string& id) {
        MapData& d = data.at(id);
        return MapModels{d.problem, d.gmp.get(), d.eu.get()};
    }, ac);
    for (const auto& n : rep.notes) err << "note: " << n << "\n";

    nlohmann::ordered_json j;
    j["config"] = cfg.to_json();
    j["corpus"] = corpus.id;
    nlohmann::ordered_json mj;
    mj["overall"] = rate_json(rates.overall);
    mj["by_map"] = nlohmann::ordered_json::object();
    for (const auto& [k, r] : rates.by_map) mj["by_map"][k] = rate_json(r);
    mj["by_participant"] = nlohmann::ordered_json::object();
    for (const auto& [k, r] : rates.by_agent) mj["by_participant"][k] = rate_json(r);
    mj["trajectories"] = per_traj;
    j["modularity"] = mj;
    nlohmann::ordered_json aj{{"model_a", "gmp"}, {"model_b", "eu"}};
    aj["participants"] = nlohmann::ordered_json::array();
    for (const auto& p : rep.participants)
        aj["participants"].push_back({{"participant", p.participant}, {"states", p.states}, {"frac_a", p.frac_a},
                                      {"frac_b", p.frac_b}, {"chance_a", p.chance_a}, {"chance_b", p.chance_b}});
    aj["excluded"] = rep.excluded;
    aj["mean_a"] = rep.mean_a;
    aj["mean_b"] = rep.mean_b;
    aj["ci_a"] = interval_json(rep.ci_a);
    aj["ci_b"] = interval_json(rep.ci_b);
    aj["ci_diff"] = interval_json(rep.ci_diff);
    aj["chance_a"] = rep.chance_a;
    aj["chance_b"] = rep.chance_b;
    aj["low_agreement"] = rep.low_agreement;
    aj["resamples"] = rep.resamples;
    aj["seed"] = rep.seed;
    aj["notes"] = rep.notes;
    j["agreement"] = aj;

    if (cfg.has("out")) {
        fs::create_directories(cfg.get("out"));
        write_json(fs::path(cfg.get("out")) / "analysis.json", j);
        out << "modular " << rates.overall.modular << "/" << rates.overall.total << "; gmp " << rep.mean_a << " eu " << rep.mean_b
            << " over " << rep.participants.size() << " participant(s)\n";
    } else {
        out << j.dump(2) << "\n";
    }
    return 0;
}

// ----------------------------------------------------------- gen-corpus

inline int cmd_gen_corpus(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::uint64_t seed = cfg.get_seed();
    const fs::path spec_path = cfg.require("spec");
    const fs::path dir = cfg.require("out");
    const std::string spec_text = read_text_file(spec_path);
    CorpusSpec spec;
    try {
        spec = parse_corpus_spec(spec_text);
    } catch (const std::exception& e) {
        throw ConfigError(spec_path.string() + ": " + e.what());
    }
    const FilteredCorpus fc = generate_filtered_corpus(spec, seed);
    fs::create_directories(dir);
    std::string sequence;
    nlohmann::ordered_json mazes = nlohmann::ordered_json::array();
    for (const auto& g : fc.mazes) {
        write_text_file(dir / (g.map.id() + ".maze"), serialize_map(g.map));
        auto prov = cfg.provenance();
        prov.push_back("ground truth for " + g.map.id() + ", maze seed " + std::to_string(g.seed));
        write_text_file(dir / (g.map.id() + ".prog"), serialize_program(g.program, prov));
        sequence += g.map.id() + "\n";
        mazes.push_back({{"id", g.map.id()},
                         {"layout", to_string(g.layout)},
                         {"fragment_size", g.fragment_size},
                         {"seed", g.seed},
                         {"height", g.map.height()},
                         {"width", g.map.width()},
                         {"start", {g.map.start().row, g.map.start().col}},
                         {"exit", {g.map.exit()->row, g.map.exit()->col}}});
    }
    write_text_file(dir / "sequence", sequence);
    nlohmann::ordered_json m;
    m["config"] = cfg.to_json();
    m["spec"] = spec_text;
    m["mazes"] = mazes;
    if (spec.max_modular_probability) {
        nlohmann::ordered_json checks = nlohmann::ordered_json::array();
        for (const auto& c : fc.checks)
            checks.push_back({{"candidate_id", c.id},
                              {"seed", c.seed},
                              {"layout", to_string(c.layout)},
                              {"eu_modular_probability", {c.eu_modular.lo, c.eu_modular.hi}},
                              {"exact", c.eu_modular.exact},
                              {"discriminating_states", c.discriminating},
                              {"accepted", c.accepted}});
        m["filter"] = {{"max_modular_probability", *spec.max_modular_probability},
                       {"attempts", fc.attempts},
                       {"accepted", fc.mazes.size()},
                       {"checks", checks}};
    }
    write_json(dir / "manifest.json", m);
    out << "wrote " << fc.mazes.size() << " mazes to " << dir.string();
    if (spec.max_modular_probability) out << " (" << fc.attempts << " candidates tried)";
    out << "\n";
    return 0;
}

// ---------------------------------------------------------------- serve

inline int cmd_serve(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const int port = static_cast<int>(cfg.get_int("port", 1, 65535));
    const std::string host = cfg.get("host");
    const fs::path logs = cfg.require("out");
    std::vector<Corpus> corpora;
    for (const auto& d : split_list(cfg.require("corpus"))) corpora.push_back(load_corpus(d));
    ExperimentService service(std::move(corpora), logs);
    httplib::Server server;
    register_routes(server, service);
    if (!server.bind_to_port(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    out << "listening on " << host << ":" << port << ", logs in " << logs.string() << std::endl;
    server.listen_after_bind();
    return 0;
}

// ------------------------------------------------------------------ main

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env = process_env) {
    CLI::App app{"fragment-based planning toolkit", "fragplan"};
    app.require_subcommand(1);
    struct Slot {
        CLI::App* sub = nullptr;
        std::map<std::string, std::string> flags;
        std::map<std::string, bool> switches;
        std::vector<std::string> inputs;
        std::string config;
    };
    std::map<std::string, Slot> slots;
    for (const auto& [name, keys] : command_keys()) {
        Slot& s = slots[name];
        s.sub = app.add_subcommand(name);
        s.sub->add_option("--config", s.config, "key = value config file (or FRAGPLAN_CONFIG)");
        for (const auto& k : keys) {
            if (k.flag) s.sub->add_flag("--" + k.key, s.switches[k.key], k.help);
            else s.sub->add_option("--" + k.key, s.flags[k.key], k.help + (k.fallback.empty() ? "" : " [" + k.fallback + "]"));
        }
        if (name == "discover") s.sub->add_option("maps", s.inputs, "map files");
        if (name == "analyze") s.sub->add_option("logs", s.inputs, "trajectory logs");
    }
    std::vector<const char*> argv{"fragplan"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    std::string command;
    for (auto& [name, s] : slots)
        if (s.sub->parsed()) command = name;

    try {
        Slot& s = slots.at(command);
        const auto& keys = command_keys().at(command);
        std::map<std::string, std::string> file;
        std::string config_path = s.config;
        if (config_path.empty())
            if (auto v = env("FRAGPLAN_CONFIG")) config_path = *v;
        if (!config_path.empty()) {
            std::string text;
            try {
                text = read_text_file(config_path);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
            file = parse_config_file(text, config_path);
            for (const auto& [k, v] : file) {
                bool known = false;
                for (const auto& ks : keys) known |= ks.key == k;
                if (!known) throw ConfigError(config_path + ": key '" + k + "' does not apply to " + command);
            }
        }
        RunConfig cfg;
        cfg.command = command;
        cfg.inputs = s.inputs;
        for (const auto& k : keys) {
            std::string v = k.fallback;
            if (auto f = file.find(k.key); f != file.end()) v = f->second;
            if (auto e = env(env_name(k.key))) v = *e;
            if (s.sub->count("--" + k.key)) v = k.flag ? "true" : s.flags[k.key];
            cfg.values[k.key] = v;
        }
        if (command == "discover") return cmd_discover(cfg, out, err);
        if (command == "simulate") return cmd_simulate(cfg, out, err);
        if (command == "analyze") return cmd_analyze(cfg, out, err);
        if (command == "gen-corpus") return cmd_gen_corpus(cfg, out, err);
        return cmd_serve(cfg, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fragplan
