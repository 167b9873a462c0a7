#pragma once

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fragplan/discovery.hpp"

namespace fragplan {

/// Grid as a matrix of 0 (floor) / 1 (wall).
inline nlohmann::json grid_matrix(const CellGrid& g) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < g.height; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < g.width; ++c) row.push_back(static_cast<int>(g.at(r, c)));
        rows.push_back(row);
    }
    return rows;
}

/// Accepts rows as 0/1 arrays or as '#'/'.' strings.
inline CellGrid parse_grid_json(const nlohmann::json& rows) {
    if (!rows.is_array() || rows.empty()) throw std::invalid_argument("fragment must be a nonempty array of rows");
    CellGrid g;
    g.height = static_cast<int>(rows.size());
    for (const auto& row : rows) {
        std::vector<std::uint8_t> cells;
        if (row.is_string()) {
            for (char ch : row.get<std::string>()) {
                if (ch != '#' && ch != '.') throw std::invalid_argument(std::string("bad fragment cell '") + ch + "'");
                cells.push_back(ch == '#' ? 1 : 0);
            }
        } else if (row.is_array()) {
            for (const auto& v : row) {
                const int x = v.get<int>();
                if (x != 0 && x != 1) throw std::invalid_argument("fragment cells must be 0 or 1");
                cells.push_back(static_cast<std::uint8_t>(x));
            }
        } else {
            throw std::invalid_argument("fragment row must be an array or string");
        }
        if (g.width == 0) g.width = static_cast<int>(cells.size());
        if (cells.empty() || static_cast<int>(cells.size()) != g.width) throw std::invalid_argument("fragment rows must have equal nonzero length");
        g.cells.insert(g.cells.end(), cells.begin(), cells.end());
    }
    return g;
}

/// Request body sent to the proposer endpoint.
inline nlohmann::json proposer_request_json(const ProposerRequest& req, int completions) {
    nlohmann::json j;
    j["map"] = grid_matrix(map_cells(*req.map));
    j["fragments"] = nlohmann::json::array();
    for (const auto& f : req.fragments) j["fragments"].push_back(grid_matrix(f.cells));
    j["round"] = req.round;
    j["max_candidates"] = completions;
    return j;
}

/// One completion: {"fragments": [grid, ...],
///                  "placements": [{"fragment", "row", "col", "rot", "reflect"}]}
inline MapProgram parse_candidate_json(const nlohmann::json& c, int height, int width) {
    MapProgram p{height, width, {}, {}};
    const auto& frags = c.at("fragments");
    if (!frags.is_array()) throw std::invalid_argument("fragments must be an array");
    for (const auto& f : frags) p.fragments.push_back(Fragment{static_cast<int>(p.fragments.size()), parse_grid_json(f)});
    for (const auto& pl : c.at("placements")) {
        const int fid = pl.at("fragment").get<int>();
        if (fid < 0 || fid >= static_cast<int>(p.fragments.size())) throw std::invalid_argument("placement names unknown fragment " + std::to_string(fid));
        const Dihedral d = Dihedral::from_degrees(pl.value("rot", 0), pl.value("reflect", false));
        p.placements.push_back(Placement{fid, Transform{d, {pl.at("row").get<int>(), pl.at("col").get<int>()}}});
    }
    check_program(p);
    return p;
}

inline nlohmann::json candidate_json(const MapProgram& p) {
    nlohmann::json c;
    c["fragments"] = nlohmann::json::array();
    std::map<int, int> index;
    for (const auto& f : p.fragments) {
        index[f.id] = static_cast<int>(index.size());
        c["fragments"].push_back(grid_matrix(f.cells));
    }
    c["placements"] = nlohmann::json::array();
    for (const auto& pl : p.placements)
        c["placements"].push_back({{"fragment", index.at(pl.fragment_id)},
                                   {"row", pl.transform.translation.row},
                                   {"col", pl.transform.translation.col},
                                   {"rot", pl.transform.symmetry.degrees()},
                                   {"reflect", pl.transform.symmetry.reflect}});
    return c;
}

/// Sends each round to an HTTP endpoint and parses its completions.
/// Malformed completions come back as invalid candidates; transport errors
/// and non-JSON responses raise ProposerFailure.
class ExternalProposer : public Proposer {
public:
    /// `endpoint` is a URL such as http://127.0.0.1:8900/propose.
    explicit ExternalProposer(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30),
                              std::string token = {})
        : endpoint_(std::move(endpoint)), token_(std::move(token)), timeout_(timeout) {
        const auto scheme = endpoint_.find("://");
        if (scheme == std::string::npos) throw std::invalid_argument("endpoint must be an http URL: " + endpoint_);
        const auto slash = endpoint_.find('/', scheme + 3);
        base_ = endpoint_.substr(0, slash);
        path_ = slash == std::string::npos ? "/" : endpoint_.substr(slash);
    }

    std::string name() const override { return "external"; }

    std::vector<Candidate> propose(const ProposerRequest& req, int completions) override {
        httplib::Client client(base_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        if (!token_.empty()) client.set_bearer_token_auth(token_);
        auto res = client.Post(path_, proposer_request_json(req, completions).dump(), "application/json");
        if (!res) throw ProposerFailure(endpoint_ + ": " + httplib::to_string(res.error()));
        if (res->status != 200) throw ProposerFailure(endpoint_ + " returned HTTP " + std::to_string(res->status));
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(res->body);
        } catch (const std::exception& e) {
            throw ProposerFailure(std::string("response is not JSON: ") + e.what());
        }
        if (!body.is_object() || !body.contains("candidates") || !body["candidates"].is_array())
            throw ProposerFailure("response has no candidates array");
        std::vector<Candidate> out;
        for (const auto& c : body["candidates"]) {
            if (static_cast<int>(out.size()) >= completions) break;
            Candidate cand;
            cand.source = CandidateSource::external;
            cand.raw = c.dump();
            try {
                cand.program = parse_candidate_json(c, req.map->height(), req.map->width());
            } catch (const std::exception& e) {
                cand.parse_error = e.what();
            }
            out.push_back(std::move(cand));
        }
        return out;
    }

private:
    std::string endpoint_;
    std::string base_;
    std::string path_;
    std::string token_;
    std::chrono::milliseconds timeout_;
};

}  // namespace fragplan
