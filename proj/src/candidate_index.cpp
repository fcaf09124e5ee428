// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/candidate_index.hpp"

#include <fstream>

#include "fusionpref/error.hpp"
#include "json.hpp"

namespace fusionpref {

namespace fs = std::filesystem;
using nlohmann::json;

const CandidateIndex::Entry* CandidateIndex::find(const std::string& pair_id) const {
    for (const auto& e : pairs)
        if (e.pair_id == pair_id) return &e;
    return nullptr;
}

CandidateIndex CandidateIndex::load(const fs::path& root) {
    const fs::path path = root / kCandidateIndexFile;
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::MissingDependency,
            "missing candidate index " + path.string() + " (produced by `generate-candidates`)");
    json j;
    try {
        j = json::parse(in);
        CandidateIndex index;
        index.levels = j.at("levels");
        for (const auto& p : j.at("pairs")) {
            Entry e;
            e.pair_id = p.at("pair_id");
            e.ir_path = p.at("ir_path");
            e.vis_path = p.at("vis_path");
            if (p.contains("target_path") && !p["target_path"].is_null()) e.target_path = p["target_path"];
            for (const auto& c : p.at("candidates")) {
                e.candidates.push_back({c.at("index"), c.at("label"), c.at("prompt_id"), c.at("path")});
            }
            index.pairs.push_back(std::move(e));
        }
        return index;
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedManifest, "bad candidate index " + path.string() + ": " + e.what());
    }
}

void CandidateIndex::save(const fs::path& root) const {
    json pairs_json = json::array();
    for (const auto& e : pairs) {
        json cands = json::array();
        for (const auto& c : e.candidates)
            cands.push_back({{"index", c.index}, {"label", c.label}, {"prompt_id", c.prompt_id}, {"path", c.path}});
        json p{{"pair_id", e.pair_id}, {"ir_path", e.ir_path}, {"vis_path", e.vis_path}, {"candidates", cands}};
        p["target_path"] = e.target_path ? json(*e.target_path) : json(nullptr);
        pairs_json.push_back(p);
    }
    fs::create_directories(root);
    std::ofstream out(root / kCandidateIndexFile);
    out << json{{"levels", levels}, {"pairs", pairs_json}}.dump(2) << '\n';
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (root / kCandidateIndexFile).string());
}

}  // namespace fusionpref
