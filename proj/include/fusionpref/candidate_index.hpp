// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fusionpref {

/// `index.json` of a candidate directory. Paths are relative to the
/// directory; each pair keeps copies of its sources next to its candidates.
struct CandidateIndex {
    struct Candidate {
        size_t index = 0;
        std::string label;      // "general" or "level<k>"
        int64_t prompt_id = 0;  // row in the denoiser's prompt table
        std::string path;
    };
    struct Entry {
        std::string pair_id;
        std::string ir_path, vis_path;
        std::optional<std::string> target_path;
        std::vector<Candidate> candidates;
    };

    int64_t levels = 0;
    std::vector<Entry> pairs;

    const Entry* find(const std::string& pair_id) const;

    static CandidateIndex load(const std::filesystem::path& root);
    void save(const std::filesystem::path& root) const;
};

inline constexpr const char* kCandidateIndexFile = "index.json";

}  // namespace fusionpref
