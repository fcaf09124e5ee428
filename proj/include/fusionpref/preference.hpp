// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusionpref/image.hpp"

namespace fusionpref::preference {

/// Record provenance: "human" or "auto:<scorer-name>".
struct Source {
    bool human = true;
    std::string scorer;

    static Source from_human() { return {true, {}}; }
    static Source automatic(const std::string& scorer_name);
    static Source parse(const std::string& text);
    std::string str() const;
    bool operator==(const Source&) const = default;
};

/// Paths are relative to the manifest's directory.
struct PreferenceRecord {
    std::string pair_id;
    std::string ir_path, vis_path;
    std::string winner_path, loser_path;
    std::string mask_path;
    Source source;
    std::string created_at;
    std::optional<std::string> annotator;

    bool operator==(const PreferenceRecord&) const = default;
};

std::string to_json_line(const PreferenceRecord& record);
PreferenceRecord from_json_line(const std::string& line);

/// Reads a line-delimited manifest. Malformed lines raise MalformedManifest
/// with the 1-based line number; referenced files that do not exist raise
/// MissingFile listing every absent path. A trailing line without a newline
/// is an in-progress append and is skipped.
std::vector<PreferenceRecord> load_manifest(const std::filesystem::path& path, bool check_files = true);

/// Appends one record with a single O_APPEND write.
void append_manifest(const std::filesystem::path& path, const PreferenceRecord& record);

/// Deterministic candidate ranking; higher is better.
struct Scorer {
    std::string name;
    std::function<double(const Image& image, const Image* mask)> score;
};

/// en, sd, ag (each mask-restricted when given a mask) and composite (1, 1, 1).
std::vector<Scorer> builtin_scorers();
Scorer composite_scorer(double w_en, double w_sd, double w_ag);
Scorer find_scorer(const std::string& name);

/// Winner = first index of the maximum score, loser = last index of the
/// minimum score, so equal scores still give distinct indices.
std::pair<size_t, size_t> rank_candidates(const std::vector<double>& scores);

/// Candidates of one pair; paths are absolute or relative to the cwd.
struct CandidateSet {
    std::string pair_id;
    std::filesystem::path ir_path, vis_path;
    std::vector<std::filesystem::path> candidates;
};

struct Rect {
    int x = 0, y = 0, width = 0, height = 0;
};

struct Collected {
    PreferenceRecord record;
    size_t winner_index = 0;
    size_t loser_index = 0;
    std::vector<std::string> warnings;
};

/// Owns a manifest plus its `masks/` directory.
class PreferenceStore {
public:
    explicit PreferenceStore(std::filesystem::path manifest_path);

    const std::filesystem::path& manifest_path() const { return manifest_; }
    std::filesystem::path root() const { return manifest_.parent_path(); }
    std::filesystem::path resolve(const std::string& relative) const { return root() / relative; }

    Collected collect_region_specific(const CandidateSet& set, const Image& mask, size_t winner_idx,
                                      size_t loser_idx, const Source& source = Source::from_human(),
                                      const std::optional<std::string>& annotator = std::nullopt);

    /// Whole-image patch when `patch` is empty.
    Collected collect_global(const CandidateSet& set, const Scorer& scorer, const std::optional<Rect>& patch = {});

    /// Scores inside an arbitrary binary region and stores that region as
    /// the record mask.
    Collected collect_in_region(const CandidateSet& set, const Scorer& scorer, const Image& region);

    std::vector<PreferenceRecord> load(bool check_files = true) const;

private:
    std::string relative(const std::filesystem::path& p) const;
    std::string store_mask(const std::string& pair_id, const Image& mask);
    Collected persist(const CandidateSet& set, const Image& mask, size_t w, size_t l, const Source& source,
                      const std::optional<std::string>& annotator);

    std::filesystem::path manifest_;
};

/// Current UTC time as ISO 8601 with a trailing Z.
std::string utc_timestamp();

}  // namespace fusionpref::preference
