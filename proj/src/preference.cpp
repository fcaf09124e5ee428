// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/preference.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fusionpref/error.hpp"
#include "fusionpref/log.hpp"
#include "fusionpref/metrics.hpp"
#include "json.hpp"

namespace fusionpref::preference {

namespace fs = std::filesystem;
using nlohmann::json;

Source Source::automatic(const std::string& scorer_name) {
    require(!scorer_name.empty(), ErrorCode::InvalidArgument, "auto source needs a scorer name");
    return {false, scorer_name};
}

Source Source::parse(const std::string& text) {
    if (text == "human") return from_human();
    if (text.rfind("auto:", 0) == 0 && text.size() > 5) return automatic(text.substr(5));
    fail(ErrorCode::MalformedManifest, "unknown source '" + text + "' (expected human or auto:<scorer>)");
}

std::string Source::str() const { return human ? "human" : "auto:" + scorer; }

std::string to_json_line(const PreferenceRecord& r) {
    json j{{"pair_id", r.pair_id},         {"ir_path", r.ir_path},         {"vis_path", r.vis_path},
           {"winner_path", r.winner_path}, {"loser_path", r.loser_path},   {"mask_path", r.mask_path},
           {"source", r.source.str()},     {"created_at", r.created_at}};
    if (r.annotator) j["annotator"] = *r.annotator;
    return j.dump();
}

PreferenceRecord from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedManifest, std::string("invalid JSON: ") + e.what());
    }
    require(j.is_object(), ErrorCode::MalformedManifest, "record must be a JSON object");
    auto field = [&](const char* key) {
        require(j.contains(key) && j[key].is_string(), ErrorCode::MalformedManifest,
                std::string("missing or non-string field '") + key + "'");
        return j[key].get<std::string>();
    };
    PreferenceRecord r;
    r.pair_id = field("pair_id");
    r.ir_path = field("ir_path");
    r.vis_path = field("vis_path");
    r.winner_path = field("winner_path");
    r.loser_path = field("loser_path");
    r.mask_path = field("mask_path");
    r.source = Source::parse(field("source"));
    r.created_at = field("created_at");
    if (j.contains("annotator") && !j["annotator"].is_null()) r.annotator = field("annotator");
    require(r.winner_path != r.loser_path, ErrorCode::IndexCollision, "winner and loser are the same file");
    return r;
}

std::vector<PreferenceRecord> load_manifest(const fs::path& path, bool check_files) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::MissingFile, "cannot open manifest " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    std::vector<PreferenceRecord> records;
    std::vector<std::string> missing;
    const fs::path root = path.parent_path();
    size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        const size_t end = text.find('\n', pos);
        if (end == std::string::npos) break;
        ++line_no;
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            records.push_back(from_json_line(line));
        } catch (const Error& e) {
            fail(ErrorCode::MalformedManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (check_files) {
            const auto& r = records.back();
            for (const auto* p : {&r.ir_path, &r.vis_path, &r.winner_path, &r.loser_path, &r.mask_path}) {
                if (!fs::exists(root / *p)) missing.push_back((root / *p).string());
            }
        }
    }
    if (!missing.empty()) {
        std::string msg = "manifest " + path.string() + " references missing files:";
        for (const auto& m : missing) msg += "\n  " + m;
        fail(ErrorCode::MissingFile, msg);
    }
    return records;
}

void append_manifest(const fs::path& path, const PreferenceRecord& record) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::string line = to_json_line(record) + "\n";
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    require(fd >= 0, ErrorCode::Io, "cannot open manifest " + path.string() + ": " + std::strerror(errno));
    const ssize_t written = ::write(fd, line.data(), line.size());
    const int saved = errno;
    ::fsync(fd);
    ::close(fd);
    require(written == static_cast<ssize_t>(line.size()), ErrorCode::Io,
            "short write to manifest " + path.string() + ": " + std::strerror(saved));
}

namespace {

double score_metric(const Image& image, const Image* mask, const std::string& which) {
    const auto gray = metrics::to_gray(image);
    if (mask) {
        const auto stats = metrics::masked_stats(gray, *mask).in_mask;
        const auto& v = which == "en" ? stats.en : which == "sd" ? stats.sd : stats.ag;
        return v.value_or(0.0);
    }
    if (which == "en") return metrics::entropy_en(gray);
    if (which == "sd") return metrics::standard_deviation_sd(gray);
    return metrics::average_gradient_ag(gray);
}

Scorer metric_scorer(const std::string& which) {
    return {which, [which](const Image& image, const Image* mask) { return score_metric(image, mask, which); }};
}

}  // namespace

Scorer composite_scorer(double w_en, double w_sd, double w_ag) {
    return {"composite", [=](const Image& image, const Image* mask) {
                double s = 0.0;
                if (w_en != 0.0) s += w_en * score_metric(image, mask, "en");
                if (w_sd != 0.0) s += w_sd * score_metric(image, mask, "sd");
                if (w_ag != 0.0) s += w_ag * score_metric(image, mask, "ag");
                return s;
            }};
}

std::vector<Scorer> builtin_scorers() {
    return {metric_scorer("en"), metric_scorer("sd"), metric_scorer("ag"), composite_scorer(1.0, 1.0, 1.0)};
}

Scorer find_scorer(const std::string& name) {
    for (auto& s : builtin_scorers())
        if (s.name == name) return s;
    fail(ErrorCode::NotFound, "unknown scorer '" + name + "' (available: en, sd, ag, composite)");
}

std::pair<size_t, size_t> rank_candidates(const std::vector<double>& scores) {
    require(scores.size() >= 2, ErrorCode::InvalidArgument, "need at least 2 candidates");
    size_t w = 0, l = scores.size() - 1;
    for (size_t i = 0; i < scores.size(); ++i)
        if (scores[i] > scores[w]) w = i;
    for (size_t i = scores.size(); i-- > 0;)
        if (scores[i] < scores[l]) l = i;
    return {w, l};
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

PreferenceStore::PreferenceStore(fs::path manifest_path) : manifest_(std::move(manifest_path)) {
    if (manifest_.parent_path().empty()) manifest_ = fs::path(".") / manifest_;
}

std::string PreferenceStore::relative(const fs::path& p) const {
    return fs::relative(fs::absolute(p), fs::absolute(root())).generic_string();
}

std::string PreferenceStore::store_mask(const std::string& pair_id, const Image& mask) {
    const fs::path dir = root() / "masks";
    fs::create_directories(dir);
    for (int n = 0;; ++n) {
        const std::string name = pair_id + "_" + std::to_string(n) + ".png";
        const fs::path target = dir / name;
        if (fs::exists(target)) continue;
        write_png(target, mask);
        return "masks/" + name;
    }
}

Collected PreferenceStore::persist(const CandidateSet& set, const Image& mask, size_t w, size_t l,
                                   const Source& source, const std::optional<std::string>& annotator) {
    Collected out;
    out.winner_index = w;
    out.loser_index = l;
    if (std::all_of(mask.data.begin(), mask.data.end(), [](float v) { return v == 0.0f; })) {
        out.warnings.push_back("mask for " + set.pair_id +
                               " is empty; the record only constrains consistency outside the region");
        log::warn(out.warnings.back());
    }
    PreferenceRecord& r = out.record;
    r.pair_id = set.pair_id;
    r.ir_path = relative(set.ir_path);
    r.vis_path = relative(set.vis_path);
    r.winner_path = relative(set.candidates[w]);
    r.loser_path = relative(set.candidates[l]);
    r.mask_path = store_mask(set.pair_id, mask);
    r.source = source;
    r.created_at = utc_timestamp();
    r.annotator = annotator;
    append_manifest(manifest_, r);
    return out;
}

Collected PreferenceStore::collect_region_specific(const CandidateSet& set, const Image& mask, size_t winner_idx,
                                                   size_t loser_idx, const Source& source,
                                                   const std::optional<std::string>& annotator) {
    const size_t n = set.candidates.size();
    require(winner_idx < n && loser_idx < n, ErrorCode::InvalidRange,
            "candidate index out of range (have " + std::to_string(n) + ")");
    require(winner_idx != loser_idx, ErrorCode::IndexCollision,
            "winner and loser index are both " + std::to_string(winner_idx));
    require(mask.channels == 1, ErrorCode::InvalidArgument, "mask must be single-channel");
    require(is_binary(mask), ErrorCode::NonBinaryMask, "mask must contain only 0 and 1");
    const Image winner = read_png(set.candidates[winner_idx]);
    require(winner.width == mask.width && winner.height == mask.height, ErrorCode::ShapeMismatch,
            "mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) + ", candidates are " +
                std::to_string(winner.width) + "x" + std::to_string(winner.height));
    return persist(set, mask, winner_idx, loser_idx, source, annotator);
}

Collected PreferenceStore::collect_in_region(const CandidateSet& set, const Scorer& scorer, const Image& region) {
    require(set.candidates.size() >= 2, ErrorCode::InvalidArgument,
            "global collection needs at least 2 candidates, got " + std::to_string(set.candidates.size()));
    require(is_binary(region), ErrorCode::NonBinaryMask, "region mask must be binary");
    std::vector<double> scores;
    for (const auto& path : set.candidates) {
        const Image img = read_png(path);
        require(img.width == region.width && img.height == region.height, ErrorCode::ShapeMismatch,
                "region dims differ from candidate " + path.string());
        scores.push_back(scorer.score(img, &region));
    }
    const auto [w, l] = rank_candidates(scores);
    return persist(set, region, w, l, Source::automatic(scorer.name), std::nullopt);
}

Collected PreferenceStore::collect_global(const CandidateSet& set, const Scorer& scorer,
                                          const std::optional<Rect>& patch) {
    require(set.candidates.size() >= 2, ErrorCode::InvalidArgument,
            "global collection needs at least 2 candidates, got " + std::to_string(set.candidates.size()));
    const Image first = read_png(set.candidates.front());
    Image region = patch ? rectangle_mask(first.width, first.height, patch->x, patch->y, patch->width, patch->height)
                         : Image(first.width, first.height, 1, 1.0f);
    return collect_in_region(set, scorer, region);
}

std::vector<PreferenceRecord> PreferenceStore::load(bool check_files) const {
    if (!fs::exists(manifest_)) return {};
    return load_manifest(manifest_, check_files);
}

}  // namespace fusionpref::preference
