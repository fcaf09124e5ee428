// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/service.hpp"

#include <fstream>
#include <future>
#include <random>
#include <sstream>

#include "fusionpref/error.hpp"
#include "fusionpref/log.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fusionpref::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string random_session_id() {
    std::random_device rd;
    std::ostringstream out;
    out << std::hex << rd() << rd();
    return out.str();
}

std::string code_name(ErrorCode code) { return std::string(error_code_name(code)); }

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    res.status = status;
    res.set_content(json{{"code", code}, {"message", message}}.dump(), "application/json");
}

json record_json(const preference::PreferenceRecord& r) { return json::parse(preference::to_json_line(r)); }

// Committed manifest lines only: a trailing partial line is never exposed.
std::string read_committed(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    std::stringstream buffer;
    buffer << in.rdbuf();
    std::string text = buffer.str();
    const auto last = text.rfind('\n');
    return last == std::string::npos ? std::string() : text.substr(0, last + 1);
}

size_t parse_index(const std::string& text, const char* field) {
    require(!text.empty(), ErrorCode::InvalidArgument, std::string("missing field ") + field);
    size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &pos);
    } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, std::string(field) + " is not an integer");
    }
    require(pos == text.size() && v >= 0, ErrorCode::InvalidArgument, std::string(field) + " must be a non-negative integer");
    return static_cast<size_t>(v);
}

Image mask_from_png(const std::string& bytes) {
    require(!bytes.empty(), ErrorCode::InvalidArgument, "missing mask upload");
    Image decoded;
    try {
        decoded = decode_png({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
    } catch (const Error&) {
        fail(ErrorCode::InvalidArgument, "mask is not a decodable PNG");
    }
    if (decoded.channels == 1) return binarize(decoded);
    Image gray(decoded.width, decoded.height, 1);
    for (int y = 0; y < decoded.height; ++y)
        for (int x = 0; x < decoded.width; ++x) {
            float s = 0.0f;
            for (int c = 0; c < decoded.channels; ++c) s += decoded.at(y, x, c);
            gray.at(y, x) = s / static_cast<float>(decoded.channels);
        }
    return binarize(gray);
}

}  // namespace

AnnotationService::AnnotationService(fs::path candidate_root, fs::path manifest_out, std::string session_id)
    : root_(std::move(candidate_root)),
      manifest_(std::move(manifest_out)),
      session_id_(session_id.empty() ? random_session_id() : std::move(session_id)),
      index_(CandidateIndex::load(root_)),
      store_(manifest_),
      server_(std::make_unique<httplib::Server>()) {
    routes();
    writer_ = std::thread([this] { writer_loop(); });
}

AnnotationService::~AnnotationService() { stop(); }

size_t AnnotationService::accepted() const {
    std::lock_guard lock(mutex_);
    return accepted_;
}

int AnnotationService::start(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    require(bound > 0, ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    listener_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    log::info("annotation service on http://", host, ":", bound, " session ", session_id_);
    return bound;
}

void AnnotationService::wait() {
    if (listener_.joinable()) listener_.join();
}

void AnnotationService::stop() {
    if (server_) server_->stop();
    if (listener_.joinable()) listener_.join();
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (writer_.joinable()) writer_.join();
}

void AnnotationService::writer_loop() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;  // stopping and drained
            job = std::move(queue_.front());
            queue_.pop_front();
        }
        job.run();
    }
}

SubmitResult AnnotationService::submit(const std::string& pair_id, const std::string& winner_idx,
                                       const std::string& loser_idx, const std::string& mask_png,
                                       const std::string& annotator) {
    auto promise = std::make_shared<std::promise<SubmitResult>>();
    auto future = promise->get_future();
    {
        std::lock_guard lock(mutex_);
        if (stopping_) return {503, std::nullopt, "unavailable", "service is shutting down"};
        queue_.push_back({[=, this] { promise->set_value(apply(pair_id, winner_idx, loser_idx, mask_png, annotator)); }});
    }
    cv_.notify_one();
    return future.get();
}

SubmitResult AnnotationService::apply(const std::string& pair_id, const std::string& winner_idx,
                                      const std::string& loser_idx, const std::string& mask_png,
                                      const std::string& annotator) {
    const auto* entry = index_.find(pair_id);
    if (!entry) return {404, std::nullopt, code_name(ErrorCode::NotFound), "unknown pair " + pair_id};
    if (annotated_.count(pair_id)) {
        return {409, std::nullopt, code_name(ErrorCode::Conflict),
                "pair " + pair_id + " already annotated in session " + session_id_};
    }
    try {
        const size_t w = parse_index(winner_idx, "winner_idx");
        const size_t l = parse_index(loser_idx, "loser_idx");
        const Image mask = mask_from_png(mask_png);
        preference::CandidateSet set{pair_id, root_ / entry->ir_path, root_ / entry->vis_path, {}};
        for (const auto& c : entry->candidates) set.candidates.push_back(root_ / c.path);
        std::optional<std::string> who;
        if (!annotator.empty()) who = annotator;
        auto collected = store_.collect_region_specific(set, mask, w, l, preference::Source::from_human(), who);
        annotated_.insert(pair_id);
        {
            std::lock_guard lock(mutex_);
            ++accepted_;
        }
        return {201, collected.record, {}, {}};
    } catch (const Error& e) {
        const int status = e.code() == ErrorCode::Io ? 500 : 422;
        return {status, std::nullopt, code_name(e.code()), e.what()};
    }
}

void AnnotationService::routes() {
    auto& srv = *server_;

    srv.Get("/api/pairs", [this](const httplib::Request&, httplib::Response& res) {
        json pairs = json::array();
        std::set<std::string> done;
        {
            std::lock_guard lock(mutex_);
            done = annotated_;
        }
        for (const auto& e : index_.pairs) {
            pairs.push_back({{"pair_id", e.pair_id},
                             {"candidate_count", e.candidates.size()},
                             {"annotated", done.count(e.pair_id) > 0}});
        }
        res.set_content(json{{"session_id", session_id_}, {"cursor", done.size()}, {"pairs", pairs}}.dump(),
                        "application/json");
    });

    srv.Get(R"(/api/pairs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto* e = index_.find(req.matches[1]);
        if (!e) return send_error(res, 404, code_name(ErrorCode::NotFound), "unknown pair " + req.matches[1].str());
        json cands = json::array();
        for (const auto& c : e->candidates) {
            cands.push_back({{"index", c.index}, {"label", c.label}, {"prompt_id", c.prompt_id},
                             {"url", "/api/images/" + c.path}});
        }
        json body{{"pair_id", e->pair_id},
                  {"ir_url", "/api/images/" + e->ir_path},
                  {"vis_url", "/api/images/" + e->vis_path},
                  {"levels", index_.levels},
                  {"candidates", cands}};
        body["target_url"] = e->target_path ? json("/api/images/" + *e->target_path) : json(nullptr);
        std::lock_guard lock(mutex_);
        body["annotated"] = annotated_.count(e->pair_id) > 0;
        res.set_content(body.dump(), "application/json");
    });

    srv.Get(R"(/api/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        const fs::path rel = fs::path(req.matches[1].str()).lexically_normal();
        const bool escapes = rel.is_absolute() || rel.empty() || *rel.begin() == "..";
        if (escapes || rel.extension() != ".png") {
            return send_error(res, 404, code_name(ErrorCode::NotFound), "no such image");
        }
        std::ifstream in(root_ / rel, std::ios::binary);
        if (!in) return send_error(res, 404, code_name(ErrorCode::NotFound), "no such image " + rel.string());
        std::stringstream buffer;
        buffer << in.rdbuf();
        res.set_content(buffer.str(), "image/png");
    });

    srv.Post(R"(/api/pairs/([^/]+)/preference)", [this](const httplib::Request& req, httplib::Response& res) {
        auto field = [&](const char* key) { return req.has_file(key) ? req.get_file_value(key).content : std::string(); };
        auto result = submit(req.matches[1], field("winner_idx"), field("loser_idx"), field("mask"), field("annotator"));
        if (!result.record) return send_error(res, result.status, result.error_code, result.message);
        res.status = 201;
        res.set_content(record_json(*result.record).dump(), "application/json");
    });

    srv.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(read_committed(manifest_), "application/x-ndjson");
    });
}

}  // namespace fusionpref::service
