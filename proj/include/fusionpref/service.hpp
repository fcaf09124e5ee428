// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fusionpref/candidate_index.hpp"
#include "fusionpref/preference.hpp"

namespace httplib {
class Server;
}

namespace fusionpref::service {

/// Outcome of one submission: HTTP status plus either a record or an error.
struct SubmitResult {
    int status = 201;
    std::optional<preference::PreferenceRecord> record;
    std::string error_code;
    std::string message;
};

/// HTTP backend for human preference collection over a candidate directory.
///
///   GET  /api/pairs                     pair list with candidate counts
///   GET  /api/pairs/{id}                sources, candidate URLs, prompt labels
///   GET  /api/images/{path}             PNG bytes under the candidate root
///   POST /api/pairs/{id}/preference     multipart winner_idx, loser_idx,
///                                       annotator, mask (PNG)
///   GET  /api/export                    current manifest
///
/// Errors are JSON {code, message}. A single writer thread owns the
/// manifest; handlers hand it submissions through a queue.
class AnnotationService {
public:
    AnnotationService(std::filesystem::path candidate_root, std::filesystem::path manifest_out,
                      std::string session_id = {});
    ~AnnotationService();

    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port.
    /// Returns the bound port; throws Io on bind failure.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from elsewhere.
    void wait();
    /// Stops accepting requests, drains queued submissions, joins threads.
    void stop();

    /// Validates and persists one submission through the writer thread.
    SubmitResult submit(const std::string& pair_id, const std::string& winner_idx, const std::string& loser_idx,
                        const std::string& mask_png, const std::string& annotator);

    const CandidateIndex& index() const { return index_; }
    const std::string& session_id() const { return session_id_; }
    size_t accepted() const;

private:
    struct Job {
        std::function<void()> run;
    };

    void routes();
    void writer_loop();
    SubmitResult apply(const std::string& pair_id, const std::string& winner_idx, const std::string& loser_idx,
                       const std::string& mask_png, const std::string& annotator);

    std::filesystem::path root_;
    std::filesystem::path manifest_;
    std::string session_id_;
    CandidateIndex index_;
    preference::PreferenceStore store_;
    std::unique_ptr<httplib::Server> server_;
    std::thread listener_;
    std::thread writer_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Job> queue_;
    bool stopping_ = false;
    std::set<std::string> annotated_;
    size_t accepted_ = 0;
};

}  // namespace fusionpref::service
