// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fusionpref {

enum class ErrorCode {
    InvalidArgument,
    InvalidRange,
    ShapeMismatch,
    DimensionNotDivisible,
    IndexCollision,
    NonBinaryMask,
    MalformedManifest,
    MissingFile,
    MissingDependency,
    NotFound,
    Conflict,
    EmptyDataset,
    Diverged,
    Io,
};

std::string_view error_code_name(ErrorCode code);

/// Exception carrying a machine-readable category; the CLI and the HTTP
/// service map the category onto exit codes and status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
    if (!cond) fail(code, message);
}

}  // namespace fusionpref
