// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <string>

// Thin facade over spdlog. Torch bundles its own fmt, so spdlog is only
// included from a torch-free translation unit.
namespace fusionpref::log {

enum class Level { Debug, Info, Warn, Error };

void write(Level level, const std::string& message);
void set_level(Level level);
Level level_from_string(const std::string& name);

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream out;
    out.precision(5);
    (out << ... << args);
    return out.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::Debug, concat(args...)); }
template <typename... Args>
void info(const Args&... args) { write(Level::Info, concat(args...)); }
template <typename... Args>
void warn(const Args&... args) { write(Level::Warn, concat(args...)); }
template <typename... Args>
void error(const Args&... args) { write(Level::Error, concat(args...)); }

}  // namespace fusionpref::log
