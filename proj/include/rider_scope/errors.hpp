/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace rider_scope {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated; the call was rejected.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

/// A file could not be opened or decoded. The message always names the path.
class LoadError : public Error {
public:
    LoadError(const std::filesystem::path& path, const std::string& what)
        : Error(path.string() + ": " + what), path_(path) {}

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

/// A structured file violated its schema at a specific (1-based) line.
class ParseError : public Error {
public:
    ParseError(const std::filesystem::path& path, std::size_t line, const std::string& what)
        : Error(path.string() + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Failure inside one pipeline stage for one frame.
class StageError : public Error {
public:
    StageError(std::string frame_id, std::string stage, const std::string& what)
        : Error("frame '" + frame_id + "', stage '" + stage + "': " + what),
          frame_id_(std::move(frame_id)),
          stage_(std::move(stage)) {}

    const std::string& frame_id() const noexcept { return frame_id_; }
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string frame_id_;
    std::string stage_;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace rider_scope
