/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rider_scope {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Appends one line and fsyncs before returning.
void append_line_durable(const std::filesystem::path& path, std::string_view line);

/// Calls `fn(json, line_number)` for each non-blank line; malformed JSON
/// raises ParseError with the line number.
void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const nlohmann::json&, std::size_t)>& fn);

}  // namespace rider_scope
