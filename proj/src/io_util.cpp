/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/io_util.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/labels.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>

namespace rider_scope {

std::string_view to_string(Label label) noexcept {
    switch (label) {
        case Label::rider:
            return "rider";
        case Label::non_rider:
            return "non_rider";
        case Label::unlabeled:
            break;
    }
    return "unlabeled";
}

Label parse_label(std::string_view text) {
    if (text == "rider") return Label::rider;
    if (text == "non_rider") return Label::non_rider;
    if (text == "unlabeled") return Label::unlabeled;
    throw InvalidArgument("unknown label '" + std::string(text) + "' (expected rider, non_rider or unlabeled)");
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0x0f]);
    }
    return out;
}

std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError(path, "cannot open file");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw LoadError(tmp, "cannot open for writing");
        }
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) {
            throw LoadError(tmp, "write failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw LoadError(path, "rename failed: " + ec.message());
    }
}

void append_line_durable(const std::filesystem::path& path, std::string_view line) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw LoadError(path, std::string("cannot open for append: ") + std::strerror(errno));
    }
    std::string buffer(line);
    buffer.push_back('\n');
    const char* data = buffer.data();
    std::size_t remaining = buffer.size();
    while (remaining > 0) {
        const ssize_t written = ::write(fd, data, remaining);
        if (written < 0) {
            if (errno == EINTR) continue;
            const int err = errno;
            ::close(fd);
            throw LoadError(path, std::string("append failed: ") + std::strerror(err));
        }
        data += written;
        remaining -= static_cast<std::size_t>(written);
    }
    ::fsync(fd);
    ::close(fd);
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError(path, "cannot open file");
    }
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path, number, std::string("malformed JSON: ") + e.what());
        }
        try {
            fn(value, number);
        } catch (const ParseError&) {
            throw;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path, number, e.what());
        } catch (const InvalidArgument& e) {
            throw ParseError(path, number, e.what());
        }
    }
}

}  // namespace rider_scope
