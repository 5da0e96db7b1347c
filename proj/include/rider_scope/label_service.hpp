/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/dataset.hpp"
#include "rider_scope/labels.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace rider_scope {

inline constexpr std::string_view kSchemaHeader = "X-Rider-Scope-Schema";
inline constexpr std::string_view kSchemaVersion = "1";

/// most_confident_first serves items by |suggestion - 0.5| descending;
/// items without a suggestion follow in harvest order.
enum class QueueOrder { most_confident_first, most_uncertain_first };

QueueOrder parse_queue_order(std::string_view text);

/// Which segments the queue serves.
enum class QueueMode { unlabeled, review_labeled, disagreements };

QueueMode parse_queue_mode(std::string_view text);

struct LabelServiceConfig {
    std::chrono::seconds lease_duration{300};
    QueueOrder order = QueueOrder::most_confident_first;
    /// Static UI bundle served at "/"; a placeholder page when unset or absent.
    std::filesystem::path ui_dir;
    /// Model scores per segment id, if a classifier has been run.
    std::map<std::string, double> suggestions;
    /// Where POST /api/manifest/build writes; defaults to <store>/manifest.jsonl.
    std::filesystem::path manifest_path;
};

/// {"segment_id": ..., "score": ...} per line.
std::map<std::string, double> read_suggestions(const std::filesystem::path& path);

struct TriageItem {
    std::string segment_id;
    std::string image_url;
    std::optional<double> model_suggestion;
    std::string source_frame_id;
    BoundingBox box;
    Label label = Label::unlabeled;
};

void to_json(nlohmann::json& j, const TriageItem& item);

struct LabelDecision {
    std::string segment_id;
    Label label = Label::unlabeled;
    std::string reviewer;
    std::string client_timestamp;
};

using Clock = std::chrono::steady_clock;

/// Outcome of a label submission.
enum class SubmitStatus { ok, not_found, leased_elsewhere, invalid };

struct SubmitResult {
    SubmitStatus status = SubmitStatus::ok;
    std::optional<SegmentRecord> record;
    std::string message;
};

/// Queue, lease, and stats logic over a SegmentStore; the HTTP layer in
/// LabelServer is a thin translation of these calls.
class TriageQueue {
public:
    TriageQueue(std::shared_ptr<SegmentStore> store, LabelServiceConfig config);

    /// Up to `count` items not leased to anyone else; each is leased to
    /// `reviewer` until now + lease_duration. Rejects count <= 0.
    std::vector<TriageItem> next(const std::string& reviewer, int count, QueueMode mode, Clock::time_point now);

    SubmitResult submit(const LabelDecision& decision, Clock::time_point now);

    nlohmann::json stats() const;

    /// Current lease holder of a segment, if the lease is live at `now`.
    std::optional<std::string> lease_holder(const std::string& segment_id, Clock::time_point now) const;

    SegmentStore& store() noexcept { return *store_; }
    const LabelServiceConfig& config() const noexcept { return config_; }

private:
    struct Lease {
        std::string reviewer;
        Clock::time_point expires;
    };

    std::shared_ptr<SegmentStore> store_;
    LabelServiceConfig config_;
    mutable std::mutex lease_mutex_;
    std::map<std::string, Lease> leases_;
};

/// HTTP front end:
///
///   GET  /api/health
///   GET  /api/queue/next?count=k[&reviewer=r][&mode=unlabeled|review|disagreements]
///   POST /api/labels                 {"segment_id","label","reviewer","client_timestamp"}
///   GET  /api/stats
///   GET  /api/segments/{id}/image
///   POST /api/manifest/build         {"balance","train_fraction","seed"}
///   GET  /                            triage UI bundle
class LabelServer {
public:
    LabelServer(std::shared_ptr<SegmentStore> store, LabelServiceConfig config);
    ~LabelServer();

    LabelServer(const LabelServer&) = delete;
    LabelServer& operator=(const LabelServer&) = delete;

    /// Returns the bound port (useful with port 0), or nullopt when the port is unavailable.
    std::optional<int> bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    void stop();

    TriageQueue& queue() noexcept { return *queue_; }

private:
    struct Impl;
    std::unique_ptr<TriageQueue> queue_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rider_scope
