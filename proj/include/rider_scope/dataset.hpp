/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/detector.hpp"
#include "rider_scope/geometry.hpp"
#include "rider_scope/image.hpp"
#include "rider_scope/labels.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace rider_scope {

enum class Origin { harvested, web_import };

std::string_view to_string(Origin origin) noexcept;

/// One image segment with its provenance and current label.
struct SegmentRecord {
    std::string segment_id;
    std::string source_frame_id;
    std::string interaction_id;
    BoundingBox box;           // detector output (whole image for web imports)
    BoundingBox extended_box;  // extend_region(box, frame_dims) for harvested records
    FrameDims frame_dims;
    std::string crop_path;  // relative to the store root
    Label label = Label::unlabeled;
    Origin origin = Origin::harvested;
    std::string labeled_by;
    std::string labeled_at;  // ISO-8601 UTC, empty while unlabeled
};

void to_json(nlohmann::json& j, const SegmentRecord& record);
void from_json(const nlohmann::json& j, SegmentRecord& record);

struct AuditEntry {
    std::string segment_id;
    Label previous = Label::unlabeled;
    Label label = Label::unlabeled;
    std::string labeled_by;
    std::string labeled_at;
};

void to_json(nlohmann::json& j, const AuditEntry& entry);
void from_json(const nlohmann::json& j, AuditEntry& entry);

struct StoreCounts {
    std::size_t pending = 0;
    std::size_t rider = 0;
    std::size_t non_rider = 0;
    std::size_t total() const noexcept { return pending + rider + non_rider; }
};

/// Immutable view of the store at one instant.
struct StoreSnapshot {
    std::vector<SegmentRecord> records;  // creation order
    std::map<std::string, std::size_t> index;
    std::vector<AuditEntry> audit;

    const SegmentRecord* find(const std::string& segment_id) const;
    StoreCounts counts() const;
};

/// Directory-backed segment store:
///
///   <root>/segments.jsonl  one SegmentRecord per line, appended on creation
///   <root>/audit.jsonl     append-only label events; replayed over segments on open
///   <root>/crops/          crop images, named by segment id
///
/// Single writer (internally serialized); readers work on immutable snapshots.
/// Every append is flushed to disk before the call returns, so a process
/// kill never loses an acknowledged label.
class SegmentStore {
public:
    /// Creates the layout when missing. Throws LoadError when the root is not writable.
    static std::shared_ptr<SegmentStore> open(const std::filesystem::path& root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::shared_ptr<const StoreSnapshot> snapshot() const;

    /// Adds a record with its crop bytes unless the id already exists.
    /// Returns false for duplicates. `crop_extension` includes the dot.
    bool insert(SegmentRecord record, std::span<const std::uint8_t> crop_bytes, const std::string& crop_extension);

    /// Throws NotFound for unknown ids, InvalidArgument for Label::unlabeled
    /// (labels move between rider and non_rider, never back).
    SegmentRecord record_label(const std::string& segment_id, Label label, const std::string& labeled_by);

    std::filesystem::path crop_file(const SegmentRecord& record) const { return root_ / record.crop_path; }

    /// Re-reads both files from disk (fresh recount; used by consistency checks).
    StoreSnapshot reload_from_disk() const;

private:
    explicit SegmentStore(std::filesystem::path root);

    std::filesystem::path root_;
    mutable std::mutex mutex_;
    StoreSnapshot state_;
    // Rebuilt from state_ on the first snapshot() after a write.
    mutable std::shared_ptr<const StoreSnapshot> published_;
};

/// A frame plus the interaction (scenario) it belongs to.
struct SourcedFrame {
    Frame frame;
    std::string interaction_id;
};

class FrameSource {
public:
    virtual ~FrameSource() = default;
    /// Next frame, or nullopt at the end. May throw LoadError for a bad file.
    virtual std::optional<SourcedFrame> next() = 0;
};

/// Image files under a directory, sorted by relative path. The frame id is
/// the relative path without extension; the interaction id is the first
/// directory component, or `default_interaction` for files directly in root.
class DirectoryFrameSource final : public FrameSource {
public:
    DirectoryFrameSource(std::filesystem::path root, std::string default_interaction);
    std::optional<SourcedFrame> next() override;
    std::size_t size() const noexcept { return files_.size(); }

private:
    std::filesystem::path root_;
    std::string default_interaction_;
    std::vector<std::filesystem::path> files_;
    std::size_t cursor_ = 0;
};

class VectorFrameSource final : public FrameSource {
public:
    explicit VectorFrameSource(std::vector<SourcedFrame> frames) : frames_(std::move(frames)) {}
    std::optional<SourcedFrame> next() override;

private:
    std::vector<SourcedFrame> frames_;
    std::size_t cursor_ = 0;
};

bool is_image_file(const std::filesystem::path& path);

struct HarvestSummary {
    std::size_t frames = 0;
    std::size_t staged = 0;             // new records
    std::size_t already_present = 0;    // dedup hits
    std::size_t dropped_regions = 0;    // extension clipped away
    std::size_t frame_errors = 0;       // detector or decode failures, skipped
};

/// Deterministic id of a harvested segment: frame id + box rounded to 0.01 px.
std::string harvested_segment_id(const std::string& frame_id, const BoundingBox& box);

/// Detect, extend, crop, and stage one unlabeled record per person.
HarvestSummary harvest_segments(FrameSource& frames, const Detector& detector, SegmentStore& store);

struct ImportSummary {
    std::size_t imported = 0;
    std::size_t duplicates = 0;
    std::size_t skipped = 0;  // unreadable
};

/// Each readable image becomes a labeled web_import record; deduplicated by
/// content hash. Files are stored as-is (resizing happens at training time).
ImportSummary import_web_images(const std::filesystem::path& dir, Label label, SegmentStore& store,
                                const std::string& labeled_by);

enum class Split { train, test };
std::string_view to_string(Split split) noexcept;

struct ManifestEntry {
    SegmentRecord record;
    Split split = Split::train;
};

struct ClassCounts {
    std::size_t rider = 0;
    std::size_t non_rider = 0;
};

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
    std::filesystem::path store_root;
    std::vector<ManifestEntry> entries;
    ClassCounts train_counts;
    ClassCounts test_counts;
    bool balanced = false;
    double train_fraction = 0.85;
    std::uint64_t seed = 0;

    /// Recomputes the per-split class counts from the entries.
    void recount();
};

/// Interaction-level split: all segments of an interaction land together.
struct SplitResult {
    std::vector<std::string> train_interactions;
    std::vector<std::string> test_interactions;
};

/// floor(fraction * n) interactions to train, clamped so each side gets at
/// least one. Deterministic under seed. Rejects fewer than two interactions.
SplitResult split_interactions(std::vector<std::string> interaction_ids, double train_fraction, std::uint64_t seed);

/// Balanced (optional, by seeded undersampling) and split manifest of all
/// labeled records. Rejects a class with zero labeled records and labeled
/// records whose crop file is missing.
DatasetManifest build_manifest(const SegmentStore& store, bool balance, double train_fraction, std::uint64_t seed);

/// JSON Lines: a header object, then one record per line with its split.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path,
                    const nlohmann::json& provenance = nlohmann::json::object());
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Harvested records whose extended_box differs from the recomputation.
std::vector<std::string> inconsistent_extensions(const StoreSnapshot& snapshot);

std::string utc_timestamp();

}  // namespace rider_scope
