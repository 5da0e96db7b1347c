/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/dataset.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"
#include "rider_scope/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace rider_scope {

namespace fs = std::filesystem;

namespace {
constexpr const char* kSegmentsFile = "segments.jsonl";
constexpr const char* kAuditFile = "audit.jsonl";
constexpr const char* kCropsDir = "crops";
}  // namespace

std::string_view to_string(Origin origin) noexcept {
    return origin == Origin::harvested ? "harvested" : "web_import";
}

std::string_view to_string(Split split) noexcept {
    return split == Split::train ? "train" : "test";
}

namespace {

Origin parse_origin(std::string_view text) {
    if (text == "harvested") return Origin::harvested;
    if (text == "web_import") return Origin::web_import;
    throw InvalidArgument("unknown origin '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw InvalidArgument("unknown split '" + std::string(text) + "'");
}

}  // namespace

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)), ms);
}

void to_json(nlohmann::json& j, const SegmentRecord& r) {
    j = {{"segment_id", r.segment_id},
         {"source_frame_id", r.source_frame_id},
         {"interaction_id", r.interaction_id},
         {"box", r.box},
         {"extended_box", r.extended_box},
         {"frame_dims", {r.frame_dims.width, r.frame_dims.height}},
         {"crop_path", r.crop_path},
         {"label", to_string(r.label)},
         {"origin", to_string(r.origin)},
         {"labeled_by", r.labeled_by},
         {"labeled_at", r.labeled_at}};
}

void from_json(const nlohmann::json& j, SegmentRecord& r) {
    r.segment_id = j.at("segment_id").get<std::string>();
    r.source_frame_id = j.at("source_frame_id").get<std::string>();
    r.interaction_id = j.at("interaction_id").get<std::string>();
    r.box = j.at("box").get<BoundingBox>();
    r.extended_box = j.at("extended_box").get<BoundingBox>();
    const auto& dims = j.at("frame_dims");
    r.frame_dims = {dims.at(0).get<int>(), dims.at(1).get<int>()};
    r.crop_path = j.at("crop_path").get<std::string>();
    r.label = parse_label(j.at("label").get<std::string>());
    r.origin = parse_origin(j.at("origin").get<std::string>());
    r.labeled_by = j.value("labeled_by", "");
    r.labeled_at = j.value("labeled_at", "");
}

void to_json(nlohmann::json& j, const AuditEntry& e) {
    j = {{"segment_id", e.segment_id},
         {"previous", to_string(e.previous)},
         {"label", to_string(e.label)},
         {"labeled_by", e.labeled_by},
         {"labeled_at", e.labeled_at}};
}

void from_json(const nlohmann::json& j, AuditEntry& e) {
    e.segment_id = j.at("segment_id").get<std::string>();
    e.previous = parse_label(j.at("previous").get<std::string>());
    e.label = parse_label(j.at("label").get<std::string>());
    e.labeled_by = j.value("labeled_by", "");
    e.labeled_at = j.value("labeled_at", "");
}

const SegmentRecord* StoreSnapshot::find(const std::string& segment_id) const {
    const auto it = index.find(segment_id);
    return it == index.end() ? nullptr : &records[it->second];
}

StoreCounts StoreSnapshot::counts() const {
    StoreCounts c;
    for (const auto& r : records) {
        switch (r.label) {
            case Label::rider:
                ++c.rider;
                break;
            case Label::non_rider:
                ++c.non_rider;
                break;
            case Label::unlabeled:
                ++c.pending;
                break;
        }
    }
    return c;
}

namespace {

// Like for_each_jsonl, but a malformed final line without a trailing newline
// (an interrupted append) is skipped with a warning instead of failing.
void read_append_log(const fs::path& path, const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
    if (!fs::exists(path)) {
        return;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError(path, "cannot open file");
    }
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t number = 0;
    while (pos < text.size()) {
        const std::size_t eol = text.find('\n', pos);
        const bool terminated = eol != std::string::npos;
        const std::string line = text.substr(pos, terminated ? eol - pos : std::string::npos);
        pos = terminated ? eol + 1 : text.size();
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            if (!terminated) {
                spdlog::warn("{}:{}: ignoring incomplete trailing line", path.string(), number);
                break;
            }
            throw ParseError(path, number, std::string("malformed JSON: ") + e.what());
        }
        try {
            fn(value, number);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path, number, e.what());
        } catch (const InvalidArgument& e) {
            throw ParseError(path, number, e.what());
        }
    }
}

void apply_audit(SegmentRecord& record, const AuditEntry& entry) {
    record.label = entry.label;
    record.labeled_by = entry.labeled_by;
    record.labeled_at = entry.labeled_at;
}

StoreSnapshot load_state(const fs::path& root) {
    StoreSnapshot state;
    read_append_log(root / kSegmentsFile, [&](const nlohmann::json& j, std::size_t line) {
        auto record = j.get<SegmentRecord>();
        if (state.index.count(record.segment_id)) {
            throw ParseError(root / kSegmentsFile, line, "duplicate segment id " + record.segment_id);
        }
        state.index.emplace(record.segment_id, state.records.size());
        state.records.push_back(std::move(record));
    });
    read_append_log(root / kAuditFile, [&](const nlohmann::json& j, std::size_t line) {
        auto entry = j.get<AuditEntry>();
        if (entry.label == Label::unlabeled) {
            throw ParseError(root / kAuditFile, line, "audit entry without a decision");
        }
        const auto it = state.index.find(entry.segment_id);
        if (it == state.index.end()) {
            throw ParseError(root / kAuditFile, line, "audit entry for unknown segment " + entry.segment_id);
        }
        apply_audit(state.records[it->second], entry);
        state.audit.push_back(std::move(entry));
    });
    return state;
}

}  // namespace

SegmentStore::SegmentStore(fs::path root) : root_(std::move(root)) {}

std::shared_ptr<SegmentStore> SegmentStore::open(const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root / kCropsDir, ec);
    if (ec) {
        throw LoadError(root, "cannot create store directory: " + ec.message());
    }
    for (const char* name : {kSegmentsFile, kAuditFile}) {
        std::ofstream touch(root / name, std::ios::app);
        if (!touch) {
            throw LoadError(root / name, "store is not writable");
        }
    }
    auto store = std::shared_ptr<SegmentStore>(new SegmentStore(root));
    store->state_ = load_state(root);
    return store;
}

std::shared_ptr<const StoreSnapshot> SegmentStore::snapshot() const {
    std::lock_guard lock(mutex_);
    if (!published_) {
        published_ = std::make_shared<const StoreSnapshot>(state_);
    }
    return published_;
}

StoreSnapshot SegmentStore::reload_from_disk() const {
    return load_state(root_);
}

bool SegmentStore::insert(SegmentRecord record, std::span<const std::uint8_t> crop_bytes,
                          const std::string& crop_extension) {
    std::lock_guard lock(mutex_);
    if (state_.index.count(record.segment_id)) {
        return false;
    }
    record.crop_path = fmt::format("{}/{}{}", kCropsDir, record.segment_id, crop_extension);
    write_file_atomic(root_ / record.crop_path,
                      std::string_view(reinterpret_cast<const char*>(crop_bytes.data()), crop_bytes.size()));
    append_line_durable(root_ / kSegmentsFile, nlohmann::json(record).dump());

    if (record.label != Label::unlabeled) {
        AuditEntry entry{record.segment_id, Label::unlabeled, record.label, record.labeled_by, record.labeled_at};
        append_line_durable(root_ / kAuditFile, nlohmann::json(entry).dump());
        state_.audit.push_back(std::move(entry));
    }
    state_.index.emplace(record.segment_id, state_.records.size());
    state_.records.push_back(std::move(record));
    published_.reset();
    return true;
}

SegmentRecord SegmentStore::record_label(const std::string& segment_id, Label label, const std::string& labeled_by) {
    if (label == Label::unlabeled) {
        throw InvalidArgument("a label decision must be rider or non_rider");
    }
    std::lock_guard lock(mutex_);
    const auto it = state_.index.find(segment_id);
    if (it == state_.index.end()) {
        throw NotFound("unknown segment id '" + segment_id + "'");
    }
    auto& record = state_.records[it->second];
    AuditEntry entry{segment_id, record.label, label, labeled_by, utc_timestamp()};
    append_line_durable(root_ / kAuditFile, nlohmann::json(entry).dump());
    apply_audit(record, entry);
    state_.audit.push_back(std::move(entry));
    published_.reset();
    return record;
}

bool is_image_file(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

namespace {

std::vector<fs::path> list_images(const fs::path& root, bool recursive) {
    std::vector<fs::path> files;
    if (!fs::is_directory(root)) {
        throw LoadError(root, "not a directory");
    }
    const auto visit = [&](const fs::directory_entry& entry) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            files.push_back(fs::relative(entry.path(), root));
        }
    };
    if (recursive) {
        for (const auto& entry : fs::recursive_directory_iterator(root)) visit(entry);
    } else {
        for (const auto& entry : fs::directory_iterator(root)) visit(entry);
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

DirectoryFrameSource::DirectoryFrameSource(fs::path root, std::string default_interaction)
    : root_(std::move(root)), default_interaction_(std::move(default_interaction)), files_(list_images(root_, true)) {}

std::optional<SourcedFrame> DirectoryFrameSource::next() {
    if (cursor_ >= files_.size()) {
        return std::nullopt;
    }
    const fs::path rel = files_[cursor_++];
    auto id_path = rel;
    id_path.replace_extension();
    SourcedFrame out;
    out.interaction_id = rel.has_parent_path() ? rel.begin()->string() : default_interaction_;
    out.frame = load_frame(root_ / rel, id_path.generic_string());
    return out;
}

std::optional<SourcedFrame> VectorFrameSource::next() {
    if (cursor_ >= frames_.size()) {
        return std::nullopt;
    }
    return frames_[cursor_++];
}

std::string harvested_segment_id(const std::string& frame_id, const BoundingBox& box) {
    const auto key = fmt::format("{}|{:.2f},{:.2f},{:.2f},{:.2f}", frame_id, box.x, box.y, box.w, box.h);
    return "h-" + sha256_hex(key).substr(0, 16);
}

HarvestSummary harvest_segments(FrameSource& frames, const Detector& detector, SegmentStore& store) {
    HarvestSummary summary;
    while (true) {
        std::optional<SourcedFrame> item;
        try {
            item = frames.next();
        } catch (const LoadError& e) {
            ++summary.frame_errors;
            spdlog::warn("skipping unreadable frame: {}", e.what());
            continue;
        }
        if (!item) {
            break;
        }
        ++summary.frames;
        const Frame& frame = item->frame;
        DetectionSet detections;
        try {
            detections = detector.detect_persons(frame);
        } catch (const std::exception& e) {
            ++summary.frame_errors;
            spdlog::warn("detector failed on frame '{}': {}", frame.frame_id, e.what());
            continue;
        }
        const auto snapshot = store.snapshot();
        for (const auto& det : detections.detections) {
            ExtendedRegion region;
            try {
                region = extend_region(det.box, frame.dims());
            } catch (const InvalidArgument& e) {
                ++summary.dropped_regions;
                spdlog::warn("frame '{}': {}", frame.frame_id, e.what());
                continue;
            }
            SegmentRecord record;
            record.segment_id = harvested_segment_id(frame.frame_id, det.box);
            record.source_frame_id = frame.frame_id;
            record.interaction_id = item->interaction_id;
            record.box = det.box;
            record.extended_box = region.box;
            record.frame_dims = frame.dims();
            record.origin = Origin::harvested;

            const auto crop = encode_png(extract_crop(frame, region));
            if (store.insert(std::move(record), crop, ".png")) {
                ++summary.staged;
            } else {
                ++summary.already_present;
            }
        }
    }
    return summary;
}

ImportSummary import_web_images(const fs::path& dir, Label label, SegmentStore& store, const std::string& labeled_by) {
    if (label == Label::unlabeled) {
        throw InvalidArgument("web imports must carry a rider or non_rider label");
    }
    ImportSummary summary;
    for (const auto& rel : list_images(dir, true)) {
        const fs::path path = dir / rel;
        std::vector<std::uint8_t> bytes;
        Image image;
        try {
            bytes = read_file_bytes(path);
            image = decode_image(bytes, path);
        } catch (const LoadError& e) {
            ++summary.skipped;
            spdlog::warn("skipping web image: {}", e.what());
            continue;
        }
        const std::string hash = sha256_hex(bytes);
        SegmentRecord record;
        record.segment_id = "w-" + hash.substr(0, 16);
        record.source_frame_id = rel.generic_string();
        record.interaction_id = "web-" + hash.substr(0, 16);
        record.box = frame_box(image.dims());
        record.extended_box = record.box;
        record.frame_dims = image.dims();
        record.label = label;
        record.origin = Origin::web_import;
        record.labeled_by = labeled_by;
        record.labeled_at = utc_timestamp();

        auto ext = path.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (store.insert(std::move(record), bytes, ext)) {
            ++summary.imported;
        } else {
            ++summary.duplicates;
        }
    }
    return summary;
}

void DatasetManifest::recount() {
    train_counts = {};
    test_counts = {};
    for (const auto& e : entries) {
        auto& counts = e.split == Split::train ? train_counts : test_counts;
        if (e.record.label == Label::rider) ++counts.rider;
        if (e.record.label == Label::non_rider) ++counts.non_rider;
    }
}

SplitResult split_interactions(std::vector<std::string> interaction_ids, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidArgument(fmt::format("train fraction {} outside (0, 1)", train_fraction));
    }
    std::sort(interaction_ids.begin(), interaction_ids.end());
    interaction_ids.erase(std::unique(interaction_ids.begin(), interaction_ids.end()), interaction_ids.end());
    const std::size_t n = interaction_ids.size();
    if (n < 2) {
        throw InvalidArgument(fmt::format("need at least 2 interactions to split, got {}", n));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(interaction_ids.begin(), interaction_ids.end(), rng);

    auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    SplitResult out;
    out.train_interactions.assign(interaction_ids.begin(), interaction_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test_interactions.assign(interaction_ids.begin() + static_cast<std::ptrdiff_t>(n_train), interaction_ids.end());
    std::sort(out.train_interactions.begin(), out.train_interactions.end());
    std::sort(out.test_interactions.begin(), out.test_interactions.end());
    return out;
}

DatasetManifest build_manifest(const SegmentStore& store, bool balance, double train_fraction, std::uint64_t seed) {
    const auto snapshot = store.snapshot();
    std::vector<std::size_t> riders;
    std::vector<std::size_t> non_riders;
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < snapshot->records.size(); ++i) {
        const auto& r = snapshot->records[i];
        if (r.label == Label::unlabeled) {
            continue;
        }
        if (!fs::exists(store.crop_file(r))) {
            missing.push_back(r.segment_id);
        }
        (r.label == Label::rider ? riders : non_riders).push_back(i);
    }
    if (!missing.empty()) {
        throw InvalidArgument(fmt::format("{} labeled records have no crop file (first: {})", missing.size(),
                                          missing.front()));
    }
    if (riders.empty() || non_riders.empty()) {
        throw InvalidArgument(fmt::format("need labeled records of both classes (rider: {}, non_rider: {})",
                                          riders.size(), non_riders.size()));
    }

    if (balance && riders.size() != non_riders.size()) {
        auto& majority = riders.size() > non_riders.size() ? riders : non_riders;
        const std::size_t target = std::min(riders.size(), non_riders.size());
        std::mt19937_64 rng(seed);
        std::shuffle(majority.begin(), majority.end(), rng);
        majority.resize(target);
        std::sort(majority.begin(), majority.end());
    }
    std::vector<std::size_t> kept;
    std::merge(riders.begin(), riders.end(), non_riders.begin(), non_riders.end(), std::back_inserter(kept));

    std::vector<SegmentRecord> records;
    records.reserve(kept.size());
    for (auto i : kept) {
        records.push_back(snapshot->records[i]);
    }
    const DatasetSplit split = split_dataset(records, train_fraction, seed);
    const std::set<std::string> train_ids = [&] {
        std::set<std::string> ids;
        for (const auto& r : split.train) ids.insert(r.interaction_id);
        return ids;
    }();

    DatasetManifest manifest;
    manifest.store_root = store.root();
    manifest.balanced = balance;
    manifest.train_fraction = train_fraction;
    manifest.seed = seed;
    for (auto& r : records) {
        const Split s = train_ids.count(r.interaction_id) ? Split::train : Split::test;
        manifest.entries.push_back({std::move(r), s});
    }
    manifest.recount();
    return manifest;
}

namespace {

nlohmann::json counts_json(const ClassCounts& c) {
    return {{"rider", c.rider}, {"non_rider", c.non_rider}};
}

}  // namespace

void write_manifest(const DatasetManifest& manifest, const fs::path& path, const nlohmann::json& provenance) {
    std::string text;
    const nlohmann::json header = {
        {"kind", "rider-scope.manifest"},
        {"version", kManifestVersion},
        {"store_root", fs::absolute(manifest.store_root).string()},
        {"balanced", manifest.balanced},
        {"train_fraction", manifest.train_fraction},
        {"seed", manifest.seed},
        {"counts", {{"train", counts_json(manifest.train_counts)}, {"test", counts_json(manifest.test_counts)}}},
        {"provenance", provenance},
    };
    text += header.dump() + "\n";
    for (const auto& e : manifest.entries) {
        nlohmann::json line = e.record;
        line["split"] = to_string(e.split);
        text += line.dump() + "\n";
    }
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    write_file_atomic(path, text);
}

DatasetManifest read_manifest(const fs::path& path) {
    DatasetManifest manifest;
    bool have_header = false;
    ClassCounts header_train;
    ClassCounts header_test;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
        if (!have_header) {
            if (j.value("kind", "") != "rider-scope.manifest") {
                throw ParseError(path, line, "missing manifest header");
            }
            if (j.value("version", 0) != kManifestVersion) {
                throw ParseError(path, line, fmt::format("unsupported manifest version {}", j.value("version", 0)));
            }
            manifest.store_root = j.at("store_root").get<std::string>();
            manifest.balanced = j.at("balanced").get<bool>();
            manifest.train_fraction = j.at("train_fraction").get<double>();
            manifest.seed = j.at("seed").get<std::uint64_t>();
            const auto& counts = j.at("counts");
            header_train = {counts.at("train").at("rider").get<std::size_t>(),
                            counts.at("train").at("non_rider").get<std::size_t>()};
            header_test = {counts.at("test").at("rider").get<std::size_t>(),
                           counts.at("test").at("non_rider").get<std::size_t>()};
            have_header = true;
            return;
        }
        ManifestEntry entry;
        entry.record = j.get<SegmentRecord>();
        entry.split = parse_split(j.at("split").get<std::string>());
        manifest.entries.push_back(std::move(entry));
    });
    if (!have_header) {
        throw ParseError(path, 1, "empty manifest");
    }
    manifest.recount();
    if (manifest.train_counts.rider != header_train.rider || manifest.train_counts.non_rider != header_train.non_rider ||
        manifest.test_counts.rider != header_test.rider || manifest.test_counts.non_rider != header_test.non_rider) {
        throw ParseError(path, 1, "header counts disagree with the records");
    }
    return manifest;
}

std::vector<std::string> inconsistent_extensions(const StoreSnapshot& snapshot) {
    std::vector<std::string> bad;
    for (const auto& r : snapshot.records) {
        if (r.origin != Origin::harvested) {
            continue;
        }
        try {
            if (!(extend_region(r.box, r.frame_dims).box == r.extended_box)) {
                bad.push_back(r.segment_id);
            }
        } catch (const InvalidArgument&) {
            bad.push_back(r.segment_id);
        }
    }
    return bad;
}

}  // namespace rider_scope
