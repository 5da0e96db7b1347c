/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/geometry.hpp"
#include "rider_scope/image.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace rider_scope {

inline constexpr std::string_view kPersonClass = "person";

struct Detection {
    BoundingBox box;  // original-frame coordinates
    double confidence = 0.0;
    std::string class_label{kPersonClass};
};

/// Person detections of one frame, by descending confidence (ties: left edge ascending).
struct DetectionSet {
    std::string frame_id;
    std::vector<Detection> detections;
};

enum class BackendKind { pretrained_yolo, replay };

struct DetectorConfig {
    BackendKind backend = BackendKind::replay;
    /// Darknet .weights file. The network description defaults to the same
    /// path with a .cfg extension unless network_config_path is set.
    std::filesystem::path weights_path;
    std::filesystem::path network_config_path;
    std::filesystem::path replay_path;
    double confidence_threshold = 0.5;
    double nms_threshold = 0.45;

    /// Both thresholds must lie in (0, 1).
    void validate() const;
};

BackendKind parse_backend_kind(std::string_view name);
std::string_view to_string(BackendKind kind) noexcept;

/// A loaded detector is read-only; detect_persons may be called concurrently.
class Detector {
public:
    virtual ~Detector() = default;

    virtual DetectionSet detect_persons(const Frame& frame) const = 0;
    virtual std::vector<std::string> class_vocabulary() const = 0;
    virtual std::string_view name() const noexcept = 0;
};

/// Throws LoadError for missing/corrupt files, ParseError for replay schema violations.
std::unique_ptr<Detector> load_detector(const DetectorConfig& config);

/// Sorts into DetectionSet order.
void sort_detections(std::vector<Detection>& detections);

/// The 80 COCO class names, index 0 = "person".
const std::vector<std::string>& coco_class_names();

}  // namespace rider_scope
