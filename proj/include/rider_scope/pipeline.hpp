/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/classifier.hpp"
#include "rider_scope/dataset.hpp"
#include "rider_scope/detector.hpp"
#include "rider_scope/geometry.hpp"
#include "rider_scope/image.hpp"
#include "rider_scope/labels.hpp"

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace rider_scope {

struct Annotation {
    BoundingBox box;  // detection box
    BoundingBox extended_box;
    double score = 0.0;
    Label label = Label::non_rider;
    double confidence = 0.0;
};

struct StageTimings {
    double detect_ms = 0.0;
    double extend_ms = 0.0;
    double crop_ms = 0.0;
    double classify_ms = 0.0;
};

struct AnnotatedFrame {
    std::string frame_id;
    std::vector<Annotation> annotations;  // detection order
    StageTimings timing;
    std::vector<std::string> warnings;  // dropped regions
};

struct PipelineConfig {
    double decision_threshold = kDefaultDecisionThreshold;
    /// Frames in flight at once. Output order never depends on it.
    std::size_t workers = 1;
};

/// Detect, extend, crop, classify (one batch per frame). Degenerate
/// regions are dropped with a warning; stage failures raise StageError.
AnnotatedFrame process_frame(const Frame& frame, const Detector& detector, const RiderClassifier& classifier,
                             const PipelineConfig& config);

class FrameSink {
public:
    virtual ~FrameSink() = default;
    virtual void consume(const Frame& frame, const AnnotatedFrame& annotated) = 0;
};

struct FrameFailure {
    std::string frame_id;
    std::string message;
};

struct SequenceSummary {
    std::size_t frames = 0;
    std::size_t persons = 0;
    std::size_t riders = 0;
    std::size_t dropped_regions = 0;
    std::vector<FrameFailure> failures;
    StageTimings total_timing;
};

/// Frames are independent; results reach the sink in input order.
SequenceSummary process_sequence(FrameSource& frames, const Detector& detector, const RiderClassifier& classifier,
                                 const PipelineConfig& config, FrameSink& sink);

struct RenderStyle {
    bool draw_extended_box = false;
    bool draw_scores = true;
    int thickness = 2;
};

/// Riders green, other persons yellow (RGB).
inline constexpr std::uint8_t kRiderColor[3] = {0, 255, 0};
inline constexpr std::uint8_t kPersonColor[3] = {255, 255, 0};

Image render_annotations(const Image& image, const AnnotatedFrame& annotated, const RenderStyle& style = {});

/// One line per frame, mirroring the ground-truth schema plus scores.
nlohmann::json prediction_line(const AnnotatedFrame& annotated);

class JsonlPredictionSink final : public FrameSink {
public:
    explicit JsonlPredictionSink(const std::filesystem::path& path);
    void consume(const Frame& frame, const AnnotatedFrame& annotated) override;

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

/// Writes <dir>/<frame_id>.png rendered frames.
class PngAnnotationSink final : public FrameSink {
public:
    PngAnnotationSink(std::filesystem::path dir, RenderStyle style);
    void consume(const Frame& frame, const AnnotatedFrame& annotated) override;

private:
    std::filesystem::path dir_;
    RenderStyle style_;
};

class FanoutSink final : public FrameSink {
public:
    void add(FrameSink& sink) { sinks_.push_back(&sink); }
    void consume(const Frame& frame, const AnnotatedFrame& annotated) override;

private:
    std::vector<FrameSink*> sinks_;
};

}  // namespace rider_scope
