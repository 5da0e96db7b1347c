/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/geometry.hpp"
#include "rider_scope/labels.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace rider_scope {

/// Rider is the positive class.
struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    double accuracy() const noexcept;
    /// The same counts seen with non-rider as the positive class.
    ConfusionCounts swapped() const noexcept { return {tn, fn, tp, fp}; }

    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

/// score >= threshold counts as rider. Labels are 0/1. Rejects length
/// mismatch and empty input.
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Zero denominators yield 0.
ClassMetrics precision_recall_f1(const ConfusionCounts& counts) noexcept;

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // (0,0) first, (1,1) last
    double auc = 0.0;
};

/// One point per distinct score, thresholds descending, trapezoidal area.
/// Rejects input lacking either class.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// A pipeline output object.
struct PredictedObject {
    BoundingBox box;
    Label label = Label::non_rider;
    double score = 0.0;       // rider score
    double confidence = 1.0;  // detector confidence; orders the matching
};

struct TruthObject {
    BoundingBox box;
    Label label = Label::non_rider;
};

struct MatchPair {
    std::size_t prediction = 0;
    std::size_t truth = 0;
    double iou = 0.0;
};

struct Matching {
    std::vector<MatchPair> pairs;
    std::vector<std::size_t> unmatched_predictions;
    std::vector<std::size_t> unmatched_truths;
};

inline constexpr double kDefaultMatchIou = 0.5;

/// Greedy one-to-one: predictions in descending confidence each take the
/// unmatched truth of highest IoU, provided IoU >= threshold.
Matching match_detections(std::span<const PredictedObject> predictions, std::span<const TruthObject> truths,
                          double iou_threshold = kDefaultMatchIou);

/// Rider breakdown against ground truth.
struct PipelineReport {
    std::size_t riders_total = 0;
    std::size_t riders_true_positive = 0;
    std::size_t riders_misclassified = 0;  // detected, predicted non-rider
    std::size_t riders_undetected = 0;     // never matched by a detection
    double recall = 0.0;                   // 0 when riders_total is 0

    /// Classifier-only view over matched persons (truth label vs predicted label).
    ConfusionCounts detected_confusion;
    std::size_t persons_total = 0;
    std::size_t persons_detected = 0;
    std::size_t unmatched_predictions = 0;
};

struct FramePredictions {
    std::string frame_id;
    std::vector<PredictedObject> objects;
};

struct FrameTruth {
    std::string frame_id;
    std::vector<TruthObject> objects;
};

/// Rejects frame-id mismatches in either direction, listing the ids.
PipelineReport pipeline_report(std::span<const FramePredictions> predictions, std::span<const FrameTruth> truths,
                               double iou_threshold = kDefaultMatchIou);

/// Per-class metrics, accuracy, counts, and optional curve/pipeline sections.
struct EvaluationReport {
    ConfusionCounts counts;
    ClassMetrics rider;
    ClassMetrics non_rider;
    double accuracy = 0.0;
    std::optional<RocCurve> roc;
    std::optional<PipelineReport> pipeline;
};

EvaluationReport classification_report(const ConfusionCounts& counts);

/// Fixed-width table, metrics at two decimals.
std::string format_report(const EvaluationReport& report);

void to_json(nlohmann::json& j, const ConfusionCounts& counts);
void to_json(nlohmann::json& j, const ClassMetrics& metrics);
void to_json(nlohmann::json& j, const RocCurve& curve);
void to_json(nlohmann::json& j, const PipelineReport& report);
void to_json(nlohmann::json& j, const EvaluationReport& report);

/// {"frame_id", "objects": [{"box", "label"}]}
std::vector<FrameTruth> read_ground_truth(const std::filesystem::path& path);
/// Same schema plus "score" (and optional "confidence") per object.
std::vector<FramePredictions> read_predictions(const std::filesystem::path& path);

struct ScoredSample {
    double score = 0.0;
    int label = 0;
};

/// {"score": s, "label": "rider" | "non_rider"} per line.
std::vector<ScoredSample> read_scores(const std::filesystem::path& path);

}  // namespace rider_scope
