/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/classifier.hpp"
#include "rider_scope/dataset.hpp"
#include "rider_scope/geometry.hpp"
#include "rider_scope/image.hpp"
#include "rider_scope/metrics.hpp"

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace rider_scope::testing {

/// A fresh directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

Image solid_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b);
/// Fills [x0, x1) x [y0, y1) with one color.
void fill_rect(Image& image, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Returns a fixed score for every crop.
class ConstantClassifier final : public RiderClassifier {
public:
    explicit ConstantClassifier(double score) : score_(score) {}
    std::vector<double> score_batch(const CropBatch& batch) const override {
        return std::vector<double>(batch.size(), score_);
    }

private:
    double score_;
};

/// Scores looked up by (frame id, detection box); unknown crops throw.
class ScriptedClassifier final : public RiderClassifier {
public:
    void set(const std::string& frame_id, const BoundingBox& box, double score);
    std::vector<double> score_batch(const CropBatch& batch) const override;

private:
    static std::string key(const std::string& frame_id, const BoundingBox& box);
    std::map<std::string, double> scores_;
};

// Brute-force oracles, written independently of the library code paths.

/// Fraction of positive-negative pairs ranked correctly, ties counted half.
double pair_count_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// IoU of integer boxes by counting unit cells.
double pixel_count_iou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh);

/// Largest number of one-to-one pairs with IoU >= threshold, by trying
/// every assignment.
std::size_t exhaustive_max_matches(const std::vector<PredictedObject>& predictions,
                                   const std::vector<TruthObject>& truths, double threshold);

struct Scene {
    std::vector<TruthObject> truths;
    std::vector<PredictedObject> predictions;
};

/// Person-shaped truths in a 640x480 frame; each prediction is either a
/// jittered copy of a truth or a false positive elsewhere.
Scene random_scene(std::mt19937_64& rng, std::size_t max_objects);

// A 12-frame fixture interaction: frames, replay detections, ground truth,
// and the classifier score scripted for every detection.
struct FixtureDetection {
    BoundingBox box;
    double confidence = 0.0;
    double score = 0.0;
};

struct FixtureFrame {
    std::string frame_id;
    std::vector<TruthObject> truth;
    std::vector<FixtureDetection> detections;
};

std::vector<FixtureFrame> fixture_interaction();
Frame fixture_image(const FixtureFrame& frame);
ScriptedClassifier fixture_classifier();

/// Writes frames/<id>.png, detections.jsonl, ground_truth.jsonl under dir.
void write_fixture(const std::filesystem::path& dir);

// Synthetic toy set: riders carry a bright lower band, other persons a dark
// one, each with per-crop noise.
struct ToySample {
    CropTensor crop;
    int label = 0;
    std::string interaction_id;
};

std::vector<ToySample> toy_dataset(std::uint64_t seed, std::size_t interactions = 20, std::size_t per_interaction = 10);
Image toy_image(std::mt19937_64& rng, bool rider);

/// Count of 8-connected components whose pixels equal `rgb` exactly.
std::size_t count_color_components(const Image& image, const std::uint8_t (&rgb)[3]);

}  // namespace rider_scope::testing
