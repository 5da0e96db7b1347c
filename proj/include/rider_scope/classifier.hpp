/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/backbone.hpp"
#include "rider_scope/geometry.hpp"
#include "rider_scope/image.hpp"
#include "rider_scope/labels.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace rider_scope {

struct FeatureVector {
    std::vector<double> values = std::vector<double>(kFeatureChannels, 0.0);
};

/// Dropout -> dense(1280 -> 1) -> sigmoid. 1280 weights + 1 bias = 1281 trainable parameters.
struct ClassifierHead {
    static constexpr std::size_t kParameterCount = kFeatureChannels + 1;

    std::vector<double> dense_weights = std::vector<double>(kFeatureChannels, 0.0);
    double dense_bias = 0.0;
    double dropout_rate = 0.3;

    /// Weights uniform in +-1/sqrt(1280), bias 0.
    static ClassifierHead initialized(std::uint64_t seed, double dropout_rate = 0.3);

    /// Checks sizes and the dropout range [0, 1).
    void validate() const;
};

struct RiderPrediction {
    double score = 0.0;
    Label label = Label::non_rider;
    ExtendedRegion source_region;
};

inline constexpr double kDefaultDecisionThreshold = 0.5;
inline constexpr double kProbabilityClamp = 1e-7;

double sigmoid(double logit) noexcept;

/// Runs the backbone over every crop, in order. Failures are rethrown with the batch index.
std::vector<FeatureMap> extract_features(const Backbone& backbone, const CropBatch& batch);

/// Channel-wise mean over the 25 spatial positions.
FeatureVector pool_features(const FeatureMap& map);

double head_logit(const ClassifierHead& head, std::span<const double> features);

/// Inference: dropout is off. Label is rider iff score >= threshold.
RiderPrediction predict(const ClassifierHead& head, const FeatureVector& features,
                        double threshold = kDefaultDecisionThreshold);

/// -(y log p + (1 - y) log(1 - p)) with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(int y, double p) noexcept;

/// Mean of bce_loss over the batch. Sizes must match.
double bce_loss(std::span<const int> y, std::span<const double> p);

/// Loss of one example and its gradient with respect to the head parameters.
/// d(loss)/d(logit) = p - y (the clamp is ignored, as in training).
struct HeadGradient {
    double logit = 0.0;
    double probability = 0.0;
    double loss = 0.0;
    double d_logit = 0.0;
    std::vector<double> d_weights;
    double d_bias = 0.0;
};

HeadGradient head_gradient(const ClassifierHead& head, std::span<const double> features, int y);

/// Anything that turns a crop batch into rider scores in [0, 1], one per crop.
class RiderClassifier {
public:
    virtual ~RiderClassifier() = default;
    virtual std::vector<double> score_batch(const CropBatch& batch) const = 0;
};

/// Backbone features, global average pooling, dense head.
class TransferClassifier final : public RiderClassifier {
public:
    TransferClassifier(std::shared_ptr<const Backbone> backbone, ClassifierHead head);

    std::vector<double> score_batch(const CropBatch& batch) const override;

    const Backbone& backbone() const noexcept { return *backbone_; }
    const ClassifierHead& head() const noexcept { return head_; }

private:
    std::shared_ptr<const Backbone> backbone_;
    ClassifierHead head_;
};

// Checkpoint: JSON with a format/version field, the head, and a description
// of the backbone (whose tuned parameters live in a sibling binary file when
// the backbone has any).
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ClassifierHead& head, const Backbone& backbone);
ClassifierHead load_head(const std::filesystem::path& path);

struct LoadedModel {
    std::shared_ptr<Backbone> backbone;
    ClassifierHead head;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace rider_scope
