/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "support.hpp"

#include "rider_scope/backbone.hpp"
#include "rider_scope/classifier.hpp"
#include "rider_scope/errors.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace rider_scope {
namespace {

using testing::TempDir;

CropTensor random_crop(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return preprocess_crop(testing::toy_image(rng, seed % 2 == 0));
}

double weighted_sum(const Backbone& backbone, const CropTensor& crop, const FeatureMap& weights) {
    const FeatureMap f = backbone.extract(crop);
    double s = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) s += f.values[i] * weights.values[i];
    return s;
}

TEST(ProjectionBackbone, ShapeAndDeterminism) {
    const ProjectionBackbone a(5), b(5), c(6);
    EXPECT_EQ(a.layer_count(), 154u);
    const auto crop = random_crop(1);
    const auto fa = a.extract(crop);
    EXPECT_EQ(fa.values.size(), 5u * 5u * 1280u);
    EXPECT_EQ(fa.values, b.extract(crop).values);
    EXPECT_NE(fa.values, c.extract(crop).values);
    EXPECT_EQ(layer_checksum(a, 0, 154), layer_checksum(b, 0, 154));
    EXPECT_NE(layer_checksum(a, 0, 154), layer_checksum(c, 0, 154));
}

TEST(ProjectionBackbone, RejectsZeroLayers) {
    EXPECT_THROW(ProjectionBackbone(1, 0), InvalidArgument);
}

TEST(ProjectionBackbone, GradientsMatchFiniteDifferences) {
    ProjectionBackbone backbone(3, 4);
    const auto crop = random_crop(2);
    FeatureMap weights;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& w : weights.values) w = n(rng);

    auto grads = backbone.make_gradient_buffers(0);
    backbone.accumulate_gradients(crop, weights, 0, grads);
    ASSERT_EQ(grads.size(), 4u);

    std::uniform_int_distribution<std::size_t> pick(0, 1u << 30);
    const double h = 1e-6;
    for (std::size_t layer = 0; layer < 4; ++layer) {
        auto params = backbone.mutable_layer_parameters(layer);
        ASSERT_EQ(grads[layer].size(), params.size());
        for (int k = 0; k < 8; ++k) {
            const std::size_t i = pick(rng) % params.size();
            const double saved = params[i];
            params[i] = saved + h;
            const double up = weighted_sum(backbone, crop, weights);
            params[i] = saved - h;
            const double down = weighted_sum(backbone, crop, weights);
            params[i] = saved;
            const double numeric = (up - down) / (2 * h);
            EXPECT_NEAR(grads[layer][i], numeric, 1e-5 * std::max(1.0, std::abs(numeric)))
                << "layer " << layer << " index " << i;
        }
    }
}

TEST(ProjectionBackbone, GradientBuffersSkipFrozenLayers) {
    ProjectionBackbone backbone(3, 6);
    const auto grads = backbone.make_gradient_buffers(4);
    ASSERT_EQ(grads.size(), 6u);
    for (std::size_t l = 0; l < 4; ++l) EXPECT_TRUE(grads[l].empty());
    EXPECT_EQ(grads[4].size(), 2560u);
    EXPECT_EQ(backbone.parameter_count(4), 2u * 2560u);
}

TEST(Head, InitializationAndValidation) {
    const auto head = ClassifierHead::initialized(9);
    EXPECT_EQ(head.dense_weights.size(), 1280u);
    EXPECT_EQ(ClassifierHead::kParameterCount, 1281u);
    EXPECT_EQ(head.dense_bias, 0.0);
    for (double w : head.dense_weights) EXPECT_LE(std::abs(w), 1.0 / std::sqrt(1280.0));
    ClassifierHead bad = head;
    bad.dense_weights.pop_back();
    EXPECT_THROW(bad.validate(), InvalidArgument);
    EXPECT_THROW(ClassifierHead::initialized(1, 1.0), InvalidArgument);
}

TEST(Head, PoolingIsChannelMean) {
    FeatureMap map;
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) map.at(r, c, 7) = r * 5 + c;
    const auto pooled = pool_features(map);
    EXPECT_DOUBLE_EQ(pooled.values[7], 12.0);
    EXPECT_DOUBLE_EQ(pooled.values[8], 0.0);
}

TEST(Head, ThresholdRule) {
    ClassifierHead head;
    FeatureVector f;
    head.dense_bias = 0.0;
    EXPECT_EQ(predict(head, f).label, Label::rider);
    EXPECT_DOUBLE_EQ(predict(head, f).score, 0.5);
    head.dense_bias = -1e-9;
    EXPECT_EQ(predict(head, f).label, Label::non_rider);
}

TEST(Head, SigmoidIsStable) {
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_EQ(sigmoid(-1000.0), 0.0);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
    EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
}

TEST(Loss, ClampedBinaryCrossEntropy) {
    EXPECT_NEAR(bce_loss(1, 0.5), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce_loss(1, 0.0), -std::log(1e-7), 1e-9);
    EXPECT_TRUE(std::isfinite(bce_loss(0, 1.0)));
    const std::vector<int> y = {1, 0};
    const std::vector<double> p = {0.8, 0.4};
    EXPECT_NEAR(bce_loss(y, p), (-std::log(0.8) - std::log(0.6)) / 2, 1e-15);
    EXPECT_THROW(bce_loss(std::vector<int>{1}, std::vector<double>{0.1, 0.2}), InvalidArgument);
}

TEST(Transfer, ScoresOnePerCropInRange) {
    auto backbone = std::make_shared<ProjectionBackbone>(4, 3);
    const TransferClassifier clf(backbone, ClassifierHead::initialized(4));
    CropBatch batch = {random_crop(1), random_crop(2), random_crop(3)};
    const auto scores = clf.score_batch(batch);
    ASSERT_EQ(scores.size(), 3u);
    for (double s : scores) {
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
    EXPECT_TRUE(clf.score_batch({}).empty());
    EXPECT_THROW(TransferClassifier(nullptr, ClassifierHead{}), InvalidArgument);
}

TEST(Checkpoint, RoundTripPreservesScores) {
    TempDir dir;
    auto backbone = std::make_shared<ProjectionBackbone>(8, 5);
    backbone->mutable_layer_parameters(4)[3] = 1.75;
    const auto head = ClassifierHead::initialized(8);
    save_checkpoint(dir / "model.json", head, *backbone);
    EXPECT_TRUE(std::filesystem::exists(dir / "model.backbone.bin"));

    const auto loaded = load_checkpoint(dir / "model.json");
    EXPECT_EQ(loaded.head.dense_weights, head.dense_weights);
    EXPECT_EQ(loaded.head.dense_bias, head.dense_bias);
    EXPECT_EQ(layer_checksum(*loaded.backbone, 0, 5), layer_checksum(*backbone, 0, 5));

    const TransferClassifier a(backbone, head);
    const TransferClassifier b(loaded.backbone, loaded.head);
    const CropBatch batch = {random_crop(5)};
    EXPECT_EQ(a.score_batch(batch), b.score_batch(batch));
}

TEST(Checkpoint, RejectsBadFiles) {
    TempDir dir;
    EXPECT_THROW(load_checkpoint(dir / "none.json"), LoadError);
    testing::write_text(dir / "bad.json", "{");
    EXPECT_THROW(load_checkpoint(dir / "bad.json"), LoadError);
    testing::write_text(dir / "other.json", R"({"format":"x","version":1})");
    EXPECT_THROW(load_checkpoint(dir / "other.json"), LoadError);
    testing::write_text(dir / "ver.json", R"({"format":"rider-scope.checkpoint","version":99})");
    EXPECT_THROW(load_checkpoint(dir / "ver.json"), LoadError);
}

TEST(DnnBackbone, MissingModelIsLoadError) {
    TempDir dir;
    EXPECT_THROW(DnnBackbone(dir / "backbone.onnx"), LoadError);
    testing::write_text(dir / "junk.onnx", "junk");
    EXPECT_THROW(DnnBackbone(dir / "junk.onnx"), LoadError);
}

}  // namespace
}  // namespace rider_scope
