/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/classifier.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

namespace rider_scope {

ClassifierHead ClassifierHead::initialized(std::uint64_t seed, double dropout_rate) {
    ClassifierHead head;
    head.dropout_rate = dropout_rate;
    std::mt19937_64 rng(seed);
    const double limit = 1.0 / std::sqrt(static_cast<double>(kFeatureChannels));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : head.dense_weights) {
        w = dist(rng);
    }
    head.validate();
    return head;
}

void ClassifierHead::validate() const {
    if (dense_weights.size() != static_cast<std::size_t>(kFeatureChannels)) {
        throw InvalidArgument(fmt::format("head has {} weights, expected {}", dense_weights.size(), kFeatureChannels));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw InvalidArgument(fmt::format("dropout rate {} outside [0, 1)", dropout_rate));
    }
}

double sigmoid(double logit) noexcept {
    if (logit >= 0.0) {
        return 1.0 / (1.0 + std::exp(-logit));
    }
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

std::vector<FeatureMap> extract_features(const Backbone& backbone, const CropBatch& batch) {
    std::vector<FeatureMap> maps;
    maps.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        try {
            maps.push_back(backbone.extract(batch[i]));
        } catch (const std::exception& e) {
            throw Error(fmt::format("backbone failed on batch index {}: {}", i, e.what()));
        }
    }
    return maps;
}

FeatureVector pool_features(const FeatureMap& map) {
    FeatureVector pooled;
    constexpr int positions = kFeatureGrid * kFeatureGrid;
    for (int s = 0; s < positions; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * kFeatureChannels;
        for (std::size_t c = 0; c < static_cast<std::size_t>(kFeatureChannels); ++c) {
            pooled.values[c] += map.values[base + c];
        }
    }
    for (auto& v : pooled.values) {
        v /= positions;
    }
    return pooled;
}

double head_logit(const ClassifierHead& head, std::span<const double> features) {
    if (features.size() != head.dense_weights.size()) {
        throw InvalidArgument(
            fmt::format("feature vector has {} entries, head expects {}", features.size(), head.dense_weights.size()));
    }
    double z = head.dense_bias;
    for (std::size_t i = 0; i < features.size(); ++i) {
        z += head.dense_weights[i] * features[i];
    }
    return z;
}

RiderPrediction predict(const ClassifierHead& head, const FeatureVector& features, double threshold) {
    RiderPrediction out;
    out.score = sigmoid(head_logit(head, features.values));
    out.label = out.score >= threshold ? Label::rider : Label::non_rider;
    return out;
}

double bce_loss(int y, double p) noexcept {
    const double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    return -(y * std::log(q) + (1 - y) * std::log(1.0 - q));
}

double bce_loss(std::span<const int> y, std::span<const double> p) {
    if (y.size() != p.size()) {
        throw InvalidArgument(fmt::format("{} labels but {} predictions", y.size(), p.size()));
    }
    if (y.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        sum += bce_loss(y[i], p[i]);
    }
    return sum / static_cast<double>(y.size());
}

HeadGradient head_gradient(const ClassifierHead& head, std::span<const double> features, int y) {
    HeadGradient g;
    g.logit = head_logit(head, features);
    g.probability = sigmoid(g.logit);
    g.loss = bce_loss(y, g.probability);
    g.d_logit = g.probability - y;
    g.d_weights.resize(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        g.d_weights[i] = g.d_logit * features[i];
    }
    g.d_bias = g.d_logit;
    return g;
}

TransferClassifier::TransferClassifier(std::shared_ptr<const Backbone> backbone, ClassifierHead head)
    : backbone_(std::move(backbone)), head_(std::move(head)) {
    if (!backbone_) {
        throw InvalidArgument("classifier needs a backbone");
    }
    head_.validate();
}

std::vector<double> TransferClassifier::score_batch(const CropBatch& batch) const {
    const auto maps = extract_features(*backbone_, batch);
    std::vector<double> scores;
    scores.reserve(maps.size());
    for (const auto& map : maps) {
        scores.push_back(predict(head_, pool_features(map)).score);
    }
    return scores;
}

void save_checkpoint(const std::filesystem::path& path, const ClassifierHead& head, const Backbone& backbone) {
    nlohmann::json description = backbone.describe();
    if (backbone.layer_count() > 0) {
        auto params = path;
        params.replace_extension(".backbone.bin");
        save_backbone_parameters(backbone, params);
        description["parameters"] = params.filename().string();
    }
    const nlohmann::json doc = {
        {"format", "rider-scope.checkpoint"},
        {"version", kCheckpointVersion},
        {"head", {{"dense_weights", head.dense_weights}, {"dense_bias", head.dense_bias}, {"dropout_rate", head.dropout_rate}}},
        {"backbone", description},
    };
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    write_file_atomic(path, doc.dump(1));
}

namespace {

nlohmann::json read_checkpoint_doc(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError(path, "checkpoint not found");
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path, std::string("malformed checkpoint: ") + e.what());
    }
    if (doc.value("format", "") != "rider-scope.checkpoint") {
        throw LoadError(path, "not a rider-scope checkpoint");
    }
    if (doc.value("version", 0) != kCheckpointVersion) {
        throw LoadError(path, fmt::format("unsupported checkpoint version {}", doc.value("version", 0)));
    }
    return doc;
}

}  // namespace

ClassifierHead load_head(const std::filesystem::path& path) {
    const auto doc = read_checkpoint_doc(path);
    ClassifierHead head;
    try {
        const auto& h = doc.at("head");
        head.dense_weights = h.at("dense_weights").get<std::vector<double>>();
        head.dense_bias = h.at("dense_bias").get<double>();
        head.dropout_rate = h.at("dropout_rate").get<double>();
        head.validate();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path, std::string("bad head section: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw LoadError(path, e.what());
    }
    return head;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
    const auto doc = read_checkpoint_doc(path);
    LoadedModel model;
    model.head = load_head(path);
    try {
        model.backbone = load_backbone(doc.at("backbone"), path.parent_path());
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path, std::string("bad backbone section: ") + e.what());
    }
    return model;
}

}  // namespace rider_scope
