/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/backbone.hpp"
#include "rider_scope/classifier.hpp"
#include "rider_scope/dataset.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace rider_scope {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t frozen_epochs = 10;
    std::size_t finetune_epochs = 15;
    double lr_frozen = 1e-4;
    double lr_finetune = 1e-5;
    /// Backbone layers with index >= this value are tuned in the second
    /// phase. 100 of 154 leaves the top 54 trainable.
    std::size_t unfreeze_from_layer = 100;
    double dropout_rate = 0.3;
    std::uint64_t seed = 0;
    /// Keep normalization statistics in inference mode while fine-tuning.
    bool freeze_normalization_statistics = true;
    double decision_threshold = kDefaultDecisionThreshold;

    void validate(std::size_t backbone_layers) const;
};

void to_json(nlohmann::json& j, const TrainConfig& config);

/// Labeled crops, loaded on demand.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual int label(std::size_t index) const = 0;  // 1 = rider
    virtual CropTensor load(std::size_t index) const = 0;
};

class InMemorySamples final : public SampleSource {
public:
    void add(CropTensor crop, int label);

    std::size_t size() const override { return crops_.size(); }
    int label(std::size_t index) const override { return labels_.at(index); }
    CropTensor load(std::size_t index) const override { return crops_.at(index); }

private:
    std::vector<CropTensor> crops_;
    std::vector<int> labels_;
};

/// Reads crop files of one manifest split and preprocesses them on load.
class ManifestSamples final : public SampleSource {
public:
    ManifestSamples(const DatasetManifest& manifest, Split split);

    std::size_t size() const override { return paths_.size(); }
    int label(std::size_t index) const override { return labels_.at(index); }
    CropTensor load(std::size_t index) const override;

private:
    std::vector<std::filesystem::path> paths_;
    std::vector<int> labels_;
};

/// Train/test record lists split by interaction id.
struct DatasetSplit {
    std::vector<SegmentRecord> train;
    std::vector<SegmentRecord> test;
};

DatasetSplit split_dataset(const std::vector<SegmentRecord>& records, double train_fraction, std::uint64_t seed);

enum class Phase { frozen, finetune };
std::string_view to_string(Phase phase) noexcept;

struct EpochRecord {
    Phase phase = Phase::frozen;
    std::size_t epoch = 0;  // 1-based within the phase
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    std::size_t trainable_parameters = 0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t frozen_epochs = 0;
    std::size_t finetune_epochs = 0;
    std::vector<std::string> checkpoints;

    void append(const TrainReport& fragment);
};

void to_json(nlohmann::json& j, const EpochRecord& record);
void to_json(nlohmann::json& j, const TrainReport& report);

/// Backbone plus head; the trainer mutates both under a single writer.
struct TrainableModel {
    std::shared_ptr<Backbone> backbone;
    ClassifierHead head;
};

/// Adam with beta1 0.9, beta2 0.999, eps 1e-7 over a set of parameter blocks.
class Adam {
public:
    Adam(double learning_rate, std::vector<std::size_t> block_sizes);

    /// One update of every block from its gradient.
    void step(std::vector<std::span<double>> params, const std::vector<std::vector<double>>& grads);

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-7;

private:
    double learning_rate_;
    std::size_t steps_ = 0;
    std::vector<std::vector<double>> first_moment_;
    std::vector<std::vector<double>> second_moment_;
};

/// Called after every epoch; useful for progress logging.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Only the 1281 head parameters change. Rejects an empty training set;
/// aborts with the epoch and batch index on a non-finite loss.
TrainReport train_frozen(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                         const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Head plus backbone layers >= unfreeze_from_layer; lower layers stay bitwise unchanged.
TrainReport fine_tune(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Number of parameters updated when layers >= first_layer are unfrozen.
std::size_t trainable_parameter_count(const TrainableModel& model, std::optional<std::size_t> first_layer);

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> scores;
};

Evaluation evaluate_model(const TrainableModel& model, const SampleSource& samples, double threshold);

/// Both phases; checkpoints written into `out_dir` after each when it is set.
TrainReport train_two_phase(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                            const TrainConfig& config, const std::optional<std::filesystem::path>& out_dir,
                            const EpochCallback& on_epoch = {});

}  // namespace rider_scope
