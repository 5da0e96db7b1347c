/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/trainer.hpp"

#include "rider_scope/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace rider_scope {

void TrainConfig::validate(std::size_t backbone_layers) const {
    if (batch_size == 0) {
        throw InvalidArgument("batch size must be positive");
    }
    if (!(lr_frozen > 0.0) || !(lr_finetune > 0.0)) {
        throw InvalidArgument("learning rates must be positive");
    }
    if (unfreeze_from_layer > backbone_layers) {
        throw InvalidArgument(fmt::format("unfreeze_from_layer {} exceeds the backbone's {} trainable layers",
                                          unfreeze_from_layer, backbone_layers));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw InvalidArgument(fmt::format("dropout rate {} outside [0, 1)", dropout_rate));
    }
}

void to_json(nlohmann::json& j, const TrainConfig& config) {
    j = {{"batch_size", config.batch_size},
         {"frozen_epochs", config.frozen_epochs},
         {"finetune_epochs", config.finetune_epochs},
         {"lr_frozen", config.lr_frozen},
         {"lr_finetune", config.lr_finetune},
         {"unfreeze_from_layer", config.unfreeze_from_layer},
         {"dropout_rate", config.dropout_rate},
         {"seed", config.seed},
         {"freeze_normalization_statistics", config.freeze_normalization_statistics},
         {"decision_threshold", config.decision_threshold}};
}

void InMemorySamples::add(CropTensor crop, int label) {
    crops_.push_back(std::move(crop));
    labels_.push_back(label);
}

ManifestSamples::ManifestSamples(const DatasetManifest& manifest, Split split) {
    for (const auto& entry : manifest.entries) {
        if (entry.split != split || entry.record.label == Label::unlabeled) {
            continue;
        }
        paths_.push_back(manifest.store_root / entry.record.crop_path);
        labels_.push_back(entry.record.label == Label::rider ? 1 : 0);
    }
}

CropTensor ManifestSamples::load(std::size_t index) const {
    return preprocess_crop(load_image(paths_.at(index)));
}

DatasetSplit split_dataset(const std::vector<SegmentRecord>& records, double train_fraction, std::uint64_t seed) {
    if (records.empty()) {
        throw InvalidArgument("cannot split an empty dataset");
    }
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) {
        ids.push_back(r.interaction_id);
    }
    const auto split = split_interactions(std::move(ids), train_fraction, seed);
    const std::set<std::string> train_ids(split.train_interactions.begin(), split.train_interactions.end());
    DatasetSplit out;
    for (const auto& r : records) {
        (train_ids.count(r.interaction_id) ? out.train : out.test).push_back(r);
    }
    return out;
}

std::string_view to_string(Phase phase) noexcept {
    return phase == Phase::frozen ? "frozen" : "finetune";
}

void TrainReport::append(const TrainReport& fragment) {
    epochs.insert(epochs.end(), fragment.epochs.begin(), fragment.epochs.end());
    frozen_epochs += fragment.frozen_epochs;
    finetune_epochs += fragment.finetune_epochs;
    checkpoints.insert(checkpoints.end(), fragment.checkpoints.begin(), fragment.checkpoints.end());
}

void to_json(nlohmann::json& j, const EpochRecord& record) {
    j = {{"phase", to_string(record.phase)},
         {"epoch", record.epoch},
         {"train_loss", record.train_loss},
         {"train_accuracy", record.train_accuracy},
         {"test_loss", record.test_loss},
         {"test_accuracy", record.test_accuracy},
         {"trainable_parameters", record.trainable_parameters}};
}

void to_json(nlohmann::json& j, const TrainReport& report) {
    j = {{"epochs", report.epochs},
         {"frozen_epochs", report.frozen_epochs},
         {"finetune_epochs", report.finetune_epochs},
         {"checkpoints", report.checkpoints}};
}

Adam::Adam(double learning_rate, std::vector<std::size_t> block_sizes) : learning_rate_(learning_rate) {
    for (auto size : block_sizes) {
        first_moment_.emplace_back(size, 0.0);
        second_moment_.emplace_back(size, 0.0);
    }
}

void Adam::step(std::vector<std::span<double>> params, const std::vector<std::vector<double>>& grads) {
    if (params.size() != first_moment_.size() || grads.size() != params.size()) {
        throw InvalidArgument("optimizer block count mismatch");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(kBeta1, t);
    const double correction2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = first_moment_[b];
        auto& v = second_moment_[b];
        const auto& g = grads[b];
        auto p = params[b];
        if (p.size() != m.size() || g.size() != m.size()) {
            throw InvalidArgument(fmt::format("optimizer block {} size mismatch", b));
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= learning_rate_ * m_hat / (std::sqrt(v_hat) + kEpsilon);
        }
    }
}

std::size_t trainable_parameter_count(const TrainableModel& model, std::optional<std::size_t> first_layer) {
    std::size_t count = ClassifierHead::kParameterCount;
    if (first_layer && model.backbone) {
        count += model.backbone->parameter_count(*first_layer);
    }
    return count;
}

namespace {

FeatureVector features_of(const Backbone& backbone, const CropTensor& crop) {
    return pool_features(backbone.extract(crop));
}

std::vector<FeatureVector> features_of_all(const Backbone& backbone, const SampleSource& samples) {
    std::vector<FeatureVector> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.push_back(features_of(backbone, samples.load(i)));
    }
    return out;
}

Evaluation evaluate_features(const ClassifierHead& head, const std::vector<FeatureVector>& features,
                             const SampleSource& samples, double threshold) {
    Evaluation ev;
    if (features.empty()) {
        return ev;
    }
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const double p = predict(head, features[i], threshold).score;
        const int y = samples.label(i);
        loss += bce_loss(y, p);
        correct += static_cast<std::size_t>((p >= threshold ? 1 : 0) == y);
        ev.scores.push_back(p);
    }
    ev.loss = loss / static_cast<double>(features.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(features.size());
    return ev;
}

struct PhasePlan {
    Phase phase = Phase::frozen;
    std::size_t epochs = 0;
    double learning_rate = 0.0;
    std::optional<std::size_t> first_backbone_layer;  // nullopt: head only
};

TrainReport run_phase(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                      const TrainConfig& config, const PhasePlan& plan, const EpochCallback& on_epoch) {
    if (!model.backbone) {
        throw InvalidArgument("model has no backbone");
    }
    config.validate(model.backbone->layer_count());
    if (train.size() == 0) {
        throw InvalidArgument("training split is empty");
    }
    TrainReport report;
    if (plan.epochs == 0) {
        return report;
    }

    Backbone& backbone = *model.backbone;
    ClassifierHead& head = model.head;
    head.dropout_rate = config.dropout_rate;

    std::optional<std::size_t> first_layer = plan.first_backbone_layer;
    if (first_layer && *first_layer >= backbone.layer_count()) {
        first_layer.reset();
    }
    if (first_layer && !backbone.differentiable()) {
        throw InvalidArgument("backbone layers cannot be fine-tuned: the backbone has no gradient support");
    }
    const bool tune_backbone = first_layer.has_value();
    backbone.set_normalization_training(tune_backbone && !config.freeze_normalization_statistics);

    // With the backbone fixed, pooled features never change: compute once.
    std::vector<FeatureVector> train_cache;
    std::vector<FeatureVector> test_cache;
    if (!tune_backbone) {
        train_cache = features_of_all(backbone, train);
        if (test) {
            test_cache = features_of_all(backbone, *test);
        }
    }

    std::vector<std::size_t> block_sizes = {head.dense_weights.size(), 1};
    if (tune_backbone) {
        for (std::size_t l = *first_layer; l < backbone.layer_count(); ++l) {
            block_sizes.push_back(backbone.layer_parameters(l).size());
        }
    }
    Adam optimizer(plan.learning_rate, block_sizes);

    const std::uint64_t phase_salt = plan.phase == Phase::frozen ? 0x5eedf00dULL : 0xf1e7a11eULL;
    std::mt19937_64 rng(config.seed ^ phase_salt);
    const double keep = 1.0 - config.dropout_rate;
    std::bernoulli_distribution keep_draw(keep);
    const std::size_t trainable = trainable_parameter_count(model, first_layer);
    constexpr double positions = kFeatureGrid * kFeatureGrid;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;

        for (std::size_t start = 0, batch_index = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(start + config.batch_size, order.size());
            const double inv_batch = 1.0 / static_cast<double>(end - start);

            std::vector<std::vector<double>> grads;
            grads.emplace_back(head.dense_weights.size(), 0.0);
            grads.emplace_back(1, 0.0);
            LayerGradients backbone_grads;
            if (tune_backbone) {
                backbone_grads = backbone.make_gradient_buffers(*first_layer);
            }

            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                const int y = train.label(idx);
                CropTensor crop;
                FeatureVector pooled;
                if (tune_backbone) {
                    crop = train.load(idx);
                    pooled = features_of(backbone, crop);
                } else {
                    pooled = train_cache[idx];
                }

                std::vector<double> mask(pooled.values.size(), 1.0);
                if (config.dropout_rate > 0.0) {
                    for (auto& m : mask) {
                        m = keep_draw(rng) ? 1.0 / keep : 0.0;
                    }
                }
                std::vector<double> dropped(pooled.values.size());
                for (std::size_t c = 0; c < dropped.size(); ++c) {
                    dropped[c] = pooled.values[c] * mask[c];
                }

                const HeadGradient g = head_gradient(head, dropped, y);
                const double p = g.probability;
                const double loss = g.loss;
                if (!std::isfinite(loss)) {
                    throw TrainingError(fmt::format("non-finite loss in {} phase, epoch {}, batch {}",
                                                    to_string(plan.phase), epoch, batch_index));
                }
                batch_loss += loss;
                correct += static_cast<std::size_t>((p >= config.decision_threshold ? 1 : 0) == y);

                // Batch loss is the mean, so every example contributes 1/batch of its gradient.
                const double dz = g.d_logit * inv_batch;
                for (std::size_t c = 0; c < dropped.size(); ++c) {
                    grads[0][c] += g.d_weights[c] * inv_batch;
                }
                grads[1][0] += g.d_bias * inv_batch;

                if (tune_backbone) {
                    FeatureMap grad_map;
                    for (int s = 0; s < kFeatureGrid * kFeatureGrid; ++s) {
                        const std::size_t base = static_cast<std::size_t>(s) * kFeatureChannels;
                        for (std::size_t c = 0; c < static_cast<std::size_t>(kFeatureChannels); ++c) {
                            grad_map.values[base + c] = dz * head.dense_weights[c] * mask[c] / positions;
                        }
                    }
                    backbone.accumulate_gradients(crop, grad_map, *first_layer, backbone_grads);
                }
            }
            loss_sum += batch_loss;

            std::vector<std::span<double>> params = {std::span<double>(head.dense_weights),
                                                     std::span<double>(&head.dense_bias, 1)};
            if (tune_backbone) {
                for (std::size_t l = *first_layer; l < backbone.layer_count(); ++l) {
                    params.push_back(backbone.mutable_layer_parameters(l));
                    grads.push_back(std::move(backbone_grads[l]));
                }
            }
            optimizer.step(std::move(params), grads);
        }

        EpochRecord record;
        record.phase = plan.phase;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(order.size());
        record.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        record.trainable_parameters = trainable;
        if (test && test->size() > 0) {
            const Evaluation ev = tune_backbone
                                      ? evaluate_features(head, features_of_all(backbone, *test), *test,
                                                          config.decision_threshold)
                                      : evaluate_features(head, test_cache, *test, config.decision_threshold);
            record.test_loss = ev.loss;
            record.test_accuracy = ev.accuracy;
        }
        report.epochs.push_back(record);
        if (on_epoch) {
            on_epoch(record);
        }
    }
    backbone.set_normalization_training(false);
    (plan.phase == Phase::frozen ? report.frozen_epochs : report.finetune_epochs) = plan.epochs;
    return report;
}

}  // namespace

TrainReport train_frozen(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                         const TrainConfig& config, const EpochCallback& on_epoch) {
    return run_phase(model, train, test, config, {Phase::frozen, config.frozen_epochs, config.lr_frozen, std::nullopt},
                     on_epoch);
}

TrainReport fine_tune(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
    return run_phase(model, train, test, config,
                     {Phase::finetune, config.finetune_epochs, config.lr_finetune, config.unfreeze_from_layer},
                     on_epoch);
}

Evaluation evaluate_model(const TrainableModel& model, const SampleSource& samples, double threshold) {
    return evaluate_features(model.head, features_of_all(*model.backbone, samples), samples, threshold);
}

TrainReport train_two_phase(TrainableModel& model, const SampleSource& train, const SampleSource* test,
                            const TrainConfig& config, const std::optional<std::filesystem::path>& out_dir,
                            const EpochCallback& on_epoch) {
    TrainReport report = train_frozen(model, train, test, config, on_epoch);
    if (out_dir) {
        const auto path = *out_dir / "frozen.json";
        save_checkpoint(path, model.head, *model.backbone);
        report.checkpoints.push_back(path.string());
    }
    report.append(fine_tune(model, train, test, config, on_epoch));
    if (out_dir) {
        const auto path = *out_dir / "final.json";
        save_checkpoint(path, model.head, *model.backbone);
        report.checkpoints.push_back(path.string());
    }
    return report;
}

}  // namespace rider_scope
