/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/image.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace rider_scope {

inline constexpr int kFeatureGrid = 5;
inline constexpr int kFeatureChannels = 1280;
inline constexpr std::size_t kFeatureMapSize =
    static_cast<std::size_t>(kFeatureGrid) * kFeatureGrid * kFeatureChannels;

/// Backbone output for one crop, shape (5, 5, 1280), row-major.
struct FeatureMap {
    std::vector<double> values = std::vector<double>(kFeatureMapSize, 0.0);

    double& at(int row, int col, int channel) noexcept { return values[offset(row, col, channel)]; }
    double at(int row, int col, int channel) const noexcept { return values[offset(row, col, channel)]; }

    static std::size_t offset(int row, int col, int channel) noexcept {
        return (static_cast<std::size_t>(row) * kFeatureGrid + static_cast<std::size_t>(col)) * kFeatureChannels +
               static_cast<std::size_t>(channel);
    }
};

/// Per-layer gradient buffers, one entry per backbone layer (empty for
/// layers that were not requested).
using LayerGradients = std::vector<std::vector<double>>;

/// Frozen-or-partially-trainable feature extractor mapping a 160x160x3 crop
/// to a (5, 5, 1280) feature map.
///
/// Parameters are exposed per layer in the backbone's own trainable-layer
/// enumeration; freezing is expressed as a layer index boundary.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual FeatureMap extract(const CropTensor& crop) const = 0;

    virtual std::size_t layer_count() const noexcept = 0;
    virtual std::span<const double> layer_parameters(std::size_t layer) const = 0;
    virtual std::span<double> mutable_layer_parameters(std::size_t layer) = 0;

    /// Whether accumulate_gradients is implemented.
    virtual bool differentiable() const noexcept { return false; }

    /// Adds d(loss)/d(parameters) of every layer >= first_layer into `grads`,
    /// given d(loss)/d(feature map) for `crop`. `grads` must already be sized
    /// by make_gradient_buffers().
    virtual void accumulate_gradients(const CropTensor& crop, const FeatureMap& grad_output,
                                      std::size_t first_layer, LayerGradients& grads) const;

    /// Batch-norm statistics mode while layers are being tuned. Backbones
    /// without normalization layers ignore it.
    virtual void set_normalization_training(bool /*enabled*/) {}

    /// Description written into checkpoints so the backbone can be rebuilt.
    virtual nlohmann::json describe() const = 0;

    LayerGradients make_gradient_buffers(std::size_t first_layer) const;
    std::size_t parameter_count(std::size_t first_layer = 0) const;
};

/// Deterministic stand-in for a pretrained backbone: fixed pooling of the
/// crop into 5x5 cells, a seeded random projection with tanh to 1280
/// channels (layer 0), then a stack of channel-wise affine layers
/// (layers 1..n-1). Fully differentiable so the fine-tuning schedule can be
/// exercised without network weights.
class ProjectionBackbone final : public Backbone {
public:
    static constexpr std::size_t kDefaultLayers = 154;
    /// 2x2 sub-blocks x 3 channel means per cell.
    static constexpr int kDescriptorSize = 12;

    explicit ProjectionBackbone(std::uint64_t seed, std::size_t layers = kDefaultLayers);

    FeatureMap extract(const CropTensor& crop) const override;

    std::size_t layer_count() const noexcept override { return layers_.size(); }
    std::span<const double> layer_parameters(std::size_t layer) const override;
    std::span<double> mutable_layer_parameters(std::size_t layer) override;

    bool differentiable() const noexcept override { return true; }
    void accumulate_gradients(const CropTensor& crop, const FeatureMap& grad_output, std::size_t first_layer,
                              LayerGradients& grads) const override;

    nlohmann::json describe() const override;

    std::uint64_t seed() const noexcept { return seed_; }

    /// Cell descriptors, shape (25, kDescriptorSize).
    static std::vector<double> describe_cells(const CropTensor& crop);

private:
    // Composition of layers [1, n) as per-channel scale/shift.
    void compose_affine(std::vector<double>& scale, std::vector<double>& shift) const;

    std::uint64_t seed_;
    std::vector<std::vector<double>> layers_;
};

/// Opaque pretrained network run through the OpenCV DNN module (ONNX,
/// TensorFlow or Caffe model file). Inference only: it exposes no trainable
/// layers.
class DnnBackbone final : public Backbone {
public:
    explicit DnnBackbone(const std::filesystem::path& model_path);
    ~DnnBackbone() override;

    FeatureMap extract(const CropTensor& crop) const override;
    std::size_t layer_count() const noexcept override { return 0; }
    std::span<const double> layer_parameters(std::size_t layer) const override;
    std::span<double> mutable_layer_parameters(std::size_t layer) override;
    nlohmann::json describe() const override;

private:
    struct Impl;
    std::filesystem::path path_;
    std::unique_ptr<Impl> impl_;
};

/// SHA-256 over the raw parameter bytes of layers [begin, end).
std::string layer_checksum(const Backbone& backbone, std::size_t begin, std::size_t end);

/// Rebuilds a backbone from describe() output. Relative parameter paths are
/// resolved against `base_dir`.
std::unique_ptr<Backbone> load_backbone(const nlohmann::json& description, const std::filesystem::path& base_dir);

/// Raw little-endian parameter dump with a small header.
void save_backbone_parameters(const Backbone& backbone, const std::filesystem::path& path);
void load_backbone_parameters(Backbone& backbone, const std::filesystem::path& path);

}  // namespace rider_scope
