/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/backbone.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>

#include <fmt/format.h>
#include <opencv2/dnn.hpp>

namespace rider_scope {

namespace {
constexpr int kCells = kFeatureGrid * kFeatureGrid;
constexpr int kCellSize = kCropSize / kFeatureGrid;  // 32
constexpr int kSubSize = kCellSize / 2;              // 16
constexpr std::size_t kChannelsZ = kFeatureChannels;
}  // namespace

void Backbone::accumulate_gradients(const CropTensor&, const FeatureMap&, std::size_t, LayerGradients&) const {
    throw InvalidArgument("this backbone does not support gradient computation");
}

LayerGradients Backbone::make_gradient_buffers(std::size_t first_layer) const {
    LayerGradients grads(layer_count());
    for (std::size_t l = first_layer; l < layer_count(); ++l) {
        grads[l].assign(layer_parameters(l).size(), 0.0);
    }
    return grads;
}

std::size_t Backbone::parameter_count(std::size_t first_layer) const {
    std::size_t total = 0;
    for (std::size_t l = first_layer; l < layer_count(); ++l) {
        total += layer_parameters(l).size();
    }
    return total;
}

ProjectionBackbone::ProjectionBackbone(std::uint64_t seed, std::size_t layers) : seed_(seed) {
    if (layers == 0) {
        throw InvalidArgument("projection backbone needs at least one layer");
    }
    // Salted so that a head initialized from the same seed draws an unrelated stream.
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x70726f6au};
    std::mt19937_64 rng(seq);
    layers_.resize(layers);

    // Layer 0: projection (descriptor -> 1280) followed by a bias.
    auto& projection = layers_[0];
    projection.resize(kDescriptorSize * kChannelsZ + kChannelsZ);
    std::uniform_real_distribution<double> weight(-0.5, 0.5);
    std::uniform_real_distribution<double> bias(-0.1, 0.1);
    for (std::size_t i = 0; i < kDescriptorSize * kChannelsZ; ++i) {
        projection[i] = weight(rng);
    }
    for (std::size_t c = 0; c < kChannelsZ; ++c) {
        projection[kDescriptorSize * kChannelsZ + c] = bias(rng);
    }

    // Layers 1..n-1: per-channel scale then shift.
    std::uniform_real_distribution<double> scale(0.98, 1.02);
    std::uniform_real_distribution<double> shift(-0.01, 0.01);
    for (std::size_t l = 1; l < layers; ++l) {
        auto& p = layers_[l];
        p.resize(2 * kChannelsZ);
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            p[c] = scale(rng);
        }
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            p[kChannelsZ + c] = shift(rng);
        }
    }
}

std::span<const double> ProjectionBackbone::layer_parameters(std::size_t layer) const {
    return layers_.at(layer);
}

std::span<double> ProjectionBackbone::mutable_layer_parameters(std::size_t layer) {
    return layers_.at(layer);
}

std::vector<double> ProjectionBackbone::describe_cells(const CropTensor& crop) {
    if (crop.values.size() != static_cast<std::size_t>(kCropSize) * kCropSize * kChannels) {
        throw InvalidArgument(fmt::format("crop tensor has {} values, expected 160x160x3", crop.values.size()));
    }
    std::vector<double> desc(static_cast<std::size_t>(kCells) * kDescriptorSize, 0.0);
    constexpr double norm = 1.0 / (kSubSize * kSubSize);
    for (int y = 0; y < kCropSize; ++y) {
        const int row = y / kCellSize;
        const int sub_y = (y % kCellSize) / kSubSize;
        for (int x = 0; x < kCropSize; ++x) {
            const int col = x / kCellSize;
            const int sub_x = (x % kCellSize) / kSubSize;
            const std::size_t base = static_cast<std::size_t>(row * kFeatureGrid + col) * kDescriptorSize +
                                     static_cast<std::size_t>(sub_y * 2 + sub_x) * kChannels;
            for (int c = 0; c < kChannels; ++c) {
                desc[base + static_cast<std::size_t>(c)] += crop.at(x, y, c);
            }
        }
    }
    for (auto& v : desc) {
        v *= norm;
    }
    return desc;
}

void ProjectionBackbone::compose_affine(std::vector<double>& scale, std::vector<double>& shift) const {
    scale.assign(kChannelsZ, 1.0);
    shift.assign(kChannelsZ, 0.0);
    for (std::size_t l = 1; l < layers_.size(); ++l) {
        const auto& p = layers_[l];
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            scale[c] = p[c] * scale[c];
            shift[c] = p[c] * shift[c] + p[kChannelsZ + c];
        }
    }
}

namespace {

// tanh(desc . P + b) for every cell and channel, shape (25, 1280).
std::vector<double> project(const std::vector<double>& desc, std::span<const double> projection) {
    std::vector<double> act(static_cast<std::size_t>(kCells) * kChannelsZ);
    const double* bias = projection.data() + ProjectionBackbone::kDescriptorSize * kChannelsZ;
    for (int s = 0; s < kCells; ++s) {
        double* out = act.data() + static_cast<std::size_t>(s) * kChannelsZ;
        std::copy(bias, bias + kChannelsZ, out);
        for (int k = 0; k < ProjectionBackbone::kDescriptorSize; ++k) {
            const double d = desc[static_cast<std::size_t>(s) * ProjectionBackbone::kDescriptorSize +
                                  static_cast<std::size_t>(k)];
            const double* w = projection.data() + static_cast<std::size_t>(k) * kChannelsZ;
            for (std::size_t c = 0; c < kChannelsZ; ++c) {
                out[c] += d * w[c];
            }
        }
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            out[c] = std::tanh(out[c]);
        }
    }
    return act;
}

}  // namespace

FeatureMap ProjectionBackbone::extract(const CropTensor& crop) const {
    const auto desc = describe_cells(crop);
    const auto act = project(desc, layers_[0]);
    std::vector<double> scale;
    std::vector<double> shift;
    compose_affine(scale, shift);

    FeatureMap map;
    for (int s = 0; s < kCells; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * kChannelsZ;
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            map.values[base + c] = scale[c] * act[base + c] + shift[c];
        }
    }
    return map;
}

void ProjectionBackbone::accumulate_gradients(const CropTensor& crop, const FeatureMap& grad_output,
                                              std::size_t first_layer, LayerGradients& grads) const {
    const std::size_t n = layers_.size();
    if (first_layer >= n) {
        return;
    }
    if (grads.size() != n) {
        throw InvalidArgument("gradient buffers do not match the backbone layer count");
    }
    const auto desc = describe_cells(crop);
    const auto act = project(desc, layers_[0]);

    // Every layer above 0 is channel-wise affine, so the output is
    // prefix_scale * act + prefix_shift at every depth; only per-channel
    // sums over the 25 positions are needed.
    std::vector<double> sum_grad(kChannelsZ, 0.0);
    std::vector<double> sum_grad_act(kChannelsZ, 0.0);
    for (int s = 0; s < kCells; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * kChannelsZ;
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            sum_grad[c] += grad_output.values[base + c];
            sum_grad_act[c] += grad_output.values[base + c] * act[base + c];
        }
    }

    // prefix[l] = composition of layers 1..l (prefix[0] is the identity).
    std::vector<std::vector<double>> prefix_scale(n, std::vector<double>(kChannelsZ, 1.0));
    std::vector<std::vector<double>> prefix_shift(n, std::vector<double>(kChannelsZ, 0.0));
    for (std::size_t l = 1; l < n; ++l) {
        const auto& p = layers_[l];
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            prefix_scale[l][c] = p[c] * prefix_scale[l - 1][c];
            prefix_shift[l][c] = p[c] * prefix_shift[l - 1][c] + p[kChannelsZ + c];
        }
    }

    std::vector<double> upstream(kChannelsZ, 1.0);  // product of scales above the current layer
    for (std::size_t l = n - 1; l >= 1 && l >= first_layer; --l) {
        const auto& p = layers_[l];
        auto& g = grads[l];
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            g[c] += upstream[c] * (prefix_scale[l - 1][c] * sum_grad_act[c] + prefix_shift[l - 1][c] * sum_grad[c]);
            g[kChannelsZ + c] += upstream[c] * sum_grad[c];
            upstream[c] *= p[c];
        }
    }
    if (first_layer > 0) {
        return;
    }

    auto& g0 = grads[0];
    double* g_bias = g0.data() + kDescriptorSize * kChannelsZ;
    for (int s = 0; s < kCells; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * kChannelsZ;
        for (std::size_t c = 0; c < kChannelsZ; ++c) {
            const double a = act[base + c];
            const double d_pre = grad_output.values[base + c] * upstream[c] * (1.0 - a * a);
            g_bias[c] += d_pre;
            for (int k = 0; k < kDescriptorSize; ++k) {
                g0[static_cast<std::size_t>(k) * kChannelsZ + c] +=
                    desc[static_cast<std::size_t>(s) * kDescriptorSize + static_cast<std::size_t>(k)] * d_pre;
            }
        }
    }
}

nlohmann::json ProjectionBackbone::describe() const {
    return {{"kind", "projection"}, {"seed", seed_}, {"layers", layers_.size()}};
}

struct DnnBackbone::Impl {
    std::mutex mutex;
    cv::dnn::Net net;
};

DnnBackbone::DnnBackbone(const std::filesystem::path& model_path)
    : path_(model_path), impl_(std::make_unique<Impl>()) {
    if (!std::filesystem::exists(model_path)) {
        throw LoadError(model_path, "backbone model not found");
    }
    try {
        impl_->net = cv::dnn::readNet(model_path.string());
    } catch (const cv::Exception& e) {
        throw LoadError(model_path, std::string("cannot load backbone: ") + e.what());
    }
    if (impl_->net.empty()) {
        throw LoadError(model_path, "cannot load backbone");
    }
}

DnnBackbone::~DnnBackbone() = default;

FeatureMap DnnBackbone::extract(const CropTensor& crop) const {
    const int shape[] = {1, kChannels, kCropSize, kCropSize};
    cv::Mat blob(4, shape, CV_32F);
    auto* data = blob.ptr<float>();
    for (int c = 0; c < kChannels; ++c) {
        for (int y = 0; y < kCropSize; ++y) {
            for (int x = 0; x < kCropSize; ++x) {
                *data++ = crop.at(x, y, c);
            }
        }
    }
    cv::Mat out;
    {
        std::lock_guard lock(impl_->mutex);
        impl_->net.setInput(blob);
        out = impl_->net.forward().clone();
    }
    if (out.dims != 4 || out.total() != kFeatureMapSize) {
        throw Error(fmt::format("backbone output has {} values, expected (5, 5, 1280)", out.total()));
    }
    FeatureMap map;
    const float* src = out.ptr<float>();
    const bool channels_first = out.size[1] == kFeatureChannels;
    for (int r = 0; r < kFeatureGrid; ++r) {
        for (int col = 0; col < kFeatureGrid; ++col) {
            for (int ch = 0; ch < kFeatureChannels; ++ch) {
                const std::size_t idx =
                    channels_first ? (static_cast<std::size_t>(ch) * kFeatureGrid + static_cast<std::size_t>(r)) *
                                             kFeatureGrid +
                                         static_cast<std::size_t>(col)
                                   : FeatureMap::offset(r, col, ch);
                map.at(r, col, ch) = src[idx];
            }
        }
    }
    return map;
}

std::span<const double> DnnBackbone::layer_parameters(std::size_t layer) const {
    throw InvalidArgument(fmt::format("layer {} out of range: DNN backbones expose no trainable layers", layer));
}

std::span<double> DnnBackbone::mutable_layer_parameters(std::size_t layer) {
    throw InvalidArgument(fmt::format("layer {} out of range: DNN backbones expose no trainable layers", layer));
}

nlohmann::json DnnBackbone::describe() const {
    return {{"kind", "dnn"}, {"path", path_.string()}};
}

std::string layer_checksum(const Backbone& backbone, std::size_t begin, std::size_t end) {
    std::vector<std::uint8_t> bytes;
    for (std::size_t l = begin; l < end && l < backbone.layer_count(); ++l) {
        const auto params = backbone.layer_parameters(l);
        const auto* raw = reinterpret_cast<const std::uint8_t*>(params.data());
        bytes.insert(bytes.end(), raw, raw + params.size_bytes());
    }
    return sha256_hex(bytes);
}

namespace {
constexpr std::array<char, 4> kParamMagic = {'R', 'S', 'B', 'P'};
constexpr std::uint32_t kParamVersion = 1;
}  // namespace

void save_backbone_parameters(const Backbone& backbone, const std::filesystem::path& path) {
    std::string blob(kParamMagic.begin(), kParamMagic.end());
    const auto put = [&blob](const auto& value) {
        blob.append(reinterpret_cast<const char*>(&value), sizeof(value));
    };
    put(kParamVersion);
    put(static_cast<std::uint64_t>(backbone.layer_count()));
    for (std::size_t l = 0; l < backbone.layer_count(); ++l) {
        const auto params = backbone.layer_parameters(l);
        put(static_cast<std::uint64_t>(params.size()));
        blob.append(reinterpret_cast<const char*>(params.data()), params.size_bytes());
    }
    write_file_atomic(path, blob);
}

void load_backbone_parameters(Backbone& backbone, const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    const auto take = [&](void* dst, std::size_t n) {
        if (pos + n > bytes.size()) {
            throw LoadError(path, "truncated backbone parameter file");
        }
        std::memcpy(dst, bytes.data() + pos, n);
        pos += n;
    };
    std::array<char, 4> magic{};
    take(magic.data(), magic.size());
    if (magic != kParamMagic) {
        throw LoadError(path, "not a backbone parameter file");
    }
    std::uint32_t version = 0;
    take(&version, sizeof(version));
    if (version != kParamVersion) {
        throw LoadError(path, fmt::format("unsupported parameter file version {}", version));
    }
    std::uint64_t layers = 0;
    take(&layers, sizeof(layers));
    if (layers != backbone.layer_count()) {
        throw LoadError(path, fmt::format("file has {} layers, backbone has {}", layers, backbone.layer_count()));
    }
    for (std::size_t l = 0; l < layers; ++l) {
        std::uint64_t count = 0;
        take(&count, sizeof(count));
        auto params = backbone.mutable_layer_parameters(l);
        if (count != params.size()) {
            throw LoadError(path, fmt::format("layer {} has {} parameters, expected {}", l, count, params.size()));
        }
        take(params.data(), params.size_bytes());
    }
}

std::unique_ptr<Backbone> load_backbone(const nlohmann::json& description, const std::filesystem::path& base_dir) {
    const auto kind = description.at("kind").get<std::string>();
    if (kind == "projection") {
        auto backbone = std::make_unique<ProjectionBackbone>(description.at("seed").get<std::uint64_t>(),
                                                             description.at("layers").get<std::size_t>());
        if (description.contains("parameters")) {
            std::filesystem::path params = description["parameters"].get<std::string>();
            if (params.is_relative()) {
                params = base_dir / params;
            }
            load_backbone_parameters(*backbone, params);
        }
        return backbone;
    }
    if (kind == "dnn") {
        std::filesystem::path model = description.at("path").get<std::string>();
        if (model.is_relative()) {
            model = base_dir / model;
        }
        return std::make_unique<DnnBackbone>(model);
    }
    throw InvalidArgument("unknown backbone kind '" + kind + "'");
}

}  // namespace rider_scope
