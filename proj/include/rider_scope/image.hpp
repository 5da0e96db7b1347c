/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include "rider_scope/geometry.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rider_scope {

inline constexpr int kCropSize = 160;
inline constexpr int kDetectorInputSize = 416;
inline constexpr int kChannels = 3;

/// 8-bit RGB raster, row-major, channels interleaved.
class Image {
public:
    Image() = default;
    Image(int width, int height, std::uint8_t fill = 0);
    Image(int width, int height, std::vector<std::uint8_t> pixels);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    FrameDims dims() const noexcept { return {width_, height_}; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    std::uint8_t& at(int x, int y, int c) noexcept { return pixels_[index(x, y, c)]; }
    std::uint8_t at(int x, int y, int c) const noexcept { return pixels_[index(x, y, c)]; }

    std::span<std::uint8_t> pixels() noexcept { return pixels_; }
    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y, int c) const noexcept {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) *
                   kChannels +
               static_cast<std::size_t>(c);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

/// One input frame. Immutable once built.
struct Frame {
    std::string frame_id;
    Image image;

    FrameDims dims() const noexcept { return image.dims(); }
};

/// Classifier input: 160x160x3 values in [-1, 1], row-major HWC.
struct CropTensor {
    std::vector<float> values;
    ExtendedRegion source_region;
    std::string source_frame_id;

    float at(int x, int y, int c) const noexcept {
        return values[(static_cast<std::size_t>(y) * kCropSize + static_cast<std::size_t>(x)) * kChannels +
                      static_cast<std::size_t>(c)];
    }
};

/// An (n, 160, 160, 3) batch, ordered like the detections that produced it.
using CropBatch = std::vector<CropTensor>;

/// Integer pixel window [x0, x1) x [y0, y1).
struct PixelWindow {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
};

/// Origin floored, far edge ceiled, then clamped to the frame.
PixelWindow pixel_window(const BoundingBox& box, FrameDims frame) noexcept;

/// Copies the pixels covered by region.box. Rejects regions clipped against
/// a frame of different dimensions.
Image extract_crop(const Frame& frame, const ExtendedRegion& region);

/// Bilinear resize with corner-aligned sampling: output corners coincide with
/// input corners, so same-size resize is the identity.
Image resize_bilinear(const Image& src, int width, int height);

/// 416x416 stretch of the whole frame.
Image resize_for_detector(const Frame& frame);

/// v / 127.5 - 1
inline float rescale_unit(std::uint8_t v) noexcept { return static_cast<float>(v / 127.5 - 1.0); }

/// Stretches to 160x160 (bilinear, corner-aligned, no letterbox) and maps
/// each value into [-1, 1]. Rejects empty input.
CropTensor preprocess_crop(const Image& raw);
CropTensor preprocess_crop(const Image& raw, const ExtendedRegion& region, std::string frame_id);

/// PNG/JPEG (anything the codec backend reads). Throws LoadError.
Image load_image(const std::filesystem::path& path);
Image decode_image(std::span<const std::uint8_t> encoded, const std::filesystem::path& origin);
Frame load_frame(const std::filesystem::path& path, std::string frame_id);
std::vector<std::uint8_t> encode_png(const Image& image);
void save_png(const std::filesystem::path& path, const Image& image);

}  // namespace rider_scope
