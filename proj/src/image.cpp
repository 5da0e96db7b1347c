/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/image.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace rider_scope {

Image::Image(int width, int height, std::uint8_t fill)
    : width_(width),
      height_(height),
      pixels_(static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0)) * kChannels,
              fill) {
    if (width < 0 || height < 0) {
        throw InvalidArgument(fmt::format("negative image size {}x{}", width, height));
    }
}

Image::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width < 0 || height < 0 ||
        pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * kChannels) {
        throw InvalidArgument(fmt::format("pixel buffer of {} bytes does not match {}x{}x3", pixels_.size(), width,
                                          height));
    }
}

PixelWindow pixel_window(const BoundingBox& box, FrameDims frame) noexcept {
    const auto clampi = [](double v, int hi) {
        return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi)));
    };
    return {clampi(std::floor(box.x), frame.width), clampi(std::floor(box.y), frame.height),
            clampi(std::ceil(box.right()), frame.width), clampi(std::ceil(box.bottom()), frame.height)};
}

Image extract_crop(const Frame& frame, const ExtendedRegion& region) {
    if (!(region.frame == frame.dims())) {
        throw InvalidArgument(fmt::format("region was clipped against a {}x{} frame but frame '{}' is {}x{}",
                                          region.frame.width, region.frame.height, frame.frame_id,
                                          frame.dims().width, frame.dims().height));
    }
    const PixelWindow window = pixel_window(region.box, frame.dims());
    if (window.width() <= 0 || window.height() <= 0) {
        throw InvalidArgument("region " + to_string(region.box) + " covers no pixels");
    }
    Image crop(window.width(), window.height());
    const auto row_bytes = static_cast<std::size_t>(window.width()) * kChannels;
    const auto src = frame.image.pixels();
    auto dst = crop.pixels();
    for (int y = 0; y < window.height(); ++y) {
        const std::size_t src_offset =
            (static_cast<std::size_t>(window.y0 + y) * static_cast<std::size_t>(frame.image.width()) +
             static_cast<std::size_t>(window.x0)) *
            kChannels;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(src_offset), row_bytes,
                    dst.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * row_bytes));
    }
    return crop;
}

namespace {

// Corner-aligned source coordinate for output index i.
struct Tap {
    int lo = 0;
    int hi = 0;
    double frac = 0.0;
};

std::vector<Tap> make_taps(int src_size, int dst_size) {
    std::vector<Tap> taps(static_cast<std::size_t>(dst_size));
    for (int i = 0; i < dst_size; ++i) {
        double pos = 0.0;
        if (dst_size == 1) {
            pos = (src_size - 1) / 2.0;
        } else {
            pos = static_cast<double>(static_cast<long long>(i) * (src_size - 1)) / (dst_size - 1);
        }
        int lo = static_cast<int>(std::floor(pos));
        lo = std::clamp(lo, 0, src_size - 1);
        const int hi = std::min(lo + 1, src_size - 1);
        taps[static_cast<std::size_t>(i)] = {lo, hi, std::clamp(pos - lo, 0.0, 1.0)};
    }
    return taps;
}

// Calls emit(x, y, c, value) for every output sample, value in [0, 255].
template <typename Emit>
void sample_bilinear(const Image& src, int width, int height, Emit&& emit) {
    const auto xs = make_taps(src.width(), width);
    const auto ys = make_taps(src.height(), height);
    for (int y = 0; y < height; ++y) {
        const Tap& ty = ys[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            const Tap& tx = xs[static_cast<std::size_t>(x)];
            for (int c = 0; c < kChannels; ++c) {
                const double a = src.at(tx.lo, ty.lo, c);
                const double b = src.at(tx.hi, ty.lo, c);
                const double d = src.at(tx.lo, ty.hi, c);
                const double e = src.at(tx.hi, ty.hi, c);
                const double top = a + (b - a) * tx.frac;
                const double bottom = d + (e - d) * tx.frac;
                emit(x, y, c, std::clamp(top + (bottom - top) * ty.frac, 0.0, 255.0));
            }
        }
    }
}

}  // namespace

Image resize_bilinear(const Image& src, int width, int height) {
    if (src.empty()) {
        throw InvalidArgument("cannot resize an empty image");
    }
    if (width <= 0 || height <= 0) {
        throw InvalidArgument(fmt::format("invalid target size {}x{}", width, height));
    }
    if (src.width() == width && src.height() == height) {
        return src;
    }
    Image out(width, height);
    sample_bilinear(src, width, height, [&out](int x, int y, int c, double v) {
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
    });
    return out;
}

Image resize_for_detector(const Frame& frame) {
    return resize_bilinear(frame.image, kDetectorInputSize, kDetectorInputSize);
}

CropTensor preprocess_crop(const Image& raw) {
    if (raw.empty()) {
        throw InvalidArgument("cannot preprocess an empty pixel rectangle");
    }
    CropTensor tensor;
    tensor.values.assign(static_cast<std::size_t>(kCropSize) * kCropSize * kChannels, 0.0f);
    sample_bilinear(raw, kCropSize, kCropSize, [&tensor](int x, int y, int c, double v) {
        const double unit = std::clamp(v / 127.5 - 1.0, -1.0, 1.0);
        tensor.values[(static_cast<std::size_t>(y) * kCropSize + static_cast<std::size_t>(x)) * kChannels +
                      static_cast<std::size_t>(c)] = static_cast<float>(unit);
    });
    return tensor;
}

CropTensor preprocess_crop(const Image& raw, const ExtendedRegion& region, std::string frame_id) {
    CropTensor tensor = preprocess_crop(raw);
    tensor.source_region = region;
    tensor.source_frame_id = std::move(frame_id);
    return tensor;
}

namespace {

Image from_bgr_mat(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    if (!rgb.isContinuous()) {
        rgb = rgb.clone();
    }
    std::vector<std::uint8_t> pixels(rgb.data, rgb.data + rgb.total() * rgb.elemSize());
    return Image(rgb.cols, rgb.rows, std::move(pixels));
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> encoded, const std::filesystem::path& origin) {
    if (encoded.empty()) {
        throw LoadError(origin, "empty image file");
    }
    const cv::Mat buffer(1, static_cast<int>(encoded.size()), CV_8UC1, const_cast<std::uint8_t*>(encoded.data()));
    cv::Mat bgr;
    try {
        bgr = cv::imdecode(buffer, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw LoadError(origin, std::string("cannot decode image: ") + e.what());
    }
    if (bgr.empty()) {
        throw LoadError(origin, "cannot decode image");
    }
    return from_bgr_mat(bgr);
}

Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return decode_image(bytes, path);
}

Frame load_frame(const std::filesystem::path& path, std::string frame_id) {
    return Frame{std::move(frame_id), load_image(path)};
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.empty()) {
        throw InvalidArgument("cannot encode an empty image");
    }
    const cv::Mat rgb(image.height(), image.width(), CV_8UC3, const_cast<std::uint8_t*>(image.pixels().data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> encoded;
    if (!cv::imencode(".png", bgr, encoded)) {
        throw Error("PNG encoding failed");
    }
    return encoded;
}

void save_png(const std::filesystem::path& path, const Image& image) {
    const auto encoded = encode_png(image);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(encoded.data()), encoded.size()));
}

}  // namespace rider_scope
