/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/geometry.hpp"

#include "rider_scope/errors.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace rider_scope {

bool BoundingBox::valid() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0;
}

std::string to_string(const BoundingBox& box) {
    return fmt::format("[{}, {}, {}, {}]", box.x, box.y, box.w, box.h);
}

void require_valid(const BoundingBox& box) {
    if (!box.valid()) {
        throw InvalidArgument("invalid bounding box " + to_string(box) + " (need finite values, w > 0, h > 0)");
    }
}

BoundingBox extension_candidate(const BoundingBox& box) noexcept {
    return {box.x - box.w, box.y, 3.0 * box.w, box.h + box.h / 4.0};
}

BoundingBox intersection(const BoundingBox& a, const BoundingBox& b) noexcept {
    const double left = std::max(a.x, b.x);
    const double top = std::max(a.y, b.y);
    const double right = std::min(a.right(), b.right());
    const double bottom = std::min(a.bottom(), b.bottom());
    return {left, top, right - left, bottom - top};
}

BoundingBox frame_box(FrameDims frame) noexcept {
    return {0.0, 0.0, static_cast<double>(frame.width), static_cast<double>(frame.height)};
}

ExtendedRegion extend_region(const BoundingBox& box, FrameDims frame) {
    require_valid(box);
    if (!frame.valid()) {
        throw InvalidArgument(fmt::format("invalid frame dims {}x{}", frame.width, frame.height));
    }
    const BoundingBox bounds = frame_box(frame);
    if (!intersection(box, bounds).valid()) {
        throw InvalidArgument(fmt::format("box {} does not intersect the {}x{} frame", to_string(box), frame.width,
                                          frame.height));
    }

    const BoundingBox candidate = extension_candidate(box);
    BoundingBox region = candidate;
    bool clipped = false;
    // Clip one axis at a time; an untouched axis keeps its exact candidate values.
    const auto clip_axis = [&clipped](double& origin, double& extent, double limit) {
        const double far = origin + extent;
        if (origin >= 0.0 && far <= limit) {
            return;
        }
        clipped = true;
        const double lo = std::max(origin, 0.0);
        const double hi = std::min(far, limit);
        origin = lo;
        extent = hi - lo;
    };
    clip_axis(region.x, region.w, bounds.w);
    clip_axis(region.y, region.h, bounds.h);
    if (!region.valid()) {
        throw InvalidArgument(fmt::format("extended region of box {} is degenerate after clipping to {}x{}",
                                          to_string(box), frame.width, frame.height));
    }
    return {region, box, frame, clipped};
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
    const BoundingBox overlap = intersection(a, b);
    if (overlap.w <= 0.0 || overlap.h <= 0.0) {
        return 0.0;
    }
    const double inter = overlap.area();
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

void to_json(nlohmann::json& j, const BoundingBox& box) {
    j = nlohmann::json::array({box.x, box.y, box.w, box.h});
}

void from_json(const nlohmann::json& j, BoundingBox& box) {
    if (!j.is_array() || j.size() != 4) {
        throw InvalidArgument("box must be an array [x, y, w, h]");
    }
    for (const auto& v : j) {
        if (!v.is_number()) {
            throw InvalidArgument("box entries must be numbers");
        }
    }
    box = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace rider_scope
