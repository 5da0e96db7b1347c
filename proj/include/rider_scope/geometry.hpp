/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <json.hpp>

#include <string>

namespace rider_scope {

/// Axis-aligned box in original-frame pixels. Origin top-left, x right, y down.
/// The covered area is the half-open rectangle [x, x+w) x [y, y+h).
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double right() const noexcept { return x + w; }
    double bottom() const noexcept { return y + h; }
    double area() const noexcept { return w * h; }

    /// w > 0, h > 0 and every coordinate finite.
    bool valid() const noexcept;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct FrameDims {
    int width = 0;
    int height = 0;

    bool valid() const noexcept { return width >= 1 && height >= 1; }

    friend bool operator==(const FrameDims&, const FrameDims&) = default;
};

/// A detection box enlarged to take in the scooter, clipped to its frame.
struct ExtendedRegion {
    BoundingBox box;     // post-clipping
    BoundingBox source;  // detector output
    FrameDims frame;     // the frame `box` was clipped against
    bool clipped = false;
};

/// Throws InvalidArgument naming the box when it is not valid().
void require_valid(const BoundingBox& box);

std::string to_string(const BoundingBox& box);

/// The unclipped enlargement (x - w, y, 3w, h + h/4): width grows by w on
/// each side, height grows downward only.
BoundingBox extension_candidate(const BoundingBox& box) noexcept;

/// Intersection of two boxes; w or h is <= 0 when they are disjoint.
BoundingBox intersection(const BoundingBox& a, const BoundingBox& b) noexcept;

/// The frame as a box [0, width) x [0, height).
BoundingBox frame_box(FrameDims frame) noexcept;

/// Enlarges `box` and clips the candidate to `frame`.
/// Rejects invalid boxes, boxes that miss the frame, and results that clip
/// down to zero width or height.
ExtendedRegion extend_region(const BoundingBox& box, FrameDims frame);

/// Intersection over union in [0, 1]. Symmetric; 1 iff identical, 0 iff disjoint.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

// Boxes serialize as [x, y, w, h].
void to_json(nlohmann::json& j, const BoundingBox& box);
void from_json(const nlohmann::json& j, BoundingBox& box);

}  // namespace rider_scope
