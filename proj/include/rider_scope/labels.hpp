/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <string_view>

namespace rider_scope {

/// Rider is the positive class everywhere.
enum class Label { unlabeled, rider, non_rider };

std::string_view to_string(Label label) noexcept;

/// Accepts "rider", "non_rider" and "unlabeled"; throws InvalidArgument otherwise.
Label parse_label(std::string_view text);

}  // namespace rider_scope
