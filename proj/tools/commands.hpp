/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <CLI11.hpp>

namespace rider_scope::cli {

/// Registers every subcommand on `app`. After app.parse(), run_selected()
/// executes whichever one was chosen.
class CommandSet {
public:
    explicit CommandSet(CLI::App& app);
    ~CommandSet();

    CommandSet(const CommandSet&) = delete;
    CommandSet& operator=(const CommandSet&) = delete;

    /// Maps every option to an RIDER_SCOPE_<NAME> environment variable.
    static void bind_environment(CLI::App& app);

    void run_selected();

private:
    struct State;
    CLI::App& app_;
    State* state_;
};

}  // namespace rider_scope::cli
