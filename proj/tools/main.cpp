/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "commands.hpp"

#include "rider_scope/errors.hpp"

#include <iostream>

#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void report_error(std::string_view kind, std::string_view message) {
    std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("rider-scope"));
    spdlog::set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%^%l%$] %v");

    CLI::App app{"E-scooter rider detection: detect, harvest and label crops, train, evaluate, serve triage."};
    app.set_version_flag("--version", "rider-scope 0.1.0");
    rider_scope::cli::CommandSet commands(app);
    rider_scope::cli::CommandSet::bind_environment(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage", e.what());
        return kExitUsage;
    }

    try {
        commands.run_selected();
    } catch (const CLI::Error& e) {
        report_error("usage", e.what());
        return kExitUsage;
    } catch (const rider_scope::InvalidArgument& e) {
        report_error("invalid_argument", e.what());
        return kExitRuntime;
    } catch (const rider_scope::NotFound& e) {
        report_error("not_found", e.what());
        return kExitRuntime;
    } catch (const rider_scope::LoadError& e) {
        report_error("load_error", e.what());
        return kExitRuntime;
    } catch (const rider_scope::ParseError& e) {
        report_error("parse_error", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        report_error("runtime", e.what());
        return kExitRuntime;
    }
    return 0;
}
