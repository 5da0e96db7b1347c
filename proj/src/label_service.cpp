/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/label_service.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <sys/socket.h>

namespace rider_scope {

QueueMode parse_queue_mode(std::string_view text) {
    if (text == "unlabeled") return QueueMode::unlabeled;
    if (text == "review") return QueueMode::review_labeled;
    if (text == "disagreements") return QueueMode::disagreements;
    throw InvalidArgument("unknown queue mode '" + std::string(text) + "' (expected unlabeled, review, disagreements)");
}

QueueOrder parse_queue_order(std::string_view text) {
    if (text == "most_confident_first") return QueueOrder::most_confident_first;
    if (text == "most_uncertain_first") return QueueOrder::most_uncertain_first;
    throw InvalidArgument("unknown queue order '" + std::string(text) +
                          "' (expected most_confident_first, most_uncertain_first)");
}

std::map<std::string, double> read_suggestions(const std::filesystem::path& path) {
    std::map<std::string, double> out;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        const double score = j.at("score").get<double>();
        if (!(score >= 0.0 && score <= 1.0)) {
            throw InvalidArgument(fmt::format("score {} outside [0, 1]", score));
        }
        out[j.at("segment_id").get<std::string>()] = score;
    });
    return out;
}

void to_json(nlohmann::json& j, const TriageItem& item) {
    j = {{"segment_id", item.segment_id},
         {"image_url", item.image_url},
         {"model_suggestion", item.model_suggestion ? nlohmann::json(*item.model_suggestion) : nlohmann::json()},
         {"source_frame_id", item.source_frame_id},
         {"box", item.box},
         {"label", to_string(item.label)}};
}

TriageQueue::TriageQueue(std::shared_ptr<SegmentStore> store, LabelServiceConfig config)
    : store_(std::move(store)), config_(std::move(config)) {
    if (config_.lease_duration.count() <= 0) {
        throw InvalidArgument("lease duration must be positive");
    }
}

std::vector<TriageItem> TriageQueue::next(const std::string& reviewer, int count, QueueMode mode,
                                          Clock::time_point now) {
    if (count <= 0) {
        throw InvalidArgument(fmt::format("count must be positive, got {}", count));
    }
    // Snapshot under the lease lock so a concurrent submit cannot slip in between.
    std::lock_guard lock(lease_mutex_);
    const auto snapshot = store_->snapshot();
    const auto suggestion_of = [&](const std::string& id) -> std::optional<double> {
        const auto it = config_.suggestions.find(id);
        return it == config_.suggestions.end() ? std::nullopt : std::optional<double>(it->second);
    };
    const auto eligible = [&](const SegmentRecord& r) {
        switch (mode) {
            case QueueMode::unlabeled:
                return r.label == Label::unlabeled;
            case QueueMode::review_labeled:
                return r.label != Label::unlabeled;
            case QueueMode::disagreements: {
                const auto s = suggestion_of(r.segment_id);
                return r.label != Label::unlabeled && s && ((*s >= 0.5) != (r.label == Label::rider));
            }
        }
        return false;
    };

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < snapshot->records.size(); ++i) {
        if (eligible(snapshot->records[i])) {
            candidates.push_back(i);
        }
    }
    const auto rank = [&](std::size_t i) {
        const auto s = suggestion_of(snapshot->records[i].segment_id);
        if (!s) {
            return std::numeric_limits<double>::infinity();
        }
        const double distance = std::abs(*s - 0.5);
        return config_.order == QueueOrder::most_confident_first ? -distance : distance;
    };
    std::stable_sort(candidates.begin(), candidates.end(), [&](auto a, auto b) { return rank(a) < rank(b); });

    std::vector<TriageItem> items;
    for (const auto i : candidates) {
        if (items.size() >= static_cast<std::size_t>(count)) {
            break;
        }
        const auto& r = snapshot->records[i];
        const auto lease = leases_.find(r.segment_id);
        if (lease != leases_.end() && lease->second.expires > now) {
            continue;
        }
        leases_[r.segment_id] = {reviewer, now + config_.lease_duration};
        items.push_back({r.segment_id, "/api/segments/" + r.segment_id + "/image", suggestion_of(r.segment_id),
                         r.source_frame_id, r.box, r.label});
    }
    return items;
}

SubmitResult TriageQueue::submit(const LabelDecision& decision, Clock::time_point now) {
    if (decision.segment_id.empty()) {
        return {SubmitStatus::invalid, std::nullopt, "segment_id is required"};
    }
    if (decision.label == Label::unlabeled) {
        return {SubmitStatus::invalid, std::nullopt, "label must be rider or non_rider"};
    }
    if (!store_->snapshot()->find(decision.segment_id)) {
        return {SubmitStatus::not_found, std::nullopt, "unknown segment id '" + decision.segment_id + "'"};
    }
    std::lock_guard lock(lease_mutex_);
    const auto lease = leases_.find(decision.segment_id);
    if (lease != leases_.end() && lease->second.expires > now && lease->second.reviewer != decision.reviewer) {
        return {SubmitStatus::leased_elsewhere, std::nullopt,
                fmt::format("segment '{}' is leased to '{}'", decision.segment_id, lease->second.reviewer)};
    }
    SegmentRecord record;
    try {
        record = store_->record_label(decision.segment_id, decision.label, decision.reviewer);
    } catch (const NotFound& e) {
        return {SubmitStatus::not_found, std::nullopt, e.what()};
    }
    if (lease != leases_.end()) {
        leases_.erase(lease);
    }
    return {SubmitStatus::ok, std::move(record), ""};
}

nlohmann::json TriageQueue::stats() const {
    const auto snapshot = store_->snapshot();
    const StoreCounts counts = snapshot->counts();
    // Latest decision per segment, attributed to whoever made it.
    std::map<std::string, std::size_t> per_reviewer;
    std::map<std::string, std::size_t> decisions;
    for (const auto& r : snapshot->records) {
        if (r.label != Label::unlabeled) {
            ++per_reviewer[r.labeled_by];
        }
    }
    for (const auto& e : snapshot->audit) {
        ++decisions[e.labeled_by];
    }
    const auto lo = std::min(counts.rider, counts.non_rider);
    const auto hi = std::max(counts.rider, counts.non_rider);
    return {{"total", snapshot->records.size()},
            {"pending", counts.pending},
            {"labeled", {{"rider", counts.rider}, {"non_rider", counts.non_rider}}},
            {"reviewers", per_reviewer},
            {"decisions", decisions},
            {"audit_entries", snapshot->audit.size()},
            {"balance_ratio", hi == 0 ? 0.0 : static_cast<double>(lo) / static_cast<double>(hi)}};
}

std::optional<std::string> TriageQueue::lease_holder(const std::string& segment_id, Clock::time_point now) const {
    std::lock_guard lock(lease_mutex_);
    const auto it = leases_.find(segment_id);
    if (it == leases_.end() || it->second.expires <= now) {
        return std::nullopt;
    }
    return it->second.reviewer;
}

namespace {

constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>rider-scope triage</title></head>"
    "<body><h1>rider-scope label service</h1><p>No triage UI bundle is installed. The JSON API is under "
    "<code>/api/</code>.</p></body></html>";

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

std::string content_type_for(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".bmp") return "image/bmp";
    return "application/octet-stream";
}

nlohmann::json counts_json(const StoreCounts& c) {
    return {{"pending", c.pending}, {"rider", c.rider}, {"non_rider", c.non_rider}};
}

}  // namespace

struct LabelServer::Impl {
    httplib::Server server;
};

LabelServer::LabelServer(std::shared_ptr<SegmentStore> store, LabelServiceConfig config)
    : queue_(std::make_unique<TriageQueue>(std::move(store), std::move(config))), impl_(std::make_unique<Impl>()) {
    auto& svr = impl_->server;
    TriageQueue& queue = *queue_;

    // Plain SO_REUSEADDR so that a port held by another listener is reported as busy.
    svr.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    svr.set_default_headers({{std::string(kSchemaHeader), std::string(kSchemaVersion)}});

    svr.set_pre_routing_handler([](const httplib::Request& req, httplib::Response& res) {
        const std::string key(kSchemaHeader);
        if (req.has_header(key) && req.get_header_value(key) != kSchemaVersion) {
            send_error(res, 400,
                       fmt::format("unsupported schema version '{}', server speaks {}", req.get_header_value(key),
                                   kSchemaVersion));
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const InvalidArgument& e) {
            send_error(res, 400, e.what());
        } catch (const NotFound& e) {
            send_error(res, 404, e.what());
        } catch (const std::exception& e) {
            spdlog::error("request failed: {}", e.what());
            send_error(res, 500, e.what());
        }
    });

    svr.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}, {"schema", kSchemaVersion}});
    });

    svr.Get("/api/queue/next", [&queue](const httplib::Request& req, httplib::Response& res) {
        int count = 1;
        if (req.has_param("count")) {
            const auto text = req.get_param_value("count");
            try {
                std::size_t used = 0;
                count = std::stoi(text, &used);
                if (used != text.size()) throw std::invalid_argument(text);
            } catch (const std::exception&) {
                return send_error(res, 400, "count must be an integer, got '" + text + "'");
            }
        }
        if (count <= 0) {
            return send_error(res, 400, fmt::format("count must be positive, got {}", count));
        }
        const auto reviewer = req.has_param("reviewer") ? req.get_param_value("reviewer") : std::string("anonymous");
        const auto mode = req.has_param("mode") ? parse_queue_mode(req.get_param_value("mode")) : QueueMode::unlabeled;
        const auto items = queue.next(reviewer, count, mode, Clock::now());
        send_json(res, 200, {{"items", items}});
    });

    svr.Post("/api/labels", [&queue](const httplib::Request& req, httplib::Response& res) {
        LabelDecision decision;
        try {
            const auto body = nlohmann::json::parse(req.body);
            decision.segment_id = body.at("segment_id").get<std::string>();
            decision.label = parse_label(body.at("label").get<std::string>());
            decision.reviewer = body.value("reviewer", "anonymous");
            decision.client_timestamp = body.value("client_timestamp", "");
        } catch (const std::exception& e) {
            return send_error(res, 400, std::string("malformed label decision: ") + e.what());
        }
        const auto result = queue.submit(decision, Clock::now());
        switch (result.status) {
            case SubmitStatus::ok:
                return send_json(res, 200,
                                 {{"record", *result.record}, {"counts", counts_json(queue.store().snapshot()->counts())}});
            case SubmitStatus::not_found:
                return send_error(res, 404, result.message);
            case SubmitStatus::leased_elsewhere:
                return send_error(res, 409, result.message);
            case SubmitStatus::invalid:
                return send_error(res, 400, result.message);
        }
    });

    svr.Get("/api/stats", [&queue](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, queue.stats());
    });

    svr.Get(R"(/api/segments/([^/]+)/image)", [&queue](const httplib::Request& req, httplib::Response& res) {
        const auto snapshot = queue.store().snapshot();
        const SegmentRecord* record = snapshot->find(req.matches[1]);
        if (!record) {
            return send_error(res, 404, "unknown segment id '" + std::string(req.matches[1]) + "'");
        }
        const auto path = queue.store().crop_file(*record);
        std::vector<std::uint8_t> bytes;
        try {
            bytes = read_file_bytes(path);
        } catch (const LoadError& e) {
            return send_error(res, 404, e.what());
        }
        res.status = 200;
        res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(path));
    });

    svr.Post("/api/manifest/build", [&queue](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body = nlohmann::json::object();
        if (!req.body.empty()) {
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const std::exception& e) {
                return send_error(res, 400, std::string("malformed request: ") + e.what());
            }
        }
        bool balance = true;
        double train_fraction = 0.85;
        std::uint64_t seed = 0;
        try {
            balance = body.value("balance", true);
            train_fraction = body.value("train_fraction", 0.85);
            seed = body.value("seed", std::uint64_t{0});
        } catch (const std::exception& e) {
            return send_error(res, 400, std::string("malformed request: ") + e.what());
        }
        const auto manifest = build_manifest(queue.store(), balance, train_fraction, seed);
        auto path = queue.config().manifest_path;
        if (path.empty()) {
            path = queue.store().root() / "manifest.jsonl";
        }
        write_manifest(manifest, path,
                       {{"command", "label-service"},
                        {"balance", balance},
                        {"train_fraction", train_fraction},
                        {"seed", seed}});
        send_json(res, 200,
                  {{"path", path.string()},
                   {"entries", manifest.entries.size()},
                   {"train", {{"rider", manifest.train_counts.rider}, {"non_rider", manifest.train_counts.non_rider}}},
                   {"test", {{"rider", manifest.test_counts.rider}, {"non_rider", manifest.test_counts.non_rider}}}});
    });

    const auto& ui_dir = queue.config().ui_dir;
    if (!ui_dir.empty() && std::filesystem::is_directory(ui_dir)) {
        svr.set_mount_point("/", ui_dir.string());
    } else {
        svr.Get("/", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(kPlaceholderPage, "text/html");
        });
    }
}

LabelServer::~LabelServer() {
    stop();
}

std::optional<int> LabelServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        return bound > 0 ? std::optional<int>(bound) : std::nullopt;
    }
    return impl_->server.bind_to_port(host, port) ? std::optional<int>(port) : std::nullopt;
}

void LabelServer::run() {
    impl_->server.listen_after_bind();
}

void LabelServer::stop() {
    if (impl_ && impl_->server.is_running()) {
        impl_->server.stop();
    }
}

}  // namespace rider_scope
