/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "support.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/label_service.hpp"

#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

namespace rider_scope {
namespace {

namespace fs = std::filesystem;
using namespace std::chrono_literals;
using testing::TempDir;

const std::vector<std::uint8_t> kCrop = {1, 2, 3};

std::shared_ptr<SegmentStore> seeded_store(const fs::path& root, int n) {
    auto store = SegmentStore::open(root);
    for (int i = 0; i < n; ++i) {
        SegmentRecord r;
        r.segment_id = "s" + std::to_string(i);
        r.source_frame_id = "f" + std::to_string(i);
        r.interaction_id = "i" + std::to_string(i % 4);
        r.box = {1, 2, 3, 4};
        r.extended_box = {0, 2, 6, 5};
        r.frame_dims = {10, 10};
        store->insert(r, kCrop, ".png");
    }
    return store;
}

std::vector<std::string> ids(const std::vector<TriageItem>& items) {
    std::vector<std::string> out;
    for (const auto& i : items) out.push_back(i.segment_id);
    return out;
}

TEST(Queue, ServesUnlabeledInHarvestOrderWithoutSuggestions) {
    TempDir dir;
    TriageQueue q(seeded_store(dir.path(), 5), {});
    const auto now = Clock::now();
    EXPECT_EQ(ids(q.next("ana", 3, QueueMode::unlabeled, now)), (std::vector<std::string>{"s0", "s1", "s2"}));
    EXPECT_EQ(ids(q.next("bo", 5, QueueMode::unlabeled, now)), (std::vector<std::string>{"s3", "s4"}));
    EXPECT_TRUE(q.next("cy", 5, QueueMode::unlabeled, now).empty());
    EXPECT_THROW(q.next("cy", 0, QueueMode::unlabeled, now), InvalidArgument);
}

TEST(Queue, ConfidenceOrdering) {
    TempDir dir;
    LabelServiceConfig config;
    config.suggestions = {{"s0", 0.52}, {"s1", 0.02}, {"s2", 0.9}, {"s3", 0.45}};
    TriageQueue confident(seeded_store(dir / "a", 5), config);
    EXPECT_EQ(ids(confident.next("ana", 5, QueueMode::unlabeled, Clock::now())),
              (std::vector<std::string>{"s1", "s2", "s3", "s0", "s4"}));
    config.order = QueueOrder::most_uncertain_first;
    TriageQueue uncertain(seeded_store(dir / "b", 5), config);
    EXPECT_EQ(ids(uncertain.next("ana", 5, QueueMode::unlabeled, Clock::now())),
              (std::vector<std::string>{"s0", "s3", "s2", "s1", "s4"}));
    EXPECT_EQ(parse_queue_order("most_uncertain_first"), QueueOrder::most_uncertain_first);
    EXPECT_THROW(parse_queue_order("random"), InvalidArgument);
}

TEST(Queue, LeasesExpire) {
    TempDir dir;
    LabelServiceConfig config;
    config.lease_duration = 10s;
    TriageQueue q(seeded_store(dir.path(), 1), config);
    const auto t0 = Clock::now();
    EXPECT_EQ(q.next("ana", 1, QueueMode::unlabeled, t0).size(), 1u);
    EXPECT_EQ(q.lease_holder("s0", t0), "ana");
    EXPECT_TRUE(q.next("bo", 1, QueueMode::unlabeled, t0 + 5s).empty());
    EXPECT_TRUE(q.next("ana", 1, QueueMode::unlabeled, t0 + 5s).empty());
    EXPECT_EQ(q.next("bo", 1, QueueMode::unlabeled, t0 + 11s).size(), 1u);
    EXPECT_EQ(q.lease_holder("s0", t0 + 11s), "bo");
    EXPECT_FALSE(q.lease_holder("s0", t0 + 30s));
}

TEST(Queue, SubmitStatuses) {
    TempDir dir;
    TriageQueue q(seeded_store(dir.path(), 2), {});
    const auto now = Clock::now();
    q.next("ana", 1, QueueMode::unlabeled, now);
    EXPECT_EQ(q.submit({"s0", Label::rider, "bo", ""}, now).status, SubmitStatus::leased_elsewhere);
    EXPECT_EQ(q.submit({"nope", Label::rider, "ana", ""}, now).status, SubmitStatus::not_found);
    EXPECT_EQ(q.submit({"s0", Label::unlabeled, "ana", ""}, now).status, SubmitStatus::invalid);
    EXPECT_EQ(q.submit({"", Label::rider, "ana", ""}, now).status, SubmitStatus::invalid);
    const auto ok = q.submit({"s0", Label::rider, "ana", ""}, now);
    ASSERT_EQ(ok.status, SubmitStatus::ok);
    EXPECT_EQ(ok.record->label, Label::rider);
    EXPECT_FALSE(q.lease_holder("s0", now));
    EXPECT_EQ(q.submit({"s1", Label::non_rider, "bo", ""}, now).status, SubmitStatus::ok);
    EXPECT_EQ(q.submit({"s0", Label::non_rider, "bo", ""}, now).status, SubmitStatus::ok);

    const auto stats = q.stats();
    EXPECT_EQ(stats["total"], 2);
    EXPECT_EQ(stats["pending"], 0);
    EXPECT_EQ(stats["labeled"]["non_rider"], 2);
    EXPECT_EQ(stats["audit_entries"], 3);
    EXPECT_EQ(stats["decisions"]["bo"], 2);
    EXPECT_EQ(stats["decisions"]["ana"], 1);
    EXPECT_EQ(stats["balance_ratio"], 0.0);
}

TEST(Queue, StatsMatchFullRecount) {
    TempDir dir;
    TriageQueue q(seeded_store(dir.path(), 5), {});
    EXPECT_EQ(q.stats()["pending"], 5);
    EXPECT_EQ(q.stats()["labeled"]["rider"], 0);
    const auto now = Clock::now();
    const std::vector<std::pair<std::string, Label>> steps = {
        {"s0", Label::rider}, {"s1", Label::rider}, {"s2", Label::non_rider}, {"s1", Label::non_rider},
        {"s1", Label::rider}};
    for (const auto& [id, label] : steps) {
        ASSERT_EQ(q.submit({id, label, "ana", ""}, now).status, SubmitStatus::ok);
        const auto fresh = q.store().reload_from_disk().counts();
        const auto stats = q.stats();
        EXPECT_EQ(stats["pending"], fresh.pending);
        EXPECT_EQ(stats["labeled"]["rider"], fresh.rider);
        EXPECT_EQ(stats["labeled"]["non_rider"], fresh.non_rider);
    }
    EXPECT_EQ(q.stats()["labeled"]["rider"], 2);
    EXPECT_EQ(q.stats()["labeled"]["non_rider"], 1);
    EXPECT_DOUBLE_EQ(q.stats()["balance_ratio"].get<double>(), 0.5);
}

TEST(Queue, ReviewAndDisagreementModes) {
    TempDir dir;
    LabelServiceConfig config;
    config.suggestions = {{"s0", 0.9}, {"s1", 0.9}, {"s2", 0.1}};
    auto store = seeded_store(dir.path(), 4);
    store->record_label("s0", Label::rider, "ana");
    store->record_label("s1", Label::non_rider, "ana");
    store->record_label("s2", Label::non_rider, "ana");
    TriageQueue q(store, config);
    const auto now = Clock::now();
    EXPECT_EQ(ids(q.next("x", 5, QueueMode::disagreements, now)), std::vector<std::string>{"s1"});
    EXPECT_EQ(q.next("y", 5, QueueMode::review_labeled, now).size(), 2u);
    EXPECT_EQ(ids(q.next("z", 5, QueueMode::unlabeled, now)), std::vector<std::string>{"s3"});
    EXPECT_EQ(parse_queue_mode("review"), QueueMode::review_labeled);
    EXPECT_THROW(parse_queue_mode("all"), InvalidArgument);
}

TEST(Queue, ConcurrentReviewersNeverShareItems) {
    TempDir dir;
    TriageQueue q(seeded_store(dir.path(), 200), {});
    std::vector<std::vector<std::string>> got(4);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            const std::string me = "r" + std::to_string(t);
            for (;;) {
                const auto items = q.next(me, 3, QueueMode::unlabeled, Clock::now());
                if (items.empty()) break;
                for (const auto& i : items) {
                    EXPECT_EQ(q.submit({i.segment_id, Label::rider, me, ""}, Clock::now()).status, SubmitStatus::ok);
                    got[t].push_back(i.segment_id);
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    std::set<std::string> all;
    std::size_t total = 0;
    for (const auto& g : got) {
        total += g.size();
        all.insert(g.begin(), g.end());
    }
    EXPECT_EQ(total, 200u);
    EXPECT_EQ(all.size(), 200u);
    EXPECT_EQ(q.store().snapshot()->audit.size(), 200u);
}

TEST(Suggestions, ReadFromJsonl) {
    TempDir dir;
    testing::write_text(dir / "s.jsonl", R"({"segment_id":"a","score":0.25})" "\n");
    const auto s = read_suggestions(dir / "s.jsonl");
    EXPECT_DOUBLE_EQ(s.at("a"), 0.25);
    testing::write_text(dir / "bad.jsonl", R"({"segment_id":"a","score":2})" "\n");
    EXPECT_THROW(read_suggestions(dir / "bad.jsonl"), ParseError);
}

class ServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        auto store = seeded_store(dir / "store", 6);
        LabelServiceConfig config;
        config.suggestions = {{"s2", 0.99}};
        server = std::make_unique<LabelServer>(store, config);
        const auto bound = server->bind("127.0.0.1", 0);
        ASSERT_TRUE(bound);
        port = *bound;
        thread = std::thread([this] { server->run(); });
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_connection_timeout(5);
        for (int i = 0; i < 100; ++i) {
            if (client->Get("/api/health")) break;
            std::this_thread::sleep_for(20ms);
        }
    }

    void TearDown() override {
        if (server) server->stop();
        if (thread.joinable()) thread.join();
    }

    nlohmann::json post_label(const std::string& id, const std::string& label, const std::string& reviewer,
                              int expected_status) {
        const nlohmann::json body = {
            {"segment_id", id}, {"label", label}, {"reviewer", reviewer}, {"client_timestamp", "t"}};
        const auto res = client->Post("/api/labels", body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expected_status) << res->body;
        return nlohmann::json::parse(res->body);
    }

    TempDir dir;
    std::unique_ptr<LabelServer> server;
    int port = 0;
    std::thread thread;
    std::unique_ptr<httplib::Client> client;
};

TEST_F(ServerTest, HealthCarriesSchemaHeader) {
    const auto res = client->Get("/api/health");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value(std::string(kSchemaHeader)), kSchemaVersion);
    EXPECT_EQ(nlohmann::json::parse(res->body)["status"], "ok");
}

TEST_F(ServerTest, WrongSchemaIs400) {
    const auto res = client->Get("/api/health", {{std::string(kSchemaHeader), "7"}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
}

TEST_F(ServerTest, QueueLabelAndStatsRoundTrip) {
    auto res = client->Get("/api/queue/next?count=2&reviewer=ana");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200);
    const auto items = nlohmann::json::parse(res->body)["items"];
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[0]["segment_id"], "s2");
    EXPECT_DOUBLE_EQ(items[0]["model_suggestion"].get<double>(), 0.99);
    EXPECT_TRUE(items[1]["model_suggestion"].is_null());
    EXPECT_EQ(items[0]["image_url"], "/api/segments/s2/image");

    post_label("s2", "rider", "bo", 409);
    const auto ok = post_label("s2", "rider", "ana", 200);
    EXPECT_EQ(ok["record"]["label"], "rider");
    EXPECT_EQ(ok["counts"]["rider"], 1);
    post_label("ghost", "rider", "ana", 404);
    post_label("s0", "maybe", "ana", 400);
    post_label("s0", "unlabeled", "ana", 400);
    res = client->Post("/api/labels", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);

    res = client->Get("/api/stats");
    ASSERT_TRUE(res);
    const auto stats = nlohmann::json::parse(res->body);
    EXPECT_EQ(stats["total"], 6);
    EXPECT_EQ(stats["pending"], 5);
    EXPECT_EQ(stats["audit_entries"], 1);
}

TEST_F(ServerTest, BadQueueParametersAre400) {
    for (const char* path : {"/api/queue/next?count=0", "/api/queue/next?count=abc", "/api/queue/next?mode=all"}) {
        const auto res = client->Get(path);
        ASSERT_TRUE(res);
        EXPECT_EQ(res->status, 400) << path;
    }
}

TEST_F(ServerTest, SegmentImages) {
    auto res = client->Get("/api/segments/s0/image");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->body, std::string(kCrop.begin(), kCrop.end()));
    EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
    res = client->Get("/api/segments/zzz/image");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
}

TEST_F(ServerTest, ManifestBuild) {
    for (int i = 0; i < 6; ++i) {
        post_label("s" + std::to_string(i), i % 2 ? "rider" : "non_rider", "ana", 200);
    }
    const auto res = client->Post("/api/manifest/build", R"({"balance":true,"train_fraction":0.5,"seed":2})",
                                  "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const auto body = nlohmann::json::parse(res->body);
    EXPECT_EQ(body["entries"], 6);
    EXPECT_TRUE(fs::exists(body["path"].get<std::string>()));
    const auto m = read_manifest(body["path"].get<std::string>());
    EXPECT_EQ(m.entries.size(), 6u);
}

TEST_F(ServerTest, ManifestBuildWithOneClassIs400) {
    post_label("s0", "rider", "ana", 200);
    const auto res = client->Post("/api/manifest/build", "{}", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
}

TEST_F(ServerTest, RootServesPlaceholder) {
    const auto res = client->Get("/");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_NE(res->body.find("<html"), std::string::npos);
}

TEST_F(ServerTest, OccupiedPortIsReported) {
    LabelServer other(SegmentStore::open(dir / "other"), {});
    EXPECT_FALSE(other.bind("127.0.0.1", port));
}

}  // namespace
}  // namespace rider_scope
