/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "support.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/metrics.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace rider_scope {
namespace {

using testing::TempDir;
using testing::write_text;

std::string two(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

TEST(Confusion, ThresholdIsInclusive) {
    const std::vector<double> s = {0.5, 0.49, 0.9, 0.1};
    const std::vector<int> y = {1, 1, 0, 0};
    const auto c = confusion(s, y, 0.5);
    EXPECT_EQ(c, (ConfusionCounts{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(c.accuracy(), 0.5);
    EXPECT_THROW(confusion(s, std::vector<int>{1}, 0.5), InvalidArgument);
    EXPECT_THROW(confusion(std::vector<double>{}, std::vector<int>{}, 0.5), InvalidArgument);
}

TEST(Confusion, SwapExchangesRoles) {
    const ConfusionCounts c{1, 2, 3, 4};
    EXPECT_EQ(c.swapped(), (ConfusionCounts{3, 4, 1, 2}));
    EXPECT_EQ(c.swapped().swapped(), c);
}

TEST(PrecisionRecall, ZeroDenominatorsAreZero) {
    const auto m = precision_recall_f1({0, 0, 5, 0});
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_EQ(ConfusionCounts{}.accuracy(), 0.0);
}

TEST(PrecisionRecall, HandComputed) {
    const auto m = precision_recall_f1({3, 1, 0, 2});
    EXPECT_DOUBLE_EQ(m.precision, 0.75);
    EXPECT_DOUBLE_EQ(m.recall, 0.6);
    EXPECT_DOUBLE_EQ(m.f1, 2 * 0.75 * 0.6 / 1.35);
    EXPECT_EQ(m.support, 5u);
}

TEST(Report, ClassificationTableFromCounts) {
    const auto r = classification_report({1137, 97, 1131, 132});
    EXPECT_EQ(two(r.rider.precision), "0.92");
    EXPECT_EQ(two(r.rider.recall), "0.90");
    EXPECT_EQ(two(r.rider.f1), "0.91");
    EXPECT_EQ(two(r.non_rider.precision), "0.90");
    EXPECT_EQ(two(r.non_rider.recall), "0.92");
    EXPECT_EQ(two(r.non_rider.f1), "0.91");
    EXPECT_EQ(two(r.accuracy), "0.91");
    const auto text = format_report(r);
    EXPECT_NE(text.find("rider"), std::string::npos);
    EXPECT_NE(text.find("0.92"), std::string::npos);
    const nlohmann::json j = r;
    EXPECT_EQ(j.at("counts").at("tp"), 1137);
    EXPECT_TRUE(j.contains("rider"));
    EXPECT_TRUE(j.contains("non_rider"));
}

TEST(Roc, EndpointsAndPerfectRanking) {
    const std::vector<double> s = {0.9, 0.8, 0.3, 0.1};
    const std::vector<int> y = {1, 1, 0, 0};
    const auto curve = roc_curve(s, y);
    ASSERT_GE(curve.points.size(), 2u);
    EXPECT_EQ(curve.points.front().tpr, 0.0);
    EXPECT_EQ(curve.points.front().fpr, 0.0);
    EXPECT_EQ(curve.points.back().tpr, 1.0);
    EXPECT_EQ(curve.points.back().fpr, 1.0);
    EXPECT_DOUBLE_EQ(curve.auc, 1.0);
    EXPECT_EQ(curve.points.size(), 5u);
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        EXPECT_LT(curve.points[i].threshold, curve.points[i - 1].threshold);
    }
    const nlohmann::json j = curve;
    EXPECT_TRUE(j["points"][0]["threshold"].is_null());
}

TEST(Roc, AllTiedIsHalf) {
    const std::vector<double> s(6, 0.4);
    const std::vector<int> y = {1, 0, 1, 0, 0, 1};
    EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.5);
}

TEST(Roc, MatchesPairCountOracle) {
    std::mt19937_64 rng(321);
    for (int t = 0; t < 100; ++t) {
        const int n = 2 + static_cast<int>(rng() % 60);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % 7) / 6.0;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_NEAR(roc_auc(s, y), testing::pair_count_auc(s, y), 1e-12);
    }
}

TEST(Roc, RejectsSingleClass) {
    EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), InvalidArgument);
}

TEST(Matching, OneToOne) {
    const std::vector<TruthObject> truths = {{{10, 10, 20, 40}, Label::rider}};
    std::vector<PredictedObject> preds = {{{10, 10, 20, 40}, Label::rider, 0.9, 0.9}};
    auto m = match_detections(preds, truths);
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_DOUBLE_EQ(m.pairs[0].iou, 1.0);

    preds.push_back({{11, 10, 20, 40}, Label::rider, 0.8, 0.95});
    m = match_detections(preds, truths);
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_EQ(m.pairs[0].prediction, 1u);
    EXPECT_EQ(m.unmatched_predictions, std::vector<std::size_t>{0});
    EXPECT_TRUE(m.unmatched_truths.empty());
}

TEST(Matching, ThresholdIsInclusive) {
    const std::vector<TruthObject> truths = {{{0, 0, 10, 10}, Label::rider}};
    const std::vector<PredictedObject> half = {{{0, 0, 10, 5}, Label::rider, 1.0, 1.0}};
    EXPECT_EQ(match_detections(half, truths, 0.5).pairs.size(), 1u);
    EXPECT_EQ(match_detections(half, truths, 0.51).pairs.size(), 0u);
}

TEST(Matching, AgreesWithExhaustiveOracleOnSeparatedScenes) {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 300; ++t) {
        std::vector<TruthObject> truths;
        std::vector<PredictedObject> preds;
        const int n = 1 + static_cast<int>(rng() % 5);
        for (int i = 0; i < n; ++i) {
            const double x = 100.0 * i + static_cast<double>(rng() % 20);
            truths.push_back({{x, 50, 30, 70}, Label::rider});
            if (rng() % 4 != 0) {
                preds.push_back({{x + static_cast<double>(rng() % 9), 50 + static_cast<double>(rng() % 9), 30, 70},
                                 Label::rider, 0.5, static_cast<double>(rng() % 100) / 100.0});
            }
        }
        EXPECT_EQ(match_detections(preds, truths).pairs.size(), testing::exhaustive_max_matches(preds, truths, 0.5));
    }
}

std::vector<FrameTruth> one_frame_truth() {
    return {{"f", {{{0, 0, 10, 20}, Label::rider}, {{50, 0, 10, 20}, Label::rider}, {{100, 0, 10, 20}, Label::rider},
                   {{150, 0, 10, 20}, Label::non_rider}}}};
}

TEST(PipelineReport, ThreeWayBreakdown) {
    const std::vector<FramePredictions> preds = {
        {"f",
         {{{0, 0, 10, 20}, Label::rider, 0.9, 0.9},
          {{50, 0, 10, 20}, Label::non_rider, 0.2, 0.8},
          {{150, 0, 10, 20}, Label::non_rider, 0.1, 0.7},
          {{300, 0, 10, 20}, Label::rider, 0.8, 0.6}}}};
    const auto r = pipeline_report(preds, one_frame_truth());
    EXPECT_EQ(r.riders_total, 3u);
    EXPECT_EQ(r.riders_true_positive, 1u);
    EXPECT_EQ(r.riders_misclassified, 1u);
    EXPECT_EQ(r.riders_undetected, 1u);
    EXPECT_DOUBLE_EQ(r.recall, 1.0 / 3.0);
    EXPECT_EQ(r.persons_total, 4u);
    EXPECT_EQ(r.persons_detected, 3u);
    EXPECT_EQ(r.unmatched_predictions, 1u);
    EXPECT_EQ(r.detected_confusion, (ConfusionCounts{1, 0, 1, 1}));
}

TEST(PipelineReport, NoRidersGivesZeroRecall) {
    const std::vector<FrameTruth> truth = {{"f", {{{0, 0, 10, 20}, Label::non_rider}}}};
    const std::vector<FramePredictions> preds = {{"f", {}}};
    const auto r = pipeline_report(preds, truth);
    EXPECT_EQ(r.riders_total, 0u);
    EXPECT_EQ(r.recall, 0.0);
}

TEST(PipelineReport, FrameMismatchListsIds) {
    const std::vector<FramePredictions> preds = {{"f", {}}, {"extra", {}}};
    std::vector<FrameTruth> truth = one_frame_truth();
    truth.push_back({"missing", {}});
    try {
        pipeline_report(preds, truth);
        FAIL();
    } catch (const InvalidArgument& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("extra"), std::string::npos) << what;
        EXPECT_NE(what.find("missing"), std::string::npos) << what;
    }
}

TEST(Readers, GroundTruthPredictionsAndScores) {
    TempDir dir;
    write_text(dir / "gt.jsonl", R"({"frame_id":"a","objects":[{"box":[1,2,3,4],"label":"rider"}]})" "\n");
    const auto gt = read_ground_truth(dir / "gt.jsonl");
    ASSERT_EQ(gt.size(), 1u);
    EXPECT_EQ(gt[0].objects[0].label, Label::rider);

    write_text(dir / "p.jsonl",
               R"({"frame_id":"a","objects":[{"box":[1,2,3,4],"label":"non_rider","score":0.2}]})" "\n");
    const auto p = read_predictions(dir / "p.jsonl");
    EXPECT_DOUBLE_EQ(p[0].objects[0].score, 0.2);
    EXPECT_DOUBLE_EQ(p[0].objects[0].confidence, 1.0);

    write_text(dir / "s.jsonl", R"({"score":0.7,"label":"rider"})" "\n" R"({"score":0.1,"label":"non_rider"})" "\n");
    const auto s = read_scores(dir / "s.jsonl");
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].label, 1);
    EXPECT_EQ(s[1].label, 0);

    write_text(dir / "bad.jsonl", R"({"score":0.7,"label":"rider"})" "\n" R"({"score":1.7,"label":"rider"})" "\n");
    try {
        read_scores(dir / "bad.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    write_text(dir / "unl.jsonl", R"({"frame_id":"a","objects":[{"box":[1,2,3,4],"label":"unlabeled"}]})" "\n");
    EXPECT_THROW(read_ground_truth(dir / "unl.jsonl"), ParseError);
    EXPECT_THROW(read_scores(dir / "none.jsonl"), LoadError);
}

}  // namespace
}  // namespace rider_scope
