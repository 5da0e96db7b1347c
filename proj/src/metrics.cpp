/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/metrics.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace rider_scope {

double ConfusionCounts::accuracy() const noexcept {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

namespace {

void require_same_length(std::size_t scores, std::size_t labels) {
    if (scores != labels) {
        throw InvalidArgument(fmt::format("{} scores but {} labels", scores, labels));
    }
    if (scores == 0) {
        throw InvalidArgument("no samples");
    }
}

void require_binary(std::span<const int> labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw InvalidArgument(fmt::format("label {} at index {} is not 0 or 1", labels[i], i));
        }
    }
}

double ratio(std::size_t num, std::size_t den) noexcept {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
    require_same_length(scores.size(), labels.size());
    require_binary(labels);
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            ++(predicted ? c.tp : c.fn);
        } else {
            ++(predicted ? c.fp : c.tn);
        }
    }
    return c;
}

ClassMetrics precision_recall_f1(const ConfusionCounts& counts) noexcept {
    ClassMetrics m;
    m.precision = ratio(counts.tp, counts.tp + counts.fp);
    m.recall = ratio(counts.tp, counts.tp + counts.fn);
    m.f1 = ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn);
    m.support = counts.tp + counts.fn;
    return m;
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    require_same_length(scores.size(), labels.size());
    require_binary(labels);
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw InvalidArgument(fmt::format("ROC needs both classes (positives: {}, negatives: {})", positives, negatives));
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    RocCurve curve;
    const double inf = std::numeric_limits<double>::infinity();
    curve.points.push_back({inf, 0.0, 0.0});
    // Twice the area in units of one positive-negative pair, kept integral so
    // the result equals the pair-counting definition exactly.
    unsigned long long area2 = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double threshold = scores[order[i]];
        const std::size_t tp_before = tp;
        const std::size_t fp_before = fp;
        for (; i < order.size() && scores[order[i]] == threshold; ++i) {
            ++(labels[order[i]] == 1 ? tp : fp);
        }
        area2 += static_cast<unsigned long long>(fp - fp_before) * (tp + tp_before);
        curve.points.push_back({threshold, ratio(tp, positives), ratio(fp, negatives)});
    }
    curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
    return curve;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    return roc_curve(scores, labels).auc;
}

Matching match_detections(std::span<const PredictedObject> predictions, std::span<const TruthObject> truths,
                          double iou_threshold) {
    std::vector<std::size_t> order(predictions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return predictions[a].confidence > predictions[b].confidence; });

    Matching out;
    std::vector<bool> taken(truths.size(), false);
    for (const auto p : order) {
        std::optional<std::size_t> best;
        double best_iou = iou_threshold;
        for (std::size_t t = 0; t < truths.size(); ++t) {
            if (taken[t]) {
                continue;
            }
            const double overlap = iou(predictions[p].box, truths[t].box);
            if (overlap >= best_iou && (!best || overlap > best_iou)) {
                best = t;
                best_iou = overlap;
            }
        }
        if (best) {
            taken[*best] = true;
            out.pairs.push_back({p, *best, best_iou});
        } else {
            out.unmatched_predictions.push_back(p);
        }
    }
    for (std::size_t t = 0; t < truths.size(); ++t) {
        if (!taken[t]) {
            out.unmatched_truths.push_back(t);
        }
    }
    std::sort(out.unmatched_predictions.begin(), out.unmatched_predictions.end());
    return out;
}

PipelineReport pipeline_report(std::span<const FramePredictions> predictions, std::span<const FrameTruth> truths,
                               double iou_threshold) {
    std::map<std::string, const FramePredictions*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.frame_id, &p).second) {
            throw InvalidArgument("duplicate prediction frame id '" + p.frame_id + "'");
        }
    }
    std::set<std::string> truth_ids;
    std::vector<std::string> missing_predictions;
    for (const auto& t : truths) {
        if (!truth_ids.insert(t.frame_id).second) {
            throw InvalidArgument("duplicate ground-truth frame id '" + t.frame_id + "'");
        }
        if (!by_id.count(t.frame_id)) {
            missing_predictions.push_back(t.frame_id);
        }
    }
    std::vector<std::string> missing_truth;
    for (const auto& [id, _] : by_id) {
        if (!truth_ids.count(id)) {
            missing_truth.push_back(id);
        }
    }
    if (!missing_predictions.empty() || !missing_truth.empty()) {
        throw InvalidArgument(fmt::format("frame ids do not align; no predictions for [{}]; no ground truth for [{}]",
                                          fmt::join(missing_predictions, ", "), fmt::join(missing_truth, ", ")));
    }

    PipelineReport report;
    for (const auto& truth : truths) {
        const auto& pred = *by_id.at(truth.frame_id);
        const Matching m = match_detections(pred.objects, truth.objects, iou_threshold);
        report.persons_total += truth.objects.size();
        report.persons_detected += m.pairs.size();
        report.unmatched_predictions += m.unmatched_predictions.size();
        for (const auto& t : truth.objects) {
            if (t.label == Label::rider) ++report.riders_total;
        }
        for (const auto t : m.unmatched_truths) {
            if (truth.objects[t].label == Label::rider) ++report.riders_undetected;
        }
        for (const auto& pair : m.pairs) {
            const bool truly_rider = truth.objects[pair.truth].label == Label::rider;
            const bool said_rider = pred.objects[pair.prediction].label == Label::rider;
            auto& c = report.detected_confusion;
            if (truly_rider) {
                ++(said_rider ? report.riders_true_positive : report.riders_misclassified);
                ++(said_rider ? c.tp : c.fn);
            } else {
                ++(said_rider ? c.fp : c.tn);
            }
        }
    }
    report.recall = ratio(report.riders_true_positive, report.riders_total);
    return report;
}

EvaluationReport classification_report(const ConfusionCounts& counts) {
    EvaluationReport r;
    r.counts = counts;
    r.rider = precision_recall_f1(counts);
    r.non_rider = precision_recall_f1(counts.swapped());
    r.accuracy = counts.accuracy();
    return r;
}

std::string format_report(const EvaluationReport& report) {
    std::string out;
    out += fmt::format("{:<12}{:>10}{:>10}{:>10}{:>10}\n", "class", "precision", "recall", "f1", "support");
    const auto row = [&](const char* name, const ClassMetrics& m) {
        out += fmt::format("{:<12}{:>10.2f}{:>10.2f}{:>10.2f}{:>10}\n", name, m.precision, m.recall, m.f1, m.support);
    };
    row("rider", report.rider);
    row("non_rider", report.non_rider);
    out += fmt::format("{:<12}{:>10.2f}{:>30}\n", "accuracy", report.accuracy, report.counts.total());
    out += fmt::format("counts: tp {} fp {} tn {} fn {}\n", report.counts.tp, report.counts.fp, report.counts.tn,
                       report.counts.fn);
    if (report.roc) {
        out += fmt::format("roc auc: {:.2f}\n", report.roc->auc);
    }
    if (report.pipeline) {
        const auto& p = *report.pipeline;
        out += fmt::format("riders: {} total, {} detected and classified, {} misclassified, {} undetected\n",
                           p.riders_total, p.riders_true_positive, p.riders_misclassified, p.riders_undetected);
        out += fmt::format("rider recall: {:.2f}\n", p.recall);
    }
    return out;
}

void to_json(nlohmann::json& j, const ConfusionCounts& c) {
    j = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

void to_json(nlohmann::json& j, const ClassMetrics& m) {
    j = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

void to_json(nlohmann::json& j, const RocCurve& curve) {
    auto points = nlohmann::json::array();
    for (const auto& p : curve.points) {
        // JSON has no infinity; the leading point is encoded with a null threshold.
        points.push_back({{"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json()},
                          {"tpr", p.tpr},
                          {"fpr", p.fpr}});
    }
    j = {{"auc", curve.auc}, {"points", points}};
}

void to_json(nlohmann::json& j, const PipelineReport& r) {
    j = {{"riders_total", r.riders_total},
         {"riders_true_positive", r.riders_true_positive},
         {"riders_misclassified", r.riders_misclassified},
         {"riders_undetected", r.riders_undetected},
         {"recall", r.recall},
         {"detected_confusion", r.detected_confusion},
         {"persons_total", r.persons_total},
         {"persons_detected", r.persons_detected},
         {"unmatched_predictions", r.unmatched_predictions}};
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
    j = {{"counts", r.counts}, {"rider", r.rider}, {"non_rider", r.non_rider}, {"accuracy", r.accuracy}};
    if (r.roc) j["roc"] = *r.roc;
    if (r.pipeline) j["pipeline"] = *r.pipeline;
}

namespace {

Label parse_binary_label(const nlohmann::json& value) {
    const Label label = parse_label(value.get<std::string>());
    if (label == Label::unlabeled) {
        throw InvalidArgument("label must be rider or non_rider");
    }
    return label;
}

std::string frame_id_of(const nlohmann::json& j) {
    auto id = j.at("frame_id").get<std::string>();
    if (id.empty()) {
        throw InvalidArgument("empty frame_id");
    }
    return id;
}

}  // namespace

std::vector<FrameTruth> read_ground_truth(const std::filesystem::path& path) {
    std::vector<FrameTruth> frames;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        FrameTruth frame;
        frame.frame_id = frame_id_of(j);
        for (const auto& o : j.at("objects")) {
            frame.objects.push_back({o.at("box").get<BoundingBox>(), parse_binary_label(o.at("label"))});
        }
        frames.push_back(std::move(frame));
    });
    return frames;
}

std::vector<FramePredictions> read_predictions(const std::filesystem::path& path) {
    std::vector<FramePredictions> frames;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        FramePredictions frame;
        frame.frame_id = frame_id_of(j);
        for (const auto& o : j.at("objects")) {
            PredictedObject p;
            p.box = o.at("box").get<BoundingBox>();
            p.label = parse_binary_label(o.at("label"));
            p.score = o.at("score").get<double>();
            p.confidence = o.value("confidence", 1.0);
            frame.objects.push_back(p);
        }
        frames.push_back(std::move(frame));
    });
    return frames;
}

std::vector<ScoredSample> read_scores(const std::filesystem::path& path) {
    std::vector<ScoredSample> samples;
    for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
        const double score = j.at("score").get<double>();
        if (!(score >= 0.0 && score <= 1.0)) {
            throw InvalidArgument(fmt::format("score {} outside [0, 1]", score));
        }
        samples.push_back({score, parse_binary_label(j.at("label")) == Label::rider ? 1 : 0});
    });
    return samples;
}

}  // namespace rider_scope
