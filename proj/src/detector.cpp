/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/detector.hpp"

#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"

#include <algorithm>
#include <map>
#include <mutex>

#include <fmt/format.h>
#include <opencv2/dnn.hpp>

namespace rider_scope {

void DetectorConfig::validate() const {
    const auto in_open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_open_unit(confidence_threshold)) {
        throw InvalidArgument(fmt::format("confidence threshold {} is outside (0, 1)", confidence_threshold));
    }
    if (!in_open_unit(nms_threshold)) {
        throw InvalidArgument(fmt::format("NMS threshold {} is outside (0, 1)", nms_threshold));
    }
}

BackendKind parse_backend_kind(std::string_view name) {
    if (name == "replay") return BackendKind::replay;
    if (name == "pretrained_yolo" || name == "yolo") return BackendKind::pretrained_yolo;
    throw InvalidArgument("unknown detector backend '" + std::string(name) + "' (expected replay or pretrained_yolo)");
}

std::string_view to_string(BackendKind kind) noexcept {
    return kind == BackendKind::replay ? "replay" : "pretrained_yolo";
}

void sort_detections(std::vector<Detection>& detections) {
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.box.x < b.box.x;
    });
}

const std::vector<std::string>& coco_class_names() {
    static const std::vector<std::string> names = {
        "person",        "bicycle",      "car",           "motorbike",     "aeroplane",   "bus",
        "train",         "truck",        "boat",          "traffic light", "fire hydrant", "stop sign",
        "parking meter", "bench",        "bird",          "cat",           "dog",          "horse",
        "sheep",         "cow",          "elephant",      "bear",          "zebra",        "giraffe",
        "backpack",      "umbrella",     "handbag",       "tie",           "suitcase",     "frisbee",
        "skis",          "snowboard",    "sports ball",   "kite",          "baseball bat", "baseball glove",
        "skateboard",    "surfboard",    "tennis racket", "bottle",        "wine glass",   "cup",
        "fork",          "knife",        "spoon",         "bowl",          "banana",       "apple",
        "sandwich",      "orange",       "broccoli",      "carrot",        "hot dog",      "pizza",
        "donut",         "cake",         "chair",         "sofa",          "pottedplant",  "bed",
        "diningtable",   "toilet",       "tvmonitor",     "laptop",        "mouse",        "remote",
        "keyboard",      "cell phone",   "microwave",     "oven",          "toaster",      "sink",
        "refrigerator",  "book",         "clock",         "vase",          "scissors",     "teddy bear",
        "hair drier",    "toothbrush"};
    return names;
}

namespace {

// Clip to the frame and keep only valid, person, above-threshold detections.
DetectionSet finalize(std::string frame_id, std::vector<Detection> raw, FrameDims dims, double threshold) {
    DetectionSet out{std::move(frame_id), {}};
    const BoundingBox bounds = frame_box(dims);
    for (auto& det : raw) {
        if (det.class_label != kPersonClass || det.confidence < threshold) {
            continue;
        }
        const BoundingBox clipped = intersection(det.box, bounds);
        if (!clipped.valid()) {
            continue;
        }
        if (det.box.x < 0.0 || det.box.y < 0.0 || det.box.right() > bounds.w || det.box.bottom() > bounds.h) {
            det.box = clipped;
        }
        out.detections.push_back(std::move(det));
    }
    sort_detections(out.detections);
    return out;
}

class ReplayDetector final : public Detector {
public:
    ReplayDetector(const std::filesystem::path& path, double threshold) : threshold_(threshold) {
        if (!std::filesystem::exists(path)) {
            throw LoadError(path, "replay file does not exist");
        }
        for_each_jsonl(path, [&](const nlohmann::json& line, std::size_t number) {
            if (!line.is_object() || !line.contains("frame_id") || !line["frame_id"].is_string()) {
                throw ParseError(path, number, "expected an object with a string \"frame_id\"");
            }
            const auto frame_id = line["frame_id"].get<std::string>();
            std::vector<Detection> detections;
            if (line.contains("detections")) {
                if (!line["detections"].is_array()) {
                    throw ParseError(path, number, "\"detections\" must be an array");
                }
                for (const auto& item : line["detections"]) {
                    if (!item.is_object() || !item.contains("box") || !item.contains("confidence")) {
                        throw ParseError(path, number, "each detection needs \"box\" and \"confidence\"");
                    }
                    Detection det;
                    det.box = item["box"].get<BoundingBox>();
                    if (!det.box.valid()) {
                        throw ParseError(path, number, "invalid box " + to_string(det.box));
                    }
                    det.confidence = item["confidence"].get<double>();
                    if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) {
                        throw ParseError(path, number, fmt::format("confidence {} outside [0, 1]", det.confidence));
                    }
                    det.class_label = item.value("class", std::string(kPersonClass));
                    detections.push_back(std::move(det));
                }
            }
            if (!frames_.emplace(frame_id, std::move(detections)).second) {
                throw ParseError(path, number, "duplicate frame_id '" + frame_id + "'");
            }
        });
    }

    DetectionSet detect_persons(const Frame& frame) const override {
        const auto it = frames_.find(frame.frame_id);
        if (it == frames_.end()) {
            return {frame.frame_id, {}};
        }
        return finalize(frame.frame_id, it->second, frame.dims(), threshold_);
    }

    std::vector<std::string> class_vocabulary() const override { return {std::string(kPersonClass)}; }
    std::string_view name() const noexcept override { return "replay"; }

private:
    double threshold_;
    std::map<std::string, std::vector<Detection>> frames_;
};

class YoloDetector final : public Detector {
public:
    explicit YoloDetector(const DetectorConfig& config) : config_(config) {
        const auto& weights = config.weights_path;
        auto cfg = config.network_config_path;
        if (cfg.empty()) {
            cfg = weights;
            cfg.replace_extension(".cfg");
        }
        if (weights.empty() || !std::filesystem::exists(weights)) {
            throw LoadError(weights, "detector weights not found");
        }
        if (!std::filesystem::exists(cfg)) {
            throw LoadError(cfg, "detector network description not found");
        }
        try {
            net_ = cv::dnn::readNetFromDarknet(cfg.string(), weights.string());
        } catch (const cv::Exception& e) {
            throw LoadError(weights, std::string("cannot load Darknet model: ") + e.what());
        }
        if (net_.empty()) {
            throw LoadError(weights, "cannot load Darknet model");
        }
        output_names_ = net_.getUnconnectedOutLayersNames();
    }

    DetectionSet detect_persons(const Frame& frame) const override {
        const Image input = resize_for_detector(frame);
        const cv::Mat rgb(input.height(), input.width(), CV_8UC3, const_cast<std::uint8_t*>(input.pixels().data()));
        const cv::Mat blob = cv::dnn::blobFromImage(rgb, 1.0 / 255.0, cv::Size(), cv::Scalar(), false, false);

        std::vector<cv::Mat> outputs;
        try {
            std::lock_guard lock(net_mutex_);
            net_.setInput(blob);
            net_.forward(outputs, output_names_);
        } catch (const cv::Exception& e) {
            throw StageError(frame.frame_id, "detect", e.what());
        }

        // Rows are [cx, cy, w, h, objectness, class scores...] relative to the
        // network input; the input is a plain stretch, so each axis scales back
        // independently.
        const double fw = frame.dims().width;
        const double fh = frame.dims().height;
        std::vector<cv::Rect2d> boxes;
        std::vector<float> scores;
        for (const auto& out : outputs) {
            for (int r = 0; r < out.rows; ++r) {
                const float* row = out.ptr<float>(r);
                const float person = row[5];
                if (person < config_.confidence_threshold) {
                    continue;
                }
                const double w = row[2] * fw;
                const double h = row[3] * fh;
                boxes.emplace_back(row[0] * fw - w / 2.0, row[1] * fh - h / 2.0, w, h);
                scores.push_back(person);
            }
        }
        std::vector<int> keep;
        cv::dnn::NMSBoxes(boxes, scores, static_cast<float>(config_.confidence_threshold),
                          static_cast<float>(config_.nms_threshold), keep);
        std::vector<Detection> raw;
        raw.reserve(keep.size());
        for (int idx : keep) {
            const auto& b = boxes[static_cast<std::size_t>(idx)];
            raw.push_back({{b.x, b.y, b.width, b.height}, scores[static_cast<std::size_t>(idx)], std::string(kPersonClass)});
        }
        return finalize(frame.frame_id, std::move(raw), frame.dims(), config_.confidence_threshold);
    }

    std::vector<std::string> class_vocabulary() const override { return coco_class_names(); }
    std::string_view name() const noexcept override { return "pretrained_yolo"; }

private:
    DetectorConfig config_;
    mutable std::mutex net_mutex_;
    mutable cv::dnn::Net net_;
    std::vector<std::string> output_names_;
};

}  // namespace

std::unique_ptr<Detector> load_detector(const DetectorConfig& config) {
    config.validate();
    switch (config.backend) {
        case BackendKind::replay:
            return std::make_unique<ReplayDetector>(config.replay_path, config.confidence_threshold);
        case BackendKind::pretrained_yolo:
            return std::make_unique<YoloDetector>(config);
    }
    throw InvalidArgument("unknown detector backend");
}

}  // namespace rider_scope
