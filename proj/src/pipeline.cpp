/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "rider_scope/pipeline.hpp"

#include "rider_scope/errors.hpp"

#include <chrono>
#include <deque>
#include <future>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

namespace rider_scope {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void add_timings(StageTimings& into, const StageTimings& t) {
    into.detect_ms += t.detect_ms;
    into.extend_ms += t.extend_ms;
    into.crop_ms += t.crop_ms;
    into.classify_ms += t.classify_ms;
}

}  // namespace

AnnotatedFrame process_frame(const Frame& frame, const Detector& detector, const RiderClassifier& classifier,
                             const PipelineConfig& config) {
    AnnotatedFrame out;
    out.frame_id = frame.frame_id;

    auto t = Clock::now();
    DetectionSet detections;
    try {
        detections = detector.detect_persons(frame);
    } catch (const std::exception& e) {
        throw StageError(frame.frame_id, "detect", e.what());
    }
    out.timing.detect_ms = elapsed_ms(t);

    t = Clock::now();
    std::vector<std::pair<const Detection*, ExtendedRegion>> regions;
    regions.reserve(detections.detections.size());
    for (const auto& det : detections.detections) {
        try {
            regions.emplace_back(&det, extend_region(det.box, frame.dims()));
        } catch (const InvalidArgument& e) {
            auto message = fmt::format("dropped region {}: {}", to_string(det.box), e.what());
            spdlog::warn("frame '{}': {}", frame.frame_id, message);
            out.warnings.push_back(std::move(message));
        }
    }
    out.timing.extend_ms = elapsed_ms(t);
    if (regions.empty()) {
        return out;
    }

    t = Clock::now();
    CropBatch batch;
    batch.reserve(regions.size());
    try {
        for (const auto& [det, region] : regions) {
            batch.push_back(preprocess_crop(extract_crop(frame, region), region, frame.frame_id));
        }
    } catch (const std::exception& e) {
        throw StageError(frame.frame_id, "crop", e.what());
    }
    out.timing.crop_ms = elapsed_ms(t);

    t = Clock::now();
    std::vector<double> scores;
    try {
        scores = classifier.score_batch(batch);
    } catch (const std::exception& e) {
        throw StageError(frame.frame_id, "classify", e.what());
    }
    if (scores.size() != batch.size()) {
        throw StageError(frame.frame_id, "classify",
                         fmt::format("classifier returned {} scores for {} crops", scores.size(), batch.size()));
    }
    out.timing.classify_ms = elapsed_ms(t);

    for (std::size_t i = 0; i < regions.size(); ++i) {
        const double score = scores[i];
        if (!(score >= 0.0 && score <= 1.0)) {
            throw StageError(frame.frame_id, "classify", fmt::format("score {} outside [0, 1]", score));
        }
        Annotation a;
        a.box = regions[i].first->box;
        a.extended_box = regions[i].second.box;
        a.score = score;
        a.label = score >= config.decision_threshold ? Label::rider : Label::non_rider;
        a.confidence = regions[i].first->confidence;
        out.annotations.push_back(a);
    }
    return out;
}

SequenceSummary process_sequence(FrameSource& frames, const Detector& detector, const RiderClassifier& classifier,
                                 const PipelineConfig& config, FrameSink& sink) {
    SequenceSummary summary;
    struct InFlight {
        Frame frame;
        std::future<AnnotatedFrame> result;
    };
    std::deque<InFlight> window;
    const std::size_t workers = std::max<std::size_t>(1, config.workers);

    const auto drain_one = [&] {
        // The task may be deferred and still reference the queued frame, so
        // it is resolved before the entry leaves the window.
        std::optional<AnnotatedFrame> result;
        std::string error;
        try {
            result = window.front().result.get();
        } catch (const std::exception& e) {
            error = e.what();
        }
        auto item = std::move(window.front());
        window.pop_front();
        ++summary.frames;
        try {
            if (!result) {
                throw Error(error);
            }
            const AnnotatedFrame& annotated = *result;
            summary.persons += annotated.annotations.size();
            summary.dropped_regions += annotated.warnings.size();
            for (const auto& a : annotated.annotations) {
                if (a.label == Label::rider) ++summary.riders;
            }
            add_timings(summary.total_timing, annotated.timing);
            sink.consume(item.frame, annotated);
        } catch (const std::exception& e) {
            spdlog::error("{}", e.what());
            summary.failures.push_back({item.frame.frame_id, e.what()});
        }
    };

    while (true) {
        std::optional<SourcedFrame> next;
        try {
            next = frames.next();
        } catch (const LoadError& e) {
            while (!window.empty()) drain_one();
            ++summary.frames;
            spdlog::error("{}", e.what());
            summary.failures.push_back({e.path().stem().string(), e.what()});
            continue;
        }
        if (!next) {
            break;
        }
        if (window.size() >= workers) {
            drain_one();
        }
        window.push_back(InFlight{std::move(next->frame), {}});
        // push_back on a deque keeps references to existing elements valid,
        // so this pointer lives until the entry is drained.
        const Frame* frame = &window.back().frame;
        const auto launch = workers == 1 ? std::launch::deferred : std::launch::async;
        window.back().result = std::async(launch, [frame, &detector, &classifier, &config] {
            return process_frame(*frame, detector, classifier, config);
        });
    }
    while (!window.empty()) drain_one();
    return summary;
}

namespace {

cv::Scalar to_scalar(const std::uint8_t (&color)[3]) {
    return {static_cast<double>(color[0]), static_cast<double>(color[1]), static_cast<double>(color[2])};
}

cv::Rect to_rect(const BoundingBox& box, FrameDims dims) {
    const PixelWindow w = pixel_window(box, dims);
    return {w.x0, w.y0, std::max(1, w.width()), std::max(1, w.height())};
}

}  // namespace

Image render_annotations(const Image& image, const AnnotatedFrame& annotated, const RenderStyle& style) {
    Image out = image;
    cv::Mat canvas(out.height(), out.width(), CV_8UC3, out.pixels().data());
    for (const auto& a : annotated.annotations) {
        const cv::Scalar color = to_scalar(a.label == Label::rider ? kRiderColor : kPersonColor);
        const cv::Rect rect = to_rect(a.box, out.dims());
        cv::rectangle(canvas, rect.tl(), rect.br() - cv::Point(1, 1), color, style.thickness, cv::LINE_8);
        if (style.draw_extended_box) {
            const cv::Rect ext = to_rect(a.extended_box, out.dims());
            cv::rectangle(canvas, ext.tl(), ext.br() - cv::Point(1, 1), color, 1, cv::LINE_8);
        }
        if (style.draw_scores) {
            // Text stays inside the box so the outline is never broken.
            const int inset = style.thickness;
            const cv::Rect interior =
                cv::Rect(rect.x + inset, rect.y + inset, rect.width - 2 * inset, rect.height - 2 * inset) &
                cv::Rect(0, 0, out.width(), out.height());
            if (interior.width > 0 && interior.height > 0) {
                const auto text = fmt::format("{:.2f}", a.score);
                const double scale = 0.4;
                int baseline = 0;
                const cv::Size size = cv::getTextSize(text, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &baseline);
                cv::Mat roi = canvas(interior);
                const cv::Rect chip(0, 0, size.width + 2, size.height + baseline + 2);
                cv::rectangle(roi, chip, cv::Scalar(0, 0, 0), cv::FILLED, cv::LINE_8);
                cv::putText(roi, text, cv::Point(1, size.height + 1), cv::FONT_HERSHEY_SIMPLEX, scale,
                            cv::Scalar(255, 255, 255), 1, cv::LINE_8);
            }
        }
    }
    return out;
}

nlohmann::json prediction_line(const AnnotatedFrame& annotated) {
    auto objects = nlohmann::json::array();
    for (const auto& a : annotated.annotations) {
        objects.push_back({{"box", a.box},
                           {"extended_box", a.extended_box},
                           {"label", to_string(a.label)},
                           {"score", a.score},
                           {"confidence", a.confidence}});
    }
    return {{"frame_id", annotated.frame_id}, {"objects", objects}};
}

JsonlPredictionSink::JsonlPredictionSink(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::trunc);
    if (!out_) {
        throw LoadError(path, "cannot open for writing");
    }
}

void JsonlPredictionSink::consume(const Frame&, const AnnotatedFrame& annotated) {
    out_ << prediction_line(annotated).dump() << '\n';
    out_.flush();
    if (!out_) {
        throw LoadError(path_, "write failed");
    }
}

PngAnnotationSink::PngAnnotationSink(std::filesystem::path dir, RenderStyle style)
    : dir_(std::move(dir)), style_(style) {
    std::filesystem::create_directories(dir_);
}

void PngAnnotationSink::consume(const Frame& frame, const AnnotatedFrame& annotated) {
    const auto path = dir_ / (annotated.frame_id + ".png");
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    save_png(path, render_annotations(frame.image, annotated, style_));
}

void FanoutSink::consume(const Frame& frame, const AnnotatedFrame& annotated) {
    for (auto* sink : sinks_) {
        sink->consume(frame, annotated);
    }
}

}  // namespace rider_scope
