/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "commands.hpp"

#include "rider_scope/backbone.hpp"
#include "rider_scope/classifier.hpp"
#include "rider_scope/dataset.hpp"
#include "rider_scope/detector.hpp"
#include "rider_scope/errors.hpp"
#include "rider_scope/io_util.hpp"
#include "rider_scope/label_service.hpp"
#include "rider_scope/metrics.hpp"
#include "rider_scope/pipeline.hpp"
#include "rider_scope/trainer.hpp"

#include <csignal>
#include <iostream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <pthread.h>
#include <spdlog/spdlog.h>

namespace rider_scope::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DetectorOptions {
    std::string backend = "replay";
    std::string replay;
    std::string weights;
    std::string network_config;
    double confidence = 0.5;
    double nms = 0.45;

    DetectorConfig config() const {
        DetectorConfig c;
        c.backend = parse_backend_kind(backend);
        c.replay_path = replay;
        c.weights_path = weights;
        c.network_config_path = network_config;
        c.confidence_threshold = confidence;
        c.nms_threshold = nms;
        return c;
    }
};

void add_detector_options(CLI::App* sub, DetectorOptions& o) {
    sub->add_option("--detector", o.backend, "Detector backend")
        ->check(CLI::IsMember({"replay", "pretrained_yolo"}))
        ->capture_default_str();
    sub->add_option("--replay", o.replay, "Recorded detections (JSON Lines) for the replay backend")
        ->check(CLI::ExistingFile);
    sub->add_option("--weights", o.weights, "Darknet weights for the pretrained_yolo backend")->check(CLI::ExistingFile);
    sub->add_option("--network-config", o.network_config, "Darknet .cfg (defaults to the weights path with .cfg)")
        ->check(CLI::ExistingFile);
    sub->add_option("--confidence", o.confidence, "Minimum person confidence")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->add_option("--nms", o.nms, "Non-maximum suppression IoU")->check(CLI::Range(0.0, 1.0))->capture_default_str();
}

json option_values(const CLI::App& scope) {
    json values = json::object();
    for (const auto* opt : scope.get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty() || opt == scope.get_help_ptr() || opt == scope.get_config_ptr() ||
            opt == scope.get_version_ptr()) {
            continue;
        }
        if (opt->count() == 0) {
            values[names.front()] = opt->get_default_str();
            continue;
        }
        const auto results = opt->reduced_results();
        values[names.front()] = results.size() == 1 ? json(results.front()) : json(results);
    }
    return values;
}

/// The subcommand's effective configuration, for provenance records.
json effective_config(const CLI::App& app, const CLI::App& sub) {
    return {{"command", sub.get_name()}, {"global", option_values(app)}, {"options", option_values(sub)}};
}

void print_json(const json& value) {
    std::cout << value.dump(2) << std::endl;
}

}  // namespace

struct CommandSet::State {
    std::uint64_t seed = 0;
    std::string log_level = "info";

    CLI::App* detect = nullptr;
    CLI::App* harvest = nullptr;
    CLI::App* import_web = nullptr;
    CLI::App* label = nullptr;
    CLI::App* build_manifest = nullptr;
    CLI::App* train = nullptr;
    CLI::App* suggest = nullptr;
    CLI::App* eval = nullptr;
    CLI::App* serve = nullptr;

    struct {
        std::string frames;
        std::string output;
        std::string checkpoint;
        DetectorOptions detector;
        double threshold = kDefaultDecisionThreshold;
        std::size_t workers = 1;
        bool render = true;
        bool draw_extended = false;
    } detect_opts;

    struct {
        std::string frames;
        std::string store;
        std::string interaction = "default";
        DetectorOptions detector;
    } harvest_opts;

    struct {
        std::string images;
        std::string label;
        std::string store;
        std::string reviewer = "web-import";
    } import_opts;

    struct {
        std::string store;
        std::string segment;
        std::string label;
        std::string reviewer = "cli";
    } label_opts;

    struct {
        std::string store;
        std::string output;
        bool balance = true;
        double train_fraction = 0.85;
    } manifest_opts;

    struct {
        std::string manifest;
        std::string output;
        TrainConfig config;
        std::string backbone = "projection";
        std::string backbone_model;
        std::size_t backbone_layers = ProjectionBackbone::kDefaultLayers;
    } train_opts;

    struct {
        std::string store;
        std::string checkpoint;
        std::string output;
        bool unlabeled_only = false;
    } suggest_opts;

    struct {
        std::string scores;
        std::string predictions;
        std::string ground_truth;
        std::vector<std::size_t> counts;
        double threshold = kDefaultDecisionThreshold;
        double iou = kDefaultMatchIou;
        std::string output;
    } eval_opts;

    struct {
        std::string store;
        std::string host = "127.0.0.1";
        int port = 8080;
        int lease_seconds = 300;
        std::string ui_dir;
        std::string suggestions;
        std::string order = "most_confident_first";
        std::string manifest;
    } serve_opts;
};

CommandSet::CommandSet(CLI::App& app) : app_(app), state_(new State) {
    State& s = *state_;
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML configuration file; one [section] per subcommand, flags take precedence");
    app.add_option("--seed", s.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--log-level", s.log_level, "Logging verbosity")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
        ->capture_default_str();

    {
        auto* sub = s.detect = app.add_subcommand("detect", "Run detection and rider classification over a frame directory");
        auto& o = s.detect_opts;
        sub->add_option("--frames", o.frames, "Directory of frame images")->required()->check(CLI::ExistingDirectory);
        sub->add_option("--output", o.output, "Output directory")->required();
        sub->add_option("--checkpoint", o.checkpoint, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
        add_detector_options(sub, o.detector);
        sub->add_option("--threshold", o.threshold, "Rider decision threshold")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        sub->add_option("--workers", o.workers, "Frames processed concurrently")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_flag("--render,!--no-render", o.render, "Write annotated frames")->default_str("true");
        sub->add_flag("--draw-extended-box", o.draw_extended, "Also draw the extended region")->default_str("false");
    }
    {
        auto* sub = s.harvest = app.add_subcommand("harvest", "Stage unlabeled person crops from frames into a store");
        auto& o = s.harvest_opts;
        sub->add_option("--frames", o.frames, "Directory of frames; first-level subdirectories name interactions")
            ->required()
            ->check(CLI::ExistingDirectory);
        sub->add_option("--store", o.store, "Segment store directory")->required();
        sub->add_option("--interaction", o.interaction, "Interaction id for frames at the top level")
            ->capture_default_str();
        add_detector_options(sub, o.detector);
    }
    {
        auto* sub = s.import_web = app.add_subcommand("import-web", "Import pre-labeled images into a store");
        auto& o = s.import_opts;
        sub->add_option("--images", o.images, "Directory of images")->required()->check(CLI::ExistingDirectory);
        sub->add_option("--label", o.label, "Label for every image")
            ->required()
            ->check(CLI::IsMember({"rider", "non_rider"}));
        sub->add_option("--store", o.store, "Segment store directory")->required();
        sub->add_option("--reviewer", o.reviewer, "Recorded as the labeler")->capture_default_str();
    }
    {
        auto* sub = s.label = app.add_subcommand("label", "Record one label decision");
        auto& o = s.label_opts;
        sub->add_option("--store", o.store, "Segment store directory")->required()->check(CLI::ExistingDirectory);
        sub->add_option("--segment", o.segment, "Segment id")->required();
        sub->add_option("--label", o.label, "Decision")
            ->required()
            ->check(CLI::IsMember({"rider", "non_rider"}));
        sub->add_option("--reviewer", o.reviewer, "Reviewer id")->capture_default_str();
    }
    {
        auto* sub = s.build_manifest = app.add_subcommand("build-manifest", "Write a balanced, split training manifest");
        auto& o = s.manifest_opts;
        sub->add_option("--store", o.store, "Segment store directory")->required()->check(CLI::ExistingDirectory);
        sub->add_option("--output", o.output, "Manifest path (default <store>/manifest.jsonl)");
        sub->add_flag("--balance,!--no-balance", o.balance, "Undersample the majority class")->default_str("true");
        sub->add_option("--train-fraction", o.train_fraction, "Fraction of interactions used for training")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
    }
    {
        auto* sub = s.train = app.add_subcommand("train", "Two-phase training from a manifest");
        auto& o = s.train_opts;
        auto& c = o.config;
        sub->add_option("--manifest", o.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
        sub->add_option("--output", o.output, "Directory for checkpoints and the report")->required();
        sub->add_option("--batch-size", c.batch_size, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--frozen-epochs", c.frozen_epochs, "Epochs with the backbone frozen")->capture_default_str();
        sub->add_option("--finetune-epochs", c.finetune_epochs, "Fine-tuning epochs")->capture_default_str();
        sub->add_option("--lr-frozen", c.lr_frozen, "Adam learning rate, frozen phase")->capture_default_str();
        sub->add_option("--lr-finetune", c.lr_finetune, "Adam learning rate, fine-tuning")->capture_default_str();
        sub->add_option("--unfreeze-from-layer", c.unfreeze_from_layer, "First backbone layer tuned in fine-tuning")
            ->capture_default_str();
        sub->add_option("--dropout", c.dropout_rate, "Dropout before the dense head")->capture_default_str();
        sub->add_option("--threshold", c.decision_threshold, "Decision threshold for reported accuracy")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        sub->add_option("--backbone", o.backbone, "Feature extractor")
            ->check(CLI::IsMember({"projection", "dnn"}))
            ->capture_default_str();
        sub->add_option("--backbone-model", o.backbone_model, "Model file for the dnn backbone")
            ->check(CLI::ExistingFile);
        sub->add_option("--backbone-layers", o.backbone_layers, "Layer count of the projection backbone")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    }
    {
        auto* sub = s.suggest = app.add_subcommand("suggest", "Score store segments with a checkpoint for triage");
        auto& o = s.suggest_opts;
        sub->add_option("--store", o.store, "Segment store directory")->required()->check(CLI::ExistingDirectory);
        sub->add_option("--checkpoint", o.checkpoint, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
        sub->add_option("--output", o.output, "Suggestions path (default <store>/suggestions.jsonl)");
        sub->add_flag("--unlabeled-only", o.unlabeled_only, "Skip segments that already carry a label")->default_str("false");
    }
    {
        auto* sub = s.eval = app.add_subcommand("eval", "Classification and pipeline metrics");
        auto& o = s.eval_opts;
        auto* scores = sub->add_option("--scores", o.scores, "Scored samples (JSON Lines)")->check(CLI::ExistingFile);
        auto* predictions =
            sub->add_option("--predictions", o.predictions, "Pipeline predictions (JSON Lines)")->check(CLI::ExistingFile);
        auto* truth = sub->add_option("--ground-truth", o.ground_truth, "Ground-truth annotations (JSON Lines)")
                          ->check(CLI::ExistingFile);
        auto* counts = sub->add_option("--counts", o.counts, "Raw confusion counts: tp fp tn fn")
                           ->expected(4)
                           ->delimiter(',');
        predictions->needs(truth);
        truth->needs(predictions);
        scores->excludes(predictions)->excludes(counts);
        counts->excludes(predictions);
        sub->add_option("--threshold", o.threshold, "Rider decision threshold for --scores")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        sub->add_option("--iou", o.iou, "Match IoU for --predictions")->check(CLI::Range(0.0, 1.0))->capture_default_str();
        sub->add_option("--output", o.output, "Also write the report as JSON");
    }
    {
        auto* sub = s.serve = app.add_subcommand("serve", "Run the labeling HTTP service");
        auto& o = s.serve_opts;
        sub->add_option("--store", o.store, "Segment store directory")->required();
        sub->add_option("--host", o.host, "Listen address")->capture_default_str();
        sub->add_option("--port", o.port, "Listen port (0 picks a free one)")
            ->check(CLI::Range(0, 65535))
            ->capture_default_str();
        sub->add_option("--lease", o.lease_seconds, "Lease duration in seconds")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_option("--ui-dir", o.ui_dir, "Built triage UI bundle")->check(CLI::ExistingDirectory);
        sub->add_option("--suggestions", o.suggestions, "Model suggestions (JSON Lines)")->check(CLI::ExistingFile);
        sub->add_option("--order", o.order, "Queue order when suggestions exist")
            ->check(CLI::IsMember({"most_confident_first", "most_uncertain_first"}))
            ->capture_default_str();
        sub->add_option("--manifest", o.manifest, "Where manifest builds are written");
    }
}

CommandSet::~CommandSet() {
    delete state_;
}

void CommandSet::bind_environment(CLI::App& app) {
    const auto env_name = [](const std::string& long_name) {
        std::string out = "RIDER_SCOPE_";
        for (const char ch : long_name) {
            out += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        }
        return out;
    };
    const auto bind = [&](CLI::App& scope) {
        for (auto* opt : scope.get_options()) {
            const auto& names = opt->get_lnames();
            if (names.empty() || opt->get_expected_max() == 0 || opt == scope.get_config_ptr() ||
                opt == scope.get_help_ptr()) {
                continue;
            }
            opt->envname(env_name(names.front()));
        }
    };
    bind(app);
    for (auto* sub : app.get_subcommands({})) {
        bind(*sub);
    }
}

void CommandSet::run_selected() {
    State& s = *state_;
    spdlog::set_level(spdlog::level::from_str(s.log_level));
    CLI::App* sub = app_.get_subcommands().front();

    if (sub == s.detect) {
        const auto& o = s.detect_opts;
        auto detector = load_detector(o.detector.config());
        const auto model = load_checkpoint(o.checkpoint);
        TransferClassifier classifier(model.backbone, model.head);

        const fs::path out_dir = o.output;
        fs::create_directories(out_dir);
        JsonlPredictionSink predictions(out_dir / "predictions.jsonl");
        std::optional<PngAnnotationSink> frames;
        FanoutSink sink;
        sink.add(predictions);
        if (o.render) {
            frames.emplace(out_dir / "frames", RenderStyle{o.draw_extended, true, 2});
            sink.add(*frames);
        }
        DirectoryFrameSource source(o.frames, "default");
        PipelineConfig config{o.threshold, o.workers};
        const auto summary = process_sequence(source, *detector, classifier, config, sink);

        auto failures = json::array();
        for (const auto& f : summary.failures) {
            failures.push_back({{"frame_id", f.frame_id}, {"message", f.message}});
        }
        const json result = {{"frames", summary.frames},
                             {"persons", summary.persons},
                             {"riders", summary.riders},
                             {"dropped_regions", summary.dropped_regions},
                             {"failures", failures},
                             {"predictions", (out_dir / "predictions.jsonl").string()}};
        write_file_atomic(out_dir / "run.json",
                          json{{"config", effective_config(app_, *sub)}, {"summary", result}}.dump(2) + "\n");
        print_json(result);
        return;
    }

    if (sub == s.harvest) {
        const auto& o = s.harvest_opts;
        auto detector = load_detector(o.detector.config());
        auto store = SegmentStore::open(o.store);
        DirectoryFrameSource source(o.frames, o.interaction);
        const auto summary = harvest_segments(source, *detector, *store);
        print_json({{"frames", summary.frames},
                    {"staged", summary.staged},
                    {"already_present", summary.already_present},
                    {"dropped_regions", summary.dropped_regions},
                    {"frame_errors", summary.frame_errors}});
        return;
    }

    if (sub == s.import_web) {
        const auto& o = s.import_opts;
        auto store = SegmentStore::open(o.store);
        const auto summary = import_web_images(o.images, parse_label(o.label), *store, o.reviewer);
        print_json({{"imported", summary.imported}, {"duplicates", summary.duplicates}, {"skipped", summary.skipped}});
        return;
    }

    if (sub == s.label) {
        const auto& o = s.label_opts;
        auto store = SegmentStore::open(o.store);
        const auto record = store->record_label(o.segment, parse_label(o.label), o.reviewer);
        print_json(record);
        return;
    }

    if (sub == s.build_manifest) {
        const auto& o = s.manifest_opts;
        auto store = SegmentStore::open(o.store);
        const fs::path out = o.output.empty() ? fs::path(o.store) / "manifest.jsonl" : fs::path(o.output);
        const auto manifest = build_manifest(*store, o.balance, o.train_fraction, s.seed);
        write_manifest(manifest, out, effective_config(app_, *sub));
        print_json({{"path", out.string()},
                    {"entries", manifest.entries.size()},
                    {"train", {{"rider", manifest.train_counts.rider}, {"non_rider", manifest.train_counts.non_rider}}},
                    {"test", {{"rider", manifest.test_counts.rider}, {"non_rider", manifest.test_counts.non_rider}}}});
        return;
    }

    if (sub == s.train) {
        const auto& o = s.train_opts;
        TrainConfig config = o.config;
        config.seed = s.seed;

        TrainableModel model;
        if (o.backbone == "dnn") {
            if (o.backbone_model.empty()) {
                throw InvalidArgument("--backbone dnn requires --backbone-model");
            }
            if (config.finetune_epochs > 0) {
                throw InvalidArgument("the dnn backbone is inference-only; set --finetune-epochs 0");
            }
            model.backbone = std::make_shared<DnnBackbone>(o.backbone_model);
            config.unfreeze_from_layer = 0;
        } else {
            model.backbone = std::make_shared<ProjectionBackbone>(s.seed, o.backbone_layers);
        }
        model.head = ClassifierHead::initialized(s.seed, config.dropout_rate);

        const auto manifest = read_manifest(o.manifest);
        const ManifestSamples train(manifest, Split::train);
        const ManifestSamples test(manifest, Split::test);
        const fs::path out_dir = o.output;
        fs::create_directories(out_dir);

        const auto report = train_two_phase(model, train, test.size() > 0 ? &test : nullptr, config, out_dir,
                                            [](const EpochRecord& r) {
                                                spdlog::info("{} epoch {}: loss {:.4f} acc {:.4f} test acc {:.4f}",
                                                             to_string(r.phase), r.epoch, r.train_loss,
                                                             r.train_accuracy, r.test_accuracy);
                                            });
        json out = {{"config", effective_config(app_, *sub)},
                    {"train_config", config},
                    {"train_samples", train.size()},
                    {"test_samples", test.size()},
                    {"report", report}};
        write_file_atomic(out_dir / "report.json", out.dump(2) + "\n");
        print_json({{"report", (out_dir / "report.json").string()},
                    {"epochs", report.epochs.size()},
                    {"checkpoints", report.checkpoints}});
        return;
    }

    if (sub == s.suggest) {
        const auto& o = s.suggest_opts;
        auto store = SegmentStore::open(o.store);
        const auto model = load_checkpoint(o.checkpoint);
        const TransferClassifier classifier(model.backbone, model.head);
        const auto snapshot = store->snapshot();

        std::string text;
        std::size_t scored = 0;
        CropBatch batch;
        std::vector<std::string> ids;
        const auto flush = [&] {
            if (batch.empty()) return;
            const auto scores = classifier.score_batch(batch);
            for (std::size_t i = 0; i < scores.size(); ++i) {
                text += json{{"segment_id", ids[i]}, {"score", scores[i]}}.dump() + "\n";
            }
            scored += scores.size();
            batch.clear();
            ids.clear();
        };
        for (const auto& r : snapshot->records) {
            if (o.unlabeled_only && r.label != Label::unlabeled) continue;
            batch.push_back(preprocess_crop(load_image(store->crop_file(r))));
            ids.push_back(r.segment_id);
            if (batch.size() == 32) flush();
        }
        flush();
        const fs::path out = o.output.empty() ? fs::path(o.store) / "suggestions.jsonl" : fs::path(o.output);
        write_file_atomic(out, text);
        print_json({{"path", out.string()}, {"scored", scored}});
        return;
    }

    if (sub == s.eval) {
        const auto& o = s.eval_opts;
        EvaluationReport report;
        if (!o.scores.empty()) {
            const auto samples = read_scores(o.scores);
            if (samples.empty()) {
                throw InvalidArgument("score file " + o.scores + " holds no samples");
            }
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& sample : samples) {
                scores.push_back(sample.score);
                labels.push_back(sample.label);
            }
            report = classification_report(confusion(scores, labels, o.threshold));
            const auto positives = std::count(labels.begin(), labels.end(), 1);
            if (positives > 0 && positives < static_cast<long>(labels.size())) {
                report.roc = roc_curve(scores, labels);
            }
        } else if (!o.predictions.empty()) {
            const auto predictions = read_predictions(o.predictions);
            const auto truth = read_ground_truth(o.ground_truth);
            if (predictions.empty()) {
                throw InvalidArgument("prediction file " + o.predictions + " holds no frames");
            }
            const auto pipeline = pipeline_report(predictions, truth, o.iou);
            report = classification_report(pipeline.detected_confusion);
            report.pipeline = pipeline;
        } else if (!o.counts.empty()) {
            report = classification_report({o.counts[0], o.counts[1], o.counts[2], o.counts[3]});
        } else {
            throw CLI::RequiredError("one of --scores, --predictions with --ground-truth, or --counts");
        }
        std::cout << format_report(report);
        if (!o.output.empty()) {
            json out = report;
            out["config"] = effective_config(app_, *sub);
            write_file_atomic(o.output, out.dump(2) + "\n");
        }
        return;
    }

    if (sub == s.serve) {
        const auto& o = s.serve_opts;
        LabelServiceConfig config;
        config.lease_duration = std::chrono::seconds(o.lease_seconds);
        config.order = parse_queue_order(o.order);
        config.ui_dir = o.ui_dir;
        config.manifest_path = o.manifest;
        if (!o.suggestions.empty()) {
            config.suggestions = read_suggestions(o.suggestions);
        }
        auto store = SegmentStore::open(o.store);

        sigset_t signals;
        sigemptyset(&signals);
        sigaddset(&signals, SIGINT);
        sigaddset(&signals, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &signals, nullptr);

        LabelServer server(store, config);
        const auto port = server.bind(o.host, o.port);
        if (!port) {
            throw std::runtime_error(fmt::format("cannot listen on {}:{} (port in use or not permitted)", o.host, o.port));
        }
        std::cout << json{{"listening", fmt::format("http://{}:{}", o.host, *port)}, {"port", *port}}.dump()
                  << std::endl;
        std::thread waiter([&server, signals] {
            int received = 0;
            sigwait(&signals, &received);
            spdlog::info("signal {} received, shutting down", received);
            server.stop();
        });
        server.run();
        // run() also returns if the server fails; wake the waiter so it can be joined.
        pthread_kill(waiter.native_handle(), SIGTERM);
        waiter.join();
        return;
    }
}

}  // namespace rider_scope::cli
