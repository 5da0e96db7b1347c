/*
 * Copyright (C) 2026 The rider-scope Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include "support.hpp"

#include "rider_scope/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace rider_scope::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::string pattern = (fs::temp_directory_path() / "rider-scope-test-XXXXXX").string();
    if (!mkdtemp(pattern.data())) {
        throw std::runtime_error("mkdtemp failed");
    }
    path_ = pattern;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

Image solid_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image image(width, height);
    fill_rect(image, 0, 0, width, height, r, g, b);
    return image;
}

void fill_rect(Image& image, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int y = std::max(0, y0); y < std::min(image.height(), y1); ++y) {
        for (int x = std::max(0, x0); x < std::min(image.width(), x1); ++x) {
            image.at(x, y, 0) = r;
            image.at(x, y, 1) = g;
            image.at(x, y, 2) = b;
        }
    }
}

std::string ScriptedClassifier::key(const std::string& frame_id, const BoundingBox& box) {
    return fmt::format("{}|{},{},{},{}", frame_id, box.x, box.y, box.w, box.h);
}

void ScriptedClassifier::set(const std::string& frame_id, const BoundingBox& box, double score) {
    scores_[key(frame_id, box)] = score;
}

std::vector<double> ScriptedClassifier::score_batch(const CropBatch& batch) const {
    std::vector<double> out;
    for (const auto& crop : batch) {
        const auto it = scores_.find(key(crop.source_frame_id, crop.source_region.source));
        if (it == scores_.end()) {
            throw std::runtime_error("no scripted score for " + key(crop.source_frame_id, crop.source_region.source));
        }
        out.push_back(it->second);
    }
    return out;
}

double pair_count_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double credit = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) {
                credit += 1.0;
            } else if (scores[i] == scores[j]) {
                credit += 0.5;
            }
        }
    }
    return credit / pairs;
}

double pixel_count_iou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh) {
    const int x0 = std::min(ax, bx);
    const int y0 = std::min(ay, by);
    const int x1 = std::max(ax + aw, bx + bw);
    const int y1 = std::max(ay + ah, by + bh);
    long inter = 0;
    long uni = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const bool in_a = x >= ax && x < ax + aw && y >= ay && y < ay + ah;
            const bool in_b = x >= bx && x < bx + bw && y >= by && y < by + bh;
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::size_t best_from(std::size_t p, const std::vector<std::vector<bool>>& ok, std::vector<bool>& used) {
    if (p == ok.size()) {
        return 0;
    }
    std::size_t best = best_from(p + 1, ok, used);  // leave prediction p unmatched
    for (std::size_t t = 0; t < used.size(); ++t) {
        if (!used[t] && ok[p][t]) {
            used[t] = true;
            best = std::max(best, 1 + best_from(p + 1, ok, used));
            used[t] = false;
        }
    }
    return best;
}

}  // namespace

std::size_t exhaustive_max_matches(const std::vector<PredictedObject>& predictions,
                                   const std::vector<TruthObject>& truths, double threshold) {
    std::vector<std::vector<bool>> ok(predictions.size(), std::vector<bool>(truths.size()));
    for (std::size_t p = 0; p < predictions.size(); ++p) {
        for (std::size_t t = 0; t < truths.size(); ++t) {
            ok[p][t] = iou(predictions[p].box, truths[t].box) >= threshold;
        }
    }
    std::vector<bool> used(truths.size(), false);
    return best_from(0, ok, used);
}

Scene random_scene(std::mt19937_64& rng, std::size_t max_objects) {
    std::uniform_int_distribution<std::size_t> count(0, max_objects);
    std::uniform_real_distribution<double> width(20.0, 80.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);

    Scene scene;
    const std::size_t n_truth = count(rng);
    const std::size_t n_pred = count(rng);
    const auto person = [&] {
        const double w = width(rng);
        const double h = w * (1.8 + unit(rng) * 1.0);
        return BoundingBox{unit(rng) * (640.0 - w), unit(rng) * (480.0 - h), w, h};
    };
    for (std::size_t i = 0; i < n_truth; ++i) {
        scene.truths.push_back({person(), coin(rng) ? Label::rider : Label::non_rider});
    }
    for (std::size_t i = 0; i < n_pred; ++i) {
        PredictedObject p;
        if (!scene.truths.empty() && unit(rng) < 0.75) {
            const auto& t = scene.truths[static_cast<std::size_t>(unit(rng) * static_cast<double>(scene.truths.size()))];
            const double jitter = 0.25;
            p.box = {t.box.x + (unit(rng) - 0.5) * jitter * t.box.w, t.box.y + (unit(rng) - 0.5) * jitter * t.box.h,
                     t.box.w * (1.0 + (unit(rng) - 0.5) * jitter), t.box.h * (1.0 + (unit(rng) - 0.5) * jitter)};
        } else {
            p.box = person();
        }
        p.score = unit(rng);
        p.label = p.score >= 0.5 ? Label::rider : Label::non_rider;
        p.confidence = 0.5 + 0.5 * unit(rng);
        scene.predictions.push_back(p);
    }
    return scene;
}

std::vector<FixtureFrame> fixture_interaction() {
    const auto rider = Label::rider;
    const auto other = Label::non_rider;
    return {
        {"f01", {{{40, 60, 30, 80}, rider}, {{200, 50, 30, 80}, other}},
         {{{42, 61, 30, 80}, 0.90, 0.93}, {{201, 52, 29, 78}, 0.85, 0.12}}},
        {"f02", {{{48, 60, 30, 80}, rider}}, {{{50, 62, 30, 78}, 0.88, 0.91}}},
        {"f03", {}, {}},
        {"f04", {{{180, 70, 28, 75}, other}}, {{{181, 70, 28, 76}, 0.80, 0.20}}},
        {"f05", {{{150, 40, 30, 80}, rider}}, {}},
        {"f06", {{{60, 100, 30, 80}, other}}, {{{62, 101, 30, 80}, 0.75, 0.08}}},
        {"f07", {{{100, 80, 32, 84}, rider}, {{250, 60, 30, 80}, other}},
         {{{101, 82, 32, 82}, 0.92, 0.88}, {{249, 61, 31, 80}, 0.70, 0.30}}},
        {"f08", {}, {}},
        {"f09", {{{60, 40, 30, 80}, other}}, {{{61, 41, 30, 80}, 0.83, 0.05}}},
        {"f10", {}, {}},
        {"f11", {{{220, 90, 30, 80}, other}}, {{{222, 92, 30, 78}, 0.66, 0.41}}},
        {"f12", {{{120, 30, 30, 80}, other}}, {}},
    };
}

Frame fixture_image(const FixtureFrame& frame) {
    Image image = solid_image(320, 240, 90, 90, 90);
    for (const auto& t : frame.truth) {
        const int x = static_cast<int>(t.box.x);
        const int y = static_cast<int>(t.box.y);
        const int w = static_cast<int>(t.box.w);
        const int h = static_cast<int>(t.box.h);
        fill_rect(image, x, y, x + w, y + h, 40, 50, 120);
        if (t.label == Label::rider) {
            fill_rect(image, x - 5, y + h - 6, x + w + 5, y + h, 200, 60, 40);
        }
    }
    return {frame.frame_id, std::move(image)};
}

ScriptedClassifier fixture_classifier() {
    ScriptedClassifier classifier;
    for (const auto& f : fixture_interaction()) {
        for (const auto& d : f.detections) {
            classifier.set(f.frame_id, d.box, d.score);
        }
    }
    return classifier;
}

void write_fixture(const fs::path& dir) {
    std::string detections;
    std::string truth;
    fs::create_directories(dir / "frames");
    for (const auto& f : fixture_interaction()) {
        save_png(dir / "frames" / (f.frame_id + ".png"), fixture_image(f).image);
        auto dets = nlohmann::json::array();
        for (const auto& d : f.detections) {
            dets.push_back({{"box", d.box}, {"confidence", d.confidence}});
        }
        detections += nlohmann::json{{"frame_id", f.frame_id}, {"detections", dets}}.dump() + "\n";
        auto objects = nlohmann::json::array();
        for (const auto& t : f.truth) {
            objects.push_back({{"box", t.box}, {"label", to_string(t.label)}});
        }
        truth += nlohmann::json{{"frame_id", f.frame_id}, {"objects", objects}}.dump() + "\n";
    }
    write_text(dir / "detections.jsonl", detections);
    write_text(dir / "ground_truth.jsonl", truth);
}

Image toy_image(std::mt19937_64& rng, bool rider) {
    std::uniform_int_distribution<int> noise(-20, 20);
    std::uniform_int_distribution<int> shade(100, 130);
    const int width = 48;
    const int height = 96;
    Image image(width, height);
    const int body = shade(rng);
    const int band_top = height / 2;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < kChannels; ++c) {
                int base = body;
                if (y >= band_top) {
                    base = rider ? 230 - 40 * c : 25 + 20 * c;
                }
                image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(base + noise(rng), 0, 255));
            }
        }
    }
    return image;
}

std::vector<ToySample> toy_dataset(std::uint64_t seed, std::size_t interactions, std::size_t per_interaction) {
    std::mt19937_64 rng(seed);
    std::vector<ToySample> out;
    for (std::size_t i = 0; i < interactions; ++i) {
        for (std::size_t k = 0; k < per_interaction; ++k) {
            const bool rider = k % 2 == 0;
            out.push_back({preprocess_crop(toy_image(rng, rider)), rider ? 1 : 0, fmt::format("toy-{:02d}", i)});
        }
    }
    return out;
}

std::size_t count_color_components(const Image& image, const std::uint8_t (&rgb)[3]) {
    const int w = image.width();
    const int h = image.height();
    std::vector<int> seen(static_cast<std::size_t>(w) * h, 0);
    const auto match = [&](int x, int y) {
        return image.at(x, y, 0) == rgb[0] && image.at(x, y, 1) == rgb[1] && image.at(x, y, 2) == rgb[2];
    };
    std::size_t components = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (seen[static_cast<std::size_t>(y) * w + x] || !match(x, y)) continue;
            ++components;
            stack.push_back({x, y});
            seen[static_cast<std::size_t>(y) * w + x] = 1;
            while (!stack.empty()) {
                const auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx;
                        const int ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        auto& s = seen[static_cast<std::size_t>(ny) * w + nx];
                        if (!s && match(nx, ny)) {
                            s = 1;
                            stack.push_back({nx, ny});
                        }
                    }
                }
            }
        }
    }
    return components;
}

}  // namespace rider_scope::testing
