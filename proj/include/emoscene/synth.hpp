// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic corpus generator. Every image encodes two kinds of
// signal with disjoint category pools:
//
//   * body categories (ids 1..13): painted as palette patches INSIDE the
//     person's bounding box, so a body crop fully determines them;
//   * context categories (ids 14..26): painted as palette patches in the
//     top/bottom margin strips OUTSIDE every bounding box, so they are
//     invisible to any model that only sees body crops.
//
// Continuous dimensions follow a fixed affine rule over the category set.
// The rule, the palette and the geometry are written into the manifest header
// so downstream tooling can introspect them. Generation is reproducible: the
// same spec always produces byte-identical images and manifest.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoscene/core.hpp"
#include "emoscene/corpus.hpp"
#include "emoscene/image.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

// ---------------------------------------------------------------------------
// Fixed scene geometry (pixels)

namespace synthgeom {
inline constexpr int kImageSize = 64;       // square images
inline constexpr int kStrip = 12;           // top/bottom context strips
inline constexpr int kBoxWidth = 32;        // person box; two fit side by side
inline constexpr int kBoxHeight = 38;
inline constexpr int kBoxY = 13;            // inside the middle band
inline constexpr int kBodyPatch = 7;        // body patches, 4x4 slot grid
inline constexpr int kContextPatch = 8;     // context patches, 7 slots per strip
} // namespace synthgeom

inline constexpr int kBodyPoolSize = 13;

inline bool is_body_category(int id) { return id >= 1 && id <= kBodyPoolSize; }
inline bool is_context_category(int id) { return id > kBodyPoolSize && id <= kNumCategories; }

/// The generator's category pools as id sets (1..13 and 14..26).
inline std::set<int> synth_body_pool() {
    std::set<int> s;
    for (int id = 1; id <= kBodyPoolSize; ++id) s.insert(id);
    return s;
}
inline std::set<int> synth_context_pool() {
    std::set<int> s;
    for (int id = kBodyPoolSize + 1; id <= kNumCategories; ++id) s.insert(id);
    return s;
}

/// Saturated palette color for a category: 26 evenly spaced hues at full
/// saturation, so palette pixels are never confusable with the grayscale
/// background.
inline std::array<std::uint8_t, 3> category_color(int id) {
    if (!valid_category_id(id)) throw Error("category_color: bad category id " + std::to_string(id));
    const double h = 6.0 * (id - 1) / kNumCategories;  // sector in [0, 6)
    const int sector = static_cast<int>(h);
    const double f = h - sector;
    const auto b = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
    const std::uint8_t p = 0, q = b(1.0 - f), t = b(f), v = 255;
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

/// Top-left corner of a body category's patch, relative to its bounding box.
inline std::pair<int, int> body_slot(int id) {
    if (!is_body_category(id)) throw Error("body_slot: not a body category: " + std::to_string(id));
    const int i = id - 1;
    return {1 + 8 * (i % 4), 1 + 9 * (i / 4)};
}

/// Top-left corner of a context category's patch in image coordinates.
inline std::pair<int, int> context_slot(int id) {
    if (!is_context_category(id)) throw Error("context_slot: not a context category: " + std::to_string(id));
    const int i = id - kBodyPoolSize - 1;  // 0..12
    const int x = 1 + 9 * (i % 7);
    const int y = i < 7 ? 2 : synthgeom::kImageSize - synthgeom::kStrip + 2;
    return {x, y};
}

/// Deterministic per-category contribution of each category to the raw
/// (1..10) dimension values. Chosen so that both pools move all three
/// dimensions and sums stay within range for small category sets.
inline ContinuousDims dim_deltas(int id) {
    if (!valid_category_id(id)) throw Error("dim_deltas: bad category id " + std::to_string(id));
    return ContinuousDims{
        ((id * 7) % 13 - 6) / 3.0,
        ((id * 5) % 11 - 5) / 2.5,
        ((id * 3) % 7 - 3) / 1.5,
    };
}

/// Noise-free raw dimension values implied by a category set.
inline ContinuousDims true_dims_for(const std::set<int>& categories) {
    ContinuousDims out;
    for (int k = 0; k < kNumDims; ++k) {
        double v = 5.5;
        for (int c : categories) v += dim_deltas(c)[k];
        out[k] = std::min<double>(kRawDimMax, std::max<double>(kRawDimMin, std::floor(v + 0.5)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spec and generation

struct SynthSpec {
    int n_images = 200;
    int min_persons = 1;            // per image
    int max_persons = 2;            // at most 2 (boxes tile the middle band)
    int n_annotators = 4;
    double annotator_noise = 0.0;   // probability of a category/dim perturbation
    double p_two_body = 0.35;       // chance of a second body category
    double p_two_context = 0.35;    // chance of a second context category
    bool context_signal = true;     // false: no context categories at all (null-context control)
    std::array<double, 3> split_fractions{0.7, 0.1, 0.2};
    std::uint64_t seed = 1;
};

struct SynthTruth {
    std::set<int> body;     // categories encoded inside the box
    std::set<int> context;  // categories encoded outside every box
    std::set<int> all() const {
        std::set<int> u = body;
        u.insert(context.begin(), context.end());
        return u;
    }
};

struct SynthResult {
    Corpus corpus;                           // identical to what was written
    std::map<std::string, SynthTruth> truth; // person id -> ground truth
};

namespace detail {

inline void validate_spec(const SynthSpec& spec) {
    if (spec.n_images < 1) throw Error("synth: n_images must be >= 1");
    if (spec.min_persons < 1 || spec.max_persons > 2 || spec.min_persons > spec.max_persons)
        throw Error("synth: persons per image must satisfy 1 <= min <= max <= 2");
    if (spec.n_annotators < 1) throw Error("synth: n_annotators must be >= 1");
    if (spec.annotator_noise < 0.0 || spec.annotator_noise > 1.0)
        throw Error("synth: annotator_noise must be in [0, 1]");
}

inline nlohmann::json spec_meta(const SynthSpec& spec) {
    nlohmann::json palette = nlohmann::json::array();
    nlohmann::json deltas = nlohmann::json::array();
    for (int c = 1; c <= kNumCategories; ++c) {
        auto col = category_color(c);
        palette.push_back({col[0], col[1], col[2]});
        auto d = dim_deltas(c);
        deltas.push_back({d.valence, d.arousal, d.dominance});
    }
    return nlohmann::json{
        {"generator", "emoscene-synth"},
        {"seed", spec.seed},
        {"n_images", spec.n_images},
        {"n_annotators", spec.n_annotators},
        {"annotator_noise", spec.annotator_noise},
        {"context_signal", spec.context_signal},
        {"body_pool", {1, kBodyPoolSize}},
        {"context_pool", {kBodyPoolSize + 1, kNumCategories}},
        {"image_size", synthgeom::kImageSize},
        {"dim_base", 5.5},
        {"dim_deltas", deltas},
        {"palette", palette},
    };
}

} // namespace detail

/// Generate the corpus under `out_dir` (images/ plus manifest.jsonl) and
/// return it together with the per-person ground truth.
inline SynthResult generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    using namespace synthgeom;
    detail::validate_spec(spec);
    std::filesystem::create_directories(out_dir / "images");

    SynthResult result;
    result.corpus.root = out_dir;

    for (int idx = 0; idx < spec.n_images; ++idx) {
        auto rng = make_rng(stream_seed(spec.seed, static_cast<std::uint64_t>(idx)));
        std::uniform_int_distribution<int> gray_d(30, 90);
        std::uniform_int_distribution<int> body_cat_d(1, kBodyPoolSize);
        std::uniform_int_distribution<int> ctx_cat_d(kBodyPoolSize + 1, kNumCategories);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        char img_name[32];
        std::snprintf(img_name, sizeof img_name, "img_%05d", idx);
        const std::string image_id = img_name;

        Image img = make_image(kImageSize, kImageSize, 3, static_cast<std::uint8_t>(gray_d(rng)));
        // Gray distractor rectangles; never saturated, never in the strips.
        std::uniform_int_distribution<int> dx(0, kImageSize - 1), dlen(4, 16), dgray(20, 120);
        for (int d = 0; d < 6; ++d) {
            const auto g = static_cast<std::uint8_t>(dgray(rng));
            fill_rect(img, dx(rng), kStrip + dx(rng) % (kImageSize - 2 * kStrip), dlen(rng), dlen(rng) / 2, g, g, g);
        }

        // Context categories, shared by every person in the image.
        std::set<int> context;
        if (spec.context_signal) {
            context.insert(ctx_cat_d(rng));
            if (unit(rng) < spec.p_two_context) context.insert(ctx_cat_d(rng));
            for (int c : context) {
                const auto [x, y] = context_slot(c);
                const auto col = category_color(c);
                fill_rect(img, x, y, kContextPatch, kContextPatch, col[0], col[1], col[2]);
            }
        }

        std::uniform_int_distribution<int> persons_d(spec.min_persons, spec.max_persons);
        const int n_persons = persons_d(rng);
        std::uniform_int_distribution<int> side_d(0, 1);
        int first_side = side_d(rng);

        for (int p = 0; p < n_persons; ++p) {
            const int side = n_persons == 2 ? p : first_side;
            const BBox box{side * kBoxWidth, kBoxY, kBoxWidth, kBoxHeight};
            fill_rect(img, box.x, box.y, box.width, box.height, 140, 140, 140);

            std::set<int> body{body_cat_d(rng)};
            if (unit(rng) < spec.p_two_body) body.insert(body_cat_d(rng));
            for (int c : body) {
                const auto [sx, sy] = body_slot(c);
                const auto col = category_color(c);
                fill_rect(img, box.x + sx, box.y + sy, kBodyPatch, kBodyPatch, col[0], col[1], col[2]);
            }

            SynthTruth truth{body, context};
            const std::set<int> all_cats = truth.all();
            const ContinuousDims true_dims = true_dims_for(all_cats);

            PersonAnnotation person;
            person.person_id = image_id + "_p" + std::to_string(p);
            person.image_id = image_id;
            person.bbox = box;
            person.gender = unit(rng) < 0.66 ? Gender::male : Gender::female;
            const double age_roll = unit(rng);
            person.age_group = age_roll < 0.10   ? AgeGroup::child
                               : age_roll < 0.17 ? AgeGroup::teenager
                                                 : AgeGroup::adult;

            for (int a = 0; a < spec.n_annotators; ++a) {
                AnnotatorResponse r;
                char ann[16];
                std::snprintf(ann, sizeof ann, "ann%03d", a);
                r.annotator_id = ann;
                r.categories = all_cats;
                if (spec.annotator_noise > 0.0 && unit(rng) < spec.annotator_noise) {
                    if (r.categories.size() > 1 && unit(rng) < 0.5) {
                        auto it = r.categories.begin();
                        std::advance(it, static_cast<long>(rng() % r.categories.size()));
                        r.categories.erase(it);
                    } else {
                        std::uniform_int_distribution<int> any_cat(1, kNumCategories);
                        r.categories.insert(any_cat(rng));
                    }
                }
                ContinuousDims dims = true_dims;
                if (spec.annotator_noise > 0.0)
                    for (int k = 0; k < kNumDims; ++k)
                        if (unit(rng) < spec.annotator_noise) {
                            const double step = unit(rng) < 0.5 ? -1.0 : 1.0;
                            dims[k] = std::min<double>(kRawDimMax, std::max<double>(kRawDimMin, dims[k] + step));
                        }
                r.dims = dims;
                person.responses.push_back(std::move(r));
            }
            result.corpus.persons[person.person_id] = person;
            result.truth[person.person_id] = truth;
        }

        const std::string rel_path = "images/" + image_id + ".png";
        save_image(img, out_dir / rel_path);
        result.corpus.images[image_id] = ImageEntry{rel_path, kImageSize, kImageSize};
    }

    result.corpus = make_splits(result.corpus, spec.split_fractions, stream_seed(spec.seed, 0x73706c69)); // "spli" stream
    save_corpus(result.corpus, out_dir / "manifest.jsonl", {"meta " + detail::spec_meta(spec).dump()});
    return result;
}

// ---------------------------------------------------------------------------
// Oracle decoders (used by tests to prove where the signal lives)

namespace detail {
inline bool patch_matches(const Image& img, int x, int y, int size, const std::array<std::uint8_t, 3>& col) {
    const int cx = x + size / 2, cy = y + size / 2;
    if (cx < 0 || cy < 0 || cx >= img.width || cy >= img.height) return false;
    return img.at(cx, cy, 0) == col[0] && img.at(cx, cy, 1) == col[1] && img.at(cx, cy, 2) == col[2];
}
} // namespace detail

/// Body categories readable from a body crop (the image cropped to the box).
inline std::set<int> decode_body_categories(const Image& body_crop) {
    std::set<int> out;
    for (int c = 1; c <= kBodyPoolSize; ++c) {
        const auto [sx, sy] = body_slot(c);
        if (detail::patch_matches(body_crop, sx, sy, synthgeom::kBodyPatch, category_color(c))) out.insert(c);
    }
    return out;
}

/// Context categories readable from the full image.
inline std::set<int> decode_context_categories(const Image& full_image) {
    std::set<int> out;
    for (int c = kBodyPoolSize + 1; c <= kNumCategories; ++c) {
        const auto [sx, sy] = context_slot(c);
        if (detail::patch_matches(full_image, sx, sy, synthgeom::kContextPatch, category_color(c))) out.insert(c);
    }
    return out;
}

} // namespace emoscene
