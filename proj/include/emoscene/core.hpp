// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain types shared by the whole pipeline: the 26-category emotion
// taxonomy, the valence/arousal/dominance conventions, and per-person
// annotation records. All types are immutable value records.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "emoscene/util.hpp"

namespace emoscene {

inline constexpr int kNumCategories = 26;
inline constexpr int kNumDims = 3;
inline constexpr int kRawDimMin = 1;
inline constexpr int kRawDimMax = 10;

struct EmotionCategory {
    int id;                 // 1..26, contiguous
    std::string_view name;
    std::string_view definition;
};

/// The fixed category taxonomy, in canonical order. Index i holds id i+1.
inline const std::array<EmotionCategory, kNumCategories>& category_taxonomy() {
    static const std::array<EmotionCategory, kNumCategories> table = {{
        {1, "Affection", "fond feelings; love; tenderness"},
        {2, "Anger", "intense displeasure or rage; furious; resentful"},
        {3, "Annoyance", "bothered by something or someone; irritated; impatient; frustrated"},
        {4, "Anticipation", "state of looking forward; hoping on or getting prepared for possible future events"},
        {5, "Aversion", "feeling disgust, dislike, repulsion; feeling hate"},
        {6, "Confidence", "feeling of being certain; conviction that an outcome will be favorable; encouraged; proud"},
        {7, "Disapproval", "feeling that something is wrong or reprehensible; contempt; hostile"},
        {8, "Disconnection", "feeling not interested in the main event of the surrounding; indifferent; bored; distracted"},
        {9, "Disquietment", "nervous; worried; upset; anxious; tense; pressured; alarmed"},
        {10, "Doubt/Confusion", "difficulty to understand or decide; thinking about different options"},
        {11, "Embarrassment", "feeling ashamed or guilty"},
        {12, "Engagement", "paying attention to something; absorbed into something; curious; interested"},
        {13, "Esteem", "feelings of favourable opinion or judgement; respect; admiration; gratefulness"},
        {14, "Excitement", "feeling enthusiasm; stimulated; energetic"},
        {15, "Fatigue", "weariness; tiredness; sleepy"},
        {16, "Fear", "feeling suspicious or afraid of danger, threat, evil or pain; horror"},
        {17, "Happiness", "feeling delighted; feeling enjoyment or amusement"},
        {18, "Pain", "physical suffering"},
        {19, "Peace", "well being and relaxed; no worry; having positive thoughts or sensations; satisfied"},
        {20, "Pleasure", "feeling of delight in the senses"},
        {21, "Sadness", "feeling unhappy, sorrow, disappointed, or discouraged"},
        {22, "Sensitivity", "feeling of being physically or emotionally wounded; feeling delicate or vulnerable"},
        {23, "Suffering", "psychological or emotional pain; distressed; anguished"},
        {24, "Surprise", "sudden discovery of something unexpected"},
        {25, "Sympathy", "state of sharing others' emotions, goals or troubles; supportive; compassionate"},
        {26, "Yearning", "strong desire to have something; jealous; envious; lust"},
    }};
    return table;
}

inline bool valid_category_id(int id) { return id >= 1 && id <= kNumCategories; }

inline std::string_view category_name(int id) {
    if (!valid_category_id(id)) throw Error("category id out of range: " + std::to_string(id));
    return category_taxonomy()[static_cast<std::size_t>(id - 1)].name;
}

/// id for an exact category name, or 0 if unknown.
inline int category_id(std::string_view name) {
    for (const auto& c : category_taxonomy())
        if (c.name == name) return c.id;
    return 0;
}

// ---------------------------------------------------------------------------
// Continuous dimensions

/// One valence/arousal/dominance triple. Raw annotations are integers in
/// [1,10]; the normalized scale maps that range onto [0,1].
struct ContinuousDims {
    double valence = 0.0;
    double arousal = 0.0;
    double dominance = 0.0;

    double operator[](int k) const {
        return k == 0 ? valence : (k == 1 ? arousal : dominance);
    }
    double& operator[](int k) {
        return k == 0 ? valence : (k == 1 ? arousal : dominance);
    }

    bool operator==(const ContinuousDims&) const = default;
};

inline constexpr std::array<std::string_view, kNumDims> kDimNames = {"valence", "arousal", "dominance"};

inline double normalize_dim(double raw) { return (raw - 1.0) / 9.0; }
inline double denormalize_dim(double normalized) { return normalized * 9.0 + 1.0; }

inline bool valid_raw_dim(double v) {
    return v == std::floor(v) && v >= kRawDimMin && v <= kRawDimMax;
}

// ---------------------------------------------------------------------------
// Annotation records

/// One annotator's answer for one person. `dims` is present only when the
/// annotator also covered the continuous-dimension task. `valid` is cleared
/// by control-image filtering; invalid responses never enter aggregates.
struct AnnotatorResponse {
    std::string annotator_id;
    std::set<int> categories;   // category ids, nonempty for a valid response
    std::optional<ContinuousDims> dims;  // raw 1..10 values
    bool valid = true;

    bool operator==(const AnnotatorResponse&) const = default;
};

struct BBox {
    int x = 0, y = 0, width = 0, height = 0;
    bool operator==(const BBox&) const = default;
};

enum class Gender { male, female, unknown };
enum class AgeGroup { child, teenager, adult, unknown };

inline std::string to_string(Gender g) {
    switch (g) {
        case Gender::male: return "male";
        case Gender::female: return "female";
        default: return "unknown";
    }
}

inline std::string to_string(AgeGroup a) {
    switch (a) {
        case AgeGroup::child: return "child";
        case AgeGroup::teenager: return "teenager";
        case AgeGroup::adult: return "adult";
        default: return "unknown";
    }
}

inline Gender gender_from_string(const std::string& s) {
    if (s == "male") return Gender::male;
    if (s == "female") return Gender::female;
    if (s == "unknown") return Gender::unknown;
    throw Error("unknown gender value: " + s);
}

inline AgeGroup age_group_from_string(const std::string& s) {
    if (s == "child") return AgeGroup::child;
    if (s == "teenager") return AgeGroup::teenager;
    if (s == "adult") return AgeGroup::adult;
    if (s == "unknown") return AgeGroup::unknown;
    throw Error("unknown age group value: " + s);
}

/// One annotated person: where they are in their image, who said what about
/// them, and coarse demographics.
struct PersonAnnotation {
    std::string person_id;
    std::string image_id;
    BBox bbox;
    std::vector<AnnotatorResponse> responses;
    Gender gender = Gender::unknown;
    AgeGroup age_group = AgeGroup::unknown;

    bool operator==(const PersonAnnotation&) const = default;

    std::size_t valid_response_count() const {
        std::size_t n = 0;
        for (const auto& r : responses)
            if (r.valid) ++n;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Aggregated ground truth

/// Aggregated label for one person. `discrete[i]` refers to category id i+1
/// and is either {0,1} or a selection rate in [0,1] under the fraction
/// policy. `continuous` is on the normalized [0,1] scale; all three entries
/// are NaN when no valid response carried dimension annotations.
struct EmotionLabel {
    std::array<double, kNumCategories> discrete{};
    std::array<double, kNumDims> continuous{};

    bool has_continuous() const { return std::isfinite(continuous[0]); }
};

enum class AggregationPolicy { Union, Majority, Fraction };

inline AggregationPolicy aggregation_policy_from_string(const std::string& s) {
    if (s == "union") return AggregationPolicy::Union;
    if (s == "majority") return AggregationPolicy::Majority;
    if (s == "fraction") return AggregationPolicy::Fraction;
    throw Error("unknown aggregation policy: " + s);
}

inline std::string to_string(AggregationPolicy p) {
    switch (p) {
        case AggregationPolicy::Union: return "union";
        case AggregationPolicy::Majority: return "majority";
        default: return "fraction";
    }
}

/// Fuses the valid responses into one ground-truth label.
///
/// Discrete per category: union -> selected by at least one valid response;
/// majority -> selected by strictly more than half; fraction -> the
/// selection rate. Continuous: arithmetic mean of the raw dims over the
/// valid responses that carry them, then normalized (NaN when none do).
/// Permutation-invariant over responses.
inline EmotionLabel aggregate_responses(const std::vector<AnnotatorResponse>& responses,
                                        AggregationPolicy policy) {
    std::size_t n_valid = 0;
    std::array<std::size_t, kNumCategories> counts{};
    double dim_sum[kNumDims] = {0, 0, 0};
    std::size_t n_dims = 0;
    for (const auto& r : responses) {
        if (!r.valid) continue;
        ++n_valid;
        for (int id : r.categories) {
            if (!valid_category_id(id)) throw Error("category id out of range: " + std::to_string(id));
            ++counts[static_cast<std::size_t>(id - 1)];
        }
        if (r.dims) {
            ++n_dims;
            for (int k = 0; k < kNumDims; ++k) dim_sum[k] += (*r.dims)[k];
        }
    }
    if (n_valid == 0) throw Error("empty annotation");

    EmotionLabel label;
    for (int i = 0; i < kNumCategories; ++i) {
        double frac = static_cast<double>(counts[static_cast<std::size_t>(i)]) / static_cast<double>(n_valid);
        switch (policy) {
            case AggregationPolicy::Union: label.discrete[static_cast<std::size_t>(i)] = frac > 0.0 ? 1.0 : 0.0; break;
            case AggregationPolicy::Majority: label.discrete[static_cast<std::size_t>(i)] = frac > 0.5 ? 1.0 : 0.0; break;
            case AggregationPolicy::Fraction: label.discrete[static_cast<std::size_t>(i)] = frac; break;
        }
    }
    if (n_dims > 0) {
        for (int k = 0; k < kNumDims; ++k)
            label.continuous[static_cast<std::size_t>(k)] = normalize_dim(dim_sum[k] / static_cast<double>(n_dims));
    } else {
        label.continuous.fill(std::numeric_limits<double>::quiet_NaN());
    }
    return label;
}

} // namespace emoscene
