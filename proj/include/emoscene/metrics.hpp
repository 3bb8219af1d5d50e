// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: per-category average precision and its mean over
// categories, average absolute error on the normalized dimension scale,
// precision = recall threshold calibration, and Jaccard overlap of label
// sets. Ranking is deterministic: descending score with the original sample
// order breaking ties.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "emoscene/core.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

/// Ranks: indices sorted by score descending; equal scores keep their
/// original relative order.
inline std::vector<std::size_t> ranking(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

/// Area under the precision-recall step curve,
/// AP = sum_k (R_k - R_{k-1}) P_k over the descending-score ranking.
/// Returns NaN when there is no positive sample (undefined).
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw Error("average_precision: size mismatch");
    if (scores.empty()) throw Error("average_precision: empty input");
    std::size_t npos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw Error("average_precision: labels must be 0 or 1");
        npos += static_cast<std::size_t>(l);
    }
    if (npos == 0) return std::numeric_limits<double>::quiet_NaN();

    const auto order = ranking(scores);
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        tp += static_cast<std::size_t>(labels[order[k]]);
        const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
        const double recall = static_cast<double>(tp) / static_cast<double>(npos);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

struct MeanApResult {
    double mean = std::numeric_limits<double>::quiet_NaN();
    std::array<double, kNumCategories> per_category{};  // NaN where undefined
    int n_defined = 0;
};

/// Mean AP over the categories that have at least one positive sample.
inline MeanApResult mean_average_precision(
    const std::vector<std::array<double, kNumCategories>>& scores,
    const std::vector<std::array<double, kNumCategories>>& truth) {
    if (scores.size() != truth.size()) throw Error("mean_average_precision: size mismatch");
    if (scores.empty()) throw Error("mean_average_precision: empty input");
    MeanApResult out;
    double sum = 0.0;
    for (int c = 0; c < kNumCategories; ++c) {
        std::vector<double> s(scores.size());
        std::vector<int> l(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            s[i] = scores[i][static_cast<std::size_t>(c)];
            l[i] = truth[i][static_cast<std::size_t>(c)] > 0.0 ? 1 : 0;
        }
        const double ap = average_precision(s, l);
        out.per_category[static_cast<std::size_t>(c)] = ap;
        if (!std::isnan(ap)) {
            sum += ap;
            ++out.n_defined;
        }
    }
    if (out.n_defined == 0) throw Error("mean_average_precision: no category has a positive sample");
    out.mean = sum / out.n_defined;
    return out;
}

struct AaeResult {
    double mean = std::numeric_limits<double>::quiet_NaN();
    std::array<double, kNumDims> per_dim{};
    std::size_t n_samples = 0;  // samples with a continuous target
};

/// Mean |prediction - target| per dimension on the normalized [0, 1] scale;
/// samples without a continuous target (NaN marker) are skipped.
inline AaeResult average_absolute_error(const std::vector<std::array<double, kNumDims>>& pred,
                                        const std::vector<std::array<double, kNumDims>>& target) {
    if (pred.size() != target.size()) throw Error("average_absolute_error: size mismatch");
    AaeResult out;
    out.per_dim.fill(0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!std::isfinite(target[i][0])) continue;
        ++out.n_samples;
        for (int k = 0; k < kNumDims; ++k)
            out.per_dim[static_cast<std::size_t>(k)] += std::abs(pred[i][static_cast<std::size_t>(k)] - target[i][static_cast<std::size_t>(k)]);
    }
    if (out.n_samples == 0) {
        out.per_dim.fill(std::numeric_limits<double>::quiet_NaN());
        return out;
    }
    double total = 0.0;
    for (auto& v : out.per_dim) {
        v /= static_cast<double>(out.n_samples);
        total += v;
    }
    out.mean = total / kNumDims;
    return out;
}

struct ThresholdPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

/// Operating point where precision and recall come closest. Candidate
/// thresholds are the distinct scores (prediction = score >= threshold, so
/// every candidate yields at least one prediction). Ties in |P - R| resolve
/// to the larger threshold. Throws when no positive label exists.
inline ThresholdPoint pr_equal_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw Error("pr_equal_threshold: size mismatch");
    if (scores.empty()) throw Error("pr_equal_threshold: empty input");
    std::size_t npos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw Error("pr_equal_threshold: labels must be 0 or 1");
        npos += static_cast<std::size_t>(l);
    }
    if (npos == 0) throw Error("pr_equal_threshold: no positive labels");

    std::set<double, std::greater<double>> candidates(scores.begin(), scores.end());
    ThresholdPoint best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (double th : candidates) {  // descending: later candidates are smaller
        std::size_t tp = 0, predicted = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= th) {
                ++predicted;
                tp += static_cast<std::size_t>(labels[i]);
            }
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
        const double recall = static_cast<double>(tp) / static_cast<double>(npos);
        const double gap = std::abs(precision - recall);
        if (gap < best_gap) {  // strict: the first (largest) threshold wins ties
            best_gap = gap;
            best = {th, precision, recall};
        }
    }
    return best;
}

/// Per-category P = R thresholds over a validation matrix; categories
/// without positives get NaN.
inline std::array<double, kNumCategories> calibrate_thresholds(
    const std::vector<std::array<double, kNumCategories>>& scores,
    const std::vector<std::array<double, kNumCategories>>& truth) {
    if (scores.size() != truth.size()) throw Error("calibrate_thresholds: size mismatch");
    std::array<double, kNumCategories> out;
    out.fill(std::numeric_limits<double>::quiet_NaN());
    for (int c = 0; c < kNumCategories; ++c) {
        std::vector<double> s(scores.size());
        std::vector<int> l(scores.size());
        std::size_t npos = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            s[i] = scores[i][static_cast<std::size_t>(c)];
            l[i] = truth[i][static_cast<std::size_t>(c)] > 0.0 ? 1 : 0;
            npos += static_cast<std::size_t>(l[i]);
        }
        if (npos > 0) out[static_cast<std::size_t>(c)] = pr_equal_threshold(s, l).threshold;
    }
    return out;
}

/// |A intersect B| / |A union B|; two empty sets count as a perfect match.
inline double jaccard(const std::set<int>& a, const std::set<int>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (int x : a) inter += b.count(x);
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mean Jaccard between thresholded score vectors and true category sets.
/// Categories with NaN thresholds are never predicted.
inline double mean_jaccard(const std::vector<std::array<double, kNumCategories>>& scores,
                           const std::vector<std::array<double, kNumCategories>>& truth,
                           const std::array<double, kNumCategories>& thresholds) {
    if (scores.size() != truth.size()) throw Error("mean_jaccard: size mismatch");
    if (scores.empty()) throw Error("mean_jaccard: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::set<int> pred, truth_set;
        for (int c = 0; c < kNumCategories; ++c) {
            const double th = thresholds[static_cast<std::size_t>(c)];
            if (!std::isnan(th) && scores[i][static_cast<std::size_t>(c)] >= th) pred.insert(c + 1);
            if (truth[i][static_cast<std::size_t>(c)] > 0.0) truth_set.insert(c + 1);
        }
        sum += jaccard(pred, truth_set);
    }
    return sum / static_cast<double>(scores.size());
}

} // namespace emoscene
