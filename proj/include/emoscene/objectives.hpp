// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives with analytic gradients.
//
//   * weighted Euclidean loss for the 26 discrete categories, with
//     inverse-log class weights w_i = 1 / ln(c + p_i) recomputed from the
//     category frequencies of every batch;
//   * margin Euclidean loss for the continuous dimensions, which zeroes the
//     error of any dimension already within `theta` of its target;
//   * Smooth L1 as an alternative continuous loss, generalized with a
//     threshold t (t = 1 gives the classic form);
//   * a combined objective L = lambda_disc * L_disc + lambda_cont * L_cont
//     averaged over the batch.
//
// All gradients are with respect to the predictions.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "emoscene/core.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

struct LossResult {
    double value = 0.0;
    std::vector<double> grad;  // dL/dpred, same length as pred
};

// ---------------------------------------------------------------------------
// Discrete: weighted Euclidean with per-batch inverse-log weights

/// w_i = 1 / ln(c + p_i) where p_i is the fraction of batch samples whose
/// target marks category i as present. Requires c > 1 so the weight stays
/// finite and positive even for categories absent from the batch.
inline std::array<double, kNumCategories> discrete_weights(
    const std::vector<std::array<double, kNumCategories>>& targets, double c) {
    if (c <= 1.0) throw Error("discrete_weights: c must be > 1");
    if (targets.empty()) throw Error("discrete_weights: empty batch");
    std::array<double, kNumCategories> w{};
    const double n = static_cast<double>(targets.size());
    for (int i = 0; i < kNumCategories; ++i) {
        double present = 0.0;
        for (const auto& t : targets) present += t[static_cast<std::size_t>(i)] > 0.0 ? 1.0 : 0.0;
        w[static_cast<std::size_t>(i)] = 1.0 / std::log(c + present / n);
    }
    return w;
}

/// L = sum_i w_i (pred_i - target_i)^2, gradient 2 w_i (pred_i - target_i).
inline LossResult weighted_euclidean(const std::vector<double>& pred, const std::vector<double>& target,
                                     const std::vector<double>& weights) {
    if (pred.size() != target.size() || pred.size() != weights.size())
        throw Error("weighted_euclidean: size mismatch");
    LossResult r;
    r.grad.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        r.value += weights[i] * d * d;
        r.grad[i] = 2.0 * weights[i] * d;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Continuous: margin Euclidean

/// L = sum_k v_k (pred_k - target_k)^2 with v_k = 0 when |pred_k - target_k|
/// is below `theta` and 1 otherwise: errors inside the margin cost nothing.
inline LossResult margin_euclidean(const std::vector<double>& pred, const std::vector<double>& target,
                                   double theta) {
    if (pred.size() != target.size()) throw Error("margin_euclidean: size mismatch");
    if (theta < 0.0) throw Error("margin_euclidean: theta must be >= 0");
    LossResult r;
    r.grad.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        if (std::abs(d) < theta) {
            r.grad[i] = 0.0;
        } else {
            r.value += d * d;
            r.grad[i] = 2.0 * d;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Continuous: Smooth L1

/// Per element: 0.5 x^2 / t for |x| < t, |x| - 0.5 t otherwise (x = pred -
/// target). At t = 1 this is the classic Smooth L1 with its knee of 0.5 at
/// |x| = 1. The two pieces meet with matching value and slope.
inline LossResult smooth_l1(const std::vector<double>& pred, const std::vector<double>& target,
                            double t = 1.0) {
    if (pred.size() != target.size()) throw Error("smooth_l1: size mismatch");
    if (t <= 0.0) throw Error("smooth_l1: t must be > 0");
    LossResult r;
    r.grad.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double x = pred[i] - target[i];
        if (std::abs(x) < t) {
            r.value += 0.5 * x * x / t;
            r.grad[i] = x / t;
        } else {
            r.value += std::abs(x) - 0.5 * t;
            r.grad[i] = x > 0.0 ? 1.0 : -1.0;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Combined batch objective

enum class ContinuousLossKind { margin_euclidean, smooth_l1 };

inline ContinuousLossKind continuous_loss_from_string(const std::string& s) {
    if (s == "margin_euclidean") return ContinuousLossKind::margin_euclidean;
    if (s == "smooth_l1") return ContinuousLossKind::smooth_l1;
    throw Error("unknown continuous loss '" + s + "'");
}

inline std::string to_string(ContinuousLossKind k) {
    return k == ContinuousLossKind::margin_euclidean ? "margin_euclidean" : "smooth_l1";
}

struct CombinedLossConfig {
    double lambda_disc = 1.0;
    double lambda_cont = 1.0;
    double weight_c = 1.2;     // discrete weight curvature, > 1
    double margin_theta = 0.1; // margin of the continuous loss
    double smooth_l1_t = 1.0;
    ContinuousLossKind continuous = ContinuousLossKind::margin_euclidean;
};

struct BatchLoss {
    double total = 0.0;
    double discrete = 0.0;    // mean per-sample discrete loss (unscaled)
    double continuous = 0.0;  // mean per-sample continuous loss (unscaled)
    std::array<double, kNumCategories> weights{};  // the w_i used
    // Gradients of `total` (scaling and batch mean included).
    std::vector<std::array<double, kNumCategories>> grad_disc;
    std::vector<std::array<double, kNumDims>> grad_cont;
};

/// Combined loss over a batch. Samples whose continuous target is absent
/// (NaN marker) are excluded from the continuous term; its mean runs over
/// the samples that do have one.
inline BatchLoss combined_batch_loss(const std::vector<std::array<double, kNumCategories>>& pred_disc,
                                     const std::vector<std::array<double, kNumDims>>& pred_cont,
                                     const std::vector<EmotionLabel>& targets,
                                     const CombinedLossConfig& cfg) {
    const std::size_t n = targets.size();
    if (n == 0) throw Error("combined_batch_loss: empty batch");
    if (pred_disc.size() != n || pred_cont.size() != n)
        throw Error("combined_batch_loss: prediction/target count mismatch");

    std::vector<std::array<double, kNumCategories>> target_disc(n);
    for (std::size_t s = 0; s < n; ++s) target_disc[s] = targets[s].discrete;
    BatchLoss out;
    out.weights = discrete_weights(target_disc, cfg.weight_c);
    out.grad_disc.assign(n, {});
    out.grad_cont.assign(n, {});

    const std::vector<double> w(out.weights.begin(), out.weights.end());
    std::size_t n_cont = 0;
    for (std::size_t s = 0; s < n; ++s)
        if (targets[s].has_continuous()) ++n_cont;

    for (std::size_t s = 0; s < n; ++s) {
        LossResult d = weighted_euclidean(
            std::vector<double>(pred_disc[s].begin(), pred_disc[s].end()),
            std::vector<double>(targets[s].discrete.begin(), targets[s].discrete.end()), w);
        out.discrete += d.value / static_cast<double>(n);
        for (int i = 0; i < kNumCategories; ++i)
            out.grad_disc[s][static_cast<std::size_t>(i)] =
                cfg.lambda_disc * d.grad[static_cast<std::size_t>(i)] / static_cast<double>(n);

        if (targets[s].has_continuous() && n_cont > 0) {
            const std::vector<double> pc(pred_cont[s].begin(), pred_cont[s].end());
            const std::vector<double> tc(targets[s].continuous.begin(), targets[s].continuous.end());
            LossResult c = cfg.continuous == ContinuousLossKind::margin_euclidean
                               ? margin_euclidean(pc, tc, cfg.margin_theta)
                               : smooth_l1(pc, tc, cfg.smooth_l1_t);
            out.continuous += c.value / static_cast<double>(n_cont);
            for (int k = 0; k < kNumDims; ++k)
                out.grad_cont[s][static_cast<std::size_t>(k)] =
                    cfg.lambda_cont * c.grad[static_cast<std::size_t>(k)] / static_cast<double>(n_cont);
        }
    }
    out.total = cfg.lambda_disc * out.discrete + cfg.lambda_cont * out.continuous;
    return out;
}

} // namespace emoscene
