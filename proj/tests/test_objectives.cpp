// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "emoscene/objectives.hpp"

using namespace emoscene;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

// Central finite difference of a scalar loss with respect to pred[i].
template <typename F>
double fd_grad(F loss, std::vector<double> pred, std::size_t i, double h = 1e-6) {
    pred[i] += h;
    const double up = loss(pred);
    pred[i] -= 2 * h;
    const double down = loss(pred);
    return (up - down) / (2 * h);
}

} // namespace

TEST_CASE("discrete weights follow the inverse-log rule", "[objectives]") {
    std::vector<std::array<double, kNumCategories>> targets(2);
    targets[0][0] = 1.0;  // category 1 in both samples
    targets[1][0] = 1.0;
    targets[0][1] = 1.0;  // category 2 in one of two

    auto w = discrete_weights(targets, 1.2);
    CHECK_THAT(w[0], WithinAbs(1.0 / std::log(2.2), 1e-15));
    CHECK_THAT(w[0], WithinAbs(1.2682994037090303, 1e-12));  // frozen value
    CHECK_THAT(w[1], WithinAbs(1.0 / std::log(1.7), 1e-15));
    CHECK_THAT(w[1], WithinAbs(1.8845585360339894, 1e-12));
    // Absent categories get the ceiling weight 1/ln(c).
    CHECK_THAT(w[25], WithinAbs(1.0 / std::log(1.2), 1e-15));
    CHECK_THAT(w[25], WithinAbs(5.484814947747078, 1e-12));
    // Rarer categories never weigh less than common ones.
    CHECK(w[25] > w[1]);
    CHECK(w[1] > w[0]);

    CHECK_THROWS_WITH(discrete_weights(targets, 1.0), ContainsSubstring("c must be > 1"));
    CHECK_THROWS_WITH(discrete_weights({}, 1.2), ContainsSubstring("empty batch"));
}

TEST_CASE("weighted euclidean loss and gradient", "[objectives]") {
    std::vector<double> pred{0.8, 0.1}, target{1.0, 0.0}, w{2.0, 0.5};
    LossResult r = weighted_euclidean(pred, target, w);
    // 2*(0.2)^2 + 0.5*(0.1)^2 = 0.08 + 0.005
    CHECK_THAT(r.value, WithinAbs(0.085, 1e-15));
    CHECK_THAT(r.grad[0], WithinAbs(2.0 * 2.0 * -0.2, 1e-15));
    CHECK_THAT(r.grad[1], WithinAbs(2.0 * 0.5 * 0.1, 1e-15));

    auto rng = make_rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(26), t(26), ww(26);
        for (auto& v : p) v = u(rng);
        for (auto& v : t) v = u(rng);
        for (auto& v : ww) v = std::abs(u(rng)) + 0.1;
        LossResult res = weighted_euclidean(p, t, ww);
        auto f = [&](const std::vector<double>& q) { return weighted_euclidean(q, t, ww).value; };
        for (std::size_t i : {std::size_t{0}, std::size_t{13}, std::size_t{25}})
            CHECK_THAT(res.grad[i], WithinAbs(fd_grad(f, p, i), 1e-6));
    }
}

TEST_CASE("margin euclidean ignores errors inside the margin", "[objectives]") {
    SECTION("fixed cases") {
        LossResult inside = margin_euclidean({0.55}, {0.5}, 0.1);
        CHECK(inside.value == 0.0);
        CHECK(inside.grad[0] == 0.0);

        LossResult outside = margin_euclidean({0.7}, {0.5}, 0.1);
        CHECK_THAT(outside.value, WithinAbs(0.04, 1e-15));
        CHECK_THAT(outside.grad[0], WithinAbs(0.4, 1e-12));

        // Mixed: only the offending dimension contributes.
        LossResult mixed = margin_euclidean({0.5, 0.0, 1.0}, {0.45, 0.5, 1.05}, 0.1);
        CHECK_THAT(mixed.value, WithinAbs(0.25, 1e-15));
        CHECK(mixed.grad[0] == 0.0);
        CHECK_THAT(mixed.grad[1], WithinAbs(-1.0, 1e-12));
        CHECK(mixed.grad[2] == 0.0);
    }
    SECTION("zero margin reduces to plain Euclidean") {
        LossResult r = margin_euclidean({0.3, 0.9}, {0.1, 0.4}, 0.0);
        CHECK_THAT(r.value, WithinAbs(0.04 + 0.25, 1e-15));
    }
    SECTION("finite differences away from the margin boundary") {
        auto rng = make_rng(23);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double theta = 0.1;
        int checked = 0;
        for (int trial = 0; trial < 200 && checked < 60; ++trial) {
            std::vector<double> p(3), t(3);
            for (auto& v : p) v = u(rng);
            for (auto& v : t) v = u(rng);
            bool near_boundary = false;
            for (int i = 0; i < 3; ++i)
                if (std::abs(std::abs(p[static_cast<std::size_t>(i)] - t[static_cast<std::size_t>(i)]) - theta) < 1e-4)
                    near_boundary = true;
            if (near_boundary) continue;
            LossResult res = margin_euclidean(p, t, theta);
            auto f = [&](const std::vector<double>& q) { return margin_euclidean(q, t, theta).value; };
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK_THAT(res.grad[i], WithinAbs(fd_grad(f, p, i), 1e-6));
                ++checked;
            }
        }
        CHECK(checked >= 60);
    }
}

TEST_CASE("smooth l1 matches the classic form at t = 1", "[objectives]") {
    SECTION("frozen values") {
        CHECK_THAT(smooth_l1({0.5}, {0.0}).value, WithinAbs(0.125, 1e-15));
        CHECK_THAT(smooth_l1({2.0}, {0.0}).value, WithinAbs(1.5, 1e-15));
        CHECK_THAT(smooth_l1({-2.0}, {0.0}).value, WithinAbs(1.5, 1e-15));
        // Knee: both pieces give 0.5 at |x| = 1.
        CHECK_THAT(smooth_l1({1.0}, {0.0}).value, WithinAbs(0.5, 1e-15));
        CHECK_THAT(smooth_l1({1.0 - 1e-9}, {0.0}).value, WithinAbs(0.5, 1e-8));
    }
    SECTION("frozen gradients") {
        CHECK_THAT(smooth_l1({0.5}, {0.0}).grad[0], WithinAbs(0.5, 1e-15));
        CHECK_THAT(smooth_l1({2.0}, {0.0}).grad[0], WithinAbs(1.0, 1e-15));
        CHECK_THAT(smooth_l1({-2.0}, {0.0}).grad[0], WithinAbs(-1.0, 1e-15));
    }
    SECTION("threshold t scales the quadratic zone") {
        // |x| = 0.3 with t = 0.5: quadratic piece 0.5*0.09/0.5 = 0.09.
        CHECK_THAT(smooth_l1({0.3}, {0.0}, 0.5).value, WithinAbs(0.09, 1e-15));
        // |x| = 0.7 with t = 0.5: linear piece 0.7 - 0.25 = 0.45.
        CHECK_THAT(smooth_l1({0.7}, {0.0}, 0.5).value, WithinAbs(0.45, 1e-15));
        // Pieces meet at |x| = t with value t/2 and slope 1.
        CHECK_THAT(smooth_l1({0.5}, {0.0}, 0.5).value, WithinAbs(0.25, 1e-15));
        CHECK_THAT(smooth_l1({0.5 - 1e-9}, {0.0}, 0.5).grad[0], WithinAbs(1.0, 1e-8));
    }
    SECTION("finite differences away from the knee") {
        auto rng = make_rng(31);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int trial = 0; trial < 100; ++trial) {
            const double t_th = 0.25 + std::abs(u(rng));
            std::vector<double> p(3), t(3);
            for (auto& v : p) v = u(rng);
            for (auto& v : t) v = u(rng);
            bool near_knee = false;
            for (int i = 0; i < 3; ++i)
                if (std::abs(std::abs(p[static_cast<std::size_t>(i)] - t[static_cast<std::size_t>(i)]) - t_th) < 1e-4)
                    near_knee = true;
            if (near_knee) continue;
            LossResult res = smooth_l1(p, t, t_th);
            auto f = [&](const std::vector<double>& q) { return smooth_l1(q, t, t_th).value; };
            for (std::size_t i = 0; i < 3; ++i) CHECK_THAT(res.grad[i], WithinAbs(fd_grad(f, p, i), 1e-6));
        }
    }
}

TEST_CASE("combined batch loss", "[objectives]") {
    CombinedLossConfig cfg;
    cfg.lambda_disc = 2.0;
    cfg.lambda_cont = 0.5;
    cfg.weight_c = 1.2;
    cfg.margin_theta = 0.1;

    EmotionLabel t0;
    t0.discrete[0] = 1.0;
    t0.continuous = {0.5, 0.5, 0.5};
    EmotionLabel t1;
    t1.discrete[1] = 1.0;
    t1.continuous.fill(std::numeric_limits<double>::quiet_NaN());  // no continuous target

    std::vector<std::array<double, kNumCategories>> pd(2);
    pd[0][0] = 0.6;
    pd[1][1] = 0.9;
    std::vector<std::array<double, kNumDims>> pc(2);
    pc[0] = {0.8, 0.5, 0.5};
    pc[1] = {0.0, 0.0, 0.0};

    BatchLoss bl = combined_batch_loss(pd, pc, {t0, t1}, cfg);

    // Weights: both categories present in 1 of 2 samples.
    CHECK_THAT(bl.weights[0], WithinAbs(1.8845585360339894, 1e-12));
    CHECK_THAT(bl.weights[1], WithinAbs(1.8845585360339894, 1e-12));

    // Discrete: sample 0 contributes w0*0.4^2 + w1*1^2 (pred 0 for target 1
    // of category 2? no: target of sample 0 is category 1 only).
    const double w = 1.8845585360339894, w_abs = 5.484814947747078;
    double d0 = w * 0.4 * 0.4 + w * 0.0;           // cat1 err 0.4; cat2 pred 0 target 0
    double d1 = w * 0.0 + w * 0.01;                // sample 1: cat2 err 0.1
    (void)w_abs;
    CHECK_THAT(bl.discrete, WithinAbs((d0 + d1) / 2.0, 1e-12));

    // Continuous: only sample 0 has a target; valence err 0.3 outside margin.
    CHECK_THAT(bl.continuous, WithinAbs(0.09, 1e-12));
    CHECK_THAT(bl.total, WithinAbs(2.0 * bl.discrete + 0.5 * bl.continuous, 1e-15));

    // Gradients carry the lambda scaling and the batch means.
    CHECK_THAT(bl.grad_disc[0][0], WithinAbs(2.0 * 2.0 * w * -0.4 / 2.0, 1e-12));
    CHECK_THAT(bl.grad_cont[0][0], WithinAbs(0.5 * 2.0 * 0.3 / 1.0, 1e-12));
    CHECK(bl.grad_cont[1][0] == 0.0);  // no target, no gradient

    SECTION("full finite-difference check through the combined objective") {
        auto rng = make_rng(41);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto total = [&](const std::vector<std::array<double, kNumCategories>>& qd,
                         const std::vector<std::array<double, kNumDims>>& qc) {
            return combined_batch_loss(qd, qc, {t0, t1}, cfg).total;
        };
        const double h = 1e-6;
        for (int rep = 0; rep < 5; ++rep) {
            std::size_t s = rng() % 2, i = rng() % kNumCategories;
            auto qd = pd;
            qd[s][i] += h;
            double up = total(qd, pc);
            qd[s][i] -= 2 * h;
            double down = total(qd, pc);
            CHECK_THAT(bl.grad_disc[s][i], WithinAbs((up - down) / (2 * h), 1e-6));
        }
        for (int rep = 0; rep < 5; ++rep) {
            std::size_t k = rng() % kNumDims;
            auto qc = pc;
            qc[0][k] += h;
            double up = total(pd, qc);
            qc[0][k] -= 2 * h;
            double down = total(pd, qc);
            if (std::abs(std::abs(pc[0][k] - t0.continuous[k]) - cfg.margin_theta) < 1e-4) continue;
            CHECK_THAT(bl.grad_cont[0][k], WithinAbs((up - down) / (2 * h), 1e-6));
        }
        (void)u;
    }

    SECTION("smooth l1 variant") {
        CombinedLossConfig alt = cfg;
        alt.continuous = ContinuousLossKind::smooth_l1;
        alt.smooth_l1_t = 1.0;
        BatchLoss bs = combined_batch_loss(pd, pc, {t0, t1}, alt);
        CHECK_THAT(bs.continuous, WithinAbs(0.5 * 0.3 * 0.3, 1e-12));
        CHECK(bs.discrete == bl.discrete);
    }

    SECTION("batch without any continuous targets has zero continuous term") {
        BatchLoss bn = combined_batch_loss(pd, pc, {t1, t1}, cfg);
        CHECK(bn.continuous == 0.0);
        for (const auto& g : bn.grad_cont)
            for (double v : g) CHECK(v == 0.0);
    }
}

TEST_CASE("loss input validation", "[objectives]") {
    CHECK_THROWS_WITH(weighted_euclidean({1.0}, {1.0, 2.0}, {1.0}), ContainsSubstring("size"));
    CHECK_THROWS_WITH(margin_euclidean({1.0}, {1.0}, -0.5), ContainsSubstring("theta"));
    CHECK_THROWS_WITH(smooth_l1({1.0}, {1.0}, 0.0), ContainsSubstring("t must be"));
    CHECK_THROWS_WITH(combined_batch_loss({}, {}, {}, {}), ContainsSubstring("empty batch"));
    CHECK_THROWS_WITH(continuous_loss_from_string("huber"), ContainsSubstring("huber"));
    CHECK(continuous_loss_from_string("smooth_l1") == ContinuousLossKind::smooth_l1);
}
