// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "emoscene/model.hpp"
#include "emoscene/objectives.hpp"

using namespace emoscene;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

BatchMap random_batch(int n, int c, int s, std::uint64_t seed) {
    BatchMap x(n, c, s, s);
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.v) v = u(rng);
    return x;
}

std::vector<EmotionLabel> random_labels(int n, std::uint64_t seed) {
    std::vector<EmotionLabel> labels(static_cast<std::size_t>(n));
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& lab : labels) {
        int marked = 0;
        for (auto& d : lab.discrete) {
            d = u(rng) < 0.2 ? 1.0 : 0.0;
            marked += d > 0.0 ? 1 : 0;
        }
        if (marked == 0) lab.discrete[0] = 1.0;
        for (auto& d : lab.continuous) d = u(rng);
    }
    return labels;
}

std::filesystem::path temp_ckpt() {
    static int counter = 0;
    return std::filesystem::temp_directory_path() /
           ("emoscene_model_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".ckpt");
}

} // namespace

TEST_CASE("backbone schedule", "[model]") {
    // Channels double every four layers.
    const int expect_c[17] = {0, 8, 8, 8, 8, 16, 16, 16, 16, 32, 32, 32, 32, 64, 64, 64, 64};
    for (int l = 1; l <= 16; ++l) CHECK(layer_channels(8, l) == expect_c[l]);
    // Orientation alternates, starting horizontal.
    for (int l = 1; l <= 16; ++l) CHECK(layer_horizontal(l) == (l % 2 == 1));
    // The last two layers of each block stride.
    const std::set<int> strided{3, 4, 7, 8, 11, 12, 15, 16};
    for (int l = 1; l <= 16; ++l) CHECK(layer_stride(l) == (strided.count(l) ? 2 : 1));
}

TEST_CASE("model construction and parameter inventory", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 32;
    cfg.backbone.base_channels = 2;
    cfg.seed = 5;
    Model m = make_model(cfg);

    // 16 conv + 16 bn (4 arrays each) per branch, plus 6 fusion arrays.
    CHECK(m.params.size() == 2 * (16 + 16 * 4) + 6);

    CHECK(m.shapes.at("body.conv01.weight") == std::vector<int>{2, 3, 3});
    CHECK(m.shapes.at("body.conv05.weight") == std::vector<int>{4, 2, 3});
    CHECK(m.shapes.at("image.conv16.weight") == std::vector<int>{16, 16, 3});
    CHECK(m.shapes.at("body.bn16.gamma") == std::vector<int>{16});
    CHECK(backbone_feature_dim(cfg.backbone) == 16);
    CHECK(m.shapes.at("fusion.fc1.weight") == std::vector<int>{256, 32});
    CHECK(m.shapes.at("fusion.disc.weight") == std::vector<int>{26, 256});
    CHECK(m.shapes.at("fusion.cont.weight") == std::vector<int>{3, 256});

    // Independent analytic count of every array in the schedule.
    std::size_t expected = 0;
    for (int branch = 0; branch < 2; ++branch) {
        int in_c = 3;
        for (int l = 1; l <= 16; ++l) {
            const int out_c = layer_channels(2, l);
            expected += static_cast<std::size_t>(out_c) * static_cast<std::size_t>(in_c) * 3;  // conv
            expected += 4 * static_cast<std::size_t>(out_c);                                   // bn
            in_c = out_c;
        }
    }
    expected += 256 * 32 + 256 + 26 * 256 + 26 + 3 * 256 + 3;
    CHECK(parameter_count(m) == expected);
    // Running stats are half of each bn quadruple.
    std::size_t running = 0;
    for (int l = 1; l <= 16; ++l) running += 2 * static_cast<std::size_t>(layer_channels(2, l));
    CHECK(parameter_count(m, true) == expected - 2 * running);

    // Identical seeds give identical parameters; different seeds differ.
    Model m2 = make_model(cfg);
    CHECK(m.params == m2.params);
    cfg.seed = 6;
    Model m3 = make_model(cfg);
    CHECK(m.params != m3.params);

    CHECK(is_trainable_param("body.conv01.weight"));
    CHECK(!is_trainable_param("body.bn01.running_mean"));

    ModelConfig bad = cfg;
    bad.backbone.input_size = 20;
    CHECK_THROWS_WITH(make_model(bad), ContainsSubstring("multiple of 16"));
}

TEST_CASE("conv primitive", "[model]") {
    SECTION("hand case: horizontal [1, 0, -1] kernel") {
        BatchMap x(1, 1, 1, 4);
        x.v = {1, 2, 3, 4};
        std::vector<double> w{1, 0, -1};
        BatchMap y = detail::conv_forward(x, w, 1, true, 1);
        REQUIRE(y.w == 4);
        CHECK(y.v[0] == -2.0);  // 0*?: pad - in[1]
        CHECK(y.v[1] == 1.0 - 3.0);
        CHECK(y.v[2] == 2.0 - 4.0);
        CHECK(y.v[3] == 3.0);  // right pad
    }
    SECTION("impulse spreads only along the kernel orientation") {
        BatchMap x(1, 1, 5, 5);
        x.at(0, 0, 2, 2) = 1.0;
        std::vector<double> w{1, 1, 1};
        BatchMap h = detail::conv_forward(x, w, 1, true, 1);
        BatchMap v = detail::conv_forward(x, w, 1, false, 1);
        for (int y = 0; y < 5; ++y)
            for (int xx = 0; xx < 5; ++xx) {
                CHECK(h.at(0, 0, y, xx) == ((y == 2 && std::abs(xx - 2) <= 1) ? 1.0 : 0.0));
                CHECK(v.at(0, 0, y, xx) == ((xx == 2 && std::abs(y - 2) <= 1) ? 1.0 : 0.0));
            }
    }
    SECTION("stride 2 halves the strided axis only") {
        BatchMap x(1, 2, 8, 8);
        std::vector<double> w(2 * 2 * 3, 0.5);
        BatchMap h = detail::conv_forward(x, w, 2, true, 2);
        CHECK(h.h == 8);
        CHECK(h.w == 4);
        BatchMap v = detail::conv_forward(x, w, 2, false, 2);
        CHECK(v.h == 4);
        CHECK(v.w == 8);
    }
}

TEST_CASE("forward output shape and eval determinism", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.base_channels = 2;
    cfg.seed = 11;
    Model m = make_model(cfg);

    BatchMap body = random_batch(3, 3, 16, 1);
    BatchMap image = random_batch(3, 3, 16, 2);
    ForwardOutput a = model_forward(m, body, image);
    ForwardOutput b = model_forward(m, body, image);
    REQUIRE(a.disc.size() == 3);
    REQUIRE(a.cont.size() == 3);
    CHECK(a.disc == b.disc);
    CHECK(a.cont == b.cont);
    for (const auto& row : a.disc)
        for (double v : row) CHECK(std::isfinite(v));
    for (const auto& row : a.cont)
        for (double v : row) CHECK(std::isfinite(v));

    BatchMap bad = random_batch(3, 3, 32, 3);
    CHECK_THROWS_WITH(model_forward(m, bad, image), ContainsSubstring("expected"));
}

TEST_CASE("training forward differs from eval until stats converge", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.base_channels = 1;
    Model m = make_model(cfg);
    BatchMap body = random_batch(4, 3, 16, 21);
    BatchMap image = random_batch(4, 3, 16, 22);

    TrainCache cache;
    ForwardOutput train_out = model_forward(m, body, image, &cache);
    ForwardOutput eval_out = model_forward(m, body, image);
    CHECK(train_out.disc != eval_out.disc);  // fresh running stats differ from batch stats

    // Running stats move toward the cached batch statistics.
    const auto before = m.at("body.bn01.running_mean");
    update_running_stats(m, cache);
    const auto& after = m.at("body.bn01.running_mean");
    for (std::size_t i = 0; i < after.size(); ++i)
        CHECK_THAT(after[i], WithinAbs(0.9 * before[i] + 0.1 * cache.body.stats[0].mean[i], 1e-12));
}

TEST_CASE("analytic gradients match finite differences", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.base_channels = 1;
    cfg.seed = 3;
    Model m = make_model(cfg);

    const int n = 2;
    BatchMap body = random_batch(n, 3, 16, 31);
    BatchMap image = random_batch(n, 3, 16, 32);
    std::vector<EmotionLabel> targets = random_labels(n, 33);
    CombinedLossConfig lcfg;
    lcfg.lambda_disc = 1.0;
    lcfg.lambda_cont = 0.7;
    lcfg.margin_theta = 0.0;  // keep the objective smooth for the check

    auto loss_value = [&](const Model& model) {
        TrainCache cache;
        ForwardOutput out = model_forward(model, body, image, &cache);
        return combined_batch_loss(out.disc, out.cont, targets, lcfg).total;
    };

    TrainCache cache;
    ForwardOutput out = model_forward(m, body, image, &cache);
    BatchLoss bl = combined_batch_loss(out.disc, out.cont, targets, lcfg);
    auto grads = model_backward(m, cache, bl.grad_disc, bl.grad_cont);

    const std::vector<std::pair<std::string, std::vector<std::size_t>>> probes{
        {"body.conv01.weight", {0, 4, 8}},
        {"body.conv08.weight", {1, 5}},
        {"body.conv16.weight", {0, 7}},
        {"image.conv01.weight", {2, 6}},
        {"image.conv12.weight", {3}},
        {"body.bn01.gamma", {0}},
        {"body.bn16.beta", {3}},
        {"image.bn05.gamma", {1}},
        {"fusion.fc1.weight", {0, 100, 1000}},
        {"fusion.fc1.bias", {7}},
        {"fusion.disc.weight", {0, 500}},
        {"fusion.disc.bias", {25}},
        {"fusion.cont.weight", {10}},
        {"fusion.cont.bias", {1}},
    };
    const double h = 1e-6;
    for (const auto& [name, indices] : probes) {
        for (std::size_t idx : indices) {
            Model probe = m;
            probe.at(name)[idx] += h;
            const double up = loss_value(probe);
            probe.at(name)[idx] -= 2 * h;
            const double down = loss_value(probe);
            const double fd = (up - down) / (2 * h);
            const double analytic = grads.at(name)[idx];
            INFO(name << "[" << idx << "] analytic=" << analytic << " fd=" << fd);
            CHECK(std::abs(analytic - fd) <= std::max(1e-4, 1e-3 * std::max(std::abs(analytic), std::abs(fd))));
        }
    }
}

TEST_CASE("body-only mode ignores the image and its gradients", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.base_channels = 1;
    cfg.use_context = false;
    cfg.seed = 9;
    Model m = make_model(cfg);

    BatchMap body = random_batch(2, 3, 16, 41);
    BatchMap image_a = random_batch(2, 3, 16, 42);
    BatchMap image_b = random_batch(2, 3, 16, 43);

    ForwardOutput a = model_forward(m, body, image_a);
    ForwardOutput b = model_forward(m, body, image_b);
    CHECK(a.disc == b.disc);
    CHECK(a.cont == b.cont);

    // The same inputs through a context-enabled model with the same weights
    // do depend on the image.
    Model mc = m;
    mc.cfg.use_context = true;
    ForwardOutput ca = model_forward(mc, body, image_a);
    ForwardOutput cb = model_forward(mc, body, image_b);
    CHECK(ca.disc != cb.disc);

    // Backward in B mode leaves every image-branch parameter untouched.
    TrainCache cache;
    ForwardOutput out = model_forward(m, body, image_a, &cache);
    std::vector<EmotionLabel> targets = random_labels(2, 44);
    CombinedLossConfig lcfg;
    BatchLoss bl = combined_batch_loss(out.disc, out.cont, targets, lcfg);
    auto grads = model_backward(m, cache, bl.grad_disc, bl.grad_cont);
    for (const auto& [name, g] : grads) {
        if (name.rfind("image.", 0) != 0) continue;
        for (double v : g) CHECK(v == 0.0);
    }
    // Body gradients flow.
    double body_mag = 0.0;
    for (double v : grads.at("body.conv01.weight")) body_mag += std::abs(v);
    CHECK(body_mag > 0.0);
}

TEST_CASE("checkpoint round trip is bit exact", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.base_channels = 2;
    cfg.seed = 77;
    Model m = make_model(cfg);
    m.at("fusion.fc1.bias")[0] = 0.1234567890123456789;

    auto path = temp_ckpt();
    save_checkpoint(to_checkpoint(m), path);
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.arrays == m.params);
    CHECK(ck.shapes == m.shapes);

    Model back = model_from_checkpoint(ck);
    CHECK(back.params == m.params);
    CHECK(back.cfg.backbone.input_size == 16);
    CHECK(back.cfg.use_context == m.cfg.use_context);
    std::filesystem::remove(path);
}

TEST_CASE("import pretrained copies matching arrays", "[model]") {
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.base_channels = 1;
    cfg.seed = 1;
    Model donor = make_model(cfg);
    cfg.seed = 2;
    Model target = make_model(cfg);
    REQUIRE(donor.params != target.params);

    auto path = temp_ckpt();
    save_checkpoint(to_checkpoint(donor), path);

    SECTION("prefix import copies only that branch") {
        const auto fusion_before = target.at("fusion.fc1.weight");
        const auto image_before = target.at("image.conv01.weight");
        std::size_t ni = import_pretrained(target, path, "body.");
        CHECK(ni == 16 + 16 * 4);  // conv + bn arrays of one branch
        CHECK(target.at("body.conv01.weight") == donor.at("body.conv01.weight"));
        CHECK(target.at("image.conv01.weight") == image_before);
        CHECK(target.at("fusion.fc1.weight") == fusion_before);
    }
    SECTION("full import makes the models identical") {
        import_pretrained(target, path);
        CHECK(target.params == donor.params);
    }
    SECTION("no matching prefix is an error") {
        CHECK_THROWS_WITH(import_pretrained(target, path, "backbone."), ContainsSubstring("no matching"));
    }
    SECTION("shape mismatch is an error") {
        ModelConfig big = cfg;
        big.backbone.base_channels = 2;
        Model wide = make_model(big);
        CHECK_THROWS_WITH(import_pretrained(wide, path, "body."), ContainsSubstring("mismatch"));
    }
    std::filesystem::remove(path);
}
