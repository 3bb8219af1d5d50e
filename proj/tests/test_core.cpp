// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "emoscene/core.hpp"

using namespace emoscene;

namespace {

AnnotatorResponse resp(std::string who, std::set<int> cats,
                       std::optional<ContinuousDims> dims = std::nullopt, bool valid = true) {
    AnnotatorResponse r;
    r.annotator_id = std::move(who);
    r.categories = std::move(cats);
    r.dims = dims;
    r.valid = valid;
    return r;
}

} // namespace

TEST_CASE("taxonomy has 26 categories with contiguous ids") {
    const auto& tax = category_taxonomy();
    REQUIRE(tax.size() == 26);
    for (int i = 0; i < 26; ++i) {
        CHECK(tax[i].id == i + 1);
        CHECK_FALSE(tax[i].name.empty());
        CHECK_FALSE(tax[i].definition.empty());
    }
    CHECK(tax.front().name == "Affection");
    CHECK(tax.back().name == "Yearning");
    CHECK(category_name(17) == "Happiness");
    CHECK(category_id("Doubt/Confusion") == 10);
    CHECK(category_id("NotACategory") == 0);
    CHECK_THROWS_AS(category_name(27), Error);
}

TEST_CASE("dimension normalization round-trips all raw integers") {
    for (int v = 1; v <= 10; ++v) {
        double n = normalize_dim(v);
        CHECK(n >= 0.0);
        CHECK(n <= 1.0);
        CHECK(denormalize_dim(n) == Catch::Approx(v).margin(1e-12));
    }
    CHECK(normalize_dim(1) == 0.0);
    CHECK(normalize_dim(10) == 1.0);
    CHECK_FALSE(valid_raw_dim(0));
    CHECK_FALSE(valid_raw_dim(11));
    CHECK_FALSE(valid_raw_dim(5.5));
}

TEST_CASE("single response aggregates to a one-hot label under any policy") {
    const int happiness = category_id("Happiness");
    std::vector<AnnotatorResponse> rs = {resp("a0", {happiness}, ContinuousDims{8, 5, 5})};
    for (auto policy : {AggregationPolicy::Union, AggregationPolicy::Majority, AggregationPolicy::Fraction}) {
        EmotionLabel lab = aggregate_responses(rs, policy);
        for (int i = 0; i < kNumCategories; ++i)
            CHECK(lab.discrete[i] == (i + 1 == happiness ? 1.0 : 0.0));
        CHECK(lab.continuous[0] == Catch::Approx(7.0 / 9.0).epsilon(1e-12));
    }
}

TEST_CASE("majority keeps only categories picked by more than half") {
    std::vector<AnnotatorResponse> rs = {resp("a0", {1}), resp("a1", {1}), resp("a2", {2})};
    EmotionLabel lab = aggregate_responses(rs, AggregationPolicy::Majority);
    CHECK(lab.discrete[0] == 1.0);
    CHECK(lab.discrete[1] == 0.0);
}

TEST_CASE("fraction reports selection rates") {
    std::vector<AnnotatorResponse> rs = {resp("a0", {1}), resp("a1", {1}), resp("a2", {2})};
    EmotionLabel lab = aggregate_responses(rs, AggregationPolicy::Fraction);
    CHECK(lab.discrete[0] == Catch::Approx(2.0 / 3.0));
    CHECK(lab.discrete[1] == Catch::Approx(1.0 / 3.0));
    CHECK(lab.discrete[2] == 0.0);
}

TEST_CASE("aggregation rejects a person with no valid response") {
    std::vector<AnnotatorResponse> rs = {resp("a0", {1}, std::nullopt, false)};
    CHECK_THROWS_WITH(aggregate_responses(rs, AggregationPolicy::Union),
                      Catch::Matchers::ContainsSubstring("empty annotation"));
    CHECK_THROWS_AS(aggregate_responses({}, AggregationPolicy::Union), Error);
}

TEST_CASE("invalid responses do not contribute") {
    std::vector<AnnotatorResponse> rs = {resp("a0", {1}, ContinuousDims{2, 2, 2}),
                                         resp("a1", {2}, ContinuousDims{9, 9, 9}, false)};
    EmotionLabel lab = aggregate_responses(rs, AggregationPolicy::Union);
    CHECK(lab.discrete[1] == 0.0);
    CHECK(lab.continuous[0] == Catch::Approx(normalize_dim(2)));
}

TEST_CASE("label without any dims marks continuous as absent") {
    EmotionLabel lab = aggregate_responses({resp("a0", {3})}, AggregationPolicy::Union);
    CHECK_FALSE(lab.has_continuous());
    for (double v : lab.continuous) CHECK(std::isnan(v));
}

TEST_CASE("aggregation is permutation-invariant and union dominates majority") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<AnnotatorResponse> rs;
        int n = 2 + static_cast<int>(rng() % 4);
        for (int a = 0; a < n; ++a) {
            std::set<int> cats;
            int k = 1 + static_cast<int>(rng() % 4);
            while (static_cast<int>(cats.size()) < k) cats.insert(1 + static_cast<int>(rng() % 26));
            ContinuousDims d{double(1 + rng() % 10), double(1 + rng() % 10), double(1 + rng() % 10)};
            rs.push_back(resp("a" + std::to_string(a), cats, d));
        }
        auto shuffled = rs;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (auto policy : {AggregationPolicy::Union, AggregationPolicy::Majority, AggregationPolicy::Fraction}) {
            EmotionLabel a = aggregate_responses(rs, policy);
            EmotionLabel b = aggregate_responses(shuffled, policy);
            CHECK(a.discrete == b.discrete);
            CHECK(a.continuous == b.continuous);
        }
        EmotionLabel u = aggregate_responses(rs, AggregationPolicy::Union);
        EmotionLabel m = aggregate_responses(rs, AggregationPolicy::Majority);
        EmotionLabel f = aggregate_responses(rs, AggregationPolicy::Fraction);
        for (int i = 0; i < kNumCategories; ++i) {
            CHECK(u.discrete[i] >= m.discrete[i]);
            CHECK(u.discrete[i] >= f.discrete[i]);
        }
    }
}
