// Engine tests: config parsing, dataset assembly, the SGD loop
// (learning, determinism, hooks, checkpoints), evaluation plumbing,
// context comparison, the feature bench, and grid search.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "emoscene/engine.hpp"
#include "emoscene/synth.hpp"

using namespace emoscene;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("emoscene_engine_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Small deterministic corpus on disk; images stay 64x64 but the engine
/// resizes them to the configured input.
SynthResult small_corpus(const std::string& tag, int n_images, std::array<double, 3> fractions,
                         std::uint64_t seed = 7) {
    SynthSpec spec;
    spec.n_images = n_images;
    spec.min_persons = 1;
    spec.max_persons = 1;
    spec.n_annotators = 3;
    spec.annotator_noise = 0.0;
    spec.split_fractions = fractions;
    spec.seed = seed;
    return generate_synthetic(spec, fresh_dir(tag));
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.input_size = 16;
    cfg.base_channels = 2;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 0.02;
    cfg.seed = 11;
    return cfg;
}

} // namespace

TEST_CASE("run config defaults and round trip") {
    const RunConfig def;
    CHECK(def.input_size == 64);
    CHECK(def.base_channels == 8);
    CHECK(def.batch_size == 52);
    CHECK(def.use_context);
    CHECK(def.aggregation == "union");
    CHECK(def.continuous_loss == "margin_euclidean");
    CHECK(def.weight_c == 1.2);
    CHECK(def.margin_theta == 0.1);
    CHECK(def.momentum == 0.9);

    RunConfig cfg;
    cfg.manifest = "some/manifest.jsonl";
    cfg.input_size = 32;
    cfg.use_context = false;
    cfg.lr = 0.005;
    cfg.seed = 99;
    cfg.continuous_loss = "smooth_l1";
    const RunConfig back = parse_run_config(dump_run_config(cfg));
    CHECK(back.manifest == cfg.manifest);
    CHECK(back.input_size == 32);
    CHECK_FALSE(back.use_context);
    CHECK(back.lr == 0.005);
    CHECK(back.seed == 99);
    CHECK(back.continuous_loss == "smooth_l1");
}

TEST_CASE("run config parsing accepts comments and rejects bad input") {
    const RunConfig cfg = parse_run_config("# comment\n\n  lr = 0.25 \nepochs=3\nuse_context = false\n");
    CHECK(cfg.lr == 0.25);
    CHECK(cfg.epochs == 3);
    CHECK_FALSE(cfg.use_context);

    CHECK_THROWS_WITH(parse_run_config("not_a_key = 1\n"), Catch::Matchers::ContainsSubstring("unknown key"));
    CHECK_THROWS_WITH(parse_run_config("lr\n"), Catch::Matchers::ContainsSubstring("expected 'key = value'"));
    CHECK_THROWS_WITH(parse_run_config("lr = fast\n"), Catch::Matchers::ContainsSubstring("malformed"));
    CHECK_THROWS_WITH(parse_run_config("use_context = maybe\n"), Catch::Matchers::ContainsSubstring("boolean"));
    CHECK_THROWS_WITH(parse_run_config("epochs = 0\n"), Catch::Matchers::ContainsSubstring("epochs"));
    CHECK_THROWS_WITH(parse_run_config("lr = -1\n"), Catch::Matchers::ContainsSubstring("lr"));
    CHECK_THROWS_WITH(parse_run_config("momentum = 1.0\n"), Catch::Matchers::ContainsSubstring("momentum"));
    CHECK_THROWS_WITH(parse_run_config("aggregation = median\n"), Catch::Matchers::ContainsSubstring("aggregation"));
    CHECK_THROWS_WITH(parse_run_config("continuous_loss = l2\n"), Catch::Matchers::ContainsSubstring("loss"));
}

TEST_CASE("load_dataset respects splits and produces planar inputs") {
    const SynthResult synth = small_corpus("dataset", 8, {0.5, 0.25, 0.25});
    const Corpus& corpus = synth.corpus;

    std::map<Split, std::size_t> split_counts;
    for (const auto& [pid, split] : corpus.splits) ++split_counts[split];

    const Dataset train_ds = load_dataset(corpus, Split::train, AggregationPolicy::Union, 16);
    const Dataset all_ds = load_dataset(corpus, std::nullopt, AggregationPolicy::Union, 16);
    CHECK(train_ds.size() == split_counts[Split::train]);
    CHECK(all_ds.size() == corpus.persons.size());
    REQUIRE(train_ds.size() > 0);

    CHECK(std::is_sorted(train_ds.person_ids.begin(), train_ds.person_ids.end()));
    for (std::size_t i = 0; i < train_ds.size(); ++i) {
        CHECK(train_ds.body[i].size() == 3u * 16u * 16u);
        CHECK(train_ds.image[i].size() == 3u * 16u * 16u);
        for (double v : train_ds.body[i]) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        const auto& person = corpus.persons.at(train_ds.person_ids[i]);
        const EmotionLabel expect = aggregate_responses(person.responses, AggregationPolicy::Union);
        CHECK(train_ds.labels[i].discrete == expect.discrete);
    }
}

TEST_CASE("training runs, logs, and reduces the loss") {
    const SynthResult synth = small_corpus("learn", 8, {0.75, 0.25, 0.0});
    RunConfig cfg = tiny_config();
    cfg.epochs = 8;
    cfg.lr = 0.005;

    std::vector<double> first_batch_disc;
    const TrainResult run = train(synth.corpus, cfg, [&](int, int batch, const BatchLoss& bl) {
        if (batch == 0) first_batch_disc.push_back(bl.discrete);
    });
    REQUIRE(run.logs.size() == 8u);
    for (std::size_t i = 0; i < run.logs.size(); ++i) CHECK(run.logs[i].epoch == static_cast<int>(i) + 1);
    CHECK(run.logs.back().train_loss_disc < run.logs.front().train_loss_disc);
    CHECK(std::isfinite(run.logs.back().val_map));
    CHECK(std::isfinite(run.logs.back().val_aae));
    REQUIRE(first_batch_disc.size() == 8u);
}

TEST_CASE("validation columns are NaN without a val split") {
    const SynthResult synth = small_corpus("noval", 4, {1.0, 0.0, 0.0});
    RunConfig cfg = tiny_config();
    cfg.epochs = 1;
    const TrainResult run = train(synth.corpus, cfg);
    REQUIRE(run.logs.size() == 1u);
    CHECK(std::isnan(run.logs.front().val_map));
    CHECK(std::isnan(run.logs.front().val_aae));
}

TEST_CASE("loss hook sees the discrete weights w_i = 1/ln(c + p_i)") {
    const SynthResult synth = small_corpus("hook", 6, {1.0, 0.0, 0.0});
    RunConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.batch_size = 64;  // one batch covering the whole train split
    cfg.weight_c = 1.2;

    const Dataset ds = load_dataset(synth.corpus, Split::train, AggregationPolicy::Union, cfg.input_size);
    REQUIRE(ds.size() > 0);
    std::array<double, kNumCategories> presence{};
    for (const auto& label : ds.labels)
        for (int c = 0; c < kNumCategories; ++c)
            if (label.discrete[static_cast<std::size_t>(c)] > 0.0) presence[static_cast<std::size_t>(c)] += 1.0;

    int calls = 0;
    train(synth.corpus, cfg, [&](int, int, const BatchLoss& bl) {
        ++calls;
        for (int c = 0; c < kNumCategories; ++c) {
            const double p = presence[static_cast<std::size_t>(c)] / static_cast<double>(ds.size());
            CHECK(bl.weights[static_cast<std::size_t>(c)] ==
                  Catch::Approx(1.0 / std::log(cfg.weight_c + p)).epsilon(0).margin(1e-12));
        }
        // A category absent from the batch gets the ceiling weight 1/ln(c).
        bool checked_absent = false;
        for (int c = 0; c < kNumCategories && !checked_absent; ++c) {
            if (presence[static_cast<std::size_t>(c)] == 0.0) {
                CHECK(bl.weights[static_cast<std::size_t>(c)] ==
                      Catch::Approx(1.0 / std::log(1.2)).epsilon(0).margin(1e-12));
                checked_absent = true;
            }
        }
        CHECK(checked_absent);  // a 6-person corpus never covers all 26 categories
    });
    CHECK(calls == 1);
}

TEST_CASE("training is bit-identical across runs and seed-sensitive") {
    const SynthResult synth = small_corpus("determinism", 6, {0.75, 0.25, 0.0});
    RunConfig cfg = tiny_config();
    cfg.epochs = 3;

    const TrainResult a = train(synth.corpus, cfg);
    const TrainResult b = train(synth.corpus, cfg);
    REQUIRE(a.model.params.size() == b.model.params.size());
    for (const auto& [name, data] : a.model.params) {
        const auto& other = b.model.at(name);
        REQUIRE(data.size() == other.size());
        for (std::size_t i = 0; i < data.size(); ++i) REQUIRE(data[i] == other[i]);
    }
    REQUIRE(a.logs.size() == b.logs.size());
    for (std::size_t i = 0; i < a.logs.size(); ++i) {
        // NaN-free by construction here (val split exists).
        CHECK(a.logs[i].train_loss_disc == b.logs[i].train_loss_disc);
        CHECK(a.logs[i].train_loss_cont == b.logs[i].train_loss_cont);
        CHECK(a.logs[i].val_map == b.logs[i].val_map);
        CHECK(a.logs[i].val_aae == b.logs[i].val_aae);
    }

    RunConfig other_seed = cfg;
    other_seed.seed = cfg.seed + 1;
    const TrainResult c = train(synth.corpus, other_seed);
    bool any_different = false;
    for (const auto& [name, data] : a.model.params) {
        const auto& oc = c.model.at(name);
        for (std::size_t i = 0; i < data.size() && !any_different; ++i)
            any_different = data[i] != oc[i];
    }
    CHECK(any_different);
}

TEST_CASE("checkpoints and the log are written; reloaded model evaluates identically") {
    const SynthResult synth = small_corpus("ckpt", 6, {0.75, 0.25, 0.0});
    RunConfig cfg = tiny_config();
    cfg.epochs = 3;
    cfg.checkpoint_every = 2;
    const fs::path out = fresh_dir("ckpt_out");
    cfg.out_dir = out.string();

    const TrainResult run = train(synth.corpus, cfg);
    CHECK(fs::exists(out / "epoch_002.ckpt"));
    CHECK(fs::exists(out / "epoch_003.ckpt"));  // final epoch always checkpointed
    CHECK_FALSE(fs::exists(out / "epoch_001.ckpt"));
    CHECK(fs::exists(out / "final.ckpt"));
    REQUIRE(fs::exists(out / "train_log.csv"));

    std::ifstream log_in(out / "train_log.csv");
    std::string header;
    std::getline(log_in, header);
    CHECK(header == "epoch,train_loss_disc,train_loss_cont,val_mAP,val_AAE");
    int rows = 0;
    for (std::string line; std::getline(log_in, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    const Model reloaded = model_from_checkpoint(load_checkpoint(out / "final.ckpt"));
    const Dataset val_ds = load_dataset(synth.corpus, Split::val, AggregationPolicy::Union, cfg.input_size);
    REQUIRE(val_ds.size() > 0);
    const EvalResult live = evaluate(run.model, val_ds, cfg.batch_size);
    const EvalResult back = evaluate(reloaded, val_ds, cfg.batch_size);
    REQUIRE(live.scores.size() == back.scores.size());
    for (std::size_t i = 0; i < live.scores.size(); ++i)
        for (int c = 0; c < kNumCategories; ++c)
            REQUIRE(live.scores[i][static_cast<std::size_t>(c)] == back.scores[i][static_cast<std::size_t>(c)]);
    CHECK(live.ap.mean == back.ap.mean);
    CHECK(live.jaccard == back.jaccard);
}

TEST_CASE("a tiny corpus can be memorized") {
    const SynthResult synth = small_corpus("overfit", 4, {1.0, 0.0, 0.0}, 21);
    RunConfig cfg = tiny_config();
    cfg.input_size = 16;
    cfg.base_channels = 4;
    cfg.epochs = 80;
    cfg.batch_size = 4;
    cfg.lr = 0.005;

    const TrainResult run = train(synth.corpus, cfg);
    const double first = run.logs.front().train_loss_disc;
    const double last = run.logs.back().train_loss_disc;
    CHECK(last < first / 5.0);

    const Dataset train_ds = load_dataset(synth.corpus, Split::train, AggregationPolicy::Union, cfg.input_size);
    const EvalResult on_train = evaluate(run.model, train_ds, cfg.batch_size);
    CHECK(on_train.ap.mean > 0.9);
}

TEST_CASE("evaluate validates input and honors fixed thresholds") {
    const SynthResult synth = small_corpus("eval", 5, {1.0, 0.0, 0.0});
    RunConfig cfg = tiny_config();
    const Model model = make_model(model_config(cfg));
    const Dataset ds = load_dataset(synth.corpus, Split::train, AggregationPolicy::Union, cfg.input_size);

    CHECK_THROWS_WITH(evaluate(model, Dataset{}, 4), Catch::Matchers::ContainsSubstring("empty"));

    const EvalResult self_cal = evaluate(model, ds, 4);
    std::array<double, kNumCategories> huge{};
    huge.fill(1e9);
    const EvalResult fixed = evaluate(model, ds, 4, huge);
    CHECK(fixed.thresholds == huge);
    // With unreachable thresholds every prediction set is empty: the Jaccard
    // against non-empty truth sets is 0 for every sample.
    CHECK(fixed.jaccard == 0.0);
    CHECK(fixed.ap.mean == self_cal.ap.mean);  // ranking metrics ignore thresholds
}

TEST_CASE("compare_context_modes trains both modes and fills the pools") {
    const SynthResult synth = small_corpus("compare", 10, {0.6, 0.2, 0.2});
    RunConfig cfg = tiny_config();
    cfg.epochs = 2;

    const ContextComparison cmp =
        compare_context_modes(synth.corpus, cfg, synth_body_pool(), synth_context_pool());
    CHECK(cmp.with_context.scores.size() == cmp.body_only.scores.size());
    CHECK(cmp.context_pool_with.n_defined > 0);
    CHECK(cmp.body_pool_with.n_defined > 0);
    CHECK(cmp.context_pool_with.chance_ap > 0.0);
    CHECK(cmp.context_pool_with.chance_ap < 1.0);
    CHECK(std::isfinite(cmp.context_pool_body.mean_ap));

    CHECK_THROWS_WITH(compare_context_modes(synth.corpus, cfg, {0}, {14}),
                      Catch::Matchers::ContainsSubstring("pool"));
}

TEST_CASE("feature_bench produces AP and AAE per feature set") {
    const SynthResult synth = small_corpus("bench", 10, {0.7, 0.0, 0.3});
    RunConfig cfg = tiny_config();
    cfg.epochs = 2;
    const TrainResult run = train(synth.corpus, cfg);

    const Dataset train_ds = load_dataset(synth.corpus, Split::train, AggregationPolicy::Union, cfg.input_size);
    const Dataset test_ds = load_dataset(synth.corpus, Split::test, AggregationPolicy::Union, cfg.input_size);
    REQUIRE(train_ds.size() > 0);
    REQUIRE(test_ds.size() > 0);

    FeatureBenchConfig fb;
    fb.iterations = 50;
    const FeatureBenchResult res = feature_bench(run.model, train_ds, test_ds, fb);
    REQUIRE(res.ap.count("body") == 1);
    REQUIRE(res.ap.count("body+image") == 1);
    CHECK(res.ap.count("body+extra") == 0);
    CHECK(res.ap.at("body").n_defined > 0);
    CHECK(std::isfinite(res.aae.at("body").mean));

    std::vector<std::vector<double>> extra_train(train_ds.size(), std::vector<double>(2, 0.5));
    std::vector<std::vector<double>> extra_eval(test_ds.size(), std::vector<double>(2, 0.5));
    const FeatureBenchResult with_extra = feature_bench(run.model, train_ds, test_ds, fb, &extra_train, &extra_eval);
    CHECK(with_extra.ap.count("body+extra") == 1);

    std::vector<std::vector<double>> misaligned(train_ds.size() + 1, std::vector<double>(2, 0.0));
    CHECK_THROWS_WITH(feature_bench(run.model, train_ds, test_ds, fb, &misaligned, &extra_eval),
                      Catch::Matchers::ContainsSubstring("align"));
}

TEST_CASE("grid_search walks the Cartesian product and picks the best") {
    const SynthResult synth = small_corpus("grid", 8, {0.625, 0.375, 0.0});
    RunConfig base = tiny_config();
    base.epochs = 1;

    const std::map<std::string, std::vector<std::string>> grid{
        {"lr", {"0.01", "0.05"}},
        {"momentum", {"0.0", "0.9"}},
    };
    const GridSearchResult res = grid_search(synth.corpus, base, grid);
    REQUIRE(res.entries.size() == 4u);

    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : res.entries) {
        REQUIRE(e.overrides.size() == 2u);
        seen.insert({e.overrides.at("lr"), e.overrides.at("momentum")});
        CHECK(std::isfinite(e.val_map));
    }
    CHECK(seen.size() == 4u);

    const auto& best = res.entries[res.best_index];
    for (const auto& e : res.entries) {
        CHECK(best.val_map >= e.val_map);
    }
    CHECK(res.best_config.lr == std::stod(best.overrides.at("lr")));
    CHECK(res.best_config.momentum == std::stod(best.overrides.at("momentum")));

    CHECK_THROWS_WITH(grid_search(synth.corpus, base, {{"warp", {"1"}}}),
                      Catch::Matchers::ContainsSubstring("unknown key"));
    CHECK_THROWS_WITH(grid_search(synth.corpus, base, {}), Catch::Matchers::ContainsSubstring("empty grid"));
}
