// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Orchestration: run configuration, dataset assembly from a corpus, SGD
// training with momentum, evaluation, the body-vs-body+context comparison,
// a feature-regression bench, and grid search over config overrides.
// Every run is reproducible from (config, seed): shuffling, initialization
// and batching draw from deterministic per-purpose streams.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "emoscene/checkpoint.hpp"
#include "emoscene/core.hpp"
#include "emoscene/corpus.hpp"
#include "emoscene/csv.hpp"
#include "emoscene/image.hpp"
#include "emoscene/metrics.hpp"
#include "emoscene/model.hpp"
#include "emoscene/objectives.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

// ---------------------------------------------------------------------------
// Run configuration: flat "key = value" text, unknown keys rejected

struct RunConfig {
    // data
    std::string manifest;
    std::string aggregation = "union";
    // model
    int input_size = 64;
    int base_channels = 8;
    bool use_context = true;
    // optimization
    int epochs = 10;
    int batch_size = 52;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    // objective
    double lambda_disc = 1.0;
    double lambda_cont = 1.0;
    double weight_c = 1.2;
    double margin_theta = 0.1;
    std::string continuous_loss = "margin_euclidean";
    double smooth_l1_t = 1.0;
    // bookkeeping
    std::uint64_t seed = 1;
    std::string out_dir;
    int checkpoint_every = 1;
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        if constexpr (std::is_same_v<T, int>) {
            const int r = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            const unsigned long long r = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return static_cast<std::uint64_t>(r);
        } else {
            const double r = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        }
    } catch (const std::exception&) {
        throw Error("config: key '" + key + "' has a malformed value '" + v + "'");
    }
}

} // namespace detail

/// Apply one key/value pair; throws on unknown keys or malformed values.
inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "manifest") cfg.manifest = value;
    else if (key == "aggregation") { aggregation_policy_from_string(value); cfg.aggregation = value; }
    else if (key == "input_size") cfg.input_size = detail::parse_number<int>(value, key);
    else if (key == "base_channels") cfg.base_channels = detail::parse_number<int>(value, key);
    else if (key == "use_context") cfg.use_context = detail::parse_bool(value, key);
    else if (key == "epochs") cfg.epochs = detail::parse_number<int>(value, key);
    else if (key == "batch_size") cfg.batch_size = detail::parse_number<int>(value, key);
    else if (key == "lr") cfg.lr = detail::parse_number<double>(value, key);
    else if (key == "momentum") cfg.momentum = detail::parse_number<double>(value, key);
    else if (key == "weight_decay") cfg.weight_decay = detail::parse_number<double>(value, key);
    else if (key == "lambda_disc") cfg.lambda_disc = detail::parse_number<double>(value, key);
    else if (key == "lambda_cont") cfg.lambda_cont = detail::parse_number<double>(value, key);
    else if (key == "weight_c") cfg.weight_c = detail::parse_number<double>(value, key);
    else if (key == "margin_theta") cfg.margin_theta = detail::parse_number<double>(value, key);
    else if (key == "continuous_loss") { continuous_loss_from_string(value); cfg.continuous_loss = value; }
    else if (key == "smooth_l1_t") cfg.smooth_l1_t = detail::parse_number<double>(value, key);
    else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(value, key);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "checkpoint_every") cfg.checkpoint_every = detail::parse_number<int>(value, key);
    else throw Error("config: unknown key '" + key + "'");
}

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    if (cfg.epochs < 1) throw Error("config: epochs must be >= 1");
    if (cfg.batch_size < 1) throw Error("config: batch_size must be >= 1");
    if (cfg.lr <= 0.0) throw Error("config: lr must be > 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw Error("config: momentum must be in [0, 1)");
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_run_config(text);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

inline std::string dump_run_config(const RunConfig& c) {
    std::string s;
    const auto add = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
    add("manifest", c.manifest);
    add("aggregation", c.aggregation);
    add("input_size", std::to_string(c.input_size));
    add("base_channels", std::to_string(c.base_channels));
    add("use_context", c.use_context ? "true" : "false");
    add("epochs", std::to_string(c.epochs));
    add("batch_size", std::to_string(c.batch_size));
    add("lr", format_double(c.lr));
    add("momentum", format_double(c.momentum));
    add("weight_decay", format_double(c.weight_decay));
    add("lambda_disc", format_double(c.lambda_disc));
    add("lambda_cont", format_double(c.lambda_cont));
    add("weight_c", format_double(c.weight_c));
    add("margin_theta", format_double(c.margin_theta));
    add("continuous_loss", c.continuous_loss);
    add("smooth_l1_t", format_double(c.smooth_l1_t));
    add("seed", std::to_string(c.seed));
    add("out_dir", c.out_dir);
    add("checkpoint_every", std::to_string(c.checkpoint_every));
    return s;
}

inline CombinedLossConfig loss_config(const RunConfig& cfg) {
    CombinedLossConfig lc;
    lc.lambda_disc = cfg.lambda_disc;
    lc.lambda_cont = cfg.lambda_cont;
    lc.weight_c = cfg.weight_c;
    lc.margin_theta = cfg.margin_theta;
    lc.smooth_l1_t = cfg.smooth_l1_t;
    lc.continuous = continuous_loss_from_string(cfg.continuous_loss);
    return lc;
}

inline ModelConfig model_config(const RunConfig& cfg) {
    ModelConfig mc;
    mc.backbone.input_size = cfg.input_size;
    mc.backbone.base_channels = cfg.base_channels;
    mc.use_context = cfg.use_context;
    mc.seed = stream_seed(cfg.seed, 0x6d6f64); // "mod" stream
    return mc;
}

// ---------------------------------------------------------------------------
// Dataset assembly

struct Dataset {
    std::vector<std::string> person_ids;       // sorted
    std::vector<EmotionLabel> labels;
    std::vector<std::vector<double>> body;     // planar 3 x s x s in [0, 1]
    std::vector<std::vector<double>> image;
    int input_size = 0;

    std::size_t size() const { return person_ids.size(); }
};

/// Load every person of `split` (or all persons when nullopt): body crops
/// and whole frames resized to `input_size`, labels aggregated with
/// `policy`. Per-image work is shared between the persons of an image.
inline Dataset load_dataset(const Corpus& corpus, std::optional<Split> split, AggregationPolicy policy,
                            int input_size) {
    Dataset ds;
    ds.input_size = input_size;
    std::map<std::string, std::vector<double>> image_cache;
    std::map<std::string, Image> raw_cache;
    for (const auto& [pid, person] : corpus.persons) {
        if (split) {
            auto it = corpus.splits.find(pid);
            if (it == corpus.splits.end() || it->second != *split) continue;
        }
        auto raw_it = raw_cache.find(person.image_id);
        if (raw_it == raw_cache.end()) {
            // The cache holds at most the current image: person ids sort by
            // image prefix in generated corpora, and even when they do not,
            // correctness is unaffected.
            raw_cache.clear();
            image_cache.clear();
            raw_it = raw_cache.emplace(person.image_id, load_image(corpus.image_path(person.image_id))).first;
        }
        const Image& frame = raw_it->second;
        auto cached = image_cache.find(person.image_id);
        if (cached == image_cache.end())
            cached = image_cache.emplace(person.image_id,
                                         to_planar(resize_bilinear(frame, input_size, input_size))).first;
        ds.person_ids.push_back(pid);
        ds.labels.push_back(aggregate_responses(person.responses, policy));
        ds.body.push_back(to_planar(resize_bilinear(crop(frame, person.bbox), input_size, input_size)));
        ds.image.push_back(cached->second);
    }
    return ds;
}

namespace detail {

inline void fill_batch(const Dataset& ds, const std::vector<std::size_t>& indices, std::size_t begin,
                       std::size_t end, BatchMap& body, BatchMap& image, std::vector<EmotionLabel>& labels) {
    const int n = static_cast<int>(end - begin);
    const int s = ds.input_size;
    body = BatchMap(n, 3, s, s);
    image = BatchMap(n, 3, s, s);
    labels.resize(static_cast<std::size_t>(n));
    const std::size_t stride = static_cast<std::size_t>(3) * static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
    for (int i = 0; i < n; ++i) {
        const std::size_t src = indices[begin + static_cast<std::size_t>(i)];
        std::copy(ds.body[src].begin(), ds.body[src].end(), body.v.begin() + static_cast<long>(i) * static_cast<long>(stride));
        std::copy(ds.image[src].begin(), ds.image[src].end(), image.v.begin() + static_cast<long>(i) * static_cast<long>(stride));
        labels[static_cast<std::size_t>(i)] = ds.labels[src];
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    MeanApResult ap;
    AaeResult aae;
    double jaccard = std::numeric_limits<double>::quiet_NaN();
    std::array<double, kNumCategories> thresholds{};  // the ones used for jaccard
    std::vector<std::array<double, kNumCategories>> scores;  // per sample
    std::vector<std::array<double, kNumDims>> dims;
};

/// Run the model over a dataset (inference mode) and score it. When
/// `thresholds` is absent the P = R thresholds are calibrated on this same
/// dataset before computing the Jaccard overlap.
inline EvalResult evaluate(const Model& model, const Dataset& ds, int batch_size,
                           std::optional<std::array<double, kNumCategories>> thresholds = std::nullopt) {
    if (ds.size() == 0) throw Error("evaluate: empty dataset");
    if (batch_size < 1) throw Error("evaluate: batch_size must be >= 1");
    EvalResult out;
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t begin = 0; begin < ds.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(ds.size(), begin + static_cast<std::size_t>(batch_size));
        BatchMap body, image;
        std::vector<EmotionLabel> labels;
        detail::fill_batch(ds, order, begin, end, body, image, labels);
        ForwardOutput f = model_forward(model, body, image);
        out.scores.insert(out.scores.end(), f.disc.begin(), f.disc.end());
        out.dims.insert(out.dims.end(), f.cont.begin(), f.cont.end());
    }

    std::vector<std::array<double, kNumCategories>> truth(ds.size());
    std::vector<std::array<double, kNumDims>> dims_truth(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        truth[i] = ds.labels[i].discrete;
        dims_truth[i] = ds.labels[i].continuous;
    }
    out.ap = mean_average_precision(out.scores, truth);
    out.aae = average_absolute_error(out.dims, dims_truth);
    out.thresholds = thresholds ? *thresholds : calibrate_thresholds(out.scores, truth);
    out.jaccard = mean_jaccard(out.scores, truth, out.thresholds);
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    int epoch = 0;
    double train_loss_disc = 0.0;
    double train_loss_cont = 0.0;
    double val_map = std::numeric_limits<double>::quiet_NaN();
    double val_aae = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    Model model;
    std::vector<EpochLog> logs;
};

/// Observer invoked after every batch with the epoch (1-based), the batch
/// index within the epoch, and the full loss breakdown.
using LossHook = std::function<void(int epoch, int batch, const BatchLoss&)>;

inline void write_train_log(const std::vector<EpochLog>& logs, std::ostream& out) {
    CsvWriter w(out);
    w.cell("epoch").cell("train_loss_disc").cell("train_loss_cont").cell("val_mAP").cell("val_AAE").endrow();
    for (const auto& log : logs)
        w.cell(log.epoch).cell(log.train_loss_disc).cell(log.train_loss_cont).cell(log.val_map).cell(log.val_aae).endrow();
}

/// SGD with momentum over the combined objective. Checkpoints and the log
/// CSV are written under cfg.out_dir when it is set.
inline TrainResult train(const Corpus& corpus, const RunConfig& cfg, const LossHook& hook = {}) {
    const AggregationPolicy policy = aggregation_policy_from_string(cfg.aggregation);
    Dataset train_ds = load_dataset(corpus, Split::train, policy, cfg.input_size);
    if (train_ds.size() == 0) throw Error("train: the train split is empty");
    Dataset val_ds = load_dataset(corpus, Split::val, policy, cfg.input_size);

    TrainResult result{make_model(model_config(cfg)), {}};
    Model& model = result.model;
    const CombinedLossConfig lc = loss_config(cfg);

    std::map<std::string, std::vector<double>> velocity;
    for (const auto& [name, data] : model.params)
        if (is_trainable_param(name)) velocity[name] = std::vector<double>(data.size(), 0.0);

    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

    std::vector<std::size_t> order(train_ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto rng = make_rng(stream_seed(cfg.seed, 0x65700000ULL + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double sum_disc = 0.0, sum_cont = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < train_ds.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(train_ds.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            BatchMap body, image;
            std::vector<EmotionLabel> labels;
            detail::fill_batch(train_ds, order, begin, end, body, image, labels);

            TrainCache cache;
            ForwardOutput f = model_forward(model, body, image, &cache);
            BatchLoss bl = combined_batch_loss(f.disc, f.cont, labels, lc);
            if (hook) hook(epoch, batches, bl);
            auto grads = model_backward(model, cache, bl.grad_disc, bl.grad_cont);
            update_running_stats(model, cache);

            for (auto& [name, g] : grads) {
                auto& p = model.at(name);
                auto& v = velocity[name];
                for (std::size_t i = 0; i < p.size(); ++i) {
                    v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
                    p[i] -= cfg.lr * v[i];
                }
            }
            sum_disc += bl.discrete;
            sum_cont += bl.continuous;
            ++batches;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss_disc = sum_disc / batches;
        log.train_loss_cont = sum_cont / batches;
        if (val_ds.size() > 0) {
            EvalResult ev = evaluate(model, val_ds, cfg.batch_size);
            log.val_map = ev.ap.mean;
            log.val_aae = ev.aae.mean;
        }
        result.logs.push_back(log);

        if (!cfg.out_dir.empty()) {
            if (cfg.checkpoint_every > 0 &&
                (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
                nlohmann::json meta{{"epoch", epoch}};
                save_checkpoint(to_checkpoint(model, meta), std::filesystem::path(cfg.out_dir) / name);
            }
            std::ofstream log_out(std::filesystem::path(cfg.out_dir) / "train_log.csv");
            write_train_log(result.logs, log_out);
        }
    }
    if (!cfg.out_dir.empty())
        save_checkpoint(to_checkpoint(model, {{"final", true}}), std::filesystem::path(cfg.out_dir) / "final.ckpt");
    return result;
}

// ---------------------------------------------------------------------------
// Context-mode comparison

struct PoolAp {
    double mean_ap = std::numeric_limits<double>::quiet_NaN();
    double chance_ap = std::numeric_limits<double>::quiet_NaN();  // mean prevalence
    int n_defined = 0;
};

inline PoolAp pool_average(const MeanApResult& ap, const std::vector<std::array<double, kNumCategories>>& truth,
                           const std::set<int>& pool) {
    PoolAp out;
    double sum = 0.0, chance = 0.0;
    for (int c : pool) {
        const double v = ap.per_category[static_cast<std::size_t>(c - 1)];
        if (std::isnan(v)) continue;
        sum += v;
        double pos = 0.0;
        for (const auto& t : truth) pos += t[static_cast<std::size_t>(c - 1)] > 0.0 ? 1.0 : 0.0;
        chance += pos / static_cast<double>(truth.size());
        ++out.n_defined;
    }
    if (out.n_defined > 0) {
        out.mean_ap = sum / out.n_defined;
        out.chance_ap = chance / out.n_defined;
    }
    return out;
}

struct ContextComparison {
    EvalResult with_context;  // B+I
    EvalResult body_only;     // B
    PoolAp context_pool_with, context_pool_body;
    PoolAp body_pool_with, body_pool_body;
};

/// Train two models that differ only in `use_context` and evaluate both on
/// `eval_split`. The pools split the categories into body-visible and
/// context-only groups for the headline comparison.
inline ContextComparison compare_context_modes(const Corpus& corpus, const RunConfig& cfg,
                                               const std::set<int>& body_pool,
                                               const std::set<int>& context_pool,
                                               Split eval_split = Split::test) {
    for (int c : body_pool)
        if (!valid_category_id(c)) throw Error("compare_context_modes: bad body pool id " + std::to_string(c));
    for (int c : context_pool)
        if (!valid_category_id(c)) throw Error("compare_context_modes: bad context pool id " + std::to_string(c));

    RunConfig with_cfg = cfg;
    with_cfg.use_context = true;
    RunConfig body_cfg = cfg;
    body_cfg.use_context = false;
    if (!cfg.out_dir.empty()) {
        with_cfg.out_dir = (std::filesystem::path(cfg.out_dir) / "with_context").string();
        body_cfg.out_dir = (std::filesystem::path(cfg.out_dir) / "body_only").string();
    }

    TrainResult with_run = train(corpus, with_cfg);
    TrainResult body_run = train(corpus, body_cfg);

    const AggregationPolicy policy = aggregation_policy_from_string(cfg.aggregation);
    Dataset eval_ds = load_dataset(corpus, eval_split, policy, cfg.input_size);
    if (eval_ds.size() == 0) throw Error("compare_context_modes: evaluation split is empty");

    ContextComparison out;
    out.with_context = evaluate(with_run.model, eval_ds, cfg.batch_size);
    out.body_only = evaluate(body_run.model, eval_ds, cfg.batch_size);

    std::vector<std::array<double, kNumCategories>> truth(eval_ds.size());
    for (std::size_t i = 0; i < eval_ds.size(); ++i) truth[i] = eval_ds.labels[i].discrete;
    out.context_pool_with = pool_average(out.with_context.ap, truth, context_pool);
    out.context_pool_body = pool_average(out.body_only.ap, truth, context_pool);
    out.body_pool_with = pool_average(out.with_context.ap, truth, body_pool);
    out.body_pool_body = pool_average(out.body_only.ap, truth, body_pool);
    return out;
}

// ---------------------------------------------------------------------------
// Feature bench: shallow regressors over extracted branch features

struct FeatureBenchConfig {
    int iterations = 300;
    double lr = 0.5;
    double l2 = 1e-4;
    std::uint64_t seed = 1;
};

struct FeatureBenchResult {
    // Keyed by feature-set name ("body", "body+image", "body+extra", ...).
    std::map<std::string, MeanApResult> ap;
    std::map<std::string, AaeResult> aae;
};

namespace detail {

/// Branch GAP features of every sample, inference mode.
inline void extract_features(const Model& model, const Dataset& ds, int batch_size,
                             std::vector<std::vector<double>>& body_feat,
                             std::vector<std::vector<double>>& image_feat) {
    const int feat = backbone_feature_dim(model.cfg.backbone);
    body_feat.clear();
    image_feat.clear();
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t begin = 0; begin < ds.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(ds.size(), begin + static_cast<std::size_t>(batch_size));
        BatchMap body, image;
        std::vector<EmotionLabel> labels;
        fill_batch(ds, order, begin, end, body, image, labels);
        // Inference-mode branch features (running statistics).
        std::vector<double> fb = branch_forward(model, "body", body, nullptr);
        std::vector<double> fi = branch_forward(model, "image", image, nullptr);
        const int n = static_cast<int>(end - begin);
        for (int i = 0; i < n; ++i) {
            body_feat.emplace_back(fb.begin() + static_cast<long>(i) * feat, fb.begin() + static_cast<long>(i + 1) * feat);
            image_feat.emplace_back(fi.begin() + static_cast<long>(i) * feat, fi.begin() + static_cast<long>(i + 1) * feat);
        }
    }
}

/// Column-wise standardization fitted on the training matrix.
struct Standardizer {
    std::vector<double> mean, scale;
    void fit(const std::vector<std::vector<double>>& x) {
        const std::size_t d = x.front().size();
        mean.assign(d, 0.0);
        scale.assign(d, 0.0);
        for (const auto& row : x)
            for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
        for (auto& m : mean) m /= static_cast<double>(x.size());
        for (const auto& row : x)
            for (std::size_t j = 0; j < d; ++j) scale[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
        for (auto& s : scale) {
            s = std::sqrt(s / static_cast<double>(x.size()));
            if (s < 1e-12) s = 1.0;
        }
    }
    std::vector<double> apply(const std::vector<double>& row) const {
        std::vector<double> out(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / scale[j];
        return out;
    }
};

/// Full-batch gradient descent logistic regression; returns decision scores
/// for the evaluation rows.
inline std::vector<double> logistic_scores(const std::vector<std::vector<double>>& train_x,
                                           const std::vector<int>& train_y,
                                           const std::vector<std::vector<double>>& eval_x,
                                           const FeatureBenchConfig& cfg) {
    const std::size_t d = train_x.front().size();
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    const double n = static_cast<double>(train_x.size());
    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            double z = b;
            for (std::size_t j = 0; j < d; ++j) z += w[j] * train_x[i][j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double g = p - static_cast<double>(train_y[i]);
            gb += g;
            for (std::size_t j = 0; j < d; ++j) gw[j] += g * train_x[i][j];
        }
        for (std::size_t j = 0; j < d; ++j) w[j] -= cfg.lr * (gw[j] / n + cfg.l2 * w[j]);
        b -= cfg.lr * gb / n;
    }
    std::vector<double> scores(eval_x.size());
    for (std::size_t i = 0; i < eval_x.size(); ++i) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * eval_x[i][j];
        scores[i] = z;
    }
    return scores;
}

/// Ridge regression via gradient descent (same budget as the classifier).
inline std::vector<double> linear_predictions(const std::vector<std::vector<double>>& train_x,
                                              const std::vector<double>& train_y,
                                              const std::vector<std::vector<double>>& eval_x,
                                              const FeatureBenchConfig& cfg) {
    const std::size_t d = train_x.front().size();
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    const double n = static_cast<double>(train_x.size());
    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            double z = b;
            for (std::size_t j = 0; j < d; ++j) z += w[j] * train_x[i][j];
            const double g = z - train_y[i];
            gb += g;
            for (std::size_t j = 0; j < d; ++j) gw[j] += g * train_x[i][j];
        }
        for (std::size_t j = 0; j < d; ++j) w[j] -= cfg.lr * (gw[j] / n + cfg.l2 * w[j]);
        b -= cfg.lr * gb / n;
    }
    std::vector<double> preds(eval_x.size());
    for (std::size_t i = 0; i < eval_x.size(); ++i) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * eval_x[i][j];
        preds[i] = z;
    }
    return preds;
}

inline std::vector<std::vector<double>> concat_features(const std::vector<std::vector<double>>& a,
                                                        const std::vector<std::vector<double>>& b) {
    std::vector<std::vector<double>> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i];
        out[i].insert(out[i].end(), b[i].begin(), b[i].end());
    }
    return out;
}

} // namespace detail

/// Fit per-category logistic classifiers and per-dimension linear
/// regressors on frozen branch features, for the body features alone and
/// for body plus whole-image features. `extra` optionally adds a third
/// feature set (for example scene annotations) concatenated to the body
/// features; rows must align with the datasets.
inline FeatureBenchResult feature_bench(const Model& model, const Dataset& train_ds, const Dataset& eval_ds,
                                        const FeatureBenchConfig& cfg,
                                        const std::vector<std::vector<double>>* extra_train = nullptr,
                                        const std::vector<std::vector<double>>* extra_eval = nullptr) {
    if (train_ds.size() == 0 || eval_ds.size() == 0) throw Error("feature_bench: empty dataset");
    if ((extra_train == nullptr) != (extra_eval == nullptr))
        throw Error("feature_bench: extra features must cover both datasets");
    if (extra_train && (extra_train->size() != train_ds.size() || extra_eval->size() != eval_ds.size()))
        throw Error("feature_bench: extra feature rows do not align with the datasets");

    std::vector<std::vector<double>> train_body, train_image, eval_body, eval_image;
    detail::extract_features(model, train_ds, 16, train_body, train_image);
    detail::extract_features(model, eval_ds, 16, eval_body, eval_image);

    std::map<std::string, std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>>> sets;
    sets["body"] = {train_body, eval_body};
    sets["body+image"] = {detail::concat_features(train_body, train_image),
                          detail::concat_features(eval_body, eval_image)};
    if (extra_train)
        sets["body+extra"] = {detail::concat_features(train_body, *extra_train),
                              detail::concat_features(eval_body, *extra_eval)};

    FeatureBenchResult out;
    for (auto& [name, tv] : sets) {
        auto& [train_x_raw, eval_x_raw] = tv;
        detail::Standardizer std_;
        std_.fit(train_x_raw);
        std::vector<std::vector<double>> train_x(train_x_raw.size()), eval_x(eval_x_raw.size());
        for (std::size_t i = 0; i < train_x_raw.size(); ++i) train_x[i] = std_.apply(train_x_raw[i]);
        for (std::size_t i = 0; i < eval_x_raw.size(); ++i) eval_x[i] = std_.apply(eval_x_raw[i]);

        std::vector<std::array<double, kNumCategories>> scores(eval_x.size());
        for (int c = 0; c < kNumCategories; ++c) {
            std::vector<int> y(train_x.size());
            std::size_t npos = 0;
            for (std::size_t i = 0; i < train_x.size(); ++i) {
                y[i] = train_ds.labels[i].discrete[static_cast<std::size_t>(c)] > 0.0 ? 1 : 0;
                npos += static_cast<std::size_t>(y[i]);
            }
            if (npos == 0 || npos == train_x.size()) {
                for (auto& row : scores) row[static_cast<std::size_t>(c)] = 0.0;
                continue;
            }
            std::vector<double> s = detail::logistic_scores(train_x, y, eval_x, cfg);
            for (std::size_t i = 0; i < s.size(); ++i) scores[i][static_cast<std::size_t>(c)] = s[i];
        }
        std::vector<std::array<double, kNumCategories>> truth(eval_x.size());
        for (std::size_t i = 0; i < eval_x.size(); ++i) truth[i] = eval_ds.labels[i].discrete;
        out.ap[name] = mean_average_precision(scores, truth);

        std::vector<std::array<double, kNumDims>> dim_pred(eval_x.size());
        for (int k = 0; k < kNumDims; ++k) {
            std::vector<std::vector<double>> tx;
            std::vector<double> ty;
            for (std::size_t i = 0; i < train_x.size(); ++i) {
                if (!train_ds.labels[i].has_continuous()) continue;
                tx.push_back(train_x[i]);
                ty.push_back(train_ds.labels[i].continuous[static_cast<std::size_t>(k)]);
            }
            if (tx.empty()) {
                for (auto& row : dim_pred) row[static_cast<std::size_t>(k)] = 0.5;
                continue;
            }
            std::vector<double> p = detail::linear_predictions(tx, ty, eval_x, cfg);
            for (std::size_t i = 0; i < p.size(); ++i) dim_pred[i][static_cast<std::size_t>(k)] = p[i];
        }
        std::vector<std::array<double, kNumDims>> dim_truth(eval_x.size());
        for (std::size_t i = 0; i < eval_x.size(); ++i) dim_truth[i] = eval_ds.labels[i].continuous;
        out.aae[name] = average_absolute_error(dim_pred, dim_truth);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSearchEntry {
    std::map<std::string, std::string> overrides;
    double val_map = std::numeric_limits<double>::quiet_NaN();
    double val_aae = std::numeric_limits<double>::quiet_NaN();
};

struct GridSearchResult {
    std::vector<GridSearchEntry> entries;
    std::size_t best_index = 0;
    RunConfig best_config;
};

/// Train one model per point of the Cartesian product of `grid` values
/// (applied over `base`) and rank them by validation mAP (ties: lower AAE,
/// then earlier entry). Unknown override keys fail like unknown config keys.
inline GridSearchResult grid_search(const Corpus& corpus, const RunConfig& base,
                                    const std::map<std::string, std::vector<std::string>>& grid) {
    if (grid.empty()) throw Error("grid_search: empty grid");
    for (const auto& [key, values] : grid) {
        if (values.empty()) throw Error("grid_search: key '" + key + "' has no values");
        RunConfig probe = base;
        apply_config_entry(probe, key, values.front());  // validates the key early
    }

    std::vector<std::pair<std::string, std::vector<std::string>>> axes(grid.begin(), grid.end());
    std::vector<std::size_t> cursor(axes.size(), 0);
    GridSearchResult result;

    bool done = false;
    while (!done) {
        GridSearchEntry entry;
        RunConfig cfg = base;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            entry.overrides[axes[a].first] = axes[a].second[cursor[a]];
            apply_config_entry(cfg, axes[a].first, axes[a].second[cursor[a]]);
        }
        if (!base.out_dir.empty()) {
            std::string tag;
            for (const auto& [k, v] : entry.overrides) tag += (tag.empty() ? "" : "_") + k + "-" + v;
            cfg.out_dir = (std::filesystem::path(base.out_dir) / tag).string();
        }
        TrainResult run = train(corpus, cfg);
        if (!run.logs.empty()) {
            entry.val_map = run.logs.back().val_map;
            entry.val_aae = run.logs.back().val_aae;
        }
        result.entries.push_back(std::move(entry));

        // Advance the mixed-radix cursor.
        std::size_t a = 0;
        for (; a < axes.size(); ++a) {
            if (++cursor[a] < axes[a].second.size()) break;
            cursor[a] = 0;
        }
        done = a == axes.size();
    }

    for (std::size_t i = 1; i < result.entries.size(); ++i) {
        const auto& cur = result.entries[i];
        const auto& best = result.entries[result.best_index];
        const bool better =
            (std::isnan(best.val_map) && !std::isnan(cur.val_map)) ||
            (!std::isnan(cur.val_map) && cur.val_map > best.val_map) ||
            (!std::isnan(cur.val_map) && cur.val_map == best.val_map && cur.val_aae < best.val_aae);
        if (better) result.best_index = i;
    }
    result.best_config = base;
    for (const auto& [k, v] : result.entries[result.best_index].overrides)
        apply_config_entry(result.best_config, k, v);
    return result;
}

} // namespace emoscene
