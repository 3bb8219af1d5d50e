// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 1 user error (bad
// arguments, missing or malformed files), 2 internal error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "emoscene/analysis.hpp"
#include "emoscene/engine.hpp"
#include "emoscene/synth.hpp"

namespace fs = std::filesystem;
using namespace emoscene;

namespace {

std::optional<Split> parse_split_arg(const std::string& s) {
    if (s == "all") return std::nullopt;
    return split_from_string(s);  // throws Error on anything else
}

/// Aggregated labels of the persons in `split` (all persons when nullopt),
/// in sorted person-id order.
std::vector<EmotionLabel> collect_labels(const Corpus& corpus, std::optional<Split> split,
                                         AggregationPolicy policy) {
    std::vector<EmotionLabel> labels;
    for (const auto& [pid, person] : corpus.persons) {
        if (split) {
            auto it = corpus.splits.find(pid);
            if (it == corpus.splits.end() || it->second != *split) continue;
        }
        labels.push_back(aggregate_responses(person.responses, policy));
    }
    if (labels.empty()) throw Error("no persons selected (empty split?)");
    return labels;
}

/// Writes through to the file when a path is given, else to stdout.
class OutputTarget {
  public:
    explicit OutputTarget(const std::string& path) {
        if (!path.empty()) {
            if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
                fs::create_directories(parent);
            file_.open(path);
            if (!file_) throw Error("cannot write to '" + path + "'");
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

  private:
    std::ofstream file_;
};

std::set<int> parse_id_set(const std::string& csv) {
    std::set<int> ids;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            std::size_t used = 0;
            const int id = std::stoi(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            ids.insert(id);
        } catch (const std::exception&) {
            throw Error("malformed category id '" + tok + "'");
        }
    }
    if (ids.empty()) throw Error("empty category id list");
    return ids;
}

std::map<std::string, std::set<std::string>> load_tags(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read tags file '" + path.string() + "'");
    std::map<std::string, std::set<std::string>> tags;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line == "image_id,tag") continue;  // optional header
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 'image_id,tag'");
        const std::string img = trim(line.substr(0, comma));
        const std::string tag = trim(line.substr(comma + 1));
        if (img.empty() || tag.empty())
            throw Error(path.string() + ":" + std::to_string(line_no) + ": empty image id or tag");
        tags[img].insert(tag);
    }
    if (tags.empty()) throw Error("tags file '" + path.string() + "' has no entries");
    return tags;
}

RunConfig load_config_with_overrides(const std::string& config_path, const std::string& manifest_override,
                                     std::optional<std::uint64_t> seed_override,
                                     const std::string& out_dir_override) {
    RunConfig cfg = load_run_config(config_path);
    if (!manifest_override.empty()) cfg.manifest = manifest_override;
    if (seed_override) cfg.seed = *seed_override;
    if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
    if (cfg.manifest.empty()) throw Error("no manifest: set 'manifest' in the config or pass --manifest");
    return cfg;
}

void write_eval_csv(const EvalResult& ev, std::ostream& out) {
    CsvWriter w(out);
    w.cell("metric").cell("index").cell("name").cell("value").endrow();
    w.cell("mAP").cell("").cell("").cell(ev.ap.mean).endrow();
    w.cell("jaccard").cell("").cell("").cell(ev.jaccard).endrow();
    w.cell("AAE_mean").cell("").cell("").cell(ev.aae.mean).endrow();
    for (int c = 1; c <= kNumCategories; ++c)
        w.cell("AP").cell(c).cell(std::string(category_name(c))).cell(ev.ap.per_category[static_cast<std::size_t>(c - 1)]).endrow();
    for (int k = 0; k < kNumDims; ++k)
        w.cell("AAE").cell(k + 1).cell(std::string(kDimNames[static_cast<std::size_t>(k)])).cell(ev.aae.per_dim[static_cast<std::size_t>(k)]).endrow();
    for (int c = 1; c <= kNumCategories; ++c)
        w.cell("threshold").cell(c).cell(std::string(category_name(c))).cell(ev.thresholds[static_cast<std::size_t>(c - 1)]).endrow();
}

void write_comparison_csv(const ContextComparison& cmp, std::ostream& out) {
    CsvWriter w(out);
    w.cell("metric").cell("mode").cell("index").cell("name").cell("value").endrow();
    const auto summary = [&](const char* metric, const char* mode, double v) {
        w.cell(metric).cell(mode).cell("").cell("").cell(v).endrow();
    };
    summary("mAP", "with_context", cmp.with_context.ap.mean);
    summary("mAP", "body_only", cmp.body_only.ap.mean);
    summary("context_pool_AP", "with_context", cmp.context_pool_with.mean_ap);
    summary("context_pool_AP", "body_only", cmp.context_pool_body.mean_ap);
    summary("context_pool_chance_AP", "", cmp.context_pool_with.chance_ap);
    summary("body_pool_AP", "with_context", cmp.body_pool_with.mean_ap);
    summary("body_pool_AP", "body_only", cmp.body_pool_body.mean_ap);
    summary("AAE_mean", "with_context", cmp.with_context.aae.mean);
    summary("AAE_mean", "body_only", cmp.body_only.aae.mean);
    for (int c = 1; c <= kNumCategories; ++c) {
        w.cell("AP").cell("with_context").cell(c).cell(std::string(category_name(c)))
            .cell(cmp.with_context.ap.per_category[static_cast<std::size_t>(c - 1)]).endrow();
        w.cell("AP").cell("body_only").cell(c).cell(std::string(category_name(c)))
            .cell(cmp.body_only.ap.per_category[static_cast<std::size_t>(c - 1)]).endrow();
    }
}

void write_bench_csv(const FeatureBenchResult& res, std::ostream& out) {
    CsvWriter w(out);
    w.cell("feature_set").cell("metric").cell("index").cell("name").cell("value").endrow();
    for (const auto& [set_name, ap] : res.ap) {
        w.cell(set_name).cell("mAP").cell("").cell("").cell(ap.mean).endrow();
        for (int c = 1; c <= kNumCategories; ++c)
            w.cell(set_name).cell("AP").cell(c).cell(std::string(category_name(c)))
                .cell(ap.per_category[static_cast<std::size_t>(c - 1)]).endrow();
    }
    for (const auto& [set_name, aae] : res.aae) {
        w.cell(set_name).cell("AAE_mean").cell("").cell("").cell(aae.mean).endrow();
        for (int k = 0; k < kNumDims; ++k)
            w.cell(set_name).cell("AAE").cell(k + 1).cell(std::string(kDimNames[static_cast<std::size_t>(k)]))
                .cell(aae.per_dim[static_cast<std::size_t>(k)]).endrow();
    }
}

std::map<std::string, std::vector<std::string>> load_grid(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read grid file '" + path.string() + "'");
    std::map<std::string, std::vector<std::string>> grid;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 'key = v1, v2, ...'");
        const std::string key = trim(line.substr(0, eq));
        std::vector<std::string> values;
        std::stringstream ss(line.substr(eq + 1));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) values.push_back(tok);
        }
        if (key.empty() || values.empty())
            throw Error(path.string() + ":" + std::to_string(line_no) + ": empty key or value list");
        grid[key] = values;
    }
    if (grid.empty()) throw Error("grid file '" + path.string() + "' has no entries");
    return grid;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"emoscene: apparent-emotion recognition with scene context"};
    app.set_version_flag("--version", "emoscene 0.1.0");
    app.require_subcommand(1);

    int workers = 1;  // reserved: the pipeline is single-threaded today
    app.add_option("--workers", workers, "Worker threads (reserved, currently ignored)")
        ->check(CLI::PositiveNumber);
    std::string format = "csv";
    app.add_option("--format", format, "Output format")->check(CLI::IsMember({"csv"}));

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with context-only signal");
    struct {
        std::string out;
        SynthSpec spec;
    } sy;
    synth->add_option("--out", sy.out, "Output directory")->required();
    synth->add_option("--images", sy.spec.n_images, "Number of images");
    synth->add_option("--min-persons", sy.spec.min_persons, "Minimum persons per image");
    synth->add_option("--max-persons", sy.spec.max_persons, "Maximum persons per image");
    synth->add_option("--annotators", sy.spec.n_annotators, "Annotators per person");
    synth->add_option("--noise", sy.spec.annotator_noise, "Annotator perturbation probability");
    synth->add_option("--p-two-body", sy.spec.p_two_body, "Chance of a second body category");
    synth->add_option("--p-two-context", sy.spec.p_two_context, "Chance of a second context category");
    synth->add_flag("--no-context-signal", [&](std::int64_t) { sy.spec.context_signal = false; },
                    "Null-context control: no context categories or patches");
    synth->add_option("--train-frac", sy.spec.split_fractions[0], "Train split fraction");
    synth->add_option("--val-frac", sy.spec.split_fractions[1], "Val split fraction");
    synth->add_option("--test-frac", sy.spec.split_fractions[2], "Test split fraction");
    synth->add_option("--seed", sy.spec.seed, "Generator seed");
    synth->callback([&] {
        const SynthResult res = generate_synthetic(sy.spec, sy.out);
        std::cout << "wrote " << res.corpus.images.size() << " images, " << res.corpus.persons.size()
                  << " persons -> " << (fs::path(sy.out) / "manifest.jsonl").string() << "\n";
    });

    // --- corpus analysis ----------------------------------------------
    struct {
        std::string manifest, out, split = "all", aggregation = "union", dims_out;
        int k = 0;
        std::uint64_t seed = 1;
        std::string tags;
    } an;

    auto* stats = app.add_subcommand("stats", "Corpus statistics");
    stats->add_option("--manifest", an.manifest, "Corpus manifest")->required();
    stats->add_option("--out", an.out, "Output CSV (stdout when omitted)");
    stats->add_option("--dims-out", an.dims_out, "Also write the dimension-by-category table here");
    stats->callback([&] {
        const Corpus corpus = load_corpus(an.manifest);
        OutputTarget target(an.out);
        write_statistics_csv(corpus_statistics(corpus), target.stream());
        if (!an.dims_out.empty()) {
            OutputTarget dims_target(an.dims_out);
            write_dimension_by_category_csv(
                dimension_by_category(collect_labels(corpus, std::nullopt, AggregationPolicy::Union)),
                dims_target.stream());
        }
    });

    auto* agreement = app.add_subcommand("agreement", "Annotator agreement report");
    agreement->add_option("--manifest", an.manifest, "Corpus manifest")->required();
    agreement->add_option("--split", an.split, "train|val|test|all");
    agreement->add_option("--out", an.out, "Output CSV (stdout when omitted)");
    agreement->callback([&] {
        const Corpus corpus = load_corpus(an.manifest);
        OutputTarget target(an.out);
        write_agreement_csv(agreement_report(corpus, parse_split_arg(an.split)), target.stream());
    });

    auto* cooccur = app.add_subcommand("cooccur", "Category co-occurrence matrix");
    cooccur->add_option("--manifest", an.manifest, "Corpus manifest")->required();
    cooccur->add_option("--split", an.split, "train|val|test|all");
    cooccur->add_option("--aggregation", an.aggregation, "union|majority|fraction");
    cooccur->add_option("--out", an.out, "Output CSV (stdout when omitted)");
    cooccur->callback([&] {
        const Corpus corpus = load_corpus(an.manifest);
        const auto labels =
            collect_labels(corpus, parse_split_arg(an.split), aggregation_policy_from_string(an.aggregation));
        OutputTarget target(an.out);
        write_cooccurrence_csv(cooccurrence(labels), target.stream());
    });

    auto* cluster = app.add_subcommand("cluster", "Cluster category patterns (k-means)");
    cluster->add_option("--manifest", an.manifest, "Corpus manifest")->required();
    cluster->add_option("--k", an.k, "Number of clusters")->required()->check(CLI::PositiveNumber);
    cluster->add_option("--seed", an.seed, "Clustering seed");
    cluster->add_option("--split", an.split, "train|val|test|all");
    cluster->add_option("--out", an.out, "Output CSV (stdout when omitted)");
    cluster->callback([&] {
        const Corpus corpus = load_corpus(an.manifest);
        const auto labels = collect_labels(corpus, parse_split_arg(an.split), AggregationPolicy::Union);
        OutputTarget target(an.out);
        write_clusters_csv(cluster_category_patterns(labels, an.k, an.seed), target.stream());
    });

    auto* crosstab = app.add_subcommand("crosstab", "Cross-tabulate emotions against external image tags");
    crosstab->add_option("--manifest", an.manifest, "Corpus manifest")->required();
    crosstab->add_option("--tags", an.tags, "CSV of image_id,tag rows")->required();
    crosstab->add_option("--out", an.out, "Output CSV (stdout when omitted)");
    crosstab->callback([&] {
        const Corpus corpus = load_corpus(an.manifest);
        OutputTarget target(an.out);
        write_crosstab_csv(cross_tabulate(corpus, load_tags(an.tags)), target.stream());
    });

    // --- training and evaluation --------------------------------------
    struct {
        std::string config, manifest, out_dir, checkpoint, out;
        std::string split = "test", calibrate_split;
        std::string body_pool = "1,2,3,4,5,6,7,8,9,10,11,12,13";
        std::string context_pool = "14,15,16,17,18,19,20,21,22,23,24,25,26";
        std::string grid;
        std::optional<std::uint64_t> seed;
        int iterations = 300;
        double lr = 0.5, l2 = 1e-4;
    } tr;

    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", tr.config, "Run config file")->required();
    train_cmd->add_option("--manifest", tr.manifest, "Override the config's manifest");
    train_cmd->add_option("--seed", tr.seed, "Override the config's seed");
    train_cmd->add_option("--out", tr.out_dir, "Override the config's out_dir");
    train_cmd->callback([&] {
        const RunConfig cfg = load_config_with_overrides(tr.config, tr.manifest, tr.seed, tr.out_dir);
        const Corpus corpus = load_corpus(cfg.manifest);
        const TrainResult run = train(corpus, cfg);
        const EpochLog& last = run.logs.back();
        std::cout << "trained " << cfg.epochs << " epochs: train_loss_disc=" << format_double(last.train_loss_disc)
                  << " train_loss_cont=" << format_double(last.train_loss_cont);
        if (!std::isnan(last.val_map))
            std::cout << " val_mAP=" << format_double(last.val_map) << " val_AAE=" << format_double(last.val_aae);
        std::cout << "\n";
        if (!cfg.out_dir.empty()) std::cout << "checkpoints in " << cfg.out_dir << "\n";
    });

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval_cmd->add_option("--config", tr.config, "Run config file")->required();
    eval_cmd->add_option("--checkpoint", tr.checkpoint, "Model checkpoint")->required();
    eval_cmd->add_option("--split", tr.split, "train|val|test");
    eval_cmd->add_option("--calibrate-split", tr.calibrate_split,
                         "Calibrate P=R thresholds on this split instead of the evaluation split");
    eval_cmd->add_option("--out", tr.out, "Metrics CSV (stdout when omitted)");
    eval_cmd->callback([&] {
        const RunConfig cfg = load_config_with_overrides(tr.config, tr.manifest, tr.seed, "");
        const Corpus corpus = load_corpus(cfg.manifest);
        const Model model = model_from_checkpoint(load_checkpoint(tr.checkpoint));
        const int input = model.cfg.backbone.input_size;
        const AggregationPolicy policy = aggregation_policy_from_string(cfg.aggregation);
        const Dataset eval_ds = load_dataset(corpus, split_from_string(tr.split), policy, input);
        std::optional<std::array<double, kNumCategories>> thresholds;
        if (!tr.calibrate_split.empty()) {
            const Dataset cal_ds = load_dataset(corpus, split_from_string(tr.calibrate_split), policy, input);
            thresholds = evaluate(model, cal_ds, cfg.batch_size).thresholds;
        }
        const EvalResult ev = evaluate(model, eval_ds, cfg.batch_size, thresholds);
        OutputTarget target(tr.out);
        write_eval_csv(ev, target.stream());
        std::cerr << "mAP=" << format_double(ev.ap.mean) << " AAE=" << format_double(ev.aae.mean)
                  << " jaccard=" << format_double(ev.jaccard) << "\n";
    });

    auto* compare = app.add_subcommand("compare-context", "Train body-only vs body+context and compare");
    compare->add_option("--config", tr.config, "Run config file")->required();
    compare->add_option("--body-pool", tr.body_pool, "Comma-separated body category ids");
    compare->add_option("--context-pool", tr.context_pool, "Comma-separated context category ids");
    compare->add_option("--split", tr.split, "Evaluation split");
    compare->add_option("--out", tr.out, "Comparison CSV (stdout when omitted)");
    compare->callback([&] {
        const RunConfig cfg = load_config_with_overrides(tr.config, tr.manifest, tr.seed, tr.out_dir);
        const Corpus corpus = load_corpus(cfg.manifest);
        const ContextComparison cmp = compare_context_modes(
            corpus, cfg, parse_id_set(tr.body_pool), parse_id_set(tr.context_pool), split_from_string(tr.split));
        OutputTarget target(tr.out);
        write_comparison_csv(cmp, target.stream());
        std::cerr << "context pool AP: with_context=" << format_double(cmp.context_pool_with.mean_ap)
                  << " body_only=" << format_double(cmp.context_pool_body.mean_ap)
                  << " chance=" << format_double(cmp.context_pool_with.chance_ap) << "\n"
                  << "body pool AP:    with_context=" << format_double(cmp.body_pool_with.mean_ap)
                  << " body_only=" << format_double(cmp.body_pool_body.mean_ap) << "\n";
    });

    auto* bench = app.add_subcommand("feature-bench", "Shallow regressors over frozen branch features");
    bench->add_option("--config", tr.config, "Run config file")->required();
    bench->add_option("--checkpoint", tr.checkpoint, "Trained model checkpoint")->required();
    bench->add_option("--train-split", tr.calibrate_split, "Split the regressors are fitted on (default train)");
    bench->add_option("--split", tr.split, "Evaluation split");
    bench->add_option("--iterations", tr.iterations, "Gradient-descent iterations")->check(CLI::PositiveNumber);
    bench->add_option("--lr", tr.lr, "Regressor learning rate");
    bench->add_option("--l2", tr.l2, "Regressor L2 penalty");
    bench->add_option("--out", tr.out, "Bench CSV (stdout when omitted)");
    bench->callback([&] {
        const RunConfig cfg = load_config_with_overrides(tr.config, tr.manifest, tr.seed, "");
        const Corpus corpus = load_corpus(cfg.manifest);
        const Model model = model_from_checkpoint(load_checkpoint(tr.checkpoint));
        const int input = model.cfg.backbone.input_size;
        const AggregationPolicy policy = aggregation_policy_from_string(cfg.aggregation);
        const Split fit_split = tr.calibrate_split.empty() ? Split::train : split_from_string(tr.calibrate_split);
        const Dataset fit_ds = load_dataset(corpus, fit_split, policy, input);
        const Dataset eval_ds = load_dataset(corpus, split_from_string(tr.split), policy, input);
        FeatureBenchConfig fb;
        fb.iterations = tr.iterations;
        fb.lr = tr.lr;
        fb.l2 = tr.l2;
        fb.seed = cfg.seed;
        const FeatureBenchResult res = feature_bench(model, fit_ds, eval_ds, fb);
        OutputTarget target(tr.out);
        write_bench_csv(res, target.stream());
    });

    auto* grid_cmd = app.add_subcommand("grid-search", "Train over a config grid and rank by val mAP");
    grid_cmd->add_option("--config", tr.config, "Base run config file")->required();
    grid_cmd->add_option("--grid", tr.grid, "Grid file: lines of 'key = v1, v2, ...'")->required();
    grid_cmd->add_option("--out", tr.out, "Results CSV (stdout when omitted)");
    grid_cmd->callback([&] {
        const RunConfig base = load_config_with_overrides(tr.config, tr.manifest, tr.seed, tr.out_dir);
        const Corpus corpus = load_corpus(base.manifest);
        const GridSearchResult res = grid_search(corpus, base, load_grid(tr.grid));
        OutputTarget target(tr.out);
        CsvWriter w(target.stream());
        w.cell("rank").cell("overrides").cell("val_mAP").cell("val_AAE").endrow();
        for (std::size_t i = 0; i < res.entries.size(); ++i) {
            std::string overrides;
            for (const auto& [k, v] : res.entries[i].overrides)
                overrides += (overrides.empty() ? "" : " ") + k + "=" + v;
            w.cell(i == res.best_index ? std::string("best") : std::to_string(i))
                .cell(overrides).cell(res.entries[i].val_map).cell(res.entries[i].val_aae).endrow();
        }
        const auto& best = res.entries[res.best_index];
        std::cerr << "best: ";
        for (const auto& [k, v] : best.overrides) std::cerr << k << "=" << v << " ";
        std::cerr << "val_mAP=" << format_double(best.val_map) << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
