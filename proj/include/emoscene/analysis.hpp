// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Annotation-agreement and dataset-statistics computations: Fleiss' kappa,
// per-person agreement, dimension dispersion, category co-occurrence,
// k-means category grouping, per-category dimension profiles, corpus counts,
// and cross-tabulation against external image labels. Everything here is a
// pure function over immutable inputs.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "emoscene/core.hpp"
#include "emoscene/corpus.hpp"
#include "emoscene/csv.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Fleiss' kappa

/// Chance-corrected agreement for `raters` raters over an items x categories
/// count table. Each row must sum to `raters`. Returns exactly 1.0 under
/// perfect observed agreement; throws "undefined kappa" when all mass sits
/// in a single category (expected agreement 1).
inline double fleiss_kappa(const std::vector<std::vector<int>>& ratings, int raters) {
    const std::size_t n_items = ratings.size();
    if (n_items < 2) throw Error("fleiss_kappa: need at least 2 items");
    if (raters < 2) throw Error("fleiss_kappa: need at least 2 raters");
    const std::size_t n_cats = ratings.front().size();
    if (n_cats < 1) throw Error("fleiss_kappa: need at least 1 category");

    const double n = raters;
    double observed_sum = 0.0;
    std::vector<double> col_sum(n_cats, 0.0);
    for (std::size_t i = 0; i < n_items; ++i) {
        if (ratings[i].size() != n_cats) throw Error("fleiss_kappa: ragged table");
        int row_total = 0;
        double sq = 0.0;
        for (std::size_t j = 0; j < n_cats; ++j) {
            int v = ratings[i][j];
            if (v < 0) throw Error("fleiss_kappa: negative count");
            row_total += v;
            sq += static_cast<double>(v) * v;
            col_sum[j] += v;
        }
        if (row_total != raters)
            throw Error("fleiss_kappa: item " + std::to_string(i) + " counts sum to " +
                        std::to_string(row_total) + ", expected " + std::to_string(raters));
        observed_sum += (sq - n) / (n * (n - 1.0));
    }
    const double p_obs = observed_sum / static_cast<double>(n_items);
    double p_exp = 0.0;
    for (std::size_t j = 0; j < n_cats; ++j) {
        double p = col_sum[j] / (static_cast<double>(n_items) * n);
        p_exp += p * p;
    }
    if (p_exp >= 1.0) throw Error("undefined kappa");
    if (p_obs == 1.0) return 1.0;
    return (p_obs - p_exp) / (1.0 - p_exp);
}

// ---------------------------------------------------------------------------
// Per-person agreement

/// Fraction of valid responses (over a set of persons) selecting each
/// category; the chance-agreement baseline for person_agreement.
inline std::array<double, kNumCategories> category_prevalence(const Corpus& corpus,
                                                              std::optional<Split> split = std::nullopt) {
    std::array<double, kNumCategories> counts{};
    double total = 0.0;
    for (const auto& [pid, p] : corpus.persons) {
        if (split) {
            auto it = corpus.splits.find(pid);
            if (it == corpus.splits.end() || it->second != *split) continue;
        }
        for (const auto& r : p.responses) {
            if (!r.valid) continue;
            total += 1.0;
            for (int id : r.categories) counts[static_cast<std::size_t>(id - 1)] += 1.0;
        }
    }
    if (total == 0.0) return counts;  // all zeros
    for (double& c : counts) c /= total;
    return counts;
}

/// Mean per-category binary kappa for one person's annotators.
///
/// For each category the observed agreement comes from this person's
/// selected/not-selected counts; the expected agreement comes from the
/// supplied prevalence (a single person cannot estimate chance on its own).
/// Categories with prevalence 0 or 1 have undefined kappa and are left out
/// of the mean.
inline double person_agreement(const PersonAnnotation& person,
                               const std::array<double, kNumCategories>& prevalence) {
    std::vector<const AnnotatorResponse*> valid;
    for (const auto& r : person.responses)
        if (r.valid) valid.push_back(&r);
    const double n = static_cast<double>(valid.size());
    if (valid.size() < 2) throw Error("person_agreement: person '" + person.person_id + "' has fewer than 2 valid responses");

    double sum = 0.0;
    int defined = 0;
    for (int i = 0; i < kNumCategories; ++i) {
        double pi = prevalence[static_cast<std::size_t>(i)];
        double p_exp = pi * pi + (1.0 - pi) * (1.0 - pi);
        if (p_exp >= 1.0) continue;
        double selected = 0.0;
        for (const auto* r : valid) selected += r->categories.count(i + 1) ? 1.0 : 0.0;
        double unselected = n - selected;
        double p_obs = (selected * (selected - 1.0) + unselected * (unselected - 1.0)) / (n * (n - 1.0));
        sum += (p_obs - p_exp) / (1.0 - p_exp);
        ++defined;
    }
    if (defined == 0) throw Error("person_agreement: no category has defined kappa");
    return sum / defined;
}

/// Population standard deviation of each raw dimension over a person's
/// valid dimension-bearing responses. Needs at least two of them.
inline ContinuousDims dimension_sd(const PersonAnnotation& person) {
    std::vector<ContinuousDims> dims;
    for (const auto& r : person.responses)
        if (r.valid && r.dims) dims.push_back(*r.dims);
    if (dims.size() < 2)
        throw Error("dimension_sd: person '" + person.person_id + "' has fewer than 2 valid responses with dims");
    ContinuousDims sd;
    const double n = static_cast<double>(dims.size());
    for (int k = 0; k < kNumDims; ++k) {
        double mean = 0.0;
        for (const auto& d : dims) mean += d[k];
        mean /= n;
        double var = 0.0;
        for (const auto& d : dims) var += (d[k] - mean) * (d[k] - mean);
        sd[k] = std::sqrt(var / n);
    }
    return sd;
}

struct AgreementReport {
    std::map<std::string, double> per_person_kappa;
    // Per category: the fraction of annotators agreeing, one entry per
    // (person, category) pair in which at least one annotator chose it.
    std::array<std::vector<double>, kNumCategories> per_category_agreement;
    std::array<std::vector<double>, kNumDims> per_dim_sd;  // raw 1..10 scale

    double mean_kappa = kNaN;
    std::array<double, kNumCategories> mean_agreement{};
    std::array<double, kNumDims> mean_sd{};
};

/// Full agreement analysis over one split (or the whole corpus). Persons
/// with a single valid response contribute nothing; they carry no
/// between-annotator signal.
inline AgreementReport agreement_report(const Corpus& corpus, std::optional<Split> split = std::nullopt) {
    AgreementReport rep;
    rep.mean_agreement.fill(kNaN);
    rep.mean_sd.fill(kNaN);
    auto prevalence = category_prevalence(corpus, split);
    // A split where every category's prevalence is 0 or 1 carries no
    // chance-correctable signal; report no kappas instead of failing.
    bool kappa_defined = false;
    for (double pi : prevalence) kappa_defined = kappa_defined || (pi > 0.0 && pi < 1.0);

    for (const auto& [pid, person] : corpus.persons) {
        if (split) {
            auto it = corpus.splits.find(pid);
            if (it == corpus.splits.end() || it->second != *split) continue;
        }
        std::vector<const AnnotatorResponse*> valid;
        for (const auto& r : person.responses)
            if (r.valid) valid.push_back(&r);
        if (valid.size() >= 2) {
            if (kappa_defined) rep.per_person_kappa[pid] = person_agreement(person, prevalence);
            const double n = static_cast<double>(valid.size());
            for (int i = 0; i < kNumCategories; ++i) {
                double selected = 0.0;
                for (const auto* r : valid) selected += r->categories.count(i + 1) ? 1.0 : 0.0;
                if (selected > 0.0) rep.per_category_agreement[static_cast<std::size_t>(i)].push_back(selected / n);
            }
        }
        std::size_t with_dims = 0;
        for (const auto* r : valid)
            if (r->dims) ++with_dims;
        if (with_dims >= 2) {
            ContinuousDims sd = dimension_sd(person);
            for (int k = 0; k < kNumDims; ++k) rep.per_dim_sd[static_cast<std::size_t>(k)].push_back(sd[k]);
        }
    }

    auto mean_of = [](const std::vector<double>& v) {
        if (v.empty()) return kNaN;
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    if (!rep.per_person_kappa.empty()) {
        double s = 0.0;
        for (const auto& [pid, k] : rep.per_person_kappa) s += k;
        rep.mean_kappa = s / static_cast<double>(rep.per_person_kappa.size());
    }
    for (int i = 0; i < kNumCategories; ++i)
        rep.mean_agreement[static_cast<std::size_t>(i)] = mean_of(rep.per_category_agreement[static_cast<std::size_t>(i)]);
    for (int k = 0; k < kNumDims; ++k) rep.mean_sd[static_cast<std::size_t>(k)] = mean_of(rep.per_dim_sd[static_cast<std::size_t>(k)]);
    return rep;
}

// ---------------------------------------------------------------------------
// Co-occurrence

/// 26x26 matrix; entry (r,c) = P(category r present | category c present)
/// in percent. Columns whose category never occurs hold NaN, never 0.
struct CooccurrenceMatrix {
    std::array<std::array<double, kNumCategories>, kNumCategories> values{};
};

inline CooccurrenceMatrix cooccurrence(const std::vector<EmotionLabel>& labels) {
    std::array<double, kNumCategories> count{};
    std::array<std::array<double, kNumCategories>, kNumCategories> joint{};
    for (const auto& lab : labels) {
        for (int c = 0; c < kNumCategories; ++c) {
            if (lab.discrete[static_cast<std::size_t>(c)] <= 0.0) continue;
            count[static_cast<std::size_t>(c)] += 1.0;
            for (int r = 0; r < kNumCategories; ++r)
                if (lab.discrete[static_cast<std::size_t>(r)] > 0.0) joint[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] += 1.0;
        }
    }
    CooccurrenceMatrix m;
    for (int c = 0; c < kNumCategories; ++c)
        for (int r = 0; r < kNumCategories; ++r)
            m.values[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                count[static_cast<std::size_t>(c)] > 0.0
                    ? 100.0 * joint[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)]
                    : kNaN;
    return m;
}

// ---------------------------------------------------------------------------
// Category pattern clustering

struct CategoryClusters {
    // Per cluster, the categories whose within-cluster frequency exceeds 0.5.
    std::vector<std::set<int>> cluster_categories;
    std::vector<std::size_t> sizes;
    std::vector<int> assignment;  // label index -> cluster
};

/// Seeded k-means (k-means++ initialization, Euclidean distance) over the
/// 26-dim discrete annotation vectors. Deterministic for a fixed seed.
inline CategoryClusters cluster_category_patterns(const std::vector<EmotionLabel>& labels, int k,
                                                  std::uint64_t seed) {
    if (k < 1) throw Error("cluster_category_patterns: k must be >= 1");
    std::vector<std::array<double, kNumCategories>> points;
    points.reserve(labels.size());
    for (const auto& lab : labels) points.push_back(lab.discrete);
    std::set<std::array<double, kNumCategories>> distinct(points.begin(), points.end());
    if (static_cast<std::size_t>(k) > distinct.size())
        throw Error("cluster_category_patterns: k=" + std::to_string(k) + " exceeds " +
                    std::to_string(distinct.size()) + " distinct annotation vectors");

    auto dist2 = [](const std::array<double, kNumCategories>& a, const std::array<double, kNumCategories>& b) {
        double s = 0.0;
        for (int i = 0; i < kNumCategories; ++i) {
            double d = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
            s += d * d;
        }
        return s;
    };

    auto rng = make_rng(stream_seed(seed, 0x6b6d)); // "km" stream
    std::vector<std::array<double, kNumCategories>> centers;
    centers.reserve(static_cast<std::size_t>(k));

    // k-means++ seeding with explicit cumulative sampling.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    centers.push_back(points[rng() % points.size()]);
    std::vector<double> d2(points.size());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double best = dist2(points[i], centers[0]);
            for (std::size_t j = 1; j < centers.size(); ++j) best = std::min(best, dist2(points[i], centers[j]));
            d2[i] = best;
            total += best;
        }
        if (total == 0.0) {
            // All points coincide with centers; pick any distinct remaining point.
            for (const auto& p : points) {
                bool used = false;
                for (const auto& ctr : centers) used = used || dist2(p, ctr) == 0.0;
                if (!used) {
                    centers.push_back(p);
                    break;
                }
            }
            continue;
        }
        double target = unit(rng) * total;
        double acc = 0.0;
        std::size_t pick = points.size() - 1;
        for (std::size_t i = 0; i < points.size(); ++i) {
            acc += d2[i];
            if (acc >= target) {
                pick = i;
                break;
            }
        }
        centers.push_back(points[pick]);
    }

    std::vector<int> assign(points.size(), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            int best = 0;
            double bd = dist2(points[i], centers[0]);
            for (int c = 1; c < k; ++c) {
                double d = dist2(points[i], centers[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<std::array<double, kNumCategories>> next(static_cast<std::size_t>(k));
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (auto& ctr : next) ctr.fill(0.0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            ++counts[static_cast<std::size_t>(assign[i])];
            for (int j = 0; j < kNumCategories; ++j)
                next[static_cast<std::size_t>(assign[i])][static_cast<std::size_t>(j)] += points[i][static_cast<std::size_t>(j)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // Re-seat an empty cluster at the point farthest from its center.
                std::size_t far = 0;
                double fd = -1.0;
                for (std::size_t i = 0; i < points.size(); ++i) {
                    double d = dist2(points[i], centers[static_cast<std::size_t>(assign[i])]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                next[static_cast<std::size_t>(c)] = points[far];
                counts[static_cast<std::size_t>(c)] = 1;
                changed = true;
            } else {
                for (int j = 0; j < kNumCategories; ++j)
                    next[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
            }
        }
        centers = std::move(next);
        if (!changed && iter > 0) break;
    }

    CategoryClusters out;
    out.assignment = assign;
    out.sizes.assign(static_cast<std::size_t>(k), 0);
    std::vector<std::array<double, kNumCategories>> freq(static_cast<std::size_t>(k));
    for (auto& f : freq) f.fill(0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        ++out.sizes[static_cast<std::size_t>(assign[i])];
        for (int j = 0; j < kNumCategories; ++j)
            if (points[i][static_cast<std::size_t>(j)] > 0.0) freq[static_cast<std::size_t>(assign[i])][static_cast<std::size_t>(j)] += 1.0;
    }
    out.cluster_categories.resize(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < kNumCategories; ++j)
            if (out.sizes[static_cast<std::size_t>(c)] > 0 &&
                freq[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] / static_cast<double>(out.sizes[static_cast<std::size_t>(c)]) > 0.5)
                out.cluster_categories[static_cast<std::size_t>(c)].insert(j + 1);
    return out;
}

// ---------------------------------------------------------------------------
// Dimension means per category

struct DimensionByCategory {
    // Per dimension: (category id, mean raw value), sorted ascending by
    // mean; ties keep category-id order.
    std::array<std::vector<std::pair<int, double>>, kNumDims> order;
    std::vector<int> omitted;  // categories never present
};

inline DimensionByCategory dimension_by_category(const std::vector<EmotionLabel>& labels) {
    std::array<double, kNumCategories> count{};
    std::array<std::array<double, kNumCategories>, kNumDims> sum{};
    for (const auto& lab : labels) {
        if (!lab.has_continuous()) continue;
        for (int c = 0; c < kNumCategories; ++c) {
            if (lab.discrete[static_cast<std::size_t>(c)] <= 0.0) continue;
            count[static_cast<std::size_t>(c)] += 1.0;
            for (int k = 0; k < kNumDims; ++k)
                sum[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] += denormalize_dim(lab.continuous[static_cast<std::size_t>(k)]);
        }
    }
    DimensionByCategory out;
    for (int c = 0; c < kNumCategories; ++c)
        if (count[static_cast<std::size_t>(c)] == 0.0) out.omitted.push_back(c + 1);
    for (int k = 0; k < kNumDims; ++k) {
        auto& ord = out.order[static_cast<std::size_t>(k)];
        for (int c = 0; c < kNumCategories; ++c)
            if (count[static_cast<std::size_t>(c)] > 0.0)
                ord.emplace_back(c + 1, sum[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)]);
        std::stable_sort(ord.begin(), ord.end(),
                         [](const auto& a, const auto& b) { return a.second < b.second; });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus statistics

struct CorpusStatistics {
    std::size_t n_persons = 0;
    std::size_t n_images = 0;
    std::size_t n_responses = 0;  // valid responses
    std::array<std::size_t, kNumCategories> category_person_count{};
    // value_count[dim][v-1] = number of valid responses annotating raw value v
    std::array<std::array<std::size_t, 10>, kNumDims> value_count{};
    std::map<std::string, double> gender_fraction;     // over persons
    std::map<std::string, double> age_group_fraction;  // over persons
};

inline CorpusStatistics corpus_statistics(const Corpus& corpus) {
    CorpusStatistics st;
    st.n_images = corpus.images.size();
    st.n_persons = corpus.persons.size();
    std::map<std::string, std::size_t> gender, age;
    for (const auto& [pid, p] : corpus.persons) {
        ++gender[to_string(p.gender)];
        ++age[to_string(p.age_group)];
        EmotionLabel lab = aggregate_responses(p.responses, AggregationPolicy::Union);
        for (int c = 0; c < kNumCategories; ++c)
            if (lab.discrete[static_cast<std::size_t>(c)] > 0.0) ++st.category_person_count[static_cast<std::size_t>(c)];
        for (const auto& r : p.responses) {
            if (!r.valid) continue;
            ++st.n_responses;
            if (r.dims)
                for (int k = 0; k < kNumDims; ++k)
                    ++st.value_count[static_cast<std::size_t>(k)][static_cast<std::size_t>(static_cast<int>((*r.dims)[k]) - 1)];
        }
    }
    if (st.n_persons > 0) {
        for (const auto& [g, n] : gender) st.gender_fraction[g] = static_cast<double>(n) / static_cast<double>(st.n_persons);
        for (const auto& [a, n] : age) st.age_group_fraction[a] = static_cast<double>(n) / static_cast<double>(st.n_persons);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Cross-tabulation against external per-image labels

struct CrossTabRow {
    std::size_t n_persons = 0;
    std::array<double, kNumCategories> category_frequency{};  // fraction of persons
    std::array<double, kNumDims> dim_mean{};                  // raw scale, NaN if absent
};

/// For each external label (scene tag, detector output, ...), the
/// distribution of emotion categories and mean dimensions among persons in
/// images carrying that label.
inline std::map<std::string, CrossTabRow> cross_tabulate(
    const Corpus& corpus, const std::map<std::string, std::set<std::string>>& external_labels) {
    for (const auto& [img, labs] : external_labels) {
        (void)labs;
        if (!corpus.images.count(img)) throw Error("cross_tabulate: unknown image id '" + img + "'");
    }
    std::map<std::string, CrossTabRow> rows;
    std::map<std::string, std::array<double, kNumDims>> dim_sums;
    std::map<std::string, std::size_t> dim_counts;
    for (const auto& [pid, p] : corpus.persons) {
        auto it = external_labels.find(p.image_id);
        if (it == external_labels.end()) continue;
        EmotionLabel lab = aggregate_responses(p.responses, AggregationPolicy::Union);
        for (const auto& ext : it->second) {
            CrossTabRow& row = rows[ext];
            ++row.n_persons;
            for (int c = 0; c < kNumCategories; ++c)
                if (lab.discrete[static_cast<std::size_t>(c)] > 0.0) row.category_frequency[static_cast<std::size_t>(c)] += 1.0;
            if (lab.has_continuous()) {
                auto& s = dim_sums[ext];
                for (int k = 0; k < kNumDims; ++k) s[static_cast<std::size_t>(k)] += denormalize_dim(lab.continuous[static_cast<std::size_t>(k)]);
                ++dim_counts[ext];
            }
        }
    }
    for (auto& [ext, row] : rows) {
        for (int c = 0; c < kNumCategories; ++c) row.category_frequency[static_cast<std::size_t>(c)] /= static_cast<double>(row.n_persons);
        auto dc = dim_counts.find(ext);
        for (int k = 0; k < kNumDims; ++k)
            row.dim_mean[static_cast<std::size_t>(k)] =
                dc != dim_counts.end() ? dim_sums[ext][static_cast<std::size_t>(k)] / static_cast<double>(dc->second) : kNaN;
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV export

inline void write_cooccurrence_csv(const CooccurrenceMatrix& m, std::ostream& out) {
    CsvWriter w(out);
    w.cell("category");
    for (const auto& c : category_taxonomy()) w.cell(std::string(c.name));
    w.endrow();
    for (int r = 0; r < kNumCategories; ++r) {
        w.cell(std::string(category_taxonomy()[static_cast<std::size_t>(r)].name));
        for (int c = 0; c < kNumCategories; ++c) w.cell(m.values[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
        w.endrow();
    }
}

inline void write_agreement_csv(const AgreementReport& rep, std::ostream& out) {
    CsvWriter w(out);
    w.cell("section").cell("key").cell("value").endrow();
    w.cell("summary").cell("mean_kappa").cell(rep.mean_kappa).endrow();
    for (int k = 0; k < kNumDims; ++k)
        w.cell("summary").cell("mean_sd_" + std::string(kDimNames[static_cast<std::size_t>(k)])).cell(rep.mean_sd[static_cast<std::size_t>(k)]).endrow();
    for (int i = 0; i < kNumCategories; ++i)
        w.cell("mean_agreement").cell(std::string(category_taxonomy()[static_cast<std::size_t>(i)].name)).cell(rep.mean_agreement[static_cast<std::size_t>(i)]).endrow();
    for (const auto& [pid, kappa] : rep.per_person_kappa) w.cell("person_kappa").cell(pid).cell(kappa).endrow();
    for (int k = 0; k < kNumDims; ++k) {
        // Sorted descending, one curve per dimension.
        auto sds = rep.per_dim_sd[static_cast<std::size_t>(k)];
        std::sort(sds.begin(), sds.end(), std::greater<double>());
        for (std::size_t i = 0; i < sds.size(); ++i)
            w.cell("sd_sorted_" + std::string(kDimNames[static_cast<std::size_t>(k)])).cell(i).cell(sds[i]).endrow();
    }
}

inline void write_statistics_csv(const CorpusStatistics& st, std::ostream& out) {
    CsvWriter w(out);
    w.cell("section").cell("key").cell("value").endrow();
    w.cell("totals").cell("persons").cell(st.n_persons).endrow();
    w.cell("totals").cell("images").cell(st.n_images).endrow();
    w.cell("totals").cell("valid_responses").cell(st.n_responses).endrow();
    for (int i = 0; i < kNumCategories; ++i)
        w.cell("category_persons").cell(std::string(category_taxonomy()[static_cast<std::size_t>(i)].name)).cell(st.category_person_count[static_cast<std::size_t>(i)]).endrow();
    for (int k = 0; k < kNumDims; ++k)
        for (int v = 1; v <= 10; ++v)
            w.cell("value_count_" + std::string(kDimNames[static_cast<std::size_t>(k)])).cell(v).cell(st.value_count[static_cast<std::size_t>(k)][static_cast<std::size_t>(v - 1)]).endrow();
    for (const auto& [g, f] : st.gender_fraction) w.cell("gender").cell(g).cell(f).endrow();
    for (const auto& [a, f] : st.age_group_fraction) w.cell("age_group").cell(a).cell(f).endrow();
}

inline void write_crosstab_csv(const std::map<std::string, CrossTabRow>& rows, std::ostream& out) {
    CsvWriter w(out);
    w.cell("external_label").cell("n_persons");
    for (const auto& c : category_taxonomy()) w.cell(std::string(c.name));
    for (const auto& d : kDimNames) w.cell("mean_" + std::string(d));
    w.endrow();
    for (const auto& [ext, row] : rows) {
        w.cell(ext).cell(row.n_persons);
        for (int c = 0; c < kNumCategories; ++c) w.cell(row.category_frequency[static_cast<std::size_t>(c)]);
        for (int k = 0; k < kNumDims; ++k) w.cell(row.dim_mean[static_cast<std::size_t>(k)]);
        w.endrow();
    }
}

inline void write_dimension_by_category_csv(const DimensionByCategory& d, std::ostream& out) {
    CsvWriter w(out);
    w.cell("dimension").cell("rank").cell("category").cell("mean_raw_value").endrow();
    for (int k = 0; k < kNumDims; ++k)
        for (std::size_t i = 0; i < d.order[static_cast<std::size_t>(k)].size(); ++i) {
            const auto& [cid, mean] = d.order[static_cast<std::size_t>(k)][i];
            w.cell(std::string(kDimNames[static_cast<std::size_t>(k)])).cell(i).cell(std::string(category_name(cid))).cell(mean).endrow();
        }
}

inline void write_clusters_csv(const CategoryClusters& cl, std::ostream& out) {
    CsvWriter w(out);
    w.cell("cluster").cell("size").cell("categories").endrow();
    for (std::size_t c = 0; c < cl.cluster_categories.size(); ++c) {
        std::string names;
        for (int id : cl.cluster_categories[c]) {
            if (!names.empty()) names += ";";
            names += std::string(category_name(id));
        }
        w.cell(c).cell(cl.sizes[c]).cell(names).endrow();
    }
}

} // namespace emoscene
