// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Annotation corpus container and its on-disk manifest format.
//
// The manifest is UTF-8, one JSON record per line. Lines starting with '#'
// are comments and ignored (generators may stash machine-readable metadata
// there). Record kinds:
//
//   {"kind":"image","id":ID,"path":P,"width":W,"height":H}
//   {"kind":"person","id":ID,"image":IMG,"bbox":[x,y,w,h],
//    "gender":"male|female|unknown","age":"child|teenager|adult|unknown"}
//   {"kind":"response","person":ID,"annotator":A,
//    "categories":[ids 1..26],"dims":[v,a,d 1..10],"valid":bool}
//   {"kind":"split","person":ID,"split":"train|val|test"}
//
// "dims" and "valid" are optional (valid defaults to true). Saving orders
// records by lexicographic id, so save(load(x)) is byte-stable.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "emoscene/core.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error("unknown split value: " + s);
}

struct ImageEntry {
    std::string path;   // relative to the manifest's directory unless absolute
    int width = 0;
    int height = 0;
    bool operator==(const ImageEntry&) const = default;
};

struct Corpus {
    std::map<std::string, ImageEntry> images;            // image_id -> entry
    std::map<std::string, PersonAnnotation> persons;     // person_id -> annotation
    std::map<std::string, Split> splits;                 // person_id -> split
    std::filesystem::path root;                          // directory image paths resolve against

    bool operator==(const Corpus& o) const {
        return images == o.images && persons == o.persons && splits == o.splits;
    }

    std::vector<std::string> person_ids_in_split(Split s) const {
        std::vector<std::string> ids;
        for (const auto& [pid, sp] : splits)
            if (sp == s) ids.push_back(pid);
        return ids;
    }

    std::filesystem::path image_path(const std::string& image_id) const {
        auto it = images.find(image_id);
        if (it == images.end()) throw Error("unknown image id: " + image_id);
        std::filesystem::path p = it->second.path;
        return p.is_absolute() ? p : root / p;
    }
};

namespace detail {

inline void validate_person(const PersonAnnotation& p, const std::map<std::string, ImageEntry>& images,
                            const std::string& file) {
    auto fail = [&](const std::string& what) {
        throw Error(file + ": person '" + p.person_id + "': " + what);
    };
    auto img = images.find(p.image_id);
    if (img == images.end()) fail("references unknown image '" + p.image_id + "'");
    if (p.bbox.width <= 0 || p.bbox.height <= 0) fail("bbox has non-positive size");
    if (p.bbox.x < 0 || p.bbox.y < 0 || p.bbox.x + p.bbox.width > img->second.width ||
        p.bbox.y + p.bbox.height > img->second.height)
        fail("bbox exceeds image bounds");
    if (p.valid_response_count() == 0) fail("has no valid response");
    for (const auto& r : p.responses) {
        if (r.valid && r.categories.empty())
            fail("valid response from '" + r.annotator_id + "' has no categories");
        for (int id : r.categories)
            if (!valid_category_id(id))
                fail("response from '" + r.annotator_id + "' uses category id " + std::to_string(id));
        if (r.dims) {
            for (int k = 0; k < kNumDims; ++k)
                if (!valid_raw_dim((*r.dims)[k]))
                    fail("response from '" + r.annotator_id + "' has out-of-range " + std::string(kDimNames[static_cast<std::size_t>(k)]));
        }
    }
}

inline void validate_corpus(const Corpus& c, const std::string& file) {
    for (const auto& [pid, p] : c.persons) {
        if (p.person_id != pid) throw Error(file + ": person key/id mismatch for '" + pid + "'");
        validate_person(p, c.images, file);
    }
    for (const auto& [pid, sp] : c.splits) {
        (void)sp;
        if (!c.persons.count(pid)) throw Error(file + ": split entry references unknown person '" + pid + "'");
    }
}

} // namespace detail

/// Parses and fully validates a manifest. Every core-type invariant is
/// enforced here; errors name the file, the record, and the violation.
inline Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path.string());
    const std::string file = path.filename().string();

    Corpus corpus;
    corpus.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::pair<std::string, AnnotatorResponse>> pending_responses;  // person_id, response
    std::vector<std::pair<std::string, Split>> pending_splits;

    auto fail = [&](const std::string& what) {
        throw Error(file + ":" + std::to_string(lineno) + ": " + what);
    };

    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(t);
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("invalid JSON: ") + e.what());
        }
        try {
            const std::string kind = rec.at("kind").get<std::string>();
            if (kind == "image") {
                ImageEntry e;
                std::string id = rec.at("id").get<std::string>();
                e.path = rec.at("path").get<std::string>();
                e.width = rec.at("width").get<int>();
                e.height = rec.at("height").get<int>();
                if (e.width <= 0 || e.height <= 0) fail("image '" + id + "' has non-positive size");
                if (!corpus.images.emplace(id, e).second) fail("duplicate image id '" + id + "'");
            } else if (kind == "person") {
                PersonAnnotation p;
                p.person_id = rec.at("id").get<std::string>();
                p.image_id = rec.at("image").get<std::string>();
                auto bb = rec.at("bbox");
                if (!bb.is_array() || bb.size() != 4) fail("person '" + p.person_id + "' bbox must be [x,y,w,h]");
                p.bbox = {bb[0].get<int>(), bb[1].get<int>(), bb[2].get<int>(), bb[3].get<int>()};
                p.gender = gender_from_string(rec.value("gender", "unknown"));
                p.age_group = age_group_from_string(rec.value("age", "unknown"));
                if (!corpus.persons.emplace(p.person_id, p).second)
                    fail("duplicate person id '" + p.person_id + "'");
            } else if (kind == "response") {
                AnnotatorResponse r;
                std::string pid = rec.at("person").get<std::string>();
                r.annotator_id = rec.at("annotator").get<std::string>();
                for (const auto& c : rec.at("categories")) {
                    int id = c.get<int>();
                    if (!valid_category_id(id))
                        fail("person '" + pid + "': category id " + std::to_string(id) + " outside 1.." +
                             std::to_string(kNumCategories));
                    r.categories.insert(id);
                }
                if (rec.contains("dims")) {
                    auto d = rec.at("dims");
                    if (!d.is_array() || d.size() != 3) fail("person '" + pid + "': dims must be [v,a,d]");
                    ContinuousDims cd{d[0].get<double>(), d[1].get<double>(), d[2].get<double>()};
                    for (int k = 0; k < kNumDims; ++k)
                        if (!valid_raw_dim(cd[k]))
                            fail("person '" + pid + "': " + std::string(kDimNames[static_cast<std::size_t>(k)]) +
                                 " must be an integer in 1..10");
                    r.dims = cd;
                }
                r.valid = rec.value("valid", true);
                pending_responses.emplace_back(pid, std::move(r));
            } else if (kind == "split") {
                pending_splits.emplace_back(rec.at("person").get<std::string>(),
                                            split_from_string(rec.at("split").get<std::string>()));
            } else {
                fail("unknown record kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            fail(std::string("malformed record: ") + e.what());
        }
    }

    for (auto& [pid, r] : pending_responses) {
        auto it = corpus.persons.find(pid);
        if (it == corpus.persons.end())
            throw Error(file + ": response references unknown person '" + pid + "'");
        it->second.responses.push_back(std::move(r));
    }
    for (auto& [pid, sp] : pending_splits) {
        if (!corpus.persons.count(pid))
            throw Error(file + ": split references unknown person '" + pid + "'");
        if (!corpus.splits.emplace(pid, sp).second)
            throw Error(file + ": duplicate split entry for person '" + pid + "'");
    }

    detail::validate_corpus(corpus, file);
    return corpus;
}

/// Writes the manifest in canonical order (ids sorted lexicographically,
/// responses in original order per person). load(save(c)) == c.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                        const std::vector<std::string>& header_comments = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest: " + path.string());
    for (const auto& c : header_comments) out << "# " << c << "\n";
    for (const auto& [id, e] : corpus.images) {
        nlohmann::json rec{{"kind", "image"}, {"id", id}, {"path", e.path},
                           {"width", e.width}, {"height", e.height}};
        out << rec.dump() << "\n";
    }
    for (const auto& [pid, p] : corpus.persons) {
        nlohmann::json rec{{"kind", "person"}, {"id", pid}, {"image", p.image_id},
                           {"bbox", {p.bbox.x, p.bbox.y, p.bbox.width, p.bbox.height}},
                           {"gender", to_string(p.gender)}, {"age", to_string(p.age_group)}};
        out << rec.dump() << "\n";
        for (const auto& r : p.responses) {
            nlohmann::json rr{{"kind", "response"}, {"person", pid}, {"annotator", r.annotator_id},
                              {"categories", std::vector<int>(r.categories.begin(), r.categories.end())}};
            if (r.dims) rr["dims"] = {(*r.dims).valence, (*r.dims).arousal, (*r.dims).dominance};
            if (!r.valid) rr["valid"] = false;
            out << rr.dump() << "\n";
        }
    }
    for (const auto& [pid, sp] : corpus.splits) {
        nlohmann::json rec{{"kind", "split"}, {"person", pid}, {"split", to_string(sp)}};
        out << rec.dump() << "\n";
    }
    if (!out) throw Error("write failed: " + path.string());
}

/// Invalidates every response of any annotator whose answer on a control
/// person strayed outside that control's acceptable category set, then drops
/// persons left without a single valid response. Never adds validity back.
inline Corpus filter_control_failures(const Corpus& corpus,
                                      const std::map<std::string, std::set<int>>& controls) {
    for (const auto& [pid, accept] : controls) {
        (void)accept;
        if (!corpus.persons.count(pid)) throw Error("control person '" + pid + "' not in corpus");
    }
    std::set<std::string> failed;
    for (const auto& [pid, accept] : controls) {
        const auto& person = corpus.persons.at(pid);
        for (const auto& r : person.responses) {
            for (int id : r.categories) {
                if (!accept.count(id)) {
                    failed.insert(r.annotator_id);
                    break;
                }
            }
        }
    }
    Corpus out = corpus;
    if (failed.empty()) return out;
    std::vector<std::string> dropped;
    for (auto& [pid, person] : out.persons) {
        for (auto& r : person.responses)
            if (failed.count(r.annotator_id)) r.valid = false;
        if (person.valid_response_count() == 0) dropped.push_back(pid);
    }
    for (const auto& pid : dropped) {
        out.persons.erase(pid);
        out.splits.erase(pid);
    }
    return out;
}

/// Assigns every person to train/val/test. Deterministic for a fixed seed.
///
/// Sizes follow `proportions` by largest-remainder rounding. Assignment is
/// greedy rarest-category-first over union labels, so each category's
/// per-split frequency tracks its global frequency as closely as the counts
/// allow.
inline Corpus make_splits(const Corpus& corpus, std::array<double, 3> proportions, std::uint64_t seed) {
    double sum = proportions[0] + proportions[1] + proportions[2];
    if (std::abs(sum - 1.0) > 1e-9 || proportions[0] < 0 || proportions[1] < 0 || proportions[2] < 0)
        throw Error("split proportions must be nonnegative and sum to 1");

    std::vector<std::string> ids;
    for (const auto& [pid, p] : corpus.persons) {
        (void)p;
        ids.push_back(pid);
    }
    const std::size_t n = ids.size();

    // Per-split capacity by largest remainder.
    std::array<std::size_t, 3> capacity{};
    {
        std::array<double, 3> exact;
        std::size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            exact[static_cast<std::size_t>(s)] = proportions[static_cast<std::size_t>(s)] * static_cast<double>(n);
            capacity[static_cast<std::size_t>(s)] = static_cast<std::size_t>(std::floor(exact[static_cast<std::size_t>(s)]));
            assigned += capacity[static_cast<std::size_t>(s)];
        }
        std::array<int, 3> order = {0, 1, 2};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            double ra = exact[static_cast<std::size_t>(a)] - std::floor(exact[static_cast<std::size_t>(a)]);
            double rb = exact[static_cast<std::size_t>(b)] - std::floor(exact[static_cast<std::size_t>(b)]);
            return ra > rb;
        });
        for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++capacity[static_cast<std::size_t>(order[k % 3])];
    }

    // Union category sets per person; remaining per-category demand per split.
    std::map<std::string, std::set<int>> person_cats;
    std::array<std::size_t, kNumCategories> global_count{};
    for (const auto& pid : ids) {
        EmotionLabel lab = aggregate_responses(corpus.persons.at(pid).responses, AggregationPolicy::Union);
        std::set<int>& cats = person_cats[pid];
        for (int i = 0; i < kNumCategories; ++i)
            if (lab.discrete[static_cast<std::size_t>(i)] > 0) {
                cats.insert(i + 1);
                ++global_count[static_cast<std::size_t>(i)];
            }
    }
    std::array<std::array<double, kNumCategories>, 3> demand{};
    for (int s = 0; s < 3; ++s)
        for (int i = 0; i < kNumCategories; ++i)
            demand[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] =
                proportions[static_cast<std::size_t>(s)] * static_cast<double>(global_count[static_cast<std::size_t>(i)]);

    // Seeded shuffle fixes the visit order among ties.
    auto rng = make_rng(stream_seed(seed, 0x5914));
    std::shuffle(ids.begin(), ids.end(), rng);

    std::array<std::size_t, 3> used{};
    Corpus out = corpus;
    out.splits.clear();
    std::set<std::string> unassigned(ids.begin(), ids.end());

    auto assign = [&](const std::string& pid, int s) {
        out.splits[pid] = static_cast<Split>(s);
        ++used[static_cast<std::size_t>(s)];
        for (int cid : person_cats[pid]) --demand[static_cast<std::size_t>(s)][static_cast<std::size_t>(cid - 1)];
        unassigned.erase(pid);
    };

    while (!unassigned.empty()) {
        // Rarest category still having unassigned carriers.
        int rare = -1;
        std::size_t rare_count = 0;
        std::array<std::size_t, kNumCategories> remaining{};
        for (const auto& pid : unassigned)
            for (int cid : person_cats[pid]) ++remaining[static_cast<std::size_t>(cid - 1)];
        for (int i = 0; i < kNumCategories; ++i) {
            std::size_t r = remaining[static_cast<std::size_t>(i)];
            if (r > 0 && (rare < 0 || r < rare_count)) {
                rare = i + 1;
                rare_count = r;
            }
        }
        if (rare < 0) {
            // No categories left (cannot happen for validated corpora); place by capacity.
            for (const auto& pid : std::vector<std::string>(unassigned.begin(), unassigned.end())) {
                int best = 0;
                for (int s = 1; s < 3; ++s)
                    if (capacity[static_cast<std::size_t>(s)] - used[static_cast<std::size_t>(s)] >
                        capacity[static_cast<std::size_t>(best)] - used[static_cast<std::size_t>(best)])
                        best = s;
                assign(pid, best);
            }
            break;
        }
        for (const auto& pid : ids) {
            if (!unassigned.count(pid) || !person_cats[pid].count(rare)) continue;
            int best = -1;
            for (int s = 0; s < 3; ++s) {
                if (used[static_cast<std::size_t>(s)] >= capacity[static_cast<std::size_t>(s)]) continue;
                if (best < 0 ||
                    demand[static_cast<std::size_t>(s)][static_cast<std::size_t>(rare - 1)] >
                        demand[static_cast<std::size_t>(best)][static_cast<std::size_t>(rare - 1)] + 1e-12 ||
                    (std::abs(demand[static_cast<std::size_t>(s)][static_cast<std::size_t>(rare - 1)] -
                              demand[static_cast<std::size_t>(best)][static_cast<std::size_t>(rare - 1)]) <= 1e-12 &&
                     capacity[static_cast<std::size_t>(s)] - used[static_cast<std::size_t>(s)] >
                         capacity[static_cast<std::size_t>(best)] - used[static_cast<std::size_t>(best)]))
                    best = s;
            }
            if (best < 0) best = 0;  // all splits full can only happen on the last person
            assign(pid, best);
        }
    }
    return out;
}

} // namespace emoscene
