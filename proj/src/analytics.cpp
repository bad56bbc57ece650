#include "logenc/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "logenc/rng.hpp"

namespace logenc {

namespace {

std::unordered_map<std::string, size_t> index_of(const EmbeddingSet& set) {
    std::unordered_map<std::string, size_t> idx;
    idx.reserve(set.ids.size());
    for (size_t i = 0; i < set.ids.size(); ++i) idx[set.ids[i]] = i;
    return idx;
}

double norm_of(const std::vector<float>& v) {
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    return std::sqrt(sq);
}

double dot_of(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

/// Cosine similarity; nullopt when either vector has zero norm.
std::optional<double> cosine(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) {
        throw Error("DimensionMismatch", "embedding dimensions disagree");
    }
    double na = norm_of(a), nb = norm_of(b);
    if (na == 0.0 || nb == 0.0) return std::nullopt;
    return dot_of(a, b) / (na * nb);
}

}  // namespace

SimilarityReport similarity_diff(const EmbeddingSet& embeddings,
                                 const std::vector<IdPair>& positives,
                                 const std::vector<IdPair>& negatives) {
    auto idx = index_of(embeddings);
    auto mean_over = [&](const std::vector<IdPair>& pairs, uint64_t& used,
                         uint64_t& excluded) {
        double sum = 0.0;
        for (const auto& [a, b] : pairs) {
            auto ia = idx.find(a), ib = idx.find(b);
            if (ia == idx.end() || ib == idx.end()) {
                throw Error("ConfigInvalid", "pair references unknown embedding id");
            }
            auto cos = cosine(embeddings.vectors[ia->second], embeddings.vectors[ib->second]);
            if (!cos) {
                ++excluded;
                continue;
            }
            sum += *cos;
            ++used;
        }
        if (used == 0) throw Error("ZeroVector", "every pair had a zero-norm embedding");
        return sum / static_cast<double>(used);
    };
    SimilarityReport rep;
    rep.pmean = mean_over(positives, rep.positive_pairs, rep.excluded_pairs);
    rep.nmean = mean_over(negatives, rep.negative_pairs, rep.excluded_pairs);
    rep.diff = rep.pmean - rep.nmean;
    return rep;
}

namespace {

/// Indices of the top-k rows by (descending value, ascending id).
std::vector<size_t> rank_by_cosine(const std::vector<float>& query, const EmbeddingSet& docs,
                                   size_t k) {
    std::vector<std::pair<double, size_t>> scored(docs.size());
    for (size_t i = 0; i < docs.size(); ++i) {
        auto cos = cosine(query, docs.vectors[i]);
        scored[i] = {cos.value_or(-2.0), i};  // zero vectors rank below any cosine
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return docs.ids[a.second] < docs.ids[b.second];
    });
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t i = 0; i < k && i < scored.size(); ++i) out.push_back(scored[i].second);
    return out;
}

}  // namespace

std::vector<RankedResult> log_search(const EmbeddingSet& queries,
                                     const EmbeddingSet& references,
                                     const std::map<std::string, uint32_t>& query_templates,
                                     const std::map<std::string, uint32_t>& reference_templates,
                                     size_t k) {
    if (k > references.size()) {
        throw Error("ConfigInvalid", "k exceeds the reference set size");
    }
    std::vector<RankedResult> results;
    results.reserve(queries.size());
    for (size_t q = 0; q < queries.size(); ++q) {
        RankedResult r;
        r.query_id = queries.ids[q];
        auto qt = query_templates.find(r.query_id);
        if (qt == query_templates.end()) {
            throw Error("ConfigInvalid", "query " + r.query_id + " has no template id");
        }
        for (size_t i : rank_by_cosine(queries.vectors[q], references, k)) {
            r.ranked_doc_ids.push_back(references.ids[i]);
        }
        for (const auto& [ref_id, tpl] : reference_templates) {
            if (tpl == qt->second) r.relevant_doc_ids.insert(ref_id);
        }
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<std::string> subsample_maxmin(const EmbeddingSet& embeddings, size_t n) {
    const size_t total = embeddings.size();
    if (n < 1 || n > total) {
        throw Error("ConfigInvalid", "subsample size must lie in [1, corpus size]");
    }
    const size_t dim = embeddings.dim();
    std::vector<double> centroid(dim, 0.0);
    for (const auto& v : embeddings.vectors) {
        for (size_t d = 0; d < dim; ++d) centroid[d] += v[d];
    }
    for (double& c : centroid) c /= static_cast<double>(total);

    auto sq_dist_to_centroid = [&](size_t i) {
        double sq = 0.0;
        for (size_t d = 0; d < dim; ++d) {
            double diff = embeddings.vectors[i][d] - centroid[d];
            sq += diff * diff;
        }
        return sq;
    };
    auto sq_dist = [&](size_t i, size_t j) {
        double sq = 0.0;
        for (size_t d = 0; d < dim; ++d) {
            double diff =
                static_cast<double>(embeddings.vectors[i][d]) - embeddings.vectors[j][d];
            sq += diff * diff;
        }
        return sq;
    };
    auto better = [&](double cand, size_t ci, double best, size_t bi, bool want_max) {
        if (cand != best) return want_max ? cand > best : cand < best;
        return embeddings.ids[ci] < embeddings.ids[bi];
    };

    std::vector<bool> selected(total, false);
    std::vector<double> min_sq(total, std::numeric_limits<double>::infinity());
    std::vector<std::string> picks;

    size_t first = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < total; ++i) {
        double d = sq_dist_to_centroid(i);
        if (best == std::numeric_limits<double>::infinity() ||
            better(d, i, best, first, false)) {
            best = d;
            first = i;
        }
    }
    selected[first] = true;
    picks.push_back(embeddings.ids[first]);
    size_t last = first;

    while (picks.size() < n) {
        for (size_t i = 0; i < total; ++i) {
            if (!selected[i]) min_sq[i] = std::min(min_sq[i], sq_dist(i, last));
        }
        size_t pick = total;
        double best_min = -1.0;
        for (size_t i = 0; i < total; ++i) {
            if (selected[i]) continue;
            if (pick == total || better(min_sq[i], i, best_min, pick, true)) {
                best_min = min_sq[i];
                pick = i;
            }
        }
        selected[pick] = true;
        picks.push_back(embeddings.ids[pick]);
        last = pick;
    }
    return picks;
}

uint64_t levenshtein(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<uint64_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0ull);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            uint64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

SubsampleScore subsample_score(const std::vector<LogRecord>& selected) {
    SubsampleScore score;
    std::set<std::pair<std::string, std::string>> entities;
    for (const auto& rec : selected) {
        if (rec.fields.has_value()) {
            for (const auto& [col, val] : *rec.fields) entities.emplace(col, val);
        } else {
            for (const auto& tok : split_whitespace(rec.raw)) entities.emplace("_token", tok);
        }
    }
    score.entity_count = entities.size();
    for (size_t i = 0; i < selected.size(); ++i) {
        for (size_t j = i + 1; j < selected.size(); ++j) {
            score.levenshtein_total += levenshtein(selected[i].raw, selected[j].raw);
        }
    }
    return score;
}

double iforest_avg_path(uint64_t n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    constexpr double euler_gamma = 0.5772156649015329;
    double nd = static_cast<double>(n);
    return 2.0 * (std::log(nd - 1.0) + euler_gamma) - 2.0 * (nd - 1.0) / nd;
}

namespace {

int build_iso_tree(std::vector<IsolationForestModel::Node>& nodes, const MatF& x,
                   std::vector<uint32_t>& rows, size_t begin, size_t end, int depth,
                   int depth_cap, Rng& rng) {
    int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    size_t count = end - begin;
    if (count <= 1 || depth >= depth_cap) {
        nodes[id].size = static_cast<uint32_t>(count);
        return id;
    }
    // Features with spread among these rows; identical rows become a leaf.
    std::vector<int> usable;
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
        float lo = x(rows[begin], f), hi = lo;
        for (size_t r = begin + 1; r < end; ++r) {
            lo = std::min(lo, x(rows[r], f));
            hi = std::max(hi, x(rows[r], f));
        }
        if (hi > lo) usable.push_back(static_cast<int>(f));
    }
    if (usable.empty()) {
        nodes[id].size = static_cast<uint32_t>(count);
        return id;
    }
    int feature = usable[rng.below(usable.size())];
    float lo = x(rows[begin], feature), hi = lo;
    for (size_t r = begin + 1; r < end; ++r) {
        lo = std::min(lo, x(rows[r], feature));
        hi = std::max(hi, x(rows[r], feature));
    }
    float threshold = lo + static_cast<float>(rng.next_double()) * (hi - lo);
    auto mid_it = std::partition(rows.begin() + begin, rows.begin() + end,
                                 [&](uint32_t r) { return x(r, feature) < threshold; });
    size_t mid = static_cast<size_t>(mid_it - rows.begin());
    if (mid == begin || mid == end) {
        // A degenerate split (threshold at the range edge) isolates nothing.
        nodes[id].size = static_cast<uint32_t>(count);
        return id;
    }
    nodes[id].feature = feature;
    nodes[id].threshold = threshold;
    nodes[id].left = build_iso_tree(nodes, x, rows, begin, mid, depth + 1, depth_cap, rng);
    nodes[id].right = build_iso_tree(nodes, x, rows, mid, end, depth + 1, depth_cap, rng);
    return id;
}

}  // namespace

IsolationForestModel iforest_fit(const MatF& features, size_t num_trees,
                                 size_t subsample_size, uint64_t seed) {
    const size_t n = static_cast<size_t>(features.rows());
    if (n < 2) throw Error("ConfigInvalid", "isolation forest needs at least two rows");
    if (subsample_size < 2 || subsample_size > n) {
        throw Error("ConfigInvalid", "subsample_size must lie in [2, rows]");
    }
    if (num_trees < 1) throw Error("ConfigInvalid", "need at least one tree");

    IsolationForestModel model;
    model.num_trees = num_trees;
    model.subsample_size = subsample_size;
    model.seed = seed;
    model.trees.resize(num_trees);
    int depth_cap =
        static_cast<int>(std::ceil(std::log2(static_cast<double>(subsample_size))));

    for (size_t t = 0; t < num_trees; ++t) {
        Rng rng(derive_seed(seed, "tree", t));
        std::vector<uint32_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0u);
        for (size_t i = 0; i < subsample_size; ++i) {
            std::swap(rows[i], rows[i + rng.below(n - i)]);
        }
        rows.resize(subsample_size);
        build_iso_tree(model.trees[t], features, rows, 0, subsample_size, 0, depth_cap, rng);
    }
    return model;
}

std::vector<double> iforest_score(const IsolationForestModel& model, const MatF& features) {
    std::vector<double> scores(features.rows());
    const double c_psi = iforest_avg_path(model.subsample_size);
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        double total_path = 0.0;
        for (const auto& tree : model.trees) {
            int node = 0;
            int depth = 0;
            while (tree[node].feature >= 0) {
                node = features(r, tree[node].feature) < tree[node].threshold
                           ? tree[node].left
                           : tree[node].right;
                ++depth;
            }
            total_path += depth + iforest_avg_path(tree[node].size);
        }
        double mean_path = total_path / static_cast<double>(model.trees.size());
        scores[r] = std::pow(2.0, -mean_path / c_psi);
    }
    return scores;
}

DetectionResult pattern_detect(const std::vector<LogRecord>& logs,
                               const EmbeddingSet& embeddings,
                               const std::vector<std::string>& structured_columns,
                               const std::string& mode, size_t top_k, size_t num_trees,
                               size_t subsample_size, uint64_t seed) {
    if (mode != "embedding" && mode != "hybrid") {
        throw Error("ConfigInvalid", "mode must be 'embedding' or 'hybrid'");
    }
    if (logs.empty()) throw Error("ConfigInvalid", "no logs to score");
    if (top_k < 1 || top_k > logs.size()) {
        throw Error("ConfigInvalid", "top_k must lie in [1, logs]");
    }
    auto idx = index_of(embeddings);
    auto embedding_row = [&](const std::string& id) -> const std::vector<float>& {
        auto it = idx.find(id);
        if (it == idx.end()) throw Error("ConfigInvalid", "log " + id + " has no embedding");
        return embeddings.vectors[it->second];
    };

    DetectionResult result;
    MatF feat;
    if (mode == "embedding") {
        feat.resize(logs.size(), embeddings.dim());
        for (size_t i = 0; i < logs.size(); ++i) {
            const auto& v = embedding_row(logs[i].id);
            for (size_t d = 0; d < v.size(); ++d) feat(i, d) = v[d];
        }
    } else {
        std::set<std::string> present;
        for (const auto& rec : logs) {
            if (!rec.fields.has_value()) {
                throw Error("ConfigInvalid",
                            "hybrid mode requires structured fields on every record");
            }
            for (const auto& [col, _] : *rec.fields) present.insert(col);
        }
        std::vector<std::string> coded;
        bool any_unstructured = false;
        for (const auto& col : present) {
            bool structured = std::find(structured_columns.begin(), structured_columns.end(),
                                        col) != structured_columns.end();
            if (structured) {
                coded.push_back(col);
            } else {
                any_unstructured = true;
            }
        }
        result.label_codes_only = !any_unstructured;
        if (any_unstructured && embeddings.size() == 0) {
            throw Error("ConfigInvalid",
                        "hybrid mode needs embeddings for the unstructured columns");
        }

        // First-seen dictionary codes per column, scaled to [0,1].
        std::vector<std::vector<float>> codes(coded.size(), std::vector<float>(logs.size()));
        for (size_t c = 0; c < coded.size(); ++c) {
            std::unordered_map<std::string, uint32_t> dict;
            std::vector<uint32_t> raw(logs.size());
            for (size_t i = 0; i < logs.size(); ++i) {
                std::string val;
                auto it = logs[i].fields->find(coded[c]);
                if (it != logs[i].fields->end()) val = it->second;
                raw[i] = dict.emplace(val, static_cast<uint32_t>(dict.size())).first->second;
            }
            float scale = dict.size() > 1 ? 1.0f / static_cast<float>(dict.size() - 1) : 0.0f;
            for (size_t i = 0; i < logs.size(); ++i) codes[c][i] = raw[i] * scale;
        }

        size_t emb_dim = result.label_codes_only ? 0 : embeddings.dim();
        feat.resize(logs.size(), coded.size() + emb_dim);
        for (size_t i = 0; i < logs.size(); ++i) {
            for (size_t c = 0; c < coded.size(); ++c) feat(i, c) = codes[c][i];
            if (emb_dim > 0) {
                const auto& v = embedding_row(logs[i].id);
                if (v.size() != emb_dim) {
                    throw Error("DimensionMismatch", "embedding dimensions disagree");
                }
                for (size_t d = 0; d < emb_dim; ++d) feat(i, coded.size() + d) = v[d];
            }
        }
    }

    IsolationForestModel forest =
        iforest_fit(feat, num_trees, std::min(subsample_size, logs.size()), seed);
    result.scores = iforest_score(forest, feat);

    std::vector<size_t> order(logs.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (result.scores[a] != result.scores[b]) return result.scores[a] > result.scores[b];
        return logs[a].id < logs[b].id;
    });
    for (size_t i = 0; i < top_k; ++i) result.flagged_ids.push_back(logs[order[i]].id);

    bool any_label = false;
    size_t hits = 0;
    for (size_t i = 0; i < logs.size(); ++i) {
        auto it = logs[i].meta.find("anomaly");
        if (it != logs[i].meta.end()) any_label = true;
    }
    if (any_label) {
        for (size_t i = 0; i < top_k; ++i) {
            const auto& meta = logs[order[i]].meta;
            auto it = meta.find("anomaly");
            if (it != meta.end() && it->second == "1") ++hits;
        }
        result.accuracy_at_k = static_cast<double>(hits) / static_cast<double>(top_k);
    }
    return result;
}

TriageLabel triage_label_from_name(const std::string& name) {
    if (name == "TP") return TriageLabel::TP;
    if (name == "FP") return TriageLabel::FP;
    if (name == "BP") return TriageLabel::BP;
    throw Error("ConfigInvalid", "unknown incident label '" + name + "'");
}

const char* triage_label_name(TriageLabel label) {
    switch (label) {
        case TriageLabel::TP: return "TP";
        case TriageLabel::FP: return "FP";
        case TriageLabel::BP: return "BP";
    }
    return "";
}

const char* triage_decision_name(TriageDecision d) {
    switch (d) {
        case TriageDecision::kAutoTP: return "auto-TP";
        case TriageDecision::kAutoBPFP: return "auto-BPFP";
        case TriageDecision::kEscalate: return "escalate";
    }
    return "";
}

TriageModel triage_fit(const std::vector<IncidentRecord>& train,
                       const EmbeddingSet& embeddings, int k, double theta_tp,
                       double theta_bp) {
    if (train.empty()) throw Error("EmptyTrain", "no training incidents");
    if (k < 1 || static_cast<size_t>(k) > train.size()) {
        throw Error("ConfigInvalid", "k must lie in [1, train size]");
    }
    if (theta_tp < 0.5 || theta_tp > 1.0 || theta_bp < 0.5 || theta_bp > 1.0) {
        throw Error("ConfigInvalid", "vote thresholds must lie in [0.5, 1]");
    }
    bool has_tp = false, has_non_tp = false;
    for (const auto& inc : train) {
        (inc.label == TriageLabel::TP ? has_tp : has_non_tp) = true;
    }
    if (!has_tp || !has_non_tp) {
        throw Error("LabelCardinality", "training set needs TP and non-TP incidents");
    }

    auto idx = index_of(embeddings);
    TriageModel model;
    model.k = k;
    model.theta_tp = theta_tp;
    model.theta_bp = theta_bp;
    model.embeddings.resize(train.size(), embeddings.dim());
    for (const auto& inc : train) {
        auto it = idx.find(inc.id);
        if (it == idx.end()) {
            throw Error("ConfigInvalid", "incident " + inc.id + " has no embedding");
        }
        const auto& v = embeddings.vectors[it->second];
        for (size_t d = 0; d < v.size(); ++d) {
            model.embeddings(model.ids.size(), d) = v[d];
        }
        model.ids.push_back(inc.id);
        model.labels.push_back(inc.label);
    }
    return model;
}

TriageOutcome triage_apply(const TriageModel& model, const std::vector<IncidentRecord>& test,
                           const EmbeddingSet& test_embeddings) {
    auto idx = index_of(test_embeddings);
    TriageOutcome out;
    const size_t n_train = model.ids.size();

    for (const auto& inc : test) {
        auto it = idx.find(inc.id);
        if (it == idx.end()) {
            throw Error("ConfigInvalid", "incident " + inc.id + " has no embedding");
        }
        const auto& q = test_embeddings.vectors[it->second];
        std::vector<std::pair<double, size_t>> dist(n_train);
        for (size_t i = 0; i < n_train; ++i) {
            std::vector<float> row(model.embeddings.row(i).data(),
                                   model.embeddings.row(i).data() + model.embeddings.cols());
            auto cos = cosine(q, row);
            dist[i] = {1.0 - cos.value_or(0.0), i};
        }
        std::sort(dist.begin(), dist.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return model.ids[a.second] < model.ids[b.second];
        });
        size_t tp_votes = 0;
        for (int i = 0; i < model.k; ++i) {
            if (model.labels[dist[i].second] == TriageLabel::TP) ++tp_votes;
        }
        double tp_frac = static_cast<double>(tp_votes) / model.k;
        double bpfp_frac = static_cast<double>(model.k - tp_votes) / model.k;

        TriageDecision d = TriageDecision::kEscalate;
        if (tp_frac >= model.theta_tp) {
            d = TriageDecision::kAutoTP;
            ++out.auto_tp;
            if (inc.label != TriageLabel::TP) ++out.mis_elevation;
        } else if (bpfp_frac >= model.theta_bp) {
            d = TriageDecision::kAutoBPFP;
            ++out.auto_bpfp;
            if (inc.label == TriageLabel::TP) ++out.mis_suppression;
        } else {
            ++out.escalated;
        }
        out.decisions.push_back(d);
    }
    if (!test.empty()) {
        out.volume_reduction =
            static_cast<double>(test.size() - out.escalated) / test.size();
    }
    return out;
}

std::vector<std::string> retrieve_topk(const std::vector<float>& query,
                                       const EmbeddingSet& documents, size_t k) {
    if (k < 1 || k > documents.size()) {
        throw Error("ConfigInvalid", "k must lie in [1, document count]");
    }
    std::vector<std::string> out;
    for (size_t i : rank_by_cosine(query, documents, k)) out.push_back(documents.ids[i]);
    return out;
}

}  // namespace logenc
