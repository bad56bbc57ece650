#pragma once

#include <optional>
#include <string>
#include <vector>

#include "logenc/io.hpp"
#include "logenc/metrics.hpp"
#include "logenc/templates.hpp"

namespace logenc {

struct SimilarityReport {
    double pmean = 0.0;
    double nmean = 0.0;
    double diff = 0.0;
    uint64_t positive_pairs = 0;
    uint64_t negative_pairs = 0;
    uint64_t excluded_pairs = 0;  // zero-vector cosines
};

/// Mean cosine similarity of positive pairs minus that of negative pairs.
/// Pairs with a zero-norm vector are excluded and counted.
SimilarityReport similarity_diff(const EmbeddingSet& embeddings,
                                 const std::vector<IdPair>& positives,
                                 const std::vector<IdPair>& negatives);

/**
 * Ranks the reference set per query by descending cosine similarity (ties by
 * ascending reference id), keeping the top k.  A reference is relevant to a
 * query when both carry the same template id.  Throws DimensionMismatch.
 */
std::vector<RankedResult> log_search(const EmbeddingSet& queries,
                                     const EmbeddingSet& references,
                                     const std::map<std::string, uint32_t>& query_templates,
                                     const std::map<std::string, uint32_t>& reference_templates,
                                     size_t k);

/**
 * Greedy Max-Min subsample: the first pick is the point nearest the centroid,
 * each later pick maximizes the minimum Euclidean distance to the picks so
 * far.  Ties break on ascending id; output order is selection order.
 */
std::vector<std::string> subsample_maxmin(const EmbeddingSet& embeddings, size_t n);

struct SubsampleScore {
    uint64_t entity_count = 0;
    uint64_t levenshtein_total = 0;
};

/**
 * Diversity score of a selection: distinct (column, value) entities across
 * structured logs (unstructured logs contribute whitespace tokens under a
 * single pseudo-column), plus summed pairwise character-level edit distance.
 */
SubsampleScore subsample_score(const std::vector<LogRecord>& selected);

uint64_t levenshtein(std::string_view a, std::string_view b);

struct IsolationForestModel {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        float threshold = 0.0f;
        int left = -1, right = -1;
        uint32_t size = 0;  // samples reaching a leaf
    };
    std::vector<std::vector<Node>> trees;  // node 0 is each tree's root
    size_t num_trees = 0;
    size_t subsample_size = 0;
    uint64_t seed = 0;
};

/// Average path length of an unsuccessful BST search over n items; the
/// normalizer c(psi) in the anomaly score.
double iforest_avg_path(uint64_t n);

/**
 * Fits num_trees isolation trees, each on a without-replacement subsample of
 * subsample_size rows, splitting on a uniform feature and a uniform value in
 * its range until isolation or the ceil(log2 psi) depth cap.
 */
IsolationForestModel iforest_fit(const MatF& features, size_t num_trees,
                                 size_t subsample_size, uint64_t seed);

/// s(x) = 2^(-E[path length]/c(psi)); always in (0,1).
std::vector<double> iforest_score(const IsolationForestModel& model, const MatF& features);

struct DetectionResult {
    std::vector<std::string> flagged_ids;  // top_k by score, descending
    std::vector<double> scores;            // per input row
    std::optional<double> accuracy_at_k;   // set when anomaly labels exist
    bool label_codes_only = false;         // hybrid fallback fired
};

/**
 * Isolation-Forest anomaly detection.  embedding mode scores the given
 * embeddings directly.  hybrid mode concatenates per-column label codes
 * (first-seen dictionary order, scaled to [0,1]) for the designated
 * structured columns with the embeddings, which the caller computed from the
 * remaining (unstructured) columns' text; when no unstructured column exists
 * the embeddings are dropped and label_codes_only is set.  Ground truth is
 * read from each record's "anomaly" meta key when present.
 */
DetectionResult pattern_detect(const std::vector<LogRecord>& logs,
                               const EmbeddingSet& embeddings,
                               const std::vector<std::string>& structured_columns,
                               const std::string& mode, size_t top_k, size_t num_trees,
                               size_t subsample_size, uint64_t seed);

enum class TriageLabel { TP, FP, BP };
enum class TriageDecision { kAutoTP, kAutoBPFP, kEscalate };

TriageLabel triage_label_from_name(const std::string& name);
const char* triage_label_name(TriageLabel label);
const char* triage_decision_name(TriageDecision d);

struct IncidentRecord {
    std::string id;
    std::string text;
    TriageLabel label = TriageLabel::FP;
    int64_t timestamp = 0;
};

struct TriageModel {
    int k = 15;
    double theta_tp = 1.0;
    double theta_bp = 1.0;
    std::vector<std::string> ids;
    std::vector<TriageLabel> labels;
    MatF embeddings;  // one row per training incident
};

/**
 * KNN triage over incident embeddings (cosine distance, ties by ascending
 * id).  A test incident is auto-TP when its k neighbors' TP vote fraction
 * reaches theta_tp (checked first), auto-BPFP when the BP+FP fraction reaches
 * theta_bp, and escalates otherwise.  Throws EmptyTrain and LabelCardinality.
 */
TriageModel triage_fit(const std::vector<IncidentRecord>& train,
                       const EmbeddingSet& embeddings, int k, double theta_tp,
                       double theta_bp);

struct TriageOutcome {
    std::vector<TriageDecision> decisions;  // parallel to the test sequence
    uint64_t auto_tp = 0, auto_bpfp = 0, escalated = 0;
    uint64_t mis_suppression = 0;  // auto-BPFP that were truly TP
    uint64_t mis_elevation = 0;    // auto-TP that were truly BP/FP
    double volume_reduction = 0.0;  // fraction not escalated
};

TriageOutcome triage_apply(const TriageModel& model, const std::vector<IncidentRecord>& test,
                           const EmbeddingSet& test_embeddings);

/// Exhaustive top-k by cosine similarity, ties by ascending document id.
std::vector<std::string> retrieve_topk(const std::vector<float>& query,
                                       const EmbeddingSet& documents, size_t k);

}  // namespace logenc
