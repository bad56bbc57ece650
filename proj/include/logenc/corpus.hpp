#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "logenc/common.hpp"

namespace logenc {

enum class Split { train, id_test, ood_test, unlabeled };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

/// One log line (or one serialized JSON event). `fields` is present for
/// structured logs; after normalize(), `raw` is the canonical serialization
/// of `fields` (compact JSON, keys in byte order). `meta` carries sidecar
/// annotations such as synthetic ground truth; it never participates in
/// dedup or canonicalization.
struct LogRecord {
    std::string id;
    std::string raw;
    std::optional<std::map<std::string, std::string>> fields;
    std::string source;
    Split split = Split::unlabeled;
    std::map<std::string, std::string> meta;
};

struct MinHashSignature {
    std::vector<uint64_t> values;  // length == num_permutations
    int num_permutations = 0;
    int shingle_width = 0;
};

struct DedupReport {
    int64_t input_count = 0;
    int64_t exact_removed = 0;
    int64_t approx_removed = 0;
    int64_t output_count = 0;
    std::vector<std::vector<std::string>> duplicate_groups;  // survivor first
};

struct ApproxDedupConfig {
    double jaccard_threshold = 0.9;
    int num_permutations = 256;
    int bands = 32;
    int rows_per_band = 8;
    int shingle_width = 8;
    uint64_t seed = 0;
    int threads = 1;
};

/// Canonical JSON serialization of a field map: compact, keys in byte order.
std::string canonical_fields_json(const std::map<std::string, std::string>& fields);

/// Strip trailing newlines; re-serialize `fields` (if present) into raw in
/// canonical key order. Idempotent. Throws EmptyRecord if nothing remains.
LogRecord normalize(LogRecord record);

/// Keep the first record per distinct raw byte string. Order-stable.
std::pair<std::vector<LogRecord>, DedupReport> dedup_exact(std::vector<LogRecord> records);

/// MinHash over overlapping character shingles of `shingle_width` bytes.
/// Deterministic for fixed (raw, parameters, seed). Throws RecordTooShort.
MinHashSignature minhash_signature(std::string_view raw, int num_permutations,
                                   int shingle_width, uint64_t seed);

/// Fraction of equal signature positions; estimates shingle-set Jaccard.
double estimated_jaccard(const MinHashSignature& a, const MinHashSignature& b);

/// LSH-banded near-duplicate removal. Within each candidate pair whose
/// signature-estimated Jaccard >= threshold, only the earlier record (input
/// order) survives. Records shorter than the shingle width pass through.
/// Expects exact-deduplicated input. Throws BadBanding when
/// bands * rows_per_band != num_permutations.
std::pair<std::vector<LogRecord>, DedupReport> dedup_approx(std::vector<LogRecord> records,
                                                            const ApproxDedupConfig& config);

/// Label records train/id_test (leftover stays unlabeled) by seeded shuffle,
/// then append ood_records labeled ood_test. Ood sources must be disjoint
/// from record sources (SourceOverlap otherwise). Record order is preserved.
std::vector<LogRecord> split_corpus(std::vector<LogRecord> records, double train_fraction,
                                    double id_test_fraction, std::vector<LogRecord> ood_records,
                                    uint64_t seed);

}  // namespace logenc
