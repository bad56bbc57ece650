#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "logenc/encoder.hpp"

namespace logenc {

struct IntrinsicReport {
    double perplexity = 0.0;
    double accuracy = 0.0;
    uint64_t masked_token_count = 0;
    std::string dataset_tag;  // IDTS, ODTS, or other
    uint64_t skipped_records = 0;
};

/// One masked position's outcome, for external recomputation of the report.
struct MaskedTokenDetail {
    std::string record_id;
    size_t position;
    uint32_t original;
    uint32_t predicted;
    double logprob;
};

/**
 * Pseudo-perplexity and masked accuracy over the records.  Each record is
 * tokenized, chunked to max_seq_len - 2 content tokens, wrapped in BOS/EOS,
 * and masked via plan_masks with a seed derived from (mask_seed, record id,
 * chunk index) so reordering records cannot change the result.
 * perplexity = exp(mean NLL over all masked positions); accuracy = fraction
 * where the argmax logit recovers the original.  Records whose tokens are all
 * delimiter/special are skipped and counted.  Throws NoMaskedTokens when
 * nothing at all was masked.
 */
IntrinsicReport intrinsic_eval(const EncoderModel& model, const TokenizerModel& tokenizer,
                               const std::vector<LogRecord>& records, uint64_t mask_seed,
                               const std::string& dataset_tag,
                               std::vector<MaskedTokenDetail>* detail = nullptr);

struct RankedResult {
    std::string query_id;
    std::vector<std::string> ranked_doc_ids;
    std::set<std::string> relevant_doc_ids;
};

/**
 * Mean reciprocal rank of the first relevant document per query; queries that
 * retrieve no relevant document contribute 0.  Throws ConfigInvalid on an
 * empty result list or a ranking with duplicates.
 */
double mrr(const std::vector<RankedResult>& results);

/**
 * Mean average precision.  AP sums precision at each relevant document's rank
 * and divides by the total number of relevant documents in the reference set,
 * so unretrieved relevant documents contribute 0.
 */
double map(const std::vector<RankedResult>& results);

}  // namespace logenc
