#include "logenc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace logenc {

IntrinsicReport intrinsic_eval(const EncoderModel& model, const TokenizerModel& tokenizer,
                               const std::vector<LogRecord>& records, uint64_t mask_seed,
                               const std::string& dataset_tag,
                               std::vector<MaskedTokenDetail>* detail) {
    MaskingRules rules = make_masking_rules(tokenizer);
    const size_t chunk_len = static_cast<size_t>(model.config.max_seq_len) - 2;

    // Per-record partials, aggregated in sorted-id order below so the report
    // does not depend on corpus order even through float accumulation.
    struct RecordPartial {
        std::string id;
        double nll = 0.0;
        uint64_t correct = 0, count = 0;
        std::vector<MaskedTokenDetail> details;
    };
    std::vector<RecordPartial> partials;
    IntrinsicReport report;
    report.dataset_tag = dataset_tag;

    for (const auto& rec : records) {
        std::vector<uint32_t> content = encode(tokenizer, rec.raw).ids;
        uint64_t rec_seed = derive_seed(mask_seed, rec.id);
        RecordPartial part;
        part.id = rec.id;
        bool scored = false;
        for (size_t off = 0, chunk = 0; off < content.size(); off += chunk_len, ++chunk) {
            size_t end = std::min(off + chunk_len, content.size());
            std::vector<uint32_t> ids;
            ids.reserve(end - off + 2);
            ids.push_back(TokenizerModel::kBos);
            ids.insert(ids.end(), content.begin() + off, content.begin() + end);
            ids.push_back(TokenizerModel::kEos);

            MaskPlan plan;
            try {
                plan = plan_masks(ids, rules, model.config,
                                  derive_seed(rec_seed, "chunk", chunk));
            } catch (const Error& e) {
                if (e.code() == "NoEligibleTokens") continue;
                throw;
            }
            std::vector<uint32_t> corrupted = apply_mask_plan(ids, plan);
            ForwardCache<float> cache;
            encoder_forward(model.params, model.config, corrupted, key_mask_for(corrupted),
                            cache);
            MatF logits = mlm_logits_at(model.params, cache.states, plan.positions);
            for (Eigen::Index i = 0; i < logits.rows(); ++i) {
                float mx = logits.row(i).maxCoeff();
                double lse =
                    std::log((logits.row(i).cast<double>().array() - mx).exp().sum()) + mx;
                double lp = static_cast<double>(logits(i, plan.originals[i])) - lse;
                Eigen::Index argmax;
                logits.row(i).maxCoeff(&argmax);
                part.nll -= lp;
                part.correct += static_cast<uint32_t>(argmax) == plan.originals[i] ? 1 : 0;
                ++part.count;
                if (detail) {
                    part.details.push_back({rec.id, plan.positions[i], plan.originals[i],
                                            static_cast<uint32_t>(argmax), lp});
                }
            }
            scored = true;
        }
        if (!scored) ++report.skipped_records;
        partials.push_back(std::move(part));
    }
    std::stable_sort(partials.begin(), partials.end(),
                     [](const RecordPartial& a, const RecordPartial& b) { return a.id < b.id; });
    double total_nll = 0.0;
    uint64_t correct = 0, count = 0;
    for (auto& part : partials) {
        total_nll += part.nll;
        correct += part.correct;
        count += part.count;
        if (detail) {
            detail->insert(detail->end(), part.details.begin(), part.details.end());
        }
    }
    if (count == 0) throw Error("NoMaskedTokens", "nothing was masked across all records");
    report.perplexity = std::exp(total_nll / static_cast<double>(count));
    report.accuracy = static_cast<double>(correct) / static_cast<double>(count);
    report.masked_token_count = count;
    return report;
}

namespace {

void check_results(const std::vector<RankedResult>& results) {
    if (results.empty()) throw Error("ConfigInvalid", "need at least one ranked result");
    for (const auto& r : results) {
        std::unordered_set<std::string> seen(r.ranked_doc_ids.begin(),
                                             r.ranked_doc_ids.end());
        if (seen.size() != r.ranked_doc_ids.size()) {
            throw Error("ConfigInvalid", "ranking for query " + r.query_id + " has duplicates");
        }
    }
}

}  // namespace

double mrr(const std::vector<RankedResult>& results) {
    check_results(results);
    double total = 0.0;
    for (const auto& r : results) {
        for (size_t i = 0; i < r.ranked_doc_ids.size(); ++i) {
            if (r.relevant_doc_ids.count(r.ranked_doc_ids[i])) {
                total += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    return total / static_cast<double>(results.size());
}

double map(const std::vector<RankedResult>& results) {
    check_results(results);
    double total = 0.0;
    for (const auto& r : results) {
        if (r.relevant_doc_ids.empty()) continue;  // contributes 0
        double ap = 0.0;
        uint64_t hits = 0;
        for (size_t i = 0; i < r.ranked_doc_ids.size(); ++i) {
            if (r.relevant_doc_ids.count(r.ranked_doc_ids[i])) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(i + 1);
            }
        }
        total += ap / static_cast<double>(r.relevant_doc_ids.size());
    }
    return total / static_cast<double>(results.size());
}

}  // namespace logenc
