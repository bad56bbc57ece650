#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "logenc/corpus.hpp"

namespace logenc {

struct DrainConfig {
    int depth = 4;                     // tree depth counting the root and leaf levels
    double similarity_threshold = 0.4;
    int max_children = 100;
    static constexpr const char* kWildcard = "<*>";

    void validate() const;  // throws BadConfig
};

struct TemplateIndex {
    /// template-id -> tokens (with wildcards); ids follow creation order.
    std::map<uint32_t, std::vector<std::string>> templates;
    /// log-id -> template-id.
    std::map<std::string, uint32_t> assignments;
    uint64_t skipped_empty = 0;

    std::string template_string(uint32_t id) const;
};

/**
 * Drain parse: route each log by token count, then by its first depth-2
 * tokens (tokens containing digits route through the wildcard branch, as does
 * overflow past max_children), then join the leaf cluster with the highest
 * fraction of position-wise equal tokens when that fraction reaches the
 * similarity threshold.  Joining wildcards every mismatched position.
 * Deterministic in input order; empty logs are skipped and counted.
 */
TemplateIndex drain_parse(const std::vector<LogRecord>& logs, const DrainConfig& config);

using IdPair = std::pair<std::string, std::string>;

/**
 * Uniform within-template positive pairs and cross-template negative pairs,
 * sampled without repetition.  Throws InsufficientDiversity when either pool
 * cannot satisfy the requested count.
 */
std::pair<std::vector<IdPair>, std::vector<IdPair>> make_similarity_pairs(
    const TemplateIndex& index, size_t n_pos, size_t n_neg, uint64_t seed);

}  // namespace logenc
