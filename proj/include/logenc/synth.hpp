#pragma once

#include <string>
#include <vector>

#include "logenc/corpus.hpp"

namespace logenc {

/**
 * Template with typed slots ({ip}, {user}, {pid}, {path}, {hex}).  Weights
 * within a generator are relative and get normalized.  anomaly_mutators names
 * the corruption rules eligible for this template; empty means all of
 * field_shuffle, slot_type_swap, and template_splice.
 */
struct TemplateSpec {
    std::string pattern;
    double weight = 1.0;
    std::vector<std::string> anomaly_mutators;
};

/// Built-in spec sets: "syslog-a" (20 unstructured templates), "syslog-b"
/// (10 disjoint unstructured templates, for out-of-distribution tests), and
/// "jsonl" (8 structured event templates).
std::vector<TemplateSpec> synth_family(const std::string& name);

/**
 * Deterministic generator: record i draws everything from a substream of
 * (seed, i), so corpora are byte-stable and parallelizable.  Anomalous
 * records are mutated by one of the spec's rules and keep their ground-truth
 * template id; meta carries template_id, anomaly (0/1), and the mutator used.
 * Records whose raw parses as a JSON object of strings get fields populated.
 * Throws NoSpecs.
 */
std::vector<LogRecord> synth_generate(const std::vector<TemplateSpec>& specs, size_t n,
                                      uint64_t seed, double anomaly_rate,
                                      const std::string& source_name);

}  // namespace logenc
