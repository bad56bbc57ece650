#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "logenc/corpus.hpp"

namespace logenc {

// Arbitrary byte strings round-trip through JSON by mapping each byte to the
// Unicode code point of the same value (latin-1 widening). ASCII content is
// unchanged; bytes >= 0x80 become two-byte UTF-8 sequences.
std::string bytes_to_json_string(std::string_view bytes);
std::string json_string_to_bytes(std::string_view utf8);

nlohmann::json record_to_json(const LogRecord& record);
LogRecord record_from_json(const nlohmann::json& obj);

/// Corpus files are JSON-Lines: one object per line with keys
/// {"id","raw","fields"(optional),"source"}; extra scalar keys land in meta.
std::vector<LogRecord> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<LogRecord>& records);

struct EmbeddingSet {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> vectors;

    size_t size() const { return ids.size(); }
    size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

/// Embedding files are JSON-Lines {"id": ..., "vector": [floats]}.
EmbeddingSet read_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const EmbeddingSet& set);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view content);

}  // namespace logenc
