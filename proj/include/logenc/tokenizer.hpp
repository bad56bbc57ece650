#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "logenc/corpus.hpp"

namespace logenc {

/**
 * Byte-level BPE tokenizer.
 *
 * Id layout: 5 special tokens first, then the 256 byte tokens, then learned
 * merges in training order.  Merges never cross a whitespace boundary; the
 * whitespace runs themselves are chunks, so encode/decode round-trips any
 * byte string exactly.
 */
struct TokenizerModel {
    static constexpr uint32_t kPad = 0;
    static constexpr uint32_t kMask = 1;
    static constexpr uint32_t kUnk = 2;
    static constexpr uint32_t kBos = 3;
    static constexpr uint32_t kEos = 4;
    static constexpr uint32_t kNumSpecials = 5;
    static constexpr uint32_t kByteBase = kNumSpecials;  // byte b has id kByteBase + b

    /// id -> decoded bytes; special ids hold empty strings.
    std::vector<std::string> vocab;
    /// (left id, right id) pairs in learned order; pair i produced id 261 + i.
    std::vector<std::pair<uint32_t, uint32_t>> merges;
    /// Token ids whose decoded bytes consist only of delimiter characters.
    std::set<uint32_t> delimiter_ids;

    uint32_t vocab_size() const { return static_cast<uint32_t>(vocab.size()); }
    static bool is_special(uint32_t id) { return id < kNumSpecials; }
    static const char* special_name(uint32_t id);
};

/// Token ids plus per-token (start, end) byte offsets into the source.
struct TokenSequence {
    std::vector<uint32_t> ids;
    std::vector<std::pair<size_t, size_t>> offsets;
};

/// Characters that count as structure rather than content.
/// Default covers quoting, bracketing, and key/value punctuation.
std::set<char> default_delimiter_charset();

/**
 * Trains by greedy highest-frequency pair merging until target_vocab_size is
 * reached or no pair occurs at least twice.  Ties break on the
 * lexicographically smaller left token bytes, then the smaller right token.
 * Throws CorpusTooSmall if no merge is possible at all.
 */
TokenizerModel train_bpe(const std::vector<LogRecord>& corpus, uint32_t target_vocab_size,
                         uint64_t seed);

/// Applies merges in learned order within each whitespace-delimited chunk.
TokenSequence encode(const TokenizerModel& model, std::string_view raw);

/// Inverse of encode; special tokens decode to nothing.  Throws UnknownTokenId.
std::string decode(const TokenizerModel& model, const std::vector<uint32_t>& ids);

/**
 * Marks every vocab id whose decoded bytes, after trimming spaces, consist
 * solely of delimiter_charset characters.  Space-only tokens therefore count
 * as delimiters; special ids never do.  The result is stored into
 * model.delimiter_ids and returned.
 */
std::set<uint32_t> classify_delimiters(TokenizerModel& model,
                                       const std::set<char>& delimiter_charset);

/// Serializes to the versioned JSON model format; byte-stable for equal models.
void save_tokenizer(const TokenizerModel& model, const std::string& path);
TokenizerModel load_tokenizer(const std::string& path);

}  // namespace logenc
