#pragma once

#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "logenc/nn.hpp"
#include "logenc/tokenizer.hpp"

namespace logenc {

using MatF = Mat<float>;

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// What masking may touch: delimiters and specials are off limits, and RANDOM
/// replacements draw only from the remaining content ids.
struct MaskingRules {
    std::set<uint32_t> delimiter_ids;
    uint32_t vocab_size = 0;
    std::vector<uint32_t> random_pool;
};

MaskingRules make_masking_rules(const std::set<uint32_t>& delimiter_ids, uint32_t vocab_size);
inline MaskingRules make_masking_rules(const TokenizerModel& model) {
    return make_masking_rules(model.delimiter_ids, model.vocab_size());
}

struct MaskPlan {
    enum class Kind : uint8_t { kMask, kRandom, kKeep };
    std::vector<size_t> positions;  // sorted, unique
    std::vector<Kind> kinds;
    std::vector<uint32_t> replacements;  // final corrupted id per position
    std::vector<uint32_t> originals;
    size_t eligible_count = 0;
};

/**
 * Independently selects each eligible (non-delimiter, non-special) position
 * with probability config.mask_rate, then assigns MASK/RANDOM/KEEP by the
 * configured fractions.  If nothing gets selected the draw repeats once, then
 * the first eligible position is forced.  Throws NoEligibleTokens when the
 * sequence holds nothing maskable.
 */
MaskPlan plan_masks(const std::vector<uint32_t>& ids, const MaskingRules& rules,
                    const EncoderConfig& config, uint64_t seed);

std::vector<uint32_t> apply_mask_plan(const std::vector<uint32_t>& ids, const MaskPlan& plan);

/// BOS + ids + EOS, truncating content to max_seq_len - 2 first.
std::vector<uint32_t> wrap_sequence(const std::vector<uint32_t>& content, int max_seq_len);

/// true everywhere except PAD.
std::vector<bool> key_mask_for(const std::vector<uint32_t>& ids);

/// Positions that count as content when pooling: everything but PAD/BOS/EOS.
std::vector<size_t> content_positions(const std::vector<uint32_t>& ids);

struct EncoderModel {
    EncoderConfig config;
    EncoderParams<float> params;
};

struct Embedding {
    std::vector<float> vector;
    std::string source_id;
    static constexpr const char* kPooling = "mean-of-content-tokens";
};

/// Mean of the final-layer states over content positions.  Throws EmptyContent.
Embedding embed_log(const EncoderModel& model, const std::vector<uint32_t>& content_ids,
                    const std::string& source_id);

/**
 * Checkpoint directory: manifest.json (config, step, tensor table) plus one
 * little-endian float32 flat binary per tensor.  extra carries non-model
 * tensors such as optimizer moments; reload is bit-exact.
 */
struct Checkpoint {
    EncoderConfig config;
    EncoderParams<float> params;
    std::map<std::string, MatF> extra;
    uint64_t step = 0;
};

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace logenc
