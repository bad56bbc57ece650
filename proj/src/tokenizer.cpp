#include "logenc/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "logenc/io.hpp"

namespace logenc {

using nlohmann::json;

namespace {

using Pair = std::pair<uint32_t, uint32_t>;

struct PairHash {
    size_t operator()(const Pair& p) const {
        return std::hash<uint64_t>{}((static_cast<uint64_t>(p.first) << 32) | p.second);
    }
};

// Spans of alternating non-whitespace and whitespace runs, covering raw.
std::vector<std::pair<size_t, size_t>> chunk_spans(std::string_view raw) {
    std::vector<std::pair<size_t, size_t>> spans;
    size_t i = 0;
    while (i < raw.size()) {
        bool ws = is_ascii_space(raw[i]);
        size_t j = i + 1;
        while (j < raw.size() && is_ascii_space(raw[j]) == ws) ++j;
        spans.emplace_back(i, j);
        i = j;
    }
    return spans;
}

std::vector<uint32_t> byte_ids(std::string_view chunk) {
    std::vector<uint32_t> ids;
    ids.reserve(chunk.size());
    for (unsigned char c : chunk) ids.push_back(TokenizerModel::kByteBase + c);
    return ids;
}

// Rewrites every (left, right) occurrence in word with merged, left to right.
void apply_merge(std::vector<uint32_t>& word, uint32_t left, uint32_t right, uint32_t merged) {
    size_t out = 0;
    for (size_t i = 0; i < word.size();) {
        if (i + 1 < word.size() && word[i] == left && word[i + 1] == right) {
            word[out++] = merged;
            i += 2;
        } else {
            word[out++] = word[i++];
        }
    }
    word.resize(out);
}

}  // namespace

const char* TokenizerModel::special_name(uint32_t id) {
    switch (id) {
        case kPad: return "<pad>";
        case kMask: return "<mask>";
        case kUnk: return "<unk>";
        case kBos: return "<bos>";
        case kEos: return "<eos>";
        default: return "";
    }
}

std::set<char> default_delimiter_charset() {
    return {'"', '\'', '{', '}', '[', ']', '(', ')', ':', ';',
            ',', '=', '/', '\\', '|', '<', '>'};
}

TokenizerModel train_bpe(const std::vector<LogRecord>& corpus, uint32_t target_vocab_size,
                         uint64_t seed) {
    (void)seed;  // training is a deterministic function of the corpus
    if (corpus.empty()) throw Error("CorpusTooSmall", "empty training corpus");
    uint32_t base = TokenizerModel::kByteBase + 256;
    if (target_vocab_size <= base) {
        throw Error("ConfigInvalid", "target_vocab_size must exceed " + std::to_string(base));
    }

    TokenizerModel model;
    model.vocab.resize(base);
    for (int b = 0; b < 256; ++b) {
        model.vocab[TokenizerModel::kByteBase + b] = std::string(1, static_cast<char>(b));
    }

    // Unique chunks with multiplicities.
    std::vector<std::vector<uint32_t>> words;
    std::vector<uint64_t> counts;
    std::unordered_map<std::string, size_t> word_index;
    for (const auto& rec : corpus) {
        for (auto [s, e] : chunk_spans(rec.raw)) {
            std::string chunk(rec.raw.substr(s, e - s));
            auto [it, inserted] = word_index.emplace(chunk, words.size());
            if (inserted) {
                words.push_back(byte_ids(chunk));
                counts.push_back(0);
            }
            ++counts[it->second];
        }
    }

    std::unordered_map<Pair, int64_t, PairHash> pair_counts;
    std::unordered_map<Pair, std::unordered_set<size_t>, PairHash> pair_where;
    for (size_t w = 0; w < words.size(); ++w) {
        const auto& word = words[w];
        for (size_t i = 0; i + 1 < word.size(); ++i) {
            Pair p{word[i], word[i + 1]};
            pair_counts[p] += static_cast<int64_t>(counts[w]);
            pair_where[p].insert(w);
        }
    }

    while (model.vocab_size() < target_vocab_size) {
        Pair best{0, 0};
        int64_t best_count = 0;
        for (const auto& [p, c] : pair_counts) {
            if (c < 2 || c < best_count) continue;
            if (c > best_count) {
                best = p;
                best_count = c;
                continue;
            }
            const auto& bl = model.vocab[best.first];
            const auto& br = model.vocab[best.second];
            const auto& pl = model.vocab[p.first];
            const auto& pr = model.vocab[p.second];
            if (pl < bl || (pl == bl && pr < br)) best = p;
        }
        if (best_count < 2) break;

        uint32_t merged = model.vocab_size();
        model.vocab.push_back(model.vocab[best.first] + model.vocab[best.second]);
        model.merges.push_back(best);

        auto affected = std::move(pair_where[best]);
        pair_where.erase(best);
        for (size_t w : affected) {
            auto& word = words[w];
            bool present = false;
            for (size_t i = 0; !present && i + 1 < word.size(); ++i) {
                present = word[i] == best.first && word[i + 1] == best.second;
            }
            if (!present) continue;  // stale index from an earlier rewrite
            int64_t c = static_cast<int64_t>(counts[w]);
            for (size_t i = 0; i + 1 < word.size(); ++i) {
                pair_counts[{word[i], word[i + 1]}] -= c;
            }
            apply_merge(word, best.first, best.second, merged);
            for (size_t i = 0; i + 1 < word.size(); ++i) {
                Pair p{word[i], word[i + 1]};
                pair_counts[p] += c;
                pair_where[p].insert(w);
            }
        }
        for (auto it = pair_counts.begin(); it != pair_counts.end();) {
            it = it->second <= 0 ? pair_counts.erase(it) : std::next(it);
        }
    }

    if (model.merges.empty()) {
        throw Error("CorpusTooSmall", "no byte pair occurs twice; nothing to merge");
    }
    return model;
}

TokenSequence encode(const TokenizerModel& model, std::string_view raw) {
    std::unordered_map<Pair, uint32_t, PairHash> rank;
    rank.reserve(model.merges.size());
    for (uint32_t r = 0; r < model.merges.size(); ++r) rank.emplace(model.merges[r], r);

    TokenSequence seq;
    for (auto [s, e] : chunk_spans(raw)) {
        std::vector<uint32_t> ids = byte_ids(raw.substr(s, e - s));
        std::vector<std::pair<size_t, size_t>> offs;
        offs.reserve(ids.size());
        for (size_t i = s; i < e; ++i) offs.emplace_back(i, i + 1);

        // Earliest-learned merge first; later merges never recreate earlier pairs.
        while (ids.size() > 1) {
            uint32_t best_rank = std::numeric_limits<uint32_t>::max();
            for (size_t i = 0; i + 1 < ids.size(); ++i) {
                auto it = rank.find({ids[i], ids[i + 1]});
                if (it != rank.end() && it->second < best_rank) best_rank = it->second;
            }
            if (best_rank == std::numeric_limits<uint32_t>::max()) break;
            auto [l, r] = model.merges[best_rank];
            uint32_t merged = TokenizerModel::kByteBase + 256 + best_rank;
            size_t out = 0;
            for (size_t i = 0; i < ids.size();) {
                if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
                    ids[out] = merged;
                    offs[out] = {offs[i].first, offs[i + 1].second};
                    i += 2;
                } else {
                    ids[out] = ids[i];
                    offs[out] = offs[i];
                    i += 1;
                }
                ++out;
            }
            ids.resize(out);
            offs.resize(out);
        }
        seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
        seq.offsets.insert(seq.offsets.end(), offs.begin(), offs.end());
    }
    return seq;
}

std::string decode(const TokenizerModel& model, const std::vector<uint32_t>& ids) {
    std::string out;
    for (uint32_t id : ids) {
        if (TokenizerModel::is_special(id)) continue;
        if (id >= model.vocab_size()) {
            throw Error("UnknownTokenId", "token id " + std::to_string(id) + " not in vocab");
        }
        out += model.vocab[id];
    }
    return out;
}

std::set<uint32_t> classify_delimiters(TokenizerModel& model,
                                       const std::set<char>& delimiter_charset) {
    std::set<uint32_t> ids;
    for (uint32_t id = TokenizerModel::kNumSpecials; id < model.vocab_size(); ++id) {
        bool all = true;
        for (char c : model.vocab[id]) {
            if (c == ' ') continue;  // trimmed: space-only tokens are delimiters
            all = all && delimiter_charset.count(c) > 0;
        }
        if (all) ids.insert(id);
    }
    model.delimiter_ids = ids;
    return ids;
}

void save_tokenizer(const TokenizerModel& model, const std::string& path) {
    json obj;
    json vocab = json::array();
    for (const auto& tok : model.vocab) vocab.push_back(bytes_to_json_string(tok));
    obj["vocab"] = std::move(vocab);
    json merges = json::array();
    for (const auto& [l, r] : model.merges) merges.push_back(json::array({l, r}));
    obj["merges"] = std::move(merges);
    json specials = json::object();
    for (uint32_t id = 0; id < TokenizerModel::kNumSpecials; ++id) {
        specials[TokenizerModel::special_name(id)] = id;
    }
    obj["special_tokens"] = std::move(specials);
    obj["delimiter_ids"] = model.delimiter_ids;
    obj["version"] = 1;
    write_file_atomic(path, obj.dump());
}

TokenizerModel load_tokenizer(const std::string& path) {
    json obj;
    try {
        obj = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Error("ConfigInvalid", path + ": " + e.what());
    }
    if (obj.value("version", 0) != 1) {
        throw Error("ConfigInvalid", path + ": unsupported tokenizer model version");
    }
    TokenizerModel model;
    for (const auto& tok : obj.at("vocab")) {
        model.vocab.push_back(json_string_to_bytes(tok.get<std::string>()));
    }
    for (const auto& m : obj.at("merges")) {
        model.merges.emplace_back(m.at(0).get<uint32_t>(), m.at(1).get<uint32_t>());
    }
    for (uint32_t id : obj.at("delimiter_ids")) model.delimiter_ids.insert(id);
    uint32_t base = TokenizerModel::kByteBase + 256;
    if (model.vocab.size() != base + model.merges.size()) {
        throw Error("ConfigInvalid", path + ": vocab/merge size mismatch");
    }
    for (size_t i = 0; i < model.merges.size(); ++i) {
        auto [l, r] = model.merges[i];
        if (l >= base + i || r >= base + i ||
            model.vocab[base + i] != model.vocab[l] + model.vocab[r]) {
            throw Error("ConfigInvalid", path + ": merge list does not replay to vocab");
        }
    }
    return model;
}

}  // namespace logenc
