#include "logenc/templates.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <memory>
#include <set>

#include "logenc/rng.hpp"

namespace logenc {

void DrainConfig::validate() const {
    if (depth < 3) throw Error("BadConfig", "drain depth must be at least 3");
    if (!(similarity_threshold > 0.0 && similarity_threshold <= 1.0)) {
        throw Error("BadConfig", "similarity threshold must lie in (0,1]");
    }
    if (max_children < 1) throw Error("BadConfig", "max_children must be positive");
}

std::string TemplateIndex::template_string(uint32_t id) const {
    const auto& tokens = templates.at(id);
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

namespace {

bool has_digit(const std::string& token) {
    return std::any_of(token.begin(), token.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
}

struct Cluster {
    uint32_t template_id;
    std::vector<std::string> tokens;
};

struct Node {
    std::map<std::string, std::unique_ptr<Node>> children;
    std::vector<Cluster> clusters;
};

double similarity(const std::vector<std::string>& tpl, const std::vector<std::string>& toks) {
    size_t equal = 0;
    for (size_t i = 0; i < toks.size(); ++i) equal += tpl[i] == toks[i] ? 1 : 0;
    return static_cast<double>(equal) / static_cast<double>(toks.size());
}

}  // namespace

TemplateIndex drain_parse(const std::vector<LogRecord>& logs, const DrainConfig& config) {
    config.validate();
    const std::string wildcard = DrainConfig::kWildcard;
    std::map<size_t, std::unique_ptr<Node>> roots;  // keyed by token count
    TemplateIndex index;
    uint32_t next_id = 0;

    for (const auto& rec : logs) {
        std::vector<std::string> tokens = split_whitespace(rec.raw);
        if (tokens.empty()) {
            ++index.skipped_empty;
            continue;
        }

        auto& root = roots[tokens.size()];
        if (!root) root = std::make_unique<Node>();
        Node* node = root.get();
        size_t levels = std::min(tokens.size(), static_cast<size_t>(config.depth) - 2);
        for (size_t d = 0; d < levels; ++d) {
            std::string key = has_digit(tokens[d]) ? wildcard : tokens[d];
            auto it = node->children.find(key);
            if (it == node->children.end()) {
                if (key != wildcard &&
                    node->children.size() >= static_cast<size_t>(config.max_children)) {
                    key = wildcard;
                    it = node->children.find(key);
                }
                if (it == node->children.end()) {
                    it = node->children.emplace(key, std::make_unique<Node>()).first;
                }
            }
            node = it->second.get();
        }

        Cluster* best = nullptr;
        double best_sim = -1.0;
        for (auto& cluster : node->clusters) {
            double sim = similarity(cluster.tokens, tokens);
            if (sim > best_sim) {
                best_sim = sim;
                best = &cluster;
            }
        }
        if (best != nullptr && best_sim >= config.similarity_threshold) {
            for (size_t i = 0; i < tokens.size(); ++i) {
                if (best->tokens[i] != tokens[i]) best->tokens[i] = wildcard;
            }
            index.assignments[rec.id] = best->template_id;
        } else {
            node->clusters.push_back({next_id, tokens});
            index.assignments[rec.id] = next_id;
            ++next_id;
        }
    }

    // Collect final (fully wildcarded) templates.
    std::function<void(Node*)> collect = [&](Node* node) {
        for (auto& cluster : node->clusters) {
            index.templates[cluster.template_id] = cluster.tokens;
        }
        for (auto& [key, child] : node->children) collect(child.get());
    };
    for (auto& [len, root] : roots) collect(root.get());
    return index;
}

namespace {

/// Uniform n-subset of a materialized pool via partial Fisher-Yates.
std::vector<IdPair> sample_from_pool(std::vector<IdPair> pool, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) {
        std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    }
    pool.resize(n);
    return pool;
}

}  // namespace

std::pair<std::vector<IdPair>, std::vector<IdPair>> make_similarity_pairs(
    const TemplateIndex& index, size_t n_pos, size_t n_neg, uint64_t seed) {
    std::map<uint32_t, std::vector<std::string>> by_template;
    for (const auto& [log_id, tpl] : index.assignments) {
        by_template[tpl].push_back(log_id);  // map iteration keeps ids sorted
    }
    if (by_template.size() < 2) {
        throw Error("InsufficientDiversity", "need at least two templates");
    }

    std::vector<IdPair> pos_pool;
    std::vector<std::pair<std::string, uint32_t>> all;
    uint64_t pos_pool_size = 0;
    for (const auto& [tpl, ids] : by_template) {
        pos_pool_size += ids.size() * (ids.size() - 1) / 2;
        for (size_t i = 0; i < ids.size(); ++i) {
            for (size_t j = i + 1; j < ids.size(); ++j) {
                pos_pool.emplace_back(ids[i], ids[j]);
            }
            all.emplace_back(ids[i], tpl);
        }
    }
    std::sort(all.begin(), all.end());
    const uint64_t n = all.size();
    const uint64_t neg_pool_size = n * (n - 1) / 2 - pos_pool_size;
    if (n_pos > pos_pool_size) {
        throw Error("InsufficientDiversity",
                    "positive pool holds only " + std::to_string(pos_pool_size) + " pairs");
    }
    if (n_neg > neg_pool_size) {
        throw Error("InsufficientDiversity",
                    "negative pool holds only " + std::to_string(neg_pool_size) + " pairs");
    }

    Rng rng_pos(derive_seed(seed, "pairs.pos"));
    Rng rng_neg(derive_seed(seed, "pairs.neg"));
    std::vector<IdPair> positives = sample_from_pool(std::move(pos_pool), n_pos, rng_pos);

    std::vector<IdPair> negatives;
    if (neg_pool_size <= 10000 || neg_pool_size < 4 * n_neg) {
        // Small pool: enumerate so near-exhaustive requests cannot stall.
        std::vector<IdPair> neg_pool;
        for (size_t i = 0; i < all.size(); ++i) {
            for (size_t j = i + 1; j < all.size(); ++j) {
                if (all[i].second != all[j].second) {
                    neg_pool.emplace_back(all[i].first, all[j].first);
                }
            }
        }
        negatives = sample_from_pool(std::move(neg_pool), n_neg, rng_neg);
    } else {
        // Large pool: rejection sampling stays uniform and avoids O(n^2) memory.
        std::set<IdPair> used;
        while (negatives.size() < n_neg) {
            uint64_t i = rng_neg.below(n);
            uint64_t j = rng_neg.below(n);
            if (i == j || all[i].second == all[j].second) continue;
            IdPair pair{all[std::min(i, j)].first, all[std::max(i, j)].first};
            if (used.insert(pair).second) negatives.push_back(std::move(pair));
        }
    }
    return {std::move(positives), std::move(negatives)};
}

}  // namespace logenc
