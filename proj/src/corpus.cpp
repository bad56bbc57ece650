#include "logenc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "logenc/rng.hpp"

namespace logenc {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::id_test: return "id_test";
        case Split::ood_test: return "ood_test";
        case Split::unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "id_test") return Split::id_test;
    if (name == "ood_test") return Split::ood_test;
    if (name == "unlabeled") return Split::unlabeled;
    throw Error("ConfigInvalid", "unknown split label '" + name + "'");
}

std::string canonical_fields_json(const std::map<std::string, std::string>& fields) {
    nlohmann::json obj = nlohmann::json::object();
    for (const auto& [k, v] : fields) obj[k] = v;  // std::map iterates in byte order
    return obj.dump();
}

LogRecord normalize(LogRecord record) {
    while (!record.raw.empty() && (record.raw.back() == '\n' || record.raw.back() == '\r')) {
        record.raw.pop_back();
    }
    if (record.fields.has_value()) {
        record.raw = canonical_fields_json(*record.fields);
    }
    if (record.raw.empty()) {
        throw Error("EmptyRecord", "record '" + record.id + "' is empty after normalization");
    }
    return record;
}

std::pair<std::vector<LogRecord>, DedupReport> dedup_exact(std::vector<LogRecord> records) {
    DedupReport report;
    report.input_count = static_cast<int64_t>(records.size());

    std::unordered_map<std::string, size_t> first_seen;  // raw -> group index
    std::vector<std::vector<std::string>> groups;
    std::vector<LogRecord> kept;
    kept.reserve(records.size());

    for (auto& rec : records) {
        auto it = first_seen.find(rec.raw);
        if (it == first_seen.end()) {
            first_seen.emplace(rec.raw, groups.size());
            groups.push_back({rec.id});
            kept.push_back(std::move(rec));
        } else {
            groups[it->second].push_back(rec.id);
            ++report.exact_removed;
        }
    }
    for (auto& g : groups) {
        if (g.size() > 1) report.duplicate_groups.push_back(std::move(g));
    }
    report.output_count = static_cast<int64_t>(kept.size());
    return {std::move(kept), report};
}

MinHashSignature minhash_signature(std::string_view raw, int num_permutations,
                                   int shingle_width, uint64_t seed) {
    if (num_permutations < 1) {
        throw Error("BadBanding", "num_permutations must be >= 1");
    }
    if (static_cast<int>(raw.size()) < shingle_width) {
        throw Error("RecordTooShort", "record of " + std::to_string(raw.size()) +
                                          " bytes is shorter than shingle width " +
                                          std::to_string(shingle_width));
    }

    // Universal-hash permutations of the base shingle hash: h_i = a_i*h + b_i
    // over 2^64 with odd a_i. Parameters derive from the seed.
    std::vector<uint64_t> mins(static_cast<size_t>(num_permutations), ~0ULL);
    std::vector<uint64_t> mul(num_permutations), add(num_permutations);
    for (int i = 0; i < num_permutations; ++i) {
        mul[i] = derive_seed(seed, "minhash.a", static_cast<uint64_t>(i)) | 1ULL;
        add[i] = derive_seed(seed, "minhash.b", static_cast<uint64_t>(i));
    }

    size_t n_shingles = raw.size() - static_cast<size_t>(shingle_width) + 1;
    for (size_t pos = 0; pos < n_shingles; ++pos) {
        uint64_t base = mix64(fnv1a64(raw.substr(pos, static_cast<size_t>(shingle_width))));
        for (int i = 0; i < num_permutations; ++i) {
            uint64_t h = mul[i] * base + add[i];
            if (h < mins[i]) mins[i] = h;
        }
    }

    MinHashSignature sig;
    sig.values = std::move(mins);
    sig.num_permutations = num_permutations;
    sig.shingle_width = shingle_width;
    return sig;
}

double estimated_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
    if (a.num_permutations != b.num_permutations || a.values.size() != b.values.size()) {
        throw Error("BadBanding", "signatures have mismatched permutation counts");
    }
    size_t equal = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i] == b.values[i]) ++equal;
    }
    return static_cast<double>(equal) / static_cast<double>(a.values.size());
}

std::pair<std::vector<LogRecord>, DedupReport> dedup_approx(std::vector<LogRecord> records,
                                                            const ApproxDedupConfig& config) {
    if (config.bands * config.rows_per_band != config.num_permutations) {
        throw Error("BadBanding", "bands (" + std::to_string(config.bands) + ") x rows (" +
                                      std::to_string(config.rows_per_band) +
                                      ") != num_permutations (" +
                                      std::to_string(config.num_permutations) + ")");
    }
    if (config.jaccard_threshold <= 0.0 || config.jaccard_threshold > 1.0) {
        throw Error("ConfigInvalid", "jaccard_threshold must lie in (0, 1]");
    }

    DedupReport report;
    report.input_count = static_cast<int64_t>(records.size());

    const size_t n = records.size();
    std::vector<bool> has_sig(n, false);
    std::vector<MinHashSignature> sigs(n);
    parallel_for(n, config.threads, [&](size_t i) {
        if (static_cast<int>(records[i].raw.size()) >= config.shingle_width) {
            sigs[i] = minhash_signature(records[i].raw, config.num_permutations,
                                        config.shingle_width, config.seed);
            has_sig[i] = true;
        }
    });

    // LSH banding: records sharing any band bucket become candidate pairs.
    std::unordered_map<uint64_t, std::vector<size_t>> buckets;
    buckets.reserve(n * static_cast<size_t>(config.bands));
    for (size_t i = 0; i < n; ++i) {
        if (!has_sig[i]) continue;
        for (int b = 0; b < config.bands; ++b) {
            uint64_t h = fnv1a64("band") ^ mix64(static_cast<uint64_t>(b));
            for (int r = 0; r < config.rows_per_band; ++r) {
                h = mix64(h ^ sigs[i].values[static_cast<size_t>(b * config.rows_per_band + r)]);
            }
            buckets[h].push_back(i);
        }
    }

    // Candidate verification against the signature-estimated Jaccard.
    // Record j is removed iff some earlier candidate partner i < j qualifies;
    // groups are assembled with union-find for the report.
    std::vector<size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<size_t(size_t)> find = [&](size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };

    std::vector<bool> removed(n, false);
    std::unordered_set<uint64_t> checked;
    for (auto& [key, members] : buckets) {
        (void)key;
        if (members.size() < 2) continue;
        for (size_t a = 0; a < members.size(); ++a) {
            for (size_t b = a + 1; b < members.size(); ++b) {
                size_t i = std::min(members[a], members[b]);
                size_t j = std::max(members[a], members[b]);
                if (i == j) continue;
                uint64_t pair_key = (static_cast<uint64_t>(i) << 32) | static_cast<uint64_t>(j);
                if (!checked.insert(pair_key).second) continue;
                if (estimated_jaccard(sigs[i], sigs[j]) >= config.jaccard_threshold) {
                    removed[j] = true;
                    size_t ri = find(i), rj = find(j);
                    if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
                }
            }
        }
    }

    // A group lists the survivor followed by everything merged into it.
    std::unordered_map<size_t, size_t> cluster_size;
    for (size_t i = 0; i < n; ++i) ++cluster_size[find(i)];
    std::unordered_map<size_t, std::vector<std::string>> groups;
    for (size_t i = 0; i < n; ++i) {
        size_t root = find(i);
        if (cluster_size[root] >= 2) groups[root].push_back(records[i].id);
    }
    std::vector<size_t> roots;
    for (auto& [root, ids] : groups) roots.push_back(root);
    std::sort(roots.begin(), roots.end());
    for (size_t root : roots) report.duplicate_groups.push_back(std::move(groups[root]));

    std::vector<LogRecord> kept;
    kept.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        if (removed[i]) {
            ++report.approx_removed;
        } else {
            kept.push_back(std::move(records[i]));
        }
    }
    report.output_count = static_cast<int64_t>(kept.size());
    return {std::move(kept), report};
}

std::vector<LogRecord> split_corpus(std::vector<LogRecord> records, double train_fraction,
                                    double id_test_fraction, std::vector<LogRecord> ood_records,
                                    uint64_t seed) {
    if (train_fraction < 0.0 || id_test_fraction < 0.0 ||
        train_fraction + id_test_fraction > 1.0 + 1e-12) {
        throw Error("ConfigInvalid", "split fractions must be non-negative and sum to <= 1");
    }
    std::unordered_set<std::string> sources;
    for (const auto& r : records) sources.insert(r.source);
    for (const auto& r : ood_records) {
        if (sources.count(r.source)) {
            throw Error("SourceOverlap",
                        "ood source '" + r.source + "' also appears in the base corpus");
        }
    }

    const size_t n = records.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "corpus.split"));
    for (size_t i = n; i > 1; --i) {  // Fisher-Yates
        size_t j = rng.below(i);
        std::swap(order[i - 1], order[j]);
    }

    auto n_train = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(n)));
    auto n_id = static_cast<size_t>(std::llround(id_test_fraction * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_id = std::min(n_id, n - n_train);

    for (size_t k = 0; k < n; ++k) {
        Split s = k < n_train ? Split::train
                              : (k < n_train + n_id ? Split::id_test : Split::unlabeled);
        records[order[k]].split = s;
    }
    for (auto& r : ood_records) {
        r.split = Split::ood_test;
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace logenc
