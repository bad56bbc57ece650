#include "logenc/encoder.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "logenc/io.hpp"

namespace logenc {

using nlohmann::json;

void EncoderConfig::validate() const {
    auto fail = [](const std::string& why) { throw Error("BadConfig", why); };
    if (vocab_size < TokenizerModel::kNumSpecials + 1) fail("vocab_size too small");
    if (hidden_dim < 1 || num_layers < 1 || num_heads < 1 || ffn_dim < 1) {
        fail("dimensions must be positive");
    }
    if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
    if (max_seq_len < 2) fail("max_seq_len must be at least 2");
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail("mask_rate must lie in (0,1)");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must lie in [0,1)");
    double s = mask_token_fraction + random_fraction + keep_fraction;
    if (mask_token_fraction < 0 || random_fraction < 0 || keep_fraction < 0 ||
        std::abs(s - 1.0) > 1e-9) {
        fail("masking fractions must be non-negative and sum to 1");
    }
}

void to_json(json& j, const EncoderConfig& c) {
    j = json{{"vocab_size", c.vocab_size},
             {"hidden_dim", c.hidden_dim},
             {"num_layers", c.num_layers},
             {"num_heads", c.num_heads},
             {"ffn_dim", c.ffn_dim},
             {"max_seq_len", c.max_seq_len},
             {"dropout_rate", c.dropout_rate},
             {"mask_rate", c.mask_rate},
             {"mask_token_fraction", c.mask_token_fraction},
             {"random_fraction", c.random_fraction},
             {"keep_fraction", c.keep_fraction}};
}

void from_json(const json& j, EncoderConfig& c) {
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("num_layers").get_to(c.num_layers);
    j.at("num_heads").get_to(c.num_heads);
    j.at("ffn_dim").get_to(c.ffn_dim);
    j.at("max_seq_len").get_to(c.max_seq_len);
    c.dropout_rate = j.value("dropout_rate", 0.0);
    c.mask_rate = j.value("mask_rate", 0.15);
    c.mask_token_fraction = j.value("mask_token_fraction", 0.8);
    c.random_fraction = j.value("random_fraction", 0.1);
    c.keep_fraction = j.value("keep_fraction", 0.1);
}

MaskingRules make_masking_rules(const std::set<uint32_t>& delimiter_ids, uint32_t vocab_size) {
    MaskingRules rules;
    rules.delimiter_ids = delimiter_ids;
    rules.vocab_size = vocab_size;
    for (uint32_t id = TokenizerModel::kNumSpecials; id < vocab_size; ++id) {
        if (!delimiter_ids.count(id)) rules.random_pool.push_back(id);
    }
    return rules;
}

MaskPlan plan_masks(const std::vector<uint32_t>& ids, const MaskingRules& rules,
                    const EncoderConfig& config, uint64_t seed) {
    std::vector<size_t> eligible;
    for (size_t t = 0; t < ids.size(); ++t) {
        if (TokenizerModel::is_special(ids[t])) continue;
        if (rules.delimiter_ids.count(ids[t])) continue;
        eligible.push_back(t);
    }
    if (eligible.empty()) {
        throw Error("NoEligibleTokens", "every token is a delimiter or special token");
    }

    Rng rng(seed);
    std::vector<size_t> selected;
    for (int attempt = 0; attempt < 2 && selected.empty(); ++attempt) {
        for (size_t pos : eligible) {
            if (rng.bernoulli(config.mask_rate)) selected.push_back(pos);
        }
    }
    if (selected.empty()) selected.push_back(eligible.front());

    MaskPlan plan;
    plan.eligible_count = eligible.size();
    for (size_t pos : selected) {
        double u = rng.next_double();
        plan.positions.push_back(pos);
        plan.originals.push_back(ids[pos]);
        if (u < config.mask_token_fraction) {
            plan.kinds.push_back(MaskPlan::Kind::kMask);
            plan.replacements.push_back(TokenizerModel::kMask);
        } else if (u < config.mask_token_fraction + config.random_fraction &&
                   !rules.random_pool.empty()) {
            plan.kinds.push_back(MaskPlan::Kind::kRandom);
            plan.replacements.push_back(
                rules.random_pool[rng.below(rules.random_pool.size())]);
        } else {
            plan.kinds.push_back(MaskPlan::Kind::kKeep);
            plan.replacements.push_back(ids[pos]);
        }
    }
    return plan;
}

std::vector<uint32_t> apply_mask_plan(const std::vector<uint32_t>& ids, const MaskPlan& plan) {
    std::vector<uint32_t> out = ids;
    for (size_t i = 0; i < plan.positions.size(); ++i) {
        out[plan.positions[i]] = plan.replacements[i];
    }
    return out;
}

std::vector<uint32_t> wrap_sequence(const std::vector<uint32_t>& content, int max_seq_len) {
    size_t keep = std::min(content.size(), static_cast<size_t>(max_seq_len) - 2);
    std::vector<uint32_t> out;
    out.reserve(keep + 2);
    out.push_back(TokenizerModel::kBos);
    out.insert(out.end(), content.begin(), content.begin() + keep);
    out.push_back(TokenizerModel::kEos);
    return out;
}

std::vector<bool> key_mask_for(const std::vector<uint32_t>& ids) {
    std::vector<bool> mask(ids.size());
    for (size_t t = 0; t < ids.size(); ++t) mask[t] = ids[t] != TokenizerModel::kPad;
    return mask;
}

std::vector<size_t> content_positions(const std::vector<uint32_t>& ids) {
    std::vector<size_t> out;
    for (size_t t = 0; t < ids.size(); ++t) {
        uint32_t id = ids[t];
        if (id == TokenizerModel::kPad || id == TokenizerModel::kBos ||
            id == TokenizerModel::kEos) {
            continue;
        }
        out.push_back(t);
    }
    return out;
}

Embedding embed_log(const EncoderModel& model, const std::vector<uint32_t>& content_ids,
                    const std::string& source_id) {
    if (content_ids.empty()) throw Error("EmptyContent", "cannot embed an empty log");
    std::vector<uint32_t> ids = wrap_sequence(content_ids, model.config.max_seq_len);
    ForwardCache<float> cache;
    encoder_forward(model.params, model.config, ids, key_mask_for(ids), cache);
    ColVec<float> mean = mean_rows(cache.states, content_positions(ids));
    Embedding emb;
    emb.source_id = source_id;
    emb.vector.assign(mean.data(), mean.data() + mean.size());
    return emb;
}

namespace {

void write_tensor(const std::string& path, const MatF& m) {
    static_assert(sizeof(float) == 4);
    std::string bytes(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(float));
    write_file_atomic(path, bytes);
}

MatF read_tensor(const std::string& path, Eigen::Index rows, Eigen::Index cols) {
    std::string bytes = read_file(path);
    if (bytes.size() != static_cast<size_t>(rows * cols) * sizeof(float)) {
        throw Error("CheckpointCorrupt", path + ": size does not match manifest shape");
    }
    MatF m(rows, cols);
    std::memcpy(m.data(), bytes.data(), bytes.size());
    return m;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json tensors = json::array();
    auto add = [&](const std::string& name, const MatF& m) {
        tensors.push_back({{"name", name},
                           {"shape", {m.rows(), m.cols()}},
                           {"dtype", "f32"},
                           {"file", name + ".bin"}});
        write_tensor(dir + "/" + name + ".bin", m);
    };
    ckpt.params.for_each(add);
    for (const auto& [name, m] : ckpt.extra) add(name, m);
    json manifest;
    manifest["version"] = 1;
    manifest["config"] = ckpt.config;
    manifest["step"] = ckpt.step;
    manifest["tensors"] = std::move(tensors);
    write_file_atomic(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
    json manifest;
    try {
        manifest = json::parse(read_file(dir + "/manifest.json"));
    } catch (const json::parse_error& e) {
        throw Error("CheckpointCorrupt", dir + "/manifest.json: " + e.what());
    }
    if (manifest.value("version", 0) != 1) {
        throw Error("CheckpointCorrupt", dir + ": unsupported checkpoint version");
    }
    Checkpoint ckpt;
    ckpt.config = manifest.at("config").get<EncoderConfig>();
    ckpt.config.validate();
    ckpt.step = manifest.at("step").get<uint64_t>();
    ckpt.params = allocate_params<float>(ckpt.config);

    std::map<std::string, json> table;
    for (const auto& t : manifest.at("tensors")) table[t.at("name")] = t;
    auto load = [&](const std::string& name, MatF& m) {
        auto it = table.find(name);
        if (it == table.end()) {
            throw Error("CheckpointCorrupt", dir + ": missing tensor " + name);
        }
        const json& t = it->second;
        if (t.at("dtype") != "f32") throw Error("CheckpointCorrupt", "unsupported dtype");
        Eigen::Index rows = t.at("shape")[0].get<Eigen::Index>();
        Eigen::Index cols = t.at("shape")[1].get<Eigen::Index>();
        if (rows != m.rows() || cols != m.cols()) {
            throw Error("CheckpointCorrupt", dir + ": shape mismatch for " + name);
        }
        m = read_tensor(dir + "/" + t.at("file").get<std::string>(), rows, cols);
        table.erase(it);
    };
    ckpt.params.for_each(load);
    for (const auto& [name, t] : table) {
        Eigen::Index rows = t.at("shape")[0].get<Eigen::Index>();
        Eigen::Index cols = t.at("shape")[1].get<Eigen::Index>();
        ckpt.extra[name] =
            read_tensor(dir + "/" + t.at("file").get<std::string>(), rows, cols);
    }
    return ckpt;
}

}  // namespace logenc
