#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "logenc/encoder.hpp"
#include "logenc/rng.hpp"

using namespace logenc;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.vocab_size = 64;
    c.hidden_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.ffn_dim = 16;
    c.max_seq_len = 16;
    return c;
}

MaskingRules rules_for(uint32_t vocab_size, std::set<uint32_t> delims = {}) {
    return make_masking_rules(delims, vocab_size);
}

}  // namespace

TEST_CASE("parameter count matches a hand computation") {
    EncoderConfig c = tiny_config();
    auto p = init_params<float>(c, 1);

    // tok 64*8 + pos 16*8 = 640; each layer: 2 norms (4*8) + 4 attn weights
    // (4*64) + 4 attn biases (32) + ffn (8*16 + 16 + 16*8 + 8) = 600;
    // final norm 16; head 8*64 + 64 = 576.
    uint64_t expected = 64 * 8 + 16 * 8 + 2 * (32 + 256 + 32 + 128 + 16 + 128 + 8) +
                        16 + 8 * 64 + 64;
    CHECK(expected == 2432);
    CHECK(param_count(p) == 2432);
}

TEST_CASE("config validation rejects inconsistent settings") {
    EncoderConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());

    EncoderConfig bad = c;
    bad.num_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("BadConfig"), Error);
    bad = c;
    bad.mask_token_fraction = 0.5;  // fractions sum to 0.7
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.mask_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.dropout_rate = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("init is deterministic with unit gains and zero biases") {
    EncoderConfig c = tiny_config();
    auto a = init_params<float>(c, 7);
    auto b = init_params<float>(c, 7);
    bool identical = true;
    a.for_each([&](const std::string& name, const MatF& m) {
        b.for_each([&](const std::string& name2, const MatF& m2) {
            if (name == name2 && (m.array() != m2.array()).any()) identical = false;
        });
    });
    CHECK(identical);

    CHECK((a.layers[0].ln1_gamma.array() == 1.0f).all());
    CHECK((a.final_ln_beta.array() == 0.0f).all());
    CHECK((a.layers[1].attn.bq.array() == 0.0f).all());
    CHECK((a.mlm_b.array() == 0.0f).all());
    CHECK((a.tok_emb.array() != 0.0f).any());

    auto other = init_params<float>(c, 8);
    CHECK((a.tok_emb.array() != other.tok_emb.array()).any());

    // Truncated normal stays within 2 standard deviations.
    CHECK(a.tok_emb.array().abs().maxCoeff() <= 2.0f * 0.02f + 1e-6f);
}

TEST_CASE("uniform logits give loss ln(V)") {
    MatF logits = MatF::Zero(3, 64);
    std::vector<uint32_t> originals = {5, 17, 63};
    double expected = std::log(64.0);
    CHECK(masked_nll(logits, originals) == doctest::Approx(expected).epsilon(1e-6));
    CHECK(std::abs(masked_nll(logits, originals) - 4.1589) < 1e-3);

    std::vector<float> lps;
    masked_nll(logits, originals, &lps);
    REQUIRE(lps.size() == 3);
    for (float lp : lps) CHECK(lp == doctest::Approx(-expected));
}

TEST_CASE("mask plans avoid delimiters and specials at the configured rate") {
    EncoderConfig c = tiny_config();
    c.vocab_size = 64;
    std::set<uint32_t> delims = {10, 11, 12};
    MaskingRules rules = rules_for(64, delims);

    // Pool excludes specials and delimiters.
    for (uint32_t id : rules.random_pool) {
        CHECK(id >= TokenizerModel::kNumSpecials);
        CHECK(delims.count(id) == 0);
    }
    CHECK(rules.random_pool.size() == 64 - 5 - 3);

    // Sequence alternates content and delimiter tokens around specials.
    std::vector<uint32_t> ids = {TokenizerModel::kBos, 20, 10, 21, 11, 22,
                                 12, 23, 24, 25, TokenizerModel::kEos};
    std::vector<size_t> content = {1, 3, 5, 7, 8, 9};

    size_t selected_total = 0;
    size_t eligible_total = 0;
    size_t n_mask = 0, n_random = 0, n_keep = 0;
    for (int i = 0; i < 10000; ++i) {
        MaskPlan plan = plan_masks(ids, rules, c, derive_seed(3, "mask", i));
        CHECK(plan.eligible_count == content.size());
        eligible_total += plan.eligible_count;
        selected_total += plan.positions.size();
        CHECK(std::is_sorted(plan.positions.begin(), plan.positions.end()));
        for (size_t j = 0; j < plan.positions.size(); ++j) {
            size_t pos = plan.positions[j];
            CHECK(std::find(content.begin(), content.end(), pos) != content.end());
            CHECK(plan.originals[j] == ids[pos]);
            switch (plan.kinds[j]) {
                case MaskPlan::Kind::kMask:
                    ++n_mask;
                    CHECK(plan.replacements[j] == TokenizerModel::kMask);
                    break;
                case MaskPlan::Kind::kRandom:
                    ++n_random;
                    CHECK(plan.replacements[j] >= TokenizerModel::kNumSpecials);
                    CHECK(delims.count(plan.replacements[j]) == 0);
                    break;
                case MaskPlan::Kind::kKeep:
                    ++n_keep;
                    CHECK(plan.replacements[j] == ids[pos]);
                    break;
            }
        }
    }
    double rate = double(selected_total) / double(eligible_total);
    CHECK(rate == doctest::Approx(0.15).epsilon(0.15));  // wide; acceptance pins 0.01
    double total = double(n_mask + n_random + n_keep);
    CHECK(n_mask / total == doctest::Approx(0.8).epsilon(0.05));
    CHECK(n_random / total == doctest::Approx(0.1).epsilon(0.25));
    CHECK(n_keep / total == doctest::Approx(0.1).epsilon(0.25));

    // Same seed, same plan.
    MaskPlan p1 = plan_masks(ids, rules, c, 99);
    MaskPlan p2 = plan_masks(ids, rules, c, 99);
    CHECK(p1.positions == p2.positions);
    CHECK(p1.replacements == p2.replacements);
}

TEST_CASE("empty draws fall back to the first eligible position") {
    EncoderConfig c = tiny_config();
    c.mask_rate = 1e-12;  // two selection passes will come up empty
    MaskingRules rules = rules_for(64, {10});
    std::vector<uint32_t> ids = {TokenizerModel::kBos, 10, 30, 31, TokenizerModel::kEos};
    for (uint64_t seed = 0; seed < 50; ++seed) {
        MaskPlan plan = plan_masks(ids, rules, c, seed);
        REQUIRE(plan.positions.size() == 1);
        CHECK(plan.positions[0] == 2);  // first non-delimiter content position
    }

    std::vector<uint32_t> hopeless = {TokenizerModel::kBos, 10, TokenizerModel::kEos};
    CHECK_THROWS_WITH_AS(plan_masks(hopeless, rules, c, 1),
                         doctest::Contains("NoEligibleTokens"), Error);
}

TEST_CASE("apply_mask_plan only rewrites planned positions") {
    EncoderConfig c = tiny_config();
    MaskingRules rules = rules_for(64);
    std::vector<uint32_t> ids = {TokenizerModel::kBos, 20, 21, 22, 23, TokenizerModel::kEos};
    MaskPlan plan = plan_masks(ids, rules, c, 4);
    std::vector<uint32_t> corrupted = apply_mask_plan(ids, plan);
    REQUIRE(corrupted.size() == ids.size());
    for (size_t t = 0; t < ids.size(); ++t) {
        bool planned =
            std::find(plan.positions.begin(), plan.positions.end(), t) != plan.positions.end();
        if (!planned) CHECK(corrupted[t] == ids[t]);
    }
    for (size_t j = 0; j < plan.positions.size(); ++j)
        CHECK(corrupted[plan.positions[j]] == plan.replacements[j]);
}

TEST_CASE("wrap_sequence adds sentinels and truncates") {
    std::vector<uint32_t> content = {20, 21, 22};
    auto wrapped = wrap_sequence(content, 16);
    CHECK(wrapped ==
          std::vector<uint32_t>{TokenizerModel::kBos, 20, 21, 22, TokenizerModel::kEos});

    std::vector<uint32_t> longer(30, 20);
    auto truncated = wrap_sequence(longer, 16);
    CHECK(truncated.size() == 16);
    CHECK(truncated.front() == TokenizerModel::kBos);
    CHECK(truncated.back() == TokenizerModel::kEos);

    CHECK(content_positions(wrapped) == std::vector<size_t>{1, 2, 3});
    auto km = key_mask_for({TokenizerModel::kBos, 20, TokenizerModel::kEos,
                            TokenizerModel::kPad});
    CHECK(km == std::vector<bool>{true, true, true, false});
}

TEST_CASE("attention rows are probability distributions with no PAD mass") {
    EncoderConfig c = tiny_config();
    auto p = init_params<float>(c, 5);
    std::vector<uint32_t> ids = {TokenizerModel::kBos, 20, 21, TokenizerModel::kEos,
                                 TokenizerModel::kPad, TokenizerModel::kPad};
    auto key_mask = key_mask_for(ids);
    ForwardCache<float> cache;
    encoder_forward(p, c, ids, key_mask, cache);

    for (const auto& layer : cache.layers) {
        for (const auto& probs : layer.probs) {
            for (Eigen::Index t = 0; t < probs.rows(); ++t) {
                CHECK(probs.row(t).sum() == doctest::Approx(1.0f).epsilon(1e-6));
                CHECK(probs(t, 4) == 0.0f);
                CHECK(probs(t, 5) == 0.0f);
                CHECK(probs.row(t).minCoeff() >= 0.0f);
            }
        }
    }
}

TEST_CASE("appending PAD never changes the other positions") {
    EncoderConfig c = tiny_config();
    auto p = init_params<float>(c, 11);
    std::vector<uint32_t> ids = {TokenizerModel::kBos, 30, 31, 32, TokenizerModel::kEos};
    ForwardCache<float> base;
    encoder_forward(p, c, ids, key_mask_for(ids), base);

    std::vector<uint32_t> padded = ids;
    for (int extra = 1; extra <= 4; ++extra) {
        padded.push_back(TokenizerModel::kPad);
        ForwardCache<float> cache;
        encoder_forward(p, c, padded, key_mask_for(padded), cache);
        for (Eigen::Index t = 0; t < base.states.rows(); ++t) {
            for (Eigen::Index d = 0; d < base.states.cols(); ++d) {
                CHECK(cache.states(t, d) == base.states(t, d));  // bit-exact
            }
        }
    }
}

TEST_CASE("length-one sequences run end to end") {
    EncoderConfig c = tiny_config();
    auto p = init_params<float>(c, 2);
    std::vector<uint32_t> ids = {42};
    ForwardCache<float> cache;
    encoder_forward(p, c, ids, {true}, cache);
    CHECK(cache.states.rows() == 1);
    for (const auto& layer : cache.layers) {
        CHECK(layer.probs[0](0, 0) == doctest::Approx(1.0f));
    }

    std::vector<uint32_t> too_long(c.max_seq_len + 1, 20);
    CHECK_THROWS_WITH_AS(
        encoder_forward(p, c, too_long, std::vector<bool>(too_long.size(), true), cache),
        doctest::Contains("SequenceTooLong"), Error);
    CHECK_THROWS_WITH_AS(encoder_forward(p, c, {70}, {true}, cache),
                         doctest::Contains("UnknownTokenId"), Error);
}

TEST_CASE("finite differences agree with the analytic gradient") {
    EncoderConfig c;
    c.vocab_size = 32;
    c.hidden_dim = 8;
    c.num_layers = 2;
    c.num_heads = 2;
    c.ffn_dim = 12;
    c.max_seq_len = 8;
    auto p = init_params<double>(c, 3);
    // Larger weights than the real init so the loss surface is not flat.
    p.for_each([&](const std::string& name, Mat<double>& m) {
        if (!is_gain_tensor(name)) m *= 12.0;
    });

    std::vector<uint32_t> ids = {TokenizerModel::kBos, 7, TokenizerModel::kMask, 9, 21,
                                 TokenizerModel::kEos};
    std::vector<bool> key_mask(ids.size(), true);
    std::vector<size_t> positions = {2, 4};
    std::vector<uint32_t> originals = {8, 21};

    auto grads = allocate_params<double>(c);
    mlm_loss_grad<double>(p, c, ids, key_mask, positions, originals, 1.0, &grads);

    const double eps = 1e-5;
    double max_rel = 0.0;
    Rng pick(17);
    p.for_each([&](const std::string& name, Mat<double>& m) {
        Mat<double>* g = nullptr;
        grads.for_each([&](const std::string& gname, Mat<double>& gm) {
            if (gname == name) g = &gm;
        });
        REQUIRE(g != nullptr);
        size_t samples = std::min<size_t>(4, static_cast<size_t>(m.size()));
        for (size_t s = 0; s < samples; ++s) {
            Eigen::Index r = static_cast<Eigen::Index>(pick.below(m.rows()));
            Eigen::Index cc = static_cast<Eigen::Index>(pick.below(m.cols()));
            double saved = m(r, cc);
            m(r, cc) = saved + eps;
            double up = mlm_loss_grad<double>(p, c, ids, key_mask, positions, originals);
            m(r, cc) = saved - eps;
            double dn = mlm_loss_grad<double>(p, c, ids, key_mask, positions, originals);
            m(r, cc) = saved;
            double fd = (up - dn) / (2 * eps);
            double an = (*g)(r, cc);
            // The floor absorbs central-difference cancellation noise on
            // near-zero gradients without masking genuine errors.
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            max_rel = std::max(max_rel, rel);
        }
    });
    CHECK(max_rel < 1e-4);
}

TEST_CASE("embeddings pool content states only") {
    EncoderConfig c = tiny_config();
    EncoderModel model{c, init_params<float>(c, 9)};
    std::vector<uint32_t> content = {20, 21, 22};
    Embedding e = embed_log(model, content, "rec-1");
    CHECK(e.source_id == "rec-1");
    CHECK(e.vector.size() == static_cast<size_t>(c.hidden_dim));
    CHECK(std::string(Embedding::kPooling) == "mean-of-content-tokens");

    // Oracle: run the forward pass manually and average content rows.
    auto wrapped = wrap_sequence(content, c.max_seq_len);
    ForwardCache<float> cache;
    encoder_forward(model.params, c, wrapped, key_mask_for(wrapped), cache);
    auto pos = content_positions(wrapped);
    for (int d = 0; d < c.hidden_dim; ++d) {
        float mean = 0.0f;
        for (size_t t : pos) mean += cache.states(static_cast<Eigen::Index>(t), d);
        mean /= static_cast<float>(pos.size());
        CHECK(e.vector[d] == doctest::Approx(mean).epsilon(1e-6));
    }

    CHECK_THROWS_WITH_AS(embed_log(model, {}, "rec-2"), doctest::Contains("EmptyContent"),
                         Error);
}

TEST_CASE("checkpoints reload bit-exactly") {
    namespace fs = std::filesystem;
    EncoderConfig c = tiny_config();
    Checkpoint ckpt;
    ckpt.config = c;
    ckpt.params = init_params<float>(c, 13);
    ckpt.step = 777;
    ckpt.extra["adam.m.tok_emb"] = MatF::Random(4, 4);
    ckpt.extra["adam.v.tok_emb"] = MatF::Random(4, 4);

    fs::path dir = fs::temp_directory_path() / "logenc_test_ckpt";
    fs::remove_all(dir);
    save_checkpoint(dir.string(), ckpt);
    Checkpoint back = load_checkpoint(dir.string());

    CHECK(back.step == 777);
    CHECK(back.config.hidden_dim == c.hidden_dim);
    CHECK(back.config.vocab_size == c.vocab_size);

    std::vector<std::pair<std::string, const MatF*>> orig, reload;
    ckpt.params.for_each(
        [&](const std::string& n, const MatF& m) { orig.emplace_back(n, &m); });
    back.params.for_each(
        [&](const std::string& n, const MatF& m) { reload.emplace_back(n, &m); });
    REQUIRE(orig.size() == reload.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].first == reload[i].first);
        CHECK((orig[i].second->array() == reload[i].second->array()).all());
    }
    REQUIRE(back.extra.size() == 2);
    CHECK((back.extra.at("adam.m.tok_emb").array() ==
           ckpt.extra.at("adam.m.tok_emb").array())
              .all());
    fs::remove_all(dir);
}

TEST_CASE("dropout masks are deterministic per seed and disabled at rate zero") {
    EncoderConfig c = tiny_config();
    c.dropout_rate = 0.5;
    auto p = init_params<float>(c, 21);
    std::vector<uint32_t> ids = {TokenizerModel::kBos, 20, 21, TokenizerModel::kEos};
    auto km = key_mask_for(ids);

    DropoutPlan d1{0.5, 1234};
    ForwardCache<float> a, b;
    encoder_forward(p, c, ids, km, a, &d1);
    encoder_forward(p, c, ids, km, b, &d1);
    CHECK((a.states.array() == b.states.array()).all());

    DropoutPlan d2{0.5, 1235};
    ForwardCache<float> other;
    encoder_forward(p, c, ids, km, other, &d2);
    CHECK((a.states.array() != other.states.array()).any());

    ForwardCache<float> off1, off2;
    encoder_forward(p, c, ids, km, off1);
    DropoutPlan zero{0.0, 1234};
    encoder_forward(p, c, ids, km, off2, &zero);
    CHECK((off1.states.array() == off2.states.array()).all());
}

TEST_CASE("encoder config round-trips through json") {
    EncoderConfig c = tiny_config();
    c.dropout_rate = 0.1;
    nlohmann::json j = c;
    EncoderConfig back = j.get<EncoderConfig>();
    CHECK(back.vocab_size == c.vocab_size);
    CHECK(back.hidden_dim == c.hidden_dim);
    CHECK(back.num_layers == c.num_layers);
    CHECK(back.num_heads == c.num_heads);
    CHECK(back.ffn_dim == c.ffn_dim);
    CHECK(back.max_seq_len == c.max_seq_len);
    CHECK(back.dropout_rate == c.dropout_rate);
    CHECK(back.mask_rate == c.mask_rate);
}
