#include "logenc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "logenc/io.hpp"
#include "logenc/metrics.hpp"

namespace logenc {

void TrainConfig::validate() const {
    auto fail = [](const std::string& why) { throw Error("BadConfig", why); };
    if (batch_size < 1) fail("batch_size must be positive");
    if (warmup_steps > max_steps) fail("warmup_steps must not exceed max_steps");
    if (learning_rate < 0.0) fail("learning_rate must be non-negative");
    if (weight_decay < 0.0) fail("weight_decay must be non-negative");
}

double lr_at(uint64_t step, const TrainConfig& cfg) {
    if (step < cfg.warmup_steps) {
        return cfg.learning_rate * static_cast<double>(step + 1) /
               static_cast<double>(cfg.warmup_steps);
    }
    if (cfg.max_steps == cfg.warmup_steps) return cfg.learning_rate;
    return cfg.learning_rate * static_cast<double>(cfg.max_steps - step) /
           static_cast<double>(cfg.max_steps - cfg.warmup_steps);
}

AdamState make_adam_state(const EncoderConfig& cfg) {
    AdamState s;
    s.m = allocate_params<float>(cfg);
    s.v = allocate_params<float>(cfg);
    return s;
}

namespace {

std::vector<MatF*> tensor_ptrs(EncoderParams<float>& p, std::vector<std::string>* names) {
    std::vector<MatF*> out;
    p.for_each([&](const std::string& name, MatF& m) {
        out.push_back(&m);
        if (names) names->push_back(name);
    });
    return out;
}

double global_norm(const std::vector<MatF*>& tensors) {
    double sq = 0.0;
    for (const MatF* t : tensors) sq += t->cast<double>().squaredNorm();
    return std::sqrt(sq);
}

void scale_all(const std::vector<MatF*>& tensors, float s) {
    for (MatF* t : tensors) *t *= s;
}

void adam_update_tensor(MatF& p, const MatF& g, MatF& m, MatF& v, uint64_t t, double lr,
                        double decay) {
    const float b1 = static_cast<float>(kAdamBeta1);
    const float b2 = static_cast<float>(kAdamBeta2);
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v.array().matrix() + (1.0f - b2) * g.array().square().matrix();
    const float c1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float c2 = 1.0f - std::pow(b2, static_cast<float>(t));
    const float flr = static_cast<float>(lr);
    p.array() -= flr * ((m.array() / c1) /
                        ((v.array() / c2).sqrt() + static_cast<float>(kAdamEps)));
    if (decay > 0.0) p.array() -= static_cast<float>(lr * decay) * p.array();
}

std::string step_dir_name(uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06llu", static_cast<unsigned long long>(step));
    return buf;
}

}  // namespace

double clip_global_norm(EncoderParams<float>& grads, double max_norm) {
    auto tensors = tensor_ptrs(grads, nullptr);
    double norm = global_norm(tensors);
    if (max_norm > 0.0 && norm > max_norm) {
        scale_all(tensors, static_cast<float>(max_norm / norm));
    }
    return norm;
}

void adamw_step(EncoderParams<float>& params, const EncoderParams<float>& grads,
                AdamState& state, double lr, double weight_decay) {
    ++state.t;
    std::vector<std::string> names;
    auto ps = tensor_ptrs(params, &names);
    auto gs = tensor_ptrs(const_cast<EncoderParams<float>&>(grads), nullptr);
    auto ms = tensor_ptrs(state.m, nullptr);
    auto vs = tensor_ptrs(state.v, nullptr);
    for (size_t i = 0; i < ps.size(); ++i) {
        bool decays = !is_gain_tensor(names[i]) && !is_zero_init_tensor(names[i]);
        adam_update_tensor(*ps[i], *gs[i], *ms[i], *vs[i], state.t, lr,
                           decays ? weight_decay : 0.0);
    }
}

Checkpoint make_train_checkpoint(const EncoderModel& model, const AdamState& opt,
                                 uint64_t step) {
    Checkpoint ckpt;
    ckpt.config = model.config;
    ckpt.params = model.params;
    ckpt.step = step;
    opt.m.for_each([&](const std::string& n, const MatF& m) { ckpt.extra["adam.m." + n] = m; });
    opt.v.for_each([&](const std::string& n, const MatF& m) { ckpt.extra["adam.v." + n] = m; });
    return ckpt;
}

AdamState adam_from_checkpoint(const Checkpoint& ckpt) {
    AdamState opt = make_adam_state(ckpt.config);
    if (ckpt.extra.empty()) return opt;
    auto fill = [&](EncoderParams<float>& dst, const std::string& prefix) {
        dst.for_each([&](const std::string& n, MatF& m) {
            auto it = ckpt.extra.find(prefix + n);
            if (it == ckpt.extra.end()) {
                throw Error("CheckpointCorrupt", "missing optimizer tensor " + prefix + n);
            }
            m = it->second;
        });
    };
    fill(opt.m, "adam.m.");
    fill(opt.v, "adam.v.");
    opt.t = ckpt.step;
    return opt;
}

PretrainResult pretrain(EncoderModel& model, AdamState& opt,
                        const std::vector<LogRecord>& corpus, const TokenizerModel& tokenizer,
                        const TrainConfig& cfg, const std::string& checkpoint_dir,
                        uint64_t start_step) {
    cfg.validate();
    model.config.validate();

    std::vector<const LogRecord*> train;
    std::vector<LogRecord> id_test;
    for (const auto& rec : corpus) {
        if (rec.split == Split::train) train.push_back(&rec);
        if (rec.split == Split::id_test) id_test.push_back(rec);
    }
    if (train.empty()) throw Error("EmptyCorpus", "no records carry the train split label");

    MaskingRules rules = make_masking_rules(tokenizer);
    std::vector<std::vector<uint32_t>> seqs(train.size());
    for (size_t i = 0; i < train.size(); ++i) {
        seqs[i] = wrap_sequence(encode(tokenizer, train[i]->raw).ids, model.config.max_seq_len);
    }

    const uint64_t N = seqs.size();
    uint64_t cached_epoch = std::numeric_limits<uint64_t>::max();
    std::vector<uint32_t> order(N);
    auto seq_index = [&](uint64_t j) {
        uint64_t epoch = j / N;
        if (epoch != cached_epoch) {
            std::iota(order.begin(), order.end(), 0u);
            Rng rng(derive_seed(cfg.seed, "shuffle", epoch));
            for (uint64_t i = N; i > 1; --i) {
                std::swap(order[i - 1], order[rng.below(i)]);
            }
            cached_epoch = epoch;
        }
        return order[j % N];
    };

    EncoderParams<float> grads = allocate_params<float>(model.config);
    auto grad_tensors = tensor_ptrs(grads, nullptr);
    PretrainResult result;

    for (uint64_t step = start_step; step < cfg.max_steps; ++step) {
        struct Item {
            const std::vector<uint32_t>* ids;
            MaskPlan plan;
        };
        std::vector<Item> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            uint64_t j = step * cfg.batch_size + b;
            const auto& ids = seqs[seq_index(j)];
            try {
                batch.push_back(
                    {&ids, plan_masks(ids, rules, model.config, derive_seed(cfg.seed, "mask", j))});
            } catch (const Error& e) {
                if (e.code() != "NoEligibleTokens") throw;
                ++result.skipped_sequences;
            }
        }

        double lr = lr_at(step, cfg);
        double loss = 0.0;
        if (!batch.empty()) {
            for (MatF* g : grad_tensors) g->setZero();
            float scale = 1.0f / static_cast<float>(batch.size());
            DropoutPlan drop{model.config.dropout_rate, derive_seed(cfg.seed, "dropout", step)};
            const DropoutPlan* dp = model.config.dropout_rate > 0.0 ? &drop : nullptr;
            for (const auto& item : batch) {
                std::vector<uint32_t> corrupted = apply_mask_plan(*item.ids, item.plan);
                loss += mlm_loss_grad<float>(model.params, model.config, corrupted,
                                             key_mask_for(corrupted), item.plan.positions,
                                             item.plan.originals, scale, &grads, dp);
            }
            loss /= static_cast<double>(batch.size());
            if (!std::isfinite(loss)) {
                throw Error("NonFiniteLoss",
                            "non-finite loss at step " + std::to_string(step));
            }
            clip_global_norm(grads, cfg.grad_clip_norm);
            adamw_step(model.params, grads, opt, lr, cfg.weight_decay);
        }
        result.curve.push_back({step, loss, lr});

        uint64_t done = step + 1;
        if (cfg.checkpoint_every > 0 && !checkpoint_dir.empty() &&
            done % cfg.checkpoint_every == 0 && done < cfg.max_steps) {
            save_checkpoint(checkpoint_dir + "/" + step_dir_name(done),
                            make_train_checkpoint(model, opt, done));
        }
        if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && !id_test.empty()) {
            IntrinsicReport rep = intrinsic_eval(model, tokenizer, id_test,
                                                 derive_seed(cfg.seed, "eval"), "IDTS");
            result.evals.push_back({done, rep.perplexity, rep.accuracy});
        }
    }
    return result;
}

void write_loss_curve(const std::string& path, const std::vector<StepStat>& curve) {
    std::ostringstream out;
    out << "step,loss,lr\n";
    char buf[64];
    for (const auto& s : curve) {
        std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g\n",
                      static_cast<unsigned long long>(s.step), s.loss, s.lr);
        out << buf;
    }
    write_file_atomic(path, out.str());
}

namespace {

std::vector<std::string> distinct_sorted_labels(const std::vector<std::string>& labels) {
    std::vector<std::string> classes(labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) {
        throw Error("LabelCardinality", "need at least two distinct labels");
    }
    return classes;
}

void fill_truncated_normal(MatF& m, uint64_t seed) {
    Rng rng(seed);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = static_cast<float>(rng.truncated_normal(kInitStd));
        }
    }
}

// Adam over an ad-hoc tensor list (probe training).
struct FlatAdam {
    std::vector<MatF> m, v;
    uint64_t t = 0;
    explicit FlatAdam(const std::vector<MatF*>& params) {
        for (const MatF* p : params) {
            m.push_back(MatF::Zero(p->rows(), p->cols()));
            v.push_back(MatF::Zero(p->rows(), p->cols()));
        }
    }
    void update(const std::vector<MatF*>& params, const std::vector<MatF*>& grads, double lr,
                double max_norm) {
        ++t;
        double norm = global_norm(grads);
        if (max_norm > 0.0 && norm > max_norm) {
            scale_all(grads, static_cast<float>(max_norm / norm));
        }
        for (size_t i = 0; i < params.size(); ++i) {
            adam_update_tensor(*params[i], *grads[i], m[i], v[i], t, lr, 0.0);
        }
    }
};

size_t class_index(const std::vector<std::string>& classes, const std::string& label) {
    auto it = std::lower_bound(classes.begin(), classes.end(), label);
    return static_cast<size_t>(it - classes.begin());
}

}  // namespace

ProbeHead train_probe_head(const MatF& features, const std::vector<std::string>& labels,
                           const TrainConfig& cfg) {
    cfg.validate();
    if (features.rows() == 0 || features.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw Error("BadConfig", "features/labels size mismatch");
    }
    ProbeHead head;
    head.classes = distinct_sorted_labels(labels);
    const Eigen::Index K = static_cast<Eigen::Index>(head.classes.size());
    const Eigen::Index F = features.cols();
    head.weights.resize(K, F);
    fill_truncated_normal(head.weights, derive_seed(cfg.seed, "probe.head"));
    head.bias = MatF::Zero(1, K);
    head.set_size = 0;

    const uint64_t N = labels.size();
    std::vector<uint32_t> order(N);
    uint64_t cached_epoch = std::numeric_limits<uint64_t>::max();
    auto row_index = [&](uint64_t j) {
        uint64_t epoch = j / N;
        if (epoch != cached_epoch) {
            std::iota(order.begin(), order.end(), 0u);
            Rng rng(derive_seed(cfg.seed, "probe.shuffle", epoch));
            for (uint64_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
            cached_epoch = epoch;
        }
        return order[j % N];
    };

    MatF gw(K, F), gb(1, K);
    std::vector<MatF*> params{&head.weights, &head.bias};
    std::vector<MatF*> grads{&gw, &gb};
    FlatAdam adam(params);

    for (uint64_t step = 0; step < cfg.max_steps; ++step) {
        gw.setZero();
        gb.setZero();
        int used = std::min<uint64_t>(cfg.batch_size, N);
        for (int b = 0; b < used; ++b) {
            uint64_t j = step * used + b;
            Eigen::Index row = row_index(j);
            Eigen::RowVectorXf logits =
                features.row(row) * head.weights.transpose() + head.bias.row(0);
            float mx = logits.maxCoeff();
            Eigen::Array<float, 1, Eigen::Dynamic> p = (logits.array() - mx).exp();
            p /= p.sum();
            p(class_index(head.classes, labels[row])) -= 1.0f;
            Eigen::RowVectorXf dlog = p.matrix() / static_cast<float>(used);
            gw += dlog.transpose() * features.row(row);
            gb.row(0) += dlog;
        }
        adam.update(params, grads, lr_at(step, cfg), cfg.grad_clip_norm);
    }
    return head;
}

namespace {

// Frozen-stack context for one log in a probe set.
struct SlotInput {
    std::vector<uint32_t> ids;
    std::vector<bool> key_mask;
    std::vector<size_t> content;
    MatF x_in;  // activations entering the last block
};

SlotInput freeze_lower_stack(const EncoderModel& model, const std::vector<uint32_t>& content_ids) {
    if (content_ids.empty()) throw Error("EmptySet", "a probe set contains an empty log");
    SlotInput slot;
    slot.ids = wrap_sequence(content_ids, model.config.max_seq_len);
    slot.key_mask = key_mask_for(slot.ids);
    slot.content = content_positions(slot.ids);
    const Eigen::Index T = static_cast<Eigen::Index>(slot.ids.size());
    MatF x(T, model.config.hidden_dim);
    for (Eigen::Index t = 0; t < T; ++t) {
        x.row(t) = model.params.tok_emb.row(slot.ids[t]) + model.params.pos_emb.row(t);
    }
    LayerCache<float> scratch;
    for (int li = 0; li + 1 < model.config.num_layers; ++li) {
        x = block_forward(model.params.layers[li], model.config, x, slot.key_mask, scratch);
    }
    slot.x_in = std::move(x);
    return slot;
}

// Embedding of one precomputed slot through the trainable tail; cache kept
// for backward.
struct SlotCache {
    LayerCache<float> block;
    MatF xhat_f;
    ColVec<float> inv_std_f;
    MatF states;
};

Eigen::RowVectorXf slot_embed(const EncoderModel& model, const SlotInput& slot, SlotCache& sc) {
    MatF x = block_forward(model.params.layers[model.config.num_layers - 1], model.config,
                           slot.x_in, slot.key_mask, sc.block);
    detail::layer_norm(x, model.params.final_ln_gamma, model.params.final_ln_beta, sc.xhat_f,
                       sc.inv_std_f, sc.states);
    return mean_rows(sc.states, slot.content).transpose();
}

}  // namespace

ProbeHead finetune_probe(EncoderModel& model, const std::vector<ProbeExample>& examples,
                         const TrainConfig& cfg, int set_size) {
    cfg.validate();
    model.config.validate();
    if (set_size < 1) throw Error("BadConfig", "set_size must be positive");
    if (examples.empty()) throw Error("EmptySet", "no probe examples");

    std::vector<std::string> labels;
    labels.reserve(examples.size());
    for (const auto& ex : examples) {
        if (ex.logs.empty()) throw Error("EmptySet", "a probe example has no logs");
        labels.push_back(ex.label);
    }
    const int D = model.config.hidden_dim;
    const int S = set_size;

    ProbeHead head;
    head.classes = distinct_sorted_labels(labels);
    head.set_size = S;
    const Eigen::Index K = static_cast<Eigen::Index>(head.classes.size());
    head.weights.resize(K, static_cast<Eigen::Index>(S) * D);
    fill_truncated_normal(head.weights, derive_seed(cfg.seed, "probe.head"));
    head.bias = MatF::Zero(1, K);
    head.null_embed.resize(1, D);
    fill_truncated_normal(head.null_embed, derive_seed(cfg.seed, "probe.null"));

    // Frozen lower stack runs once per log; keep the most recent S logs.
    std::vector<std::vector<SlotInput>> inputs(examples.size());
    for (size_t i = 0; i < examples.size(); ++i) {
        const auto& logs = examples[i].logs;
        size_t first = logs.size() > static_cast<size_t>(S) ? logs.size() - S : 0;
        for (size_t l = first; l < logs.size(); ++l) {
            inputs[i].push_back(freeze_lower_stack(model, logs[l]));
        }
    }

    LayerParams<float>& last = model.params.layers[model.config.num_layers - 1];
    LayerParams<float> lgrad = allocate_params<float>(model.config).layers[0];
    MatF g_fln_gamma(1, D), g_fln_beta(1, D), g_null(1, D);
    MatF g_w(K, head.weights.cols()), g_b(1, K);

    std::vector<MatF*> params{&last.ln1_gamma, &last.ln1_beta,  &last.attn.wq,
                              &last.attn.bq,   &last.attn.wk,   &last.attn.bk,
                              &last.attn.wv,   &last.attn.bv,   &last.attn.wo,
                              &last.attn.bo,   &last.ln2_gamma, &last.ln2_beta,
                              &last.ffn_w1,    &last.ffn_b1,    &last.ffn_w2,
                              &last.ffn_b2,    &model.params.final_ln_gamma,
                              &model.params.final_ln_beta,      &head.weights,
                              &head.bias,      &head.null_embed};
    std::vector<MatF*> grads{&lgrad.ln1_gamma, &lgrad.ln1_beta,  &lgrad.attn.wq,
                             &lgrad.attn.bq,   &lgrad.attn.wk,   &lgrad.attn.bk,
                             &lgrad.attn.wv,   &lgrad.attn.bv,   &lgrad.attn.wo,
                             &lgrad.attn.bo,   &lgrad.ln2_gamma, &lgrad.ln2_beta,
                             &lgrad.ffn_w1,    &lgrad.ffn_b1,    &lgrad.ffn_w2,
                             &lgrad.ffn_b2,    &g_fln_gamma,     &g_fln_beta,
                             &g_w,             &g_b,             &g_null};
    FlatAdam adam(params);

    const uint64_t N = examples.size();
    std::vector<uint32_t> order(N);
    uint64_t cached_epoch = std::numeric_limits<uint64_t>::max();
    auto example_index = [&](uint64_t j) {
        uint64_t epoch = j / N;
        if (epoch != cached_epoch) {
            std::iota(order.begin(), order.end(), 0u);
            Rng rng(derive_seed(cfg.seed, "probe.shuffle", epoch));
            for (uint64_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
            cached_epoch = epoch;
        }
        return order[j % N];
    };

    for (uint64_t step = 0; step < cfg.max_steps; ++step) {
        for (MatF* g : grads) g->setZero();
        int used = static_cast<int>(std::min<uint64_t>(cfg.batch_size, N));
        for (int b = 0; b < used; ++b) {
            size_t ei = example_index(step * used + b);
            const auto& slots = inputs[ei];
            std::vector<SlotCache> caches(slots.size());
            Eigen::RowVectorXf feature(S * D);
            for (int s = 0; s < S; ++s) {
                if (s < static_cast<int>(slots.size())) {
                    feature.segment(s * D, D) = slot_embed(model, slots[s], caches[s]);
                } else {
                    feature.segment(s * D, D) = head.null_embed.row(0);
                }
            }

            Eigen::RowVectorXf logits =
                feature * head.weights.transpose() + head.bias.row(0);
            float mx = logits.maxCoeff();
            Eigen::Array<float, 1, Eigen::Dynamic> p = (logits.array() - mx).exp();
            p /= p.sum();
            p(class_index(head.classes, examples[ei].label)) -= 1.0f;
            Eigen::RowVectorXf dlog = p.matrix() / static_cast<float>(used);

            g_w += dlog.transpose() * feature;
            g_b.row(0) += dlog;
            Eigen::RowVectorXf dfeat = dlog * head.weights;
            for (int s = 0; s < S; ++s) {
                Eigen::RowVectorXf de = dfeat.segment(s * D, D);
                if (s >= static_cast<int>(slots.size())) {
                    g_null.row(0) += de;
                    continue;
                }
                const SlotInput& slot = slots[s];
                SlotCache& sc = caches[s];
                MatF dstates = MatF::Zero(slot.ids.size(), D);
                float inv = 1.0f / static_cast<float>(slot.content.size());
                for (size_t pos : slot.content) {
                    dstates.row(static_cast<Eigen::Index>(pos)) += de * inv;
                }
                MatF dx = detail::layer_norm_backward(
                    dstates, sc.xhat_f, sc.inv_std_f, model.params.final_ln_gamma,
                    g_fln_gamma, g_fln_beta);
                block_backward(last, model.config, sc.block, dx, lgrad);
            }
        }
        adam.update(params, grads, lr_at(step, cfg), cfg.grad_clip_norm);
    }
    return head;
}

std::string probe_predict(const EncoderModel& model, const ProbeHead& head,
                          const std::vector<std::vector<uint32_t>>& logs) {
    if (logs.empty()) throw Error("EmptySet", "cannot classify an empty set");
    if (head.set_size < 1) throw Error("BadConfig", "head carries no set semantics");
    const int D = model.config.hidden_dim;
    const int S = head.set_size;
    size_t first = logs.size() > static_cast<size_t>(S) ? logs.size() - S : 0;
    Eigen::RowVectorXf feature(S * D);
    int s = 0;
    for (size_t l = first; l < logs.size(); ++l, ++s) {
        SlotInput slot = freeze_lower_stack(model, logs[l]);
        SlotCache sc;
        feature.segment(s * D, D) = slot_embed(model, slot, sc);
    }
    for (; s < S; ++s) feature.segment(s * D, D) = head.null_embed.row(0);
    Eigen::RowVectorXf logits = feature * head.weights.transpose() + head.bias.row(0);
    Eigen::Index best;
    logits.maxCoeff(&best);
    return head.classes[static_cast<size_t>(best)];
}

}  // namespace logenc
