#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "logenc/analytics.hpp"
#include "logenc/common.hpp"
#include "logenc/corpus.hpp"
#include "logenc/encoder.hpp"
#include "logenc/io.hpp"
#include "logenc/metrics.hpp"
#include "logenc/rng.hpp"
#include "logenc/synth.hpp"
#include "logenc/templates.hpp"
#include "logenc/tokenizer.hpp"
#include "logenc/trainer.hpp"

namespace {

using nlohmann::json;
using namespace logenc;

struct GlobalOpts {
    uint64_t seed = 1;
    int threads = 1;
    bool verbose = false;
};

void log_verbose(const GlobalOpts& g, const std::string& msg) {
    if (g.verbose) std::cerr << "[logenc] " << msg << "\n";
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string iso_now() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Every file-writing run leaves <primary>.manifest.json beside its primary
/// output: the resolved arguments, their hash, the seed, and a content hash
/// per written artifact.  Only the timestamp varies between identical runs.
void write_manifest(const std::string& command, const json& config, uint64_t seed,
                    const std::vector<std::string>& artifacts, const std::string& primary) {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = hex64(fnv1a64(config.dump()));
    j["seed"] = seed;
    json arts = json::object();
    for (const auto& path : artifacts) arts[path] = hex64(fnv1a64(read_file(path)));
    j["artifacts"] = arts;
    j["timestamp"] = iso_now();
    write_file_atomic(primary + ".manifest.json", j.dump(2) + "\n");
}

void write_report(const std::string& path, const json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    if (!j.is_object()) throw Error("ConfigInvalid", where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw Error("ConfigInvalid", "unknown key in " + where + ": " + key);
}

/// Pipeline config file: {"version":1, "seed":..., "paths":{...},
/// "encoder":{...}, "trainer":{...}}; unknown keys anywhere are rejected.
struct PipelineConfig {
    std::optional<uint64_t> seed;
    std::map<std::string, std::string> paths;
    EncoderConfig encoder;
    TrainConfig trainer;
};

PipelineConfig load_pipeline_config(const std::string& path) {
    PipelineConfig cfg;
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error("ConfigInvalid", "config is not valid JSON: " + path);
    require_keys(j, {"version", "seed", "paths", "encoder", "trainer"}, "config");
    if (j.value("version", 1) != 1)
        throw Error("ConfigInvalid", "unrecognized config version");
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("paths")) {
        require_keys(j.at("paths"), {"corpus", "tokenizer", "checkpoint", "reports"},
                     "config.paths");
        for (const auto& [key, value] : j.at("paths").items())
            cfg.paths[key] = value.get<std::string>();
    }
    if (j.contains("encoder")) {
        require_keys(j.at("encoder"),
                     {"vocab_size", "hidden_dim", "num_layers", "num_heads", "ffn_dim",
                      "max_seq_len", "dropout_rate", "mask_rate", "mask_token_fraction",
                      "random_fraction", "keep_fraction"},
                     "config.encoder");
        json merged;
        to_json(merged, cfg.encoder);
        merged.update(j.at("encoder"));
        from_json(merged, cfg.encoder);
    }
    if (j.contains("trainer")) {
        const auto& t = j.at("trainer");
        require_keys(t,
                     {"batch_size", "max_steps", "learning_rate", "warmup_steps",
                      "weight_decay", "grad_clip_norm", "checkpoint_every", "eval_every"},
                     "config.trainer");
        cfg.trainer.batch_size = t.value("batch_size", cfg.trainer.batch_size);
        cfg.trainer.max_steps = t.value("max_steps", cfg.trainer.max_steps);
        cfg.trainer.learning_rate = t.value("learning_rate", cfg.trainer.learning_rate);
        cfg.trainer.warmup_steps = t.value("warmup_steps", cfg.trainer.warmup_steps);
        cfg.trainer.weight_decay = t.value("weight_decay", cfg.trainer.weight_decay);
        cfg.trainer.grad_clip_norm = t.value("grad_clip_norm", cfg.trainer.grad_clip_norm);
        cfg.trainer.checkpoint_every = t.value("checkpoint_every", cfg.trainer.checkpoint_every);
        cfg.trainer.eval_every = t.value("eval_every", cfg.trainer.eval_every);
    }
    return cfg;
}

EncoderModel load_model(const std::string& dir) {
    Checkpoint ckpt = load_checkpoint(dir);
    return EncoderModel{ckpt.config, std::move(ckpt.params)};
}

/// Mean-pooled embedding per record; records with empty raw are skipped.
EmbeddingSet embed_records(const EncoderModel& model, const TokenizerModel& tokenizer,
                           const std::vector<LogRecord>& records, int threads,
                           uint64_t* skipped = nullptr) {
    std::vector<std::vector<uint32_t>> token_ids(records.size());
    std::vector<bool> usable(records.size(), false);
    for (size_t i = 0; i < records.size(); ++i) {
        token_ids[i] = encode(tokenizer, records[i].raw).ids;
        usable[i] = !token_ids[i].empty();
    }
    std::vector<std::vector<float>> vectors(records.size());
    parallel_for(records.size(), threads, [&](size_t i) {
        if (usable[i]) vectors[i] = embed_log(model, token_ids[i], records[i].id).vector;
    });
    EmbeddingSet set;
    uint64_t skip_count = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        if (!usable[i]) {
            ++skip_count;
            continue;
        }
        set.ids.push_back(records[i].id);
        set.vectors.push_back(std::move(vectors[i]));
    }
    if (skipped) *skipped = skip_count;
    return set;
}

std::string record_annotation(const LogRecord& rec, const std::string& key) {
    if (rec.fields) {
        auto it = rec.fields->find(key);
        if (it != rec.fields->end()) return it->second;
    }
    auto it = rec.meta.find(key);
    return it == rec.meta.end() ? "" : it->second;
}

std::vector<IncidentRecord> incidents_from_records(const std::vector<LogRecord>& records) {
    std::vector<IncidentRecord> incidents;
    for (const auto& rec : records) {
        std::string label = record_annotation(rec, "label");
        if (label.empty())
            throw Error("ConfigInvalid", "incident " + rec.id + " carries no label");
        IncidentRecord inc;
        inc.id = rec.id;
        inc.text = rec.raw;
        inc.label = triage_label_from_name(label);
        std::string ts = record_annotation(rec, "timestamp");
        if (!ts.empty()) inc.timestamp = std::stoll(ts);
        incidents.push_back(std::move(inc));
    }
    return incidents;
}

// ---------------------------------------------------------------------------
// subcommand bodies

int run_synth(const GlobalOpts& g, const std::string& family, size_t n, double anomaly_rate,
              const std::string& out) {
    std::string resolved = family == "syslog" ? "syslog-a" : family;
    auto specs = synth_family(resolved);
    auto records = synth_generate(specs, n, g.seed, anomaly_rate, resolved);
    write_jsonl(out, records);
    json cfg{{"family", resolved}, {"n", n}, {"anomaly_rate", anomaly_rate}, {"out", out}};
    write_manifest("synth", cfg, g.seed, {out}, out);
    log_verbose(g, "wrote " + std::to_string(records.size()) + " records to " + out);
    return 0;
}

int run_dedup(const GlobalOpts& g, const std::string& in, const std::string& out,
              const std::string& report_path, double threshold, int perms, int bands,
              int shingle) {
    auto records = read_jsonl(in);
    int64_t input_count = static_cast<int64_t>(records.size());
    uint64_t empty_skipped = 0;
    std::vector<LogRecord> kept;
    for (auto& rec : records) {
        try {
            kept.push_back(normalize(std::move(rec)));
        } catch (const Error& e) {
            if (e.code() != "EmptyRecord") throw;
            ++empty_skipped;
        }
    }
    auto [exact_survivors, exact_report] = dedup_exact(std::move(kept));
    ApproxDedupConfig cfg;
    cfg.jaccard_threshold = threshold;
    cfg.num_permutations = perms;
    cfg.bands = bands;
    cfg.rows_per_band = bands > 0 ? perms / bands : 0;
    cfg.shingle_width = shingle;
    cfg.seed = derive_seed(g.seed, "dedup");
    cfg.threads = g.threads;
    auto [survivors, approx_report] = dedup_approx(std::move(exact_survivors), cfg);
    write_jsonl(out, survivors);

    json report;
    report["input_count"] = input_count;
    report["empty_skipped"] = empty_skipped;
    report["exact_removed"] = exact_report.exact_removed;
    report["approx_removed"] = approx_report.approx_removed;
    report["output_count"] = approx_report.output_count;
    json groups = json::array();
    for (const auto& group : exact_report.duplicate_groups) groups.push_back(group);
    for (const auto& group : approx_report.duplicate_groups) groups.push_back(group);
    report["duplicate_groups"] = groups;
    write_report(report_path, report);

    json cfg_json{{"in", in},     {"out", out},     {"report", report_path},
                  {"threshold", threshold}, {"perms", perms}, {"bands", bands},
                  {"shingle", shingle}};
    write_manifest("dedup", cfg_json, g.seed, {out, report_path}, out);
    log_verbose(g, "dedup kept " + std::to_string(survivors.size()) + " records");
    return 0;
}

int run_tokenizer_train(const GlobalOpts& g, const std::string& in, uint32_t vocab_size,
                        const std::string& out) {
    auto records = read_jsonl(in);
    TokenizerModel model = train_bpe(records, vocab_size, derive_seed(g.seed, "tokenizer"));
    classify_delimiters(model, default_delimiter_charset());
    save_tokenizer(model, out);
    json cfg{{"in", in}, {"vocab_size", vocab_size}, {"out", out}};
    write_manifest("tokenizer-train", cfg, g.seed, {out}, out);
    log_verbose(g, "vocab " + std::to_string(model.vocab_size()) + " -> " + out);
    return 0;
}

int run_tokenizer_encode(const std::string& model_path, const std::string& text) {
    TokenizerModel model = load_tokenizer(model_path);
    TokenSequence seq = encode(model, text);
    std::string line;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (i > 0) line += ", ";
        uint32_t id = seq.ids[i];
        line += TokenizerModel::is_special(id) ? TokenizerModel::special_name(id)
                                               : model.vocab[id];
    }
    std::cout << line << "\n";
    return 0;
}

int run_pretrain(const GlobalOpts& g, const std::string& config_path,
                 const std::string& corpus_path, const std::string& tokenizer_path,
                 const std::string& out_dir) {
    PipelineConfig pipeline;
    if (!config_path.empty()) pipeline = load_pipeline_config(config_path);
    uint64_t seed = pipeline.seed.value_or(g.seed);

    TokenizerModel tokenizer = load_tokenizer(tokenizer_path);
    auto records = read_jsonl(corpus_path);
    bool any_train = false;
    for (const auto& rec : records) any_train |= rec.split == Split::train;
    if (!any_train)
        records = split_corpus(std::move(records), 0.9, 0.1, {}, derive_seed(seed, "split"));

    EncoderConfig enc_cfg = pipeline.encoder;
    enc_cfg.vocab_size = tokenizer.vocab_size();
    enc_cfg.validate();
    TrainConfig train_cfg = pipeline.trainer;
    train_cfg.seed = seed;
    train_cfg.validate();

    EncoderModel model;
    model.config = enc_cfg;
    model.params = init_params<float>(enc_cfg, seed);
    AdamState opt = make_adam_state(enc_cfg);

    PretrainResult result = pretrain(model, opt, records, tokenizer, train_cfg, out_dir);

    std::string curve_path = out_dir + "/loss_curve.csv";
    write_loss_curve(curve_path, result.curve);
    std::string final_dir = out_dir + "/final";
    save_checkpoint(final_dir, make_train_checkpoint(model, opt, train_cfg.max_steps));

    json evals = json::array();
    for (const auto& ev : result.evals)
        evals.push_back({{"step", ev.step}, {"perplexity", ev.perplexity},
                         {"accuracy", ev.accuracy}});
    json summary;
    summary["final_loss"] = result.curve.empty() ? 0.0 : result.curve.back().loss;
    summary["steps"] = train_cfg.max_steps;
    summary["skipped_sequences"] = result.skipped_sequences;
    summary["evals"] = evals;
    std::string summary_path = out_dir + "/train_summary.json";
    write_report(summary_path, summary);

    json cfg;
    cfg["config"] = config_path;
    cfg["corpus"] = corpus_path;
    cfg["tokenizer"] = tokenizer_path;
    cfg["out"] = out_dir;
    to_json(cfg["encoder"], enc_cfg);
    cfg["trainer"] = {{"batch_size", train_cfg.batch_size},
                      {"max_steps", train_cfg.max_steps},
                      {"learning_rate", train_cfg.learning_rate},
                      {"warmup_steps", train_cfg.warmup_steps},
                      {"weight_decay", train_cfg.weight_decay},
                      {"grad_clip_norm", train_cfg.grad_clip_norm}};
    write_manifest("pretrain", cfg, seed,
                   {curve_path, summary_path, final_dir + "/manifest.json"}, summary_path);
    log_verbose(g, "final loss " + std::to_string(summary["final_loss"].get<double>()));
    return 0;
}

int run_embed(const GlobalOpts& g, const std::string& model_dir,
              const std::string& tokenizer_path, const std::string& in,
              const std::string& out) {
    EncoderModel model = load_model(model_dir);
    TokenizerModel tokenizer = load_tokenizer(tokenizer_path);
    auto records = read_jsonl(in);
    uint64_t skipped = 0;
    EmbeddingSet set = embed_records(model, tokenizer, records, g.threads, &skipped);
    write_embeddings(out, set);
    json cfg{{"model", model_dir}, {"tokenizer", tokenizer_path}, {"in", in}, {"out", out}};
    write_manifest("embed", cfg, g.seed, {out}, out);
    log_verbose(g, "embedded " + std::to_string(set.size()) + ", skipped " +
                       std::to_string(skipped));
    return 0;
}

int run_templates(const GlobalOpts& g, const std::string& in, const std::string& out,
                  int depth, double st, int max_children) {
    DrainConfig cfg;
    cfg.depth = depth;
    cfg.similarity_threshold = st;
    cfg.max_children = max_children;
    cfg.validate();
    auto records = read_jsonl(in);
    TemplateIndex index = drain_parse(records, cfg);

    json templates = json::object();
    for (const auto& [id, tokens] : index.templates)
        templates[std::to_string(id)] = index.template_string(id);
    json assignments = json::object();
    for (const auto& [log_id, tpl_id] : index.assignments) assignments[log_id] = tpl_id;
    json report;
    report["templates"] = templates;
    report["assignments"] = assignments;
    report["skipped_empty"] = index.skipped_empty;
    write_report(out, report);

    json cfg_json{{"in", in},       {"out", out},
                  {"depth", depth}, {"similarity_threshold", st},
                  {"max_children", max_children}};
    write_manifest("templates", cfg_json, g.seed, {out}, out);
    log_verbose(g, std::to_string(index.templates.size()) + " templates");
    return 0;
}

int run_eval_intrinsic(const GlobalOpts& g, const std::string& model_dir,
                       const std::string& tokenizer_path,
                       const std::vector<std::string>& data_paths,
                       std::vector<std::string> tags, std::vector<std::string> outs) {
    if (tags.size() != data_paths.size() || outs.size() != data_paths.size())
        throw Error("ConfigInvalid", "--data, --tag, and --out must repeat together");
    EncoderModel model = load_model(model_dir);
    TokenizerModel tokenizer = load_tokenizer(tokenizer_path);
    for (size_t i = 0; i < data_paths.size(); ++i) {
        auto records = read_jsonl(data_paths[i]);
        IntrinsicReport rep = intrinsic_eval(model, tokenizer, records,
                                             derive_seed(g.seed, "eval"), tags[i]);
        json j;
        j["dataset_tag"] = rep.dataset_tag;
        j["perplexity"] = rep.perplexity;
        j["accuracy"] = rep.accuracy;
        j["masked_token_count"] = rep.masked_token_count;
        j["skipped_records"] = rep.skipped_records;
        write_report(outs[i], j);
        json cfg{{"model", model_dir},
                 {"tokenizer", tokenizer_path},
                 {"data", data_paths[i]},
                 {"tag", tags[i]},
                 {"out", outs[i]}};
        write_manifest("eval-intrinsic", cfg, g.seed, {outs[i]}, outs[i]);
        std::cout << tags[i] << " perplexity " << rep.perplexity << " accuracy "
                  << rep.accuracy << "\n";
    }
    return 0;
}

int run_subsample(const GlobalOpts& g, const std::string& embeddings_path,
                  const std::string& logs_path, size_t n, const std::string& out) {
    EmbeddingSet set = read_embeddings(embeddings_path);
    std::vector<std::string> selected = subsample_maxmin(set, n);
    json report;
    report["selected"] = selected;
    if (!logs_path.empty()) {
        auto records = read_jsonl(logs_path);
        std::map<std::string, const LogRecord*> by_id;
        for (const auto& rec : records) by_id[rec.id] = &rec;
        std::vector<LogRecord> chosen;
        for (const auto& id : selected) {
            auto it = by_id.find(id);
            if (it == by_id.end())
                throw Error("ConfigInvalid", "selected id missing from --logs: " + id);
            chosen.push_back(*it->second);
        }
        SubsampleScore score = subsample_score(chosen);
        report["entity_count"] = score.entity_count;
        report["levenshtein_total"] = score.levenshtein_total;
    }
    if (out.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        write_report(out, report);
        json cfg{{"embeddings", embeddings_path}, {"logs", logs_path}, {"n", n}, {"out", out}};
        write_manifest("subsample", cfg, g.seed, {out}, out);
    }
    return 0;
}

int run_detect(const GlobalOpts& g, const std::string& logs_path,
               const std::string& embeddings_path, const std::string& mode, size_t top_k,
               const std::vector<std::string>& structured_columns, size_t trees,
               size_t subsample, const std::string& out) {
    auto records = read_jsonl(logs_path);
    EmbeddingSet embeddings;
    if (!embeddings_path.empty()) embeddings = read_embeddings(embeddings_path);
    DetectionResult result =
        pattern_detect(records, embeddings, structured_columns, mode, top_k, trees,
                       std::min(subsample, records.size()), derive_seed(g.seed, "detect"));
    json report;
    report["flagged"] = result.flagged_ids;
    json scores = json::object();
    for (size_t i = 0; i < records.size(); ++i) scores[records[i].id] = result.scores[i];
    report["scores"] = scores;
    if (result.accuracy_at_k) report["accuracy_at_k"] = *result.accuracy_at_k;
    report["label_codes_only"] = result.label_codes_only;
    if (out.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        write_report(out, report);
        json cfg{{"logs", logs_path},     {"embeddings", embeddings_path},
                 {"mode", mode},          {"top", top_k},
                 {"structured-columns", structured_columns},
                 {"trees", trees},        {"subsample", subsample},
                 {"out", out}};
        write_manifest("detect", cfg, g.seed, {out}, out);
    }
    return 0;
}

int run_triage(const GlobalOpts& g, const std::string& train_path,
               const std::string& test_path, const std::string& model_dir,
               const std::string& tokenizer_path, int k, double theta_tp, double theta_bp,
               const std::string& out) {
    EncoderModel model = load_model(model_dir);
    TokenizerModel tokenizer = load_tokenizer(tokenizer_path);
    auto train_records = read_jsonl(train_path);
    auto test_records = read_jsonl(test_path);
    auto train_incidents = incidents_from_records(train_records);
    auto test_incidents = incidents_from_records(test_records);
    EmbeddingSet train_emb = embed_records(model, tokenizer, train_records, g.threads);
    EmbeddingSet test_emb = embed_records(model, tokenizer, test_records, g.threads);
    TriageModel triage = triage_fit(train_incidents, train_emb, k, theta_tp, theta_bp);
    TriageOutcome outcome = triage_apply(triage, test_incidents, test_emb);

    json decisions = json::object();
    for (size_t i = 0; i < test_incidents.size(); ++i)
        decisions[test_incidents[i].id] = triage_decision_name(outcome.decisions[i]);
    json report;
    report["decisions"] = decisions;
    report["auto_tp"] = outcome.auto_tp;
    report["auto_bpfp"] = outcome.auto_bpfp;
    report["escalated"] = outcome.escalated;
    report["mis_suppression"] = outcome.mis_suppression;
    report["mis_elevation"] = outcome.mis_elevation;
    report["volume_reduction"] = outcome.volume_reduction;
    if (out.empty()) {
        std::cout << report.dump(2) << "\n";
    } else {
        write_report(out, report);
        json cfg{{"train", train_path}, {"test", test_path},   {"model", model_dir},
                 {"tokenizer", tokenizer_path}, {"k", k},      {"theta_tp", theta_tp},
                 {"theta_bp", theta_bp}, {"out", out}};
        write_manifest("triage", cfg, g.seed, {out}, out);
    }
    return 0;
}

int run_retrieve(const GlobalOpts& g, const std::string& docs_path, const std::string& query,
                 size_t k, const std::string& model_dir, const std::string& tokenizer_path,
                 const std::string& out) {
    EncoderModel model = load_model(model_dir);
    TokenizerModel tokenizer = load_tokenizer(tokenizer_path);
    EmbeddingSet docs = read_embeddings(docs_path);
    std::vector<uint32_t> ids = encode(tokenizer, query).ids;
    if (ids.empty()) throw Error("ConfigInvalid", "query text is empty");
    Embedding q = embed_log(model, ids, "query");
    std::vector<std::string> ranked = retrieve_topk(q.vector, docs, k);
    for (const auto& id : ranked) std::cout << id << "\n";
    if (!out.empty()) {
        json report{{"query", query}, {"ranked", ranked}};
        write_report(out, report);
        json cfg{{"docs", docs_path}, {"query", query}, {"k", k},
                 {"model", model_dir}, {"tokenizer", tokenizer_path}, {"out", out}};
        write_manifest("retrieve", cfg, g.seed, {out}, out);
    }
    return 0;
}

std::vector<ProbeExample> probe_examples_from(const std::vector<LogRecord>& records,
                                              const TokenizerModel& tokenizer) {
    // Records sharing a "group" annotation form one labeled set; ungrouped
    // records are singleton sets.
    std::vector<std::string> order;
    std::map<std::string, ProbeExample> by_group;
    for (const auto& rec : records) {
        std::string label = record_annotation(rec, "label");
        if (label.empty())
            throw Error("ConfigInvalid", "probe record " + rec.id + " carries no label");
        std::string group = record_annotation(rec, "group");
        if (group.empty()) group = rec.id;
        auto [it, fresh] = by_group.try_emplace(group);
        if (fresh) {
            order.push_back(group);
            it->second.label = label;
        } else if (it->second.label != label) {
            throw Error("ConfigInvalid", "group " + group + " has conflicting labels");
        }
        it->second.logs.push_back(encode(tokenizer, rec.raw).ids);
    }
    std::vector<ProbeExample> examples;
    for (const auto& group : order) examples.push_back(std::move(by_group[group]));
    return examples;
}

int run_probe(const GlobalOpts& g, const std::string& model_dir,
              const std::string& tokenizer_path, const std::string& train_path,
              const std::string& test_path, int set_size, uint64_t steps, int batch,
              double lr, const std::string& out) {
    EncoderModel model = load_model(model_dir);
    TokenizerModel tokenizer = load_tokenizer(tokenizer_path);
    auto train_examples = probe_examples_from(read_jsonl(train_path), tokenizer);
    auto test_examples = probe_examples_from(read_jsonl(test_path), tokenizer);

    TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.max_steps = steps;
    cfg.learning_rate = lr;
    cfg.warmup_steps = std::max<uint64_t>(1, steps / 10);
    cfg.seed = derive_seed(g.seed, "probe");
    cfg.validate();

    ProbeHead head = finetune_probe(model, train_examples, cfg, set_size);
    uint64_t correct = 0;
    json predictions = json::array();
    for (const auto& ex : test_examples) {
        std::string predicted = probe_predict(model, head, ex.logs);
        correct += predicted == ex.label;
        predictions.push_back({{"label", ex.label}, {"predicted", predicted}});
    }
    double accuracy =
        test_examples.empty() ? 0.0 : static_cast<double>(correct) / test_examples.size();

    json report;
    report["train_examples"] = train_examples.size();
    report["test_examples"] = test_examples.size();
    report["accuracy"] = accuracy;
    report["classes"] = head.classes;
    report["predictions"] = predictions;
    std::cout << "probe accuracy " << accuracy << "\n";
    if (!out.empty()) {
        write_report(out, report);
        json cfg_json{{"model", model_dir}, {"tokenizer", tokenizer_path},
                      {"train", train_path}, {"test", test_path},
                      {"set-size", set_size}, {"steps", steps},
                      {"batch", batch},       {"lr", lr},
                      {"out", out}};
        write_manifest("probe", cfg_json, g.seed, {out}, out);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"logenc: security-log encoder toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "Global seed; all module randomness derives from it");
    app.add_option("--threads", g.threads, "Worker-pool cap for parallel sections");
    app.add_flag("--verbose", g.verbose, "Progress logging to stderr");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
    std::string synth_family_name = "syslog";
    size_t synth_n = 10000;
    double synth_rate = 0.0;
    std::string synth_out;
    synth->add_option("--family", synth_family_name, "syslog|syslog-a|syslog-b|jsonl");
    synth->add_option("--n", synth_n, "Record count");
    synth->add_option("--anomaly-rate", synth_rate, "Fraction of mutated records");
    synth->add_option("--out", synth_out, "Output JSONL")->required();

    // dedup
    auto* dedup = app.add_subcommand("dedup", "Exact + MinHash/LSH near-duplicate removal");
    std::string dd_in, dd_out, dd_report;
    double dd_threshold = 0.9;
    int dd_perms = 256, dd_bands = 32, dd_shingle = 8;
    dedup->add_option("--in", dd_in)->required()->check(CLI::ExistingFile);
    dedup->add_option("--out", dd_out)->required();
    dedup->add_option("--report", dd_report)->required();
    dedup->add_option("--threshold", dd_threshold, "Jaccard threshold");
    dedup->add_option("--perms", dd_perms, "MinHash permutations");
    dedup->add_option("--bands", dd_bands, "LSH bands");
    dedup->add_option("--shingle", dd_shingle, "Shingle width in bytes");

    // tokenizer train|encode
    auto* tok = app.add_subcommand("tokenizer", "BPE tokenizer operations");
    tok->require_subcommand(1);
    auto* tok_train = tok->add_subcommand("train", "Train a byte-level BPE model");
    std::string tt_in, tt_out;
    uint32_t tt_vocab = 4096;
    tok_train->add_option("--in", tt_in)->required()->check(CLI::ExistingFile);
    tok_train->add_option("--vocab-size", tt_vocab);
    tok_train->add_option("--out", tt_out)->required();
    auto* tok_encode = tok->add_subcommand("encode", "Print a line's tokens");
    std::string te_model, te_text;
    tok_encode->add_option("--model", te_model)->required()->check(CLI::ExistingFile);
    tok_encode->add_option("--text", te_text)->required();

    // pretrain
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked-LM pretraining");
    std::string pt_config, pt_corpus, pt_tokenizer, pt_out;
    pretrain_cmd->add_option("--config", pt_config, "Pipeline config JSON")
        ->check(CLI::ExistingFile);
    pretrain_cmd->add_option("--corpus", pt_corpus)->required()->check(CLI::ExistingFile);
    pretrain_cmd->add_option("--tokenizer", pt_tokenizer)->required()->check(CLI::ExistingFile);
    pretrain_cmd->add_option("--out", pt_out, "Checkpoint directory")->required();

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "Write one embedding per record");
    std::string em_model, em_tokenizer, em_in, em_out;
    embed_cmd->add_option("--model", em_model)->required();
    embed_cmd->add_option("--tokenizer", em_tokenizer)->required()->check(CLI::ExistingFile);
    embed_cmd->add_option("--in", em_in)->required()->check(CLI::ExistingFile);
    embed_cmd->add_option("--out", em_out)->required();

    // templates
    auto* templates_cmd = app.add_subcommand("templates", "Drain template extraction");
    std::string tp_in, tp_out;
    int tp_depth = 4, tp_max_children = 100;
    double tp_st = 0.4;
    templates_cmd->add_option("--in", tp_in)->required()->check(CLI::ExistingFile);
    templates_cmd->add_option("--out", tp_out)->required();
    templates_cmd->add_option("--depth", tp_depth);
    templates_cmd->add_option("--st", tp_st, "Similarity threshold");
    templates_cmd->add_option("--max-children", tp_max_children);

    // eval intrinsic
    auto* eval_cmd = app.add_subcommand("eval", "Evaluation suites");
    eval_cmd->require_subcommand(1);
    auto* eval_intrinsic = eval_cmd->add_subcommand("intrinsic", "Pseudo-perplexity/accuracy");
    std::string ev_model, ev_tokenizer;
    std::vector<std::string> ev_data, ev_tags, ev_outs;
    eval_intrinsic->add_option("--model", ev_model)->required();
    eval_intrinsic->add_option("--tokenizer", ev_tokenizer)->required()->check(CLI::ExistingFile);
    eval_intrinsic->add_option("--data", ev_data, "Dataset JSONL (repeatable)")->required();
    eval_intrinsic->add_option("--tag", ev_tags, "Dataset tag, e.g. IDTS/ODTS")->required();
    eval_intrinsic->add_option("--out", ev_outs, "Report path per dataset")->required();

    // subsample
    auto* subsample_cmd = app.add_subcommand("subsample", "Greedy Max-Min selection");
    std::string ss_embeddings, ss_logs, ss_out;
    size_t ss_n = 10;
    subsample_cmd->add_option("--embeddings", ss_embeddings)->required()->check(CLI::ExistingFile);
    subsample_cmd->add_option("--logs", ss_logs)->check(CLI::ExistingFile);
    subsample_cmd->add_option("--n", ss_n);
    subsample_cmd->add_option("--out", ss_out);

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "Isolation-Forest anomaly detection");
    std::string dt_logs, dt_embeddings, dt_mode = "embedding", dt_out;
    size_t dt_top = 5, dt_trees = 100, dt_subsample = 256;
    std::vector<std::string> dt_columns;
    detect_cmd->add_option("--logs", dt_logs)->required()->check(CLI::ExistingFile);
    detect_cmd->add_option("--embeddings", dt_embeddings)->check(CLI::ExistingFile);
    detect_cmd->add_option("--mode", dt_mode, "embedding|hybrid");
    detect_cmd->add_option("--top", dt_top);
    detect_cmd->add_option("--structured-columns", dt_columns)->delimiter(',');
    detect_cmd->add_option("--trees", dt_trees);
    detect_cmd->add_option("--subsample", dt_subsample);
    detect_cmd->add_option("--out", dt_out);

    // triage
    auto* triage_cmd = app.add_subcommand("triage", "KNN incident triage");
    std::string tr_train, tr_test, tr_model, tr_tokenizer, tr_out;
    int tr_k = 15;
    double tr_theta_tp = 1.0, tr_theta_bp = 1.0;
    triage_cmd->add_option("--train", tr_train)->required()->check(CLI::ExistingFile);
    triage_cmd->add_option("--test", tr_test)->required()->check(CLI::ExistingFile);
    triage_cmd->add_option("--model", tr_model)->required();
    triage_cmd->add_option("--tokenizer", tr_tokenizer)->required()->check(CLI::ExistingFile);
    triage_cmd->add_option("--k", tr_k);
    triage_cmd->add_option("--theta-tp", tr_theta_tp);
    triage_cmd->add_option("--theta-bp", tr_theta_bp);
    triage_cmd->add_option("--out", tr_out);

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "Top-k cosine retrieval");
    std::string rt_docs, rt_query, rt_model, rt_tokenizer, rt_out;
    size_t rt_k = 10;
    retrieve_cmd->add_option("--docs", rt_docs)->required()->check(CLI::ExistingFile);
    retrieve_cmd->add_option("--query", rt_query)->required();
    retrieve_cmd->add_option("--k", rt_k);
    retrieve_cmd->add_option("--model", rt_model)->required();
    retrieve_cmd->add_option("--tokenizer", rt_tokenizer)->required()->check(CLI::ExistingFile);
    retrieve_cmd->add_option("--out", rt_out);

    // probe
    auto* probe_cmd = app.add_subcommand("probe", "Last-layer finetuning probe");
    std::string pb_model, pb_tokenizer, pb_train, pb_test, pb_out;
    int pb_set_size = 8, pb_batch = 16;
    uint64_t pb_steps = 200;
    double pb_lr = 1e-3;
    probe_cmd->add_option("--model", pb_model)->required();
    probe_cmd->add_option("--tokenizer", pb_tokenizer)->required()->check(CLI::ExistingFile);
    probe_cmd->add_option("--train", pb_train)->required()->check(CLI::ExistingFile);
    probe_cmd->add_option("--test", pb_test)->required()->check(CLI::ExistingFile);
    probe_cmd->add_option("--set-size", pb_set_size);
    probe_cmd->add_option("--steps", pb_steps);
    probe_cmd->add_option("--batch", pb_batch);
    probe_cmd->add_option("--lr", pb_lr);
    probe_cmd->add_option("--out", pb_out);

    for (auto* sub : {synth, dedup, tok, tok_train, tok_encode, pretrain_cmd, embed_cmd,
                      templates_cmd, eval_cmd, eval_intrinsic, subsample_cmd, detect_cmd,
                      triage_cmd, retrieve_cmd, probe_cmd})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return run_synth(g, synth_family_name, synth_n, synth_rate, synth_out);
        if (dedup->parsed())
            return run_dedup(g, dd_in, dd_out, dd_report, dd_threshold, dd_perms, dd_bands,
                             dd_shingle);
        if (tok->parsed()) {
            if (tok_train->parsed()) return run_tokenizer_train(g, tt_in, tt_vocab, tt_out);
            return run_tokenizer_encode(te_model, te_text);
        }
        if (pretrain_cmd->parsed()) return run_pretrain(g, pt_config, pt_corpus, pt_tokenizer, pt_out);
        if (embed_cmd->parsed()) return run_embed(g, em_model, em_tokenizer, em_in, em_out);
        if (templates_cmd->parsed())
            return run_templates(g, tp_in, tp_out, tp_depth, tp_st, tp_max_children);
        if (eval_cmd->parsed())
            return run_eval_intrinsic(g, ev_model, ev_tokenizer, ev_data, ev_tags, ev_outs);
        if (subsample_cmd->parsed()) return run_subsample(g, ss_embeddings, ss_logs, ss_n, ss_out);
        if (detect_cmd->parsed())
            return run_detect(g, dt_logs, dt_embeddings, dt_mode, dt_top, dt_columns, dt_trees,
                              dt_subsample, dt_out);
        if (triage_cmd->parsed())
            return run_triage(g, tr_train, tr_test, tr_model, tr_tokenizer, tr_k, tr_theta_tp,
                              tr_theta_bp, tr_out);
        if (retrieve_cmd->parsed())
            return run_retrieve(g, rt_docs, rt_query, rt_k, rt_model, rt_tokenizer, rt_out);
        if (probe_cmd->parsed())
            return run_probe(g, pb_model, pb_tokenizer, pb_train, pb_test, pb_set_size, pb_steps,
                             pb_batch, pb_lr, pb_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == "ConfigInvalid" || e.code() == "BadConfig" ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
