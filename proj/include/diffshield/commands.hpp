// Subcommand orchestration. Every command reads and writes artifacts under
// data_dir / out_dir so stages stay restartable; json artifacts carry the
// config echo and never wall-clock values, keeping same-config runs
// byte-identical.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diffshield/attack.hpp"
#include "diffshield/checkpoint.hpp"
#include "diffshield/config.hpp"
#include "diffshield/dataset.hpp"
#include "diffshield/eval.hpp"
#include "diffshield/train.hpp"
#include "diffshield/util.hpp"

namespace diffshield::commands {

// pipeline scalar; tests drive the same templates in double
using PScalar = float;

// rng stream tags, combined with the run seed via mix_seed
namespace stream {
inline constexpr std::uint64_t kData = 100;
inline constexpr std::uint64_t kModelInit = 101;
inline constexpr std::uint64_t kTrain = 102;
inline constexpr std::uint64_t kBaseModelInit = 111;
inline constexpr std::uint64_t kBaseTrain = 112;
inline constexpr std::uint64_t kDenoiserInit = 201;
inline constexpr std::uint64_t kDiffusionTrain = 202;
inline constexpr std::uint64_t kRecalibrate = 203;
inline constexpr std::uint64_t kCleanEval = 301;
inline constexpr std::uint64_t kAblateDenoiserInit = 403;
inline constexpr std::uint64_t kAblateDiffusionTrain = 404;
}  // namespace stream

inline std::string model_dir(const std::string& out) { return out + "/model"; }
inline std::string base_model_dir(const std::string& out) { return out + "/model_base"; }
inline std::string denoiser_dir(const std::string& out) { return out + "/denoiser"; }
inline std::string attacks_dir(const std::string& out) { return out + "/attacks"; }

// Relative data_dir lives under the output root so a run is one self-contained tree.
inline std::string data_root(const RunConfig& cfg, const std::string& out_dir) {
    std::filesystem::path p(cfg.task.data_dir);
    if (p.is_absolute()) return cfg.task.data_dir;
    return (std::filesystem::path(out_dir) / p).string();
}

inline InferenceConfig inference_from(const RunConfig& cfg) {
    InferenceConfig icfg;
    icfg.t_prime = cfg.inference.t_prime;
    icfg.k = cfg.inference.k;
    icfg.zero_final_z = cfg.inference.zero_final_z;
    icfg.use_sigma = cfg.inference.use_sigma;
    icfg.noise_with_tprime = cfg.inference.noise_with_tprime;
    return icfg;
}

// Vocabulary covers the training text plus every pool word, so held-out
// synonyms have embeddings. Sorting makes ids independent of input order.
inline Vocab build_vocab(const std::vector<Example>& train, const SynonymPools& pools) {
    std::vector<std::string> words;
    for (const auto& ex : train)
        for (auto& w : split_words(ex.text)) words.push_back(std::move(w));
    for (const auto& [key, syns] : pools.syn) {
        words.push_back(key);
        for (const auto& s : syns) words.push_back(s);
    }
    return Vocab::build(std::move(words));
}

inline std::vector<int> labels_of(const std::vector<Example>& ex) {
    std::vector<int> out;
    out.reserve(ex.size());
    for (const auto& e : ex) out.push_back(e.label);
    return out;
}

inline int class_count(const std::vector<Example>& ex) {
    int mx = -1;
    for (const auto& e : ex) mx = std::max(mx, e.label);
    if (mx < 1) throw std::runtime_error("train: need at least two classes");
    return mx + 1;
}

// Artifacts must agree with the active config before any metric is computed.
inline void check_artifacts(const RunConfig& cfg, const ModelConfig& mc, const DenoiserConfig& dc,
                            const ScheduleSpec& spec) {
    if (mc.width != cfg.model.width || mc.layers != cfg.model.layers || mc.heads != cfg.model.heads ||
        mc.max_len != cfg.model.max_len)
        throw ConfigError("config: model checkpoint disagrees with [model] settings");
    if (dc.width != mc.width || dc.max_len != mc.max_len)
        throw std::runtime_error("checkpoint: denoiser width or max_len disagrees with the model");
    if (spec.T != cfg.diffusion.T || spec.beta_start != cfg.diffusion.beta_start ||
        spec.beta_end != cfg.diffusion.beta_end)
        throw ConfigError("config: denoiser schedule disagrees with [diffusion] settings");
}

// Both victims come from one train run, so everything but the weights matches.
inline void check_base_model(const ModelConfig& deployed, const ModelConfig& base) {
    if (base.vocab != deployed.vocab || base.width != deployed.width || base.layers != deployed.layers ||
        base.heads != deployed.heads || base.max_len != deployed.max_len || base.classes != deployed.classes)
        throw std::runtime_error("checkpoint: base model disagrees with the deployed model");
}

// ---- gen-data ----

inline void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    GeneratorConfig gc;
    gc.train_n = cfg.task.train_n;
    gc.valid_n = cfg.task.valid_n;
    gc.test_n = cfg.task.test_n;
    gc.len_min = cfg.task.len_min;
    gc.len_max = cfg.task.len_max;
    gc.kw1 = cfg.task.kw1;
    gc.kw2 = cfg.task.kw2;
    gc.kw3 = cfg.task.kw3;
    Corpus corpus = generate_corpus(gc, mix_seed(cfg.seed, stream::kData));
    const std::string data = data_root(cfg, out_dir);
    std::filesystem::create_directories(data);
    save_jsonl(data + "/train.jsonl", corpus.train);
    save_jsonl(data + "/valid.jsonl", corpus.valid);
    save_jsonl(data + "/test.jsonl", corpus.test);
    corpus.pools.save(data + "/pools.json");
    nlohmann::ordered_json j;
    j["config"] = cfg.echo();
    j["counts"] = {{"train", corpus.train.size()},
                   {"valid", corpus.valid.size()},
                   {"test", corpus.test.size()},
                   {"vocab_words", corpus.vocab_words.size()}};
    write_json_file(data + "/manifest.json", j);
    std::cout << "gen-data: wrote " << corpus.train.size() << "/" << corpus.valid.size() << "/"
              << corpus.test.size() << " train/valid/test examples to " << data << "\n";
}

// ---- train ----

inline void cmd_train(const RunConfig& cfg, const std::string& out_dir) {
    const std::string data = data_root(cfg, out_dir);
    auto train_ex = load_jsonl(data + "/train.jsonl");
    auto valid_ex = load_jsonl(data + "/valid.jsonl");
    auto pools = SynonymPools::load(data + "/pools.json");
    Vocab vocab = build_vocab(train_ex, pools);

    ModelConfig mc;
    mc.vocab = vocab.size();
    mc.width = cfg.model.width;
    mc.layers = cfg.model.layers;
    mc.heads = cfg.model.heads;
    mc.ffn_mult = cfg.model.ffn_mult;
    mc.max_len = cfg.model.max_len;
    mc.classes = class_count(train_ex);
    mc.dropout = cfg.model.dropout;
    mc.init_std = cfg.model.init_std;

    auto seqs = tokenize_all(train_ex, vocab, mc.max_len);
    auto labels = labels_of(train_ex);
    auto vseqs = tokenize_all(valid_ex, vocab, mc.max_len);
    auto vlabels = labels_of(valid_ex);
    TrainSettings ts{cfg.train.epochs, cfg.train.batch, cfg.train.lr, cfg.train.weight_decay};

    auto train_one = [&](bool adversarial, std::uint64_t init_stream, std::uint64_t train_stream,
                         const std::string& dir, const char* tag) {
        EncoderClassifier<PScalar> m;
        m.cfg = mc;
        {
            Rng r(mix_seed(cfg.seed, init_stream));
            m.init(r);
        }
        Rng trng(mix_seed(cfg.seed, train_stream));
        StopWatch sw;
        std::vector<double> losses;
        if (adversarial) {
            AdvSettings adv{cfg.train.inner_steps, cfg.train.step_size, cfg.train.norm_bound};
            losses = train_adversarial(m, seqs, labels, ts, adv, trng);
        } else {
            losses = train_clean(m, seqs, labels, ts, trng);
        }
        double train_acc = accuracy(m, seqs, labels);
        double valid_acc = accuracy(m, vseqs, vlabels);
        save_model(dir, m, vocab);
        nlohmann::ordered_json j;
        j["config"] = cfg.echo();
        j["adversarial"] = adversarial;
        j["vocab_size"] = vocab.size();
        j["classes"] = mc.classes;
        j["epoch_losses"] = losses;
        j["train_accuracy"] = train_acc;
        j["valid_accuracy"] = valid_acc;
        j["model_hash"] = hash_file(dir + "/weights.bin");
        write_json_file(dir + "/train_log.json", j);
        std::cout << "train: " << tag << " " << (adversarial ? "adversarial" : "clean") << ", final loss "
                  << losses.back() << ", train acc " << train_acc << ", valid acc " << valid_acc << " ("
                  << sw.seconds() << " s)\n";
    };

    // deployed encoder per config; the undefended reference victim is always
    // plain fine-tuning on the same vocabulary
    train_one(cfg.train.adversarial, stream::kModelInit, stream::kTrain, model_dir(out_dir), "deployed");
    train_one(false, stream::kBaseModelInit, stream::kBaseTrain, base_model_dir(out_dir), "base");
}

// ---- diffuse-train ----

template <typename S>
void encode_all(const EncoderClassifier<S>& m, const std::vector<TokenSequence>& seqs,
                std::vector<TensorT<S>>& hidden, std::vector<Mask>& masks) {
    hidden.clear();
    masks.clear();
    hidden.reserve(seqs.size());
    masks.reserve(seqs.size());
    ModelFwd<S> fw;
    for (const auto& seq : seqs) {
        hidden.push_back(encode(m, seq, fw));
        masks.push_back(seq.mask);
    }
}

inline void cmd_diffuse_train(const RunConfig& cfg, const std::string& out_dir) {
    auto [m, vocab] = load_model<PScalar>(model_dir(out_dir));
    std::string hash_before = hash_file(model_dir(out_dir) + "/weights.bin");

    auto train_ex = load_jsonl(data_root(cfg, out_dir) + "/train.jsonl");
    auto seqs = tokenize_all(train_ex, vocab, m.cfg.max_len);
    std::vector<TensorT<PScalar>> hidden;
    std::vector<Mask> masks;
    encode_all(m, seqs, hidden, masks);

    NoiseSchedule sched = linear_schedule(cfg.diffusion.T, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
    DiffusionDenoiser<PScalar> den;
    den.cfg.width = m.cfg.width;
    den.cfg.heads = cfg.model.heads;
    den.cfg.ffn_mult = cfg.model.ffn_mult;
    den.cfg.max_len = m.cfg.max_len;
    den.cfg.dropout = cfg.model.dropout;
    den.cfg.init_std = cfg.model.init_std;
    den.cfg.ln_eps = m.cfg.ln_eps;
    {
        Rng r(mix_seed(cfg.seed, stream::kDenoiserInit));
        den.init(r);
    }
    TrainSettings dts{cfg.diffusion.epochs, cfg.diffusion.batch, cfg.diffusion.lr};
    Rng drng(mix_seed(cfg.seed, stream::kDiffusionTrain));
    StopWatch sw;
    std::vector<double> losses = train_denoiser(den, hidden, masks, sched, dts, drng);
    save_denoiser(denoiser_dir(out_dir), den, sched, cfg.diffusion.beta_start, cfg.diffusion.beta_end);

    nlohmann::ordered_json j;
    j["config"] = cfg.echo();
    j["epoch_losses"] = losses;

    if (cfg.diffusion.recalibrate_head) {
        // optional variant saved separately; the deployed encoder+classifier
        // stays frozen
        InferenceConfig icfg = inference_from(cfg);
        icfg.validate(sched);
        TrainSettings rts{cfg.diffusion.recal_epochs, cfg.diffusion.batch, cfg.diffusion.lr};
        Rng rr(mix_seed(cfg.seed, stream::kRecalibrate));
        auto rlosses = train_head_recalibration(m, den, hidden, masks, labels_of(train_ex), sched, icfg, rts, rr);
        save_model(out_dir + "/model_recal", m, vocab);
        j["recal_losses"] = rlosses;
    }

    std::string hash_after = hash_file(model_dir(out_dir) + "/weights.bin");
    if (hash_before != hash_after)
        throw std::runtime_error("diffuse-train: frozen model checkpoint changed");
    j["model_hash_before"] = hash_before;
    j["model_hash_after"] = hash_after;
    write_json_file(denoiser_dir(out_dir) + "/train_log.json", j);
    std::cout << "diffuse-train: final loss " << losses.back() << ", model hash unchanged ("
              << sw.seconds() << " s)\n";
}

// ---- attack ----

// Attacker resources shared by attack, ablate, and sweep: validated synonym
// pools, the substitution table, constraints, and the similarity function,
// all derived from the deployed model's trained embeddings.
struct AttackerKit {
    SubstitutionTable table;
    AttackConstraints cons;
    SentenceSimilarityFn sim;
    int synonyms_dropped = 0;
};

template <typename S>
AttackerKit build_attacker_kit(const RunConfig& cfg, const std::string& data, const EncoderClassifier<S>& m,
                               const Vocab& vocab, const std::vector<Example>& test) {
    auto pools = SynonymPools::load(data + "/pools.json");
    AttackerKit kit;
    kit.synonyms_dropped = validate_pools(pools, vocab, m.tok_emb, test, cfg.attack.eps_min);
    kit.table = build_substitution_table(vocab, pools, m.tok_emb, cfg.attack.table_size);
    kit.cons = AttackConstraints{cfg.attack.rho_max, cfg.attack.eps_min, cfg.attack.k_max};
    const TensorT<S>* emb = &m.tok_emb;
    const Vocab* vp = &vocab;
    kit.sim = [emb, vp](const std::vector<std::string>& a, const std::vector<std::string>& b) {
        return embedding_similarity(a, b, *vp, *emb);
    };
    return kit;
}

inline void cmd_attack(const RunConfig& cfg, const std::string& out_dir) {
    auto [m, vocab] = load_model<PScalar>(model_dir(out_dir));
    auto [mb, vocab_b] = load_model<PScalar>(base_model_dir(out_dir));
    auto [den, spec] = load_denoiser<PScalar>(denoiser_dir(out_dir));
    check_artifacts(cfg, m.cfg, den.cfg, spec);
    check_base_model(m.cfg, mb.cfg);
    NoiseSchedule sched = linear_schedule(spec.T, spec.beta_start, spec.beta_end);
    const std::string data = data_root(cfg, out_dir);
    auto test = load_jsonl(data + "/test.jsonl");
    auto kit = build_attacker_kit(cfg, data, m, vocab, test);
    auto seeds = parse_u64_list(cfg.attack.seeds, "attack.seeds");
    auto names = parse_name_list(cfg.attack.attacks, "attack.attacks");
    InferenceConfig icfg = inference_from(cfg);
    icfg.validate(sched);

    auto base_factory = make_base_victim_factory(&mb, &vocab);
    auto def_factory =
        make_defended_victim_factory(&m, &den, &sched, icfg, &vocab, cfg.attack.resample_per_query);

    StopWatch sw;
    SuiteResult sr_base = run_attack_suite(base_factory, "base", test, cfg.attack.subset, names, kit.table,
                                           kit.cons, kit.sim, seeds, cfg.workers);
    std::cout << "attack: base suite done (" << sw.seconds() << " s)\n";
    SuiteResult sr_def = run_attack_suite(def_factory, "defended", test, cfg.attack.subset, names, kit.table,
                                          kit.cons, kit.sim, seeds, cfg.workers);
    std::cout << "attack: defended suite done (" << sw.seconds() << " s)\n";

    std::uint64_t eval_seed = mix_seed(cfg.seed, stream::kCleanEval);
    double clean_base = clean_accuracy(base_factory(), test, eval_seed);
    double clean_def = clean_accuracy(def_factory(), test, eval_seed);

    std::filesystem::create_directories(attacks_dir(out_dir));
    std::vector<AttackRecord> all = sr_base.records;
    all.insert(all.end(), sr_def.records.begin(), sr_def.records.end());
    save_records(attacks_dir(out_dir) + "/records.jsonl", all);

    nlohmann::ordered_json j;
    j["config"] = cfg.echo();
    j["attacks"] = names;
    j["synonyms_dropped"] = kit.synonyms_dropped;
    j["clean_accuracy"] = {{"base", clean_base}, {"defended", clean_def}};
    j["seed_summaries"] = {{"base", seed_summaries_json(sr_base)}, {"defended", seed_summaries_json(sr_def)}};
    write_json_file(attacks_dir(out_dir) + "/summary.json", j);
    std::cout << "attack: " << all.size() << " records, clean acc base " << clean_base << " defended "
              << clean_def << " (" << sw.seconds() << " s)\n";
}

// ---- eval ----

inline nlohmann::ordered_json histogram_json(const Histogram& h) {
    nlohmann::ordered_json j;
    j["lo"] = h.lo;
    j["hi"] = h.hi;
    j["counts"] = h.counts;
    j["total"] = h.total;
    j["tail_threshold"] = h.tail_threshold;
    j["tail_mass"] = h.tail_mass;
    return j;
}

inline nlohmann::ordered_json buckets_json(const std::vector<LengthBucket>& bs) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& b : bs) {
        nlohmann::ordered_json j;
        j["bucket"] = b.name;
        j["attacked"] = b.attacked;
        j["defended"] = b.defended;
        j["rate"] = b.rate();
        arr.push_back(j);
    }
    return arr;
}

// Equal-weight mean of per-attack AUA; query mean over all records.
inline nlohmann::ordered_json pooled_json(const std::vector<AttackAggregate>& aggs) {
    double aua = 0.0, qsum = 0.0;
    int attacked = 0, successes = 0;
    for (const auto& a : aggs) {
        aua += a.aua;
        qsum += a.mean_queries * a.attacked;
        attacked += a.attacked;
        successes += a.successes;
    }
    nlohmann::ordered_json j;
    j["aua"] = aggs.empty() ? 0.0 : aua / static_cast<double>(aggs.size());
    j["attacked"] = attacked;
    j["successes"] = successes;
    j["mean_queries"] = attacked > 0 ? qsum / attacked : 0.0;
    return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    f >> j;
    return j;
}

inline void cmd_eval(const RunConfig& cfg, const std::string& out_dir) {
    auto records = load_records(attacks_dir(out_dir) + "/records.jsonl");
    if (records.empty()) throw std::runtime_error("eval: no attack records in " + attacks_dir(out_dir));
    auto summary = read_json_file(attacks_dir(out_dir) + "/summary.json");
    auto [m, vocab] = load_model<PScalar>(model_dir(out_dir));
    auto [mb, vocab_b] = load_model<PScalar>(base_model_dir(out_dir));
    auto [den, spec] = load_denoiser<PScalar>(denoiser_dir(out_dir));
    check_artifacts(cfg, m.cfg, den.cfg, spec);
    check_base_model(m.cfg, mb.cfg);
    NoiseSchedule sched = linear_schedule(spec.T, spec.beta_start, spec.beta_end);
    InferenceConfig icfg = inference_from(cfg);
    icfg.validate(sched);
    auto names = parse_name_list(cfg.attack.attacks, "attack.attacks");

    std::vector<AttackRecord> recs_base, recs_def;
    for (const auto& r : records) {
        if (r.victim == "base")
            recs_base.push_back(r);
        else if (r.victim == "defended")
            recs_def.push_back(r);
        else
            throw std::runtime_error("eval: unknown victim '" + r.victim + "' in records");
    }
    SuiteResult s_base = rebuild_suite(recs_base, summary.at("seed_summaries").at("base"));
    SuiteResult s_def = rebuild_suite(recs_def, summary.at("seed_summaries").at("defended"));

    nlohmann::ordered_json aggs_j = nlohmann::ordered_json::array();
    std::vector<AttackAggregate> aggs_base, aggs_def;
    for (const auto& a : names) {
        aggs_base.push_back(aggregate_attack(s_base, "base", a));
        aggs_j.push_back(aggs_base.back().to_json());
    }
    for (const auto& a : names) {
        aggs_def.push_back(aggregate_attack(s_def, "defended", a));
        aggs_j.push_back(aggs_def.back().to_json());
    }

    DistanceStats ds = hidden_distance_stats(recs_base, mb, m, den, sched, icfg, vocab);
    Histogram h_base = max_importance_histogram(recs_base, cfg.eval.hist_bins, cfg.eval.hist_tail);
    Histogram h_def = max_importance_histogram(recs_def, cfg.eval.hist_bins, cfg.eval.hist_tail);
    auto edges = parse_int_list(cfg.eval.length_buckets, "eval.length_buckets");
    auto lb_base = defense_by_length(recs_base, edges);
    auto lb_def = defense_by_length(recs_def, edges);

    nlohmann::ordered_json rep;
    rep["config"] = cfg.echo();
    rep["clean_accuracy"] = summary.at("clean_accuracy");
    rep["synonyms_dropped"] = summary.at("synonyms_dropped");
    rep["aggregates"] = aggs_j;
    rep["overall"] = {{"base", pooled_json(aggs_base)}, {"defended", pooled_json(aggs_def)}};
    rep["distances"] = {{"pairs", ds.n},
                        {"l2_base", ds.l2_plain},
                        {"cos_base", ds.cos_plain},
                        {"l2_defended", ds.l2_denoised},
                        {"cos_defended", ds.cos_denoised}};
    rep["importance_hist"] = {{"base", histogram_json(h_base)}, {"defended", histogram_json(h_def)}};
    rep["defense_by_length"] = {{"base", buckets_json(lb_base)}, {"defended", buckets_json(lb_def)}};
    write_json_file(out_dir + "/report.json", rep);

    std::filesystem::create_directories(out_dir + "/curves");
    {
        std::vector<std::vector<std::string>> rows;
        int bins = static_cast<int>(h_base.counts.size());
        for (int b = 0; b < bins; ++b) {
            double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
            rows.push_back({format_double(lo), format_double(hi),
                            std::to_string(h_base.counts[static_cast<std::size_t>(b)]),
                            std::to_string(h_def.counts[static_cast<std::size_t>(b)])});
        }
        write_csv(out_dir + "/curves/importance_hist.csv", {"lo", "hi", "base", "defended"}, rows);
    }
    {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < lb_base.size(); ++i)
            rows.push_back({lb_base[i].name, std::to_string(lb_base[i].attacked), format_double(lb_base[i].rate()),
                            std::to_string(lb_def[i].attacked), format_double(lb_def[i].rate())});
        write_csv(out_dir + "/curves/defense_by_length.csv",
                  {"bucket", "base_attacked", "base_rate", "defended_attacked", "defended_rate"}, rows);
    }

    for (std::size_t i = 0; i < names.size(); ++i)
        std::cout << "eval: " << names[i] << " aua base " << aggs_base[i].aua << " defended "
                  << aggs_def[i].aua << ", mean queries base " << aggs_base[i].mean_queries << " defended "
                  << aggs_def[i].mean_queries << "\n";
    std::cout << "eval: wrote " << out_dir << "/report.json\n";
}

// ---- ablate ----

// Variant factories share one attacker kit so only the defense changes.
inline void cmd_ablate(const RunConfig& cfg, const std::string& out_dir) {
    auto [m, vocab] = load_model<PScalar>(model_dir(out_dir));
    auto [den, spec] = load_denoiser<PScalar>(denoiser_dir(out_dir));
    check_artifacts(cfg, m.cfg, den.cfg, spec);
    NoiseSchedule sched = linear_schedule(spec.T, spec.beta_start, spec.beta_end);
    const std::string data = data_root(cfg, out_dir);
    auto test = load_jsonl(data + "/test.jsonl");
    auto kit = build_attacker_kit(cfg, data, m, vocab, test);
    auto seeds = parse_u64_list(cfg.eval.ablate_seeds, "eval.ablate_seeds");
    auto names = parse_name_list(cfg.attack.attacks, "attack.attacks");
    int subset = cfg.eval.ablate_subset;
    InferenceConfig icfg = inference_from(cfg);
    icfg.validate(sched);
    InferenceConfig icfg_k1 = icfg;
    icfg_k1.k = 1;

    // the adversarial-training toggle reuses the clean-trained base encoder
    // and gives it its own denoiser, trained on that encoder's hiddens
    auto [cm, vocab_b] = load_model<PScalar>(base_model_dir(out_dir));
    check_base_model(m.cfg, cm.cfg);
    auto train_ex = load_jsonl(data + "/train.jsonl");
    auto seqs = tokenize_all(train_ex, vocab, m.cfg.max_len);
    std::vector<TensorT<PScalar>> hidden;
    std::vector<Mask> masks;
    encode_all(cm, seqs, hidden, masks);
    DiffusionDenoiser<PScalar> cden;
    cden.cfg = den.cfg;
    {
        Rng r(mix_seed(cfg.seed, stream::kAblateDenoiserInit));
        cden.init(r);
    }
    TrainSettings dts{cfg.diffusion.epochs, cfg.diffusion.batch, cfg.diffusion.lr};
    Rng drng(mix_seed(cfg.seed, stream::kAblateDiffusionTrain));
    StopWatch sw;
    train_denoiser(cden, hidden, masks, sched, dts, drng);
    std::filesystem::create_directories(out_dir + "/ablate");
    save_denoiser(out_dir + "/ablate/denoiser", cden, sched, spec.beta_start, spec.beta_end);
    std::cout << "ablate: clean-encoder denoiser trained (" << sw.seconds() << " s)\n";

    struct Variant {
        std::string name;
        VictimFactory factory;
    };
    std::vector<Variant> variants;
    variants.push_back({"full", make_defended_victim_factory(&m, &den, &sched, icfg, &vocab,
                                                             cfg.attack.resample_per_query)});
    variants.push_back({"no_ensemble", make_defended_victim_factory(&m, &den, &sched, icfg_k1, &vocab,
                                                                    cfg.attack.resample_per_query)});
    variants.push_back({"no_denoise", make_base_victim_factory(&m, &vocab)});
    variants.push_back({"no_adv", make_defended_victim_factory(&cm, &cden, &sched, icfg, &vocab,
                                                               cfg.attack.resample_per_query)});

    nlohmann::ordered_json vj;
    std::vector<AttackRecord> all_records;
    std::map<std::string, double> overall_aua;
    for (const auto& v : variants) {
        SuiteResult sr =
            run_attack_suite(v.factory, v.name, test, subset, names, kit.table, kit.cons, kit.sim, seeds, cfg.workers);
        std::vector<AttackAggregate> aggs;
        nlohmann::ordered_json aj = nlohmann::ordered_json::array();
        for (const auto& a : names) {
            aggs.push_back(aggregate_attack(sr, v.name, a));
            aj.push_back(aggs.back().to_json());
        }
        auto pooled = pooled_json(aggs);
        overall_aua[v.name] = pooled.at("aua").get<double>();
        nlohmann::ordered_json entry;
        entry["aggregates"] = aj;
        entry["overall"] = pooled;
        entry["seed_summaries"] = seed_summaries_json(sr);
        vj[v.name] = entry;
        all_records.insert(all_records.end(), sr.records.begin(), sr.records.end());
        std::cout << "ablate: " << v.name << " aua " << overall_aua[v.name] << " (" << sw.seconds()
                  << " s)\n";
    }

    nlohmann::ordered_json j;
    j["config"] = cfg.echo();
    j["subset"] = subset;
    j["seeds"] = seeds;
    j["attacks"] = names;
    j["variants"] = vj;
    j["drops"] = {{"no_ensemble", overall_aua["full"] - overall_aua["no_ensemble"]},
                  {"no_denoise", overall_aua["full"] - overall_aua["no_denoise"]},
                  {"no_adv", overall_aua["full"] - overall_aua["no_adv"]}};
    save_records(out_dir + "/ablate/records.jsonl", all_records);
    write_json_file(out_dir + "/ablate/summary.json", j);
    std::cout << "ablate: wrote " << out_dir << "/ablate/summary.json\n";
}

// ---- sweep ----

inline void cmd_sweep(const RunConfig& cfg, const std::string& out_dir) {
    auto [m, vocab] = load_model<PScalar>(model_dir(out_dir));
    auto [den, spec] = load_denoiser<PScalar>(denoiser_dir(out_dir));
    check_artifacts(cfg, m.cfg, den.cfg, spec);
    NoiseSchedule sched = linear_schedule(spec.T, spec.beta_start, spec.beta_end);
    const std::string data = data_root(cfg, out_dir);
    auto test = load_jsonl(data + "/test.jsonl");
    auto kit = build_attacker_kit(cfg, data, m, vocab, test);
    auto seeds = parse_u64_list(cfg.eval.sweep_seeds, "eval.sweep_seeds");
    auto names = parse_name_list(cfg.attack.attacks, "attack.attacks");
    auto tprimes = parse_int_list(cfg.eval.sweep_tprimes, "eval.sweep_tprimes");
    int subset = cfg.eval.sweep_subset;

    std::vector<int> ks{1};
    if (cfg.inference.k != 1) ks.push_back(cfg.inference.k);

    StopWatch sw;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    std::vector<std::vector<std::string>> csv;
    for (int k : ks) {
        for (int t : tprimes) {
            InferenceConfig icfg = inference_from(cfg);
            icfg.k = k;
            icfg.t_prime = t;
            icfg.validate(sched);
            std::string vname = "k" + std::to_string(k) + "_t" + std::to_string(t);
            auto factory =
                make_defended_victim_factory(&m, &den, &sched, icfg, &vocab, cfg.attack.resample_per_query);
            SuiteResult sr =
                run_attack_suite(factory, vname, test, subset, names, kit.table, kit.cons, kit.sim, seeds, cfg.workers);
            std::vector<AttackAggregate> aggs;
            nlohmann::ordered_json aj = nlohmann::ordered_json::array();
            for (const auto& a : names) {
                aggs.push_back(aggregate_attack(sr, vname, a));
                aj.push_back(aggs.back().to_json());
                csv.push_back({std::to_string(k), std::to_string(t), a, format_double(aggs.back().aua),
                               format_double(aggs.back().mean_queries)});
            }
            auto pooled = pooled_json(aggs);
            csv.push_back({std::to_string(k), std::to_string(t), "all",
                           format_double(pooled.at("aua").get<double>()),
                           format_double(pooled.at("mean_queries").get<double>())});
            nlohmann::ordered_json row;
            row["k"] = k;
            row["t_prime"] = t;
            row["aggregates"] = aj;
            row["overall"] = pooled;
            row["seed_summaries"] = seed_summaries_json(sr);
            rows.push_back(row);
            std::cout << "sweep: " << vname << " aua " << pooled.at("aua").get<double>() << " ("
                      << sw.seconds() << " s)\n";
        }
    }

    std::filesystem::create_directories(out_dir + "/sweep");
    nlohmann::ordered_json j;
    j["config"] = cfg.echo();
    j["subset"] = subset;
    j["seeds"] = seeds;
    j["rows"] = rows;
    write_json_file(out_dir + "/sweep/summary.json", j);
    write_csv(out_dir + "/sweep/curve.csv", {"k", "t_prime", "attack", "aua", "mean_queries"}, csv);
    std::cout << "sweep: wrote " << out_dir << "/sweep/curve.csv\n";
}

}  // namespace diffshield::commands
