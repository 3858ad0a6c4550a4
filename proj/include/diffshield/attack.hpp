// Black-box word-substitution attacks and the harness that runs them against
// a victim. A victim is just a probability function; attacks see nothing
// else, so query accounting lives entirely in the greedy loop.
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffshield/dataset.hpp"
#include "diffshield/diffusion.hpp"
#include "diffshield/model.hpp"
#include "diffshield/util.hpp"

namespace diffshield {

// (words, seed) -> class probabilities. The seed pins any stochastic parts of
// the victim; attacks pass a fixed per-example seed.
using VictimFn = std::function<std::vector<double>(const std::vector<std::string>&, std::uint64_t)>;
using VictimFactory = std::function<VictimFn()>;

template <typename S>
VictimFactory make_base_victim_factory(const EncoderClassifier<S>* m, const Vocab* vocab) {
    return [m, vocab]() -> VictimFn {
        auto fw = std::make_shared<ModelFwd<S>>();
        return [m, vocab, fw](const std::vector<std::string>& words, std::uint64_t) {
            TokenSequence seq = tokenize(words, *vocab, m->cfg.max_len);
            forward_logits<S>(*m, seq, nullptr, false, nullptr, *fw);
            softmax_rows(fw->logits, fw->probs);
            std::vector<double> out(fw->probs.data.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(fw->probs.data[i]);
            return out;
        };
    };
}

// Defended victim: encode, run the ensembled reverse diffusion, classify the
// averaged states. Noise is a fixed function of the per-example seed; with
// resample_per_query every call under the same seed advances a query counter.
template <typename S>
VictimFactory make_defended_victim_factory(const EncoderClassifier<S>* m, const DiffusionDenoiser<S>* den,
                                           const NoiseSchedule* sched, InferenceConfig icfg, const Vocab* vocab,
                                           bool resample_per_query) {
    return [=]() -> VictimFn {
        struct State {
            ModelFwd<S> fw;
            EnsembleScratch<S> sc;
            std::vector<TensorT<S>> time_table;
            std::map<std::uint64_t, std::uint64_t> counters;
        };
        auto st = std::make_shared<State>();
        st->time_table = build_time_table(*den, *sched);
        return [=](const std::vector<std::string>& words, std::uint64_t seed) {
            TokenSequence seq = tokenize(words, *vocab, m->cfg.max_len);
            forward_logits<S>(*m, seq, nullptr, false, nullptr, st->fw);
            std::uint64_t s = seed;
            if (resample_per_query) s = mix_seed(seed, st->counters[seed]++);
            Rng rng(s);
            const TensorT<S>& h_avg =
                denoise_ensemble(st->fw.h, seq.mask, *den, *sched, icfg, rng, st->sc, &st->time_table);
            return classify_hidden(*m, h_avg, seq.mask);
        };
    };
}

// Cosine similarity between mean-pooled token embeddings of two sentences.
template <typename S>
double embedding_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b,
                            const Vocab& vocab, const TensorT<S>& tok_emb) {
    if (a.empty() || b.empty()) throw std::invalid_argument("similarity: empty sentence");
    int d = tok_emb.cols();
    std::vector<double> ma(static_cast<std::size_t>(d), 0.0), mb(static_cast<std::size_t>(d), 0.0);
    auto accumulate = [&](const std::vector<std::string>& words, std::vector<double>& out) {
        for (const auto& w : words) {
            const S* e = tok_emb.row(vocab.lookup(w));
            for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += static_cast<double>(e[j]);
        }
        for (auto& v : out) v /= static_cast<double>(words.size());
    };
    accumulate(a, ma);
    accumulate(b, mb);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int j = 0; j < d; ++j) {
        dot += ma[static_cast<std::size_t>(j)] * mb[static_cast<std::size_t>(j)];
        na += ma[static_cast<std::size_t>(j)] * ma[static_cast<std::size_t>(j)];
        nb += mb[static_cast<std::size_t>(j)] * mb[static_cast<std::size_t>(j)];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct AttackConstraints {
    double rho_max = 0.3;
    double eps_min = 0.84;
    int k_max = 50;
    int q_max(int length) const { return k_max * length; }
};

struct SubstitutionTable {
    std::map<std::string, std::vector<std::string>> cands;

    const std::vector<std::string>& lookup(const std::string& w) const {
        static const std::vector<std::string> empty;
        auto it = cands.find(w);
        return it == cands.end() ? empty : it->second;
    }
};

// Candidate lists: curated synonyms first, then nearest vocabulary words by
// trained-embedding cosine, capped at table_size (<= the per-word query cap).
template <typename S>
SubstitutionTable build_substitution_table(const Vocab& vocab, const SynonymPools& pools,
                                           const TensorT<S>& tok_emb, int table_size) {
    SubstitutionTable table;
    int V = vocab.size();
    int d = tok_emb.cols();
    std::vector<double> norms(static_cast<std::size_t>(V), 0.0);
    for (int v = 2; v < V; ++v) {
        const S* e = tok_emb.row(v);
        double n = 0.0;
        for (int j = 0; j < d; ++j) n += static_cast<double>(e[j]) * static_cast<double>(e[j]);
        norms[static_cast<std::size_t>(v)] = std::sqrt(n);
    }
    for (int w = 2; w < V; ++w) {
        const std::string& word = vocab.id_to_token[static_cast<std::size_t>(w)];
        std::vector<std::string> list;
        auto seen = [&](const std::string& s) {
            return s == word || std::find(list.begin(), list.end(), s) != list.end();
        };
        auto syn = pools.syn.find(word);
        if (syn != pools.syn.end())
            for (const auto& s : syn->second)
                if (!seen(s) && static_cast<int>(list.size()) < table_size) list.push_back(s);
        std::vector<std::pair<double, int>> scored;
        const S* ew = tok_emb.row(w);
        for (int v = 2; v < V; ++v) {
            if (v == w) continue;
            double dot = 0.0;
            const S* ev = tok_emb.row(v);
            for (int j = 0; j < d; ++j) dot += static_cast<double>(ew[j]) * static_cast<double>(ev[j]);
            double den = norms[static_cast<std::size_t>(w)] * norms[static_cast<std::size_t>(v)];
            scored.emplace_back(den > 0.0 ? dot / den : -2.0, v);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        for (const auto& [sim, v] : scored) {
            (void)sim;
            if (static_cast<int>(list.size()) >= table_size) break;
            const std::string& s = vocab.id_to_token[static_cast<std::size_t>(v)];
            if (!seen(s)) list.push_back(s);
        }
        table.cands[word] = std::move(list);
    }
    return table;
}

// Drops curated synonyms that break the sentence-similarity constraint on any
// test sentence containing the keyword. Returns the number dropped.
template <typename S>
int validate_pools(SynonymPools& pools, const Vocab& vocab, const TensorT<S>& tok_emb,
                   const std::vector<Example>& test, double eps_min) {
    int dropped = 0;
    std::vector<std::vector<std::string>> sentences;
    sentences.reserve(test.size());
    for (const auto& ex : test) sentences.push_back(split_words(ex.text));
    for (auto& [word, syns] : pools.syn) {
        std::vector<std::string> kept;
        for (const auto& s : syns) {
            bool ok = true;
            for (const auto& words : sentences) {
                auto it = std::find(words.begin(), words.end(), word);
                if (it == words.end()) continue;
                std::vector<std::string> sub = words;
                sub[static_cast<std::size_t>(it - words.begin())] = s;
                if (embedding_similarity(words, sub, vocab, tok_emb) < eps_min) {
                    ok = false;
                    break;
                }
            }
            if (ok)
                kept.push_back(s);
            else
                ++dropped;
        }
        syns = std::move(kept);
    }
    return dropped;
}

struct AttackRecord {
    int example_index = -1;
    std::string attack;      // "word" or "char"
    std::string victim;      // "base" or "defended"
    std::uint64_t seed = 0;  // harness seed, not the derived per-example seed
    int label = -1;
    int pred_orig = -1;
    bool success = false;
    int queries = 0;
    double perturbed_ratio = 0.0;
    double similarity = 1.0;  // final sentence vs original
    int length = 0;
    std::string original;
    std::string adversarial;  // empty unless success
    std::vector<double> importance;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["example_index"] = example_index;
        j["attack"] = attack;
        j["victim"] = victim;
        j["seed"] = seed;
        j["label"] = label;
        j["pred_orig"] = pred_orig;
        j["success"] = success;
        j["queries"] = queries;
        j["perturbed_ratio"] = perturbed_ratio;
        j["similarity"] = similarity;
        j["length"] = length;
        j["original"] = original;
        if (success)
            j["adversarial"] = adversarial;
        else
            j["adversarial"] = nullptr;
        j["importance"] = importance;
        return j;
    }

    static AttackRecord from_json(const nlohmann::json& j) {
        AttackRecord r;
        r.example_index = j.at("example_index").get<int>();
        r.attack = j.at("attack").get<std::string>();
        r.victim = j.at("victim").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.label = j.at("label").get<int>();
        r.pred_orig = j.at("pred_orig").get<int>();
        r.success = j.at("success").get<bool>();
        r.queries = j.at("queries").get<int>();
        r.perturbed_ratio = j.at("perturbed_ratio").get<double>();
        r.similarity = j.at("similarity").get<double>();
        r.length = j.at("length").get<int>();
        r.original = j.at("original").get<std::string>();
        if (!j.at("adversarial").is_null()) r.adversarial = j.at("adversarial").get<std::string>();
        r.importance = j.at("importance").get<std::vector<double>>();
        return r;
    }
};

// position -> substitution candidates for the word at that position
using CandidateFn = std::function<std::vector<std::string>(int)>;
// trial sentence -> similarity to the original
using SimilarityFn = std::function<double(const std::vector<std::string>&)>;

// Greedy search: rank words by the gold-probability drop under deletion, then
// try candidates per word in rank order. A probe that flips the prediction
// ends the attack; otherwise the candidate lowering the gold probability most
// is committed. Every victim call counts as one query, the baseline and
// ranking passes included; hitting q_max or the substitution budget fails.
inline AttackRecord greedy_attack(const VictimFn& victim, const std::vector<std::string>& words, int label,
                                  const CandidateFn& cand_fn, const AttackConstraints& cons,
                                  const SimilarityFn& sim_fn, std::uint64_t victim_seed,
                                  const char* attack_name) {
    AttackRecord rec;
    rec.attack = attack_name;
    rec.label = label;
    rec.length = static_cast<int>(words.size());
    rec.original = join_words(words);
    const int L = rec.length;
    const int q_max = cons.q_max(L);
    int q = 0;
    auto query = [&](const std::vector<std::string>& w, std::vector<double>& out) {
        if (q >= q_max) return false;
        out = victim(w, victim_seed);
        ++q;
        return true;
    };

    std::vector<double> p0;
    if (!query(words, p0)) {
        rec.queries = q;
        return rec;
    }
    rec.pred_orig = argmax(p0);
    double p_gold = p0[static_cast<std::size_t>(label)];

    rec.importance.assign(static_cast<std::size_t>(L), 0.0);
    for (int i = 0; i < L; ++i) {
        std::vector<std::string> variant = words;
        if (L > 1)
            variant.erase(variant.begin() + i);
        else
            variant[0] = "<unk>";
        std::vector<double> pv;
        if (!query(variant, pv)) {
            rec.queries = q;
            return rec;
        }
        rec.importance[static_cast<std::size_t>(i)] = p_gold - pv[static_cast<std::size_t>(label)];
    }

    std::vector<int> order(static_cast<std::size_t>(L));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return rec.importance[static_cast<std::size_t>(a)] > rec.importance[static_cast<std::size_t>(b)];
    });

    const int allowed = static_cast<int>(cons.rho_max * L + 1e-9);
    std::vector<std::string> cur = words;
    int subs = 0;
    double cur_p = p_gold;
    for (int pos : order) {
        if (subs >= allowed) break;
        std::vector<std::string> cands = cand_fn(pos);
        double best_p = cur_p;
        std::string best;
        for (const auto& c : cands) {
            if (c == words[static_cast<std::size_t>(pos)]) continue;
            std::vector<std::string> trial = cur;
            trial[static_cast<std::size_t>(pos)] = c;
            if (sim_fn(trial) < cons.eps_min) continue;  // rejected without spending a query
            std::vector<double> pt;
            if (!query(trial, pt)) {
                rec.queries = q;
                rec.perturbed_ratio = static_cast<double>(subs) / L;
                rec.similarity = sim_fn(cur);
                return rec;
            }
            if (argmax(pt) != label) {
                rec.success = true;
                rec.adversarial = join_words(trial);
                rec.queries = q;
                rec.perturbed_ratio = static_cast<double>(subs + 1) / L;
                rec.similarity = sim_fn(trial);
                return rec;
            }
            if (pt[static_cast<std::size_t>(label)] < best_p) {
                best_p = pt[static_cast<std::size_t>(label)];
                best = c;
            }
        }
        if (!best.empty()) {
            cur[static_cast<std::size_t>(pos)] = best;
            ++subs;
            cur_p = best_p;
        }
    }
    rec.queries = q;
    rec.perturbed_ratio = static_cast<double>(subs) / L;
    rec.similarity = sim_fn(cur);
    return rec;
}

namespace detail_attack {

inline const std::string& keyboard_neighbors(char c) {
    static const std::map<char, std::string> kb = {
        {'a', "qwsz"}, {'b', "vghn"}, {'c', "xdfv"}, {'d', "serfcx"}, {'e', "wsdr"},  {'f', "drtgvc"},
        {'g', "ftyhbv"}, {'h', "gyujnb"}, {'i', "ujko"}, {'j', "huikmn"}, {'k', "jiolm"}, {'l', "kop"},
        {'m', "njk"},  {'n', "bhjm"}, {'o', "iklp"}, {'p', "ol"},     {'q', "wa"},    {'r', "edft"},
        {'s', "awedxz"}, {'t', "rfgy"}, {'u', "yhji"}, {'v', "cfgb"},  {'w', "qase"},  {'x', "zsdc"},
        {'y', "tghu"}, {'z', "asx"},
    };
    static const std::string none;
    auto it = kb.find(c);
    return it == kb.end() ? none : it->second;
}

}  // namespace detail_attack

// Character-level corruptions of one word: adjacent swaps, single deletions,
// single duplications, keyboard-neighbor substitutions (one neighbor drawn
// per position). Deduplicated, capped at cap.
inline std::vector<std::string> char_candidates(const std::string& word, Rng& rng, int cap) {
    std::vector<std::string> out;
    auto push = [&](std::string s) {
        if (s.empty() || s == word) return;
        if (std::find(out.begin(), out.end(), s) != out.end()) return;
        if (static_cast<int>(out.size()) < cap) out.push_back(std::move(s));
    };
    int n = static_cast<int>(word.size());
    for (int i = 0; i + 1 < n; ++i) {
        std::string s = word;
        std::swap(s[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(i + 1)]);
        push(std::move(s));
    }
    for (int i = 0; i < n; ++i) {
        std::string s = word;
        s.erase(static_cast<std::size_t>(i), 1);
        push(std::move(s));
    }
    for (int i = 0; i < n; ++i) {
        std::string s = word;
        s.insert(s.begin() + i, word[static_cast<std::size_t>(i)]);
        push(std::move(s));
    }
    for (int i = 0; i < n; ++i) {
        const std::string& nb = detail_attack::keyboard_neighbors(word[static_cast<std::size_t>(i)]);
        if (nb.empty()) continue;
        std::string s = word;
        s[static_cast<std::size_t>(i)] = nb[rng.uniform_int(nb.size())];
        push(std::move(s));
    }
    return out;
}

struct SeedSummary {
    std::uint64_t seed = 0;
    int subset = 0;
    int initially_correct = 0;
};

struct SuiteResult {
    std::vector<AttackRecord> records;
    std::vector<SeedSummary> seeds;
};

// (original, trial) -> similarity
using SentenceSimilarityFn = std::function<double(const std::vector<std::string>&, const std::vector<std::string>&)>;

// Attacks the first `subset` test examples under every harness seed. The
// per-example victim seed is mix_seed(harness_seed, example_index); examples
// the victim already misclassifies are skipped (they still count in the seed
// summary). Each attack runs with its own full query accounting.
inline SuiteResult run_attack_suite(const VictimFactory& factory, const std::string& victim_name,
                                    const std::vector<Example>& test, int subset,
                                    const std::vector<std::string>& attack_names,
                                    const SubstitutionTable& table, const AttackConstraints& cons,
                                    const SentenceSimilarityFn& sim, const std::vector<std::uint64_t>& seeds,
                                    int workers) {
    int n = std::min<int>(subset, static_cast<int>(test.size()));
    std::size_t tasks = seeds.size() * static_cast<std::size_t>(n);
    std::vector<std::vector<AttackRecord>> slots(tasks);
    std::vector<std::uint8_t> correct(tasks, 0);

    parallel_for(tasks, workers, [&](std::size_t tid) {
        std::size_t si = tid / static_cast<std::size_t>(n);
        int idx = static_cast<int>(tid % static_cast<std::size_t>(n));
        std::uint64_t harness_seed = seeds[si];
        std::uint64_t vseed = mix_seed(harness_seed, static_cast<std::uint64_t>(idx));
        VictimFn victim = factory();
        std::vector<std::string> words = split_words(test[static_cast<std::size_t>(idx)].text);
        int label = test[static_cast<std::size_t>(idx)].label;
        std::vector<double> p0 = victim(words, vseed);
        if (argmax(p0) != label) return;  // not attacked
        correct[tid] = 1;
        for (const auto& name : attack_names) {
            AttackRecord rec;
            if (name == "word") {
                CandidateFn cf = [&](int pos) { return table.lookup(words[static_cast<std::size_t>(pos)]); };
                rec = greedy_attack(victim, words, label, cf, cons,
                                    [&](const std::vector<std::string>& t) { return sim(words, t); }, vseed, "word");
            } else if (name == "char") {
                CandidateFn cf = [&](int pos) {
                    Rng crng(mix_seed(vseed ^ 0x63686172ULL, static_cast<std::uint64_t>(pos)));
                    return char_candidates(words[static_cast<std::size_t>(pos)], crng, cons.k_max);
                };
                rec = greedy_attack(victim, words, label, cf, cons,
                                    [&](const std::vector<std::string>& t) { return sim(words, t); }, vseed, "char");
            } else {
                throw std::invalid_argument("attack: unknown attack '" + name + "'");
            }
            rec.example_index = idx;
            rec.victim = victim_name;
            rec.seed = harness_seed;
            slots[tid].push_back(std::move(rec));
        }
    });

    SuiteResult res;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        SeedSummary ss;
        ss.seed = seeds[si];
        ss.subset = n;
        for (int idx = 0; idx < n; ++idx) {
            std::size_t tid = si * static_cast<std::size_t>(n) + static_cast<std::size_t>(idx);
            ss.initially_correct += correct[tid];
            for (auto& r : slots[tid]) res.records.push_back(std::move(r));
        }
        res.seeds.push_back(ss);
    }
    return res;
}

inline void save_records(const std::string& path, const std::vector<AttackRecord>& records) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("attack: cannot write " + path);
    for (const auto& r : records) f << r.to_json().dump() << "\n";
}

inline std::vector<AttackRecord> load_records(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("attack: cannot read " + path);
    std::vector<AttackRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(AttackRecord::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
        }
    }
    return out;
}

}  // namespace diffshield
