// Metrics over attack records plus the hidden-state diagnostics. Aggregation
// is done in double and serialized with shortest round-trip formatting so
// repeated runs produce byte-identical files.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffshield/attack.hpp"
#include "diffshield/util.hpp"

namespace diffshield {

// Full-test-set accuracy of a victim; per-example seeds derive from eval_seed.
inline double clean_accuracy(const VictimFn& victim, const std::vector<Example>& test, std::uint64_t eval_seed) {
    int correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::vector<double> p = victim(split_words(test[i].text), mix_seed(eval_seed, i));
        if (argmax(p) == test[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct AttackAggregate {
    std::string victim, attack;
    int attacked = 0;  // summed over seeds
    int successes = 0;
    // AUA: fraction of attacked examples the attacker failed on, mean over
    // seeds. aua_subset additionally counts initially-wrong examples as
    // losses, so aua_subset <= clean accuracy on the subset.
    double aua = 0.0;
    double aua_subset = 0.0;
    double mean_queries = 0.0;          // over all attacked examples
    double mean_queries_success = 0.0;  // over successful attacks only
    std::vector<double> aua_per_seed;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["victim"] = victim;
        j["attack"] = attack;
        j["attacked"] = attacked;
        j["successes"] = successes;
        j["aua"] = aua;
        j["aua_subset"] = aua_subset;
        j["mean_queries"] = mean_queries;
        j["mean_queries_success"] = mean_queries_success;
        j["aua_per_seed"] = aua_per_seed;
        return j;
    }
};

inline AttackAggregate aggregate_attack(const SuiteResult& suite, const std::string& victim,
                                        const std::string& attack) {
    AttackAggregate agg;
    agg.victim = victim;
    agg.attack = attack;
    double qsum = 0.0, qsum_succ = 0.0;
    double aua_sum = 0.0, subset_sum = 0.0;
    for (const auto& ss : suite.seeds) {
        int succ = 0, attacked = 0;
        for (const auto& r : suite.records) {
            if (r.seed != ss.seed || r.attack != attack || r.victim != victim) continue;
            ++attacked;
            qsum += r.queries;
            if (r.success) {
                ++succ;
                qsum_succ += r.queries;
            }
        }
        if (attacked != ss.initially_correct)
            throw std::runtime_error("eval: record count does not match seed summary");
        agg.attacked += attacked;
        agg.successes += succ;
        double aua = attacked > 0 ? static_cast<double>(attacked - succ) / attacked : 1.0;
        agg.aua_per_seed.push_back(aua);
        aua_sum += aua;
        subset_sum += static_cast<double>(ss.initially_correct - succ) / static_cast<double>(ss.subset);
    }
    std::size_t ns = suite.seeds.size();
    agg.aua = aua_sum / static_cast<double>(ns);
    agg.aua_subset = subset_sum / static_cast<double>(ns);
    agg.mean_queries = agg.attacked > 0 ? qsum / agg.attacked : 0.0;
    agg.mean_queries_success = agg.successes > 0 ? qsum_succ / agg.successes : 0.0;
    return agg;
}

// Aggregate from flat records when no SuiteResult is at hand (eval command
// reads records back from disk). Seed summaries travel in the suite json.
inline SuiteResult rebuild_suite(const std::vector<AttackRecord>& records, const nlohmann::json& seed_summaries) {
    SuiteResult s;
    s.records = records;
    for (const auto& j : seed_summaries) {
        SeedSummary ss;
        ss.seed = j.at("seed").get<std::uint64_t>();
        ss.subset = j.at("subset").get<int>();
        ss.initially_correct = j.at("initially_correct").get<int>();
        s.seeds.push_back(ss);
    }
    return s;
}

inline nlohmann::ordered_json seed_summaries_json(const SuiteResult& s) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& ss : s.seeds) {
        nlohmann::ordered_json j;
        j["seed"] = ss.seed;
        j["subset"] = ss.subset;
        j["initially_correct"] = ss.initially_correct;
        arr.push_back(j);
    }
    return arr;
}

struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<int> counts;
    int total = 0;
    double tail_mass = 0.0;  // fraction strictly above the tail threshold
    double tail_threshold = 0.5;
};

// Distribution of per-record max word-importance, clamped to [0,1].
inline Histogram max_importance_histogram(const std::vector<AttackRecord>& records, int bins,
                                          double tail_threshold) {
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    h.tail_threshold = tail_threshold;
    int above = 0;
    for (const auto& r : records) {
        if (r.importance.empty()) continue;
        double mx = *std::max_element(r.importance.begin(), r.importance.end());
        double v = std::clamp(mx, 0.0, 1.0);
        int b = std::min(bins - 1, static_cast<int>(v * bins));
        h.counts[static_cast<std::size_t>(b)] += 1;
        h.total += 1;
        if (mx > tail_threshold) ++above;
    }
    h.tail_mass = h.total > 0 ? static_cast<double>(above) / h.total : 0.0;
    return h;
}

// Defense rate bucketed by sentence length. Edges are inclusive upper bounds;
// lengths past the last edge go into a final open bucket.
struct LengthBucket {
    std::string name;
    int attacked = 0, defended = 0;
    double rate() const { return attacked > 0 ? static_cast<double>(defended) / attacked : 0.0; }
};

inline std::vector<LengthBucket> defense_by_length(const std::vector<AttackRecord>& records,
                                                   const std::vector<int>& edges) {
    std::vector<LengthBucket> buckets;
    int prev = 0;
    for (int e : edges) {
        buckets.push_back({"<=" + std::to_string(e), 0, 0});
        prev = e;
    }
    buckets.push_back({">" + std::to_string(prev), 0, 0});
    for (const auto& r : records) {
        std::size_t b = edges.size();
        for (std::size_t i = 0; i < edges.size(); ++i)
            if (r.length <= edges[i]) {
                b = i;
                break;
            }
        buckets[b].attacked += 1;
        if (!r.success) buckets[b].defended += 1;
    }
    return buckets;
}

// Pooled-hidden-state distances between clean and adversarial sentences, with
// and without the denoising pass, over successful attacks. The denoising seed
// per record matches what the defended victim would use.
struct DistanceStats {
    int n = 0;
    double l2_plain = 0.0, cos_plain = 0.0;
    double l2_denoised = 0.0, cos_denoised = 0.0;
};

template <typename S>
DistanceStats hidden_distance_stats(const std::vector<AttackRecord>& records,
                                    const EncoderClassifier<S>& base_m, const EncoderClassifier<S>& def_m,
                                    const DiffusionDenoiser<S>& den, const NoiseSchedule& sched,
                                    const InferenceConfig& icfg, const Vocab& vocab) {
    DistanceStats st;
    ModelFwd<S> fw;
    EnsembleScratch<S> sc;
    auto time_table = build_time_table(den, sched);
    auto pooled = [&](const TensorT<S>& h, const Mask& mask) {
        TensorT<S> p = EncoderClassifier<S>::pool(h, mask);
        std::vector<double> v(p.data.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(p.data[i]);
        return v;
    };
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b, double& l2, double& cosd) {
        double d2 = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            double d = a[i] - b[i];
            d2 += d * d;
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        l2 = std::sqrt(d2);
        cosd = (na > 0 && nb > 0) ? 1.0 - dot / (std::sqrt(na) * std::sqrt(nb)) : 1.0;
    };
    for (const auto& r : records) {
        if (!r.success) continue;
        TokenSequence sc_ = tokenize(r.original, vocab, base_m.cfg.max_len);
        TokenSequence sa = tokenize(r.adversarial, vocab, base_m.cfg.max_len);
        auto pc = pooled(encode(base_m, sc_), sc_.mask);
        auto pa = pooled(encode(base_m, sa), sa.mask);
        double l2, cosd;
        dist(pc, pa, l2, cosd);
        st.l2_plain += l2;
        st.cos_plain += cosd;
        TensorT<S> h_c = encode(def_m, sc_);
        TensorT<S> h_a = encode(def_m, sa);
        std::uint64_t vseed = mix_seed(r.seed, static_cast<std::uint64_t>(r.example_index));
        Rng rng_c(vseed);
        TensorT<S> d_c = denoise_ensemble(h_c, sc_.mask, den, sched, icfg, rng_c, sc, &time_table);
        Rng rng_a(vseed);
        TensorT<S> d_a = denoise_ensemble(h_a, sa.mask, den, sched, icfg, rng_a, sc, &time_table);
        auto qc = pooled(d_c, sc_.mask);
        auto qa = pooled(d_a, sa.mask);
        dist(qc, qa, l2, cosd);
        st.l2_denoised += l2;
        st.cos_denoised += cosd;
        st.n += 1;
    }
    if (st.n > 0) {
        st.l2_plain /= st.n;
        st.cos_plain /= st.n;
        st.l2_denoised /= st.n;
        st.cos_denoised /= st.n;
    }
    return st;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("eval: cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
    f << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
        f << "\n";
    }
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("eval: cannot write " + path);
    f << j.dump(2) << "\n";
}

}  // namespace diffshield
