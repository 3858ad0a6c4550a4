// Synthetic topic-classification corpus. Each sentence is a bag of filler
// words plus 1-3 class keywords; synonyms are held out of training so their
// embeddings stay near initialization. Keyword, synonym, and filler lists are
// mutually disjoint (checked at generation time).
#pragma once

#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffshield/rng.hpp"
#include "diffshield/vocab.hpp"

namespace diffshield {

struct Example {
    std::string text;
    int label = 0;
};

inline void save_jsonl(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot write " + path);
    for (const auto& ex : examples) {
        nlohmann::ordered_json j;
        j["text"] = ex.text;
        j["label"] = ex.label;
        f << j.dump() << "\n";
    }
}

inline std::vector<Example> load_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dataset: cannot read " + path);
    std::vector<Example> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad json: " + e.what());
        }
        if (!j.contains("text") || !j.contains("label") || !j["text"].is_string() || !j["label"].is_number_integer())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected {\"text\": str, \"label\": int}");
        out.push_back(Example{j["text"].get<std::string>(), j["label"].get<int>()});
    }
    return out;
}

struct SynonymPools {
    // keyword -> synonyms, in preference order
    std::map<std::string, std::vector<std::string>> syn;

    void save(const std::string& path) const {
        nlohmann::ordered_json j;
        for (const auto& [w, s] : syn) j[w] = s;
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("pools: cannot write " + path);
        f << j.dump(2) << "\n";
    }

    static SynonymPools load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("pools: cannot read " + path);
        nlohmann::json j;
        f >> j;
        SynonymPools p;
        for (auto it = j.begin(); it != j.end(); ++it)
            p.syn[it.key()] = it.value().get<std::vector<std::string>>();
        return p;
    }
};

namespace wordlists {

inline const std::vector<std::vector<std::string>>& keywords() {
    static const std::vector<std::vector<std::string>> k = {
        {"tournament", "athlete", "stadium", "coach", "referee", "championship", "league", "soccer", "marathon", "goalkeeper"},
        {"investor", "stock", "profit", "merger", "inflation", "shares", "dividend", "banker", "startup", "revenue"},
        {"laboratory", "physicist", "molecule", "telescope", "experiment", "quantum", "genome", "neuron", "fossil", "asteroid"},
        {"recipe", "oven", "chef", "garlic", "dessert", "bakery", "sauce", "roasted", "kitchen", "flavor"},
    };
    return k;
}

inline const std::map<std::string, std::vector<std::string>>& synonyms() {
    static const std::map<std::string, std::vector<std::string>> s = {
        {"tournament", {"tourney", "cup", "playoff"}},
        {"athlete", {"sportsman", "runner", "competitor"}},
        {"stadium", {"arena", "ballpark", "grandstand"}},
        {"coach", {"trainer", "instructor", "gaffer"}},
        {"referee", {"umpire", "arbiter", "linesman"}},
        {"championship", {"title", "crown", "pennant"}},
        {"league", {"division", "conference", "circuit"}},
        {"soccer", {"football", "futsal", "footy"}},
        {"marathon", {"ultramarathon", "footrace", "relay"}},
        {"goalkeeper", {"keeper", "netminder", "goalie"}},
        {"investor", {"shareholder", "financier", "backer"}},
        {"stock", {"equity", "security", "holding"}},
        {"profit", {"earnings", "gain", "surplus"}},
        {"merger", {"acquisition", "takeover", "buyout"}},
        {"inflation", {"stagflation", "hyperinflation", "devaluation"}},
        {"shares", {"stakes", "certificates", "holdings"}},
        {"dividend", {"payout", "yield", "distribution"}},
        {"banker", {"lender", "broker", "underwriter"}},
        {"startup", {"venture", "enterprise", "firm"}},
        {"revenue", {"income", "turnover", "proceeds"}},
        {"laboratory", {"lab", "facility", "workshop"}},
        {"physicist", {"scientist", "researcher", "theorist"}},
        {"molecule", {"compound", "particle", "atom"}},
        {"telescope", {"observatory", "reflector", "refractor"}},
        {"experiment", {"trial", "study", "assay"}},
        {"quantum", {"subatomic", "photonic", "atomic"}},
        {"genome", {"dna", "chromosome", "gene"}},
        {"neuron", {"synapse", "axon", "dendrite"}},
        {"fossil", {"relic", "bone", "specimen"}},
        {"asteroid", {"comet", "meteor", "meteorite"}},
        {"recipe", {"dish", "preparation", "concoction"}},
        {"oven", {"stove", "grill", "broiler"}},
        {"chef", {"cook", "baker", "saucier"}},
        {"garlic", {"onion", "shallot", "ginger"}},
        {"dessert", {"pudding", "pastry", "sweets"}},
        {"bakery", {"patisserie", "bakehouse", "deli"}},
        {"sauce", {"gravy", "dressing", "marinade"}},
        {"roasted", {"baked", "seared", "braised"}},
        {"kitchen", {"pantry", "galley", "scullery"}},
        {"flavor", {"taste", "aroma", "seasoning"}},
    };
    return s;
}

inline const std::vector<std::string>& fillers() {
    static const std::vector<std::string> f = {
        "the", "a", "an", "was", "is", "were", "are", "been", "quite", "very", "really", "rather",
        "today", "yesterday", "recently", "people", "thing", "time", "day", "week", "month", "group",
        "part", "case", "point", "number", "area", "while", "still", "just", "about", "after",
        "before", "during", "under", "over", "other", "some", "many", "most", "new", "old", "early",
        "late", "local",
    };
    return f;
}

}  // namespace wordlists

struct GeneratorConfig {
    int classes = 4;
    int train_n = 2000;
    int valid_n = 250;
    int test_n = 250;
    int len_min = 8;
    int len_max = 13;
    // probabilities of 1, 2, 3 keywords per sentence
    double kw1 = 0.55, kw2 = 0.30, kw3 = 0.15;
    // chance that a keyword slot past the first carries a synonym instead;
    // every sentence keeps at least one true keyword
    double syn_leak = 0.0;
};

struct Corpus {
    std::vector<Example> train, valid, test;
    SynonymPools pools;
    std::vector<std::string> vocab_words;  // keywords + synonyms + fillers
};

inline Corpus generate_corpus(const GeneratorConfig& gc, std::uint64_t seed) {
    const auto& kw = wordlists::keywords();
    const auto& syn = wordlists::synonyms();
    const auto& fill = wordlists::fillers();
    if (gc.classes != static_cast<int>(kw.size())) throw std::invalid_argument("generator: classes must be 4");
    if (gc.len_min < 3 || gc.len_max < gc.len_min) throw std::invalid_argument("generator: bad length range");
    double wsum = gc.kw1 + gc.kw2 + gc.kw3;
    if (!(wsum > 0.999 && wsum < 1.001)) throw std::invalid_argument("generator: keyword weights must sum to 1");
    if (gc.syn_leak < 0.0 || gc.syn_leak >= 1.0) throw std::invalid_argument("generator: syn_leak outside [0, 1)");

    Corpus c;
    std::set<std::string> all;
    for (const auto& cls : kw)
        for (const auto& w : cls) {
            if (!all.insert(w).second) throw std::logic_error("generator: duplicate word " + w);
            if (syn.find(w) == syn.end()) throw std::logic_error("generator: keyword without synonyms " + w);
        }
    for (const auto& [w, ss] : syn) {
        (void)w;
        for (const auto& s : ss)
            if (!all.insert(s).second) throw std::logic_error("generator: duplicate word " + s);
    }
    for (const auto& w : fill)
        if (!all.insert(w).second) throw std::logic_error("generator: duplicate word " + w);
    c.vocab_words.assign(all.begin(), all.end());
    c.pools.syn = syn;

    Rng rng(seed);
    std::set<std::string> seen;
    auto gen_split = [&](int n) {
        std::vector<Example> out;
        out.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            int label = i % gc.classes;
            std::string text;
            for (int attempt = 0; attempt < 1000; ++attempt) {
                int len = gc.len_min + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(gc.len_max - gc.len_min + 1)));
                double r = rng.uniform();
                int n_kw = r < gc.kw1 ? 1 : (r < gc.kw1 + gc.kw2 ? 2 : 3);
                if (n_kw > len) n_kw = len;
                const auto& pool = kw[static_cast<std::size_t>(label)];
                std::vector<int> pick(pool.size());
                for (std::size_t j = 0; j < pick.size(); ++j) pick[j] = static_cast<int>(j);
                rng.shuffle(pick.begin(), pick.end());
                std::vector<std::string> words;
                for (int j = 0; j < n_kw; ++j) words.push_back(pool[static_cast<std::size_t>(pick[static_cast<std::size_t>(j)])]);
                if (gc.syn_leak > 0.0)
                    for (int j = 1; j < n_kw; ++j) {
                        if (rng.uniform() >= gc.syn_leak) continue;
                        const auto& ss = syn.at(words[static_cast<std::size_t>(j)]);
                        words[static_cast<std::size_t>(j)] = ss[rng.uniform_int(ss.size())];
                    }
                for (int j = n_kw; j < len; ++j) words.push_back(fill[rng.uniform_int(fill.size())]);
                rng.shuffle(words.begin(), words.end());
                text = join_words(words);
                if (seen.insert(text).second) break;
                text.clear();
            }
            if (text.empty()) throw std::runtime_error("generator: could not produce a unique sentence");
            out.push_back(Example{text, label});
        }
        return out;
    };
    c.train = gen_split(gc.train_n);
    c.valid = gen_split(gc.valid_n);
    c.test = gen_split(gc.test_n);
    return c;
}

}  // namespace diffshield
