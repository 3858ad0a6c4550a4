// Whitespace word tokenizer over a fixed vocabulary. ids: 0 = <pad>, 1 = <unk>.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffshield/ops.hpp"

namespace diffshield {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    std::vector<std::string> id_to_token{"<pad>", "<unk>"};
    std::unordered_map<std::string, int> token_to_id{{"<pad>", 0}, {"<unk>", 1}};

    int add(const std::string& tok) {
        auto it = token_to_id.find(tok);
        if (it != token_to_id.end()) return it->second;
        int id = static_cast<int>(id_to_token.size());
        id_to_token.push_back(tok);
        token_to_id.emplace(tok, id);
        return id;
    }

    int lookup(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    int size() const { return static_cast<int>(id_to_token.size()); }

    static Vocab build(std::vector<std::string> words) {
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        Vocab v;
        for (const auto& w : words) v.add(w);
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("vocab: cannot write " + path);
        for (const auto& t : id_to_token) f << t << "\n";
    }

    static Vocab load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("vocab: cannot read " + path);
        Vocab v;
        v.id_to_token.clear();
        v.token_to_id.clear();
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            int id = static_cast<int>(v.id_to_token.size());
            v.id_to_token.push_back(line);
            v.token_to_id.emplace(line, id);
        }
        if (v.size() < 2 || v.id_to_token[0] != "<pad>" || v.id_to_token[1] != "<unk>")
            throw std::runtime_error("vocab: malformed file " + path);
        return v;
    }
};

struct TokenSequence {
    std::vector<int> ids;  // length max_len, padded with kPad
    Mask mask;             // 1 for real tokens
    int valid_len = 0;
};

// Out-of-vocabulary words map to <unk>; overlong inputs are truncated.
inline TokenSequence tokenize(const std::vector<std::string>& words, const Vocab& vocab, int max_len) {
    if (words.empty()) throw std::invalid_argument("tokenize: empty input");
    if (max_len < 1) throw std::invalid_argument("tokenize: max_len < 1");
    TokenSequence seq;
    seq.ids.assign(static_cast<std::size_t>(max_len), Vocab::kPad);
    seq.mask.assign(static_cast<std::size_t>(max_len), 0);
    seq.valid_len = std::min<int>(max_len, static_cast<int>(words.size()));
    for (int i = 0; i < seq.valid_len; ++i) {
        seq.ids[static_cast<std::size_t>(i)] = vocab.lookup(words[static_cast<std::size_t>(i)]);
        seq.mask[static_cast<std::size_t>(i)] = 1;
    }
    return seq;
}

inline TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    return tokenize(split_words(text), vocab, max_len);
}

}  // namespace diffshield
