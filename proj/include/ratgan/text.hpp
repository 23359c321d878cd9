#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "ratgan/errors.hpp"

namespace ratgan {

/// Lowercases and splits on anything that is not a letter or digit.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct TokenSequence {
    std::vector<std::size_t> ids;
    std::size_t length() const { return ids.size(); }
};

class Vocabulary {
public:
    static constexpr std::size_t pad = 0;
    static constexpr std::size_t unknown = 1;
    static constexpr std::size_t eos = 2;

    Vocabulary() {
        for (const char* s : {"<pad>", "<unk>", "<eos>"}) add(s);
    }

    /// Tokens seen at least `min_frequency` times, in lexicographic order.
    static Vocabulary build(const std::vector<std::string>& captions, std::size_t min_frequency = 1) {
        std::map<std::string, std::size_t> freq;
        for (const auto& c : captions)
            for (auto& t : tokenize(c)) ++freq[t];
        Vocabulary v;
        for (const auto& [tok, n] : freq)
            if (n >= min_frequency) v.add(tok);
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

    std::size_t index(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? unknown : it->second;
    }

    const std::string& token(std::size_t i) const {
        if (i >= tokens_.size()) throw InvalidInput("token index " + std::to_string(i) + " out of range");
        return tokens_[i];
    }

    /// Tokenized caption followed by the end-of-sequence marker.
    TokenSequence encode(const std::string& caption) const {
        TokenSequence seq;
        for (const auto& t : tokenize(caption)) seq.ids.push_back(index(t));
        seq.ids.push_back(eos);
        return seq;
    }

    nlohmann::json to_json() const { return tokens_; }

    static Vocabulary from_json(const nlohmann::json& j) {
        auto toks = j.get<std::vector<std::string>>();
        if (toks.size() < 3 || toks[0] != "<pad>" || toks[1] != "<unk>" || toks[2] != "<eos>")
            throw ParseError("vocabulary does not start with the reserved tokens");
        Vocabulary v;
        for (std::size_t i = 3; i < toks.size(); ++i) v.add(toks[i]);
        return v;
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    void add(const std::string& tok) {
        if (index_.count(tok)) return;
        index_.emplace(tok, tokens_.size());
        tokens_.push_back(tok);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ratgan
