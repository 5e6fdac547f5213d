#pragma once

#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "attnrank/common.hpp"
#include "attnrank/types.hpp"

namespace attnrank {

// Deterministic symbol-table tokenizer over the synthetic alphabet.
// Every whitespace-separated word is one token; the id layout is a pure
// function of (vocab_size, reserved words), so independently constructed
// tokenizers agree across processes.
class Tokenizer {
  public:
    static constexpr int kNumMarkers = 64;

    static Tokenizer build(int vocab_size,
                           const std::vector<std::string>& reserved_words = {}) {
        Tokenizer t;
        t.add("<bos>");
        t.add("N/A");
        t.add("[think]");
        t.add("[/think]");
        for (int k = 1; k <= kNumMarkers; ++k) t.add("[" + std::to_string(k) + "]");
        for (const auto& w : reserved_words)
            if (!t.id_of_.count(w)) t.add(w);
        int next = 0;
        while (static_cast<int>(t.words_.size()) < vocab_size)
            t.add("w" + std::to_string(next++));
        if (static_cast<int>(t.words_.size()) != vocab_size)
            throw ArgumentError("Tokenizer: vocab_size too small for reserved words");
        return t;
    }

    int vocab_size() const { return static_cast<int>(words_.size()); }

    TokenId bos() const { return 0; }
    TokenId null_query() const { return 1; }
    TokenId think_open() const { return 2; }
    TokenId think_close() const { return 3; }
    TokenId marker(int k) const {
        if (k < 1 || k > kNumMarkers)
            throw ArgumentError("Tokenizer: marker index " + std::to_string(k) +
                                " outside [1," + std::to_string(kNumMarkers) + "]");
        return 3 + k;
    }

    TokenId token(const std::string& word) const {
        auto it = id_of_.find(word);
        if (it == id_of_.end())
            throw ArgumentError("Tokenizer: unknown symbol '" + word + "'");
        return it->second;
    }

    bool knows(const std::string& word) const { return id_of_.count(word) > 0; }

    TokenSeq encode(const std::string& text) const {
        TokenSeq out;
        std::istringstream ss(text);
        std::string word;
        while (ss >> word) out.push_back(token(word));
        return out;
    }

    std::string decode(const TokenSeq& tokens) const {
        std::string out;
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] < 0 || tokens[i] >= vocab_size())
                throw ArgumentError("Tokenizer: token id out of range");
            if (i) out += ' ';
            out += words_[tokens[i]];
        }
        return out;
    }

  private:
    void add(const std::string& word) {
        id_of_.emplace(word, static_cast<TokenId>(words_.size()));
        words_.push_back(word);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> id_of_;
};

}  // namespace attnrank
