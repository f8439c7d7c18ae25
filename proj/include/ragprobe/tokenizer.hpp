#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ragprobe {

// Inclusive token interval [first, last].
struct TokenSpan {
    int first = 0;
    int last = 0;
};

// Byte range [begin, end) of each token inside the tokenized text.
using TokenOffsets = std::vector<std::pair<int, int>>;

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<int> tokenize(std::string_view text, TokenOffsets* offsets = nullptr) const = 0;
    virtual std::string decode(std::span<const int> ids) const = 0;
    virtual int vocab_size() const = 0;
    virtual std::string name() const = 0;
};

// Smallest token interval whose bytes cover [begin, end). An empty span maps
// to the single token containing (or nearest after) its position.
TokenSpan char_span_to_token_span(const TokenOffsets& offsets, int begin, int end);

// Convenience: tokenize then map.
TokenSpan char_span_to_token_span(const Tokenizer& tokenizer, std::string_view text, int begin, int end);

// Test tokenizer: whitespace-separated words, vocabulary built up front (or
// loaded from a word->id JSON file). decode joins with single spaces, so
// round trips are exact up to whitespace normalization.
class WhitespaceTokenizer : public Tokenizer {
public:
    WhitespaceTokenizer() = default;

    // Assigns ids to words in first-seen order across the given texts.
    static WhitespaceTokenizer build(const std::vector<std::string>& texts);
    static WhitespaceTokenizer load(const std::string& vocab_json_path);
    void save(const std::string& vocab_json_path) const;

    // Adds any unseen words of `text`, in order. Returns *this for chaining.
    WhitespaceTokenizer& absorb(std::string_view text);

    std::vector<int> tokenize(std::string_view text, TokenOffsets* offsets = nullptr) const override;
    std::string decode(std::span<const int> ids) const override;
    int vocab_size() const override { return static_cast<int>(words_.size()); }
    std::string name() const override { return "whitespace"; }

private:
    std::map<std::string, int, std::less<>> ids_;
    std::vector<std::string> words_;
};

// GPT-2-style byte-level BPE: reversible on arbitrary bytes, loaded from a
// vocabulary JSON (token -> id) and a merges text file ("A B" per line).
class ByteBpeTokenizer : public Tokenizer {
public:
    static ByteBpeTokenizer load(const std::string& vocab_json_path, const std::string& merges_path);

    std::vector<int> tokenize(std::string_view text, TokenOffsets* offsets = nullptr) const override;
    std::string decode(std::span<const int> ids) const override;
    int vocab_size() const override { return static_cast<int>(id_to_token_.size()); }
    std::string name() const override { return "bpe"; }

private:
    std::map<std::string, int, std::less<>> token_to_id_;
    std::vector<std::string> id_to_token_; // index = id
    std::map<std::pair<std::string, std::string>, int> merge_rank_;
};

} // namespace ragprobe
