#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ragprobe/errors.hpp"
#include "ragprobe/rng.hpp"
#include "ragprobe/tokenizer.hpp"

using namespace ragprobe;

namespace {

// Independent copy of the byte->stand-in mapping, so the assets built here
// double-check the tokenizer's own table.
std::string byte_symbol(int b) {
    auto direct = [](int x) {
        return (x >= '!' && x <= '~') || (x >= 0xa1 && x <= 0xac) || (x >= 0xae && x <= 0xff);
    };
    int cp;
    if (direct(b)) {
        cp = b;
    } else {
        int n = 0;
        for (int x = 0; x < b; ++x) {
            if (!direct(x)) ++n;
        }
        cp = 256 + n;
    }
    std::string s;
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else {
        s += static_cast<char>(0xc0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    }
    return s;
}

struct BpeAssets {
    std::filesystem::path vocab;
    std::filesystem::path merges;
};

// Builds a vocabulary of the 256 byte symbols plus one token per merge
// output, exactly how a trained asset pair is laid out.
BpeAssets write_bpe_assets(const std::vector<std::pair<std::string, std::string>>& merges,
                           const std::string& tag) {
    BpeAssets assets;
    const auto dir = std::filesystem::temp_directory_path();
    assets.vocab = dir / ("rp_vocab_" + tag + ".json");
    assets.merges = dir / ("rp_merges_" + tag + ".txt");

    nlohmann::json vocab = nlohmann::json::object();
    int next_id = 0;
    for (int b = 0; b < 256; ++b) vocab[byte_symbol(b)] = next_id++;
    std::ofstream mf(assets.merges, std::ios::trunc);
    mf << "#version: test\n";
    for (const auto& [a, b] : merges) {
        mf << a << " " << b << "\n";
        const std::string merged = a + b;
        if (!vocab.contains(merged)) vocab[merged] = next_id++;
    }
    mf.close();
    std::ofstream vf(assets.vocab, std::ios::trunc);
    vf << vocab.dump();
    vf.close();
    return assets;
}

#define SP "\xC4\xA0" // byte symbol for ' '

ByteBpeTokenizer standard_test_bpe() {
    // enough merges for "The Space Needle" to come out as three word tokens
    static const std::vector<std::pair<std::string, std::string>> merges = {
        {"T", "h"},       {"Th", "e"},       {SP, "S"},       {SP "S", "p"},
        {SP "Sp", "a"},   {SP "Spa", "c"},   {SP "Spac", "e"}, {SP, "N"},
        {SP "N", "e"},    {SP "Ne", "e"},    {SP "Nee", "d"},  {SP "Need", "l"},
        {SP "Needl", "e"},
    };
    static const BpeAssets assets = write_bpe_assets(merges, "std");
    return ByteBpeTokenizer::load(assets.vocab.string(), assets.merges.string());
}

} // namespace

TEST_CASE("bpe round trips arbitrary byte strings exactly") {
    ByteBpeTokenizer tok = standard_test_bpe();
    const std::vector<std::string> cases = {
        "The Space Needle",
        "hello, world!",
        "  two  spaces   and\ttabs\n",
        "it's 2024: 100% (sure)...",
        "caf\xC3\xA9 r\xC3\xA9sum\xC3\xA9", // café résumé in UTF-8
        "",
        " ",
        "a",
    };
    for (const std::string& s : cases) {
        const std::vector<int> ids = tok.tokenize(s);
        CHECK(tok.decode(ids) == s);
    }
}

TEST_CASE("bpe round trips random ascii strings") {
    ByteBpeTokenizer tok = standard_test_bpe();
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        std::string s;
        const int len = static_cast<int>(rng.next_below(60));
        for (int i = 0; i < len; ++i) {
            s += static_cast<char>(32 + rng.next_below(95));
        }
        CHECK(tok.decode(tok.tokenize(s)) == s);
    }
}

TEST_CASE("bpe offsets tile the input") {
    ByteBpeTokenizer tok = standard_test_bpe();
    const std::string text = "The Space Needle, built 1962.";
    TokenOffsets offsets;
    tok.tokenize(text, &offsets);
    REQUIRE(!offsets.empty());
    CHECK(offsets.front().first == 0);
    CHECK(offsets.back().second == static_cast<int>(text.size()));
    for (size_t i = 1; i < offsets.size(); ++i) {
        CHECK(offsets[i].first == offsets[i - 1].second);
    }
}

TEST_CASE("bpe merges produce word tokens and span mapping excludes the article") {
    ByteBpeTokenizer tok = standard_test_bpe();
    const std::string text = "The Space Needle";
    TokenOffsets offsets;
    const std::vector<int> ids = tok.tokenize(text, &offsets);
    REQUIRE(ids.size() == 3);
    CHECK(tok.decode(std::span<const int>(ids.data(), 1)) == "The");

    const size_t at = text.find("Space Needle");
    const TokenSpan span = char_span_to_token_span(
        offsets, static_cast<int>(at), static_cast<int>(at + std::string("Space Needle").size()));
    CHECK(span.first == 1);
    CHECK(span.last == 2);
    const std::string decoded =
        tok.decode(std::span<const int>(ids.data() + span.first,
                                        static_cast<size_t>(span.last - span.first + 1)));
    CHECK(decoded.find("Space Needle") != std::string::npos);
}

TEST_CASE("span mapping contract cases") {
    ByteBpeTokenizer tok = standard_test_bpe();
    const std::string text = "The Space Needle";
    TokenOffsets offsets;
    const std::vector<int> ids = tok.tokenize(text, &offsets);

    const TokenSpan whole = char_span_to_token_span(offsets, 0, static_cast<int>(text.size()));
    CHECK(whole.first == 0);
    CHECK(whole.last == static_cast<int>(ids.size()) - 1);

    const TokenSpan empty_at_zero = char_span_to_token_span(offsets, 0, 0);
    CHECK(empty_at_zero.first == 0);
    CHECK(empty_at_zero.last == 0);

    // spans that start mid-token cover that token
    const TokenSpan mid = char_span_to_token_span(offsets, 1, 2); // inside "The"
    CHECK(mid.first == 0);
    CHECK(mid.last == 0);
}

TEST_CASE("span mapping covers random spans (property)") {
    ByteBpeTokenizer tok = standard_test_bpe();
    const std::string text = "The Space Needle stands in a city by the water, 1962.";
    TokenOffsets offsets;
    const std::vector<int> ids = tok.tokenize(text, &offsets);
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        int a = static_cast<int>(rng.next_below(text.size()));
        int b = static_cast<int>(rng.next_below(text.size() + 1));
        if (a > b) std::swap(a, b);
        if (a == b) continue;
        const TokenSpan span = char_span_to_token_span(offsets, a, b);
        REQUIRE(span.first <= span.last);
        // covering: the token bytes contain [a, b)
        CHECK(offsets[static_cast<size_t>(span.first)].first <= a);
        CHECK(offsets[static_cast<size_t>(span.last)].second >= b);
        // minimal: shrinking either end loses coverage
        if (span.first < span.last) {
            CHECK(offsets[static_cast<size_t>(span.first)].second > a);
            CHECK(offsets[static_cast<size_t>(span.last)].first < b);
        }
    }
    (void)ids;
}

TEST_CASE("bpe loader errors") {
    CHECK_THROWS_AS(ByteBpeTokenizer::load("/nonexistent/vocab.json", "/nonexistent/merges.txt"),
                    DataError);
    const auto dir = std::filesystem::temp_directory_path();
    const auto vocab = dir / "rp_vocab_bad.json";
    const auto merges = dir / "rp_merges_bad.txt";
    {
        std::ofstream vf(vocab, std::ios::trunc);
        vf << "{not json";
    }
    {
        std::ofstream mf(merges, std::ios::trunc);
        mf << "a b\n";
    }
    CHECK_THROWS_AS(ByteBpeTokenizer::load(vocab.string(), merges.string()), DataError);
    {
        std::ofstream vf(vocab, std::ios::trunc);
        vf << "{\"a\": 0}";
    }
    {
        std::ofstream mf(merges, std::ios::trunc);
        mf << "nospace\n";
    }
    CHECK_THROWS_AS(ByteBpeTokenizer::load(vocab.string(), merges.string()), DataError);
    std::filesystem::remove(vocab);
    std::filesystem::remove(merges);
}

TEST_CASE("bpe with incomplete byte coverage reports the gap") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto vocab = dir / "rp_vocab_tiny.json";
    const auto merges = dir / "rp_merges_tiny.txt";
    {
        std::ofstream vf(vocab, std::ios::trunc);
        vf << "{\"a\": 0, \"b\": 1}";
    }
    {
        std::ofstream mf(merges, std::ios::trunc);
        mf << "";
    }
    ByteBpeTokenizer tok = ByteBpeTokenizer::load(vocab.string(), merges.string());
    CHECK(tok.tokenize("ab") == std::vector<int>{0, 1});
    CHECK_THROWS_AS(tok.tokenize("abc"), DataError);
    std::filesystem::remove(vocab);
    std::filesystem::remove(merges);
}

#ifdef RAGPROBE_ASSETS_DIR
TEST_CASE("committed pretrained BPE assets round trip the committed corpus") {
    const std::filesystem::path assets = std::filesystem::path(RAGPROBE_ASSETS_DIR) / "pretrained";
    REQUIRE(std::filesystem::exists(assets / "vocab.json"));
    ByteBpeTokenizer tok = ByteBpeTokenizer::load((assets / "vocab.json").string(),
                                                  (assets / "merges.txt").string());
    std::ifstream facts(assets / "facts.jsonl");
    REQUIRE(facts.good());
    std::string line;
    int checked = 0;
    while (std::getline(facts, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        for (const char* field : {"prompt", "subject", "attribute"}) {
            const std::string s = j.at(field).get<std::string>();
            CHECK(tok.decode(tok.tokenize(s)) == s);
            CHECK(tok.decode(tok.tokenize(" " + s)) == " " + s);
        }
        ++checked;
    }
    CHECK(checked >= 20);
}
#endif

TEST_CASE("whitespace tokenizer basics") {
    WhitespaceTokenizer tok = WhitespaceTokenizer::build({"the quick fox", "jumps over the fox"});
    CHECK(tok.vocab_size() == 5); // the quick fox jumps over

    TokenOffsets offsets;
    const std::vector<int> ids = tok.tokenize("  the fox \t jumps ", &offsets);
    REQUIRE(ids.size() == 3);
    CHECK(tok.decode(ids) == "the fox jumps");
    CHECK(offsets[0] == std::pair<int, int>(2, 5));

    CHECK_THROWS_AS(tok.tokenize("unknownword"), DataError);
    CHECK_THROWS_AS(tok.decode(std::vector<int>{99}), DataError);

    // leading-space tokenization used for answer scoring
    CHECK(tok.tokenize(" fox") == tok.tokenize("fox"));
}

TEST_CASE("whitespace tokenizer save/load round trip") {
    WhitespaceTokenizer tok = WhitespaceTokenizer::build({"alpha beta gamma"});
    const auto path = std::filesystem::temp_directory_path() / "rp_ws_vocab.json";
    tok.save(path.string());
    WhitespaceTokenizer loaded = WhitespaceTokenizer::load(path.string());
    CHECK(loaded.vocab_size() == tok.vocab_size());
    CHECK(loaded.tokenize("beta gamma alpha") == tok.tokenize("beta gamma alpha"));
    std::filesystem::remove(path);
}

TEST_CASE("whitespace round trip equals whitespace-normalized input") {
    WhitespaceTokenizer tok;
    const std::vector<std::string> corpus = {
        "The Eiffel Tower is located in the city of",
        "Paris",
        "a  doubled   space line",
    };
    for (const std::string& s : corpus) tok.absorb(s);
    for (const std::string& s : corpus) {
        std::string norm;
        bool space = true;
        for (char c : s) {
            if (c == ' ') {
                if (!space) norm += ' ';
                space = true;
            } else {
                norm += c;
                space = false;
            }
        }
        while (!norm.empty() && norm.back() == ' ') norm.pop_back();
        CHECK(tok.decode(tok.tokenize(s)) == norm);
    }
}
