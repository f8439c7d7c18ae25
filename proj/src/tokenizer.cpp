#include "ragprobe/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ragprobe/errors.hpp"

namespace ragprobe {

TokenSpan char_span_to_token_span(const TokenOffsets& offsets, int begin, int end) {
    if (offsets.empty()) throw DataError("cannot map span: no tokens");
    const int n = static_cast<int>(offsets.size());
    int first = n - 1;
    for (int i = 0; i < n; ++i) {
        if (offsets[static_cast<size_t>(i)].second > begin) {
            first = i;
            break;
        }
    }
    if (begin >= end) return {first, first};
    int last = 0;
    for (int i = n - 1; i >= 0; --i) {
        if (offsets[static_cast<size_t>(i)].first < end) {
            last = i;
            break;
        }
    }
    if (last < first) last = first;
    return {first, last};
}

TokenSpan char_span_to_token_span(const Tokenizer& tokenizer, std::string_view text, int begin, int end) {
    TokenOffsets offsets;
    tokenizer.tokenize(text, &offsets);
    return char_span_to_token_span(offsets, begin, end);
}

// --- whitespace tokenizer ---------------------------------------------------

namespace {

bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

template <typename Fn>
void split_words(std::string_view text, const Fn& fn) {
    int i = 0;
    const int n = static_cast<int>(text.size());
    while (i < n) {
        while (i < n && is_space_byte(text[static_cast<size_t>(i)])) ++i;
        if (i >= n) break;
        int j = i;
        while (j < n && !is_space_byte(text[static_cast<size_t>(j)])) ++j;
        fn(text.substr(static_cast<size_t>(i), static_cast<size_t>(j - i)), i, j);
        i = j;
    }
}

} // namespace

WhitespaceTokenizer WhitespaceTokenizer::build(const std::vector<std::string>& texts) {
    WhitespaceTokenizer tok;
    for (const std::string& t : texts) tok.absorb(t);
    return tok;
}

WhitespaceTokenizer& WhitespaceTokenizer::absorb(std::string_view text) {
    split_words(text, [&](std::string_view w, int, int) {
        if (ids_.find(w) == ids_.end()) {
            ids_.emplace(std::string(w), static_cast<int>(words_.size()));
            words_.emplace_back(w);
        }
    });
    return *this;
}

WhitespaceTokenizer WhitespaceTokenizer::load(const std::string& vocab_json_path) {
    std::ifstream in(vocab_json_path);
    if (!in) throw DataError("cannot open vocabulary file: " + vocab_json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed vocabulary JSON: " + std::string(e.what()));
    }
    WhitespaceTokenizer tok;
    tok.words_.resize(j.size());
    for (const auto& [word, id] : j.items()) {
        const int i = id.get<int>();
        if (i < 0 || i >= static_cast<int>(tok.words_.size())) {
            throw DataError("vocabulary ids must be a dense 0..n-1 range: " + vocab_json_path);
        }
        tok.words_[static_cast<size_t>(i)] = word;
        tok.ids_.emplace(word, i);
    }
    return tok;
}

void WhitespaceTokenizer::save(const std::string& vocab_json_path) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [word, id] : ids_) j[word] = id;
    std::ofstream out(vocab_json_path, std::ios::trunc);
    if (!out) throw DataError("cannot write vocabulary file: " + vocab_json_path);
    out << j.dump(2) << "\n";
}

std::vector<int> WhitespaceTokenizer::tokenize(std::string_view text, TokenOffsets* offsets) const {
    std::vector<int> out;
    if (offsets) offsets->clear();
    split_words(text, [&](std::string_view w, int b, int e) {
        auto it = ids_.find(w);
        if (it == ids_.end()) throw DataError("word not in vocabulary: " + std::string(w));
        out.push_back(it->second);
        if (offsets) offsets->emplace_back(b, e);
    });
    return out;
}

std::string WhitespaceTokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= static_cast<int>(words_.size())) {
            throw DataError("token id out of vocabulary: " + std::to_string(id));
        }
        if (i) out += ' ';
        out += words_[static_cast<size_t>(id)];
    }
    return out;
}

// --- byte-level BPE ----------------------------------------------------------

namespace {

// GPT-2 byte <-> unicode-codepoint mapping: printable latin-1 bytes map to
// themselves, the rest to 256+n, so every byte has a visible stand-in.
std::array<int, 256>& byte_to_cp() {
    static std::array<int, 256> table = [] {
        std::array<int, 256> t{};
        std::vector<bool> direct(256, false);
        auto mark = [&](int lo, int hi) {
            for (int b = lo; b <= hi; ++b) direct[static_cast<size_t>(b)] = true;
        };
        mark('!', '~');
        mark(0xa1, 0xac);
        mark(0xae, 0xff);
        int n = 0;
        for (int b = 0; b < 256; ++b) {
            t[static_cast<size_t>(b)] = direct[static_cast<size_t>(b)] ? b : 256 + n++;
        }
        return t;
    }();
    return table;
}

std::string cp_to_utf8(int cp) {
    std::string s;
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else if (cp < 0x800) {
        s += static_cast<char>(0xc0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
        s += static_cast<char>(0xe0 | (cp >> 12));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    }
    return s;
}

int utf8_next_cp(std::string_view s, size_t& i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
        i += 1;
        return c;
    }
    if ((c >> 5) == 0x6 && i + 1 < s.size()) {
        const int cp = ((c & 0x1f) << 6) | (static_cast<unsigned char>(s[i + 1]) & 0x3f);
        i += 2;
        return cp;
    }
    if ((c >> 4) == 0xe && i + 2 < s.size()) {
        const int cp = ((c & 0x0f) << 12) | ((static_cast<unsigned char>(s[i + 1]) & 0x3f) << 6) |
                       (static_cast<unsigned char>(s[i + 2]) & 0x3f);
        i += 3;
        return cp;
    }
    i += 1;
    return c; // tolerate malformed input byte-wise
}

std::string byte_to_symbol(unsigned char b) { return cp_to_utf8(byte_to_cp()[b]); }

std::map<int, unsigned char> make_cp_to_byte() {
    std::map<int, unsigned char> inv;
    for (int b = 0; b < 256; ++b) inv[byte_to_cp()[static_cast<size_t>(b)]] = static_cast<unsigned char>(b);
    return inv;
}

bool is_letter_byte(unsigned char c) { return std::isalpha(c) != 0 || c >= 0x80; }
bool is_digit_byte(unsigned char c) { return std::isdigit(c) != 0; }

// Hand-rolled chunker mirroring the GPT-2 pretokenizer on byte classes:
// contractions, " ?letters+", " ?digits+", " ?other+", whitespace runs with
// the final space attaching to the following chunk.
std::vector<std::pair<int, int>> pretokenize(std::string_view text) {
    std::vector<std::pair<int, int>> chunks;
    const int n = static_cast<int>(text.size());
    int i = 0;
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(text[static_cast<size_t>(i)]);
        if (is_space_byte(static_cast<char>(c))) {
            int j = i;
            while (j < n && is_space_byte(text[static_cast<size_t>(j)])) ++j;
            const bool followed = j < n;
            const bool single_space_prefix =
                followed && text[static_cast<size_t>(j - 1)] == ' ';
            int run_end = (followed && single_space_prefix) ? j - 1 : j;
            if (run_end > i) chunks.emplace_back(i, run_end);
            i = run_end;
            if (i == j) continue;
            // a single kept space: fold it into the next chunk
            int k = j;
            const unsigned char d = static_cast<unsigned char>(text[static_cast<size_t>(k)]);
            if (is_letter_byte(d)) {
                while (k < n && is_letter_byte(static_cast<unsigned char>(text[static_cast<size_t>(k)]))) ++k;
            } else if (is_digit_byte(d)) {
                while (k < n && is_digit_byte(static_cast<unsigned char>(text[static_cast<size_t>(k)]))) ++k;
            } else {
                while (k < n) {
                    const unsigned char e = static_cast<unsigned char>(text[static_cast<size_t>(k)]);
                    if (is_space_byte(static_cast<char>(e)) || is_letter_byte(e) || is_digit_byte(e)) break;
                    ++k;
                }
            }
            chunks.emplace_back(i, k);
            i = k;
            continue;
        }
        if (c == '\'' && i + 1 < n) {
            // 's 't 'm 'd 're 've 'll
            const char c1 = text[static_cast<size_t>(i + 1)];
            if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') {
                chunks.emplace_back(i, i + 2);
                i += 2;
                continue;
            }
            if (i + 2 < n) {
                const char c2 = text[static_cast<size_t>(i + 2)];
                if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') || (c1 == 'l' && c2 == 'l')) {
                    chunks.emplace_back(i, i + 3);
                    i += 3;
                    continue;
                }
            }
        }
        int k = i;
        if (is_letter_byte(c)) {
            while (k < n && is_letter_byte(static_cast<unsigned char>(text[static_cast<size_t>(k)]))) ++k;
        } else if (is_digit_byte(c)) {
            while (k < n && is_digit_byte(static_cast<unsigned char>(text[static_cast<size_t>(k)]))) ++k;
        } else {
            while (k < n) {
                const unsigned char e = static_cast<unsigned char>(text[static_cast<size_t>(k)]);
                if (is_space_byte(static_cast<char>(e)) || is_letter_byte(e) || is_digit_byte(e)) break;
                ++k;
            }
        }
        chunks.emplace_back(i, k);
        i = k;
    }
    return chunks;
}

} // namespace

ByteBpeTokenizer ByteBpeTokenizer::load(const std::string& vocab_json_path, const std::string& merges_path) {
    ByteBpeTokenizer tok;

    std::ifstream vin(vocab_json_path);
    if (!vin) throw DataError("cannot open vocabulary file: " + vocab_json_path);
    nlohmann::json vocab;
    try {
        vin >> vocab;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed vocabulary JSON: " + std::string(e.what()));
    }
    int max_id = -1;
    for (const auto& [token, id] : vocab.items()) max_id = std::max(max_id, id.get<int>());
    tok.id_to_token_.resize(static_cast<size_t>(max_id + 1));
    for (const auto& [token, id] : vocab.items()) {
        const int i = id.get<int>();
        if (i < 0) throw DataError("negative token id in vocabulary: " + token);
        tok.id_to_token_[static_cast<size_t>(i)] = token;
        tok.token_to_id_.emplace(token, i);
    }

    std::ifstream min(merges_path);
    if (!min) throw DataError("cannot open merges file: " + merges_path);
    std::string line;
    int rank = 0;
    while (std::getline(min, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
            throw DataError("malformed merges line: \"" + line + "\"");
        }
        tok.merge_rank_.emplace(std::make_pair(line.substr(0, sp), line.substr(sp + 1)), rank++);
    }
    return tok;
}

std::vector<int> ByteBpeTokenizer::tokenize(std::string_view text, TokenOffsets* offsets) const {
    std::vector<int> out;
    if (offsets) offsets->clear();

    for (const auto& [cb, ce] : pretokenize(text)) {
        // symbols + original byte length of each symbol
        std::vector<std::string> syms;
        std::vector<int> lens;
        syms.reserve(static_cast<size_t>(ce - cb));
        for (int b = cb; b < ce; ++b) {
            syms.push_back(byte_to_symbol(static_cast<unsigned char>(text[static_cast<size_t>(b)])));
            lens.push_back(1);
        }
        while (syms.size() > 1) {
            int best_rank = -1;
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = merge_rank_.find({syms[i], syms[i + 1]});
                if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
                    best_rank = it->second;
                }
            }
            if (best_rank < 0) break;
            std::vector<std::string> merged;
            std::vector<int> merged_lens;
            size_t i = 0;
            while (i < syms.size()) {
                if (i + 1 < syms.size()) {
                    auto it = merge_rank_.find({syms[i], syms[i + 1]});
                    if (it != merge_rank_.end() && it->second == best_rank) {
                        merged.push_back(syms[i] + syms[i + 1]);
                        merged_lens.push_back(lens[i] + lens[i + 1]);
                        i += 2;
                        continue;
                    }
                }
                merged.push_back(syms[i]);
                merged_lens.push_back(lens[i]);
                ++i;
            }
            syms = std::move(merged);
            lens = std::move(merged_lens);
        }
        int pos = cb;
        for (size_t i = 0; i < syms.size(); ++i) {
            auto it = token_to_id_.find(syms[i]);
            if (it == token_to_id_.end()) {
                throw DataError("token not in vocabulary (incomplete byte coverage): \"" + syms[i] + "\"");
            }
            out.push_back(it->second);
            if (offsets) offsets->emplace_back(pos, pos + lens[i]);
            pos += lens[i];
        }
    }
    return out;
}

std::string ByteBpeTokenizer::decode(std::span<const int> ids) const {
    static const std::map<int, unsigned char> inv = make_cp_to_byte();
    std::string bytes;
    for (int id : ids) {
        if (id < 0 || id >= static_cast<int>(id_to_token_.size())) {
            throw DataError("token id out of vocabulary: " + std::to_string(id));
        }
        const std::string& token = id_to_token_[static_cast<size_t>(id)];
        size_t i = 0;
        while (i < token.size()) {
            const int cp = utf8_next_cp(token, i);
            auto it = inv.find(cp);
            if (it == inv.end()) throw DataError("unmapped codepoint in token: " + token);
            bytes += static_cast<char>(it->second);
        }
    }
    return bytes;
}

} // namespace ragprobe
