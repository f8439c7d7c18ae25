#include "ragprobe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "ragprobe/errors.hpp"
#include "ragprobe/rng.hpp"

namespace ragprobe {

std::string normalize_whitespace(std::string_view s) {
    std::string out;
    bool in_space = true; // trims leading space too
    for (char c : s) {
        const bool sp = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (sp) {
            if (!in_space) out += ' ';
            in_space = true;
        } else {
            out += c;
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::vector<FactRecord> load_knowns(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open fact file: " + path);
    std::vector<FactRecord> records;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (normalize_whitespace(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_number) + ": malformed JSON: " + e.what());
        }
        FactRecord rec;
        rec.line_number = line_number;
        for (const char* field : {"prompt", "subject", "attribute"}) {
            if (!j.contains(field) || !j[field].is_string()) {
                throw DataError("line " + std::to_string(line_number) + ": missing string field \"" +
                                field + "\"");
            }
        }
        rec.prompt = j["prompt"].get<std::string>();
        rec.subject = j["subject"].get<std::string>();
        rec.attribute = j["attribute"].get<std::string>();
        if (rec.prompt.find(rec.subject) == std::string::npos) {
            throw DataError("line " + std::to_string(line_number) + ": subject \"" + rec.subject +
                            "\" is not a substring of the prompt");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

AttributePosition attribute_position_from_string(const std::string& s) {
    if (s == "early") return AttributePosition::early;
    if (s == "middle") return AttributePosition::middle;
    if (s == "late") return AttributePosition::late;
    throw ConfigError("unknown attribute position: " + s + " (want early|middle|late)");
}

std::string to_string(AttributePosition p) {
    switch (p) {
        case AttributePosition::early: return "early";
        case AttributePosition::middle: return "middle";
        case AttributePosition::late: return "late";
    }
    return "?";
}

void ContextSpec::validate() const {
    if (segment_length < 1) throw ConfigError("ContextSpec: segment_length must be >= 1");
    if (n_segments < 1) throw ConfigError("ContextSpec: n_segments must be >= 1");
}

const std::vector<std::string>& context_filler_pool() {
    // Neutral filler only: no proper nouns, nothing that looks like an answer.
    static const std::vector<std::string> pool = {
        "the report covers several routine matters in order",
        "a short note follows the earlier section of the file",
        "general remarks appear before the main entry below",
        "the summary lists common items without further detail",
        "some records were copied from an older ledger page",
        "an index of minor updates sits near the margin",
        "the archive keeps assorted papers from past reviews",
        "later pages mention ordinary corrections and edits",
        "a plain heading marks the start of this section",
        "various small entries continue across the page",
        "the clerk added routine stamps beside each item",
        "standard filing rules apply to the documents here",
    };
    return pool;
}

const std::vector<std::string>& relation_filler_pool() {
    static const std::vector<std::string> pool = {
        "is recorded in the files alongside",
        "is linked in this register to",
        "appears in the notes together with",
        "is listed in the catalog under",
    };
    return pool;
}

namespace {

int token_count(const Tokenizer& tokenizer, const std::string& text) {
    return static_cast<int>(tokenizer.tokenize(text).size());
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

int count_occurrences(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return 0;
    int n = 0;
    size_t at = 0;
    while ((at = haystack.find(needle, at)) != std::string::npos) {
        ++n;
        ++at;
    }
    return n;
}

// Appends one filler segment of segment_length +/- 2 tokens to `text`
// (space-joined), never introducing answer_text as a substring.
void append_filler_segment(std::string& text, const FactRecord& record, const ContextSpec& spec,
                           Rng& rng, const Tokenizer& tokenizer) {
    const auto& pool = context_filler_pool();
    const int base = token_count(tokenizer, text);
    const int lo = base + std::max(1, spec.segment_length - 2);
    const int hi = base + spec.segment_length + 2;

    std::vector<std::string> words;
    size_t sentence = rng.next_below(pool.size());
    size_t word_idx = 0;
    {
        std::istringstream ss(pool[sentence]);
        std::string w;
        while (ss >> w) words.push_back(w);
    }

    int guard = 0;
    std::string segment;
    int count = base;
    const int base_occurrences = count_occurrences(text, record.attribute);
    while (count < lo) {
        if (word_idx >= words.size()) {
            sentence = rng.next_below(pool.size());
            words.clear();
            std::istringstream ss(pool[sentence]);
            std::string w;
            while (ss >> w) words.push_back(w);
            word_idx = 0;
        }
        const std::string& word = words[word_idx++];
        std::string candidate_text = text;
        std::string candidate_segment = segment;
        if (!candidate_segment.empty()) candidate_segment += ' ';
        candidate_segment += word;
        if (!candidate_text.empty()) candidate_text += ' ';
        candidate_text += candidate_segment;
        const int candidate_count = token_count(tokenizer, candidate_text);
        // fillers must not introduce a new occurrence of the answer
        const bool contaminated =
            count_occurrences(candidate_text, record.attribute) > base_occurrences;
        const bool too_big_step = candidate_count > hi;
        if (contaminated || too_big_step) {
            if (++guard > 4096) {
                throw DataError("cannot synthesize a filler segment avoiding answer \"" +
                                record.attribute + "\" at segment_length " +
                                std::to_string(spec.segment_length));
            }
            continue;
        }
        segment = std::move(candidate_segment);
        count = candidate_count;
    }
    if (!text.empty()) text += ' ';
    text += segment;
}

} // namespace

ContextBlock synthesize_context(const FactRecord& record, const ContextSpec& spec,
                                const Tokenizer& tokenizer) {
    spec.validate();
    Rng rng(mix_seed({0x636f6e74657874ULL, spec.seed,
                      hash_bytes(record.prompt.data(), record.prompt.size()),
                      hash_bytes(record.subject.data(), record.subject.size()),
                      hash_bytes(record.attribute.data(), record.attribute.size())}));

    std::string attr_sentence;
    if (spec.include_attribute) {
        const auto& rels = relation_filler_pool();
        attr_sentence = record.subject + " " + rels[rng.next_below(rels.size())] + " " +
                        record.attribute + ".";
    }

    int insert_after = 0; // number of segments before the attribute sentence
    switch (spec.attribute_position) {
        case AttributePosition::early: insert_after = 0; break;
        case AttributePosition::middle: insert_after = spec.n_segments / 2; break;
        case AttributePosition::late: insert_after = spec.n_segments; break;
    }

    ContextBlock block;
    for (int seg = 0; seg < spec.n_segments; ++seg) {
        if (spec.include_attribute && seg == insert_after) {
            if (!block.text.empty()) block.text += ' ';
            block.text += attr_sentence;
        }
        append_filler_segment(block.text, record, spec, rng, tokenizer);
    }
    if (spec.include_attribute && insert_after >= spec.n_segments) {
        if (!block.text.empty()) block.text += ' ';
        block.text += attr_sentence;
    }

    if (spec.include_attribute) {
        // The answer occurs exactly once: at the tail of the attribute sentence.
        const size_t sentence_at = block.text.find(attr_sentence);
        const size_t begin = sentence_at + attr_sentence.size() - 1 - record.attribute.size();
        block.attribute_char_span = {static_cast<int>(begin),
                                     static_cast<int>(begin + record.attribute.size())};
        if (block.text.substr(begin, record.attribute.size()) != record.attribute) {
            throw DataError("internal: attribute span misaligned in synthesized context");
        }
    } else if (contains(block.text, record.attribute)) {
        throw DataError("internal: synthesized context contaminated with the answer");
    }
    return block;
}

PromptInstance build_instance(const FactRecord& record, const std::optional<ContextBlock>& context,
                              const Tokenizer& tokenizer, int max_seq_len) {
    PromptInstance inst;
    inst.prompt_text = record.prompt;
    inst.subject = record.subject;
    inst.answer_text = record.attribute;
    inst.context = context;
    inst.setting = context.has_value() ? "rag" : "vanilla";

    const size_t subject_at = record.prompt.find(record.subject);
    if (subject_at == std::string::npos) {
        throw DataError("subject \"" + record.subject + "\" not found in prompt");
    }
    inst.subject_char_span = {static_cast<int>(subject_at),
                              static_cast<int>(subject_at + record.subject.size())};

    std::string combined;
    int prompt_offset = 0;
    if (context.has_value()) {
        combined = context->text + " " + record.prompt;
        prompt_offset = static_cast<int>(context->text.size()) + 1;
    } else {
        combined = record.prompt;
    }

    TokenOffsets offsets;
    inst.token_ids = tokenizer.tokenize(combined, &offsets);
    if (inst.token_ids.empty()) throw DataError("prompt tokenizes to an empty sequence");
    if (static_cast<int>(inst.token_ids.size()) > max_seq_len) {
        throw DataError("sequence of " + std::to_string(inst.token_ids.size()) +
                        " tokens exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    inst.last_token_index = static_cast<int>(inst.token_ids.size()) - 1;

    inst.subject_token_span = char_span_to_token_span(offsets, prompt_offset + inst.subject_char_span.first,
                                                      prompt_offset + inst.subject_char_span.second);
    {
        std::span<const int> span_ids(inst.token_ids.data() + inst.subject_token_span.first,
                                      static_cast<size_t>(inst.subject_token_span.last -
                                                          inst.subject_token_span.first + 1));
        const std::string decoded = normalize_whitespace(tokenizer.decode(span_ids));
        if (!contains(decoded, normalize_whitespace(record.subject))) {
            throw DataError("subject span unalignable to whole tokens for prompt: " + record.prompt);
        }
    }

    if (context.has_value() && context->attribute_char_span.has_value()) {
        const auto [ab, ae] = *context->attribute_char_span;
        inst.attribute_token_span = char_span_to_token_span(offsets, ab, ae);
    }

    const std::vector<int> answer_ids = tokenizer.tokenize(" " + record.attribute);
    if (answer_ids.empty()) throw DataError("answer tokenizes to an empty sequence: " + record.attribute);
    inst.answer_first_token = answer_ids.front();
    return inst;
}

nlohmann::json instance_to_json(const PromptInstance& inst) {
    nlohmann::json j;
    j["instance_id"] = inst.instance_id;
    j["fact_index"] = inst.fact_index;
    j["setting"] = inst.setting;
    j["prompt"] = inst.prompt_text;
    j["subject"] = inst.subject;
    j["answer"] = inst.answer_text;
    j["subject_char_span"] = {inst.subject_char_span.first, inst.subject_char_span.second};
    if (inst.context.has_value()) {
        j["context"] = {{"text", inst.context->text}};
        if (inst.context->attribute_char_span.has_value()) {
            j["context"]["attribute_char_span"] = {inst.context->attribute_char_span->first,
                                                   inst.context->attribute_char_span->second};
        }
    } else {
        j["context"] = nullptr;
    }
    j["token_ids"] = inst.token_ids;
    j["subject_token_span"] = {inst.subject_token_span.first, inst.subject_token_span.last};
    if (inst.attribute_token_span.has_value()) {
        j["attribute_token_span"] = {inst.attribute_token_span->first, inst.attribute_token_span->last};
    } else {
        j["attribute_token_span"] = nullptr;
    }
    j["last_token_index"] = inst.last_token_index;
    j["answer_first_token"] = inst.answer_first_token;
    return j;
}

PromptInstance instance_from_json(const nlohmann::json& j) {
    PromptInstance inst;
    inst.instance_id = j.at("instance_id").get<uint64_t>();
    inst.fact_index = j.at("fact_index").get<int>();
    inst.setting = j.at("setting").get<std::string>();
    inst.prompt_text = j.at("prompt").get<std::string>();
    inst.subject = j.at("subject").get<std::string>();
    inst.answer_text = j.at("answer").get<std::string>();
    inst.subject_char_span = {j.at("subject_char_span")[0].get<int>(),
                              j.at("subject_char_span")[1].get<int>()};
    if (!j.at("context").is_null()) {
        ContextBlock block;
        block.text = j.at("context").at("text").get<std::string>();
        if (j.at("context").contains("attribute_char_span")) {
            block.attribute_char_span = {j["context"]["attribute_char_span"][0].get<int>(),
                                         j["context"]["attribute_char_span"][1].get<int>()};
        }
        inst.context = std::move(block);
    }
    inst.token_ids = j.at("token_ids").get<std::vector<int>>();
    inst.subject_token_span = {j.at("subject_token_span")[0].get<int>(),
                               j.at("subject_token_span")[1].get<int>()};
    if (!j.at("attribute_token_span").is_null()) {
        inst.attribute_token_span = TokenSpan{j["attribute_token_span"][0].get<int>(),
                                              j["attribute_token_span"][1].get<int>()};
    }
    inst.last_token_index = j.at("last_token_index").get<int>();
    inst.answer_first_token = j.at("answer_first_token").get<int>();
    return inst;
}

} // namespace ragprobe
