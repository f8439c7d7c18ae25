#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragprobe/tokenizer.hpp"

namespace ragprobe {

// One fact line from a knowns-style JSONL file.
struct FactRecord {
    std::string prompt;
    std::string subject;
    std::string attribute; // expected answer text
    int line_number = 0;   // 1-based, for diagnostics
};

// Loads and validates a JSONL fact file. Throws DataError with the line
// number for malformed JSON, missing fields, or a subject that is not a
// substring of its prompt. An empty file yields an empty list.
std::vector<FactRecord> load_knowns(const std::string& path);

enum class AttributePosition { early, middle, late };

AttributePosition attribute_position_from_string(const std::string& s);
std::string to_string(AttributePosition p);

// Controls synthesized context shape: n_segments filler segments of
// segment_length +/- 2 tokens each, with an optional single sentence stating
// the attribute.
struct ContextSpec {
    int segment_length = 10;
    int n_segments = 2;
    bool include_attribute = true;
    AttributePosition attribute_position = AttributePosition::late;
    uint64_t seed = 0;

    void validate() const;
};

struct ContextBlock {
    std::string text;
    std::optional<std::pair<int, int>> attribute_char_span; // [begin,end) into text
};

// Deterministic template-based context for (record, spec). If
// include_attribute, exactly one "<subject> <relation filler> <attribute>."
// sentence is inserted at the requested position; otherwise the answer text
// never occurs in the context.
ContextBlock synthesize_context(const FactRecord& record, const ContextSpec& spec,
                                const Tokenizer& tokenizer);

// Fixed neutral text the synthesizer draws from; exposed so callers building
// a closed vocabulary can absorb it up front.
const std::vector<std::string>& context_filler_pool();
const std::vector<std::string>& relation_filler_pool();

// A fact prompt ready for the model: tokens of (context ++ " " ++ prompt),
// with the subject span of the question occurrence, the optional attribute
// span inside the context, and the answer's first token.
struct PromptInstance {
    uint64_t instance_id = 0;
    int fact_index = 0;
    std::string setting; // "vanilla" or "rag"

    std::string prompt_text;
    std::string subject;
    std::string answer_text;
    std::pair<int, int> subject_char_span{0, 0}; // into prompt_text
    std::optional<ContextBlock> context;

    std::vector<int> token_ids;
    TokenSpan subject_token_span{0, 0};
    std::optional<TokenSpan> attribute_token_span;
    int last_token_index = 0;
    int answer_first_token = 0;
};

// Tokenizes and aligns spans. Throws DataError if the sequence exceeds
// max_seq_len or a span cannot be aligned to whole tokens.
PromptInstance build_instance(const FactRecord& record, const std::optional<ContextBlock>& context,
                              const Tokenizer& tokenizer, int max_seq_len);

// Manifest serialization (one JSON object per instance, JSONL on disk).
nlohmann::json instance_to_json(const PromptInstance& instance);
PromptInstance instance_from_json(const nlohmann::json& j);

std::string normalize_whitespace(std::string_view s);

} // namespace ragprobe
