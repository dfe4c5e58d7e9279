#pragma once

#include <span>
#include <string>
#include <string_view>

namespace lire {

// Lowercase, trim, collapse whitespace, strip punctuation at the edges of
// each word, and drop the standalone articles "a", "an", "the".
std::string normalize_answer(std::string_view s);

// Lowercase and collapse whitespace runs; used on retrieved passages.
std::string normalize_passage(std::string_view s);

// Occurrences of the normalized answer among the normalized references.
std::size_t answer_count(std::string_view answer, std::span<const std::string> references);

// min(count, 1).
int exact_match(std::string_view answer, std::span<const std::string> references);

// min(count / 3, 1).
double vqa_score(std::string_view answer, std::span<const std::string> references);

// 1 when any normalized reference answer is a substring of any retrieved
// passage. References that normalize to the empty string never match.
int prr_at_k(std::span<const std::string> retrieved_texts, std::span<const std::string> references);

}  // namespace lire
