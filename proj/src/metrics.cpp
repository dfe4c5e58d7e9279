#include "lire/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <vector>

#include "lire/errors.hpp"

namespace lire {

namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

bool is_punct(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

std::vector<std::string> lowercase_words(std::string_view s) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : s) {
        if (is_space(c)) {
            if (!cur.empty()) {
                words.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) {
        words.push_back(std::move(cur));
    }
    return words;
}

void require_references(std::span<const std::string> references) {
    if (references.empty()) {
        throw ContractError("reference answer set is empty");
    }
}

}  // namespace

std::string normalize_answer(std::string_view s) {
    std::string out;
    for (auto& word : lowercase_words(s)) {
        std::size_t b = 0;
        std::size_t e = word.size();
        while (b < e && is_punct(word[b])) {
            ++b;
        }
        while (e > b && is_punct(word[e - 1])) {
            --e;
        }
        const std::string_view core(word.data() + b, e - b);
        if (core.empty() || core == "a" || core == "an" || core == "the") {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(core);
    }
    return out;
}

std::string normalize_passage(std::string_view s) {
    std::string out;
    for (const auto& word : lowercase_words(s)) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(word);
    }
    return out;
}

std::size_t answer_count(std::string_view answer, std::span<const std::string> references) {
    const std::string a = normalize_answer(answer);
    return static_cast<std::size_t>(std::count_if(references.begin(), references.end(),
                                                  [&](const std::string& r) { return normalize_answer(r) == a; }));
}

int exact_match(std::string_view answer, std::span<const std::string> references) {
    require_references(references);
    return answer_count(answer, references) > 0 ? 1 : 0;
}

double vqa_score(std::string_view answer, std::span<const std::string> references) {
    require_references(references);
    return std::min(static_cast<double>(answer_count(answer, references)) / 3.0, 1.0);
}

int prr_at_k(std::span<const std::string> retrieved_texts, std::span<const std::string> references) {
    std::vector<std::string> needles;
    for (const auto& r : references) {
        auto n = normalize_answer(r);
        if (!n.empty()) {
            needles.push_back(std::move(n));
        }
    }
    for (const auto& text : retrieved_texts) {
        const std::string hay = normalize_passage(text);
        for (const auto& n : needles) {
            if (hay.find(n) != std::string::npos) {
                return 1;
            }
        }
    }
    return 0;
}

}  // namespace lire
