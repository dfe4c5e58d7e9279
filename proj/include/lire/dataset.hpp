#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lire {

// One line of a dataset file:
//   {"query_id", "question", "image", "answers": [...], "gold_doc_ids": [...]}
// `answers` is a multiset; repeats count toward the VQA score.
struct QaExample {
    std::string query_id;
    std::string question;
    std::string image;
    std::vector<std::string> answers;
    std::vector<std::string> gold_doc_ids;

    bool operator==(const QaExample&) const = default;
};

// One line of a knowledge-base file: {"doc_id", "text"}.
struct KbDocument {
    std::string doc_id;
    std::string text;

    bool operator==(const KbDocument&) const = default;
};

// Blank lines are skipped. Malformed records, empty questions or answer
// sets, and duplicate ids raise FormatError naming the 1-based line.
std::vector<QaExample> read_dataset(const std::filesystem::path& path);
std::vector<KbDocument> read_knowledge_base(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& path, const std::vector<QaExample>& examples);
void write_knowledge_base(const std::filesystem::path& path, const std::vector<KbDocument>& docs);

}  // namespace lire
