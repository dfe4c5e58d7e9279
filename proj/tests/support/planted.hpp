#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lire/dataset.hpp"
#include "lire/embeddings.hpp"
#include "lire/generation.hpp"
#include "lire/retrieval.hpp"

namespace planted {

// Query i shares three keywords with its gold document i and asks for the
// answer word that only document i contains. Every distractor document
// carries one keyword of some query as a hard negative.
struct Corpus {
    std::vector<lire::QaExample> examples;
    std::vector<lire::KbDocument> kb;
    lire::ToyEncoderConfig encoder;

    std::vector<lire::TrainingPair> training_pairs() const;
    std::vector<lire::DocumentEmbedding> doc_embeddings() const;
    lire::QueryEmbedding query_embedding(std::size_t i) const;
};

Corpus make_corpus(std::size_t n_docs = 200, std::size_t n_queries = 50, std::uint64_t seed = 7,
                   std::size_t dim = 32);

std::string answer_word(std::size_t i);

struct MockOptions {
    double reflect_prob = 0.0;
    bool self_correct = false;   // self-answer is the gold answer
    bool gold_dominant = false;  // gold doc's answer beats every distractor by a wide margin
};

// Answers for every (query, document) pair plus the no-document self-answer.
// Distractor answers get log-probabilities spread over [-4, -1]; the gold
// answer sits at -2 unless gold_dominant.
lire::MockGenerator make_mock(const Corpus& corpus, const MockOptions& options);

// Pairs of random unit-row queries and documents with distinct doc ids.
lire::TrainBatch random_batch(lire::Rng& rng, std::size_t pairs, std::size_t h, std::size_t max_query_tokens,
                              std::size_t max_doc_tokens);

// Writes qa.jsonl, kb.jsonl, mock.json into dir.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, const lire::MockGenerator& mock);

}  // namespace planted
