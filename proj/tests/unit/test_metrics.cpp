#include <gtest/gtest.h>

#include "lire/errors.hpp"
#include "lire/metrics.hpp"
#include "lire/numerics.hpp"

using namespace lire;
using S = std::vector<std::string>;

TEST(NormalizeAnswer, Rules) {
    EXPECT_EQ(normalize_answer(" The  Dog! "), "dog");
    EXPECT_EQ(normalize_answer("New York"), "new york");
    EXPECT_EQ(normalize_answer("a-frame"), "a-frame");
    EXPECT_EQ(normalize_answer("An apple, a day"), "apple day");
    EXPECT_EQ(normalize_answer("\t\"quoted\"\n"), "quoted");
    EXPECT_EQ(normalize_answer("the"), "");
    EXPECT_EQ(normalize_answer(""), "");
    EXPECT_EQ(normalize_answer("U.S.A."), "u.s.a");
}

TEST(ExactMatch, Examples) {
    EXPECT_EQ(exact_match("dog", S{"dog", "dog", "cat"}), 1);
    EXPECT_EQ(exact_match("fish", S{"dog", "dog", "cat"}), 0);
    EXPECT_EQ(exact_match("Dog", S{"dog"}), 1);
    EXPECT_THROW(exact_match("dog", S{}), ContractError);
}

TEST(VqaScore, Examples) {
    EXPECT_EQ(vqa_score("dog", S{"dog", "dog", "dog", "cat"}), 1.0);
    EXPECT_EQ(vqa_score("dog", S{"dog", "dog", "dog", "dog", "dog"}), 1.0);
    EXPECT_EQ(vqa_score("dog", S{"dog", "dog", "cat"}), 2.0 / 3.0);
    EXPECT_EQ(vqa_score("dog", S{"dog", "cat"}), 1.0 / 3.0);
    EXPECT_EQ(vqa_score("fish", S{"dog"}), 0.0);
    EXPECT_EQ(vqa_score(" THE dog.", S{"dog", "Dog", "a dog"}), 1.0);
    EXPECT_THROW(vqa_score("dog", S{}), ContractError);
}

TEST(Prr, Examples) {
    EXPECT_EQ(prr_at_k(S{"The tower stands in Paris, the capital."}, S{"paris"}), 1);
    EXPECT_EQ(prr_at_k(S{"nothing here", "nor here"}, S{"paris"}), 0);
    EXPECT_EQ(prr_at_k(S{"Pack your ski poles are best"}, S{"ski pole"}), 1);
    EXPECT_EQ(prr_at_k(S{"new\n  york city"}, S{"New York"}), 1);
    EXPECT_EQ(prr_at_k(S{}, S{"x"}), 0);
    EXPECT_EQ(prr_at_k(S{"the cat"}, S{"the"}), 0);
}

TEST(Prr, MonotoneInK) {
    const S ranked{"alpha", "beta", "gamma has paris", "delta", "paris again"};
    int prev = 0;
    for (std::size_t k = 1; k <= ranked.size(); ++k) {
        const int v = prr_at_k(std::span(ranked).first(k), S{"paris"});
        EXPECT_GE(v, prev);
        prev = v;
    }
    EXPECT_EQ(prev, 1);
}

TEST(Metrics, FuzzedInvariants) {
    Rng rng(7);
    const S words{"dog", "Dog", " dog ", "the dog", "cat", "a cat!", "fish", "New York", "new  york"};
    for (int i = 0; i < 5000; ++i) {
        S refs;
        for (std::size_t j = 0, n = 1 + rng.uniform_index(10); j < n; ++j) {
            refs.push_back(words[rng.uniform_index(words.size())]);
        }
        const std::string a = words[rng.uniform_index(words.size())];
        const double v = vqa_score(a, refs);
        const int e = exact_match(a, refs);
        EXPECT_LE(v, static_cast<double>(e));
        EXPECT_GE(v, 0.0);
        // Case and surrounding whitespace never matter.
        std::string shouty;
        for (char c : a) {
            shouty.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        }
        EXPECT_EQ(exact_match("  " + shouty + "\t", refs), e);
        EXPECT_EQ(vqa_score("  " + shouty + "\t", refs), v);
    }
}
