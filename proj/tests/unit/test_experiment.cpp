#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lire/errors.hpp"
#include "lire/experiment.hpp"
#include "planted.hpp"

using namespace lire;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class PlantedRun : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("lire_exp_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    json base_config() const {
        return {{"dataset", "qa.jsonl"},
                {"knowledge_base", "kb.jsonl"},
                {"encoder", {{"dim", 32}, {"seed", 7}}},
                {"head", {{"train", {{"steps", 100}, {"batch_size", 8}, {"learning_rate", 0.3}, {"seed", 1}}}}},
                {"index", {{"num_centroids", 16}, {"kmeans_iters", 10}, {"n_probe", 16}, {"seed", 3}}},
                {"k", 5},
                {"generator", {{"mock_table", "mock.json"}}},
                {"output_dir", "out"}};
    }

    ExperimentConfig write(const planted::MockOptions& opts, const json& config) {
        const auto corpus = planted::make_corpus();
        planted::write_corpus(dir, corpus, planted::make_mock(corpus, opts));
        std::ofstream(dir / "config.json") << config.dump(2);
        return ExperimentConfig::from_file(dir / "config.json");
    }
};

}  // namespace

TEST(MetricsReportJson, RoundtripAndKeyOrder) {
    MetricsReport r;
    r.n_questions = 3;
    r.em_mean = 2.0 / 3.0;
    r.vqa_mean = 0.5;
    r.retrieval_trigger_rate = 1.0 / 3.0;
    r.prr_at_k = {{1, 0.25}, {10, 1.0}, {2, 0.5}};
    const auto j = r.to_json();
    EXPECT_EQ(MetricsReport::from_json(json::parse(j.dump())), r);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) {
        keys.push_back(k);
    }
    EXPECT_EQ(keys, (std::vector<std::string>{"n_questions", "em_mean", "vqa_mean", "retrieval_trigger_rate",
                                              "prr_at_k"}));
    EXPECT_THROW(MetricsReport::from_json(json{{"em_mean", 1}}), FormatError);
}

TEST(ExperimentConfigTest, ParsingAndValidation) {
    const json j = {{"dataset", "qa.jsonl"},
                    {"knowledge_base", "/abs/kb.jsonl"},
                    {"head", {{"checkpoint", "h.lirh"}}},
                    {"index", {{"dir", "idx"}, {"num_centroids", 4}}},
                    {"k", 3},
                    {"threshold", 0.7},
                    {"generator", {{"remote", {{"endpoint", "http://127.0.0.1:9/v1/generate"}, {"retries", 1}}}}},
                    {"prr_ks", {1, 3}},
                    {"output_dir", "o"}};
    const auto c = ExperimentConfig::from_json(j, "/base");
    EXPECT_EQ(c.dataset, fs::path("/base/qa.jsonl"));
    EXPECT_EQ(c.knowledge_base, fs::path("/abs/kb.jsonl"));
    EXPECT_EQ(c.head_checkpoint, fs::path("/base/h.lirh"));
    EXPECT_EQ(c.index_dir, fs::path("/base/idx"));
    EXPECT_EQ(c.index.num_centroids, 4u);
    EXPECT_EQ(c.k, 3u);
    EXPECT_EQ(c.threshold, 0.7);
    ASSERT_TRUE(c.remote.has_value());
    EXPECT_EQ(c.remote->retries, 1);
    EXPECT_FALSE(c.mock_table.has_value());
    EXPECT_EQ(c.prr_ks, (std::vector<std::size_t>{1, 3}));
    EXPECT_NO_THROW(c.validate());

    auto both = c;
    both.mock_table = "m.json";
    EXPECT_THROW(both.validate(), ConfigError);
    auto none = c;
    none.remote.reset();
    EXPECT_THROW(none.validate(), ConfigError);
    auto half = c;
    half.query_embeddings = "q.lire";
    EXPECT_THROW(half.validate(), ConfigError);

    EXPECT_THROW(ExperimentConfig::from_json(json{{"dataset", 3}}, "/"), ConfigError);
    EXPECT_THROW(ExperimentConfig::from_file("/nonexistent/lire/config.json"), ConfigError);
}

TEST_F(PlantedRun, ClosedGateKeepsSelfAnswer) {
    planted::MockOptions o;
    o.reflect_prob = 1.0;
    o.self_correct = true;
    const auto cfg = write(o, base_config());
    const auto report = run_experiment(cfg);
    EXPECT_EQ(report.n_questions, 50u);
    EXPECT_EQ(report.retrieval_trigger_rate, 0.0);
    EXPECT_EQ(report.em_mean, 1.0);
    EXPECT_EQ(report.vqa_mean, 1.0);

    std::ifstream traces(dir / "out" / "traces.jsonl");
    std::string line;
    std::size_t n = 0;
    std::string prev;
    while (std::getline(traces, line)) {
        const auto t = ReflectiveTrace::from_json(json::parse(line));
        EXPECT_FALSE(t.retrieval_triggered);
        EXPECT_EQ(t.final_answer, t.self_answer);
        EXPECT_TRUE(t.retrieved_doc_ids.empty());
        EXPECT_LT(prev, t.query_id);
        prev = t.query_id;
        ++n;
    }
    EXPECT_EQ(n, 50u);
}

TEST_F(PlantedRun, OpenGateRetrievesGold) {
    planted::MockOptions o;
    o.gold_dominant = true;
    const auto cfg = write(o, base_config());
    const auto p = prepare_pipeline(cfg);
    ASSERT_FALSE(p.train_loss_trace.empty());
    EXPECT_LT(p.train_loss_trace.back(), p.train_loss_trace.front());
    const auto result = evaluate_pipeline(p, cfg.prr_ks);
    EXPECT_EQ(result.report.retrieval_trigger_rate, 1.0);
    EXPECT_EQ(result.report.em_mean, 1.0);
    EXPECT_EQ(result.report.prr_at_k.at(5), 1.0);
    double prev = 0.0;
    for (const auto& [k, v] : result.report.prr_at_k) {
        EXPECT_GE(v, prev) << k;
        prev = v;
    }
    for (const auto& t : result.traces) {
        EXPECT_TRUE(t.retrieval_triggered);
        EXPECT_EQ(t.retrieved_doc_ids.size(), 5u);
    }
    const auto t = answer_question(p, p.examples[3]);
    EXPECT_EQ(t.final_answer, planted::answer_word(3));
}

TEST_F(PlantedRun, RerunsAreByteIdentical) {
    planted::MockOptions o;
    o.gold_dominant = true;
    o.reflect_prob = 0.3;
    auto cfg = write(o, base_config());
    cfg.output_dir = dir / "a";
    run_experiment(cfg);
    cfg.output_dir = dir / "b";
    run_experiment(cfg);
    EXPECT_EQ(slurp(dir / "a" / "metrics.json"), slurp(dir / "b" / "metrics.json"));
    EXPECT_EQ(slurp(dir / "a" / "traces.jsonl"), slurp(dir / "b" / "traces.jsonl"));
    EXPECT_FALSE(slurp(dir / "a" / "traces.jsonl").empty());
}

TEST_F(PlantedRun, FailuresNameStageAndLeaveNoOutputs) {
    auto expect_stage = [&](ExperimentConfig cfg, const std::string& stage) {
        cfg.output_dir = dir / ("out_" + stage);
        try {
            run_experiment(cfg);
            FAIL() << "expected failure in " << stage;
        } catch (const StageError& e) {
            EXPECT_EQ(e.stage(), stage) << e.what();
        }
        EXPECT_FALSE(fs::exists(cfg.output_dir)) << stage;
    };
    const auto good = write(planted::MockOptions{}, base_config());

    auto c = good;
    c.dataset = dir / "missing.jsonl";
    expect_stage(c, "dataset");

    std::ofstream(dir / "broken.json") << "{not json";
    c = good;
    c.mock_table = dir / "broken.json";
    expect_stage(c, "generator");

    c = good;
    c.head_train.reset();
    c.head_checkpoint = dir / "nohead.lirh";
    expect_stage(c, "head");

    c = good;
    c.query_embeddings = dir / "q.lire";
    c.doc_embeddings = dir / "d.lire";
    expect_stage(c, "embeddings");

    c = good;
    c.k = 0;
    expect_stage(c, "config");

    fs::create_directories(dir / "idx");
    std::ofstream(dir / "idx" / "meta.json") << "[]";
    c = good;
    c.index_dir = dir / "idx";
    expect_stage(c, "index");
}
