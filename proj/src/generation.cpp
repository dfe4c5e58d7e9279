#include "lire/generation.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lire/errors.hpp"
#include "lire/numerics.hpp"

namespace lire {

namespace {

using json = nlohmann::json;

void check_log_prob(double lp, const std::string& what) {
    if (!std::isfinite(lp) || lp > 0.0) {
        throw ContractError(what + ": log-probability must be finite and <= 0, got " + std::to_string(lp));
    }
}

void check_prob(double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ContractError(what + ": probability must be in [0, 1], got " + std::to_string(p));
    }
}

json optional_id(const std::optional<std::string>& id) {
    return id ? json(*id) : json(nullptr);
}

std::optional<std::string> read_optional_id(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return j.at(key).get<std::string>();
}

}  // namespace

MockGenerator::MockGenerator(double default_log_prob, double default_correct_prob)
    : default_log_prob_(default_log_prob), default_correct_prob_(default_correct_prob) {
    check_log_prob(default_log_prob, "default_log_prob");
    check_prob(default_correct_prob, "default_correct_prob");
}

MockGenerator& MockGenerator::set_answer(const std::string& query_id, std::optional<std::string> doc_id,
                                         std::string answer, double log_prob) {
    check_log_prob(log_prob, "answer " + answer);
    answers_[{query_id, std::move(doc_id)}] = {std::move(answer), log_prob};
    return *this;
}

MockGenerator& MockGenerator::set_score(const std::string& query_id, std::optional<std::string> doc_id,
                                        const std::string& answer, double log_prob) {
    check_log_prob(log_prob, "score for " + answer);
    scores_[{query_id, std::move(doc_id), answer}] = log_prob;
    return *this;
}

MockGenerator& MockGenerator::set_reflect(const std::string& query_id, double correct_prob) {
    check_prob(correct_prob, "reflect for " + query_id);
    reflect_[query_id] = correct_prob;
    return *this;
}

Generation MockGenerator::generate(const GenerationContext& context) const {
    auto it = answers_.find({context.query_id, context.doc_id});
    if (it == answers_.end()) {
        return {"", default_log_prob_};
    }
    return it->second;
}

double MockGenerator::score_answer(const GenerationContext& context, const std::string& answer) const {
    if (auto it = scores_.find({context.query_id, context.doc_id, answer}); it != scores_.end()) {
        return it->second;
    }
    if (auto it = answers_.find({context.query_id, context.doc_id}); it != answers_.end() &&
                                                                     it->second.answer == answer) {
        return it->second.log_prob;
    }
    return default_log_prob_;
}

double MockGenerator::reflect(const GenerationContext& context, const std::string&) const {
    if (auto it = reflect_.find(context.query_id); it != reflect_.end()) {
        return it->second;
    }
    return default_correct_prob_;
}

MockGenerator MockGenerator::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open mock table " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        const json j = json::parse(buf.str());
        MockGenerator gen(j.value("default_log_prob", -20.0), j.value("default_correct_prob", 0.5));
        for (const auto& e : j.value("answers", json::array())) {
            gen.set_answer(e.at("query_id").get<std::string>(), read_optional_id(e, "doc_id"),
                           e.at("answer").get<std::string>(), e.at("log_prob").get<double>());
        }
        for (const auto& e : j.value("scores", json::array())) {
            gen.set_score(e.at("query_id").get<std::string>(), read_optional_id(e, "doc_id"),
                          e.at("answer").get<std::string>(), e.at("log_prob").get<double>());
        }
        const json reflect = j.value("reflect", json::object());
        for (const auto& [qid, p] : reflect.items()) {
            gen.set_reflect(qid, p.get<double>());
        }
        return gen;
    } catch (const json::parse_error& e) {
        throw FormatError("mock table " + path.string() + ": " + e.what(), e.byte);
    } catch (const json::exception& e) {
        throw ConfigError("mock table " + path.string() + ": " + e.what());
    }
}

void MockGenerator::save(const std::filesystem::path& path) const {
    json j;
    j["default_log_prob"] = default_log_prob_;
    j["default_correct_prob"] = default_correct_prob_;
    j["answers"] = json::array();
    for (const auto& [key, g] : answers_) {
        j["answers"].push_back(
            {{"query_id", key.first}, {"doc_id", optional_id(key.second)}, {"answer", g.answer}, {"log_prob", g.log_prob}});
    }
    j["scores"] = json::array();
    for (const auto& [key, lp] : scores_) {
        j["scores"].push_back({{"query_id", std::get<0>(key)},
                               {"doc_id", optional_id(std::get<1>(key))},
                               {"answer", std::get<2>(key)},
                               {"log_prob", lp}});
    }
    j["reflect"] = json::object();
    for (const auto& [qid, p] : reflect_) {
        j["reflect"][qid] = p;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write mock table " + path.string());
    }
    out << j.dump(1) << "\n";
}

double rag_loss(const Generator& gen, const GenerationContext& context, const std::string& target) {
    if (target.empty()) {
        throw ContractError("target answer is empty");
    }
    const double lp = gen.score_answer(context, target);
    check_log_prob(lp, "generator score for " + target);
    return -lp;
}

double joint_rag_loss(double retrieval_loss, double rag_loss) {
    return retrieval_loss + rag_loss;
}

std::string sample_target_answer(std::span<const std::string> answers, std::uint64_t seed) {
    std::vector<std::string> distinct;
    std::set<std::string> seen;
    for (const auto& a : answers) {
        if (seen.insert(a).second) {
            distinct.push_back(a);
        }
    }
    if (distinct.empty()) {
        throw ContractError("answer set is empty");
    }
    Rng rng(seed);
    return distinct[rng.uniform_index(distinct.size())];
}

Selection select_answer(std::span<const AnswerCandidate> candidates) {
    if (candidates.empty()) {
        throw ContractError("no answer candidates to select from");
    }
    // Strict total order so the winner does not depend on input order.
    auto better = [](const AnswerCandidate& a, const AnswerCandidate& b) {
        const double ja = a.joint_log_prob();
        const double jb = b.joint_log_prob();
        if (ja != jb) {
            return ja > jb;
        }
        if (a.answer != b.answer) {
            return a.answer < b.answer;
        }
        if (a.doc_id != b.doc_id) {
            return a.doc_id < b.doc_id;
        }
        return a.generation_log_prob > b.generation_log_prob;
    };
    const AnswerCandidate* best = &candidates.front();
    for (const auto& c : candidates.subspan(1)) {
        if (better(c, *best)) {
            best = &c;
        }
    }
    return {best->answer, *best};
}

}  // namespace lire
