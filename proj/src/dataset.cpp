#include "lire/dataset.hpp"

#include <fstream>
#include <functional>
#include <set>

#include "json.hpp"
#include "lire/errors.hpp"

namespace lire {

using json = nlohmann::json;

namespace {

void for_each_record(const std::filesystem::path& path, const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string(), 0);
    }
    std::string line;
    std::size_t lineno = 0;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t start = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = path.string() + " line " + std::to_string(lineno);
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where + ": " + e.what(), start);
        }
        if (!rec.is_object()) {
            throw FormatError(where + ": record is not an object", start);
        }
        try {
            fn(rec, lineno);
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what(), start);
        } catch (const ContractError& e) {
            throw FormatError(where + ": " + e.what(), start);
        }
    }
}

std::vector<std::string> string_list(const json& rec, const char* key) {
    if (!rec.contains(key)) {
        return {};
    }
    return rec.at(key).get<std::vector<std::string>>();
}

}  // namespace

std::vector<QaExample> read_dataset(const std::filesystem::path& path) {
    std::vector<QaExample> out;
    std::set<std::string> seen;
    for_each_record(path, [&](const json& rec, std::size_t) {
        QaExample ex;
        ex.query_id = rec.at("query_id").get<std::string>();
        ex.question = rec.at("question").get<std::string>();
        ex.image = rec.contains("image") ? rec.at("image").get<std::string>() : std::string();
        ex.answers = string_list(rec, "answers");
        ex.gold_doc_ids = string_list(rec, "gold_doc_ids");
        if (ex.query_id.empty()) {
            throw ContractError("empty query_id");
        }
        if (ex.question.empty()) {
            throw ContractError("empty question for " + ex.query_id);
        }
        if (ex.answers.empty()) {
            throw ContractError("empty answer set for " + ex.query_id);
        }
        if (!seen.insert(ex.query_id).second) {
            throw ContractError("duplicate query_id " + ex.query_id);
        }
        out.push_back(std::move(ex));
    });
    return out;
}

std::vector<KbDocument> read_knowledge_base(const std::filesystem::path& path) {
    std::vector<KbDocument> out;
    std::set<std::string> seen;
    for_each_record(path, [&](const json& rec, std::size_t) {
        KbDocument d{rec.at("doc_id").get<std::string>(), rec.at("text").get<std::string>()};
        if (d.doc_id.empty()) {
            throw ContractError("empty doc_id");
        }
        if (!seen.insert(d.doc_id).second) {
            throw ContractError("duplicate doc_id " + d.doc_id);
        }
        out.push_back(std::move(d));
    });
    return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<QaExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& ex : examples) {
        out << json{{"query_id", ex.query_id},
                    {"question", ex.question},
                    {"image", ex.image},
                    {"answers", ex.answers},
                    {"gold_doc_ids", ex.gold_doc_ids}}
                   .dump()
            << '\n';
    }
    if (!out) {
        throw FormatError("cannot write " + path.string(), 0);
    }
}

void write_knowledge_base(const std::filesystem::path& path, const std::vector<KbDocument>& docs) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& d : docs) {
        out << json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() << '\n';
    }
    if (!out) {
        throw FormatError("cannot write " + path.string(), 0);
    }
}

}  // namespace lire
