#include "lire/remote_generator.hpp"

#include <chrono>
#include <cmath>
#include <semaphore>

#include "httplib.h"
#include "lire/errors.hpp"

namespace lire {

using json = nlohmann::json;

struct RemoteGenerator::Limiter {
    explicit Limiter(int n) : slots(n) {}
    std::counting_semaphore<1024> slots;
};

namespace {

class SlotGuard {
public:
    explicit SlotGuard(std::counting_semaphore<1024>& s) : s_(s) { s_.acquire(); }
    ~SlotGuard() { s_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    std::counting_semaphore<1024>& s_;
};

// Retryable failures are remembered; the last one is rethrown once attempts run out.
enum class Failure { None, Timeout, Connection, ServerError };

}  // namespace

void RemoteGeneratorConfig::validate() const {
    if (endpoint.rfind("http://", 0) != 0) {
        throw ConfigError("remote endpoint must be an http:// URL, got " + endpoint);
    }
    if (timeout_ms <= 0) {
        throw ConfigError("remote timeout must be positive");
    }
    if (retries < 0) {
        throw ConfigError("retry count must be non-negative");
    }
    if (max_in_flight < 1 || max_in_flight > 1024) {
        throw ConfigError("max_in_flight must be in [1, 1024]");
    }
}

RemoteGenerator::RemoteGenerator(RemoteGeneratorConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto scheme_end = config_.endpoint.find("://") + 3;
    const auto slash = config_.endpoint.find('/', scheme_end);
    host_ = config_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
    limiter_ = std::make_unique<Limiter>(config_.max_in_flight);
}

RemoteGenerator::~RemoteGenerator() = default;

json RemoteGenerator::make_request(std::string_view mode, const GenerationContext& context,
                                   const std::optional<std::string>& answer) {
    return {{"mode", mode},
            {"question", context.question},
            {"image", context.image},
            {"document", context.document ? json(*context.document) : json(nullptr)},
            {"answer", answer ? json(*answer) : json(nullptr)}};
}

json RemoteGenerator::call(std::string_view mode, const GenerationContext& context,
                           const std::optional<std::string>& answer) const {
    const std::string body = make_request(mode, context, answer).dump();
    const std::string request_id = std::to_string(next_request_id_.fetch_add(1));
    SlotGuard slot(limiter_->slots);

    Failure last = Failure::None;
    std::string last_detail;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        httplib::Client client(host_);
        const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers{{"X-Request-Id", request_id}};
        if (config_.auth_token) {
            headers.emplace("Authorization", "Bearer " + *config_.auth_token);
        }

        const auto started = std::chrono::steady_clock::now();
        auto res = client.Post(path_, headers, body, "application/json");
        const auto elapsed = std::chrono::steady_clock::now() - started;

        if (!res) {
            const auto err = res.error();
            const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                                   (err == httplib::Error::Read && elapsed >= timeout * 9 / 10);
            last = timed_out ? Failure::Timeout : Failure::Connection;
            last_detail = httplib::to_string(err);
            continue;
        }
        if (res->status >= 500) {
            last = Failure::ServerError;
            last_detail = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            throw ProtocolError("generator service returned HTTP " + std::to_string(res->status));
        }
        if (res->has_header("X-Request-Id") && res->get_header_value("X-Request-Id") != request_id) {
            throw ProtocolError("response correlation id " + res->get_header_value("X-Request-Id") +
                                " does not match request " + request_id);
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw ProtocolError(std::string("malformed response body: ") + e.what());
        }
        if (!reply.is_object()) {
            throw ProtocolError("response body is not a JSON object");
        }
        if (reply.contains("error") && !reply["error"].is_null()) {
            throw ProtocolError("generator service error: " + reply["error"].dump());
        }
        return reply;
    }
    const std::string where = " after " + std::to_string(config_.retries + 1) + " attempt(s) to " + config_.endpoint;
    switch (last) {
        case Failure::Timeout:
            throw TimeoutError("request timed out" + where + " (" + last_detail + ")");
        case Failure::Connection:
            throw ConnectionError("connection failed" + where + " (" + last_detail + ")");
        default:
            throw ProtocolError("server error" + where + " (" + last_detail + ")");
    }
}

namespace {

double read_log_prob(const json& reply) {
    if (!reply.contains("log_prob") || !reply["log_prob"].is_number()) {
        throw ProtocolError("response lacks numeric log_prob");
    }
    const double lp = reply["log_prob"].get<double>();
    if (!std::isfinite(lp) || lp > 0.0) {
        throw ProtocolError("response log_prob must be finite and <= 0");
    }
    return lp;
}

}  // namespace

Generation RemoteGenerator::generate(const GenerationContext& context) const {
    const json reply = call("generate", context, std::nullopt);
    if (!reply.contains("answer") || !reply["answer"].is_string()) {
        throw ProtocolError("generate response lacks a string answer");
    }
    return {reply["answer"].get<std::string>(), read_log_prob(reply)};
}

double RemoteGenerator::score_answer(const GenerationContext& context, const std::string& answer) const {
    return read_log_prob(call("score", context, answer));
}

double RemoteGenerator::reflect(const GenerationContext& context, const std::string& answer) const {
    const json reply = call("reflect", context, answer);
    if (!reply.contains("correct_prob") || !reply["correct_prob"].is_number()) {
        throw ProtocolError("reflect response lacks numeric correct_prob");
    }
    const double p = reply["correct_prob"].get<double>();
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ProtocolError("reflect response correct_prob outside [0, 1]");
    }
    return p;
}

}  // namespace lire
