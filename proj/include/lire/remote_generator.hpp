#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "lire/generation.hpp"

namespace lire {

struct RemoteGeneratorConfig {
    std::string endpoint;  // http://host:port/path
    int timeout_ms = 10000;
    int retries = 2;
    std::optional<std::string> auth_token;
    int max_in_flight = 8;

    void validate() const;
};

// Generator served over HTTP. Each call POSTs one JSON request:
//   {"mode": "generate"|"score"|"reflect", "question", "image",
//    "document": str|null, "answer": str|null}
// and expects
//   {"answer": str|null, "log_prob": number, "correct_prob": number|null, "error": str|null}
//
// Timeouts, connection failures, and 5xx responses are retried up to
// `retries` times. Other non-2xx statuses, malformed bodies, and
// server-reported errors raise ProtocolError without retrying.
class RemoteGenerator : public Generator {
public:
    explicit RemoteGenerator(RemoteGeneratorConfig config);
    ~RemoteGenerator() override;

    Generation generate(const GenerationContext& context) const override;
    double score_answer(const GenerationContext& context, const std::string& answer) const override;
    double reflect(const GenerationContext& context, const std::string& answer) const override;

    static nlohmann::json make_request(std::string_view mode, const GenerationContext& context,
                                       const std::optional<std::string>& answer);

private:
    nlohmann::json call(std::string_view mode, const GenerationContext& context,
                        const std::optional<std::string>& answer) const;

    struct Limiter;

    RemoteGeneratorConfig config_;
    std::string host_;  // scheme://host:port
    std::string path_;
    std::unique_ptr<Limiter> limiter_;
    mutable std::atomic<std::uint64_t> next_request_id_{1};
};

}  // namespace lire
