#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"
#include "lire/errors.hpp"
#include "lire/remote_generator.hpp"

using namespace lire;
using nlohmann::json;

namespace {

class StubServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    explicit StubServer(Handler h) : handler_(std::move(h)) {
        server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            handler_(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/generate"; }
    int hits() const { return hits_; }

private:
    Handler handler_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<int> hits_{0};
};

void reply(const httplib::Request& req, httplib::Response& res, const json& body) {
    res.set_header("X-Request-Id", req.get_header_value("X-Request-Id"));
    res.set_content(body.dump(), "application/json");
}

RemoteGeneratorConfig config_for(const StubServer& s, int retries = 0, int timeout_ms = 2000) {
    RemoteGeneratorConfig c;
    c.endpoint = s.endpoint();
    c.retries = retries;
    c.timeout_ms = timeout_ms;
    return c;
}

GenerationContext context() {
    return {"q1", "what is shown?", "img-7", std::nullopt, std::nullopt};
}

}  // namespace

TEST(RemoteConfig, Validation) {
    RemoteGeneratorConfig c;
    c.endpoint = "https://example.org";
    EXPECT_THROW(c.validate(), ConfigError);
    c.endpoint = "http://127.0.0.1:1/x";
    c.timeout_ms = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RemoteGenerator, RequestFormat) {
    GenerationContext c = context();
    c.document = "some passage";
    c.doc_id = "d1";
    const json j = RemoteGenerator::make_request("score", c, std::string("cat"));
    EXPECT_EQ(j, json::parse(R"({"mode":"score","question":"what is shown?","image":"img-7",
                                 "document":"some passage","answer":"cat"})"));
    const json g = RemoteGenerator::make_request("generate", context(), std::nullopt);
    EXPECT_TRUE(g.at("document").is_null());
    EXPECT_TRUE(g.at("answer").is_null());
}

TEST(RemoteGenerator, WiringAgainstStub) {
    std::mutex mu;
    std::vector<json> seen;
    std::string auth;
    StubServer s([&](const httplib::Request& req, httplib::Response& res) {
        const json body = json::parse(req.body);
        {
            std::lock_guard lock(mu);
            seen.push_back(body);
            auth = req.get_header_value("Authorization");
        }
        EXPECT_EQ(req.get_header_value("Content-Type"), "application/json");
        const std::string mode = body.at("mode");
        if (mode == "generate") {
            reply(req, res, {{"answer", "a cat"}, {"log_prob", -0.25}, {"correct_prob", nullptr}, {"error", nullptr}});
        } else if (mode == "score") {
            reply(req, res, {{"answer", nullptr}, {"log_prob", -1.5}, {"correct_prob", nullptr}, {"error", nullptr}});
        } else {
            reply(req, res, {{"answer", nullptr}, {"log_prob", 0.0}, {"correct_prob", 0.8}, {"error", nullptr}});
        }
    });
    auto cfg = config_for(s);
    cfg.auth_token = "secret";
    RemoteGenerator gen(cfg);
    const auto g = gen.generate(context());
    EXPECT_EQ(g.answer, "a cat");
    EXPECT_EQ(g.log_prob, -0.25);
    EXPECT_EQ(gen.score_answer(context(), "a cat"), -1.5);
    EXPECT_EQ(gen.reflect(context(), "a cat"), 0.8);
    ASSERT_EQ(seen.size(), 3u);
    EXPECT_EQ(seen[0].at("mode"), "generate");
    EXPECT_EQ(seen[1].at("answer"), "a cat");
    EXPECT_EQ(seen[2].at("mode"), "reflect");
    EXPECT_EQ(auth, "Bearer secret");
}

TEST(RemoteGenerator, RetriesServerErrorThenSucceeds) {
    std::atomic<int> calls{0};
    StubServer s([&](const httplib::Request& req, httplib::Response& res) {
        if (calls++ == 0) {
            res.status = 500;
            return;
        }
        reply(req, res, {{"answer", "ok"}, {"log_prob", -0.1}});
    });
    RemoteGenerator gen(config_for(s, 1));
    EXPECT_EQ(gen.generate(context()).answer, "ok");
    EXPECT_EQ(s.hits(), 2);
}

TEST(RemoteGenerator, ServerErrorsExhaustRetries) {
    StubServer s([&](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    RemoteGenerator gen(config_for(s, 2));
    EXPECT_THROW(gen.generate(context()), ProtocolError);
    EXPECT_EQ(s.hits(), 3);
}

TEST(RemoteGenerator, MalformedJsonIsProtocolErrorWithoutRetry) {
    StubServer s([&](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"answer\": ", "application/json");
    });
    RemoteGenerator gen(config_for(s, 3));
    EXPECT_THROW(gen.generate(context()), ProtocolError);
    EXPECT_EQ(s.hits(), 1);
}

TEST(RemoteGenerator, ClientErrorsAndBadPayloads) {
    int mode = 0;
    StubServer s([&](const httplib::Request& req, httplib::Response& res) {
        switch (mode) {
            case 0:
                res.status = 404;
                break;
            case 1:
                reply(req, res, {{"error", "model overloaded"}, {"log_prob", 0}});
                break;
            case 2:
                reply(req, res, {{"answer", "x"}, {"log_prob", 0.5}});
                break;
            case 3:
                reply(req, res, {{"correct_prob", 1.5}, {"log_prob", 0}});
                break;
            case 4:
                res.set_header("X-Request-Id", "not-mine");
                res.set_content(json{{"answer", "x"}, {"log_prob", -1}}.dump(), "application/json");
                break;
            default:
                reply(req, res, json::array({1, 2}));
        }
    });
    RemoteGenerator gen(config_for(s, 2));
    for (mode = 0; mode < 6; ++mode) {
        const int before = s.hits();
        if (mode == 3) {
            EXPECT_THROW(gen.reflect(context(), "x"), ProtocolError) << mode;
        } else {
            EXPECT_THROW(gen.generate(context()), ProtocolError) << mode;
        }
        EXPECT_EQ(s.hits() - before, 1) << "no retry for mode " << mode;
    }
}

TEST(RemoteGenerator, TimeoutIsDistinct) {
    StubServer s([&](const httplib::Request& req, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        reply(req, res, {{"answer", "late"}, {"log_prob", -1}});
    });
    RemoteGenerator gen(config_for(s, 1, 150));
    try {
        gen.generate(context());
        FAIL() << "expected timeout";
    } catch (const TimeoutError&) {
        SUCCEED();
    } catch (const std::exception& e) {
        FAIL() << "wrong error type: " << e.what();
    }
    EXPECT_EQ(s.hits(), 2);
}

TEST(RemoteGenerator, ConnectionRefused) {
    // Grab a free port, then close it so nothing is listening.
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const int port = ntohs(addr.sin_port);
    ::close(fd);
    RemoteGeneratorConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/generate";
    c.retries = 1;
    c.timeout_ms = 500;
    RemoteGenerator gen(c);
    EXPECT_THROW(gen.generate(context()), ConnectionError);
}

TEST(RemoteGenerator, BoundsConcurrentRequests) {
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
    StubServer s([&](const httplib::Request& req, httplib::Response& res) {
        const int now = ++in_flight;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(40));
        --in_flight;
        const json body = json::parse(req.body);
        reply(req, res, {{"answer", body.at("question")}, {"log_prob", -1}});
    });
    auto cfg = config_for(s);
    cfg.max_in_flight = 2;
    RemoteGenerator gen(cfg);
    std::vector<std::thread> workers;
    std::vector<std::string> answers(8);
    for (int i = 0; i < 8; ++i) {
        workers.emplace_back([&, i] {
            GenerationContext c = context();
            c.question = "q" + std::to_string(i);
            answers[static_cast<std::size_t>(i)] = gen.generate(c).answer;
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    for (int i = 0; i < 8; ++i) {
        EXPECT_EQ(answers[static_cast<std::size_t>(i)], "q" + std::to_string(i));
    }
    EXPECT_LE(peak.load(), 2);
    EXPECT_EQ(s.hits(), 8);
}
