#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "rise/remote.hpp"
#include "support/fixtures.hpp"

using namespace rise;

namespace {

class LocalServer {
 public:
  LocalServer() {
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }
  ~LocalServer() {
    svr_.stop();
    thread_.join();
  }
  httplib::Server& server() { return svr_; }
  std::string url(const std::string& path = "/v1/chat/completions") const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server svr_;
  int port_ = 0;
  std::thread thread_;
};

GenerationRequest request() {
  GenerationRequest r{"s1", "synth://a+b", "describe it", PromptStage::Reasoning};
  r.seed = 5;
  return r;
}

RemoteConfig config(const std::string& url) {
  RemoteConfig c;
  c.endpoint = url;
  c.model = "test-model";
  c.timeout = std::chrono::seconds(5);
  return c;
}

}  // namespace

TEST(Endpoint, Parsing) {
  auto e = parse_endpoint("https://api.example.com:8443/v1/chat");
  EXPECT_EQ(e.scheme_host_port, "https://api.example.com:8443");
  EXPECT_EQ(e.path, "/v1/chat");
  EXPECT_EQ(parse_endpoint("http://host").path, "/");
  EXPECT_THROW(parse_endpoint("ftp://host/x"), Error);
  EXPECT_THROW(parse_endpoint("host/x"), Error);
  EXPECT_THROW(parse_endpoint("http:///x"), Error);
}

TEST(RequestBody, ImageAndTextParts) {
  auto body = chat_request_body("m", request());
  EXPECT_EQ(body["model"], "m");
  const auto& content = body["messages"][0]["content"];
  ASSERT_EQ(content.size(), 2u);
  EXPECT_EQ(content[0]["image_url"]["url"], "synth://a+b");
  EXPECT_EQ(content[1]["text"], "describe it");
  EXPECT_EQ(body["seed"], 5);
  auto r = request();
  r.image_ref.clear();
  r.seed.reset();
  auto plain = chat_request_body("m", r);
  EXPECT_EQ(plain["messages"][0]["content"].size(), 1u);
  EXPECT_FALSE(plain.contains("seed"));
}

TEST(Remote, SuccessAndLedger) {
  LocalServer s;
  std::string seen_auth, seen_body;
  s.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(R"({"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}})",
                    "application/json");
  });
  fx::TempDir tmp("remote");
  ::setenv("RISE_TEST_TOKEN", "sekrit", 1);
  auto cfg = config(s.url());
  cfg.auth_env = "RISE_TEST_TOKEN";
  cfg.ledger_path = tmp / "ledger.jsonl";
  RemoteBackend b(cfg);
  EXPECT_EQ(b.generate(request()), "hello");
  EXPECT_EQ(seen_auth, "Bearer sekrit");
  EXPECT_NE(seen_body.find("test-model"), std::string::npos);
  EXPECT_FALSE(b.deterministic());

  auto line = nlohmann::json::parse(fx::slurp(cfg.ledger_path));
  EXPECT_EQ(line["sample_id"], "s1");
  EXPECT_EQ(line["stage"], "reasoning");
  EXPECT_EQ(line["attempt"], 1);
  EXPECT_EQ(line["ok"], true);
  EXPECT_EQ(line["prompt_tokens"], 7);
  EXPECT_EQ(line["prompt_sha256"], sha256_hex("describe it"));
  EXPECT_EQ(line["completion"], "hello");
}

TEST(Remote, LegacyTextField) {
  LocalServer s;
  s.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"text":"legacy"}]})", "application/json");
  });
  EXPECT_EQ(RemoteBackend(config(s.url())).generate(request()), "legacy");
}

TEST(Remote, AuthFailureIsNotRetried) {
  LocalServer s;
  std::atomic<int> calls{0};
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
  });
  int sleeps = 0;
  RemoteBackend b(config(s.url()), [&](std::chrono::milliseconds) { ++sleeps; });
  try {
    b.generate(request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, ErrorKind::AuthFailure);
  }
  EXPECT_EQ(calls.load(), 1);
  EXPECT_EQ(sleeps, 0);
}

TEST(Remote, MissingCredentialVariable) {
  auto cfg = config("http://127.0.0.1:9/v1");
  cfg.auth_env = "RISE_TEST_DEFINITELY_UNSET";
  ::unsetenv("RISE_TEST_DEFINITELY_UNSET");
  try {
    RemoteBackend(cfg).generate(request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, ErrorKind::AuthFailure);
  }
}

TEST(Remote, ServerErrorsRetryWithBackoffThenSucceed) {
  LocalServer s;
  std::atomic<int> calls{0};
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"third time"}}]})", "application/json");
  });
  std::vector<long> waits;
  RemoteBackend b(config(s.url()), [&](std::chrono::milliseconds d) { waits.push_back(d.count()); });
  EXPECT_EQ(b.generate(request()), "third time");
  EXPECT_EQ(waits, (std::vector<long>{1000, 2000}));
}

TEST(Remote, DeadEndpointGivesUpAfterThreeAttempts) {
  // bind an ephemeral port without listening, then close it: connects get refused
  int port = 0;
  {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    ASSERT_GE(fd, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof addr;
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), len), 0);
    ASSERT_EQ(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len), 0);
    port = ntohs(addr.sin_port);
    ::close(fd);
  }
  fx::TempDir tmp("dead");
  auto cfg = config("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions");
  cfg.ledger_path = tmp / "ledger.jsonl";
  int sleeps = 0;
  RemoteBackend b(cfg, [&](std::chrono::milliseconds) { ++sleeps; });
  try {
    b.generate(request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, ErrorKind::RemoteUnavailable);
    EXPECT_NE(e.detail.find("after 3 attempts"), std::string::npos);
  }
  EXPECT_EQ(sleeps, 2);
  const auto ledger = fx::slurp(cfg.ledger_path);
  EXPECT_EQ(std::count(ledger.begin(), ledger.end(), '\n'), 3);
  EXPECT_NE(ledger.find("\"ok\":false"), std::string::npos);
}

TEST(Remote, MalformedBodyIsUnavailable) {
  LocalServer s;
  s.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  auto cfg = config(s.url());
  cfg.max_attempts = 1;
  try {
    RemoteBackend(cfg).generate(request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, ErrorKind::RemoteUnavailable);
  }
}

TEST(Remote, InFlightLimitHolds) {
  LocalServer s;
  std::atomic<int> now{0}, peak{0};
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    int v = ++now;
    int p = peak.load();
    while (v > p && !peak.compare_exchange_weak(p, v)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --now;
    res.set_content(R"({"choices":[{"message":{"content":"x"}}]})", "application/json");
  });
  auto cfg = config(s.url());
  cfg.max_in_flight = 2;
  RemoteBackend b(cfg);
  std::vector<std::thread> ts;
  for (int i = 0; i < 6; ++i) ts.emplace_back([&] { b.generate(request()); });
  for (auto& t : ts) t.join();
  EXPECT_LE(peak.load(), 2);
  EXPECT_GE(peak.load(), 1);
}

TEST(Digest, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
