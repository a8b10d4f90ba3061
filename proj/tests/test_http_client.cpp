#include <gtest/gtest.h>

#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "statuskt/mp/http_client.hpp"

using namespace statuskt;
using namespace statuskt::mp;

namespace {

// Local chat-completions endpoint that echoes the request back in the reply.
class FakeEndpoint {
 public:
  FakeEndpoint() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      if (fail_with) {
        res.status = fail_with;
        res.set_content(R"({"error": "nope"})", "application/json");
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json reply = {
          {"choices",
           {{{"message", {{"role", "assistant"}, {"content", "echo: " + body["messages"][1]["content"].get<std::string>()}}}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    server_.Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"choices": []})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path = "/v1/chat/completions") const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

  std::string last_body;
  std::string last_auth;
  int fail_with = 0;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(HttpChatClient, SendsWireFormatAndReadsFirstChoice) {
  FakeEndpoint endpoint;
  HttpChatClient client({endpoint.url(), "test-model", "secret"});
  ChatParams params;
  params.timeout = std::chrono::seconds(5);
  EXPECT_EQ(client.complete("system text", "user text", params), "echo: user text");

  const auto sent = nlohmann::json::parse(endpoint.last_body);
  EXPECT_EQ(sent["model"], "test-model");
  EXPECT_EQ(sent["temperature"], 0.0);
  ASSERT_EQ(sent["messages"].size(), 2u);
  EXPECT_EQ(sent["messages"][0]["role"], "system");
  EXPECT_EQ(sent["messages"][0]["content"], "system text");
  EXPECT_EQ(sent["messages"][1]["role"], "user");
  EXPECT_EQ(endpoint.last_auth, "Bearer secret");
}

TEST(HttpChatClient, HttpErrorsBecomeClientError) {
  FakeEndpoint endpoint;
  endpoint.fail_with = 500;
  HttpChatClient client({endpoint.url(), "m", ""});
  EXPECT_THROW(client.complete("s", "u", {}), ClientError);
  HttpChatClient bad_shape({endpoint.url("/garbage"), "m", ""});
  EXPECT_THROW(bad_shape.complete("s", "u", {}), ClientError);
}

TEST(HttpChatClient, UnreachableEndpointIsClientError) {
  HttpChatClient client({"http://127.0.0.1:1/v1/chat/completions", "m", ""});
  ChatParams params;
  params.timeout = std::chrono::seconds(2);
  EXPECT_THROW(client.complete("s", "u", params), ClientError);
}

TEST(HttpChatClient, ConfigFromEnvironment) {
  ::setenv("STATUSKT_CHAT_URL", "http://localhost:9/x", 1);
  ::setenv("STATUSKT_CHAT_MODEL", "m2", 1);
  ::unsetenv("STATUSKT_API_KEY");
  ::setenv("OPENAI_API_KEY", "k", 1);
  const auto c = HttpChatConfig::from_env();
  EXPECT_EQ(c.url, "http://localhost:9/x");
  EXPECT_EQ(c.model, "m2");
  EXPECT_EQ(c.api_key, "k");
  ::unsetenv("STATUSKT_CHAT_URL");
  ::unsetenv("STATUSKT_CHAT_MODEL");
  ::unsetenv("OPENAI_API_KEY");
  EXPECT_EQ(HttpChatConfig::from_env().url, "https://api.openai.com/v1/chat/completions");
}

TEST(HttpChatClient, SplitUrl) {
  EXPECT_EQ(split_url("https://a.b:8443/v1/x"), (std::pair<std::string, std::string>{"https://a.b:8443", "/v1/x"}));
  EXPECT_EQ(split_url("http://h").second, "/");
  EXPECT_THROW(split_url("nohost"), ConfigError);
}
