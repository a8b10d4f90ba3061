#pragma once

#include <httplib.h>

#include <cstdlib>
#include <nlohmann/json.hpp>
#include <string>

#include "statuskt/errors.hpp"
#include "statuskt/mp/client.hpp"

namespace statuskt::mp {

struct HttpChatConfig {
  std::string url = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-5";
  std::string api_key;

  /// STATUSKT_CHAT_URL, STATUSKT_CHAT_MODEL, STATUSKT_API_KEY (falls back to
  /// OPENAI_API_KEY). Unset variables keep the defaults.
  static HttpChatConfig from_env() {
    HttpChatConfig c;
    auto get = [](const char* name) -> std::string {
      const char* v = std::getenv(name);
      return v ? v : "";
    };
    if (auto v = get("STATUSKT_CHAT_URL"); !v.empty()) c.url = v;
    if (auto v = get("STATUSKT_CHAT_MODEL"); !v.empty()) c.model = v;
    c.api_key = get("STATUSKT_API_KEY");
    if (c.api_key.empty()) c.api_key = get("OPENAI_API_KEY");
    return c;
  }
};

/// Splits "https://host:port/path" into ("https://host:port", "/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("chat URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Chat-completions client over HTTP(S). A fresh connection per call keeps
/// the object safe to share between pipeline workers.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpChatConfig config) : config_(std::move(config)) {
    std::tie(origin_, path_) = split_url(config_.url);
  }

  std::string complete(const std::string& system_message, const std::string& user_message,
                       const ChatParams& params) override {
    nlohmann::json body = {{"model", config_.model},
                           {"messages",
                            {{{"role", "system"}, {"content", system_message}},
                             {{"role", "user"}, {"content", user_message}}}},
                           {"temperature", params.temperature}};

    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(params.timeout).count();
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);

    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) throw ClientError("chat request to " + config_.url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw ClientError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300));

    const auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) throw ClientError("chat endpoint returned non-JSON body");
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw ClientError("chat reply has no choices[0].message.content");
    }
  }

  const HttpChatConfig& config() const { return config_; }

 private:
  HttpChatConfig config_;
  std::string origin_;
  std::string path_;
};

}  // namespace statuskt::mp
