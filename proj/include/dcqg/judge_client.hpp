#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace dcqg::judge {

struct EndpointConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4.1-mini";
  double temperature = 0.0;
  std::string api_key_env = "JUDGE_API_KEY";
  std::optional<std::string> api_key;  // overrides the environment when set
  int max_retries = 4;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_backoff{8000};
  std::chrono::seconds timeout{60};
  std::size_t max_in_flight = 4;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Network failure or timeout after all retries.
class TransportError : public JudgeError {
 public:
  using JudgeError::JudgeError;
};

/// Non-2xx response; carries the status and the start of the body.
class StatusError : public JudgeError {
 public:
  StatusError(int status, std::string body_excerpt, const std::string& what)
      : JudgeError(what), status_(status), body_excerpt_(std::move(body_excerpt)) {}
  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

/// 401/403 or missing credentials. Never retried.
class AuthError : public StatusError {
 public:
  using StatusError::StatusError;
};

struct JudgeReply {
  std::string content;
  int attempts = 0;
};

namespace detail {

inline std::string excerpt(const std::string& body, std::size_t n = 200) {
  return body.size() <= n ? body : body.substr(0, n) + "...";
}

inline std::string resolve_api_key(const EndpointConfig& cfg) {
  if (cfg.api_key) return *cfg.api_key;
  const char* v = std::getenv(cfg.api_key_env.c_str());
  if (v == nullptr || *v == '\0') throw AuthError(0, "", cfg.api_key_env + " is not set");
  return v;
}

inline bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace detail

inline std::string chat_request_body(const EndpointConfig& cfg, const std::string& prompt) {
  nlohmann::ordered_json body;
  body["model"] = cfg.model;
  body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = cfg.temperature;
  return body.dump();
}

/// Assistant text from a chat-completions response body.
inline std::string extract_message_content(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw JudgeError(std::string("malformed judge response: ") + e.what() + ": " + detail::excerpt(body));
  }
}

/// POSTs one prompt. Transport errors, 429 and 5xx are retried up to
/// `max_retries` times with exponential backoff; auth failures are not.
inline JudgeReply call_judge_detailed(const EndpointConfig& cfg, const std::string& prompt) {
  const std::string key = detail::resolve_api_key(cfg);
  httplib::Client client(cfg.base_url);
  if (!client.is_valid()) throw TransportError("unsupported judge base URL: " + cfg.base_url);
  client.set_connection_timeout(cfg.timeout);
  client.set_read_timeout(cfg.timeout);
  client.set_write_timeout(cfg.timeout);
  const httplib::Headers headers = {{"Authorization", "Bearer " + key}};
  const std::string body = chat_request_body(cfg, prompt);

  auto delay = cfg.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    auto res = client.Post(cfg.path, headers, body, "application/json");
    std::string failure;
    if (!res) {
      failure = "judge request failed: " + httplib::to_string(res.error());
      if (attempt > cfg.max_retries) throw TransportError(failure);
    } else {
      const int status = res->status;
      if (status >= 200 && status < 300) return {extract_message_content(res->body), attempt};
      const std::string msg = "judge endpoint returned HTTP " + std::to_string(status);
      if (status == 401 || status == 403) throw AuthError(status, detail::excerpt(res->body), msg);
      if (!detail::retryable_status(status) || attempt > cfg.max_retries) {
        throw StatusError(status, detail::excerpt(res->body), msg + ": " + detail::excerpt(res->body));
      }
    }
    cfg.sleep(delay);
    delay = std::min(cfg.max_backoff, std::chrono::milliseconds(static_cast<long long>(
                                          static_cast<double>(delay.count()) * cfg.backoff_factor)));
  }
}

inline std::string call_judge(const EndpointConfig& cfg, const std::string& prompt) {
  return call_judge_detailed(cfg, prompt).content;
}

struct JudgeOutcome {
  std::optional<std::string> content;
  std::string error;
  bool auth_failure = false;
};

/// Runs every prompt with at most `max_in_flight` concurrent requests.
/// Results are positional, so downstream aggregation does not depend on
/// completion order.
inline std::vector<JudgeOutcome> judge_all(const EndpointConfig& cfg, const std::vector<std::string>& prompts) {
  std::vector<JudgeOutcome> out(prompts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < prompts.size(); k = next++) {
      try {
        out[k].content = call_judge(cfg, prompts[k]);
      } catch (const AuthError& e) {
        out[k].error = e.what();
        out[k].auth_failure = true;
      } catch (const std::exception& e) {
        out[k].error = e.what();
      }
    }
  };
  const std::size_t n = std::min<std::size_t>(std::max<std::size_t>(cfg.max_in_flight, 1), prompts.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace dcqg::judge
