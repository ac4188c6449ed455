// SPDX-License-Identifier: Apache-2.0
//
// Chat backends: an OpenAI-compatible HTTP client and a scripted backend for
// tests. Provider failures surface only as the typed LlmError subclasses.
#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace kopt {

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string text;
};

struct ChatRequest {
  std::string system;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  int max_tokens = 16384;
  std::string model;

  void validate() const;
};

enum class FinishReason { stop, length, error };

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total_tokens = 0;
};

struct ChatResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  std::optional<Usage> usage;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Throws ContextOverflowError when the prompt does not fit or the reply was
  // cut off by the length limit.
  virtual ChatResponse complete(const ChatRequest& req) = 0;
  virtual std::string describe() const = 0;
};

struct EndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::string model;
  // When set, override the per-request values.
  std::optional<double> temperature;
  std::optional<int> max_tokens;
  std::chrono::milliseconds timeout{std::chrono::minutes(5)};
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};

  // LLM_MODEL, OPENAI_API_BASE, OPENAI_API_KEY, LLM_TEMPERATURE, LLM_MAX_TOKENS.
  static EndpointConfig from_env(const std::function<const char*(const char*)>& getenv_fn);
};

class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(EndpointConfig cfg) : cfg_(std::move(cfg)) {}
  ChatResponse complete(const ChatRequest& req) override;
  std::string describe() const override { return "http " + cfg_.base_url + " model=" + cfg_.model; }
  const EndpointConfig& config() const noexcept { return cfg_; }

 private:
  EndpointConfig cfg_;
};

// Request body for /chat/completions.
std::string chat_request_body(const ChatRequest& req);

// One scripted reply. `tag` injects a failure instead of text: overflow,
// provider_error, auth_error, timeout. `expect`, when set, must occur in the
// request's system prompt or last message.
struct ScriptEntry {
  std::string text;
  std::string tag;
  std::string expect;
};

class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<ScriptEntry> script);
  static std::vector<ScriptEntry> parse_script(const std::string& yaml_text);
  static std::shared_ptr<ScriptedBackend> from_file(const std::string& path);

  // Throws ScriptExhaustedError once the script runs out.
  ChatResponse complete(const ChatRequest& req) override;
  std::string describe() const override { return "scripted"; }

  std::size_t calls() const;
  std::size_t remaining() const;
  std::vector<ChatRequest> requests() const;

 private:
  mutable std::mutex mu_;
  std::deque<ScriptEntry> script_;
  std::vector<ChatRequest> seen_;
};

}  // namespace kopt
