// SPDX-License-Identifier: Apache-2.0
#include "httplib.h"

#include "kopt/llm.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "kopt/error.hpp"

namespace kopt {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool looks_like_overflow(const std::string& body) {
  const std::string b = lower(body);
  for (const char* marker : {"context_length_exceeded", "maximum context length", "context window", "too many tokens",
                             "prompt is too long"})
    if (b.find(marker) != std::string::npos) return true;
  return false;
}

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

Url split_url(const std::string& base) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(base, m, re)) throw UsageError("OPENAI_API_BASE is not an http(s) URL: " + base);
  std::string path = m[2].matched ? m[2].str() : "";
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {m[1].str(), path};
}

ChatResponse parse_reply(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProviderError(std::string("completion reply is not JSON: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw ProviderError("completion reply has no choices");
  const json& choice = j["choices"][0];
  ChatResponse r;
  const json& msg = choice.value("message", json::object());
  if (msg.contains("content") && msg["content"].is_string()) r.text = msg["content"].get<std::string>();
  const std::string fr = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                             ? choice["finish_reason"].get<std::string>()
                             : "stop";
  r.finish_reason = fr == "length" ? FinishReason::length : fr == "stop" ? FinishReason::stop : FinishReason::error;
  if (j.contains("usage") && j["usage"].is_object()) {
    const json& u = j["usage"];
    r.usage = Usage{u.value("prompt_tokens", 0LL), u.value("completion_tokens", 0LL), u.value("total_tokens", 0LL)};
  }
  return r;
}

}  // namespace

void ChatRequest::validate() const {
  if (max_tokens <= 0) throw UsageError("max_tokens must be positive");
  if (temperature < 0) throw UsageError("temperature must be non-negative");
}

EndpointConfig EndpointConfig::from_env(const std::function<const char*(const char*)>& getenv_fn) {
  EndpointConfig c;
  auto get = [&](const char* k) -> std::optional<std::string> {
    const char* v = getenv_fn(k);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("LLM_MODEL")) c.model = *v;
  if (auto v = get("OPENAI_API_BASE")) c.base_url = *v;
  if (auto v = get("OPENAI_API_KEY")) c.api_key = *v;
  try {
    if (auto v = get("LLM_TEMPERATURE")) c.temperature = std::stod(*v);
    if (auto v = get("LLM_MAX_TOKENS")) c.max_tokens = std::stoi(*v);
  } catch (const std::exception&) {
    throw UsageError("LLM_TEMPERATURE / LLM_MAX_TOKENS must be numeric");
  }
  return c;
}

std::string chat_request_body(const ChatRequest& req) {
  json msgs = json::array();
  if (!req.system.empty()) msgs.push_back({{"role", "system"}, {"content", req.system}});
  for (const auto& m : req.messages) msgs.push_back({{"role", m.role}, {"content", m.text}});
  json body = {{"model", req.model},
               {"messages", msgs},
               {"temperature", req.temperature},
               {"max_tokens", req.max_tokens},
               {"stream", false}};
  return body.dump();
}

ChatResponse HttpChatBackend::complete(const ChatRequest& in) {
  if (cfg_.api_key.empty()) throw AuthError("OPENAI_API_KEY is not set");
  ChatRequest req = in;
  if (req.model.empty()) req.model = cfg_.model;
  if (cfg_.temperature) req.temperature = *cfg_.temperature;
  if (cfg_.max_tokens) req.max_tokens = *cfg_.max_tokens;
  if (req.model.empty()) throw UsageError("LLM_MODEL is not set");
  req.validate();
  const Url url = split_url(cfg_.base_url);

  httplib::Client cli(url.origin);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  cli.set_connection_timeout(std::min<std::int64_t>(secs.count(), 30), 0);
  cli.set_read_timeout(secs.count(), 0);
  cli.set_write_timeout(secs.count(), 0);
  const httplib::Headers headers = {{"Authorization", "Bearer " + cfg_.api_key}};
  const std::string body = chat_request_body(req);

  std::string last_error;
  bool transport_failure = false;
  auto backoff = cfg_.initial_backoff;
  const int attempts = std::max(1, cfg_.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = cli.Post(url.path + "/chat/completions", headers, body, "application/json");
    if (!res) {
      transport_failure = true;
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    const int status = res->status;
    if (status == 401 || status == 403) throw AuthError("endpoint rejected the API key (HTTP " + std::to_string(status) + ")");
    if ((status == 400 || status == 413) && looks_like_overflow(res->body))
      throw ContextOverflowError("prompt exceeds the model context window");
    if (status == 408 || status == 429 || status >= 500) {
      transport_failure = false;
      last_error = "HTTP " + std::to_string(status);
      continue;
    }
    if (status != 200) throw ProviderError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 400));
    ChatResponse r = parse_reply(res->body);
    if (r.finish_reason == FinishReason::length) throw ContextOverflowError("reply truncated by the length limit");
    return r;
  }
  if (transport_failure)
    throw TimeoutError("no reply after " + std::to_string(attempts) + " attempts (" + last_error + ")");
  throw ProviderError("provider kept failing after " + std::to_string(attempts) + " attempts (" + last_error + ")");
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> script) : script_(script.begin(), script.end()) {}

std::vector<ScriptEntry> ScriptedBackend::parse_script(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw LoadError(std::string("LLM script is not valid YAML: ") + e.what());
  }
  YAML::Node list = root.IsMap() ? root["responses"] : root;
  if (!list || !list.IsSequence()) throw LoadError("LLM script must be a list or a map with a 'responses' list");
  std::vector<ScriptEntry> out;
  for (const auto& item : list) {
    ScriptEntry e;
    if (item.IsScalar()) {
      e.text = item.as<std::string>();
    } else if (item.IsMap()) {
      if (item["text"]) e.text = item["text"].as<std::string>();
      if (item["tag"]) e.tag = item["tag"].as<std::string>();
      if (item["expect"]) e.expect = item["expect"].as<std::string>();
      static const std::vector<std::string> tags = {"", "overflow", "provider_error", "auth_error", "timeout"};
      if (std::find(tags.begin(), tags.end(), e.tag) == tags.end())
        throw LoadError("LLM script: unknown tag '" + e.tag + "'");
    } else {
      throw LoadError("LLM script entries must be strings or maps");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read LLM script '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::make_shared<ScriptedBackend>(parse_script(ss.str()));
}

ChatResponse ScriptedBackend::complete(const ChatRequest& req) {
  std::lock_guard<std::mutex> g(mu_);
  req.validate();
  const std::size_t n = seen_.size() + 1;
  seen_.push_back(req);
  if (script_.empty()) throw ScriptExhaustedError("LLM script exhausted at call " + std::to_string(n));
  ScriptEntry e = std::move(script_.front());
  script_.pop_front();
  if (!e.expect.empty()) {
    const bool in_system = req.system.find(e.expect) != std::string::npos;
    const bool in_last = !req.messages.empty() && req.messages.back().text.find(e.expect) != std::string::npos;
    if (!in_system && !in_last)
      throw ScriptExhaustedError("LLM script call " + std::to_string(n) + " expected a prompt containing '" +
                                 e.expect + "'");
  }
  if (e.tag == "overflow") throw ContextOverflowError("scripted overflow at call " + std::to_string(n));
  if (e.tag == "provider_error") throw ProviderError("scripted provider error at call " + std::to_string(n));
  if (e.tag == "auth_error") throw AuthError("scripted auth error at call " + std::to_string(n));
  if (e.tag == "timeout") throw TimeoutError("scripted timeout at call " + std::to_string(n));
  return ChatResponse{std::move(e.text), FinishReason::stop, std::nullopt};
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard<std::mutex> g(mu_);
  return seen_.size();
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard<std::mutex> g(mu_);
  return script_.size();
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard<std::mutex> g(mu_);
  return seen_;
}

}  // namespace kopt
