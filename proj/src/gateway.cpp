#include "memloom/gateway.hpp"

#include "memloom/http_backend.hpp"
#include "memloom/mock_backend.hpp"

#include <algorithm>
#include <cctype>
#include <thread>

namespace memloom::llm {

namespace {

constexpr const char* kSecretKeys[] = {"api_key", "apikey", "key", "token", "secret", "password", "authorization"};

void reject_inline_secrets(const Json& j, const std::string& where) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      const auto lk = to_lower_ascii(k);
      for (const char* s : kSecretKeys) {
        if (lk == s) throw ConfigError(where + ": secrets must come from environment variables, found \"" + k + "\"");
      }
      reject_inline_secrets(v, where);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) reject_inline_secrets(v, where);
  }
}

int positive_int(const Json& j, const char* field, int fallback, const std::string& where) {
  if (!j.contains(field)) return fallback;
  if (!j[field].is_number_integer() || j[field].get<long>() <= 0) {
    throw ConfigError(where + ": \"" + field + "\" must be a positive integer");
  }
  return j[field].get<int>();
}

Json usage_json(const Usage& u) {
  Json j{{"prompt_chars", u.prompt_chars}, {"completion_chars", u.completion_chars}};
  if (u.prompt_tokens) j["prompt_tokens"] = *u.prompt_tokens;
  if (u.completion_tokens) j["completion_tokens"] = *u.completion_tokens;
  return j;
}

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(FifoSemaphore& s) : s_(s) { s_.acquire(); }
  ~SemaphoreGuard() { s_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  FifoSemaphore& s_;
};

}  // namespace

const char* to_string(Speaker s) {
  switch (s) {
    case Speaker::system: return "system";
    case Speaker::user: return "user";
    case Speaker::assistant: return "assistant";
  }
  return "user";
}

void ChatRequest::validate() const {
  if (messages.empty()) throw PreconditionError("chat request has no messages");
  if (messages.front().speaker == Speaker::assistant) {
    throw PreconditionError("first chat message must come from system or user");
  }
}

std::string ChatRequest::transcript() const {
  std::string out;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) out.push_back('\n');
    out += messages[i].content;
  }
  return out;
}

Json ChatRequest::to_json() const {
  Json msgs = Json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.speaker)}, {"content", m.content}});
  return msgs;
}

std::string ChatRequest::effective_key() const {
  if (!idempotency_key.empty()) return idempotency_key;
  Json basis{{"role", role_id},
             {"template", template_id},
             {"messages", to_json()},
             {"temperature", decode.temperature},
             {"seed", decode.seed ? Json(*decode.seed) : Json(nullptr)}};
  return sha256_hex(basis.dump()).substr(0, 32);
}

BackendReply Backend::stream(const ChatRequest& request, const ChunkSink& on_chunk) {
  auto reply = complete(request);
  if (!reply.content.empty()) on_chunk(reply.content);
  return reply;
}

Json RoleConfig::to_json() const {
  Json j{{"model", model},
         {"auth_env", auth_env},
         {"max_concurrent", max_concurrent},
         {"retry_budget", retry_budget},
         {"timeout_ms", timeout_ms},
         {"backoff_base_ms", backoff_base_ms},
         {"backoff_max_ms", backoff_max_ms}};
  if (!endpoint.empty()) j["endpoint"] = endpoint;
  if (mock_script) j["mock_script"] = mock_script->string();
  return j;
}

std::string default_auth_env(std::string_view role_id) {
  std::string out = "MEMLOOM_API_KEY_";
  for (char c : role_id) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                                              : '_');
  }
  return out;
}

GatewayConfig GatewayConfig::from_json(const Json& j, const std::filesystem::path& base_dir, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": root must be an object");
  reject_inline_secrets(j, where);
  GatewayConfig cfg;
  if (j.contains("audit_log") && !j["audit_log"].is_null()) {
    if (!j["audit_log"].is_string()) throw ConfigError(where + ": audit_log must be a path string");
    cfg.audit_log = base_dir / j["audit_log"].get<std::string>();
  }
  if (!j.contains("roles") || !j["roles"].is_object()) throw ConfigError(where + ": \"roles\" object is required");
  for (const auto& [name, r] : j["roles"].items()) {
    const auto rw = where + ": role \"" + name + "\"";
    if (!r.is_object()) throw ConfigError(rw + " must be an object");
    RoleConfig rc;
    const bool has_endpoint = r.contains("endpoint");
    const bool has_mock = r.contains("mock_script");
    if (has_endpoint == has_mock) throw ConfigError(rw + " needs exactly one of \"endpoint\" or \"mock_script\"");
    if (has_endpoint) {
      if (!r["endpoint"].is_string()) throw ConfigError(rw + ": endpoint must be a string");
      rc.endpoint = r["endpoint"].get<std::string>();
      if (!starts_with(rc.endpoint, "http://") && !starts_with(rc.endpoint, "https://")) {
        throw ConfigError(rw + ": endpoint must be an http(s) URL");
      }
    } else {
      if (!r["mock_script"].is_string()) throw ConfigError(rw + ": mock_script must be a path string");
      rc.mock_script = base_dir / r["mock_script"].get<std::string>();
    }
    rc.model = r.value("model", std::string(has_mock ? "mock" : "default"));
    rc.auth_env = r.value("auth_env", default_auth_env(name));
    rc.max_concurrent = positive_int(r, "max_concurrent", rc.max_concurrent, rw);
    rc.retry_budget = positive_int(r, "retry_budget", rc.retry_budget, rw);
    rc.timeout_ms = positive_int(r, "timeout_ms", rc.timeout_ms, rw);
    if (r.contains("backoff_base_ms")) {
      if (!r["backoff_base_ms"].is_number_integer() || r["backoff_base_ms"].get<long>() < 0) {
        throw ConfigError(rw + ": backoff_base_ms must be a non-negative integer");
      }
      rc.backoff_base_ms = r["backoff_base_ms"].get<int>();
    }
    rc.backoff_max_ms = positive_int(r, "backoff_max_ms", rc.backoff_max_ms, rw);
    cfg.roles.emplace(name, std::move(rc));
  }
  return cfg;
}

GatewayConfig GatewayConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("gateway config not found: " + path.string());
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path(), path.string());
}

void FileAuditSink::record(const Json& entry) {
  std::lock_guard lock(mu_);
  append_line(path_, entry.dump());
}

void MemoryAuditSink::record(const Json& entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(entry);
}

std::vector<Json> MemoryAuditSink::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

void FifoSemaphore::acquire() {
  std::unique_lock lock(mu_);
  const auto ticket = next_ticket_++;
  cv_.wait(lock, [&] { return ticket == serving_ && in_flight_ < capacity_; });
  ++serving_;
  ++in_flight_;
  cv_.notify_all();
}

void FifoSemaphore::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_all();
}

int FifoSemaphore::in_flight() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

std::shared_ptr<Backend> make_backend(const std::string& role_id, const RoleConfig& config) {
  if (config.mock_script) return std::make_shared<ScriptedBackend>(MockScript::load(*config.mock_script));
  return std::make_shared<HttpBackend>(role_id, config);
}

Gateway::Gateway(const GatewayConfig& config) {
  for (const auto& [name, rc] : config.roles) add_role(name, rc, make_backend(name, rc));
  if (config.audit_log) set_audit_sink(std::make_shared<FileAuditSink>(*config.audit_log));
}

void Gateway::add_role(const std::string& role_id, RoleConfig config, std::shared_ptr<Backend> backend) {
  if (config.max_concurrent <= 0 || config.retry_budget <= 0) {
    throw ConfigError("role \"" + role_id + "\": budgets must be positive");
  }
  if (config.auth_env.empty()) config.auth_env = default_auth_env(role_id);
  auto budget = std::make_shared<FifoSemaphore>(config.max_concurrent);
  std::unique_lock lock(mu_);
  roles_.insert_or_assign(role_id, RoleState{std::move(config), std::move(backend), std::move(budget)});
}

bool Gateway::has_role(std::string_view role_id) const {
  std::shared_lock lock(mu_);
  return roles_.find(role_id) != roles_.end();
}

RoleConfig Gateway::role_config(std::string_view role_id) const {
  std::shared_lock lock(mu_);
  auto it = roles_.find(role_id);
  if (it == roles_.end()) {
    throw GatewayError(GatewayErrorKind::unknown_role, "role \"" + std::string(role_id) + "\" is not configured");
  }
  return it->second.config;
}

std::vector<std::string> Gateway::roles() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, st] : roles_) out.push_back(name);
  return out;
}

void Gateway::set_audit_sink(std::shared_ptr<AuditSink> sink) {
  std::unique_lock lock(mu_);
  audit_ = std::move(sink);
}

Gateway::RoleState Gateway::lookup(const std::string& role_id) const {
  std::shared_lock lock(mu_);
  auto it = roles_.find(role_id);
  if (it == roles_.end()) {
    throw GatewayError(GatewayErrorKind::unknown_role, "role \"" + role_id + "\" is not configured");
  }
  return it->second;
}

ChatResponse Gateway::complete(ChatRequest request) { return run(std::move(request), nullptr); }

ChatResponse Gateway::complete_streaming(ChatRequest request, const ChunkSink& on_chunk) {
  return run(std::move(request), &on_chunk);
}

ChatResponse Gateway::run(ChatRequest request, const ChunkSink* on_chunk) {
  const auto started = std::chrono::steady_clock::now();
  const auto key = request.effective_key();
  std::shared_ptr<AuditSink> audit;
  {
    std::shared_lock lock(mu_);
    audit = audit_;
  }

  Json entry{{"key", key},
             {"role", request.role_id},
             {"template", request.template_id},
             {"messages", request.to_json()},
             {"temperature", request.decode.temperature},
             {"streaming", on_chunk != nullptr}};
  Json attempt_errors = Json::array();
  int attempts = 0;

  auto finish = [&](bool ok) {
    entry["ok"] = ok;
    entry["attempts"] = attempts;
    entry["attempt_errors"] = attempt_errors;
    entry["latency_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    if (audit) audit->record(entry);
  };

  try {
    request.validate();
    const auto role = lookup(request.role_id);
    entry["model"] = role.config.model;
    SemaphoreGuard slot(*role.budget);

    std::string streamed;
    bool delivered_any = false;
    for (;;) {
      ++attempts;
      try {
        BackendReply reply;
        if (on_chunk) {
          streamed.clear();
          reply = role.backend->stream(request, [&](std::string_view chunk) {
            delivered_any = true;
            streamed.append(chunk);
            (*on_chunk)(chunk);
          });
        } else {
          reply = role.backend->complete(request);
        }
        ChatResponse resp;
        resp.content = std::move(reply.content);
        resp.attempts = attempts;
        resp.usage.prompt_chars = request.transcript().size();
        resp.usage.completion_chars = resp.content.size();
        resp.usage.prompt_tokens = reply.prompt_tokens;
        resp.usage.completion_tokens = reply.completion_tokens;
        resp.latency =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
        entry["content"] = resp.content;
        entry["usage"] = usage_json(resp.usage);
        finish(true);
        return resp;
      } catch (const TransientError& e) {
        attempt_errors.push_back({{"kind", to_string(e.kind())}, {"message", e.what()}});
        if (on_chunk && delivered_any) {
          (*on_chunk)(kPartialMarker);
          throw GatewayError(GatewayErrorKind::disconnected,
                             std::string("stream interrupted after partial content: ") + e.what());
        }
        if (attempts >= role.config.retry_budget) {
          throw GatewayError(GatewayErrorKind::exhausted_retries,
                             "role \"" + request.role_id + "\" failed after " + std::to_string(attempts) +
                                 " attempts: " + e.what());
        }
        const long delay = std::min<long>(static_cast<long>(role.config.backoff_base_ms) << (attempts - 1),
                                          role.config.backoff_max_ms);
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
    }
  } catch (const Error& e) {
    entry["error"] = {{"code", e.code()}, {"message", e.what()}, {"detail", e.detail()}};
    finish(false);
    throw;
  } catch (const std::exception& e) {
    entry["error"] = {{"code", "internal"}, {"message", e.what()}};
    finish(false);
    throw GatewayError(GatewayErrorKind::transport, e.what());
  }
}

ChatRequest make_request(std::string role_id, std::string template_id, std::string system_prompt,
                         std::string user_prompt, double temperature) {
  ChatRequest req;
  req.role_id = std::move(role_id);
  req.template_id = std::move(template_id);
  if (!system_prompt.empty()) req.messages.push_back({Speaker::system, std::move(system_prompt)});
  req.messages.push_back({Speaker::user, std::move(user_prompt)});
  req.decode.temperature = temperature;
  return req;
}

}  // namespace memloom::llm
