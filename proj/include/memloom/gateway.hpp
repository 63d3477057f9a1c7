#pragma once

// Chat-completion gateway shared by every model role (synth, expert, self,
// l2, judge, tuned). Owns per-role concurrency budgets, retry with
// exponential backoff, and the audit log.

#include "memloom/error.hpp"
#include "memloom/util.hpp"

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace memloom::llm {

enum class Speaker { system, user, assistant };
const char* to_string(Speaker s);

struct Message {
  Speaker speaker = Speaker::user;
  std::string content;
};

struct DecodeParams {
  double temperature = 0.0;
  int max_length = 2048;
  std::vector<std::string> stop;
  std::optional<std::uint64_t> seed;
};

struct ChatRequest {
  std::string role_id;
  std::string template_id;  // prompt template that produced the messages; used by mock matchers
  std::vector<Message> messages;
  DecodeParams decode;
  std::string idempotency_key;  // derived from the content when empty

  /// Throws PreconditionError unless messages are non-empty and the first
  /// speaker is system or user.
  void validate() const;
  /// All message contents joined by newlines.
  std::string transcript() const;
  std::string effective_key() const;
  Json to_json() const;
};

struct Usage {
  std::size_t prompt_chars = 0;
  std::size_t completion_chars = 0;
  std::optional<long> prompt_tokens;
  std::optional<long> completion_tokens;
};

struct ChatResponse {
  std::string content;
  Usage usage;
  std::chrono::milliseconds latency{0};
  int attempts = 0;
};

/// Appended to the streamed content when a stream dies after delivering data.
inline constexpr std::string_view kPartialMarker = "\n[stream interrupted]";

/// Retryable backend failure (timeouts, connection resets, 429/5xx, scripted faults).
class TransientError : public std::runtime_error {
 public:
  TransientError(GatewayErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  GatewayErrorKind kind() const noexcept { return kind_; }

 private:
  GatewayErrorKind kind_;
};

struct BackendReply {
  std::string content;
  std::optional<long> prompt_tokens;
  std::optional<long> completion_tokens;
};

using ChunkSink = std::function<void(std::string_view)>;

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendReply complete(const ChatRequest& request) = 0;
  /// Default: one chunk carrying the whole completion.
  virtual BackendReply stream(const ChatRequest& request, const ChunkSink& on_chunk);
};

struct RoleConfig {
  std::string endpoint;                            // chat-completions URL, or empty
  std::optional<std::filesystem::path> mock_script;  // scripted mock instead of HTTP
  std::string model = "default";
  std::string auth_env;  // defaults to MEMLOOM_API_KEY_<ROLE>
  int max_concurrent = 4;
  int retry_budget = 3;  // total attempts per call
  int timeout_ms = 60000;
  int backoff_base_ms = 200;
  int backoff_max_ms = 5000;

  Json to_json() const;
};

struct GatewayConfig {
  std::map<std::string, RoleConfig> roles;
  std::optional<std::filesystem::path> audit_log;

  /// Parses `gateway.json`; relative paths resolve against `base_dir`.
  /// Throws ConfigError on unknown shapes, non-positive budgets, or inline secrets.
  static GatewayConfig from_json(const Json& j, const std::filesystem::path& base_dir, const std::string& where = "gateway.json");
  static GatewayConfig load(const std::filesystem::path& path);
};

std::string default_auth_env(std::string_view role_id);

class AuditSink {
 public:
  virtual ~AuditSink() = default;
  virtual void record(const Json& entry) = 0;
};

class FileAuditSink final : public AuditSink {
 public:
  explicit FileAuditSink(std::filesystem::path path) : path_(std::move(path)) {}
  void record(const Json& entry) override;

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

class MemoryAuditSink final : public AuditSink {
 public:
  void record(const Json& entry) override;
  std::vector<Json> entries() const;

 private:
  mutable std::mutex mu_;
  std::vector<Json> entries_;
};

/// Counting semaphore that admits waiters strictly in arrival order.
class FifoSemaphore {
 public:
  explicit FifoSemaphore(int capacity) : capacity_(capacity) {}
  void acquire();
  void release();
  int in_flight() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
  int in_flight_ = 0;
  int capacity_;
};

class Gateway {
 public:
  Gateway() = default;
  explicit Gateway(const GatewayConfig& config);

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Registers or replaces a role. Replacing waits for nothing: in-flight
  /// calls keep the old backend alive through shared ownership.
  void add_role(const std::string& role_id, RoleConfig config, std::shared_ptr<Backend> backend);
  bool has_role(std::string_view role_id) const;
  RoleConfig role_config(std::string_view role_id) const;
  std::vector<std::string> roles() const;

  void set_audit_sink(std::shared_ptr<AuditSink> sink);

  ChatResponse complete(ChatRequest request);
  /// Streams content chunks; their concatenation equals complete()'s content.
  /// A failure after the first chunk emits kPartialMarker and throws
  /// GatewayError{disconnected}.
  ChatResponse complete_streaming(ChatRequest request, const ChunkSink& on_chunk);

 private:
  struct RoleState {
    RoleConfig config;
    std::shared_ptr<Backend> backend;
    std::shared_ptr<FifoSemaphore> budget;
  };

  RoleState lookup(const std::string& role_id) const;
  ChatResponse run(ChatRequest request, const ChunkSink* on_chunk);

  mutable std::shared_mutex mu_;
  std::map<std::string, RoleState, std::less<>> roles_;
  std::shared_ptr<AuditSink> audit_;
};

/// Builds the backend a role config describes (scripted mock or HTTP).
std::shared_ptr<Backend> make_backend(const std::string& role_id, const RoleConfig& config);

/// Convenience: system + user messages.
ChatRequest make_request(std::string role_id, std::string template_id, std::string system_prompt, std::string user_prompt,
                         double temperature = 0.0);

}  // namespace memloom::llm
