#pragma once

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>

namespace memloom {

// Base of every domain error. `code` is a stable machine-readable string used
// by the CLI exit-code mapping and the HTTP error body `{code, message, detail}`.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message, nlohmann::json detail = nullptr)
      : std::runtime_error(message), code_(std::move(code)), detail_(std::move(detail)) {}

  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }

 private:
  std::string code_;
  nlohmann::json detail_;
};

#define MEMLOOM_DEFINE_ERROR(Name, CodeStr)                                       \
  class Name : public Error {                                                     \
   public:                                                                        \
    explicit Name(const std::string& message, nlohmann::json detail = nullptr)    \
        : Error(CodeStr, message, std::move(detail)) {}                           \
  };

MEMLOOM_DEFINE_ERROR(SchemaError, "schema_error")
MEMLOOM_DEFINE_ERROR(ParseError, "parse_error")
MEMLOOM_DEFINE_ERROR(FormatError, "format_error")
MEMLOOM_DEFINE_ERROR(GroundingError, "grounding_error")
MEMLOOM_DEFINE_ERROR(InsufficientContext, "insufficient_context")
MEMLOOM_DEFINE_ERROR(IsolationExhausted, "isolation_exhausted")
MEMLOOM_DEFINE_ERROR(JudgeParseError, "judge_parse_error")
MEMLOOM_DEFINE_ERROR(DomainError, "domain_error")
MEMLOOM_DEFINE_ERROR(IoError, "io_error")
MEMLOOM_DEFINE_ERROR(SpawnError, "spawn_error")
MEMLOOM_DEFINE_ERROR(ConfigError, "config_error")
MEMLOOM_DEFINE_ERROR(NotFound, "not_found")
MEMLOOM_DEFINE_ERROR(PreconditionError, "precondition_error")
MEMLOOM_DEFINE_ERROR(NonzeroExit, "nonzero_exit")
MEMLOOM_DEFINE_ERROR(Conflict, "conflict")

#undef MEMLOOM_DEFINE_ERROR

// Raised when a pipeline stage runs before the artifact it consumes exists.
class MissingDependency : public Error {
 public:
  explicit MissingDependency(const std::string& artifact)
      : Error("missing_dependency", "MissingDependency(\"" + artifact + "\")",
              nlohmann::json{{"artifact", artifact}}),
        artifact_(artifact) {}

  const std::string& artifact() const noexcept { return artifact_; }

 private:
  std::string artifact_;
};

enum class GatewayErrorKind { timeout, auth, exhausted_retries, mock_unmatched, transport, unknown_role, disconnected };

inline const char* to_string(GatewayErrorKind kind) {
  switch (kind) {
    case GatewayErrorKind::timeout: return "timeout";
    case GatewayErrorKind::auth: return "auth";
    case GatewayErrorKind::exhausted_retries: return "exhausted-retries";
    case GatewayErrorKind::mock_unmatched: return "mock-unmatched";
    case GatewayErrorKind::transport: return "transport";
    case GatewayErrorKind::unknown_role: return "unknown-role";
    case GatewayErrorKind::disconnected: return "disconnected";
  }
  return "unknown";
}

class GatewayError : public Error {
 public:
  GatewayError(GatewayErrorKind kind, const std::string& message)
      : Error("gateway_error", message, nlohmann::json{{"kind", to_string(kind)}}), kind_(kind) {}

  GatewayErrorKind kind() const noexcept { return kind_; }

 private:
  GatewayErrorKind kind_;
};

}  // namespace memloom
