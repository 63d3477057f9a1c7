#pragma once

#include "memloom/gateway.hpp"

namespace memloom::llm {

/// Chat-completions over HTTP(S): `{"model","messages":[{"role","content"}],...}`
/// in, `{"choices":[{"message":{"content"}}],"usage":{...}}` out. Streaming
/// consumes `data:` server-sent events carrying `choices[0].delta.content`.
class HttpBackend final : public Backend {
 public:
  HttpBackend(std::string role_id, RoleConfig config);

  BackendReply complete(const ChatRequest& request) override;
  BackendReply stream(const ChatRequest& request, const ChunkSink& on_chunk) override;

  /// Request body sent for `request` (exposed for tests).
  Json body_for(const ChatRequest& request, bool streaming) const;

 private:
  std::string role_id_;
  RoleConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

}  // namespace memloom::llm
