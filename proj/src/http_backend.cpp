#include "memloom/http_backend.hpp"

#include <httplib.h>

#include <cstdlib>

namespace memloom::llm {

namespace {

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

[[noreturn]] void throw_for_transport(httplib::Error err) {
  const auto msg = httplib::to_string(err);
  if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
    throw TransientError(GatewayErrorKind::timeout, "http: " + msg);
  }
  throw TransientError(GatewayErrorKind::transport, "http: " + msg);
}

[[noreturn]] void throw_for_status(int status, const std::string& body) {
  const auto msg = "http status " + std::to_string(status) + ": " + body.substr(0, 300);
  if (status == 401 || status == 403) throw GatewayError(GatewayErrorKind::auth, msg);
  if (transient_status(status)) throw TransientError(GatewayErrorKind::transport, msg);
  throw GatewayError(GatewayErrorKind::transport, msg);
}

std::unique_ptr<httplib::Client> make_client(const std::string& base, int timeout_ms) {
  auto cli = std::make_unique<httplib::Client>(base);
  const auto secs = timeout_ms / 1000;
  const auto usecs = (timeout_ms % 1000) * 1000;
  cli->set_connection_timeout(secs, usecs);
  cli->set_read_timeout(secs, usecs);
  cli->set_write_timeout(secs, usecs);
  return cli;
}

}  // namespace

HttpBackend::HttpBackend(std::string role_id, RoleConfig config) : role_id_(std::move(role_id)), config_(std::move(config)) {
  const auto& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint is not a URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (starts_with(url, "https://")) throw ConfigError("https endpoints need OpenSSL support: " + url);
#endif
}

Json HttpBackend::body_for(const ChatRequest& request, bool streaming) const {
  Json body{{"model", config_.model},
            {"messages", request.to_json()},
            {"temperature", request.decode.temperature},
            {"max_tokens", request.decode.max_length}};
  if (!request.decode.stop.empty()) body["stop"] = request.decode.stop;
  if (request.decode.seed) body["seed"] = *request.decode.seed;
  if (streaming) body["stream"] = true;
  return body;
}

BackendReply HttpBackend::complete(const ChatRequest& request) {
  auto cli = make_client(scheme_host_port_, config_.timeout_ms);
  httplib::Headers headers{{"Idempotency-Key", request.effective_key()}};
  if (const char* key = std::getenv(config_.auth_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = cli->Post(path_, headers, body_for(request, false).dump(), "application/json");
  if (!res) throw_for_transport(res.error());
  if (res->status != 200) throw_for_status(res->status, res->body);

  Json j;
  try {
    j = Json::parse(res->body);
  } catch (const Json::parse_error& e) {
    throw TransientError(GatewayErrorKind::transport, std::string("http: malformed JSON body: ") + e.what());
  }
  const auto* content = j.contains("choices") && j["choices"].is_array() && !j["choices"].empty() &&
                                j["choices"][0].contains("message") && j["choices"][0]["message"].contains("content") &&
                                j["choices"][0]["message"]["content"].is_string()
                            ? &j["choices"][0]["message"]["content"]
                            : nullptr;
  if (!content) throw TransientError(GatewayErrorKind::transport, "http: response without choices[0].message.content");
  BackendReply reply{content->get<std::string>(), std::nullopt, std::nullopt};
  if (j.contains("usage") && j["usage"].is_object()) {
    if (j["usage"].contains("prompt_tokens")) reply.prompt_tokens = j["usage"]["prompt_tokens"].get<long>();
    if (j["usage"].contains("completion_tokens")) reply.completion_tokens = j["usage"]["completion_tokens"].get<long>();
  }
  return reply;
}

BackendReply HttpBackend::stream(const ChatRequest& request, const ChunkSink& on_chunk) {
  auto cli = make_client(scheme_host_port_, config_.timeout_ms);
  httplib::Request req;
  req.method = "POST";
  req.path = path_;
  req.headers = {{"Idempotency-Key", request.effective_key()}, {"Accept", "text/event-stream"}};
  if (const char* key = std::getenv(config_.auth_env.c_str()); key && *key) {
    req.headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  req.headers.emplace("Content-Type", "application/json");
  req.body = body_for(request, true).dump();

  std::string pending;
  std::string content;
  std::string error_body;
  int status = 0;
  bool done = false;
  req.response_handler = [&](const httplib::Response& r) {
    status = r.status;
    return true;
  };
  req.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
    if (status != 200) {
      error_body.append(data, len);
      return true;
    }
    pending.append(data, len);
    std::size_t nl;
    while ((nl = pending.find('\n')) != std::string::npos) {
      std::string line = trim(pending.substr(0, nl));
      pending.erase(0, nl + 1);
      if (!starts_with(line, "data:")) continue;
      const auto payload = trim(line.substr(5));
      if (payload == "[DONE]") {
        done = true;
        continue;
      }
      try {
        const auto j = Json::parse(payload);
        const auto& choice = j.at("choices").at(0);
        if (choice.contains("delta") && choice["delta"].contains("content") && choice["delta"]["content"].is_string()) {
          const auto piece = choice["delta"]["content"].get<std::string>();
          if (!piece.empty()) {
            content += piece;
            on_chunk(piece);
          }
        }
      } catch (const Json::exception&) {
        // ignore keep-alive or vendor-specific events
      }
    }
    return true;
  };
  auto res = cli->send(req);
  if (!res) {
    if (!content.empty()) throw TransientError(GatewayErrorKind::disconnected, "http: stream dropped");
    throw_for_transport(res.error());
  }
  if (status != 200) throw_for_status(status, error_body);
  if (!done && !content.empty()) throw TransientError(GatewayErrorKind::disconnected, "http: stream ended without [DONE]");
  return BackendReply{std::move(content), std::nullopt, std::nullopt};
}

}  // namespace memloom::llm
