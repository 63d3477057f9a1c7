#include "memloom/mock_backend.hpp"

namespace memloom::llm {

namespace {

GatewayErrorKind fail_kind_from(const std::string& s) {
  if (s == "transport") return GatewayErrorKind::transport;
  if (s == "timeout") return GatewayErrorKind::timeout;
  if (s == "auth") return GatewayErrorKind::auth;
  throw ConfigError("mock script: unknown fail_kind \"" + s + "\"");
}

std::size_t utf8_seq_len(unsigned char b) {
  if (b < 0x80) return 1;
  if ((b & 0xE0) == 0xC0) return 2;
  if ((b & 0xF0) == 0xE0) return 3;
  if ((b & 0xF8) == 0xF0) return 4;
  return 1;
}

}  // namespace

MockScript MockScript::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw ConfigError("mock script needs an \"entries\" array");
  }
  MockScript script;
  script.strict = j.value("strict", false);
  script.stream_chunk = j.value("stream_chunk", std::size_t{16});
  if (script.stream_chunk == 0) throw ConfigError("mock script: stream_chunk must be positive");
  if (j.contains("fallback") && j["fallback"].is_string()) script.fallback = j["fallback"].get<std::string>();
  for (const auto& e : j["entries"]) {
    MockEntry entry;
    if (e.contains("template")) entry.template_id = e["template"].get<std::string>();
    if (e.contains("pattern")) entry.pattern = e["pattern"].get<std::string>();
    if (e.contains("responses")) {
      entry.responses = e["responses"].get<std::vector<std::string>>();
    } else if (e.contains("response")) {
      entry.responses.push_back(e["response"].get<std::string>());
    }
    if (entry.responses.empty()) throw ConfigError("mock script entry without response(s)");
    entry.expand = e.value("expand", false);
    entry.fail_first = e.value("fail_first", 0);
    if (e.contains("fail_kind")) entry.fail_kind = fail_kind_from(e["fail_kind"].get<std::string>());
    if (e.contains("disconnect_after")) entry.disconnect_after = e["disconnect_after"].get<std::size_t>();
    script.entries.push_back(std::move(entry));
  }
  return script;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("mock script not found: " + path.string());
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ScriptedBackend::ScriptedBackend(MockScript script) : script_(std::move(script)) {
  for (const auto& e : script_.entries) {
    try {
      compiled_.emplace_back(e.pattern ? std::regex(*e.pattern, std::regex::ECMAScript) : std::regex());
    } catch (const std::regex_error& err) {
      throw ConfigError("mock script: bad pattern \"" + e.pattern.value_or("") + "\": " + err.what());
    }
    failures_left_.push_back(e.fail_first);
  }
}

ScriptedBackend::Selection ScriptedBackend::select(const ChatRequest& request) {
  const auto transcript = request.transcript();
  std::vector<std::size_t> matched;
  std::vector<std::smatch> groups;
  for (std::size_t i = 0; i < script_.entries.size(); ++i) {
    const auto& e = script_.entries[i];
    if (e.template_id && *e.template_id != request.template_id) continue;
    std::smatch m;
    if (e.pattern && !std::regex_search(transcript, m, compiled_[i])) continue;
    matched.push_back(i);
    groups.push_back(m);
    if (!script_.strict) break;
  }
  if (script_.strict && matched.size() != 1) {
    throw GatewayError(GatewayErrorKind::mock_unmatched,
                       "strict mock: request (template \"" + request.template_id + "\") matched " +
                           std::to_string(matched.size()) + " entries");
  }
  if (matched.empty()) {
    if (script_.fallback) return Selection{script_.entries.size(), *script_.fallback};
    throw GatewayError(GatewayErrorKind::mock_unmatched,
                       "mock: no entry matches request (template \"" + request.template_id + "\")");
  }

  const std::size_t idx = matched.front();
  const auto& entry = script_.entries[idx];
  std::lock_guard lock(mu_);
  if (failures_left_[idx] > 0) {
    --failures_left_[idx];
    if (entry.fail_kind == GatewayErrorKind::auth) {
      throw GatewayError(GatewayErrorKind::auth, "mock: scripted auth failure");
    }
    throw TransientError(entry.fail_kind, "mock: scripted transient failure");
  }
  auto& cursor = cursors_[{idx, transcript}];
  std::string content = entry.responses[cursor % entry.responses.size()];
  ++cursor;
  if (entry.expand && entry.pattern) content = groups.front().format(content);
  return Selection{idx, std::move(content)};
}

BackendReply ScriptedBackend::complete(const ChatRequest& request) {
  return BackendReply{select(request).content, std::nullopt, std::nullopt};
}

BackendReply ScriptedBackend::stream(const ChatRequest& request, const ChunkSink& on_chunk) {
  auto sel = select(request);
  const auto chunks = chunk(sel.content, script_.stream_chunk);
  std::optional<std::size_t> cut;
  if (sel.entry < script_.entries.size()) cut = script_.entries[sel.entry].disconnect_after;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (cut && i >= *cut) throw TransientError(GatewayErrorKind::disconnected, "mock: scripted disconnect");
    on_chunk(chunks[i]);
  }
  return BackendReply{std::move(sel.content), std::nullopt, std::nullopt};
}

std::vector<std::string> ScriptedBackend::chunk(std::string_view text, std::size_t size) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t end = std::min(text.size(), i + size);
    // extend to a code-point boundary
    std::size_t j = i;
    while (j < end) j += utf8_seq_len(static_cast<unsigned char>(text[j]));
    end = std::min(text.size(), j);
    out.emplace_back(text.substr(i, end - i));
    i = end;
  }
  return out;
}

}  // namespace memloom::llm
