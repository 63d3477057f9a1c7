#pragma once

// Deterministic scripted backend. Script file format:
//
//   {
//     "strict": false,          // strict: every request matches exactly one entry
//     "stream_chunk": 16,       // bytes per streamed chunk (extended to whole code points)
//     "fallback": "text",       // optional reply when nothing matches (non-strict only)
//     "entries": [
//       {
//         "template": "memory_qa.question",   // exact template id, optional
//         "pattern": "Entity: ([^\\n]+)",     // ECMAScript regex searched in the transcript, optional
//         "responses": ["Q|What about $1?"],  // or "response": "..."
//         "expand": true,                     // substitute $1..$9 from the pattern match
//         "fail_first": 0,                    // first N matching calls fail transiently
//         "fail_kind": "transport",           // transport | timeout | auth
//         "disconnect_after": 1               // streaming dies after N chunks
//       }
//     ]
//   }
//
// Responses are chosen per distinct request: the k-th time an identical
// transcript hits an entry it receives responses[k % size]. The reply
// sequence therefore depends only on the request sequence, never on timing.

#include "memloom/gateway.hpp"

#include <regex>

namespace memloom::llm {

struct MockEntry {
  std::optional<std::string> template_id;
  std::optional<std::string> pattern;
  std::vector<std::string> responses;
  bool expand = false;
  int fail_first = 0;
  GatewayErrorKind fail_kind = GatewayErrorKind::transport;
  std::optional<std::size_t> disconnect_after;
};

struct MockScript {
  std::vector<MockEntry> entries;
  bool strict = false;
  std::size_t stream_chunk = 16;
  std::optional<std::string> fallback;

  static MockScript from_json(const Json& j);
  static MockScript load(const std::filesystem::path& path);
};

class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(MockScript script);

  BackendReply complete(const ChatRequest& request) override;
  BackendReply stream(const ChatRequest& request, const ChunkSink& on_chunk) override;

  /// Splits `text` into chunks of `size` bytes, never cutting a code point.
  static std::vector<std::string> chunk(std::string_view text, std::size_t size);

 private:
  struct Selection {
    std::size_t entry = 0;
    std::string content;
  };
  Selection select(const ChatRequest& request);

  MockScript script_;
  std::vector<std::regex> compiled_;
  std::mutex mu_;
  std::vector<int> failures_left_;
  std::map<std::pair<std::size_t, std::string>, std::size_t> cursors_;
};

}  // namespace memloom::llm
