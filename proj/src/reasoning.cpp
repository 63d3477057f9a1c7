#include "memloom/reasoning.hpp"

#include "memloom/util.hpp"

namespace memloom {

namespace {

std::string ltrim(std::string_view s) {
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\n' || s[b] == '\r' || s[b] == '\t')) ++b;
  return std::string(s.substr(b));
}

void erase_delimiters(std::string& s) {
  for (;;) {
    auto pos = s.find(kReasoningClose);
    std::size_t len = kReasoningClose.size();
    const auto open = s.find(kReasoningOpen);
    if (open != std::string::npos && (pos == std::string::npos || open < pos)) {
      pos = open;
      len = kReasoningOpen.size();
    }
    if (pos == std::string::npos) return;
    s.erase(pos, len);
  }
}

}  // namespace

bool contains_reasoning_delimiter(std::string_view text) {
  return text.find(kReasoningOpen) != std::string_view::npos || text.find(kReasoningClose) != std::string_view::npos;
}

std::optional<StrongOutput> parse_strong(std::string_view text) {
  const auto body = ltrim(text);
  if (!starts_with(body, kReasoningOpen)) return std::nullopt;
  const auto close = body.find(kReasoningClose);
  if (close == std::string::npos) return std::nullopt;
  const std::string_view inner = std::string_view(body).substr(kReasoningOpen.size(), close - kReasoningOpen.size());
  const std::string_view rest = std::string_view(body).substr(close + kReasoningClose.size());
  if (contains_reasoning_delimiter(inner) || contains_reasoning_delimiter(rest)) return std::nullopt;
  StrongOutput out{trim(inner), trim(rest)};
  if (out.reasoning.empty() || out.answer.empty()) return std::nullopt;
  return out;
}

std::string render_strong(std::string_view reasoning, std::string_view answer) {
  std::string out;
  out.reserve(reasoning.size() + answer.size() + 32);
  out.append(kReasoningOpen).append(reasoning).append(kReasoningClose).append("\n").append(answer);
  return out;
}

StripResult strip_reasoning(std::string_view response) {
  if (!contains_reasoning_delimiter(response)) return StripResult{std::string(response), false, false};

  const auto body = ltrim(response);
  if (starts_with(body, kReasoningOpen)) {
    const auto close = body.find(kReasoningClose);
    if (close != std::string::npos) {
      const std::string_view inner = std::string_view(body).substr(kReasoningOpen.size(), close - kReasoningOpen.size());
      const std::string_view rest = std::string_view(body).substr(close + kReasoningClose.size());
      if (!contains_reasoning_delimiter(inner) && !contains_reasoning_delimiter(rest)) {
        return StripResult{ltrim(rest), true, false};
      }
    }
  }

  std::string text(response);
  if (const auto last_close = text.rfind(kReasoningClose); last_close != std::string::npos) {
    text.erase(0, last_close + kReasoningClose.size());
  }
  erase_delimiters(text);
  return StripResult{ltrim(text), true, true};
}

}  // namespace memloom
