#pragma once

// Strong chain-of-thought output format: `<reasoning>R</reasoning>` followed
// by the final answer A. R and A are non-empty and delimiter-free.

#include <optional>
#include <string>
#include <string_view>

namespace memloom {

inline constexpr std::string_view kReasoningOpen = "<reasoning>";
inline constexpr std::string_view kReasoningClose = "</reasoning>";

struct StrongOutput {
  std::string reasoning;  // trimmed
  std::string answer;     // trimmed
};

bool contains_reasoning_delimiter(std::string_view text);

/// Grammar check for the strong format; nullopt when the text does not match.
std::optional<StrongOutput> parse_strong(std::string_view text);

std::string render_strong(std::string_view reasoning, std::string_view answer);

struct StripResult {
  std::string text;
  bool stripped = false;   // a reasoning block was removed
  bool malformed = false;  // delimiters were present but not as one leading block
};

/// Removes a leading reasoning block. Malformed input falls back to the text
/// after the last closing delimiter with any stray delimiters deleted. The
/// result never contains a delimiter, and stripping twice equals stripping once.
StripResult strip_reasoning(std::string_view response);

}  // namespace memloom
