#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace memloom {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// ---- hashing ---------------------------------------------------------------

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// 64-bit value derived from the first eight bytes of SHA-256; stable across platforms.
std::uint64_t stable_hash64(std::string_view data);

// ---- text ------------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::string collapse_whitespace(std::string_view s);

/// Lowercase, strip ASCII punctuation, collapse whitespace. Used for
/// train/eval isolation comparisons.
std::string normalize_query(std::string_view s);

/// Number of UTF-8 code points (invalid bytes count as one each).
std::size_t utf8_length(std::string_view s);

bool contains_ci(std::string_view haystack, std::string_view needle);
/// Byte offset of the first case-insensitive occurrence, or npos.
std::size_t find_ci(std::string_view haystack, std::string_view needle);

std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::size_t word_count(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

enum class Script { unknown, latin, cjk, cyrillic, arabic, other };
const char* to_string(Script script);

/// Writing system holding the majority of letter code points in `s`.
Script dominant_script(std::string_view s);

// ---- time ------------------------------------------------------------------

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Parses RFC 3339 (`2024-05-01T10:00:00Z`, offsets and fractional seconds
/// accepted) and converts to UTC. Throws SchemaError.
Timestamp parse_rfc3339(std::string_view text);

/// Canonical UTC form; milliseconds are emitted only when non-zero.
std::string format_rfc3339(Timestamp ts);

Timestamp epoch_timestamp();

// ---- files -----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);
std::vector<Json> read_jsonl(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace memloom
