#pragma once

// L0 raw-data layer: notes and todos with content-hash identifiers.
//
// On disk a store directory holds two line-delimited JSON files:
//   records.jsonl  append-only log; each line is a record object plus "kind"
//                  ("note" | "todo"). A later line with an existing id
//                  replaces the earlier version.
//   index.jsonl    derived, rewritten after every write: one
//                  {"id","kind","created_at","line"} object per live record in
//                  (created_at, id) order; "line" is the 1-based log line.

#include "memloom/util.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

namespace memloom::store {

enum class Modality { document, audio_transcript, webpage, image_caption, mixed };
enum class TodoStatus { open, done };
enum class RecordKind { note, todo };

const char* to_string(Modality m);
const char* to_string(TodoStatus s);
const char* to_string(RecordKind k);
Modality modality_from_string(std::string_view s);
RecordKind record_kind_from_string(std::string_view s);

struct Note {
  std::string id;
  std::string title;
  std::string content;
  Modality modality = Modality::document;
  std::string source;
  Timestamp created_at{};

  bool operator==(const Note&) const = default;
};

struct Todo {
  std::string id;
  std::string text;
  std::optional<Timestamp> due;
  TodoStatus status = TodoStatus::open;
  Timestamp created_at{};

  bool operator==(const Todo&) const = default;
};

using Record = std::variant<Note, Todo>;

struct CorpusStats {
  std::size_t note_count = 0;
  std::size_t todo_count = 0;

  bool operator==(const CorpusStats&) const = default;
};

const std::string& record_id(const Record& r);
Timestamp record_created_at(const Record& r);
RecordKind record_kind(const Record& r);
/// Searchable text: "title\ncontent" for notes, the description for todos.
std::string record_text(const Record& r);

/// Canonical serialization hashed into the id.
std::string canonical_note(const std::string& title, const std::string& content, Timestamp created_at);
std::string canonical_todo(const std::string& text, const std::optional<Timestamp>& due, Timestamp created_at);

/// Validates a note/todo payload and derives its id. Throws SchemaError.
/// A supplied "id" must equal the derived one. A missing created_at defaults
/// to the Unix epoch so identical payloads always hash identically.
Note note_from_json(const Json& j);
Todo todo_from_json(const Json& j);

/// File-schema JSON (no "kind" field).
Json to_json(const Note& n);
Json to_json(const Todo& t);
Json to_json(const Record& r);

struct RecordFilter {
  std::optional<RecordKind> kind;
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // exclusive
  std::optional<std::string> substring;

  bool matches(const Record& r) const;
};

struct IngestResult {
  std::string id;
  RecordKind kind = RecordKind::note;
  bool created = false;  // false when an identical record was already stored
};

/// Single-writer, multi-reader record store. Without a directory it lives in memory.
class Store {
 public:
  Store() = default;
  explicit Store(std::filesystem::path dir);

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Infers the kind from a "kind" field, else from the payload shape
  /// ("text" ⇒ todo, "title"/"content" ⇒ note).
  IngestResult ingest(const Json& payload);
  IngestResult ingest(const Json& payload, RecordKind kind);
  std::vector<IngestResult> ingest_many(const std::vector<Json>& payloads, RecordKind kind);

  /// Reads `<dir>/notes.jsonl` and `<dir>/todos.jsonl` when present.
  CorpusStats import_corpus(const std::filesystem::path& corpus_dir);

  std::optional<Record> get(std::string_view id) const;
  std::vector<Record> list(const RecordFilter& filter = {}) const;
  CorpusStats stats() const;
  std::size_t size() const;

  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

 private:
  IngestResult put_locked(Record record);
  void rewrite_index_locked() const;

  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Record, std::less<>> by_id_;
  std::map<std::string, std::size_t, std::less<>> log_line_;
  std::size_t log_lines_ = 0;
};

/// Sorted (created_at, id) snapshot keyed by id, convenient for pipeline stages.
class RecordSet {
 public:
  RecordSet() = default;
  explicit RecordSet(std::vector<Record> records);

  const std::vector<Record>& all() const noexcept { return records_; }
  const Record* find(std::string_view id) const;
  CorpusStats stats() const;
  bool empty() const noexcept { return records_.empty(); }
  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::vector<Record> records_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace memloom::store
