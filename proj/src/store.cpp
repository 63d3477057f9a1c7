#include "memloom/store.hpp"

#include "memloom/error.hpp"

#include <algorithm>
#include <mutex>

namespace memloom::store {

namespace {

const std::string& require_string(const Json& j, const char* field, bool required = true) {
  static const std::string empty;
  if (!j.contains(field) || j[field].is_null()) {
    if (required) throw SchemaError(std::string("missing field \"") + field + "\"");
    return empty;
  }
  if (!j[field].is_string()) throw SchemaError(std::string("field \"") + field + "\" must be a string");
  return j[field].get_ref<const std::string&>();
}

Timestamp created_at_of(const Json& j) {
  const auto& s = require_string(j, "created_at", false);
  return s.empty() ? epoch_timestamp() : parse_rfc3339(s);
}

void check_id(const Json& j, const std::string& derived) {
  if (j.contains("id") && !j["id"].is_null()) {
    if (!j["id"].is_string() || j["id"].get<std::string>() != derived) {
      throw SchemaError("supplied id does not match the content hash", Json{{"expected", derived}});
    }
  }
}

bool record_less(const Record& a, const Record& b) {
  const auto ta = record_created_at(a);
  const auto tb = record_created_at(b);
  if (ta != tb) return ta < tb;
  return record_id(a) < record_id(b);
}

}  // namespace

const char* to_string(Modality m) {
  switch (m) {
    case Modality::document: return "document";
    case Modality::audio_transcript: return "audio-transcript";
    case Modality::webpage: return "webpage";
    case Modality::image_caption: return "image-caption";
    case Modality::mixed: return "mixed";
  }
  return "document";
}

const char* to_string(TodoStatus s) { return s == TodoStatus::done ? "done" : "open"; }
const char* to_string(RecordKind k) { return k == RecordKind::todo ? "todo" : "note"; }

Modality modality_from_string(std::string_view s) {
  for (auto m : {Modality::document, Modality::audio_transcript, Modality::webpage, Modality::image_caption,
                 Modality::mixed}) {
    if (s == to_string(m)) return m;
  }
  throw SchemaError("unknown modality \"" + std::string(s) + "\"");
}

RecordKind record_kind_from_string(std::string_view s) {
  if (s == "note") return RecordKind::note;
  if (s == "todo") return RecordKind::todo;
  throw SchemaError("unknown record kind \"" + std::string(s) + "\"");
}

const std::string& record_id(const Record& r) {
  return std::visit([](const auto& v) -> const std::string& { return v.id; }, r);
}

Timestamp record_created_at(const Record& r) {
  return std::visit([](const auto& v) { return v.created_at; }, r);
}

RecordKind record_kind(const Record& r) {
  return std::holds_alternative<Note>(r) ? RecordKind::note : RecordKind::todo;
}

std::string record_text(const Record& r) {
  if (const auto* n = std::get_if<Note>(&r)) return n->title + "\n" + n->content;
  return std::get<Todo>(r).text;
}

std::string canonical_note(const std::string& title, const std::string& content, Timestamp created_at) {
  return Json{{"kind", "note"}, {"title", title}, {"content", content}, {"created_at", format_rfc3339(created_at)}}
      .dump();
}

std::string canonical_todo(const std::string& text, const std::optional<Timestamp>& due, Timestamp created_at) {
  return Json{{"kind", "todo"},
              {"text", text},
              {"due", due ? Json(format_rfc3339(*due)) : Json(nullptr)},
              {"created_at", format_rfc3339(created_at)}}
      .dump();
}

Note note_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("note payload must be an object");
  Note n;
  n.title = require_string(j, "title");
  n.content = require_string(j, "content");
  if (trim(n.title).empty()) throw SchemaError("note title is empty");
  if (collapse_whitespace(n.content).empty()) throw SchemaError("note content is empty after whitespace normalization");
  const auto& modality = require_string(j, "modality", false);
  n.modality = modality.empty() ? Modality::document : modality_from_string(modality);
  n.source = require_string(j, "source", false);
  n.created_at = created_at_of(j);
  n.id = sha256_hex(canonical_note(n.title, n.content, n.created_at));
  check_id(j, n.id);
  return n;
}

Todo todo_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("todo payload must be an object");
  Todo t;
  t.text = require_string(j, "text");
  if (collapse_whitespace(t.text).empty()) throw SchemaError("todo text is empty");
  const auto& due = require_string(j, "due", false);
  if (!due.empty()) t.due = parse_rfc3339(due);
  const auto& status = require_string(j, "status", false);
  if (status.empty() || status == "open") {
    t.status = TodoStatus::open;
  } else if (status == "done") {
    t.status = TodoStatus::done;
  } else {
    throw SchemaError("unknown todo status \"" + status + "\"");
  }
  t.created_at = created_at_of(j);
  t.id = sha256_hex(canonical_todo(t.text, t.due, t.created_at));
  check_id(j, t.id);
  return t;
}

Json to_json(const Note& n) {
  return Json{{"id", n.id},           {"title", n.title},   {"content", n.content}, {"modality", to_string(n.modality)},
              {"source", n.source},   {"created_at", format_rfc3339(n.created_at)}};
}

Json to_json(const Todo& t) {
  return Json{{"id", t.id},
              {"text", t.text},
              {"due", t.due ? Json(format_rfc3339(*t.due)) : Json(nullptr)},
              {"status", to_string(t.status)},
              {"created_at", format_rfc3339(t.created_at)}};
}

Json to_json(const Record& r) {
  return std::visit([](const auto& v) { return to_json(v); }, r);
}

bool RecordFilter::matches(const Record& r) const {
  if (kind && record_kind(r) != *kind) return false;
  const auto ts = record_created_at(r);
  if (from && ts < *from) return false;
  if (to && !(ts < *to)) return false;
  if (substring) {
    if (const auto* n = std::get_if<Note>(&r)) {
      if (n->title.find(*substring) == std::string::npos && n->content.find(*substring) == std::string::npos) {
        return false;
      }
    } else if (std::get<Todo>(r).text.find(*substring) == std::string::npos) {
      return false;
    }
  }
  return true;
}

Store::Store(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(*dir_);
  const auto log = *dir_ / "records.jsonl";
  if (!std::filesystem::exists(log)) return;
  for (const auto& line : read_jsonl(log)) {
    ++log_lines_;
    const auto kind = record_kind_from_string(line.value("kind", ""));
    Record rec = kind == RecordKind::note ? Record{note_from_json(line)} : Record{todo_from_json(line)};
    const auto id = record_id(rec);
    by_id_.insert_or_assign(id, std::move(rec));
    log_line_[id] = log_lines_;
  }
}

IngestResult Store::put_locked(Record record) {
  const auto id = record_id(record);
  const auto kind = record_kind(record);
  if (auto it = by_id_.find(id); it != by_id_.end()) {
    if (it->second == record) return IngestResult{id, kind, false};
  }
  if (dir_) {
    Json line = to_json(record);
    line["kind"] = to_string(kind);
    append_line(*dir_ / "records.jsonl", line.dump());
  }
  ++log_lines_;
  log_line_[id] = log_lines_;
  by_id_.insert_or_assign(id, std::move(record));
  return IngestResult{id, kind, true};
}

void Store::rewrite_index_locked() const {
  if (!dir_) return;
  std::vector<const Record*> ordered;
  ordered.reserve(by_id_.size());
  for (const auto& [id, rec] : by_id_) ordered.push_back(&rec);
  std::sort(ordered.begin(), ordered.end(), [](const Record* a, const Record* b) { return record_less(*a, *b); });
  std::string out;
  for (const Record* rec : ordered) {
    const auto& id = record_id(*rec);
    out += Json{{"id", id},
                {"kind", to_string(record_kind(*rec))},
                {"created_at", format_rfc3339(record_created_at(*rec))},
                {"line", log_line_.at(id)}}
               .dump();
    out += '\n';
  }
  write_file(*dir_ / "index.jsonl", out);
}

IngestResult Store::ingest(const Json& payload) {
  if (payload.is_object() && payload.contains("kind") && payload["kind"].is_string()) {
    return ingest(payload, record_kind_from_string(payload["kind"].get<std::string>()));
  }
  if (payload.is_object() && payload.contains("text") && !payload.contains("content")) {
    return ingest(payload, RecordKind::todo);
  }
  return ingest(payload, RecordKind::note);
}

IngestResult Store::ingest(const Json& payload, RecordKind kind) {
  Json body = payload;
  if (body.is_object()) body.erase("kind");
  Record rec = kind == RecordKind::note ? Record{note_from_json(body)} : Record{todo_from_json(body)};
  std::unique_lock lock(mu_);
  auto result = put_locked(std::move(rec));
  if (result.created) rewrite_index_locked();
  return result;
}

std::vector<IngestResult> Store::ingest_many(const std::vector<Json>& payloads, RecordKind kind) {
  std::vector<Record> parsed;
  parsed.reserve(payloads.size());
  for (const auto& p : payloads) {
    Json body = p;
    if (body.is_object()) body.erase("kind");
    parsed.push_back(kind == RecordKind::note ? Record{note_from_json(body)} : Record{todo_from_json(body)});
  }
  std::unique_lock lock(mu_);
  std::vector<IngestResult> out;
  bool changed = false;
  for (auto& rec : parsed) {
    out.push_back(put_locked(std::move(rec)));
    changed = changed || out.back().created;
  }
  if (changed) rewrite_index_locked();
  return out;
}

CorpusStats Store::import_corpus(const std::filesystem::path& corpus_dir) {
  const auto notes = corpus_dir / "notes.jsonl";
  const auto todos = corpus_dir / "todos.jsonl";
  if (!std::filesystem::exists(notes) && !std::filesystem::exists(todos)) {
    throw IoError("no notes.jsonl or todos.jsonl under " + corpus_dir.string());
  }
  if (std::filesystem::exists(notes)) ingest_many(read_jsonl(notes), RecordKind::note);
  if (std::filesystem::exists(todos)) ingest_many(read_jsonl(todos), RecordKind::todo);
  return stats();
}

std::optional<Record> Store::get(std::string_view id) const {
  std::shared_lock lock(mu_);
  if (auto it = by_id_.find(id); it != by_id_.end()) return it->second;
  return std::nullopt;
}

std::vector<Record> Store::list(const RecordFilter& filter) const {
  std::vector<Record> out;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, rec] : by_id_) {
      if (filter.matches(rec)) out.push_back(rec);
    }
  }
  std::sort(out.begin(), out.end(), record_less);
  return out;
}

CorpusStats Store::stats() const {
  std::shared_lock lock(mu_);
  CorpusStats s;
  for (const auto& [id, rec] : by_id_) {
    if (record_kind(rec) == RecordKind::note) {
      ++s.note_count;
    } else {
      ++s.todo_count;
    }
  }
  return s;
}

std::size_t Store::size() const {
  std::shared_lock lock(mu_);
  return by_id_.size();
}

RecordSet::RecordSet(std::vector<Record> records) : records_(std::move(records)) {
  std::sort(records_.begin(), records_.end(), record_less);
  for (std::size_t i = 0; i < records_.size(); ++i) index_[record_id(records_[i])] = i;
}

const Record* RecordSet::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

CorpusStats RecordSet::stats() const {
  CorpusStats s;
  for (const auto& r : records_) {
    if (record_kind(r) == RecordKind::note) {
      ++s.note_count;
    } else {
      ++s.todo_count;
    }
  }
  return s;
}

}  // namespace memloom::store
