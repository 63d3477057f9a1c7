#pragma once

// Shared helpers for unit and acceptance tests.

#include "memloom/gateway.hpp"
#include "memloom/graph.hpp"
#include "memloom/indexer.hpp"
#include "memloom/mock_backend.hpp"
#include "memloom/store.hpp"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

namespace memloom::test {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "memloom-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline llm::RoleConfig fast_role(int max_concurrent = 4) {
  llm::RoleConfig rc;
  rc.model = "mock";
  rc.max_concurrent = max_concurrent;
  rc.backoff_base_ms = 0;
  rc.backoff_max_ms = 1;
  return rc;
}

/// Gateway whose roles are scripted mocks. Scripts use the mock file format.
inline std::unique_ptr<llm::Gateway> scripted_gateway(const std::map<std::string, Json>& scripts,
                                                      std::shared_ptr<llm::AuditSink> audit = nullptr,
                                                      int max_concurrent = 4) {
  auto gw = std::make_unique<llm::Gateway>();
  for (const auto& [role, script] : scripts) {
    gw->add_role(role, fast_role(max_concurrent),
                 std::make_shared<llm::ScriptedBackend>(llm::MockScript::from_json(script)));
  }
  if (audit) gw->set_audit_sink(std::move(audit));
  return gw;
}

inline Json entry(std::string tmpl, std::string response) {
  return Json{{"template", std::move(tmpl)}, {"response", std::move(response)}};
}

inline Json entry(std::string tmpl, std::string pattern, std::string response, bool expand = true) {
  return Json{{"template", std::move(tmpl)}, {"pattern", std::move(pattern)}, {"response", std::move(response)},
              {"expand", expand}};
}

inline Json script(std::vector<Json> entries) { return Json{{"entries", std::move(entries)}}; }

inline store::Note make_note(const std::string& title, const std::string& content, int day = 1) {
  char ts[32];
  std::snprintf(ts, sizeof ts, "2025-01-%02dT09:00:00Z", day);
  return store::note_from_json(Json{{"title", title}, {"content", content}, {"created_at", ts}});
}

inline store::Todo make_todo(const std::string& text, int day = 1) {
  char ts[32];
  std::snprintf(ts, sizeof ts, "2025-01-%02dT18:00:00Z", day);
  return store::todo_from_json(Json{{"text", text}, {"created_at", ts}});
}

/// Entity whose mentions are located by a plain scan of the given records.
inline index::Entity scanned_entity(const std::string& name, index::EntityType type,
                                    const std::vector<store::Record>& records, const std::string& description = "") {
  index::Entity e;
  e.name = name;
  e.type = type;
  e.description = description.empty() ? name + " from the notes." : description;
  for (const auto& r : records) {
    const auto text = store::record_text(r);
    const auto pos = find_ci(text, name);
    if (pos == std::string::npos) continue;
    e.text_unit_refs.push_back({store::record_id(r), pos, pos + name.size()});
  }
  e.frequency = e.text_unit_refs.size();
  return e;
}

inline std::filesystem::path source_dir() { return MEMLOOM_SOURCE_DIR; }

/// Copies the bundled demo (config, corpus, mocks) into `dir`.
inline void copy_demo(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto demo = source_dir() / "data" / "demo";
  for (const auto* item : {"memloom.json", "gateway.json", "train_mock.sh", "corpus", "mock"}) {
    fs::copy(demo / item, dir / item, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  }
}

}  // namespace memloom::test
