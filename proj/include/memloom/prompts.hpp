#pragma once

// Prompt templates. Each template file `templates/<name>.txt` has a
// `=== system ===` section and a `=== user ===` section; `{{var}}`
// placeholders are substituted in a single pass (values are never rescanned).
// The template id recorded in provenance is `<name>@<first 8 hex of sha256(file)>`.

#include "memloom/gateway.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace memloom::prompts {

using Vars = std::map<std::string, std::string, std::less<>>;

struct Template {
  std::string name;
  std::string id;
  std::string system;
  std::string user;
};

struct RenderedPrompt {
  std::string template_id;
  std::string template_name;
  std::string system;
  std::string user;
};

Template parse_template(const std::string& name, const std::string& text);

/// Replaces `{{key}}`; throws ConfigError for placeholders without a value.
std::string substitute(std::string_view text, const Vars& vars);

class TemplateLibrary {
 public:
  /// Templates compiled into the binary.
  static const TemplateLibrary& builtin();
  /// Built-ins overlaid with every `*.txt` file found in `dir`.
  static TemplateLibrary with_overrides(const std::filesystem::path& dir);

  const Template& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

  RenderedPrompt render(std::string_view name, const Vars& vars) const;
  llm::ChatRequest request(std::string role_id, std::string_view name, const Vars& vars, double temperature = 0.0) const;

 private:
  std::map<std::string, Template, std::less<>> templates_;
};

}  // namespace memloom::prompts
