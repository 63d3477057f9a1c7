#include "memloom/prompts.hpp"

#include <utility>

namespace memloom::prompts {

namespace {

constexpr std::string_view kSystemMarker = "=== system ===";
constexpr std::string_view kUserMarker = "=== user ===";

const std::pair<const char*, const char*> kEmbedded[] = {
#include "memloom_templates.inc"
};

std::string strip_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

Template parse_template(const std::string& name, const std::string& text) {
  const auto sys = text.find(kSystemMarker);
  const auto usr = text.find(kUserMarker);
  if (usr == std::string::npos) throw ConfigError("template \"" + name + "\" has no \"=== user ===\" section");
  Template t;
  t.name = name;
  t.id = name + "@" + sha256_hex(text).substr(0, 8);
  if (sys != std::string::npos) {
    if (sys > usr) throw ConfigError("template \"" + name + "\": system section must precede user section");
    auto body_start = text.find('\n', sys);
    body_start = body_start == std::string::npos ? usr : body_start + 1;
    t.system = strip_trailing_newlines(text.substr(body_start, usr - body_start));
  }
  auto user_start = text.find('\n', usr);
  t.user = user_start == std::string::npos ? std::string() : strip_trailing_newlines(text.substr(user_start + 1));
  return t;
}

std::string substitute(std::string_view text, const Vars& vars) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t i = 0;
  while (i < text.size()) {
    const auto open = text.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    out.append(text.substr(i, open - i));
    const auto key = text.substr(open + 2, close - open - 2);
    auto it = vars.find(key);
    if (it == vars.end()) throw ConfigError("template variable {{" + std::string(key) + "}} has no value");
    out.append(it->second);
    i = close + 2;
  }
  return out;
}

const TemplateLibrary& TemplateLibrary::builtin() {
  static const TemplateLibrary lib = [] {
    TemplateLibrary l;
    for (const auto& [name, body] : kEmbedded) l.templates_.emplace(name, parse_template(name, body));
    return l;
  }();
  return lib;
}

TemplateLibrary TemplateLibrary::with_overrides(const std::filesystem::path& dir) {
  TemplateLibrary lib = builtin();
  if (!std::filesystem::is_directory(dir)) throw ConfigError("templates directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    const auto name = entry.path().stem().string();
    lib.templates_.insert_or_assign(name, parse_template(name, read_file(entry.path())));
  }
  return lib;
}

const Template& TemplateLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown prompt template \"" + std::string(name) + "\"");
  return it->second;
}

bool TemplateLibrary::contains(std::string_view name) const { return templates_.find(name) != templates_.end(); }

std::vector<std::string> TemplateLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : templates_) out.push_back(name);
  return out;
}

RenderedPrompt TemplateLibrary::render(std::string_view name, const Vars& vars) const {
  const auto& t = get(name);
  return RenderedPrompt{t.id, t.name, substitute(t.system, vars), substitute(t.user, vars)};
}

llm::ChatRequest TemplateLibrary::request(std::string role_id, std::string_view name, const Vars& vars,
                                          double temperature) const {
  auto p = render(name, vars);
  // Mock matchers key on the template name; the hashed id goes to provenance.
  return llm::make_request(std::move(role_id), p.template_name, std::move(p.system), std::move(p.user), temperature);
}

}  // namespace memloom::prompts
