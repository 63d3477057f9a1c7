#include "memloom/rubric.hpp"

#include "memloom/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace memloom::eval {

namespace {

const std::vector<Level> kThreeLevels{Level::from_quarters(0), Level::from_quarters(2), Level::from_quarters(4)};
const std::vector<Level> kFiveLevels{Level::from_quarters(0), Level::from_quarters(1), Level::from_quarters(2),
                                     Level::from_quarters(3), Level::from_quarters(4)};

constexpr std::string_view kEmpathyRubric =
    "The response should incorporate the areas user values and is filled with empathy, aiming to help user if "
    "question allows.";

const std::vector<LevelDefinition> kMemoryLevels{
    {Level::from_quarters(0), "0 represents that the answer of trained LLM does not meet the requirement of this metric "
                              "under this query"},
    {Level::from_quarters(2), "0.5 represents that the answer partially meets the requirement"},
    {Level::from_quarters(4), "1 represents that the answer fully meets the requirement"},
};

const std::vector<LevelDefinition> kEnhanceLevels{
    {Level::from_quarters(0),
     "0 represents that the enhanced query becomes the response to the original query, which has a problem with the "
     "role of response, or the enhanced query does not match the related memories at all"},
    {Level::from_quarters(2),
     "0.5 represents that the enhanced query has the correct role, but the enhanced query is not close enough to the "
     "related memories"},
    {Level::from_quarters(4),
     "1 represents that the enhanced query has the correct role and match the related memories perfectly"},
};

const std::vector<LevelDefinition> kCriticLevels{
    {Level::from_quarters(0),
     "0.0 represents that the critic completely fails to consider user's perspective, lacking effective feedback or "
     "extension of the expert's advice. The critic is entirely unrelated to user's background, needs, or thoughts, and "
     "does not demonstrate an understanding or response to user's personalized thinking"},
    {Level::from_quarters(1),
     "0.25 represents that the critic partially aligns with user's needs and background, but most of the time lacks "
     "personalized thinking or reaction. It might simply respond to the expert's advice without demonstrating a deep "
     "understanding of the content or taking initiative in the conversation"},
    {Level::from_quarters(2),
     "0.5 represents that the critic meets user's basic needs and background, showing some feedback and reflection "
     "capabilities. However, the depth and interactivity are insufficient, failing to fully take the conversation to a "
     "deeper level"},
    {Level::from_quarters(3),
     "0.75 represents that the critic demonstrates strong personalized thinking and feedback capabilities, effectively "
     "expanding on the expert's advice, posing new questions or reflections, and presenting a smooth, logical tone"},
    {Level::from_quarters(4),
     "1.0 represents that the critic fully meets user's needs and background, accurately reflecting user's "
     "personalized thinking. It deeply builds upon the expert's advice, offering constructive feedback, questions, or "
     "viewpoints"},
};

std::string canonical_metric_key(std::string_view s) {
  std::string out;
  for (char c : to_lower_ascii(trim(s))) {
    if (c != '-' && c != '_' && c != ' ') out.push_back(c);
  }
  return out;
}

}  // namespace

const std::string_view kLengthBiasClause =
    "Judge content quality, not length: penalize overly long responses with incorrect information, and never reward a "
    "response only for being longer.";

std::optional<Level> Level::parse(std::string_view text) {
  const auto t = trim(text);
  if (t.empty() || t.size() > 12) return std::nullopt;
  // Exact decimal parse: digits '.' digits, no sign, no exponent.
  long whole = 0;
  long frac = 0;
  long scale = 1;
  bool seen_dot = false;
  bool any_digit = false;
  for (char c : t) {
    if (c == '.') {
      if (seen_dot) return std::nullopt;
      seen_dot = true;
      continue;
    }
    if (c < '0' || c > '9') return std::nullopt;
    any_digit = true;
    if (seen_dot) {
      frac = frac * 10 + (c - '0');
      scale *= 10;
    } else {
      whole = whole * 10 + (c - '0');
    }
  }
  if (!any_digit) return std::nullopt;
  // value = whole + frac/scale must equal q/4 for integer q in [0,4].
  const long numerator = (whole * scale + frac) * 4;
  if (numerator % scale != 0) return std::nullopt;
  const long q = numerator / scale;
  if (q < 0 || q > 4) return std::nullopt;
  return Level(static_cast<int>(q));
}

std::string Level::to_string() const {
  switch (quarters_) {
    case 0: return "0";
    case 1: return "0.25";
    case 2: return "0.5";
    case 3: return "0.75";
    default: return "1";
  }
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::correctness: return "Correctness";
    case Metric::helpfulness: return "Helpfulness";
    case Metric::completeness: return "Completeness";
    case Metric::empathy: return "Empathy";
    case Metric::role_correctness: return "Role-correctness";
    case Metric::context_enhance: return "ContextEnhance";
    case Metric::context_critic: return "ContextCritic";
  }
  return "";
}

std::optional<Metric> metric_from_name(std::string_view name) {
  const auto key = canonical_metric_key(name);
  for (auto m : {Metric::correctness, Metric::helpfulness, Metric::completeness, Metric::empathy,
                 Metric::role_correctness, Metric::context_enhance, Metric::context_critic}) {
    if (canonical_metric_key(metric_name(m)) == key) return m;
  }
  return std::nullopt;
}

const char* to_string(EvalTask t) {
  switch (t) {
    case EvalTask::memory_self: return "memory_self";
    case EvalTask::memory_third_party: return "memory_third_party";
    case EvalTask::context_enhance: return "context_enhance";
    case EvalTask::context_critic: return "context_critic";
  }
  return "";
}

EvalTask eval_task_from_string(std::string_view s) {
  for (auto t : {EvalTask::memory_self, EvalTask::memory_third_party, EvalTask::context_enhance,
                 EvalTask::context_critic}) {
    if (s == to_string(t)) return t;
  }
  throw SchemaError("unknown eval task \"" + std::string(s) + "\"");
}

const std::vector<Level>& allowed_levels(Metric m) { return m == Metric::context_critic ? kFiveLevels : kThreeLevels; }

bool is_allowed(Metric m, Level level) {
  const auto& set = allowed_levels(m);
  return std::find(set.begin(), set.end(), level) != set.end();
}

std::vector<Metric> memory_metrics(EvalTask task) {
  return {Metric::correctness, Metric::helpfulness, Metric::completeness,
          task == EvalTask::memory_third_party ? Metric::role_correctness : Metric::empathy};
}

std::string_view metric_definition(Metric m) {
  switch (m) {
    case Metric::correctness: return "The response from LLM must not conflict with recorded content.";
    case Metric::helpfulness:
      return "The response from LLM needs to provide the user with incremental information value or decision-making "
             "value.";
    case Metric::completeness:
      return "When the user's query can be addressed using reference information, the response should include detailed "
             "info and mention all relevant associated items that need to be covered.";
    case Metric::empathy: return kEmpathyRubric;
    case Metric::role_correctness:
      return "Role-correctness represents if this LLM recognizes that the query is raised by another person or model, "
             "but not the user himself.";
    case Metric::context_enhance:
      return "Given the original query, the enhanced query and the related memories, measure whether the enhanced "
             "query is good enough for the user.";
    case Metric::context_critic:
      return "Given the original query, the expert response, the critique and the related memories, measure whether "
             "the critique represents the user's need.";
  }
  return "";
}

const std::vector<LevelDefinition>& level_definitions(Metric m) {
  if (m == Metric::context_enhance) return kEnhanceLevels;
  if (m == Metric::context_critic) return kCriticLevels;
  return kMemoryLevels;
}

std::string perspective_instructions(bool third_party) {
  if (third_party) {
    return "The message comes from another person or model, not from the user you represent. Speak on the user's "
           "behalf, never address the asker as the user, and share only what the user would want shared.";
  }
  return "The message comes from the user you represent. " + std::string(kEmpathyRubric);
}

Json JudgeScore::to_json() const {
  return Json{{"item_id", item_id}, {"metric", metric_name(metric)}, {"level", level.value()}, {"rationale", rationale}};
}

JudgeScore JudgeScore::from_json(const Json& j) {
  JudgeScore s;
  s.item_id = j.value("item_id", "");
  const auto metric = metric_from_name(j.value("metric", ""));
  if (!metric) throw DomainError("unknown metric \"" + j.value("metric", "") + "\"");
  s.metric = *metric;
  std::optional<Level> level;
  if (j.contains("level") && j["level"].is_number()) {
    const double v = j["level"].get<double>();
    const double q = v * 4.0;
    if (std::abs(q - std::round(q)) < 1e-9 && q >= 0 && q <= 4) level = Level::from_quarters(static_cast<int>(std::lround(q)));
  } else if (j.contains("level") && j["level"].is_string()) {
    level = Level::parse(j["level"].get<std::string>());
  }
  if (!level || !is_allowed(s.metric, *level)) {
    throw DomainError("level " + (j.contains("level") ? j["level"].dump() : std::string("<missing>")) +
                      " is outside the allowed set of " + metric_name(s.metric));
  }
  s.level = *level;
  s.rationale = j.value("rationale", "");
  return s;
}

std::vector<JudgeScore> parse_judge_reply(std::string_view reply, const std::vector<Metric>& expected) {
  std::map<Metric, Level> seen;
  std::string rationale;
  for (const auto& raw : split_lines(reply)) {
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;  // free text around the grammar lines is ignored
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (canonical_metric_key(key) == "rationale") {
      rationale = value;
      continue;
    }
    const auto metric = metric_from_name(key);
    if (!metric) continue;
    if (std::find(expected.begin(), expected.end(), *metric) == expected.end()) {
      throw JudgeParseError(std::string("judge scored unexpected metric ") + metric_name(*metric));
    }
    const auto level = Level::parse(value);
    if (!level || !is_allowed(*metric, *level)) {
      throw JudgeParseError("judge level \"" + value + "\" is not allowed for " + metric_name(*metric));
    }
    if (!seen.emplace(*metric, *level).second) {
      throw JudgeParseError(std::string("judge scored ") + metric_name(*metric) + " twice");
    }
  }
  std::vector<JudgeScore> out;
  for (auto m : expected) {
    auto it = seen.find(m);
    if (it == seen.end()) throw JudgeParseError(std::string("judge reply lacks ") + metric_name(m));
    out.push_back(JudgeScore{"", m, it->second, rationale});
  }
  return out;
}

}  // namespace memloom::eval
