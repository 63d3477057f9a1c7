#pragma once

// Scoring rubrics, leveled scores and the judge reply grammar.

#include "memloom/util.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace memloom::eval {

/// A score level held as an exact number of quarters (0..4), so 0.25-step
/// rubric arithmetic never rounds.
class Level {
 public:
  constexpr Level() = default;
  static constexpr Level from_quarters(int q) { return Level(q); }

  /// Parses decimal text ("0", "0.5", ".75", "1.0"). Returns nullopt for
  /// values that are not a whole number of quarters in [0, 1].
  static std::optional<Level> parse(std::string_view text);

  constexpr int quarters() const { return quarters_; }
  constexpr double value() const { return quarters_ / 4.0; }
  std::string to_string() const;

  constexpr bool operator==(const Level&) const = default;
  constexpr auto operator<=>(const Level&) const = default;

 private:
  constexpr explicit Level(int q) : quarters_(q) {}
  int quarters_ = 0;
};

enum class Metric { correctness, helpfulness, completeness, empathy, role_correctness, context_enhance, context_critic };

enum class EvalTask { memory_self, memory_third_party, context_enhance, context_critic };

const char* metric_name(Metric m);
std::optional<Metric> metric_from_name(std::string_view name);
const char* to_string(EvalTask t);
EvalTask eval_task_from_string(std::string_view s);

/// Allowed levels: {0, 0.5, 1} for memory metrics and Context Enhance,
/// {0, 0.25, 0.5, 0.75, 1} for Context Critic.
const std::vector<Level>& allowed_levels(Metric m);
bool is_allowed(Metric m, Level level);

/// The four memory sub-metrics; the fourth is Empathy for self and
/// Role-correctness for third-party.
std::vector<Metric> memory_metrics(EvalTask task);

std::string_view metric_definition(Metric m);

struct LevelDefinition {
  Level level;
  std::string_view text;
};
const std::vector<LevelDefinition>& level_definitions(Metric m);

/// Judge-prompt clause against length bias.
extern const std::string_view kLengthBiasClause;

/// Guidance that frames answers for a perspective. The self framing carries
/// the Empathy rubric; the third-party framing never does.
std::string perspective_instructions(bool third_party);

struct JudgeScore {
  std::string item_id;
  Metric metric = Metric::correctness;
  Level level;
  std::string rationale;

  Json to_json() const;
  /// Throws DomainError when the level is outside the metric's set.
  static JudgeScore from_json(const Json& j);
};

/// Parses `METRIC=LEVEL` lines (plus an optional `RATIONALE=` line) and
/// requires exactly `expected` metrics, each once, each level in its set.
/// Throws JudgeParseError.
std::vector<JudgeScore> parse_judge_reply(std::string_view reply, const std::vector<Metric>& expected);

}  // namespace memloom::eval
