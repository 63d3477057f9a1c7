#pragma once

// Held-out evaluation: eval-set synthesis isolated from training queries,
// rubric judging, aggregation and the report table.

#include "memloom/rubric.hpp"
#include "memloom/synthesizer.hpp"

#include <map>
#include <set>

namespace memloom::eval {

struct EvalItem {
  std::string id;
  EvalTask task = EvalTask::memory_self;
  std::string query;         // what the model under test receives
  std::string source_query;  // the generated question/need
  std::vector<std::string> context_refs;
  std::optional<std::string> expert_response;  // context_critic only

  Json to_json() const;
  static EvalItem from_json(const Json& j);
};

/// Normalized training queries (both query and source_query of every pair).
std::set<std::string> training_query_index(const std::vector<synth::TrainingPair>& pairs);

struct EvalSetOptions {
  std::size_t n_per_task = 60;
  int resample_rounds = 6;
};

/// n_per_task items for each of the four tasks. Collisions with `training`
/// (or earlier items) are re-sampled; IsolationExhausted if a task stays short.
std::vector<EvalItem> synth_eval_set(const synth::SynthContext& ctx, const std::set<std::string>& training,
                                     const EvalSetOptions& options = {});

struct JudgeContext {
  const store::RecordSet& records;
  const prompts::TemplateLibrary& templates;
  llm::Gateway& gateway;
  std::string judge_role = "judge";
  int retries = 1;
};

/// Judge prompts, exposed for fidelity checks.
prompts::RenderedPrompt memory_judge_prompt(std::string_view response, const EvalItem& item, const JudgeContext& ctx);
prompts::RenderedPrompt enhance_judge_prompt(std::string_view response, const EvalItem& item, const JudgeContext& ctx);
prompts::RenderedPrompt critic_judge_prompt(std::string_view response, const EvalItem& item, const JudgeContext& ctx);

std::vector<JudgeScore> score_memory(std::string_view response, const EvalItem& item, const JudgeContext& ctx);
JudgeScore score_enhance(std::string_view response, const EvalItem& item, const JudgeContext& ctx);
JudgeScore score_critic(std::string_view response, const EvalItem& item, const JudgeContext& ctx);

struct TaskScore {
  EvalTask task = EvalTask::memory_self;
  JudgeScore score;

  Json to_json() const;
  static TaskScore from_json(const Json& j);
};

struct MetricReport {
  std::string cot_style = "strong";
  bool dpo = false;
  std::map<EvalTask, double> task_means;
  std::map<EvalTask, std::map<Metric, double>> metric_means;  // memory tasks only
  std::map<EvalTask, std::size_t> item_counts;

  Json to_json() const;
  static MetricReport from_json(const Json& j);
};

/// Per item: mean of its metric levels; per task: mean over items.
/// Throws DomainError on an out-of-set level.
MetricReport aggregate(const std::vector<TaskScore>& scores, std::string cot_style, bool dpo);

/// Markdown grid with columns COT, [DPO,] Memory (Self), Memory (Third-Party),
/// Context Enhance, Context Critic. The DPO column appears when any report used
/// DPO. Rows: strong, multi_step, weak; DPO Yes before No.
std::string render_table(std::vector<MetricReport> reports);

struct EvalRunOptions {
  std::string model_role = "tuned";
  synth::CotStyle style = synth::CotStyle::strong;
  bool dpo = false;
  std::size_t parallelism = 4;
  std::uint64_t seed = 42;
};

struct ItemResponse {
  std::string item_id;
  std::string raw;
  std::string judged;  // after reasoning removal for strong style
  bool malformed = false;

  Json to_json() const;
};

struct EvalRun {
  std::vector<ItemResponse> responses;
  std::vector<TaskScore> scores;
  MetricReport report;
};

EvalRun run_eval(const std::vector<EvalItem>& items, const JudgeContext& ctx, const EvalRunOptions& options);

}  // namespace memloom::eval
