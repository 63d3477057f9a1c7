#pragma once

// Training-data synthesis: question/need generation, the three CoT answer
// styles, five-level filtering, DPO preference pairs and dataset export.

#include "memloom/gateway.hpp"
#include "memloom/graph.hpp"
#include "memloom/prompts.hpp"
#include "memloom/store.hpp"

#include <filesystem>
#include <optional>
#include <set>

namespace memloom::synth {

enum class TaskKind { memory_qa, context_enhance, context_critic };
enum class Perspective { self, third_party };
enum class CotStyle { weak, multi_step, strong };

const char* to_string(TaskKind t);
const char* to_string(Perspective p);
const char* to_string(CotStyle s);
TaskKind task_kind_from_string(std::string_view s);
Perspective perspective_from_string(std::string_view s);
CotStyle cot_style_from_string(std::string_view s);

struct Provenance {
  std::string template_id;
  std::string model;
  std::uint64_t seed = 0;

  bool operator==(const Provenance&) const = default;
};

/// Entries of context_refs are entity keys ("person:Ada"), record ids, or
/// the literal "profile".
struct TrainingPair {
  std::string id;
  TaskKind task_kind = TaskKind::memory_qa;
  Perspective perspective = Perspective::self;
  std::string query;
  std::string source_query;  // generated question/need before any wrapping
  std::vector<std::string> context_refs;
  std::optional<std::string> reasoning;
  std::string answer;
  CotStyle cot_style = CotStyle::weak;
  Provenance provenance;

  Json to_json() const;
  /// Throws SchemaError on missing fields or unknown enum values.
  static TrainingPair from_json(const Json& j);
  bool operator==(const TrainingPair&) const = default;
};

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string source_pair_id;

  Json to_json() const;
  static PreferencePair from_json(const Json& j);
  bool operator==(const PreferencePair&) const = default;
};

struct StyleLimits {
  std::size_t min_reasoning = 200;  // code points; multi-step and strong
  std::size_t max_reasoning = 2000;
  std::size_t min_answer = 30;
  std::size_t max_answer = 4000;
  int retries = 2;  // extra attempts after a format violation
};

struct Roles {
  std::string synth = "synth";
  std::string expert = "expert";
  std::string self = "self";
  std::string judge = "judge";
  std::string tuned = "tuned";
};

struct SynthContext {
  const index::MemoryGraph& graph;
  const store::RecordSet& records;
  const index::L1Profile& profile;
  const prompts::TemplateLibrary& templates;
  llm::Gateway& gateway;
  Roles roles;
  StyleLimits limits;
  std::uint64_t seed = 42;
  std::size_t parallelism = 4;
  std::size_t context_records = 5;  // related records embedded per prompt
  int question_rounds = 3;          // generation rounds before accepting a shortfall
  const std::set<std::string>* exclude = nullptr;  // normalized queries that must not be produced
};

// ---- prompt material --------------------------------------------------------

/// Profile block used in every synthesis prompt.
std::string render_profile(const index::L1Profile& profile);
/// Records supporting an entity in (created_at, id) order, capped at `limit`.
std::vector<std::string> related_records(const index::MemoryGraph& graph, const std::string& entity_key,
                                         std::size_t limit);
/// "[id] (kind) text" lines for the record ids among `refs`.
std::string render_context(const store::RecordSet& records, const std::vector<std::string>& refs);
/// First entity key among `refs`, if any.
std::optional<std::string> primary_entity(const std::vector<std::string>& refs);

/// Query shown to the critic: need followed by the expert response.
std::string critic_query(std::string_view need, std::string_view expert_response);

// ---- generation ------------------------------------------------------------

/// Question seeds without answers, alternating perspectives over ranked entities.
std::vector<TrainingPair> memory_qa_queries(const SynthContext& ctx, std::size_t n);
std::vector<TrainingPair> context_enhance_queries(const SynthContext& ctx, std::size_t n);
/// Needs plus expert responses (expert role); query = critic_query(need, expert).
std::vector<TrainingPair> context_critic_queries(const SynthContext& ctx, std::size_t n);

/// Fills reasoning/answer in the given style. Throws FormatError once the
/// retry budget is spent on a multi-step or strong format violation.
TrainingPair apply_cot_style(TrainingPair pair, CotStyle style, const SynthContext& ctx);
std::vector<TrainingPair> apply_cot_style_all(const std::vector<TrainingPair>& seeds, CotStyle style,
                                              const SynthContext& ctx);

/// Throws InsufficientContext when the graph has fewer than 3 entities.
std::vector<TrainingPair> synth_memory_qa(const SynthContext& ctx, std::size_t n, CotStyle style);
std::vector<TrainingPair> synth_context_enhance(const SynthContext& ctx, std::size_t n, CotStyle style);
std::vector<TrainingPair> synth_context_critic(const SynthContext& ctx, std::size_t n, CotStyle style);

// ---- SFT rendering -----------------------------------------------------------

/// The SFT prompt (system + user) a pair is trained on.
prompts::RenderedPrompt sft_prompt(const TrainingPair& pair, const prompts::TemplateLibrary& templates);
/// Assistant target: strong pairs carry the reasoning block first; weak and
/// multi-step pairs carry the answer only.
std::string assistant_content(const TrainingPair& pair);
/// Single-string prompt used in preference pairs.
std::string flat_prompt(const prompts::RenderedPrompt& p);

// ---- filtering ---------------------------------------------------------------

enum class FilterLevel { schema = 1, language, length, grounding, judge };
const char* to_string(FilterLevel level);

struct LevelCount {
  FilterLevel level = FilterLevel::schema;
  std::size_t inspected = 0;
  std::size_t rejected = 0;
};

struct Rejection {
  std::string pair_id;
  FilterLevel level = FilterLevel::schema;
  std::string reason;
};

struct FilterReport {
  std::vector<LevelCount> levels;
  std::size_t total_in = 0;
  std::size_t total_out = 0;
  std::vector<Rejection> rejections;

  Json to_json() const;
};

struct FilterResult {
  std::vector<TrainingPair> kept;
  FilterReport report;
};

struct FilterContext {
  const index::MemoryGraph& graph;
  const store::RecordSet& records;
  const prompts::TemplateLibrary& templates;
  llm::Gateway& gateway;
  std::string judge_role = "judge";
  StyleLimits limits;
  double quality_threshold = 0.5;  // judge level needed to keep a pair
  std::size_t parallelism = 4;
};

/// The local checks L1-L4; returns the first failing level and a reason.
std::optional<std::pair<FilterLevel, std::string>> local_check(const TrainingPair& pair, const FilterContext& ctx,
                                                               Script corpus_script);
Script corpus_script(const store::RecordSet& records);

FilterResult filter_pairs(const std::vector<TrainingPair>& pairs, const FilterContext& ctx);

// ---- DPO ---------------------------------------------------------------------

struct DpoOptions {
  double ratio = 0.2;
  double shortfall_ratio = 0.15;
  double temperature = 0.7;
  std::string tuned_role = "tuned";
  std::string judge_role = "judge";
  std::uint64_t seed = 42;
  std::size_t parallelism = 4;
};

struct DpoResult {
  std::vector<PreferencePair> pairs;
  std::size_t target = 0;
  std::size_t considered = 0;
  bool ratio_shortfall = false;
};

/// Priority of a pair: best rank among its entity refs (lower is better).
std::size_t pair_priority(const TrainingPair& pair, const std::vector<std::string>& ranked_entities);

DpoResult build_dpo_pairs(const std::vector<TrainingPair>& sft_pairs, const std::vector<std::string>& ranked_entities,
                          const prompts::TemplateLibrary& templates, llm::Gateway& gateway,
                          const DpoOptions& options = {});

// ---- export --------------------------------------------------------------------

/// Writes `sft_{task}_{style}.jsonl` for every (task, style) in `layout`
/// (files may be empty), `dpo.jsonl` and `manifest.json`. Returns the manifest.
Json export_dataset(const std::vector<TrainingPair>& pairs, const std::vector<PreferencePair>& dpo,
                    const std::vector<std::pair<TaskKind, CotStyle>>& layout, const std::filesystem::path& dir,
                    const prompts::TemplateLibrary& templates, const Json& config_snapshot);

std::string sft_file_name(TaskKind task, CotStyle style);

}  // namespace memloom::synth
