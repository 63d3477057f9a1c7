#pragma once

// Root configuration (`memloom.json`) and the stage runner shared by the CLI
// and the HTTP service. Stages: ingest, index, synth, filter, export, train,
// eval, report. All artifacts live under the configured workdir:
//
//   store/records.jsonl, store/index.jsonl
//   memory_graph.json, l1_profile.json, l1_grounding.json
//   synth/pairs.jsonl
//   filter/kept.jsonl, filter/rejected.jsonl, filter/filter_report.json
//   datasets/sft_{task}_{style}.jsonl, datasets/dpo.jsonl, datasets/manifest.json
//   train/<job>/..., registry/tuned.json
//   eval/eval_set.jsonl, eval/responses.jsonl, eval/scores.jsonl, eval/report.json, eval/table.txt
//   reports/report.json, reports/table.txt
//   stages/<stage>.json   fingerprint of the last successful run
//   sessions/<id>.jsonl, llm_audit.jsonl

#include "memloom/gateway.hpp"
#include "memloom/prompts.hpp"
#include "memloom/store.hpp"
#include "memloom/synthesizer.hpp"

#include <filesystem>
#include <memory>
#include <mutex>

namespace memloom {

struct PipelineConfig {
  std::filesystem::path base_dir;  // directory of memloom.json; relative paths resolve here
  std::filesystem::path workdir = "work";
  std::optional<std::filesystem::path> corpus;
  std::filesystem::path gateway = "gateway.json";
  std::optional<std::filesystem::path> templates;
  std::uint64_t seed = 42;
  std::size_t parallelism = 4;

  std::size_t batch_size = 8;
  std::size_t profile_top_k = 20;

  // Pairs per ranked entity; `counts` overrides with absolute numbers.
  std::map<synth::TaskKind, double> multipliers{{synth::TaskKind::memory_qa, 18.0},
                                                {synth::TaskKind::context_enhance, 9.0},
                                                {synth::TaskKind::context_critic, 9.0}};
  std::map<synth::TaskKind, std::size_t> counts;
  synth::CotStyle cot_style = synth::CotStyle::strong;
  synth::StyleLimits limits;
  double quality_threshold = 0.5;

  bool dpo = true;
  double dpo_ratio = 0.2;

  std::size_t eval_n_per_task = 60;
  std::string eval_model_role;  // empty: "tuned" when configured, else "l2"

  std::optional<std::string> train_command;
  Json train_endpoint;  // role object used when the job leaves no endpoint.json

  int router_max_rounds = 2;

  std::string server_host = "127.0.0.1";
  int server_port = 8080;
  std::string server_token_env = "MEMLOOM_SERVER_TOKEN";
  std::optional<std::filesystem::path> app_dir;

  /// Throws ConfigError naming the offending key.
  static PipelineConfig from_json(const Json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);

  /// Settings that influence generated data, without any filesystem path.
  Json snapshot() const;
};

enum class JobStatus { pending, running, succeeded, failed };
const char* to_string(JobStatus s);

struct TrainJob {
  std::string id;
  std::string command;  // after placeholder substitution
  JobStatus status = JobStatus::pending;
  std::filesystem::path log_path;
  std::filesystem::path output_dir;
  int exit_code = -1;
  Json endpoint;  // registered role object on success
  std::string error;

  Json to_json() const;
};

struct TrainPaths {
  std::vector<std::filesystem::path> sft;
  std::filesystem::path dpo;
  std::filesystem::path manifest;
  std::filesystem::path output;
};

std::string shell_quote(std::string_view s);
/// Replaces {sft}, {dpo}, {manifest}, {output} with shell-quoted absolute paths.
std::string substitute_train_command(std::string_view tmpl, const TrainPaths& paths);

/// Launches `command_template` through /bin/sh from `endpoint_base_dir`, with
/// stdout/stderr captured in `log_path`. On exit 0 the endpoint comes from `<output>/endpoint.json`, else
/// from `fallback_endpoint`; without either the job fails. Throws SpawnError
/// when the process cannot be started.
TrainJob run_train_job(const std::string& job_id, const std::string& command_template, const TrainPaths& paths,
                       const std::filesystem::path& log_path, const Json& fallback_endpoint,
                       const std::filesystem::path& endpoint_base_dir);

struct StageOptions {
  bool force = false;
  std::vector<std::filesystem::path> inputs;  // ingest sources / extra report files
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  static const std::vector<std::string>& stages();

  const PipelineConfig& config() const noexcept { return config_; }
  std::filesystem::path workdir() const;
  std::filesystem::path artifact(std::string_view rel) const { return workdir() / std::string(rel); }

  store::Store& store();
  std::shared_ptr<llm::Gateway> gateway();
  /// Rebuilds the gateway (picks up registry/tuned.json).
  void reload_gateway();
  const prompts::TemplateLibrary& templates() const { return templates_; }

  /// Throws MissingDependency for the first absent input artifact.
  void check_dependencies(std::string_view stage) const;

  /// Runs a stage and returns its summary. Unchanged inputs skip the work
  /// (summary carries "skipped": true) unless options.force.
  Json run(std::string_view stage, const StageOptions& options = {});

 private:
  Json ingest(const StageOptions& options);
  Json index();
  Json synth();
  Json filter();
  Json export_datasets();
  Json train();
  Json eval();
  Json report(const StageOptions& options);

  std::vector<std::string> inputs_of(std::string_view stage) const;
  std::string fingerprint(std::string_view stage, const StageOptions& options);
  std::string gateway_fingerprint(std::string_view stage) const;

  PipelineConfig config_;
  prompts::TemplateLibrary templates_;
  std::mutex mu_;  // one stage at a time
  std::mutex lazy_mu_;
  std::unique_ptr<store::Store> store_;
  std::shared_ptr<llm::Gateway> gateway_;
};

}  // namespace memloom
