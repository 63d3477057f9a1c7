#include "memloom/pipeline.hpp"

#include "memloom/error.hpp"
#include "memloom/evaluator.hpp"
#include "memloom/indexer.hpp"
#include "memloom/mock_backend.hpp"
#include "memloom/parallel.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>

namespace memloom {

namespace fs = std::filesystem;

namespace {

const synth::TaskKind kTasks[] = {synth::TaskKind::memory_qa, synth::TaskKind::context_enhance,
                                  synth::TaskKind::context_critic};

void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ConfigError(where + ": unknown key \"" + k + "\"");
    }
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::size_t positive(const Json& j, const char* key, std::size_t fallback, const std::string& where, bool allow_zero = false) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer() || j[key].get<long long>() < (allow_zero ? 0 : 1)) {
    throw ConfigError(where + "." + key + (allow_zero ? " must be a non-negative integer" : " must be a positive integer"));
  }
  return j[key].get<std::size_t>();
}

std::vector<synth::TrainingPair> read_pairs(const fs::path& path) {
  std::vector<synth::TrainingPair> out;
  for (const auto& j : read_jsonl(path)) out.push_back(synth::TrainingPair::from_json(j));
  return out;
}

std::string jsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const Json& j, const fs::path& base_dir) {
  const std::string w = "memloom.json";
  check_keys(j, {"workdir", "corpus", "gateway", "templates", "seed", "parallelism", "index", "synth", "filter", "dpo",
                 "eval", "train", "router", "server"},
             w);
  PipelineConfig c;
  c.base_dir = base_dir;
  c.workdir = base_dir / get_or<std::string>(j, "workdir", "work", w);
  if (auto corpus = get_or<std::string>(j, "corpus", "", w); !corpus.empty()) c.corpus = base_dir / corpus;
  c.gateway = base_dir / get_or<std::string>(j, "gateway", "gateway.json", w);
  if (auto t = get_or<std::string>(j, "templates", "", w); !t.empty()) c.templates = base_dir / t;
  c.seed = get_or<std::uint64_t>(j, "seed", 42, w);
  c.parallelism = positive(j, "parallelism", 4, w);

  if (j.contains("index")) {
    const auto& s = j["index"];
    check_keys(s, {"batch_size", "profile_top_k"}, w + ".index");
    c.batch_size = positive(s, "batch_size", c.batch_size, w + ".index");
    c.profile_top_k = positive(s, "profile_top_k", c.profile_top_k, w + ".index");
  }
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    const auto sw = w + ".synth";
    check_keys(s, {"multipliers", "counts", "cot_style", "min_reasoning", "max_reasoning", "min_answer", "max_answer",
                   "retries"},
               sw);
    if (s.contains("multipliers")) {
      check_keys(s["multipliers"], {"memory_qa", "context_enhance", "context_critic"}, sw + ".multipliers");
      for (const auto& [k, v] : s["multipliers"].items()) {
        if (!v.is_number() || v.get<double>() < 0) throw ConfigError(sw + ".multipliers." + k + " must be >= 0");
        c.multipliers[synth::task_kind_from_string(k)] = v.get<double>();
      }
    }
    if (s.contains("counts")) {
      check_keys(s["counts"], {"memory_qa", "context_enhance", "context_critic"}, sw + ".counts");
      for (const auto& [k, v] : s["counts"].items()) {
        c.counts[synth::task_kind_from_string(k)] = positive(s["counts"], k.c_str(), 0, sw + ".counts", true);
      }
    }
    if (s.contains("cot_style")) {
      try {
        c.cot_style = synth::cot_style_from_string(get_or<std::string>(s, "cot_style", "strong", sw));
      } catch (const SchemaError&) {
        throw ConfigError(sw + ".cot_style must be one of weak, multi_step, strong");
      }
    }
    c.limits.min_reasoning = positive(s, "min_reasoning", c.limits.min_reasoning, sw, true);
    c.limits.max_reasoning = positive(s, "max_reasoning", c.limits.max_reasoning, sw);
    c.limits.min_answer = positive(s, "min_answer", c.limits.min_answer, sw, true);
    c.limits.max_answer = positive(s, "max_answer", c.limits.max_answer, sw);
    c.limits.retries = static_cast<int>(positive(s, "retries", c.limits.retries, sw, true));
    if (c.limits.min_reasoning > c.limits.max_reasoning) throw ConfigError(sw + ": min_reasoning > max_reasoning");
  }
  if (j.contains("filter")) {
    check_keys(j["filter"], {"quality_threshold"}, w + ".filter");
    c.quality_threshold = get_or<double>(j["filter"], "quality_threshold", 0.5, w + ".filter");
    if (c.quality_threshold < 0 || c.quality_threshold > 1) throw ConfigError(w + ".filter.quality_threshold outside [0, 1]");
  }
  if (j.contains("dpo")) {
    check_keys(j["dpo"], {"enabled", "ratio"}, w + ".dpo");
    c.dpo = get_or<bool>(j["dpo"], "enabled", true, w + ".dpo");
    c.dpo_ratio = get_or<double>(j["dpo"], "ratio", 0.2, w + ".dpo");
    if (c.dpo_ratio < 0 || c.dpo_ratio > 1) throw ConfigError(w + ".dpo.ratio outside [0, 1]");
  }
  if (j.contains("eval")) {
    check_keys(j["eval"], {"n_per_task", "model_role"}, w + ".eval");
    c.eval_n_per_task = positive(j["eval"], "n_per_task", c.eval_n_per_task, w + ".eval", true);
    c.eval_model_role = get_or<std::string>(j["eval"], "model_role", "", w + ".eval");
  }
  if (j.contains("train")) {
    check_keys(j["train"], {"command", "endpoint"}, w + ".train");
    if (auto cmd = get_or<std::string>(j["train"], "command", "", w + ".train"); !cmd.empty()) c.train_command = cmd;
    if (j["train"].contains("endpoint")) c.train_endpoint = j["train"]["endpoint"];
  }
  if (j.contains("router")) {
    check_keys(j["router"], {"max_rounds"}, w + ".router");
    c.router_max_rounds = static_cast<int>(positive(j["router"], "max_rounds", 2, w + ".router"));
  }
  if (j.contains("server")) {
    const auto sw = w + ".server";
    check_keys(j["server"], {"host", "port", "token_env", "app_dir"}, sw);
    c.server_host = get_or<std::string>(j["server"], "host", c.server_host, sw);
    c.server_port = static_cast<int>(positive(j["server"], "port", 8080, sw, true));
    c.server_token_env = get_or<std::string>(j["server"], "token_env", c.server_token_env, sw);
    if (auto a = get_or<std::string>(j["server"], "app_dir", "", sw); !a.empty()) c.app_dir = base_dir / a;
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

Json PipelineConfig::snapshot() const {
  Json mult = Json::object();
  for (const auto& [t, m] : multipliers) mult[synth::to_string(t)] = m;
  Json cnt = Json::object();
  for (const auto& [t, n] : counts) cnt[synth::to_string(t)] = n;
  return Json{{"seed", seed},
              {"batch_size", batch_size},
              {"profile_top_k", profile_top_k},
              {"multipliers", mult},
              {"counts", cnt},
              {"cot_style", synth::to_string(cot_style)},
              {"limits",
               {{"min_reasoning", limits.min_reasoning},
                {"max_reasoning", limits.max_reasoning},
                {"min_answer", limits.min_answer},
                {"max_answer", limits.max_answer},
                {"retries", limits.retries}}},
              {"quality_threshold", quality_threshold},
              {"dpo", {{"enabled", dpo}, {"ratio", dpo_ratio}}},
              {"eval", {{"n_per_task", eval_n_per_task}, {"model_role", eval_model_role}}}};
}

// ---- train jobs ----------------------------------------------------------------

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::succeeded: return "succeeded";
    case JobStatus::failed: return "failed";
  }
  return "pending";
}

Json TrainJob::to_json() const {
  Json j{{"id", id},
         {"command", command},
         {"status", to_string(status)},
         {"log_path", log_path.string()},
         {"output_dir", output_dir.string()},
         {"exit_code", exit_code}};
  if (!endpoint.is_null()) j["endpoint"] = endpoint;
  if (!error.empty()) j["error"] = error;
  return j;
}

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

std::string substitute_train_command(std::string_view tmpl, const TrainPaths& paths) {
  auto q = [](const fs::path& p) { return shell_quote(fs::absolute(p).lexically_normal().string()); };
  std::vector<std::string> sft;
  for (const auto& p : paths.sft) sft.push_back(q(p));
  const std::map<std::string, std::string> values{{"{sft}", join(sft, " ")},
                                                  {"{dpo}", q(paths.dpo)},
                                                  {"{manifest}", q(paths.manifest)},
                                                  {"{output}", q(paths.output)}};
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : values) {
        if (tmpl.substr(i, key.size()) == key) {
          out += value;
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

TrainJob run_train_job(const std::string& job_id, const std::string& command_template, const TrainPaths& paths,
                       const fs::path& log_path, const Json& fallback_endpoint, const fs::path& endpoint_base_dir) {
  TrainJob job;
  job.id = job_id;
  job.command = substitute_train_command(command_template, paths);
  job.log_path = log_path;
  job.output_dir = paths.output;
  fs::create_directories(paths.output);
  fs::create_directories(log_path.parent_path());

  const int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw SpawnError("cannot open train log " + log_path.string());
  job.status = JobStatus::running;
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fd);
    throw SpawnError("fork failed for train job " + job_id);
  }
  if (pid == 0) {
    ::dup2(fd, STDOUT_FILENO);
    ::dup2(fd, STDERR_FILENO);
    ::close(fd);
    if (!endpoint_base_dir.empty() && ::chdir(endpoint_base_dir.c_str()) != 0) ::_exit(126);
    ::execl("/bin/sh", "sh", "-c", job.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fd);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw SpawnError("waitpid failed for train job " + job_id);
  }
  job.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  if (job.exit_code != 0) {
    job.status = JobStatus::failed;
    job.error = "trainer exited with status " + std::to_string(job.exit_code);
    return job;
  }

  Json endpoint;
  fs::path base = endpoint_base_dir;
  if (const auto produced = paths.output / "endpoint.json"; fs::exists(produced)) {
    try {
      endpoint = Json::parse(read_file(produced));
      base = paths.output;
    } catch (const Json::parse_error& e) {
      job.status = JobStatus::failed;
      job.error = "unreadable endpoint.json: " + std::string(e.what());
      return job;
    }
  } else if (fallback_endpoint.is_string()) {
    endpoint = Json{{"endpoint", fallback_endpoint}};
  } else {
    endpoint = fallback_endpoint;
  }
  if (!endpoint.is_object()) {
    job.status = JobStatus::failed;
    job.error = "the trainer produced no model endpoint and train.endpoint is not configured";
    return job;
  }
  try {
    const auto cfg = llm::GatewayConfig::from_json(Json{{"roles", {{"tuned", endpoint}}}}, base, "tuned endpoint");
    const auto& rc = cfg.roles.at("tuned");
    job.endpoint = rc.to_json();
  } catch (const ConfigError& e) {
    job.status = JobStatus::failed;
    job.error = e.what();
    return job;
  }
  job.status = JobStatus::succeeded;
  return job;
}

// ---- pipeline ------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config)
    : config_(std::move(config)),
      templates_(config_.templates ? prompts::TemplateLibrary::with_overrides(*config_.templates)
                                   : prompts::TemplateLibrary::builtin()) {}

const std::vector<std::string>& Pipeline::stages() {
  static const std::vector<std::string> s{"ingest", "index", "synth", "filter", "export", "train", "eval", "report"};
  return s;
}

fs::path Pipeline::workdir() const { return config_.workdir; }

store::Store& Pipeline::store() {
  std::lock_guard lock(lazy_mu_);
  if (!store_) store_ = std::make_unique<store::Store>(artifact("store"));
  return *store_;
}

std::shared_ptr<llm::Gateway> Pipeline::gateway() {
  {
    std::lock_guard lock(lazy_mu_);
    if (gateway_) return gateway_;
  }
  reload_gateway();
  std::lock_guard lock(lazy_mu_);
  return gateway_;
}

void Pipeline::reload_gateway() {
  auto cfg = llm::GatewayConfig::load(config_.gateway);
  if (!cfg.audit_log) cfg.audit_log = artifact("llm_audit.jsonl");
  if (const auto reg = artifact("registry/tuned.json"); fs::exists(reg)) {
    const auto j = read_json(reg);
    auto tuned = llm::GatewayConfig::from_json(Json{{"roles", {{"tuned", j.at("role")}}}}, reg.parent_path(),
                                               reg.string());
    cfg.roles.insert_or_assign("tuned", tuned.roles.at("tuned"));
  }
  fs::create_directories(cfg.audit_log->parent_path());
  auto gw = std::make_shared<llm::Gateway>(cfg);
  std::lock_guard lock(lazy_mu_);
  gateway_ = std::move(gw);
}

std::vector<std::string> Pipeline::inputs_of(std::string_view stage) const {
  if (stage == "index") return {"store/records.jsonl"};
  if (stage == "synth") return {"memory_graph.json", "l1_profile.json", "store/records.jsonl"};
  if (stage == "filter") return {"synth/pairs.jsonl", "memory_graph.json", "store/records.jsonl"};
  if (stage == "export") return {"filter/kept.jsonl", "l1_profile.json"};
  if (stage == "train") return {"datasets/manifest.json"};
  if (stage == "eval") {
    return {"memory_graph.json", "l1_profile.json", "store/records.jsonl", "synth/pairs.jsonl", "datasets/manifest.json"};
  }
  return {};
}

void Pipeline::check_dependencies(std::string_view stage) const {
  if (std::find(stages().begin(), stages().end(), stage) == stages().end()) {
    throw NotFound("unknown stage \"" + std::string(stage) + "\"");
  }
  for (const auto& rel : inputs_of(stage)) {
    if (!fs::exists(artifact(rel))) throw MissingDependency(rel);
  }
}

std::string Pipeline::gateway_fingerprint(std::string_view stage) const {
  std::string acc = fs::exists(config_.gateway) ? read_file(config_.gateway) : "";
  try {
    const auto cfg = llm::GatewayConfig::load(config_.gateway);
    for (const auto& [name, rc] : cfg.roles) {
      if (rc.mock_script && fs::exists(*rc.mock_script)) acc += name + ":" + sha256_file(*rc.mock_script);
    }
  } catch (const Error&) {
  }
  // Only the stages that query the tuned role depend on the registered model.
  if (stage == "export" || stage == "eval") {
    if (const auto reg = artifact("registry/tuned.json"); fs::exists(reg)) acc += read_file(reg);
  }
  return sha256_hex(acc);
}

std::string Pipeline::fingerprint(std::string_view stage, const StageOptions& options) {
  Json inputs = Json::object();
  for (const auto& rel : inputs_of(stage)) inputs[rel] = sha256_file(artifact(rel));
  Json extra = Json::array();
  for (const auto& p : options.inputs) {
    if (fs::is_directory(p)) {
      for (const auto* name : {"notes.jsonl", "todos.jsonl"}) {
        if (fs::exists(p / name)) extra.push_back({(p / name).string(), sha256_file(p / name)});
      }
    } else if (fs::exists(p)) {
      extra.push_back({p.string(), sha256_file(p)});
    }
  }
  Json tpl = Json::array();
  for (const auto& n : templates_.names()) tpl.push_back(templates_.get(n).id);
  return sha256_hex(Json{{"stage", stage},
                         {"config", config_.snapshot()},
                         {"inputs", inputs},
                         {"extra", extra},
                         {"gateway", gateway_fingerprint(stage)},
                         {"templates", tpl}}
                        .dump());
}

namespace {

std::vector<std::string> outputs_of(std::string_view stage, const fs::path& workdir) {
  if (stage == "ingest") return {"store/records.jsonl", "store/index.jsonl"};
  if (stage == "index") return {"memory_graph.json", "l1_profile.json", "l1_grounding.json"};
  if (stage == "synth") return {"synth/pairs.jsonl"};
  if (stage == "filter") return {"filter/kept.jsonl", "filter/rejected.jsonl", "filter/filter_report.json"};
  if (stage == "export") {
    std::vector<std::string> out;
    if (fs::is_directory(workdir / "datasets")) {
      for (const auto& e : fs::directory_iterator(workdir / "datasets")) {
        out.push_back("datasets/" + e.path().filename().string());
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }
  if (stage == "train") return {"registry/tuned.json"};
  if (stage == "eval") {
    return {"eval/eval_set.jsonl", "eval/responses.jsonl", "eval/scores.jsonl", "eval/report.json", "eval/table.txt"};
  }
  if (stage == "report") return {"reports/report.json", "reports/table.txt"};
  return {};
}

}  // namespace

Json Pipeline::run(std::string_view stage, const StageOptions& options) {
  std::lock_guard lock(mu_);
  check_dependencies(stage);
  StageOptions opts = options;
  if (stage == "ingest" && opts.inputs.empty()) {
    if (!config_.corpus) throw ConfigError("nothing to ingest: pass a path or set \"corpus\" in memloom.json");
    opts.inputs.push_back(*config_.corpus);
  }
  if (stage == "report" && fs::exists(artifact("eval/report.json"))) {
    opts.inputs.insert(opts.inputs.begin(), artifact("eval/report.json"));
  }

  const auto record_path = artifact("stages/" + std::string(stage) + ".json");
  const bool resumable = stage != "train";
  const auto fp = fingerprint(stage, opts);
  if (resumable && !opts.force && fs::exists(record_path)) {
    const auto rec = read_json(record_path);
    bool intact = rec.value("fingerprint", "") == fp;
    const auto outputs = rec.value("outputs", Json::object());
    for (const auto& [rel, sha] : outputs.items()) {
      if (!intact) break;
      intact = fs::exists(artifact(rel)) && sha256_file(artifact(rel)) == sha.get<std::string>();
    }
    if (intact) {
      auto summary = rec.value("summary", Json::object());
      summary["skipped"] = true;
      return summary;
    }
  }

  // Fresh backends per stage so scripted replies never depend on earlier stages.
  reload_gateway();
  Json summary;
  if (stage == "ingest") summary = ingest(opts);
  else if (stage == "index") summary = index();
  else if (stage == "synth") summary = synth();
  else if (stage == "filter") summary = filter();
  else if (stage == "export") summary = export_datasets();
  else if (stage == "train") summary = train();
  else if (stage == "eval") summary = eval();
  else summary = report(opts);
  summary["stage"] = stage;
  summary["skipped"] = false;

  Json outputs = Json::object();
  for (const auto& rel : outputs_of(stage, workdir())) {
    if (fs::exists(artifact(rel))) outputs[rel] = sha256_file(artifact(rel));
  }
  write_file(record_path, Json{{"stage", stage}, {"fingerprint", fingerprint(stage, opts)}, {"outputs", outputs},
                               {"summary", summary}}
                              .dump(2) +
                              "\n");
  return summary;
}

Json Pipeline::ingest(const StageOptions& options) {
  auto& st = store();
  std::size_t created = 0;
  std::size_t seen = 0;
  for (const auto& p : options.inputs) {
    if (fs::is_directory(p)) {
      const auto before = st.size();
      st.import_corpus(p);
      created += st.size() - before;
      for (const auto* name : {"notes.jsonl", "todos.jsonl"}) {
        if (fs::exists(p / name)) seen += read_jsonl(p / name).size();
      }
    } else if (fs::exists(p)) {
      for (const auto& payload : read_jsonl(p)) {
        ++seen;
        if (st.ingest(payload).created) ++created;
      }
    } else {
      throw IoError("ingest source not found: " + p.string());
    }
  }
  const auto stats = st.stats();
  return Json{{"records_read", seen}, {"created", created}, {"notes", stats.note_count}, {"todos", stats.todo_count}};
}

Json Pipeline::index() {
  const store::RecordSet records(store().list());
  auto gw = gateway();
  index::ExtractOptions eo;
  eo.batch_size = config_.batch_size;
  eo.parallelism = config_.parallelism;
  eo.checkpoint = artifact("index_checkpoint.json");
  const auto graph = index::extract_graph(records, *gw, templates_, eo);
  index::ProfileOptions po;
  po.top_k = config_.profile_top_k;
  const auto profile = index::build_profile(graph, records, *gw, templates_, po);
  write_file(artifact("memory_graph.json"), graph.to_json().dump(2) + "\n");
  write_file(artifact("l1_profile.json"), profile.profile.to_json().dump(2) + "\n");
  write_file(artifact("l1_grounding.json"), profile.tag_grounding.dump(2) + "\n");
  return Json{{"entities", graph.entities().size()},
              {"relations", graph.relations().size()},
              {"communities", graph.communities().size()},
              {"tags", profile.profile.preference_tags.size()}};
}

Json Pipeline::synth() {
  const store::RecordSet records(store().list());
  const auto graph = index::MemoryGraph::from_json(read_json(artifact("memory_graph.json")));
  const auto profile = index::L1Profile::from_json(read_json(artifact("l1_profile.json")));
  auto gw = gateway();
  synth::SynthContext ctx{graph, records, profile, templates_, *gw};
  ctx.limits = config_.limits;
  ctx.seed = config_.seed;
  ctx.parallelism = config_.parallelism;

  const auto ranked_count = index::rank_entities(graph).size();
  auto target = [&](synth::TaskKind t) -> std::size_t {
    if (auto it = config_.counts.find(t); it != config_.counts.end()) return it->second;
    return static_cast<std::size_t>(std::llround(config_.multipliers.at(t) * static_cast<double>(ranked_count)));
  };

  std::vector<Json> rows;
  Json generated = Json::object();
  std::size_t format_rejected = 0;
  for (auto task : kTasks) {
    const auto n = target(task);
    std::vector<synth::TrainingPair> seeds;
    switch (task) {
      case synth::TaskKind::memory_qa: seeds = synth::memory_qa_queries(ctx, n); break;
      case synth::TaskKind::context_enhance: seeds = synth::context_enhance_queries(ctx, n); break;
      case synth::TaskKind::context_critic: seeds = synth::context_critic_queries(ctx, n); break;
    }
    auto styled = parallel_try_map(seeds.size(), ctx.parallelism, [&](std::size_t i) -> std::optional<synth::TrainingPair> {
      try {
        return synth::apply_cot_style(seeds[i], config_.cot_style, ctx);
      } catch (const FormatError&) {
        return std::nullopt;
      }
    });
    styled.rethrow_if_failed();
    std::size_t kept = 0;
    for (auto& r : styled.results) {
      if (*r) {
        rows.push_back((*r)->to_json());
        ++kept;
      } else {
        ++format_rejected;
      }
    }
    generated[synth::to_string(task)] = {{"target", n}, {"pairs", kept}};
  }
  write_file(artifact("synth/pairs.jsonl"), jsonl(rows));
  return Json{{"generated", generated}, {"format_rejected", format_rejected}, {"total", rows.size()},
              {"cot_style", synth::to_string(config_.cot_style)}};
}

Json Pipeline::filter() {
  const store::RecordSet records(store().list());
  const auto graph = index::MemoryGraph::from_json(read_json(artifact("memory_graph.json")));
  const auto pairs = read_pairs(artifact("synth/pairs.jsonl"));
  auto gw = gateway();
  synth::FilterContext ctx{graph, records, templates_, *gw};
  ctx.limits = config_.limits;
  ctx.quality_threshold = config_.quality_threshold;
  ctx.parallelism = config_.parallelism;
  const auto result = synth::filter_pairs(pairs, ctx);

  std::vector<Json> kept;
  for (const auto& p : result.kept) kept.push_back(p.to_json());
  std::map<std::string, const synth::Rejection*> why;
  for (const auto& r : result.report.rejections) why[r.pair_id] = &r;
  std::vector<Json> rejected;
  for (const auto& p : pairs) {
    auto it = why.find(p.id);
    if (it == why.end()) continue;
    auto j = p.to_json();
    j["rejection"] = {{"level", synth::to_string(it->second->level)}, {"reason", it->second->reason}};
    rejected.push_back(std::move(j));
  }
  write_file(artifact("filter/kept.jsonl"), jsonl(kept));
  write_file(artifact("filter/rejected.jsonl"), jsonl(rejected));
  const auto report = result.report.to_json();
  write_file(artifact("filter/filter_report.json"), report.dump(2) + "\n");
  return Json{{"total_in", result.report.total_in}, {"total_out", result.report.total_out}};
}

Json Pipeline::export_datasets() {
  const auto kept = read_pairs(artifact("filter/kept.jsonl"));
  const auto profile = index::L1Profile::from_json(read_json(artifact("l1_profile.json")));
  auto gw = gateway();
  Json summary = Json::object();
  std::vector<synth::PreferencePair> dpo;
  if (config_.dpo && gw->has_role("tuned")) {
    synth::DpoOptions o;
    o.ratio = config_.dpo_ratio;
    o.seed = config_.seed;
    o.parallelism = config_.parallelism;
    auto r = synth::build_dpo_pairs(kept, profile.ranked_entities, templates_, *gw, o);
    dpo = std::move(r.pairs);
    summary["dpo_target"] = r.target;
    if (r.ratio_shortfall) summary["warning"] = "RatioShortfall";
  } else if (config_.dpo) {
    summary["warning"] = "no tuned role configured; dpo.jsonl left empty";
  }
  std::vector<std::pair<synth::TaskKind, synth::CotStyle>> layout;
  for (auto t : kTasks) layout.push_back({t, config_.cot_style});
  const auto manifest = synth::export_dataset(kept, dpo, layout, artifact("datasets"), templates_, config_.snapshot());
  summary["sft"] = kept.size();
  summary["dpo"] = dpo.size();
  summary["manifest_sha256"] = sha256_file(artifact("datasets/manifest.json"));
  return summary;
}

Json Pipeline::train() {
  if (!config_.train_command) throw ConfigError("train.command is not set in memloom.json");
  const auto manifest = read_json(artifact("datasets/manifest.json"));
  TrainPaths paths;
  for (const auto& f : manifest.at("files")) {
    const auto p = artifact("datasets/" + f.at("name").get<std::string>());
    if (f.at("kind") == "sft") paths.sft.push_back(p);
    if (f.at("kind") == "dpo") paths.dpo = p;
  }
  paths.manifest = artifact("datasets/manifest.json");
  const auto now = std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
  const auto id = "train-" + sha256_hex(format_rfc3339(now) + manifest.dump()).substr(0, 10);
  paths.output = artifact("train/" + id);
  auto job = run_train_job(id, *config_.train_command, paths, artifact("train/" + id + ".log"),
                           config_.train_endpoint, config_.base_dir);
  write_file(artifact("train/" + id + ".json"), job.to_json().dump(2) + "\n");
  if (job.status != JobStatus::succeeded) throw NonzeroExit(job.error, job.to_json());
  write_file(artifact("registry/tuned.json"), Json{{"job", id}, {"role", job.endpoint}}.dump(2) + "\n");
  reload_gateway();
  return job.to_json();
}

Json Pipeline::eval() {
  const store::RecordSet records(store().list());
  const auto graph = index::MemoryGraph::from_json(read_json(artifact("memory_graph.json")));
  const auto profile = index::L1Profile::from_json(read_json(artifact("l1_profile.json")));
  const auto training = eval::training_query_index(read_pairs(artifact("synth/pairs.jsonl")));
  const auto manifest = read_json(artifact("datasets/manifest.json"));
  auto gw = gateway();

  synth::SynthContext ctx{graph, records, profile, templates_, *gw};
  ctx.limits = config_.limits;
  ctx.seed = config_.seed;
  ctx.parallelism = config_.parallelism;
  eval::EvalSetOptions so;
  so.n_per_task = config_.eval_n_per_task;
  const auto items = eval::synth_eval_set(ctx, training, so);

  eval::EvalRunOptions ro;
  ro.model_role = !config_.eval_model_role.empty() ? config_.eval_model_role : gw->has_role("tuned") ? "tuned" : "l2";
  ro.style = config_.cot_style;
  ro.dpo = manifest.value("dpo_total", 0) > 0;
  ro.parallelism = config_.parallelism;
  ro.seed = config_.seed;
  eval::JudgeContext jc{records, templates_, *gw};
  const auto run = eval::run_eval(items, jc, ro);

  std::vector<Json> rows;
  for (const auto& i : items) rows.push_back(i.to_json());
  write_file(artifact("eval/eval_set.jsonl"), jsonl(rows));
  rows.clear();
  for (const auto& r : run.responses) rows.push_back(r.to_json());
  write_file(artifact("eval/responses.jsonl"), jsonl(rows));
  rows.clear();
  for (const auto& s : run.scores) rows.push_back(s.to_json());
  write_file(artifact("eval/scores.jsonl"), jsonl(rows));
  write_file(artifact("eval/report.json"), run.report.to_json().dump(2) + "\n");
  write_file(artifact("eval/table.txt"), eval::render_table({run.report}));
  return Json{{"items", items.size()}, {"model_role", ro.model_role}, {"report", run.report.to_json()}};
}

Json Pipeline::report(const StageOptions& options) {
  if (options.inputs.empty()) throw MissingDependency("eval/report.json");
  std::vector<eval::MetricReport> reports;
  for (const auto& p : options.inputs) {
    if (!fs::exists(p)) throw IoError("report input not found: " + p.string());
    const auto j = read_json(p);
    if (j.is_array()) {
      for (const auto& r : j) reports.push_back(eval::MetricReport::from_json(r));
    } else {
      reports.push_back(eval::MetricReport::from_json(j));
    }
  }
  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  const auto table = eval::render_table(reports);
  write_file(artifact("reports/report.json"), arr.dump(2) + "\n");
  write_file(artifact("reports/table.txt"), table);
  return Json{{"reports", reports.size()}, {"table", table}};
}

}  // namespace memloom
