#include "memloom/evaluator.hpp"

#include "memloom/error.hpp"
#include "memloom/parallel.hpp"
#include "memloom/reasoning.hpp"

#include <algorithm>
#include <cstdio>

namespace memloom::eval {

Json EvalItem::to_json() const {
  Json j{{"id", id},
         {"task", eval::to_string(task)},
         {"query", query},
         {"source_query", source_query},
         {"context_refs", context_refs}};
  j["expert_response"] = expert_response ? Json(*expert_response) : Json(nullptr);
  return j;
}

EvalItem EvalItem::from_json(const Json& j) {
  try {
    EvalItem item;
    item.id = j.at("id").get<std::string>();
    item.task = eval_task_from_string(j.at("task").get<std::string>());
    item.query = j.at("query").get<std::string>();
    item.source_query = j.value("source_query", item.query);
    item.context_refs = j.value("context_refs", std::vector<std::string>{});
    if (j.contains("expert_response") && j["expert_response"].is_string()) {
      item.expert_response = j["expert_response"].get<std::string>();
    }
    if (item.expert_response.has_value() != (item.task == EvalTask::context_critic)) {
      throw SchemaError("expert_response must be present exactly for context_critic items");
    }
    return item;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed eval item: ") + e.what());
  }
}

std::set<std::string> training_query_index(const std::vector<synth::TrainingPair>& pairs) {
  std::set<std::string> out;
  for (const auto& p : pairs) {
    out.insert(normalize_query(p.query));
    out.insert(normalize_query(p.source_query));
  }
  return out;
}

namespace {

EvalItem make_item(EvalTask task, const synth::TrainingPair& seed) {
  EvalItem item;
  item.task = task;
  item.query = seed.query;
  item.source_query = seed.source_query;
  item.context_refs = seed.context_refs;
  if (task == EvalTask::context_critic) {
    const auto marker = seed.query.find("\n\nExpert response:\n");
    item.expert_response = marker == std::string::npos ? "" : seed.query.substr(marker + 19);
  }
  item.id = sha256_hex(std::string(eval::to_string(task)) + "\x1f" + item.source_query).substr(0, 16);
  return item;
}

void take(std::vector<EvalItem>& out, EvalTask task, const std::vector<synth::TrainingPair>& seeds,
          std::size_t n, const std::set<std::string>& training) {
  std::size_t taken = 0;
  for (const auto& s : seeds) {
    if (taken == n) break;
    if (training.count(normalize_query(s.query)) || training.count(normalize_query(s.source_query))) continue;
    out.push_back(make_item(task, s));
    ++taken;
  }
  if (taken < n) {
    throw IsolationExhausted(std::string("could not find ") + std::to_string(n) + " isolated " + eval::to_string(task) +
                                 " queries (got " + std::to_string(taken) + ")",
                             {{"task", eval::to_string(task)}, {"wanted", n}, {"got", taken}});
  }
}

}  // namespace

std::vector<EvalItem> synth_eval_set(const synth::SynthContext& ctx, const std::set<std::string>& training,
                                     const EvalSetOptions& options) {
  std::vector<EvalItem> out;
  if (options.n_per_task == 0) return out;
  const auto n = options.n_per_task;
  auto exclude = training;
  synth::SynthContext gen = ctx;
  gen.exclude = &exclude;
  gen.question_rounds = options.resample_rounds;

  const auto memory = synth::memory_qa_queries(gen, 2 * n);
  std::vector<synth::TrainingPair> self, third;
  for (const auto& p : memory) (p.perspective == synth::Perspective::self ? self : third).push_back(p);
  take(out, EvalTask::memory_self, self, n, training);
  take(out, EvalTask::memory_third_party, third, n, training);
  for (const auto& p : memory) exclude.insert(normalize_query(p.source_query));

  const auto enhance = synth::context_enhance_queries(gen, n);
  take(out, EvalTask::context_enhance, enhance, n, training);
  for (const auto& p : enhance) exclude.insert(normalize_query(p.source_query));

  const auto critic = synth::context_critic_queries(gen, n);
  take(out, EvalTask::context_critic, critic, n, training);
  return out;
}

namespace {

std::string level_lines(Metric m) {
  std::string out;
  for (const auto& d : level_definitions(m)) out += "- " + std::string(d.text) + "\n";
  return out;
}

template <class F>
auto with_retries(const JudgeContext& ctx, F&& attempt) {
  for (int i = 0;; ++i) {
    try {
      return attempt();
    } catch (const JudgeParseError&) {
      if (i >= ctx.retries) throw;
    }
  }
}

std::vector<JudgeScore> ask(const prompts::RenderedPrompt& prompt, const std::vector<Metric>& metrics,
                            const EvalItem& item, const JudgeContext& ctx) {
  return with_retries(ctx, [&] {
    auto req = llm::make_request(ctx.judge_role, prompt.template_name, prompt.system, prompt.user, 0.0);
    auto scores = parse_judge_reply(ctx.gateway.complete(std::move(req)).content, metrics);
    for (auto& s : scores) s.item_id = item.id;
    return scores;
  });
}

}  // namespace

prompts::RenderedPrompt memory_judge_prompt(std::string_view response, const EvalItem& item, const JudgeContext& ctx) {
  const auto metrics = memory_metrics(item.task);
  std::string metric_lines;
  std::vector<std::string> names;
  for (auto m : metrics) {
    metric_lines += "- " + std::string(metric_name(m)) + ": " + std::string(metric_definition(m)) + "\n";
    names.emplace_back(metric_name(m));
  }
  return ctx.templates.render("judge.memory", {{"length_bias", std::string(kLengthBiasClause)},
                                               {"metrics", metric_lines},
                                               {"levels", level_lines(Metric::correctness)},
                                               {"metric_names", join(names, ", ")},
                                               {"context", synth::render_context(ctx.records, item.context_refs)},
                                               {"query", item.query},
                                               {"response", std::string(response)}});
}

prompts::RenderedPrompt enhance_judge_prompt(std::string_view response, const EvalItem& item, const JudgeContext& ctx) {
  return ctx.templates.render("judge.enhance", {{"length_bias", std::string(kLengthBiasClause)},
                                                {"levels", level_lines(Metric::context_enhance)},
                                                {"context", synth::render_context(ctx.records, item.context_refs)},
                                                {"query", item.source_query},
                                                {"response", std::string(response)}});
}

prompts::RenderedPrompt critic_judge_prompt(std::string_view response, const EvalItem& item, const JudgeContext& ctx) {
  return ctx.templates.render("judge.critic", {{"length_bias", std::string(kLengthBiasClause)},
                                               {"levels", level_lines(Metric::context_critic)},
                                               {"context", synth::render_context(ctx.records, item.context_refs)},
                                               {"query", item.source_query},
                                               {"expert_response", item.expert_response.value_or("")},
                                               {"response", std::string(response)}});
}

std::vector<JudgeScore> score_memory(std::string_view response, const EvalItem& item, const JudgeContext& ctx) {
  if (item.task != EvalTask::memory_self && item.task != EvalTask::memory_third_party) {
    throw PreconditionError("score_memory needs a memory item");
  }
  return ask(memory_judge_prompt(response, item, ctx), memory_metrics(item.task), item, ctx);
}

JudgeScore score_enhance(std::string_view response, const EvalItem& item, const JudgeContext& ctx) {
  if (item.task != EvalTask::context_enhance) throw PreconditionError("score_enhance needs a context_enhance item");
  return ask(enhance_judge_prompt(response, item, ctx), {Metric::context_enhance}, item, ctx).front();
}

JudgeScore score_critic(std::string_view response, const EvalItem& item, const JudgeContext& ctx) {
  if (item.task != EvalTask::context_critic || !item.expert_response) {
    throw PreconditionError("score_critic needs a context_critic item with an expert response");
  }
  return ask(critic_judge_prompt(response, item, ctx), {Metric::context_critic}, item, ctx).front();
}

Json TaskScore::to_json() const {
  auto j = score.to_json();
  j["task"] = eval::to_string(task);
  return j;
}

TaskScore TaskScore::from_json(const Json& j) {
  try {
    return TaskScore{eval_task_from_string(j.at("task").get<std::string>()), JudgeScore::from_json(j)};
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed score: ") + e.what());
  }
}

namespace {

constexpr EvalTask kTasks[] = {EvalTask::memory_self, EvalTask::memory_third_party, EvalTask::context_enhance,
                               EvalTask::context_critic};

bool is_memory(EvalTask t) { return t == EvalTask::memory_self || t == EvalTask::memory_third_party; }

}  // namespace

Json MetricReport::to_json() const {
  Json tasks = Json::object();
  for (const auto& [task, mean] : task_means) {
    Json t{{"mean", mean}};
    if (auto it = item_counts.find(task); it != item_counts.end()) t["items"] = it->second;
    if (auto it = metric_means.find(task); it != metric_means.end()) {
      Json m = Json::object();
      for (const auto& [metric, v] : it->second) m[metric_name(metric)] = v;
      t["metrics"] = m;
    }
    tasks[eval::to_string(task)] = t;
  }
  return Json{{"config", {{"cot_style", cot_style}, {"dpo", dpo}}}, {"tasks", tasks}};
}

MetricReport MetricReport::from_json(const Json& j) {
  try {
    MetricReport r;
    r.cot_style = j.at("config").at("cot_style").get<std::string>();
    r.dpo = j.at("config").at("dpo").get<bool>();
    for (const auto& [name, t] : j.at("tasks").items()) {
      const auto task = eval_task_from_string(name);
      const auto mean = t.at("mean").get<double>();
      if (!(mean >= 0.0 && mean <= 1.0)) throw DomainError("task mean outside [0, 1] for " + name);
      r.task_means[task] = mean;
      if (t.contains("items")) r.item_counts[task] = t["items"].get<std::size_t>();
      if (t.contains("metrics")) {
        for (const auto& [mname, v] : t["metrics"].items()) {
          const auto metric = metric_from_name(mname);
          if (!metric) throw SchemaError("unknown metric " + mname);
          r.metric_means[task][*metric] = v.get<double>();
        }
      }
    }
    return r;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed metric report: ") + e.what());
  }
}

MetricReport aggregate(const std::vector<TaskScore>& scores, std::string cot_style, bool dpo) {
  MetricReport report;
  report.cot_style = std::move(cot_style);
  report.dpo = dpo;

  // task -> item -> quarters/levels
  std::map<EvalTask, std::map<std::string, std::pair<long, long>>> per_item;
  std::map<EvalTask, std::map<Metric, std::pair<long, long>>> per_metric;
  for (const auto& ts : scores) {
    if (!is_allowed(ts.score.metric, ts.score.level)) {
      throw DomainError(std::string("level ") + ts.score.level.to_string() + " not allowed for " +
                        metric_name(ts.score.metric));
    }
    auto& item = per_item[ts.task][ts.score.item_id];
    item.first += ts.score.level.quarters();
    item.second += 1;
    if (is_memory(ts.task)) {
      auto& m = per_metric[ts.task][ts.score.metric];
      m.first += ts.score.level.quarters();
      m.second += 1;
    }
  }
  for (const auto& [task, items] : per_item) {
    double sum = 0.0;
    for (const auto& [id, q] : items) sum += static_cast<double>(q.first) / (4.0 * static_cast<double>(q.second));
    report.task_means[task] = sum / static_cast<double>(items.size());
    report.item_counts[task] = items.size();
  }
  for (const auto& [task, metrics] : per_metric) {
    for (const auto& [metric, q] : metrics) {
      report.metric_means[task][metric] = static_cast<double>(q.first) / (4.0 * static_cast<double>(q.second));
    }
  }
  return report;
}

namespace {

int style_rank(const std::string& s) {
  if (s == "strong") return 0;
  if (s == "multi_step") return 1;
  if (s == "weak") return 2;
  return 3;
}

std::string style_label(const std::string& s) {
  if (s == "strong") return "Strong";
  if (s == "multi_step") return "Multi-step";
  if (s == "weak") return "Weak";
  return s;
}

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_table(std::vector<MetricReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const MetricReport& a, const MetricReport& b) {
    if (style_rank(a.cot_style) != style_rank(b.cot_style)) return style_rank(a.cot_style) < style_rank(b.cot_style);
    return a.dpo && !b.dpo;
  });
  const bool dpo_column = std::any_of(reports.begin(), reports.end(), [](const MetricReport& r) { return r.dpo; });

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"COT"};
  if (dpo_column) header.push_back("DPO");
  for (const auto* h : {"Memory (Self)", "Memory (Third-Party)", "Context Enhance", "Context Critic"}) header.push_back(h);
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{style_label(r.cot_style)};
    if (dpo_column) row.push_back(r.dpo ? "Yes" : "No");
    for (auto t : kTasks) {
      auto it = r.task_means.find(t);
      row.push_back(it == r.task_means.end() ? "-" : cell(it->second));
    }
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& row) {
    std::string out = "|";
    for (std::size_t c = 0; c < row.size(); ++c) out += " " + row[c] + std::string(width[c] - row[c].size(), ' ') + " |";
    return out + "\n";
  };
  std::string out = line(rows[0]);
  out += "|";
  for (auto w : width) out += std::string(w + 2, '-') + "|";
  out += "\n";
  for (std::size_t i = 1; i < rows.size(); ++i) out += line(rows[i]);
  return out;
}

Json ItemResponse::to_json() const {
  return Json{{"item_id", item_id}, {"raw", raw}, {"judged", judged}, {"malformed", malformed}};
}

EvalRun run_eval(const std::vector<EvalItem>& items, const JudgeContext& ctx, const EvalRunOptions& options) {
  struct Out {
    ItemResponse response;
    std::vector<TaskScore> scores;
  };
  auto outs = parallel_map(items.size(), options.parallelism, [&](std::size_t i) {
    const auto& item = items[i];
    synth::TrainingPair probe;
    probe.query = item.query;
    switch (item.task) {
      case EvalTask::memory_self: probe.task_kind = synth::TaskKind::memory_qa; break;
      case EvalTask::memory_third_party:
        probe.task_kind = synth::TaskKind::memory_qa;
        probe.perspective = synth::Perspective::third_party;
        break;
      case EvalTask::context_enhance: probe.task_kind = synth::TaskKind::context_enhance; break;
      case EvalTask::context_critic: probe.task_kind = synth::TaskKind::context_critic; break;
    }
    const auto prompt = synth::sft_prompt(probe, ctx.templates);
    auto req = llm::make_request(options.model_role, prompt.template_name, prompt.system, prompt.user, 0.0);
    req.decode.seed = options.seed;

    Out out;
    out.response.item_id = item.id;
    out.response.raw = ctx.gateway.complete(std::move(req)).content;
    if (options.style == synth::CotStyle::strong) {
      auto stripped = strip_reasoning(out.response.raw);
      out.response.judged = trim(stripped.text);
      out.response.malformed = stripped.malformed;
    } else {
      out.response.judged = trim(out.response.raw);
    }
    const auto& resp = out.response.judged;
    switch (item.task) {
      case EvalTask::memory_self:
      case EvalTask::memory_third_party:
        for (auto& s : score_memory(resp, item, ctx)) out.scores.push_back({item.task, std::move(s)});
        break;
      case EvalTask::context_enhance: out.scores.push_back({item.task, score_enhance(resp, item, ctx)}); break;
      case EvalTask::context_critic: out.scores.push_back({item.task, score_critic(resp, item, ctx)}); break;
    }
    return out;
  });

  EvalRun run;
  for (auto& o : outs) {
    run.responses.push_back(std::move(o.response));
    for (auto& s : o.scores) run.scores.push_back(std::move(s));
  }
  run.report = aggregate(run.scores, synth::to_string(options.style), options.dpo);
  return run;
}

}  // namespace memloom::eval
