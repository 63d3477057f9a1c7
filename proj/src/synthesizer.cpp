#include "memloom/synthesizer.hpp"

#include "memloom/error.hpp"
#include "memloom/indexer.hpp"
#include "memloom/parallel.hpp"
#include "memloom/reasoning.hpp"
#include "memloom/rubric.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace memloom::synth {

const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::memory_qa: return "memory_qa";
    case TaskKind::context_enhance: return "context_enhance";
    case TaskKind::context_critic: return "context_critic";
  }
  return "memory_qa";
}

const char* to_string(Perspective p) { return p == Perspective::self ? "self" : "third_party"; }

const char* to_string(CotStyle s) {
  switch (s) {
    case CotStyle::weak: return "weak";
    case CotStyle::multi_step: return "multi_step";
    case CotStyle::strong: return "strong";
  }
  return "weak";
}

TaskKind task_kind_from_string(std::string_view s) {
  for (auto t : {TaskKind::memory_qa, TaskKind::context_enhance, TaskKind::context_critic}) {
    if (s == to_string(t)) return t;
  }
  throw SchemaError("unknown task kind \"" + std::string(s) + "\"");
}

Perspective perspective_from_string(std::string_view s) {
  if (s == "self") return Perspective::self;
  if (s == "third_party") return Perspective::third_party;
  throw SchemaError("unknown perspective \"" + std::string(s) + "\"");
}

CotStyle cot_style_from_string(std::string_view s) {
  for (auto c : {CotStyle::weak, CotStyle::multi_step, CotStyle::strong}) {
    if (s == to_string(c)) return c;
  }
  throw SchemaError("unknown cot style \"" + std::string(s) + "\"");
}

Json TrainingPair::to_json() const {
  OrderedJson j;
  j["id"] = id;
  j["task_kind"] = to_string(task_kind);
  j["perspective"] = to_string(perspective);
  j["query"] = query;
  j["source_query"] = source_query;
  j["context_refs"] = context_refs;
  j["reasoning"] = reasoning ? OrderedJson(*reasoning) : OrderedJson(nullptr);
  j["answer"] = answer;
  j["cot_style"] = to_string(cot_style);
  j["provenance"] = {{"template_id", provenance.template_id}, {"model", provenance.model}, {"seed", provenance.seed}};
  return Json::parse(j.dump());
}

TrainingPair TrainingPair::from_json(const Json& j) {
  try {
    TrainingPair p;
    p.id = j.at("id").get<std::string>();
    p.task_kind = task_kind_from_string(j.at("task_kind").get<std::string>());
    p.perspective = perspective_from_string(j.value("perspective", "self"));
    p.query = j.at("query").get<std::string>();
    p.source_query = j.value("source_query", p.query);
    p.context_refs = j.value("context_refs", std::vector<std::string>{});
    if (j.contains("reasoning") && j["reasoning"].is_string()) p.reasoning = j["reasoning"].get<std::string>();
    p.answer = j.at("answer").get<std::string>();
    p.cot_style = cot_style_from_string(j.at("cot_style").get<std::string>());
    if (j.contains("provenance")) {
      const auto& pr = j["provenance"];
      p.provenance = {pr.value("template_id", ""), pr.value("model", ""), pr.value("seed", std::uint64_t{0})};
    }
    return p;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed training pair: ") + e.what());
  }
}

Json PreferencePair::to_json() const {
  return Json{{"prompt", prompt}, {"chosen", chosen}, {"rejected", rejected}, {"source_pair_id", source_pair_id}};
}

PreferencePair PreferencePair::from_json(const Json& j) {
  try {
    return {j.at("prompt").get<std::string>(), j.at("chosen").get<std::string>(), j.at("rejected").get<std::string>(),
            j.value("source_pair_id", "")};
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed preference pair: ") + e.what());
  }
}

// ---- prompt material --------------------------------------------------------

std::string render_profile(const index::L1Profile& profile) {
  std::string out;
  if (!profile.biography.empty()) out += "Biography: " + profile.biography + "\n";
  if (!profile.status_description.empty()) out += "Current status: " + profile.status_description + "\n";
  if (!profile.preference_tags.empty()) out += "Preferences: " + join(profile.preference_tags, "; ") + "\n";
  return out.empty() ? "(no profile yet)\n" : out;
}

std::vector<std::string> related_records(const index::MemoryGraph& graph, const std::string& entity_key,
                                         std::size_t limit) {
  std::vector<std::string> out;
  const auto* e = graph.find(entity_key);
  if (!e) return out;
  for (const auto& ref : e->text_unit_refs) {
    if (out.size() >= limit) break;
    out.push_back(ref.record_id);
  }
  return out;
}

std::string render_context(const store::RecordSet& records, const std::vector<std::string>& refs) {
  std::string out;
  for (const auto& ref : refs) {
    const auto* r = records.find(ref);
    if (!r) continue;
    auto text = store::record_text(*r);
    std::replace(text.begin(), text.end(), '\n', ' ');
    out += "[" + ref + "] (" + store::to_string(store::record_kind(*r)) + ") " + text + "\n";
  }
  return out.empty() ? "(no related records)\n" : out;
}

std::optional<std::string> primary_entity(const std::vector<std::string>& refs) {
  for (const auto& r : refs) {
    const auto colon = r.find(':');
    if (colon != std::string::npos && index::entity_type_from_string(std::string_view(r).substr(0, colon))) return r;
  }
  return std::nullopt;
}

std::string critic_query(std::string_view need, std::string_view expert_response) {
  return "User need:\n" + std::string(need) + "\n\nExpert response:\n" + std::string(expert_response);
}

namespace {

std::vector<std::string> parse_q_lines(std::string_view reply) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(reply)) {
    const auto t = trim(line);
    if (starts_with(t, "Q|")) {
      auto q = trim(std::string_view(t).substr(2));
      if (!q.empty()) out.push_back(std::move(q));
    }
  }
  return out;
}

std::vector<std::string> ranked(const SynthContext& ctx) {
  auto keys = ctx.profile.ranked_entities;
  keys.erase(std::remove_if(keys.begin(), keys.end(), [&](const std::string& k) { return !ctx.graph.find(k); }),
             keys.end());
  return keys.empty() ? index::rank_entities(ctx.graph) : keys;
}

std::vector<std::string> refs_for(const SynthContext& ctx, const std::string& key) {
  auto recs = related_records(ctx.graph, key, ctx.context_records);
  std::vector<std::string> refs{key};
  if (recs.empty()) refs.push_back("profile");
  refs.insert(refs.end(), recs.begin(), recs.end());
  return refs;
}

const char* perspective_label(Perspective p) {
  return p == Perspective::self ? "first-person: the user asks about their own records"
                                : "third-person: another person or model asks about the user";
}

struct SeedGroup {
  std::string entity;
  Perspective perspective;
  std::size_t want = 0;
  std::vector<std::string> got;
};

// Asks for `want` queries per (entity, perspective) group and re-asks short
// groups with the identical prompt, up to ctx.question_rounds rounds.
// Duplicates (normalized) are dropped across all groups in group order.
std::vector<TrainingPair> generate_seeds(const SynthContext& ctx, std::size_t n, TaskKind task,
                                         const std::string& template_name, bool alternate_perspective) {
  if (n == 0) return {};
  const auto keys = ranked(ctx);
  if (keys.empty()) throw InsufficientContext("memory graph is empty");

  std::vector<SeedGroup> groups;
  std::map<std::pair<std::string, Perspective>, std::size_t> group_of;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& key = keys[(alternate_perspective ? i / 2 : i) % keys.size()];
    const auto p = alternate_perspective && i % 2 == 1 ? Perspective::third_party : Perspective::self;
    auto [it, inserted] = group_of.try_emplace({key, p}, groups.size());
    if (inserted) groups.push_back({key, p, 0, {}});
    ++groups[it->second].want;
  }

  const auto profile = render_profile(ctx.profile);
  std::set<std::string> seen;
  if (ctx.exclude) seen = *ctx.exclude;
  for (int round = 0; round < ctx.question_rounds; ++round) {
    std::vector<std::size_t> pending;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].got.size() < groups[g].want) pending.push_back(g);
    }
    if (pending.empty()) break;
    auto replies = parallel_map(pending.size(), ctx.parallelism, [&](std::size_t i) {
      const auto& g = groups[pending[i]];
      const auto* e = ctx.graph.find(g.entity);
      prompts::Vars vars{{"entity", e->name},
                         {"entity_type", index::to_string(e->type)},
                         {"description", e->description},
                         {"perspective", perspective_label(g.perspective)},
                         {"perspective_instructions", eval::perspective_instructions(g.perspective == Perspective::third_party)},
                         {"profile", profile},
                         {"context", render_context(ctx.records, related_records(ctx.graph, g.entity, ctx.context_records))},
                         {"count", std::to_string(g.want)}};
      auto req = ctx.templates.request(ctx.roles.synth, template_name, vars, 0.0);
      req.decode.seed = ctx.seed;
      return parse_q_lines(ctx.gateway.complete(std::move(req)).content);
    });
    for (std::size_t i = 0; i < pending.size(); ++i) {
      auto& g = groups[pending[i]];
      for (auto& q : replies[i]) {
        if (g.got.size() >= g.want) break;
        if (seen.insert(normalize_query(q)).second) g.got.push_back(std::move(q));
      }
    }
  }

  std::vector<TrainingPair> out;
  for (const auto& g : groups) {
    for (const auto& q : g.got) {
      TrainingPair p;
      p.task_kind = task;
      p.perspective = g.perspective;
      p.query = q;
      p.source_query = q;
      p.context_refs = refs_for(ctx, g.entity);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string pair_id(const TrainingPair& p) {
  return sha256_hex(std::string(to_string(p.task_kind)) + "\x1f" + to_string(p.perspective) + "\x1f" +
                    to_string(p.cot_style) + "\x1f" + p.query)
      .substr(0, 16);
}

}  // namespace

std::vector<TrainingPair> memory_qa_queries(const SynthContext& ctx, std::size_t n) {
  if (ctx.graph.entities().size() < 3) {
    throw InsufficientContext("memory QA needs at least 3 entities, graph has " +
                              std::to_string(ctx.graph.entities().size()));
  }
  return generate_seeds(ctx, n, TaskKind::memory_qa, "memory_qa.question", true);
}

std::vector<TrainingPair> context_enhance_queries(const SynthContext& ctx, std::size_t n) {
  return generate_seeds(ctx, n, TaskKind::context_enhance, "context_enhance.need", false);
}

std::vector<TrainingPair> context_critic_queries(const SynthContext& ctx, std::size_t n) {
  auto seeds = generate_seeds(ctx, n, TaskKind::context_critic, "context_critic.need", false);
  auto experts = parallel_map(seeds.size(), ctx.parallelism, [&](std::size_t i) {
    auto req = ctx.templates.request(ctx.roles.expert, "context_critic.expert", {{"need", seeds[i].source_query}}, 0.0);
    req.decode.seed = ctx.seed;
    return trim(ctx.gateway.complete(std::move(req)).content);
  });
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i].query = critic_query(seeds[i].source_query, experts[i]);
  return seeds;
}

TrainingPair apply_cot_style(TrainingPair pair, CotStyle style, const SynthContext& ctx) {
  const auto& role = pair.task_kind == TaskKind::context_critic ? ctx.roles.self : ctx.roles.synth;
  const std::string base = to_string(pair.task_kind);
  const auto entity_key = primary_entity(pair.context_refs);
  const auto* entity = entity_key ? ctx.graph.find(*entity_key) : nullptr;
  prompts::Vars vars{
      {"entity", entity ? entity->name : "(none)"},
      {"profile", render_profile(ctx.profile)},
      {"context", render_context(ctx.records, pair.context_refs)},
      {"query", pair.query},
      {"perspective_instructions", eval::perspective_instructions(pair.perspective == Perspective::third_party)},
      {"min_reasoning", std::to_string(ctx.limits.min_reasoning)},
      {"max_reasoning", std::to_string(ctx.limits.max_reasoning)},
      {"max_answer", std::to_string(ctx.limits.max_answer)}};
  auto call = [&](const std::string& name, const prompts::Vars& v) {
    auto req = ctx.templates.request(role, name, v, 0.0);
    req.decode.seed = ctx.seed;
    return ctx.gateway.complete(std::move(req)).content;
  };

  pair.cot_style = style;
  pair.reasoning.reset();
  pair.provenance.model = ctx.gateway.role_config(role).model;
  pair.provenance.seed = ctx.seed;

  switch (style) {
    case CotStyle::weak: {
      const auto name = base + ".weak";
      pair.answer = trim(call(name, vars));
      pair.provenance.template_id = ctx.templates.get(name).id;
      break;
    }
    case CotStyle::multi_step: {
      const auto rname = base + ".multi_step.reasoning";
      const auto aname = base + ".multi_step.answer";
      std::string reasoning;
      for (int attempt = 0;; ++attempt) {
        reasoning = trim(call(rname, vars));
        if (utf8_length(reasoning) >= ctx.limits.min_reasoning && !contains_reasoning_delimiter(reasoning)) break;
        if (attempt >= ctx.limits.retries) {
          throw FormatError("multi-step reasoning shorter than " + std::to_string(ctx.limits.min_reasoning) +
                                " characters after " + std::to_string(attempt + 1) + " attempts",
                            {{"query", pair.query}, {"length", utf8_length(reasoning)}});
        }
      }
      auto avars = vars;
      avars["reasoning"] = reasoning;
      pair.reasoning = reasoning;
      pair.answer = trim(call(aname, avars));
      pair.provenance.template_id = ctx.templates.get(rname).id + "+" + ctx.templates.get(aname).id;
      break;
    }
    case CotStyle::strong: {
      const auto name = base + ".strong";
      for (int attempt = 0;; ++attempt) {
        const auto reply = call(name, vars);
        std::string problem;
        if (auto parsed = parse_strong(reply)) {
          const auto rlen = utf8_length(parsed->reasoning);
          if (rlen < ctx.limits.min_reasoning || rlen > ctx.limits.max_reasoning) {
            problem = "reasoning length " + std::to_string(rlen) + " outside bounds";
          } else if (utf8_length(parsed->answer) > ctx.limits.max_answer) {
            problem = "answer longer than " + std::to_string(ctx.limits.max_answer);
          } else {
            pair.reasoning = std::move(parsed->reasoning);
            pair.answer = std::move(parsed->answer);
            break;
          }
        } else {
          problem = "reply does not match the reasoning format";
        }
        if (attempt >= ctx.limits.retries) throw FormatError("strong CoT: " + problem, {{"query", pair.query}});
      }
      pair.provenance.template_id = ctx.templates.get(name).id;
      break;
    }
  }
  pair.id = pair_id(pair);
  return pair;
}

std::vector<TrainingPair> apply_cot_style_all(const std::vector<TrainingPair>& seeds, CotStyle style,
                                              const SynthContext& ctx) {
  return parallel_map(seeds.size(), ctx.parallelism, [&](std::size_t i) { return apply_cot_style(seeds[i], style, ctx); });
}

std::vector<TrainingPair> synth_memory_qa(const SynthContext& ctx, std::size_t n, CotStyle style) {
  return apply_cot_style_all(memory_qa_queries(ctx, n), style, ctx);
}

std::vector<TrainingPair> synth_context_enhance(const SynthContext& ctx, std::size_t n, CotStyle style) {
  return apply_cot_style_all(context_enhance_queries(ctx, n), style, ctx);
}

std::vector<TrainingPair> synth_context_critic(const SynthContext& ctx, std::size_t n, CotStyle style) {
  return apply_cot_style_all(context_critic_queries(ctx, n), style, ctx);
}

// ---- SFT rendering -----------------------------------------------------------

prompts::RenderedPrompt sft_prompt(const TrainingPair& pair, const prompts::TemplateLibrary& templates) {
  std::string name;
  switch (pair.task_kind) {
    case TaskKind::memory_qa:
      name = pair.perspective == Perspective::self ? "sft.memory_self" : "sft.memory_third_party";
      break;
    case TaskKind::context_enhance: name = "sft.context_enhance"; break;
    case TaskKind::context_critic: name = "sft.context_critic"; break;
  }
  return templates.render(name, {{"query", pair.query},
                                 {"perspective_instructions",
                                  eval::perspective_instructions(pair.perspective == Perspective::third_party)}});
}

std::string assistant_content(const TrainingPair& pair) {
  if (pair.cot_style == CotStyle::strong && pair.reasoning) return render_strong(*pair.reasoning, pair.answer);
  return pair.answer;
}

std::string flat_prompt(const prompts::RenderedPrompt& p) { return p.system + "\n\n" + p.user; }

// ---- filtering ---------------------------------------------------------------

const char* to_string(FilterLevel level) {
  switch (level) {
    case FilterLevel::schema: return "schema";
    case FilterLevel::language: return "language";
    case FilterLevel::length: return "length";
    case FilterLevel::grounding: return "grounding";
    case FilterLevel::judge: return "judge";
  }
  return "schema";
}

Json FilterReport::to_json() const {
  OrderedJson j;
  j["total_in"] = total_in;
  j["total_out"] = total_out;
  j["levels"] = OrderedJson::array();
  for (const auto& l : levels) {
    j["levels"].push_back({{"level", static_cast<int>(l.level)},
                           {"name", to_string(l.level)},
                           {"inspected", l.inspected},
                           {"rejected", l.rejected}});
  }
  j["rejections"] = OrderedJson::array();
  for (const auto& r : rejections) {
    j["rejections"].push_back({{"pair_id", r.pair_id}, {"level", to_string(r.level)}, {"reason", r.reason}});
  }
  return Json::parse(j.dump());
}

Script corpus_script(const store::RecordSet& records) {
  std::string all;
  for (const auto& r : records.all()) all += store::record_text(r) + "\n";
  return dominant_script(all);
}

std::optional<std::pair<FilterLevel, std::string>> local_check(const TrainingPair& pair, const FilterContext& ctx,
                                                               Script corpus) {
  using R = std::pair<FilterLevel, std::string>;
  // L1 schema / format
  if (pair.id.empty()) return R{FilterLevel::schema, "missing id"};
  if (trim(pair.query).empty()) return R{FilterLevel::schema, "empty query"};
  if (trim(pair.answer).empty()) return R{FilterLevel::schema, "empty answer"};
  if (pair.task_kind != TaskKind::memory_qa) {
    if (pair.context_refs.empty()) return R{FilterLevel::schema, "context_refs empty"};
    if (pair.perspective != Perspective::self) return R{FilterLevel::schema, "perspective must be self"};
  }
  if (contains_reasoning_delimiter(pair.answer)) return R{FilterLevel::schema, "reasoning delimiter in answer"};
  switch (pair.cot_style) {
    case CotStyle::weak:
      if (pair.reasoning) return R{FilterLevel::schema, "weak pair carries reasoning"};
      break;
    case CotStyle::multi_step:
      if (!pair.reasoning || trim(*pair.reasoning).empty()) return R{FilterLevel::schema, "multi-step pair lacks reasoning"};
      break;
    case CotStyle::strong:
      if (!pair.reasoning || !parse_strong(render_strong(*pair.reasoning, pair.answer))) {
        return R{FilterLevel::schema, "strong pair violates the reasoning grammar"};
      }
      break;
  }
  if (pair.reasoning && contains_reasoning_delimiter(*pair.reasoning)) {
    return R{FilterLevel::schema, "reasoning delimiter inside reasoning"};
  }

  // L2 language
  if (corpus != Script::unknown) {
    const auto s = dominant_script(pair.query + "\n" + pair.answer);
    if (s != corpus) return R{FilterLevel::language, std::string("script ") + memloom::to_string(s) + " != corpus " + memloom::to_string(corpus)};
  }

  // L3 length
  const auto alen = utf8_length(pair.answer);
  if (alen < ctx.limits.min_answer || alen > ctx.limits.max_answer) {
    return R{FilterLevel::length, "answer length " + std::to_string(alen)};
  }
  if (pair.reasoning && pair.cot_style != CotStyle::weak) {
    const auto rlen = utf8_length(*pair.reasoning);
    if (rlen < ctx.limits.min_reasoning) return R{FilterLevel::length, "reasoning length " + std::to_string(rlen)};
    if (pair.cot_style == CotStyle::strong && rlen > ctx.limits.max_reasoning) {
      return R{FilterLevel::length, "reasoning length " + std::to_string(rlen)};
    }
  }

  // L4 grounding
  std::set<std::string> names;
  for (const auto& ref : pair.context_refs) {
    if (const auto* e = ctx.graph.find(ref)) {
      names.insert(e->name);
    } else {
      for (const auto& key : ctx.graph.entities_in_record(ref)) names.insert(ctx.graph.find(key)->name);
    }
  }
  const bool grounded = std::any_of(names.begin(), names.end(), [&](const std::string& n) {
    return contains_ci(pair.query, n) || contains_ci(pair.answer, n);
  });
  if (!grounded) return R{FilterLevel::grounding, "no referenced entity appears in query or answer"};
  return std::nullopt;
}

namespace {

std::optional<eval::Level> parse_quality(std::string_view reply) {
  for (const auto& line : split_lines(reply)) {
    const auto t = trim(line);
    if (!starts_with(t, "QUALITY=")) continue;
    auto level = eval::Level::parse(trim(std::string_view(t).substr(8)));
    if (!level || level->quarters() % 2 != 0) return std::nullopt;
    return level;
  }
  return std::nullopt;
}

}  // namespace

FilterResult filter_pairs(const std::vector<TrainingPair>& pairs, const FilterContext& ctx) {
  FilterResult out;
  auto& report = out.report;
  report.total_in = pairs.size();
  for (auto l : {FilterLevel::schema, FilterLevel::language, FilterLevel::length, FilterLevel::grounding,
                 FilterLevel::judge}) {
    report.levels.push_back({l, 0, 0});
  }
  const auto corpus = corpus_script(ctx.records);
  std::vector<std::optional<std::pair<FilterLevel, std::string>>> verdict(pairs.size());
  std::vector<std::size_t> to_judge;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    verdict[i] = local_check(pairs[i], ctx, corpus);
    if (!verdict[i]) to_judge.push_back(i);
  }

  auto judged = parallel_map(to_judge.size(), ctx.parallelism, [&](std::size_t k) -> std::optional<std::string> {
    const auto& p = pairs[to_judge[k]];
    auto req = ctx.templates.request(ctx.judge_role, "filter.judge",
                                     {{"task", to_string(p.task_kind)},
                                      {"context", render_context(ctx.records, p.context_refs)},
                                      {"query", p.query},
                                      {"answer", assistant_content(p)}},
                                     0.0);
    const auto level = parse_quality(ctx.gateway.complete(std::move(req)).content);
    if (!level) return std::string("judge reply unparseable");
    if (level->value() < ctx.quality_threshold) return "quality " + level->to_string() + " below threshold";
    return std::nullopt;
  });
  for (std::size_t k = 0; k < to_judge.size(); ++k) {
    if (judged[k]) verdict[to_judge[k]] = std::make_pair(FilterLevel::judge, *judged[k]);
  }

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const int last = verdict[i] ? static_cast<int>(verdict[i]->first) : 5;
    for (int l = 1; l <= last; ++l) ++report.levels[l - 1].inspected;
    if (verdict[i]) {
      ++report.levels[last - 1].rejected;
      report.rejections.push_back({pairs[i].id, verdict[i]->first, verdict[i]->second});
    } else {
      out.kept.push_back(pairs[i]);
    }
  }
  report.total_out = out.kept.size();
  return out;
}

// ---- DPO ---------------------------------------------------------------------

std::size_t pair_priority(const TrainingPair& pair, const std::vector<std::string>& ranked_entities) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (const auto& ref : pair.context_refs) {
    auto it = std::find(ranked_entities.begin(), ranked_entities.end(), ref);
    if (it != ranked_entities.end()) best = std::min(best, static_cast<std::size_t>(it - ranked_entities.begin()));
  }
  return best;
}

namespace {

enum class Preference { reference, candidate, tie, unparseable };

Preference parse_preference(std::string_view reply) {
  for (const auto& line : split_lines(reply)) {
    const auto t = trim(line);
    if (t == "PREFERRED=REFERENCE") return Preference::reference;
    if (t == "PREFERRED=CANDIDATE") return Preference::candidate;
    if (t == "PREFERRED=TIE") return Preference::tie;
  }
  return Preference::unparseable;
}

}  // namespace

DpoResult build_dpo_pairs(const std::vector<TrainingPair>& sft_pairs, const std::vector<std::string>& ranked_entities,
                          const prompts::TemplateLibrary& templates, llm::Gateway& gateway, const DpoOptions& options) {
  DpoResult result;
  const auto n = sft_pairs.size();
  result.target = static_cast<std::size_t>(std::llround(options.ratio * static_cast<double>(n)));

  std::vector<std::size_t> queue(n);
  for (std::size_t i = 0; i < n; ++i) queue[i] = i;
  std::vector<std::size_t> prio(n);
  for (std::size_t i = 0; i < n; ++i) prio[i] = pair_priority(sft_pairs[i], ranked_entities);
  std::stable_sort(queue.begin(), queue.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(prio[a], sft_pairs[a].id) < std::tie(prio[b], sft_pairs[b].id);
  });

  std::size_t pos = 0;
  while (result.pairs.size() < result.target && pos < queue.size()) {
    const auto wave = std::min(result.target - result.pairs.size(), queue.size() - pos);
    auto candidates = parallel_map(wave, options.parallelism, [&](std::size_t k) -> std::optional<PreferencePair> {
      const auto& pair = sft_pairs[queue[pos + k]];
      const auto prompt = sft_prompt(pair, templates);
      const auto chosen = assistant_content(pair);
      auto req = llm::make_request(options.tuned_role, prompt.template_name, prompt.system, prompt.user,
                                   options.temperature);
      req.decode.seed = options.seed;
      const auto sample = trim(gateway.complete(std::move(req)).content);
      if (sample.empty() || sample == trim(chosen) || trim(strip_reasoning(sample).text) == trim(pair.answer)) {
        return std::nullopt;
      }
      const auto flat = flat_prompt(prompt);
      auto jreq = templates.request(options.judge_role, "dpo.judge",
                                    {{"prompt", flat}, {"reference", chosen}, {"candidate", sample}}, 0.0);
      if (parse_preference(gateway.complete(std::move(jreq)).content) != Preference::reference) return std::nullopt;
      return PreferencePair{flat, chosen, sample, pair.id};
    });
    pos += wave;
    result.considered += wave;
    for (auto& c : candidates) {
      if (c) result.pairs.push_back(std::move(*c));
    }
  }
  result.ratio_shortfall =
      n > 0 && static_cast<double>(result.pairs.size()) < options.shortfall_ratio * static_cast<double>(n);
  return result;
}

// ---- export --------------------------------------------------------------------

std::string sft_file_name(TaskKind task, CotStyle style) {
  return std::string("sft_") + to_string(task) + "_" + to_string(style) + ".jsonl";
}

Json export_dataset(const std::vector<TrainingPair>& pairs, const std::vector<PreferencePair>& dpo,
                    const std::vector<std::pair<TaskKind, CotStyle>>& layout, const std::filesystem::path& dir,
                    const prompts::TemplateLibrary& templates, const Json& config_snapshot) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::pair<TaskKind, CotStyle>> files = layout;
  for (const auto& p : pairs) {
    const auto k = std::make_pair(p.task_kind, p.cot_style);
    if (std::find(files.begin(), files.end(), k) == files.end()) files.push_back(k);
  }

  OrderedJson manifest;
  manifest["files"] = OrderedJson::array();
  for (const auto& [task, style] : files) {
    std::string body;
    std::size_t count = 0;
    for (const auto& p : pairs) {
      if (p.task_kind != task || p.cot_style != style) continue;
      const auto prompt = sft_prompt(p, templates);
      OrderedJson line;
      line["messages"] = OrderedJson::array({OrderedJson{{"role", "system"}, {"content", prompt.system}},
                                             OrderedJson{{"role", "user"}, {"content", prompt.user}},
                                             OrderedJson{{"role", "assistant"}, {"content", assistant_content(p)}}});
      body += line.dump() + "\n";
      ++count;
    }
    const auto name = sft_file_name(task, style);
    write_file(dir / name, body);
    manifest["files"].push_back({{"name", name},
                                 {"kind", "sft"},
                                 {"task", to_string(task)},
                                 {"style", to_string(style)},
                                 {"count", count},
                                 {"sha256", sha256_hex(body)}});
  }

  std::string body;
  for (const auto& d : dpo) {
    OrderedJson line;
    line["prompt"] = d.prompt;
    line["chosen"] = d.chosen;
    line["rejected"] = d.rejected;
    body += line.dump() + "\n";
  }
  write_file(dir / "dpo.jsonl", body);
  manifest["files"].push_back({{"name", "dpo.jsonl"}, {"kind", "dpo"}, {"count", dpo.size()}, {"sha256", sha256_hex(body)}});
  manifest["sft_total"] = pairs.size();
  manifest["dpo_total"] = dpo.size();
  manifest["config"] = OrderedJson::parse(config_snapshot.dump());

  const auto text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", text);
  return Json::parse(text);
}

}  // namespace memloom::synth
