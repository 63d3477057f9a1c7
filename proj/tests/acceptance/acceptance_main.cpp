// Acceptance suite: one PASS/FAIL line per primary criterion.

#include "memloom/error.hpp"
#include "memloom/evaluator.hpp"
#include "memloom/pipeline.hpp"
#include "memloom/reasoning.hpp"
#include "memloom/router.hpp"
#include "support.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

using namespace memloom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> failures;

  void expect(bool cond, const std::string& what) {
    if (cond) return;
    pass = false;
    if (failures.size() < 5) failures.push_back(what);
  }
};

const prompts::TemplateLibrary& lib() { return prompts::TemplateLibrary::builtin(); }

// Backend answering through a callback; lets a test compute replies from the prompt.
class FnBackend final : public llm::Backend {
 public:
  using Fn = std::function<std::string(const llm::ChatRequest&)>;
  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}
  llm::BackendReply complete(const llm::ChatRequest& r) override { return {fn_(r), {}, {}}; }

 private:
  Fn fn_;
};

std::string user_text(const llm::ChatRequest& r) { return r.messages.back().content; }

std::string after_last(const std::string& s, const std::string& marker) {
  const auto pos = s.rfind(marker);
  return pos == std::string::npos ? std::string() : s.substr(pos + marker.size());
}

// Normalization written independently of the library: lowercase ASCII,
// punctuation to spaces, whitespace runs collapsed, ends trimmed.
std::string oracle_normalize(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::ispunct(c) || std::isspace(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

struct DemoRun {
  test::TempDir dir;
  std::unique_ptr<Pipeline> pipeline;
  double seconds = 0;
};

std::unique_ptr<DemoRun> run_demo() {
  auto run = std::make_unique<DemoRun>();
  test::copy_demo(run->dir.path());
  auto config = PipelineConfig::load(run->dir / "memloom.json");
  config.seed = 42;
  run->pipeline = std::make_unique<Pipeline>(config);
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto* stage : {"ingest", "index", "synth", "filter", "export", "eval", "report"}) run->pipeline->run(stage);
  run->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

std::map<std::string, std::string> artifact_bytes(const Pipeline& p) {
  std::map<std::string, std::string> out;
  for (const auto* sub : {"datasets", "reports"}) {
    for (const auto& e : fs::recursive_directory_iterator(p.artifact(sub))) {
      if (e.is_regular_file()) out[fs::relative(e.path(), p.workdir()).string()] = read_file(e.path());
    }
  }
  for (const auto* f : {"eval/report.json", "eval/table.txt", "eval/scores.jsonl", "eval/eval_set.jsonl"}) {
    out[f] = read_file(p.artifact(f));
  }
  return out;
}

// ---- 1 ----------------------------------------------------------------------

Outcome offline_determinism(const DemoRun& a) {
  Outcome o;
  const auto b = run_demo();
  const auto fa = artifact_bytes(*a.pipeline);
  const auto fb = artifact_bytes(*b->pipeline);
  o.expect(fa.size() == fb.size(), "artifact sets differ");
  for (const auto& [name, bytes] : fa) {
    auto it = fb.find(name);
    o.expect(it != fb.end() && it->second == bytes, name + " differs between runs");
  }
  o.expect(fa.count("datasets/manifest.json") && fa.count("reports/report.json"), "missing dataset or report");
  const auto sft = read_json(a.pipeline->artifact("datasets/manifest.json"))["sft_total"].get<std::size_t>();
  o.expect(sft > 0, "empty dataset");
  o.expect(a.seconds < 60 && b->seconds < 60, "runtime over 60 s");
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu artifacts identical, %zu SFT pairs, runs %.2fs / %.2fs", fa.size(), sft,
                a.seconds, b->seconds);
  o.detail = buf;
  return o;
}

// ---- shared small world ---------------------------------------------------------

struct World {
  store::RecordSet records;
  index::MemoryGraph graph;
  index::L1Profile profile;
};

World alice_world() {
  World w;
  w.records = store::RecordSet({test::make_note("Lunch", "Met Alice at Acme to plan the Orion launch.", 1),
                                test::make_note("Call", "Bob called about the budget review on Friday.", 2),
                                test::make_note("Offsite", "Acme offsite in March with Alice.", 3),
                                test::make_todo("Send Alice the Orion deck", 4)});
  w.graph = index::MemoryGraph({test::scanned_entity("Alice", index::EntityType::person, w.records.all()),
                                test::scanned_entity("Acme", index::EntityType::organization, w.records.all()),
                                test::scanned_entity("Bob", index::EntityType::person, w.records.all()),
                                test::scanned_entity("Orion", index::EntityType::project, w.records.all())},
                               {}, {});
  w.profile.ranked_entities = index::rank_entities(w.graph);
  return w;
}

// ---- 2 ----------------------------------------------------------------------

Outcome filter_soundness() {
  Outcome o;
  const auto w = alice_world();
  const std::string reasoning =
      "The records mention this person in several places; the lunch note and the offsite note both point to the "
      "same plan, and the to-do confirms the deck still has to be sent, so the answer should cite those facts.";

  std::vector<synth::TrainingPair> pairs;
  std::map<std::string, synth::FilterLevel> planted;
  auto base = [&](int i) {
    synth::TrainingPair p;
    p.id = "pair-" + std::to_string(100 + i);
    p.task_kind = synth::TaskKind::memory_qa;
    p.perspective = i % 2 ? synth::Perspective::third_party : synth::Perspective::self;
    p.query = "Question " + std::to_string(i) + ": what did the notes say about Alice?";
    p.source_query = p.query;
    p.context_refs = {"person:Alice"};
    p.cot_style = synth::CotStyle::strong;
    p.reasoning = reasoning;
    p.answer = "Alice met you at Acme to plan the Orion launch (item " + std::to_string(i) + ").";
    return p;
  };
  const std::string cyrillic =
      "\xD0\x90\xD0\xBB\xD0\xB8\xD1\x81\xD0\xB0 \xD0\xB2\xD1\x81\xD1\x82\xD1\x80\xD0\xB5\xD1\x82\xD0\xB8\xD0\xBB\xD0"
      "\xB0 \xD0\xB2\xD0\xB0\xD1\x81 \xD0\xB2 \xD0\xBE\xD1\x84\xD0\xB8\xD1\x81\xD0\xB5 \xD0\xB8 \xD0\xBE\xD0\xB1\xD1"
      "\x81\xD1\x83\xD0\xB4\xD0\xB8\xD0\xBB\xD0\xB0 \xD0\xBF\xD0\xBB\xD0\xB0\xD0\xBD \xD0\xB7\xD0\xB0\xD0\xBF\xD1\x83"
      "\xD1\x81\xD0\xBA\xD0\xB0 \xD0\xBF\xD1\x80\xD0\xBE\xD0\xB5\xD0\xBA\xD1\x82\xD0\xB0.";
  const std::string cjk =
      "\xE4\xBD\xA0\xE5\x9C\xA8\xE5\x8D\x88\xE9\xA4\x90\xE6\x97\xB6\xE5\x92\x8C\xE5\xA5\xB9\xE8\xAE\xA8\xE8\xAE\xBA"
      "\xE4\xBA\x86\xE5\x8F\x91\xE5\xB8\x83\xE8\xAE\xA1\xE5\x88\x92\xEF\xBC\x8C\xE8\xBF\x98\xE8\xA6\x81\xE5\x8F\x91"
      "\xE9\x80\x81\xE6\xBC\x94\xE7\xA4\xBA\xE6\x96\x87\xE7\xA8\xBF\xE3\x80\x82";

  // Two violations per level; each passes every earlier level.
  std::vector<std::pair<synth::FilterLevel, std::function<void(synth::TrainingPair&)>>> violations{
      {synth::FilterLevel::schema, [](auto& p) { p.answer += " </reasoning>"; }},
      {synth::FilterLevel::schema, [](auto& p) { p.cot_style = synth::CotStyle::weak; }},
      {synth::FilterLevel::language, [&](auto& p) { p.query = cyrillic; p.answer = cyrillic + " " + cyrillic; }},
      {synth::FilterLevel::language, [&](auto& p) { p.query = cjk; p.answer = cjk + cjk; }},
      {synth::FilterLevel::length, [](auto& p) { p.answer = "Alice, yes."; }},
      {synth::FilterLevel::length, [](auto& p) { p.reasoning = "Too short to count as reasoning about it."; }},
      {synth::FilterLevel::grounding,
       [](auto& p) {
         p.query = "What did the notes say about her?";
         p.answer = "She met you at the company to plan the launch next month.";
       }},
      {synth::FilterLevel::grounding,
       [&](auto& p) {
         p.context_refs = {store::record_id(w.records.all()[1])};  // mentions Bob only
       }},
      {synth::FilterLevel::judge, [](auto& p) { p.query += " LOWQ"; }},
      {synth::FilterLevel::judge, [](auto& p) { p.query += " LOWQ"; }},
  };
  std::mt19937_64 rng(42);
  std::vector<int> slots(50);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::map<int, std::size_t> violation_at;
  for (std::size_t v = 0; v < violations.size(); ++v) violation_at[slots[v]] = v;
  for (int i = 0; i < 50; ++i) {
    auto p = base(i);
    if (auto it = violation_at.find(i); it != violation_at.end()) {
      violations[it->second].second(p);
      planted[p.id] = violations[it->second].first;
    }
    pairs.push_back(std::move(p));
  }

  auto gw = test::scripted_gateway({{"judge", test::script({test::entry("filter.judge", "LOWQ", "QUALITY=0", false),
                                                            test::entry("filter.judge", "QUALITY=1")})}});
  synth::FilterContext fc{w.graph, w.records, lib(), *gw};
  const auto result = synth::filter_pairs(pairs, fc);

  std::map<std::string, synth::FilterLevel> got;
  for (const auto& r : result.report.rejections) got[r.pair_id] = r.level;
  o.expect(got.size() == 10, "rejected " + std::to_string(got.size()) + " pairs, expected 10");
  for (const auto& [id, level] : planted) {
    auto it = got.find(id);
    o.expect(it != got.end(), id + " was not rejected");
    if (it != got.end()) {
      o.expect(it->second == level, id + " rejected at " + synth::to_string(it->second) + ", designed for " +
                                        synth::to_string(level));
    }
  }
  std::size_t rejected_sum = 0;
  for (const auto& l : result.report.levels) {
    rejected_sum += l.rejected;
    o.expect(l.rejected == 2, std::string("level ") + synth::to_string(l.level) + " rejected " +
                                  std::to_string(l.rejected));
  }
  o.expect(result.report.total_in == 50, "total_in != 50");
  o.expect(result.report.total_out == result.report.total_in - rejected_sum, "total_out != total_in - rejected");
  o.expect(result.kept.size() == 40, "kept != 40");
  o.detail = "50 in, " + std::to_string(got.size()) + " rejected (2 per level), " +
             std::to_string(result.report.total_out) + " out";
  return o;
}

// ---- 3 ----------------------------------------------------------------------

Outcome dpo_ratio() {
  Outcome o;
  // Ten entities with distinct frequencies so the ranking is strict.
  std::vector<store::Record> recs;
  const std::vector<std::string> names{"Ada", "Boris", "Chen", "Dara", "Eli", "Fatima", "Gus", "Hana", "Ivo", "Jun"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t k = 0; k < 12 - i; ++k) {
      recs.push_back(test::make_note(names[i] + " " + std::to_string(k), "Spent time with " + names[i] + ".",
                                     1 + static_cast<int>((i * 3 + k) % 28)));
    }
  }
  const store::RecordSet records(recs);
  std::vector<index::Entity> es;
  for (const auto& n : names) es.push_back(test::scanned_entity(n, index::EntityType::person, records.all()));
  const index::MemoryGraph graph(es, {}, {});
  const auto ranked = index::rank_entities(graph);

  std::mt19937_64 rng(7);
  std::vector<synth::TrainingPair> pairs;
  std::map<std::string, std::string> answer_of;  // query -> chosen content
  std::set<std::string> echo_queries;
  for (int i = 0; i < 200; ++i) {
    synth::TrainingPair p;
    const auto& name = names[rng() % names.size()];
    p.id = sha256_hex("dpo-" + std::to_string(i)).substr(0, 16);
    p.task_kind = synth::TaskKind::memory_qa;
    p.query = "Question " + std::to_string(i) + " about " + name + "?";
    p.source_query = p.query;
    p.context_refs = {"person:" + name};
    p.cot_style = synth::CotStyle::strong;
    p.reasoning = std::string(220, 'x');
    p.answer = "Detailed answer " + std::to_string(i) + " about " + name + ".";
    answer_of[p.query] = synth::assistant_content(p);
    if (rng() % 7 == 0) echo_queries.insert(p.query);
    pairs.push_back(p);
  }

  llm::Gateway gw;
  gw.add_role("tuned", test::fast_role(), std::make_shared<FnBackend>([&](const llm::ChatRequest& r) {
                const auto q = user_text(r);
                return echo_queries.count(q) ? answer_of.at(q) : "A vaguer answer that misses the records.";
              }));
  gw.add_role("judge", test::fast_role(),
              std::make_shared<FnBackend>([](const llm::ChatRequest&) { return std::string("PREFERRED=REFERENCE"); }));
  const auto result = synth::build_dpo_pairs(pairs, ranked, lib(), gw);
  const double ratio = static_cast<double>(result.pairs.size()) / static_cast<double>(pairs.size());
  o.expect(ratio >= 0.15 && ratio <= 0.25, "ratio " + std::to_string(ratio) + " outside [0.15, 0.25]");
  o.expect(!result.ratio_shortfall, "shortfall flagged");

  // Oracle: walk pairs by (best rank of their refs, id), skipping echoes.
  std::vector<std::pair<std::size_t, std::string>> order;
  std::map<std::string, const synth::TrainingPair*> by_id;
  for (const auto& p : pairs) {
    std::size_t best = ranked.size();
    for (const auto& ref : p.context_refs) {
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        if (ranked[r] == ref) best = std::min(best, r);
      }
    }
    order.push_back({best, p.id});
    by_id[p.id] = &p;
  }
  std::sort(order.begin(), order.end());
  std::set<std::string> expected;
  for (const auto& [rank, id] : order) {
    if (expected.size() == result.target) break;
    if (!echo_queries.count(by_id[id]->query)) expected.insert(id);
  }
  std::set<std::string> selected;
  std::size_t worst_rank = 0;
  for (const auto& d : result.pairs) {
    selected.insert(d.source_pair_id);
    for (const auto& [rank, id] : order) {
      if (id == d.source_pair_id) worst_rank = std::max(worst_rank, rank);
    }
  }
  o.expect(selected == expected, "selected pairs differ from the top-ranked oracle");
  o.expect(selected.size() == result.pairs.size(), "duplicate source pairs");
  for (const auto& d : result.pairs) {
    o.expect(d.chosen != d.rejected, "chosen equals rejected");
    o.expect(!echo_queries.count(by_id[d.source_pair_id]->query), "echoed sample selected");
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu/200 pairs (ratio %.3f), worst entity rank used %zu of %zu", result.pairs.size(),
                ratio, worst_rank + 1, ranked.size());
  o.detail = buf;
  return o;
}

// ---- 4 ----------------------------------------------------------------------

std::string random_text(std::mt19937_64& rng, std::size_t len) {
  static const std::string alphabet = "abcdefghij klmnop qrstuv wxyz.,";
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
  return s;
}

// Independent grammar oracle for a strong reply under the default limits.
bool oracle_strong_ok(const std::string& reply, std::size_t min_r, std::size_t max_r, std::size_t max_a) {
  static const std::regex re(R"(^[ \t\r\n]*<reasoning>([\s\S]*?)</reasoning>([\s\S]*)$)");
  std::smatch m;
  if (!std::regex_match(reply, m, re)) return false;
  const auto r = m[1].str();
  const auto a = m[2].str();
  auto has_delim = [](const std::string& s) {
    return s.find("<reasoning>") != std::string::npos || s.find("</reasoning>") != std::string::npos;
  };
  if (has_delim(r) || has_delim(a)) return false;
  auto strip = [](std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    return s.substr(b);
  };
  const auto rt = strip(r);
  const auto at = strip(a);
  return !rt.empty() && !at.empty() && rt.size() >= min_r && rt.size() <= max_r && at.size() <= max_a;
}

Outcome cot_contracts() {
  Outcome o;
  const auto w = alice_world();
  const synth::StyleLimits limits;
  std::mt19937_64 rng(2024);

  std::map<std::string, std::string> strong_reply;     // query -> reply
  std::map<std::string, std::string> multi_reasoning;  // query -> reasoning
  std::map<std::string, int> reasoning_calls;
  std::mutex mu;
  llm::Gateway gw;
  gw.add_role("synth", test::fast_role(), std::make_shared<FnBackend>([&](const llm::ChatRequest& r) {
                const auto q = after_last(user_text(r), "Question: ");
                const auto query = q.substr(0, q.find('\n'));
                std::lock_guard lock(mu);
                if (r.template_id == "memory_qa.strong") return strong_reply.at(query);
                if (r.template_id == "memory_qa.multi_step.reasoning") {
                  ++reasoning_calls[query];
                  return multi_reasoning.at(query);
                }
                return std::string("Final answer about Alice and the Orion launch.");
              }));
  synth::SynthContext ctx{w.graph, w.records, w.profile, lib(), gw};

  std::size_t kept = 0, oracle_kept = 0, multi_rejected = 0, multi_short = 0;
  for (int i = 0; i < 100; ++i) {
    // Fuzzed strong output.
    std::string reasoning = random_text(rng, rng() % 400);
    std::string answer = random_text(rng, rng() % 120);
    std::string reply;
    switch (rng() % 8) {
      case 0: reply = reasoning + answer; break;
      case 1: reply = "<reasoning>" + reasoning + answer; break;
      case 2: reply = "<reasoning>" + reasoning + "<reasoning>x</reasoning>" + answer; break;
      case 3: reply = "lead " + std::string("<reasoning>") + reasoning + "</reasoning>" + answer; break;
      case 4: reply = "<reasoning>" + reasoning + "</reasoning>" + answer + "</reasoning>"; break;
      default: reply = "\n<reasoning>" + reasoning + "</reasoning>\n" + answer; break;
    }
    synth::TrainingPair seed;
    seed.task_kind = synth::TaskKind::memory_qa;
    seed.query = "case " + std::to_string(i) + " about Alice";
    seed.source_query = seed.query;
    seed.context_refs = {"person:Alice"};
    {
      std::lock_guard lock(mu);
      strong_reply[seed.query] = reply;
    }
    const bool expect_ok = oracle_strong_ok(reply, limits.min_reasoning, limits.max_reasoning, limits.max_answer);
    oracle_kept += expect_ok;

    const auto once = strip_reasoning(reply);
    o.expect(!contains_reasoning_delimiter(once.text), "strip_reasoning left a delimiter");
    o.expect(strip_reasoning(once.text).text == once.text, "strip_reasoning not idempotent");

    try {
      const auto pair = synth::apply_cot_style(seed, synth::CotStyle::strong, ctx);
      ++kept;
      o.expect(expect_ok, "kept a reply the grammar oracle rejects: case " + std::to_string(i));
      const auto parsed = parse_strong(synth::assistant_content(pair));
      o.expect(parsed.has_value(), "kept pair does not parse");
      o.expect(!contains_reasoning_delimiter(pair.answer), "kept answer carries a delimiter");
      const auto stripped = strip_reasoning(synth::assistant_content(pair));
      o.expect(trim(stripped.text) == pair.answer, "stripping a kept pair does not yield its answer");
    } catch (const FormatError&) {
      o.expect(!expect_ok, "rejected a reply the grammar oracle accepts: case " + std::to_string(i));
    }

    // Multi-step with random reasoning length.
    const auto rlen = static_cast<std::size_t>(rng() % 400);
    auto ms = seed;
    ms.query = "multi " + std::to_string(i) + " about Alice";
    ms.source_query = ms.query;
    {
      std::lock_guard lock(mu);
      multi_reasoning[ms.query] = std::string(rlen, 'm');
    }
    const bool short_r = rlen < limits.min_reasoning;
    multi_short += short_r;
    try {
      const auto pair = synth::apply_cot_style(ms, synth::CotStyle::multi_step, ctx);
      o.expect(!short_r, "short multi-step reasoning was kept (" + std::to_string(rlen) + " chars)");
      o.expect(pair.reasoning && pair.reasoning->size() == rlen, "multi-step reasoning altered");
      o.expect(synth::assistant_content(pair) == pair.answer, "multi-step export carries reasoning");
    } catch (const FormatError&) {
      ++multi_rejected;
      o.expect(short_r, "multi-step with " + std::to_string(rlen) + " chars rejected");
      std::lock_guard lock(mu);
      o.expect(reasoning_calls[ms.query] == limits.retries + 1,
               "short reasoning tried " + std::to_string(reasoning_calls[ms.query]) + " times");
    }
  }
  o.expect(kept == oracle_kept, "kept count differs from oracle");
  o.detail = std::to_string(kept) + "/100 strong kept (oracle " + std::to_string(oracle_kept) + "), " +
             std::to_string(multi_rejected) + "/" + std::to_string(multi_short) +
             " short multi-step rejected after retries";
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome rubric_closure() {
  Outcome o;
  using namespace memloom::eval;
  const std::vector<std::string> pool{"0", "0.5", "1", "1.0", ".5", "0.25", "0.75", ".75", "0.7", "1.5",
                                      "-1", "2", "abc", "0.50", "0.125", "", "0.3"};
  // Oracle values, by hand.
  const std::map<std::string, double> value{{"0", 0},       {"0.5", 0.5},   {"1", 1},    {"1.0", 1},
                                            {".5", 0.5},    {"0.25", 0.25}, {"0.75", .75}, {".75", .75},
                                            {"0.50", 0.5}};
  const std::set<double> three{0, 0.5, 1};
  const std::set<double> five{0, 0.25, 0.5, 0.75, 1};

  const auto w = alice_world();
  std::map<std::string, std::string> replies;  // response text -> judge reply
  std::mutex mu;
  llm::Gateway gw;
  gw.add_role("judge", test::fast_role(), std::make_shared<FnBackend>([&](const llm::ChatRequest& r) {
                const auto key = after_last(user_text(r), "\n");
                std::lock_guard lock(mu);
                return replies.at(key);
              }));
  JudgeContext jc{w.records, lib(), gw};
  jc.retries = 0;

  std::mt19937_64 rng(99);
  std::vector<TaskScore> valid_scores;
  std::map<EvalTask, std::pair<double, std::size_t>> oracle_task;  // sum of item means, item count
  std::size_t accepted = 0, rejected = 0;
  double max_err = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto task = static_cast<EvalTask>(rng() % 4);
    std::vector<Metric> metrics;
    if (task == EvalTask::context_enhance) metrics = {Metric::context_enhance};
    else if (task == EvalTask::context_critic) metrics = {Metric::context_critic};
    else metrics = memory_metrics(task);

    std::string reply;
    bool ok = true;
    double sum = 0;
    const bool drop_one = rng() % 20 == 0;
    for (std::size_t k = 0; k < metrics.size(); ++k) {
      if (drop_one && k == 0) {
        ok = false;
        continue;
      }
      // Bias toward valid levels so both outcomes are well represented.
      const auto& lvl = rng() % 3 ? pool[rng() % 9] : pool[rng() % pool.size()];
      reply += std::string(metric_name(metrics[k])) + "=" + lvl + "\n";
      const auto& allowed = metrics[k] == Metric::context_critic ? five : three;
      auto it = value.find(lvl);
      if (it == value.end() || !allowed.count(it->second)) ok = false;
      else sum += it->second;
    }
    reply += "RATIONALE=case " + std::to_string(i);

    EvalItem item;
    item.id = "item-" + std::to_string(i);
    item.task = task;
    item.query = item.source_query = "query " + std::to_string(i);
    item.context_refs = {"person:Alice"};
    if (task == EvalTask::context_critic) item.expert_response = "expert";
    const std::string response = "response-" + std::to_string(i);
    {
      std::lock_guard lock(mu);
      replies[response] = reply;
    }
    try {
      std::vector<JudgeScore> scores;
      if (task == EvalTask::context_enhance) scores = {score_enhance(response, item, jc)};
      else if (task == EvalTask::context_critic) scores = {score_critic(response, item, jc)};
      else scores = score_memory(response, item, jc);
      ++accepted;
      o.expect(ok, "accepted an out-of-set reply: " + reply);
      const double oracle_mean = sum / static_cast<double>(metrics.size());
      std::vector<TaskScore> one;
      for (const auto& s : scores) {
        o.expect(is_allowed(s.metric, s.level), "score outside its level set");
        one.push_back({task, s});
        valid_scores.push_back({task, s});
      }
      const double mean = aggregate(one, "strong", false).task_means.at(task);
      max_err = std::max(max_err, std::abs(mean - oracle_mean));
      oracle_task[task].first += oracle_mean;
      ++oracle_task[task].second;
    } catch (const JudgeParseError&) {
      ++rejected;
      o.expect(!ok, "rejected a valid reply: " + reply);
    }
  }
  const auto report = aggregate(valid_scores, "strong", false);
  for (const auto& [task, acc] : oracle_task) {
    const double oracle = acc.first / static_cast<double>(acc.second);
    max_err = std::max(max_err, std::abs(report.task_means.at(task) - oracle));
  }
  o.expect(max_err <= 1e-12, "mean error " + std::to_string(max_err));
  o.expect(accepted > 100 && rejected > 100, "degenerate fuzz distribution");
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu accepted, %zu rejected of 1000; max |mean - oracle| = %.1e", accepted, rejected,
                max_err);
  o.detail = buf;
  return o;
}

// ---- 6 ----------------------------------------------------------------------

Outcome eval_isolation(const DemoRun& run) {
  Outcome o;
  const auto& p = *run.pipeline;
  std::set<std::string> training;
  for (const auto& j : read_jsonl(p.artifact("synth/pairs.jsonl"))) {
    training.insert(oracle_normalize(j.at("query").get<std::string>()));
    training.insert(oracle_normalize(j.at("source_query").get<std::string>()));
  }
  for (const auto& f : fs::directory_iterator(p.artifact("datasets"))) {
    if (f.path().extension() != ".jsonl" || f.path().filename() == "dpo.jsonl") continue;
    for (const auto& j : read_jsonl(f.path())) training.insert(oracle_normalize(j["messages"][1]["content"]));
  }
  const auto items = read_jsonl(p.artifact("eval/eval_set.jsonl"));
  std::map<std::string, int> per_task;
  std::size_t overlap = 0;
  for (const auto& it : items) {
    ++per_task[it.at("task").get<std::string>()];
    if (training.count(oracle_normalize(it.at("query").get<std::string>())) ||
        training.count(oracle_normalize(it.at("source_query").get<std::string>()))) {
      ++overlap;
    }
  }
  o.expect(items.size() == 240, "eval set has " + std::to_string(items.size()) + " items");
  for (const auto* t : {"memory_self", "memory_third_party", "context_enhance", "context_critic"}) {
    o.expect(per_task[t] == 60, std::string(t) + " has " + std::to_string(per_task[t]) + " items");
  }
  o.expect(overlap == 0, std::to_string(overlap) + " eval queries collide with training");
  o.detail = std::to_string(items.size()) + " eval items (60 per task) vs " + std::to_string(training.size()) +
             " normalized training queries, intersection " + std::to_string(overlap);
  return o;
}

// ---- 7 ----------------------------------------------------------------------

using Grid = std::vector<std::vector<std::string>>;

// Rows of a LaTeX tabular: label cells and values, continuation rows inherit the label.
Grid latex_table(const std::string& doc, const std::string& label) {
  const auto at = doc.find("\\label{" + label + "}");
  const auto begin = doc.find("\\midrule", at);
  const auto end = doc.find("\\bottomrule", begin);
  std::istringstream body(doc.substr(begin + 8, end - begin - 8));
  Grid rows;
  std::string line, last_label;
  const std::regex bold(R"(\\textbf\{([^}]*)\})"), multirow(R"(\\multirow\{\d+\}\{\*\}\{([^}]*)\})");
  while (std::getline(body, line)) {
    if (line.find("&") == std::string::npos) continue;
    line = std::regex_replace(line, bold, "$1");
    line = std::regex_replace(line, multirow, "$1");
    line = line.substr(0, line.find("\\\\"));
    std::vector<std::string> cells;
    for (const auto& c : split(line, '&')) cells.push_back(trim(c));
    if (cells[0].empty()) cells[0] = last_label;
    last_label = cells[0];
    rows.push_back(cells);
  }
  return rows;
}

Grid markdown_rows(const std::string& table) {
  Grid rows;
  for (const auto& line : split_lines(table)) {
    if (line.find("---") != std::string::npos || trim(line).empty()) continue;
    std::vector<std::string> cells;
    for (const auto& c : split(line.substr(1, line.rfind('|') - 1), '|')) cells.push_back(trim(c));
    rows.push_back(cells);
  }
  if (!rows.empty()) rows.erase(rows.begin());  // header
  return rows;
}

Outcome report_fidelity() {
  Outcome o;
  const auto reference = read_file(test::source_dir() / "paper.md");
  test::TempDir dir;
  test::copy_demo(dir.path());
  Pipeline p(PipelineConfig::load(dir / "memloom.json"));
  const auto fixtures = test::source_dir() / "tests" / "fixtures";
  std::size_t cells = 0;
  for (const auto& [label, file, header_has_dpo] :
       {std::tuple{"tab:main_results1", "table1_reports.json", false},
        std::tuple{"tab:main_results2", "table2_reports.json", true}}) {
    const auto expected = latex_table(reference, label);
    const auto table = p.run("report", StageOptions{true, {fixtures / file}})["table"].get<std::string>();
    const auto got = markdown_rows(table);
    o.expect(!expected.empty(), std::string("could not read ") + label + " from paper.md");
    o.expect((table.find("| DPO") != std::string::npos) == header_has_dpo, std::string(label) + ": DPO column");
    o.expect(got == expected, std::string(label) + " differs from paper.md");
    for (const auto& r : got) cells += r.size();
  }
  o.detail = std::to_string(cells) + " cells of both tables match paper.md";
  return o;
}

// ---- 8 ----------------------------------------------------------------------

struct Loaded {
  store::RecordSet records;
  index::MemoryGraph graph;
  index::L1Profile profile;
};

Loaded load_state(const Pipeline& p) {
  Loaded l;
  store::Store s(p.artifact("store"));
  l.records = store::RecordSet(s.list());
  l.graph = index::MemoryGraph::from_json(read_json(p.artifact("memory_graph.json")));
  l.profile = index::L1Profile::from_json(read_json(p.artifact("l1_profile.json")));
  return l;
}

Outcome router_properties(const DemoRun& run) {
  Outcome o;
  using namespace memloom::router;
  const auto st = load_state(*run.pipeline);
  const auto gw_config = llm::GatewayConfig::load(run.dir / "gateway.json");
  const std::vector<std::string> messages{
      "When is my half marathon?",       "Help me plan my training week",   "I need advice on film cameras",
      "Write a note to Tomas",           "What does your user do at work?", "Review my sourdough schedule",
      "What did Dr. Okafor recommend?",  "Draft my Spanish practice plan"};

  // Replay determinism.
  test::TempDir sessions;
  Session logged;
  {
    llm::Gateway gw(gw_config);
    Router r(st.graph, st.records, st.profile, lib(), gw, {}, sessions.path());
    const auto s = r.open_session(Channel::user);
    for (const auto& m : messages) r.handle(s.id, m);
    logged = load_session(sessions / (s.id + ".jsonl"));
  }
  llm::Gateway fresh(gw_config);
  Router replayer(st.graph, st.records, st.profile, lib(), fresh);
  const auto replayed = replay_decisions(logged, replayer);
  const auto recorded = recorded_decisions(logged);
  o.expect(recorded.size() == messages.size(), "recorded decisions missing");
  o.expect(replayed == recorded, "replayed decisions differ");
  std::set<Mode> modes;
  for (const auto& d : recorded) modes.insert(d.mode);
  o.expect(modes.size() == 3, "replay script did not cover all three modes");

  // Critic loop bound over never-sufficient critiques.
  std::mt19937_64 rng(5);
  const std::vector<std::string> endings{"VERDICT: INSUFFICIENT", "VERDICT: SUFFICIENT?", "verdict: sufficient",
                                         "VERDICT: SUFFICIENT\nOne more thing.", "Looks sufficient to me.",
                                         "VERDICT:SUFFICIENT!"};
  int violations = 0;
  for (int i = 0; i < 50; ++i) {
    const int max_rounds = 1 + static_cast<int>(rng() % 6);
    Json critiques = Json::array();
    for (int k = 0; k < 3; ++k) critiques.push_back("Critique " + std::to_string(k) + ".\n" + endings[rng() % endings.size()]);
    Json crit = test::entry("router.critique", "unused");
    crit.erase("response");
    crit["responses"] = critiques;
    auto gw = test::scripted_gateway(
        {{"l2", test::script({test::entry("router.perspective", "SELF"), test::entry("router.classify", "CRITIC"), crit})},
         {"expert", test::script({test::entry("router.expert", "Answer."), test::entry("router.revise", "Revised.")})}});
    RouterConfig cfg;
    cfg.max_rounds = max_rounds;
    Router r(st.graph, st.records, st.profile, lib(), *gw, cfg);
    const auto s = r.open_session(Channel::user);
    const auto turns = r.handle(s.id, "Review my plan " + std::to_string(i));
    int critiques_seen = 0, max_round = 0;
    for (const auto& t : turns) {
      critiques_seen += t.kind == "critique";
      max_round = std::max(max_round, t.round);
    }
    if (max_round > max_rounds || critiques_seen != max_rounds) ++violations;
  }
  o.expect(violations == 0, std::to_string(violations) + " critic loops broke the round bound");

  // Third-party prompts never carry the Empathy rubric.
  const std::string empathy(eval::metric_definition(eval::Metric::empathy));
  auto audit = std::make_shared<llm::MemoryAuditSink>();
  std::size_t third_prompts = 0, leaks = 0;
  {
    llm::Gateway gw(gw_config);
    gw.set_audit_sink(audit);
    Router r(st.graph, st.records, st.profile, lib(), gw);
    const auto s = r.open_session(Channel::external_agent);
    for (const auto& m : messages) r.handle(s.id, m);
    const auto u = r.open_session(Channel::user);
    r.handle(u.id, "What does your user do at work?");
  }
  for (const auto& e : audit->entries()) {
    ++third_prompts;
    if (e["messages"].dump().find(nlohmann::json(empathy).dump().substr(1, 60)) != std::string::npos) ++leaks;
  }
  o.expect(leaks == 0, std::to_string(leaks) + " third-party prompts carry the Empathy rubric");
  // Sanity: a first-person session does use it.
  auto self_audit = std::make_shared<llm::MemoryAuditSink>();
  {
    llm::Gateway gw(gw_config);
    gw.set_audit_sink(self_audit);
    Router r(st.graph, st.records, st.profile, lib(), gw);
    const auto s = r.open_session(Channel::user);
    r.handle(s.id, "When is my half marathon?");
  }
  bool self_has = false;
  for (const auto& e : self_audit->entries()) {
    for (const auto& m : e["messages"]) self_has = self_has || m["content"].get<std::string>().find(empathy) != std::string::npos;
  }
  o.expect(self_has, "self session never carried the Empathy rubric (check is vacuous)");
  o.detail = "replay identical over " + std::to_string(recorded.size()) + " messages; 50 never-sufficient loops bounded; " +
             std::to_string(third_prompts) + " third-party prompts without the Empathy rubric";
  return o;
}

// ---- 9 ----------------------------------------------------------------------

class CountingBackend final : public llm::Backend {
 public:
  llm::BackendReply complete(const llm::ChatRequest& r) override {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    const auto key = user_text(r);
    int attempt;
    {
      std::lock_guard lock(mu);
      attempt = ++attempts[key];
    }
    std::this_thread::sleep_for(std::chrono::microseconds(500 + (std::hash<std::string>{}(key) % 1500)));
    --in_flight;
    if (key.find("always-fail") != std::string::npos) throw llm::TransientError(GatewayErrorKind::transport, "down");
    if (key.find("flaky") != std::string::npos && attempt == 1) throw llm::TransientError(GatewayErrorKind::timeout, "slow");
    return {"ok " + key, {}, {}};
  }
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::mutex mu;
  std::map<std::string, int> attempts;
};

Outcome gateway_budget() {
  Outcome o;
  const std::map<std::string, int> caps{{"synth", 3}, {"judge", 7}};
  llm::Gateway gw;
  std::map<std::string, std::shared_ptr<CountingBackend>> backends;
  for (const auto& [role, cap] : caps) {
    backends[role] = std::make_shared<CountingBackend>();
    gw.add_role(role, test::fast_role(cap), backends[role]);
  }
  auto audit = std::make_shared<llm::MemoryAuditSink>();
  gw.set_audit_sink(audit);

  std::vector<std::thread> threads;
  std::atomic<int> failures{0};
  for (int i = 0; i < 100; ++i) {
    threads.emplace_back([&, i] {
      const std::string role = i % 3 ? "judge" : "synth";
      std::string content = "req-" + std::to_string(i);
      if (i % 10 == 3) content += "-flaky";
      if (i % 25 == 7) content += "-always-fail";
      try {
        gw.complete(llm::make_request(role, "t", "sys", content));
      } catch (const GatewayError&) {
        ++failures;
      }
    });
  }
  for (auto& t : threads) t.join();

  std::string peaks;
  for (const auto& [role, cap] : caps) {
    const int peak = backends[role]->peak.load();
    o.expect(peak <= cap, role + " peaked at " + std::to_string(peak) + " in flight (cap " + std::to_string(cap) + ")");
    peaks += role + " " + std::to_string(peak) + "/" + std::to_string(cap) + " ";
  }
  const auto entries = audit->entries();
  std::map<std::string, int> per_request;
  for (const auto& e : entries) ++per_request[e["messages"].dump()];
  o.expect(entries.size() == 100, std::to_string(entries.size()) + " audit records for 100 calls");
  o.expect(per_request.size() == 100, "audit records do not map one-to-one onto calls");
  for (const auto& [_, n] : per_request) o.expect(n == 1, "a call left more than one audit record");
  o.expect(failures.load() == 4, std::to_string(failures.load()) + " calls failed, expected 4");
  o.detail = "100 concurrent calls, peak in-flight " + peaks + "; " + std::to_string(entries.size()) +
             " audit records (" + std::to_string(failures.load()) + " failed calls included)";
  return o;
}

}  // namespace

int main() {
  std::unique_ptr<DemoRun> demo;
  std::string demo_error;
  try {
    demo = run_demo();
  } catch (const std::exception& e) {
    demo_error = e.what();
  }

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    bool needs_demo;
  };
  const std::vector<Criterion> criteria{
      {"offline-e2e-determinism", [&] { return offline_determinism(*demo); }, true},
      {"filter-soundness", filter_soundness, false},
      {"dpo-ratio", dpo_ratio, false},
      {"cot-contracts", cot_contracts, false},
      {"rubric-domain-closure", rubric_closure, false},
      {"eval-isolation", [&] { return eval_isolation(*demo); }, true},
      {"report-fidelity", report_fidelity, false},
      {"router-properties", [&] { return router_properties(*demo); }, true},
      {"gateway-budget", gateway_budget, false},
  };

  int failed = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    Outcome o;
    if (c.needs_demo && !demo) {
      o.pass = false;
      o.failures.push_back("demo pipeline failed: " + demo_error);
    } else {
      try {
        o = c.run();
      } catch (const std::exception& e) {
        o.pass = false;
        o.failures.push_back(std::string("exception: ") + e.what());
      }
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << index << " " << c.name << ": " << o.detail << "\n";
    for (const auto& f : o.failures) std::cout << "        " << f << "\n";
    failed += !o.pass;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
