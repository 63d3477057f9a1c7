#include "memloom/error.hpp"
#include "memloom/evaluator.hpp"
#include "support.hpp"

#include <catch_amalgamated.hpp>

using namespace memloom;
using namespace memloom::eval;
using memloom::test::entry;
using memloom::test::script;

namespace {

const auto& lib() { return prompts::TemplateLibrary::builtin(); }

struct World {
  store::RecordSet records;
  index::MemoryGraph graph;
  index::L1Profile profile;

  World() {
    records = store::RecordSet({test::make_note("Lunch", "Met Alice at Acme about Orion.", 1),
                                test::make_note("Call", "Bob and Alice discussed Orion.", 2)});
    graph = index::MemoryGraph({test::scanned_entity("Alice", index::EntityType::person, records.all()),
                                test::scanned_entity("Acme", index::EntityType::organization, records.all()),
                                test::scanned_entity("Bob", index::EntityType::person, records.all()),
                                test::scanned_entity("Orion", index::EntityType::project, records.all())},
                               {}, {});
    profile.ranked_entities = index::rank_entities(graph);
  }
};

Json question_entries() {
  return Json::array({
      entry("memory_qa.question", "Entity: ([^\\n]+)[\\s\\S]*Perspective: (\\w+)",
            "Q|What did I note about $1 ($2)?\nQ|When did $1 come up ($2)?\nQ|Who else relates to $1 ($2)?"),
      entry("context_enhance.need", "Entity: ([^\\n]+)", "Q|Help me write an update about $1.\nQ|Plan next steps for $1."),
      entry("context_critic.need", "Entity: ([^\\n]+)", "Q|Give me advice on $1.\nQ|Review my approach to $1."),
  });
}

EvalItem item(EvalTask task, const std::string& id) {
  EvalItem it;
  it.id = id;
  it.task = task;
  it.query = "What about Alice?";
  it.source_query = it.query;
  it.context_refs = {"person:Alice"};
  if (task == EvalTask::context_critic) it.expert_response = "Generic advice.";
  return it;
}

}  // namespace

TEST_CASE("eval set has n items per task and avoids training queries", "[evaluator]") {
  World w;
  auto gw = test::scripted_gateway({{"synth", script(question_entries())},
                                    {"expert", script({entry("context_critic.expert", "Generic advice.")})}});
  synth::SynthContext ctx{w.graph, w.records, w.profile, lib(), *gw};

  const auto training_q = "What did I note about " + w.graph.find(w.profile.ranked_entities[0])->name + " (first)?";
  synth::TrainingPair tp;
  tp.query = training_q;
  tp.source_query = training_q;
  const auto training = training_query_index({tp});

  const auto items = synth_eval_set(ctx, training, EvalSetOptions{2, 3});
  REQUIRE(items.size() == 8);
  std::map<EvalTask, int> per_task;
  std::set<std::string> ids;
  for (const auto& it : items) {
    ++per_task[it.task];
    ids.insert(it.id);
    CHECK(training.count(normalize_query(it.query)) == 0);
    CHECK(training.count(normalize_query(it.source_query)) == 0);
    CHECK(EvalItem::from_json(it.to_json()).id == it.id);
  }
  for (auto t : {EvalTask::memory_self, EvalTask::memory_third_party, EvalTask::context_enhance,
                 EvalTask::context_critic}) {
    CHECK(per_task[t] == 2);
  }
  CHECK(ids.size() == 8);
  for (const auto& it : items) {
    if (it.task == EvalTask::context_critic) CHECK(it.expert_response == "Generic advice.");
  }
  CHECK(synth_eval_set(ctx, training, EvalSetOptions{0, 3}).empty());
}

TEST_CASE("exhausted isolation is reported", "[evaluator]") {
  World w;
  auto gw = test::scripted_gateway({{"synth", script({entry("memory_qa.question", "Q|Always the same."), entry("context_enhance.need", "Q|Always the same.")})}});
  synth::SynthContext ctx{w.graph, w.records, w.profile, lib(), *gw};
  synth::TrainingPair tp;
  tp.query = tp.source_query = "always the same";
  // Every generated question collides with training.
  CHECK_THROWS_AS(synth_eval_set(ctx, training_query_index({tp}), EvalSetOptions{1, 2}), IsolationExhausted);
}

TEST_CASE("memory judging averages the four sub-metrics", "[evaluator]") {
  World w;
  auto gw = test::scripted_gateway(
      {{"judge", script({entry("judge.memory", "ALL", "Correctness=1\nHelpfulness=1\nCompleteness=1\nEmpathy=1", false),
                         entry("judge.memory", "HALF",
                               "Correctness=1\nHelpfulness=0.5\nCompleteness=0.5\nEmpathy=0\nRATIONALE=meh", false)})}});
  JudgeContext jc{w.records, lib(), *gw};
  const auto a = score_memory("ALL", item(EvalTask::memory_self, "a"), jc);
  const auto b = score_memory("HALF", item(EvalTask::memory_self, "b"), jc);
  std::vector<TaskScore> scores;
  for (const auto& s : a) scores.push_back({EvalTask::memory_self, s});
  CHECK(aggregate(scores, "strong", false).task_means.at(EvalTask::memory_self) == 1.0);
  scores.clear();
  for (const auto& s : b) scores.push_back({EvalTask::memory_self, s});
  CHECK(aggregate(scores, "strong", false).task_means.at(EvalTask::memory_self) == 0.5);
}

TEST_CASE("third-party items are judged on role correctness", "[evaluator]") {
  World w;
  auto gw = test::scripted_gateway(
      {{"judge", script({entry("judge.memory", "Correctness=1\nHelpfulness=1\nCompleteness=1\nRole-correctness=0.5")})}});
  JudgeContext jc{w.records, lib(), *gw};
  const auto it = item(EvalTask::memory_third_party, "t");
  const auto prompt = memory_judge_prompt("resp", it, jc);
  CHECK(prompt.system.find("Role-correctness") != std::string::npos);
  CHECK(prompt.system.find(std::string(metric_definition(Metric::empathy))) == std::string::npos);
  CHECK(prompt.system.find(std::string(kLengthBiasClause)) != std::string::npos);
  const auto s = score_memory("resp", it, jc);
  CHECK(s.back().metric == Metric::role_correctness);
}

TEST_CASE("an off-grid judge level is a parse error after retries", "[evaluator]") {
  World w;
  auto audit = std::make_shared<llm::MemoryAuditSink>();
  auto gw = test::scripted_gateway({{"judge", script({entry("judge.enhance", "ContextEnhance=0.7")})}}, audit);
  JudgeContext jc{w.records, lib(), *gw};
  CHECK_THROWS_AS(score_enhance("x", item(EvalTask::context_enhance, "e"), jc), JudgeParseError);
  CHECK(audit->entries().size() == 2);
}

TEST_CASE("critic judging uses quarter levels", "[evaluator]") {
  World w;
  auto gw = test::scripted_gateway({{"judge", script({entry("judge.critic", "ContextCritic=0.75\nRATIONALE=ok")})}});
  JudgeContext jc{w.records, lib(), *gw};
  const auto s = score_critic("critique", item(EvalTask::context_critic, "c"), jc);
  CHECK(s.level.value() == 0.75);
  CHECK(critic_judge_prompt("critique", item(EvalTask::context_critic, "c"), jc).user.find("Generic advice.") !=
        std::string::npos);
  CHECK_THROWS_AS(score_critic("x", item(EvalTask::context_enhance, "e"), jc), PreconditionError);
}

TEST_CASE("aggregation over alternating levels", "[evaluator]") {
  std::vector<TaskScore> scores;
  for (int i = 0; i < 60; ++i) {
    JudgeScore s{"i" + std::to_string(i), Metric::context_enhance, Level::from_quarters(i % 2 ? 4 : 0), ""};
    scores.push_back({EvalTask::context_enhance, s});
  }
  const auto r = aggregate(scores, "strong", false);
  CHECK(r.task_means.at(EvalTask::context_enhance) == 0.5);
  CHECK(r.item_counts.at(EvalTask::context_enhance) == 60);

  scores.push_back({EvalTask::context_enhance, JudgeScore{"bad", Metric::context_enhance, Level::from_quarters(1), ""}});
  CHECK_THROWS_AS(aggregate(scores, "strong", false), DomainError);
}

TEST_CASE("run_eval strips reasoning before judging", "[evaluator]") {
  World w;
  auto audit = std::make_shared<llm::MemoryAuditSink>();
  auto gw = test::scripted_gateway(
      {{"tuned", script({entry("sft.context_enhance", "<reasoning>private thoughts</reasoning>Enhanced about Alice.")})},
       {"judge", script({entry("judge.enhance", "ContextEnhance=1")})}},
      audit);
  JudgeContext jc{w.records, lib(), *gw};
  const auto run = run_eval({item(EvalTask::context_enhance, "e")}, jc, EvalRunOptions{});
  REQUIRE(run.responses.size() == 1);
  CHECK(run.responses[0].judged == "Enhanced about Alice.");
  CHECK(run.report.task_means.at(EvalTask::context_enhance) == 1.0);
  for (const auto& e : audit->entries()) {
    if (e["role"] == "judge") CHECK(e["messages"].dump().find("private thoughts") == std::string::npos);
  }
}

TEST_CASE("report table layout", "[evaluator]") {
  MetricReport a;
  a.cot_style = "weak";
  a.task_means = {{EvalTask::memory_self, 0.5}, {EvalTask::memory_third_party, 0.25},
                  {EvalTask::context_enhance, 1.0}, {EvalTask::context_critic, 0.125}};
  MetricReport b = a;
  b.cot_style = "strong";
  const auto t = render_table({a, b});
  CHECK(t.find("DPO") == std::string::npos);
  CHECK(t.find("Strong") < t.find("Weak"));
  CHECK(t.find("| 0.50 ") != std::string::npos);
  b.dpo = true;
  CHECK(render_table({a, b}).find("| DPO |") != std::string::npos);
  CHECK(MetricReport::from_json(a.to_json()).task_means == a.task_means);
}
