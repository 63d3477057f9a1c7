#include "memloom/error.hpp"
#include "memloom/pipeline.hpp"
#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

using namespace memloom;
using memloom::test::TempDir;

namespace {

Pipeline demo_pipeline(const TempDir& dir, const std::function<void(Json&)>& tweak = {}) {
  test::copy_demo(dir.path());
  if (tweak) {
    auto j = read_json(dir / "memloom.json");
    tweak(j);
    write_file(dir / "memloom.json", j.dump(2));
  }
  return Pipeline(PipelineConfig::load(dir / "memloom.json"));
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(MEMLOOM_CLI) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return -1;
  char buf[512];
  std::string out;
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  const int status = ::pclose(p);
  if (output) *output = out;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing", "[pipeline]") {
  const std::filesystem::path base = "/tmp/cfg";
  const auto c = PipelineConfig::from_json(Json{{"workdir", "w"}, {"synth", {{"cot_style", "weak"}}}}, base);
  CHECK(c.workdir == base / "w");
  CHECK(c.cot_style == synth::CotStyle::weak);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json{{"wrokdir", "w"}}, base), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json{{"synth", {{"cot", "weak"}}}}, base), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json(Json{{"synth", {{"cot_style", "medium"}}}}, base), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/memloom.json"), ConfigError);
  // The snapshot carries no filesystem paths.
  CHECK(c.snapshot().dump().find("/tmp/cfg") == std::string::npos);
}

TEST_CASE("stages refuse to run before their inputs exist", "[pipeline]") {
  TempDir dir;
  auto p = demo_pipeline(dir);
  try {
    p.run("synth");
    FAIL("expected MissingDependency");
  } catch (const MissingDependency& e) {
    CHECK(std::string(e.what()) == "MissingDependency(\"memory_graph.json\")");
  }
  CHECK_THROWS_AS(p.run("bogus"), NotFound);
}

TEST_CASE("the demo pipeline runs end to end and skips unchanged stages", "[pipeline]") {
  TempDir dir;
  auto p = demo_pipeline(dir);
  const auto ingest = p.run("ingest");
  CHECK(ingest["notes"] == 20);
  CHECK(ingest["todos"] == 10);
  CHECK(p.run("ingest")["skipped"] == true);
  CHECK(p.run("ingest", StageOptions{true, {}})["created"] == 0);

  p.run("index");
  const auto synth = p.run("synth");
  CHECK(synth["total"].get<int>() > 0);
  CHECK(p.run("synth").value("skipped", false));
  const auto filter = p.run("filter");
  const auto report = read_json(p.artifact("filter/filter_report.json"));
  std::size_t rejected = 0;
  for (const auto& l : report["levels"]) rejected += l["rejected"].get<std::size_t>();
  CHECK(report["total_out"].get<std::size_t>() == report["total_in"].get<std::size_t>() - rejected);

  p.run("export");
  const auto manifest = read_json(p.artifact("datasets/manifest.json"));
  for (const auto& f : manifest["files"]) {
    CHECK(sha256_file(p.artifact("datasets/" + f["name"].get<std::string>())) == f["sha256"]);
  }
  CHECK(manifest["config"].dump().find(dir.path().string()) == std::string::npos);

  // A forced rerun reproduces the same bytes.
  const auto before = read_file(p.artifact("datasets/manifest.json"));
  p.run("export", StageOptions{true, {}});
  CHECK(read_file(p.artifact("datasets/manifest.json")) == before);
}

TEST_CASE("report renders the grid from report files", "[pipeline]") {
  TempDir dir;
  auto p = demo_pipeline(dir);
  const auto fixtures = test::source_dir() / "tests" / "fixtures";
  const auto summary = p.run("report", StageOptions{false, {fixtures / "table2_reports.json"}});
  const auto table = summary["table"].get<std::string>();
  CHECK(table.find("| Strong | Yes | 0.96 ") != std::string::npos);
  CHECK(table.find("| Weak   | No  | 0.86 ") != std::string::npos);
  CHECK(read_file(p.artifact("reports/table.txt")) == table);
}

TEST_CASE("train command substitution", "[pipeline]") {
  TrainPaths paths{{"/a/sft 1.jsonl", "/a/sft2.jsonl"}, "/a/dpo.jsonl", "/a/manifest.json", "/a/out"};
  CHECK(shell_quote("it's") == "'it'\\''s'");
  CHECK(substitute_train_command("train {sft} --dpo {dpo} -o {output}", paths) ==
        "train '/a/sft 1.jsonl' '/a/sft2.jsonl' --dpo '/a/dpo.jsonl' -o '/a/out'");
}

TEST_CASE("train jobs", "[pipeline]") {
  TempDir dir;
  TrainPaths paths{{dir / "sft.jsonl"}, dir / "dpo.jsonl", dir / "manifest.json", dir / "out"};
  const Json fallback{{"endpoint", "http://127.0.0.1:9/v1/chat/completions"}};

  SECTION("a trivially successful trainer registers the fallback endpoint") {
    const auto job = run_train_job("j1", "/bin/true", paths, dir / "j1.log", fallback, dir.path());
    CHECK(job.status == JobStatus::succeeded);
    CHECK(job.exit_code == 0);
    CHECK(job.endpoint["endpoint"] == "http://127.0.0.1:9/v1/chat/completions");
  }
  SECTION("a failing trainer keeps its log") {
    const auto job = run_train_job("j2", "echo boom; exit 3", paths, dir / "j2.log", fallback, dir.path());
    CHECK(job.status == JobStatus::failed);
    CHECK(job.exit_code == 3);
    CHECK(read_file(dir / "j2.log").find("boom") != std::string::npos);
  }
  SECTION("placeholders become absolute paths") {
    const auto job = run_train_job("j3", "echo SFT={sft} DPO={dpo}", paths, dir / "j3.log", fallback, dir.path());
    CHECK(job.status == JobStatus::succeeded);
    const auto log = read_file(dir / "j3.log");
    CHECK(log.find("SFT=" + (dir / "sft.jsonl").string()) != std::string::npos);
    CHECK(log.find("DPO=" + (dir / "dpo.jsonl").string()) != std::string::npos);
  }
  SECTION("no endpoint at all fails the job") {
    CHECK(run_train_job("j4", "/bin/true", paths, dir / "j4.log", Json(), dir.path()).status == JobStatus::failed);
  }
}

TEST_CASE("the CLI maps errors to exit codes", "[pipeline]") {
  TempDir dir;
  test::copy_demo(dir.path());
  const auto cfg = (dir / "memloom.json").string();
  std::string out;
  CHECK(run_cli("-c " + cfg + " synth", &out) == 1);
  CHECK(out.find("MissingDependency(\"memory_graph.json\")") != std::string::npos);
  CHECK(run_cli("-c " + (dir / "missing.json").string() + " index") == 2);
  CHECK(run_cli("-c " + cfg + " ingest") == 0);
  CHECK(run_cli("-c " + cfg + " --json index", &out) == 0);
  CHECK(Json::parse(out)["entities"].get<int>() > 0);
}
