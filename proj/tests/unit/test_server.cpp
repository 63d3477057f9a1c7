#include "memloom/error.hpp"
#include "memloom/server.hpp"
#include "support.hpp"

#include <httplib.h>

#include <catch_amalgamated.hpp>

#include <thread>

using namespace memloom;
using memloom::test::TempDir;

namespace {

struct Running {
  TempDir dir;
  std::unique_ptr<Pipeline> pipeline;
  std::unique_ptr<Server> server;
  std::thread thread;
  int port = 0;

  explicit Running(bool prepare = false) {
    test::copy_demo(dir.path());
    pipeline = std::make_unique<Pipeline>(PipelineConfig::load(dir / "memloom.json"));
    if (prepare) {
      pipeline->run("ingest");
      pipeline->run("index");
    }
    server = std::make_unique<Server>(*pipeline);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->listen(); });
  }
  ~Running() {
    server->stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }

  Json wait_job(const std::string& id) const {
    auto c = client();
    for (int i = 0; i < 600; ++i) {
      auto r = c.Get("/jobs/" + id);
      REQUIRE(r);
      const auto j = Json::parse(r->body);
      if (j["status"] == "succeeded" || j["status"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("job did not finish");
    return {};
  }
};

}  // namespace

TEST_CASE("error codes map to HTTP statuses", "[server]") {
  CHECK(http_status_for("missing_dependency") == 409);
  CHECK(http_status_for("conflict") == 409);
  CHECK(http_status_for("not_found") == 404);
  CHECK(http_status_for("schema_error") == 400);
  CHECK(http_status_for("gateway_error") == 503);
  CHECK(http_status_for("something_else") == 500);
}

TEST_CASE("starting synth before index is a conflict", "[server]") {
  Running s;
  auto c = s.client();
  auto r = c.Post("/pipeline/synth", "{}", "application/json");
  REQUIRE(r);
  CHECK(r->status == 409);
  const auto body = Json::parse(r->body);
  CHECK(body["code"] == "missing_dependency");
  CHECK(body["detail"]["artifact"] == "memory_graph.json");
  CHECK(c.Post("/pipeline/nonsense", "{}", "application/json")->status == 404);
}

TEST_CASE("records can be added and listed", "[server]") {
  Running s;
  auto c = s.client();
  auto r = c.Post("/records", R"({"title":"Hello","content":"World","created_at":"2025-03-01T00:00:00Z"})",
                  "application/json");
  REQUIRE(r);
  CHECK(r->status == 201);
  CHECK(Json::parse(r->body)["created"] == true);
  CHECK(c.Post("/records", R"({"text":"call mum"})", "application/json")->status == 201);
  CHECK(c.Post("/records", R"({"title":"x"})", "application/json")->status == 400);

  auto todos = c.Get("/records?kind=todo");
  REQUIRE(todos);
  CHECK(Json::parse(todos->body)["records"].size() == 1);
  auto found = c.Get("/records?q=World");
  CHECK(Json::parse(found->body)["records"].size() == 1);
}

TEST_CASE("pipeline jobs run in the background", "[server]") {
  Running s;
  auto c = s.client();
  auto r = c.Post("/pipeline/ingest", "{}", "application/json");
  REQUIRE(r);
  CHECK(r->status == 202);
  const auto job = s.wait_job(Json::parse(r->body)["job_id"]);
  CHECK(job["status"] == "succeeded");
  CHECK(job["summary"]["notes"] == 20);
  CHECK(c.Get("/jobs/job-999")->status == 404);
}

TEST_CASE("sessions stream turns and log the channel", "[server]") {
  Running s(true);
  auto c = s.client();

  httplib::Headers h{{"X-Memloom-Channel", "external_agent"}};
  auto open = c.Post("/sessions", h, "{}", "application/json");
  REQUIRE(open);
  CHECK(open->status == 201);
  const auto sid = Json::parse(open->body)["id"].get<std::string>();

  const auto started = std::chrono::steady_clock::now();
  auto msg = c.Post("/sessions/" + sid + "/messages", R"({"content":"What is the user working on?"})",
                    "application/json");
  REQUIRE(msg);
  CHECK(msg->status == 200);
  CHECK(std::chrono::steady_clock::now() - started < std::chrono::seconds(5));
  std::vector<Json> events;
  for (const auto& line : split_lines(msg->body)) {
    if (!trim(line).empty()) events.push_back(Json::parse(line));
  }
  REQUIRE_FALSE(events.empty());
  CHECK(events.back()["event"] == "done");
  bool third_party = false;
  for (const auto& e : events) {
    if (e["event"] == "turn" && e["turn"].contains("route") && e["turn"]["route"].is_object()) {
      third_party = third_party || e["turn"]["route"]["perspective"] == "third_party";
    }
  }
  CHECK(third_party);

  const auto log = read_jsonl(s.pipeline->artifact("sessions/" + sid + ".jsonl"));
  REQUIRE(log.size() >= 3);
  CHECK(log[0]["channel"] == "external_agent");

  auto plain = c.Post("/sessions/" + sid + "/messages?stream=false", R"({"content":"Hello again"})",
                      "application/json");
  REQUIRE(plain);
  CHECK(Json::parse(plain->body)["turns"].size() >= 2);

  auto got = c.Get("/sessions/" + sid);
  CHECK(Json::parse(got->body)["turns"].size() >= 4);
  CHECK(c.Get("/sessions/nope")->status == 404);
  CHECK(c.Post("/sessions/" + sid + "/messages", R"({"content":""})", "application/json")->status == 400);
}

TEST_CASE("latest report is served byte for byte", "[server]") {
  Running s;
  auto c = s.client();
  CHECK(c.Get("/reports/latest")->status == 404);
  const auto fixture = (test::source_dir() / "tests" / "fixtures" / "table1_reports.json").string();
  auto r = c.Post("/pipeline/report", Json{{"inputs", {fixture}}}.dump(), "application/json");
  REQUIRE(r);
  REQUIRE(r->status == 202);
  CHECK(s.wait_job(Json::parse(r->body)["job_id"])["status"] == "succeeded");
  auto latest = c.Get("/reports/latest");
  REQUIRE(latest);
  CHECK(latest->body == read_file(s.pipeline->artifact("reports/report.json")));
  CHECK(c.Get("/datasets/..%2Fmemloom.json")->status != 200);
}
