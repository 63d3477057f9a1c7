#include "memloom/server.hpp"

#include "memloom/error.hpp"
#include "memloom/router.hpp"

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <thread>

namespace memloom {

namespace fs = std::filesystem;

int http_status_for(const std::string& code) {
  if (code == "schema_error" || code == "parse_error" || code == "precondition_error" || code == "config_error") {
    return 400;
  }
  if (code == "not_found") return 404;
  if (code == "missing_dependency" || code == "conflict") return 409;
  if (code == "gateway_error") return 503;
  return 500;
}

namespace {

Json error_body(const std::string& code, const std::string& message, const Json& detail = nullptr) {
  return Json{{"code", code}, {"message", message}, {"detail", detail}};
}

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw SchemaError(std::string("request body is not JSON: ") + e.what());
  }
}

bool safe_name(const std::string& name) {
  if (name.empty() || name[0] == '.') return false;
  return std::all_of(name.begin(), name.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; });
}

Json record_json(const store::Record& r) {
  auto j = store::to_json(r);
  j["kind"] = store::to_string(store::record_kind(r));
  return j;
}

struct Job {
  std::string id;
  std::string stage;
  std::string status = "pending";
  std::string created_at;
  std::string finished_at;
  Json summary;
  Json error;

  Json to_json() const {
    Json j{{"id", id}, {"stage", stage}, {"status", status}, {"created_at", created_at}};
    if (!finished_at.empty()) j["finished_at"] = finished_at;
    if (!summary.is_null()) j["summary"] = summary;
    if (!error.is_null()) j["error"] = error;
    return j;
  }
};

// Everything a chat session reads; rebuilt when the store or the model changes.
struct ServingState {
  store::RecordSet records;
  index::MemoryGraph graph;
  index::L1Profile profile;
  std::shared_ptr<llm::Gateway> gateway;
  std::unique_ptr<router::Router> router;
};

std::string now_string() {
  return format_rfc3339(std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()));
}

}  // namespace

struct Server::Impl {
  explicit Impl(Pipeline& p) : pipeline(p) { rebuild_state(); }

  Pipeline& pipeline;
  httplib::Server http;

  std::mutex state_mu;
  std::shared_ptr<ServingState> state;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::map<std::string, Job> jobs;
  std::vector<std::thread> workers;
  int running = 0;
  std::uint64_t job_counter = 0;

  std::shared_ptr<ServingState> current() {
    std::lock_guard lock(state_mu);
    return state;
  }

  void rebuild_state() {
    auto s = std::make_shared<ServingState>();
    s->records = store::RecordSet(pipeline.store().list());
    if (const auto g = pipeline.artifact("memory_graph.json"); fs::exists(g)) {
      s->graph = index::MemoryGraph::from_json(read_json(g));
    }
    if (const auto p = pipeline.artifact("l1_profile.json"); fs::exists(p)) {
      s->profile = index::L1Profile::from_json(read_json(p));
    }
    s->gateway = pipeline.gateway();
    router::RouterConfig rc;
    rc.max_rounds = pipeline.config().router_max_rounds;
    rc.seed = pipeline.config().seed;
    if (s->gateway->has_role("tuned")) rc.l2_role = "tuned";
    s->router = std::make_unique<router::Router>(s->graph, s->records, s->profile, pipeline.templates(), *s->gateway,
                                                 rc, pipeline.artifact("sessions"));
    std::lock_guard lock(state_mu);
    state = std::move(s);
  }

  // Wraps a handler with the error-body mapping.
  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_json(res, http_status_for(e.code()), error_body(e.code(), e.what(), e.detail()));
      } catch (const Json::exception& e) {
        send_json(res, 400, error_body("schema_error", e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body("internal", e.what()));
      }
    };
  }

  void start_job(const std::string& stage, StageOptions options, httplib::Response& res) {
    pipeline.check_dependencies(stage);
    std::string id;
    {
      std::lock_guard lock(jobs_mu);
      for (const auto& [_, j] : jobs) {
        if (j.stage == stage && (j.status == "pending" || j.status == "running")) {
          throw Conflict("stage " + stage + " is already running", {{"job_id", j.id}});
        }
      }
      id = "job-" + std::to_string(++job_counter);
      Job job;
      job.id = id;
      job.stage = stage;
      job.created_at = now_string();
      jobs[id] = job;
      ++running;
      workers.emplace_back([this, id, stage, options = std::move(options)] { run_job(id, stage, options); });
    }
    res.status = 202;
    res.set_content(Json{{"job_id", id}}.dump(), "application/json");
  }

  void run_job(const std::string& id, const std::string& stage, const StageOptions& options) {
    {
      std::lock_guard lock(jobs_mu);
      jobs[id].status = "running";
    }
    Json summary;
    Json error;
    try {
      summary = pipeline.run(stage, options);  // serialized by the pipeline's own lock
      if (stage == "ingest" || stage == "index" || stage == "train") rebuild_state();
    } catch (const Error& e) {
      error = error_body(e.code(), e.what(), e.detail());
    } catch (const std::exception& e) {
      error = error_body("internal", e.what());
    }
    std::lock_guard lock(jobs_mu);
    auto& job = jobs[id];
    job.finished_at = now_string();
    job.summary = summary;
    job.error = error;
    job.status = error.is_null() ? "succeeded" : "failed";
    --running;
    jobs_cv.notify_all();
  }

  void routes() {
    const char* token_env = pipeline.config().server_token_env.c_str();
    const char* token = token_env && *token_env ? std::getenv(token_env) : nullptr;
    if (token && *token) {
      std::string expected = std::string("Bearer ") + token;
      http.set_pre_routing_handler([expected](const httplib::Request& req, httplib::Response& res) {
        if (starts_with(req.path, "/app")) return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") == expected) return httplib::Server::HandlerResponse::Unhandled;
        send_json(res, 401, error_body("auth", "missing or invalid bearer token"));
        return httplib::Server::HandlerResponse::Handled;
      });
    }
    if (pipeline.config().app_dir) http.set_mount_point("/app", pipeline.config().app_dir->string());

    http.Post("/records", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      std::vector<Json> payloads;
      if (body.contains("records")) {
        for (const auto& r : body.at("records")) payloads.push_back(r);
      } else {
        payloads.push_back(body);
      }
      Json out = Json::array();
      for (const auto& p : payloads) {
        const auto r = pipeline.store().ingest(p);
        out.push_back({{"id", r.id}, {"kind", store::to_string(r.kind)}, {"created", r.created}});
      }
      rebuild_state();
      send_json(res, 201, body.contains("records") ? Json{{"records", out}} : out[0]);
    }));

    http.Get("/records", guarded([this](const httplib::Request& req, httplib::Response& res) {
      store::RecordFilter f;
      if (req.has_param("kind")) f.kind = store::record_kind_from_string(req.get_param_value("kind"));
      if (req.has_param("from")) f.from = parse_rfc3339(req.get_param_value("from"));
      if (req.has_param("to")) f.to = parse_rfc3339(req.get_param_value("to"));
      if (req.has_param("q")) f.substring = req.get_param_value("q");
      Json out = Json::array();
      for (const auto& r : pipeline.store().list(f)) out.push_back(record_json(r));
      send_json(res, 200, Json{{"records", out}});
    }));

    http.Post(R"(/pipeline/([a-z]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto stage = req.matches[1].str();
      const auto body = parse_body(req);
      StageOptions o;
      o.force = body.value("force", false);
      if (body.contains("inputs")) {
        for (const auto& p : body.at("inputs")) o.inputs.emplace_back(p.get<std::string>());
      }
      start_job(stage, std::move(o), res);
    }));

    http.Get(R"(/jobs/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(jobs_mu);
      auto it = jobs.find(req.matches[1].str());
      if (it == jobs.end()) throw NotFound("no job " + req.matches[1].str());
      send_json(res, 200, it->second.to_json());
    }));

    http.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = parse_body(req);
      std::string channel = "user";
      if (req.has_header("X-Memloom-Channel")) channel = req.get_header_value("X-Memloom-Channel");
      if (req.has_param("channel")) channel = req.get_param_value("channel");
      if (body.contains("channel")) channel = body.at("channel").get<std::string>();
      const auto s = current()->router->open_session(router::channel_from_string(channel));
      send_json(res, 201, s.header_json());
    }));

    http.Get(R"(/sessions/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, current()->router->get_session(req.matches[1].str()).to_json());
    }));

    http.Post(R"(/sessions/([A-Za-z0-9_-]+)/messages)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto id = req.matches[1].str();
                const auto body = parse_body(req);
                if (!body.contains("content") || !body["content"].is_string() ||
                    trim(body["content"].get<std::string>()).empty()) {
                  throw SchemaError("message needs a non-empty \"content\" string");
                }
                const auto content = body["content"].get<std::string>();
                auto st = current();
                st->router->get_session(id);  // 404 before any streaming starts

                if (req.get_param_value("stream") == "false") {
                  Json turns = Json::array();
                  for (const auto& t : st->router->handle(id, content)) turns.push_back(t.to_json());
                  send_json(res, 200, Json{{"session_id", id}, {"turns", turns}});
                  return;
                }
                res.set_chunked_content_provider(
                    "application/x-ndjson", [st, id, content](std::size_t, httplib::DataSink& sink) {
                      auto write = [&sink](const Json& event) {
                        const auto line = event.dump() + "\n";
                        sink.write(line.data(), line.size());
                      };
                      router::TurnSink ts;
                      ts.chunk = [&](std::string_view text) { write({{"event", "chunk"}, {"content", text}}); };
                      ts.turn = [&](const router::Turn& t) { write({{"event", "turn"}, {"turn", t.to_json()}}); };
                      try {
                        st->router->handle(id, content, &ts);
                        write({{"event", "done"}});
                      } catch (const Error& e) {
                        write({{"event", "error"}, {"error", error_body(e.code(), e.what(), e.detail())}});
                      } catch (const std::exception& e) {
                        write({{"event", "error"}, {"error", error_body("internal", e.what())}});
                      }
                      sink.done();
                      return true;
                    });
              }));

    http.Get("/reports/latest", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto path = pipeline.artifact("reports/report.json");
      if (!fs::exists(path)) throw NotFound("no report has been produced yet");
      res.set_content(read_file(path), "application/json");
    }));

    http.Get(R"(/datasets/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto name = req.matches[1].str();
      if (!safe_name(name)) throw SchemaError("bad dataset name \"" + name + "\"");
      const auto path = pipeline.artifact("datasets/" + name);
      if (!fs::exists(path)) throw NotFound("no dataset " + name);
      res.set_content(read_file(path), name.ends_with(".json") ? "application/json" : "application/x-ndjson");
    }));
  }
};

Server::Server(Pipeline& pipeline) : impl_(std::make_unique<Impl>(pipeline)) { impl_->routes(); }

Server::~Server() {
  stop();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->jobs_mu);
    workers.swap(impl_->workers);
  }
  for (auto& t : workers) {
    if (t.joinable()) t.join();
  }
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() { impl_->http.stop(); }

void Server::wait_for_jobs() {
  std::unique_lock lock(impl_->jobs_mu);
  impl_->jobs_cv.wait(lock, [this] { return impl_->running == 0; });
}

}  // namespace memloom
