#pragma once

// HTTP API over a Pipeline. Routes:
//
//   POST /records                    ingest one note/todo (or {"records":[...]})
//   GET  /records?kind=&from=&to=&q= list records
//   POST /pipeline/{stage}           start a stage job -> 202 {"job_id"}
//   GET  /jobs/{id}                  job status and summary
//   POST /sessions                   open a chat session {"channel"}
//   POST /sessions/{id}/messages     {"content"}; NDJSON stream of chunk/turn/done
//                                    events, or one JSON body with ?stream=false
//   GET  /sessions/{id}              session header and turns
//   GET  /reports/latest             reports/report.json
//   GET  /datasets/{name}            exported dataset file
//
// Errors are {"code","message","detail"}. When the configured token env var
// is set, every request needs `Authorization: Bearer <token>`.

#include "memloom/pipeline.hpp"

#include <memory>

namespace memloom {

/// HTTP status for a domain error code.
int http_status_for(const std::string& error_code);

class Server {
 public:
  explicit Server(Pipeline& pipeline);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();
  /// Blocks until no stage job is running.
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace memloom
