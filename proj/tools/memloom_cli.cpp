// memloom command line: one subcommand per pipeline stage, plus `serve`.
// Exit codes: 0 ok, 1 domain error, 2 configuration error.

#include "memloom/error.hpp"
#include "memloom/pipeline.hpp"
#include "memloom/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {

memloom::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void print_summary(const memloom::Json& summary, bool as_json) {
  if (as_json) {
    std::cout << summary.dump() << "\n";
    return;
  }
  if (summary.contains("table") && summary["table"].is_string()) {
    std::cout << summary["table"].get<std::string>();
    return;
  }
  std::cout << summary.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memloom: local-first personal memory engine"};
  app.require_subcommand(1);
  std::string config_path = "memloom.json";
  std::optional<std::uint64_t> seed;
  bool as_json = false;
  app.add_option("-c,--config", config_path, "Path to memloom.json");
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_flag("--json", as_json, "Print machine-readable summaries");

  struct StageCmd {
    CLI::App* cmd;
    bool force = false;
    std::vector<std::string> inputs;
  };
  std::map<std::string, StageCmd> stage_cmds;
  const std::map<std::string, std::string> help{
      {"ingest", "Add notes and todos to the store (a corpus directory or .jsonl files)"},
      {"index", "Extract the memory graph and build the profile"},
      {"synth", "Generate training pairs"},
      {"filter", "Run the five-level quality filter"},
      {"export", "Write SFT/DPO datasets and the manifest"},
      {"train", "Run the configured training command and register the model"},
      {"eval", "Build the held-out eval set and judge the model"},
      {"report", "Aggregate eval reports into a table"}};
  for (const auto& stage : memloom::Pipeline::stages()) {
    auto& sc = stage_cmds[stage];
    sc.cmd = app.add_subcommand(stage, help.at(stage));
    sc.cmd->add_flag("-f,--force", sc.force, "Rerun even if inputs are unchanged");
    if (stage == "ingest") sc.cmd->add_option("paths", sc.inputs, "Corpus directory or .jsonl files");
    if (stage == "report") sc.cmd->add_option("-i,--input", sc.inputs, "Additional report.json files");
  }
  auto* serve = app.add_subcommand("serve", "Start the HTTP API");
  std::optional<std::string> host;
  std::optional<int> port;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = memloom::PipelineConfig::load(config_path);
    if (seed) config.seed = *seed;
    memloom::Pipeline pipeline(config);

    if (serve->parsed()) {
      memloom::Server server(pipeline);
      const int bound = server.bind(host.value_or(config.server_host), port.value_or(config.server_port));
      std::cerr << "memloom listening on " << host.value_or(config.server_host) << ":" << bound << "\n";
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      g_server = nullptr;
      return 0;
    }

    for (auto& [stage, sc] : stage_cmds) {
      if (!sc.cmd->parsed()) continue;
      memloom::StageOptions o;
      o.force = sc.force;
      for (const auto& p : sc.inputs) o.inputs.emplace_back(p);
      print_summary(pipeline.run(stage, o), as_json);
    }
    return 0;
  } catch (const memloom::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const memloom::Error& e) {
    std::cerr << e.code() << ": " << e.what() << "\n";
    if (!e.detail().is_null()) std::cerr << e.detail().dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
