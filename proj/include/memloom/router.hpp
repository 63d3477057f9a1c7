#pragma once

// Serving loop: classify each message, answer it from the personal model, or
// go through an expert model (enhance-and-forward, critic loop). Every
// session is logged to `sessions/<id>.jsonl`: a header line followed by one
// line per turn.

#include "memloom/gateway.hpp"
#include "memloom/graph.hpp"
#include "memloom/prompts.hpp"
#include "memloom/store.hpp"
#include "memloom/synthesizer.hpp"

#include <functional>
#include <memory>
#include <mutex>

namespace memloom::router {

enum class Mode { direct, enhance_forward, critic_loop };
enum class Channel { user, external_agent };

const char* to_string(Mode m);
const char* to_string(Channel c);
Mode mode_from_string(std::string_view s);
Channel channel_from_string(std::string_view s);

struct RouteDecision {
  Mode mode = Mode::direct;
  synth::Perspective perspective = synth::Perspective::self;
  std::string rationale;

  Json to_json() const;
  static RouteDecision from_json(const Json& j);
  bool operator==(const RouteDecision&) const = default;
};

struct Turn {
  std::string speaker;  // user | assistant | expert
  std::string kind;     // message | answer | enhanced_query | expert_response | critique | error
  std::string content;  // what is displayed
  std::optional<std::string> raw;  // model output before reasoning removal
  std::optional<RouteDecision> route;
  int round = 0;  // critic-loop round, 0 elsewhere
  bool warning = false;

  Json to_json() const;
  static Turn from_json(const Json& j);
};

struct Session {
  std::string id;
  Channel channel = Channel::user;
  std::string created_at;
  std::string profile_ref;
  std::vector<Turn> turns;

  Json header_json() const;
  Json to_json() const;
};

Session load_session(const std::filesystem::path& log_path);

struct RouterConfig {
  std::string l2_role = "l2";
  std::string expert_role = "expert";
  int max_rounds = 2;
  std::size_t top_k = 5;
  std::uint64_t seed = 42;
  std::string profile_ref = "l1_profile.json";
};

struct TurnSink {
  std::function<void(std::string_view)> chunk;  // streamed model text
  std::function<void(const Turn&)> turn;        // each completed turn
};

/// Marker line the critique must end with.
enum class Verdict { sufficient, insufficient };
/// Insufficient unless the last non-empty line is exactly `VERDICT: SUFFICIENT`.
Verdict parse_verdict(std::string_view critique);

class Router {
 public:
  Router(const index::MemoryGraph& graph, const store::RecordSet& records, const index::L1Profile& profile,
         const prompts::TemplateLibrary& templates, llm::Gateway& gateway, RouterConfig config = {},
         std::optional<std::filesystem::path> session_dir = std::nullopt);

  Session open_session(Channel channel, std::optional<std::string> id = std::nullopt);
  /// In-memory session, else the on-disk log. Throws NotFound.
  Session get_session(const std::string& id) const;

  /// Runs one user message through the loop and returns the turns it added
  /// (the user turn first). Gateway failures become an error turn.
  std::vector<Turn> handle(const std::string& session_id, const std::string& query, const TurnSink* sink = nullptr);

  synth::Perspective detect_perspective(const std::string& query, Channel channel);
  /// Perspective detection followed by classify().
  RouteDecision route(const std::string& query, Channel channel);
  /// Three-way classification; falls back to direct with rationale "fallback"
  /// on an unparseable reply. GatewayError propagates.
  RouteDecision classify(const std::string& query, synth::Perspective perspective);

  /// Top matching record ids: entity-name hits weigh 2, query-word hits 1.
  std::vector<std::string> retrieve(const std::string& query) const;
  std::string profile_block() const;

  std::vector<Turn> answer_direct(const std::string& query, const RouteDecision& d, const TurnSink* sink);
  std::vector<Turn> enhance_and_forward(const std::string& query, const RouteDecision& d, const TurnSink* sink);
  std::vector<Turn> critic_loop(const std::string& query, const RouteDecision& d, const TurnSink* sink);

  const RouterConfig& config() const noexcept { return config_; }

 private:
  struct Slot {
    std::mutex mu;
    Session session;
  };
  std::shared_ptr<Slot> slot(const std::string& id) const;
  void persist_header(const Session& s) const;
  void persist_turn(const Session& s, const Turn& t) const;
  prompts::Vars base_vars(const std::string& query, synth::Perspective p) const;
  std::string call(const std::string& role, std::string_view tmpl, const prompts::Vars& vars,
                   const TurnSink* sink = nullptr);

  const index::MemoryGraph& graph_;
  const store::RecordSet& records_;
  const index::L1Profile& profile_;
  const prompts::TemplateLibrary& templates_;
  llm::Gateway& gateway_;
  RouterConfig config_;
  std::optional<std::filesystem::path> session_dir_;

  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t counter_ = 0;
};

/// Re-feeds the user turns of `logged` into a fresh session of `router` and
/// returns the decisions it makes, in order.
std::vector<RouteDecision> replay_decisions(const Session& logged, Router& router);
/// Decisions recorded on the assistant turns of `s`, one per user message.
std::vector<RouteDecision> recorded_decisions(const Session& s);

}  // namespace memloom::router
