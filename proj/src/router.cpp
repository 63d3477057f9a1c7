#include "memloom/router.hpp"

#include "memloom/error.hpp"
#include "memloom/reasoning.hpp"
#include "memloom/rubric.hpp"

#include <algorithm>
#include <set>

namespace memloom::router {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::direct: return "direct";
    case Mode::enhance_forward: return "enhance_forward";
    case Mode::critic_loop: return "critic_loop";
  }
  return "direct";
}

const char* to_string(Channel c) { return c == Channel::user ? "user" : "external_agent"; }

Mode mode_from_string(std::string_view s) {
  for (auto m : {Mode::direct, Mode::enhance_forward, Mode::critic_loop}) {
    if (s == to_string(m)) return m;
  }
  throw SchemaError("unknown route mode \"" + std::string(s) + "\"");
}

Channel channel_from_string(std::string_view s) {
  if (s == "user") return Channel::user;
  if (s == "external_agent") return Channel::external_agent;
  throw SchemaError("unknown channel \"" + std::string(s) + "\"");
}

Json RouteDecision::to_json() const {
  return Json{{"mode", to_string(mode)}, {"perspective", synth::to_string(perspective)}, {"rationale", rationale}};
}

RouteDecision RouteDecision::from_json(const Json& j) {
  try {
    return {mode_from_string(j.at("mode").get<std::string>()),
            synth::perspective_from_string(j.at("perspective").get<std::string>()),
            j.at("rationale").get<std::string>()};
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed route decision: ") + e.what());
  }
}

Json Turn::to_json() const {
  Json j{{"speaker", speaker}, {"kind", kind}, {"content", content}};
  if (raw) j["raw"] = *raw;
  if (route) j["route"] = route->to_json();
  if (round) j["round"] = round;
  if (warning) j["warning"] = true;
  return j;
}

Turn Turn::from_json(const Json& j) {
  try {
    Turn t;
    t.speaker = j.at("speaker").get<std::string>();
    t.kind = j.at("kind").get<std::string>();
    t.content = j.at("content").get<std::string>();
    if (j.contains("raw")) t.raw = j["raw"].get<std::string>();
    if (j.contains("route")) t.route = RouteDecision::from_json(j["route"]);
    t.round = j.value("round", 0);
    t.warning = j.value("warning", false);
    return t;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed turn: ") + e.what());
  }
}

Json Session::header_json() const {
  return Json{{"type", "session"}, {"id", id}, {"channel", to_string(channel)}, {"created_at", created_at},
              {"profile_ref", profile_ref}};
}

Json Session::to_json() const {
  auto j = header_json();
  j.erase("type");
  j["turns"] = Json::array();
  for (const auto& t : turns) j["turns"].push_back(t.to_json());
  return j;
}

Session load_session(const std::filesystem::path& log_path) {
  const auto lines = read_jsonl(log_path);
  if (lines.empty() || lines[0].value("type", "") != "session") {
    throw SchemaError("session log lacks a header: " + log_path.string());
  }
  Session s;
  const auto& h = lines[0];
  s.id = h.value("id", "");
  s.channel = channel_from_string(h.value("channel", "user"));
  s.created_at = h.value("created_at", "");
  s.profile_ref = h.value("profile_ref", "");
  for (std::size_t i = 1; i < lines.size(); ++i) s.turns.push_back(Turn::from_json(lines[i]));
  return s;
}

Verdict parse_verdict(std::string_view critique) {
  const auto lines = split_lines(critique);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    const auto t = trim(*it);
    if (t.empty()) continue;
    return t == "VERDICT: SUFFICIENT" ? Verdict::sufficient : Verdict::insufficient;
  }
  return Verdict::insufficient;
}

Router::Router(const index::MemoryGraph& graph, const store::RecordSet& records, const index::L1Profile& profile,
               const prompts::TemplateLibrary& templates, llm::Gateway& gateway, RouterConfig config,
               std::optional<std::filesystem::path> session_dir)
    : graph_(graph),
      records_(records),
      profile_(profile),
      templates_(templates),
      gateway_(gateway),
      config_(std::move(config)),
      session_dir_(std::move(session_dir)) {
  if (config_.max_rounds < 1) throw ConfigError("router max_rounds must be at least 1");
}

Session Router::open_session(Channel channel, std::optional<std::string> id) {
  const auto now = std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
  auto state = std::make_shared<Slot>();
  {
    std::lock_guard lock(mu_);
    if (!id) id = sha256_hex(format_rfc3339(now) + "#" + std::to_string(++counter_) + to_string(channel)).substr(0, 12);
    if (sessions_.count(*id) || (session_dir_ && std::filesystem::exists(*session_dir_ / (*id + ".jsonl")))) {
      throw PreconditionError("session " + *id + " already exists");
    }
    state->session = Session{*id, channel, format_rfc3339(now), config_.profile_ref, {}};
    sessions_[*id] = state;
  }
  persist_header(state->session);
  return state->session;
}

std::shared_ptr<Router::Slot> Router::slot(const std::string& id) const {
  std::lock_guard lock(mu_);
  if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
  if (session_dir_) {
    const auto path = *session_dir_ / (id + ".jsonl");
    if (id.find('/') == std::string::npos && std::filesystem::exists(path)) {
      auto state = std::make_shared<Slot>();
      state->session = load_session(path);
      sessions_[id] = state;
      return state;
    }
  }
  throw NotFound("no session " + id, {{"session", id}});
}

Session Router::get_session(const std::string& id) const {
  auto s = slot(id);
  std::lock_guard lock(s->mu);
  return s->session;
}

void Router::persist_header(const Session& s) const {
  if (!session_dir_) return;
  std::filesystem::create_directories(*session_dir_);
  append_line(*session_dir_ / (s.id + ".jsonl"), s.header_json().dump());
}

void Router::persist_turn(const Session& s, const Turn& t) const {
  if (!session_dir_) return;
  append_line(*session_dir_ / (s.id + ".jsonl"), t.to_json().dump());
}

std::string Router::profile_block() const {
  if (!profile_.empty()) return synth::render_profile(profile_);
  const auto stats = records_.stats();
  return "No profile has been built yet. The store holds " + std::to_string(stats.note_count) + " notes and " +
         std::to_string(stats.todo_count) + " to-do items.\n";
}

std::vector<std::string> Router::retrieve(const std::string& query) const {
  std::map<std::string, int, std::less<>> score;
  for (const auto& e : graph_.entities()) {
    if (!contains_ci(query, e.name)) continue;
    for (const auto& ref : e.text_unit_refs) score[ref.record_id] += 2;
  }
  std::set<std::string> words;
  std::string cur;
  for (char c : to_lower_ascii(query) + " ") {
    if (std::isalnum(static_cast<unsigned char>(c)) || (static_cast<unsigned char>(c) & 0x80)) {
      cur += c;
    } else {
      if (cur.size() >= 4) words.insert(cur);
      cur.clear();
    }
  }
  for (const auto& r : records_.all()) {
    const auto text = store::record_text(r);
    for (const auto& w : words) {
      if (contains_ci(text, w)) score[store::record_id(r)] += 1;
    }
  }
  std::vector<std::pair<int, std::size_t>> ranked;  // score, position in record order
  for (std::size_t i = 0; i < records_.all().size(); ++i) {
    auto it = score.find(store::record_id(records_.all()[i]));
    if (it != score.end() && it->second > 0) ranked.push_back({it->second, i});
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < config_.top_k; ++i) {
    out.push_back(store::record_id(records_.all()[ranked[i].second]));
  }
  return out;
}

prompts::Vars Router::base_vars(const std::string& query, synth::Perspective p) const {
  return {{"perspective_instructions", eval::perspective_instructions(p == synth::Perspective::third_party)},
          {"profile", profile_block()},
          {"context", synth::render_context(records_, retrieve(query))},
          {"query", query}};
}

std::string Router::call(const std::string& role, std::string_view tmpl, const prompts::Vars& vars,
                         const TurnSink* sink) {
  auto req = templates_.request(role, tmpl, vars, 0.0);
  req.decode.seed = config_.seed;
  if (sink && sink->chunk) return gateway_.complete_streaming(std::move(req), sink->chunk).content;
  return gateway_.complete(std::move(req)).content;
}

synth::Perspective Router::detect_perspective(const std::string& query, Channel channel) {
  if (channel == Channel::external_agent) return synth::Perspective::third_party;
  try {
    const auto reply = to_lower_ascii(trim(call(config_.l2_role, "router.perspective", {{"query", query}})));
    if (reply == "third_party") return synth::Perspective::third_party;
  } catch (const GatewayError&) {
  }
  return synth::Perspective::self;
}

RouteDecision Router::classify(const std::string& query, synth::Perspective perspective) {
  const auto reply = trim(call(config_.l2_role, "router.classify",
                               {{"perspective", perspective == synth::Perspective::self ? "user" : "external party"},
                                {"query", query}}));
  if (reply == "DIRECT") return {Mode::direct, perspective, "classifier: DIRECT"};
  if (reply == "ENHANCE") return {Mode::enhance_forward, perspective, "classifier: ENHANCE"};
  if (reply == "CRITIC") return {Mode::critic_loop, perspective, "classifier: CRITIC"};
  return {Mode::direct, perspective, "fallback"};
}

RouteDecision Router::route(const std::string& query, Channel channel) {
  return classify(query, detect_perspective(query, channel));
}

namespace {

Turn error_turn(const RouteDecision& d, const Error& e) {
  Turn t;
  t.speaker = "assistant";
  t.kind = "error";
  t.content = "[error: " + std::string(e.what()) + "]";
  t.route = d;
  return t;
}

void emit(std::vector<Turn>& out, Turn t, const TurnSink* sink) {
  if (sink && sink->turn) sink->turn(t);
  out.push_back(std::move(t));
}

Turn model_turn(std::string speaker, std::string kind, const std::string& raw, const RouteDecision& d) {
  Turn t;
  t.speaker = std::move(speaker);
  t.kind = std::move(kind);
  const auto stripped = strip_reasoning(raw);
  t.content = trim(stripped.text);
  if (stripped.stripped || t.content != raw) t.raw = raw;
  t.route = d;
  return t;
}

}  // namespace

std::vector<Turn> Router::answer_direct(const std::string& query, const RouteDecision& d, const TurnSink* sink) {
  std::vector<Turn> out;
  try {
    const auto raw = call(config_.l2_role, "router.direct", base_vars(query, d.perspective), sink);
    emit(out, model_turn("assistant", "answer", raw, d), sink);
  } catch (const GatewayError& e) {
    emit(out, error_turn(d, e), sink);
  }
  return out;
}

std::vector<Turn> Router::enhance_and_forward(const std::string& query, const RouteDecision& d, const TurnSink* sink) {
  std::vector<Turn> out;
  const auto vars = base_vars(query, d.perspective);
  std::string enhanced;
  std::string raw;
  bool warning = false;
  try {
    for (int attempt = 0; attempt < 2; ++attempt) {
      raw = call(config_.l2_role, "router.enhance", vars);
      enhanced = trim(strip_reasoning(raw).text);
      const auto guard = trim(call(config_.l2_role, "router.guard", {{"query", query}, {"candidate", enhanced}}));
      warning = guard == "ROLE=CONFUSED";
      if (!warning) break;
    }
  } catch (const GatewayError& e) {
    emit(out, error_turn(d, e), sink);
    return out;
  }
  auto et = model_turn("assistant", "enhanced_query", raw, d);
  et.warning = warning;
  emit(out, std::move(et), sink);
  try {
    const auto reply = call(config_.expert_role, "router.expert", {{"query", enhanced}}, sink);
    emit(out, model_turn("expert", "expert_response", reply, d), sink);
  } catch (const GatewayError& e) {
    emit(out, error_turn(d, e), sink);
  }
  return out;
}

std::vector<Turn> Router::critic_loop(const std::string& query, const RouteDecision& d, const TurnSink* sink) {
  std::vector<Turn> out;
  auto vars = base_vars(query, d.perspective);
  std::string expert;
  std::string critique;
  try {
    for (int round = 1; round <= config_.max_rounds; ++round) {
      const auto expert_raw =
          round == 1 ? call(config_.expert_role, "router.expert", {{"query", query}})
                     : call(config_.expert_role, "router.revise",
                            {{"query", query}, {"expert_response", expert}, {"critique", critique}});
      auto et = model_turn("expert", "expert_response", expert_raw, d);
      et.round = round;
      expert = et.content;
      emit(out, std::move(et), sink);

      vars["round"] = std::to_string(round);
      vars["expert_response"] = expert;
      const auto critique_raw = call(config_.l2_role, "router.critique", vars);
      auto ct = model_turn("assistant", "critique", critique_raw, d);
      ct.round = round;
      critique = ct.content;
      emit(out, std::move(ct), sink);
      if (parse_verdict(critique) == Verdict::sufficient) break;
    }
  } catch (const GatewayError& e) {
    emit(out, error_turn(d, e), sink);
  }
  return out;
}

std::vector<Turn> Router::handle(const std::string& session_id, const std::string& query, const TurnSink* sink) {
  auto state = slot(session_id);
  std::lock_guard lock(state->mu);
  auto& session = state->session;

  std::vector<Turn> added;
  emit(added, Turn{"user", "message", query, std::nullopt, std::nullopt, 0, false}, sink);

  const auto perspective = detect_perspective(query, session.channel);
  std::vector<Turn> rest;
  try {
    const auto d = classify(query, perspective);
    switch (d.mode) {
      case Mode::direct: rest = answer_direct(query, d, sink); break;
      case Mode::enhance_forward: rest = enhance_and_forward(query, d, sink); break;
      case Mode::critic_loop: rest = critic_loop(query, d, sink); break;
    }
  } catch (const GatewayError& e) {
    const RouteDecision d{Mode::direct, perspective, std::string("gateway error: ") + e.what()};
    emit(rest, error_turn(d, e), sink);
  }
  added.insert(added.end(), rest.begin(), rest.end());
  for (const auto& t : added) {
    session.turns.push_back(t);
    persist_turn(session, t);
  }
  return added;
}

std::vector<RouteDecision> recorded_decisions(const Session& s) {
  std::vector<RouteDecision> out;
  bool waiting = false;
  for (const auto& t : s.turns) {
    if (t.speaker == "user") {
      waiting = true;
    } else if (waiting && t.route) {
      out.push_back(*t.route);
      waiting = false;
    }
  }
  return out;
}

std::vector<RouteDecision> replay_decisions(const Session& logged, Router& router) {
  const auto fresh = router.open_session(logged.channel);
  std::vector<RouteDecision> out;
  for (const auto& t : logged.turns) {
    if (t.speaker != "user") continue;
    for (const auto& added : router.handle(fresh.id, t.content)) {
      if (added.route) {
        out.push_back(*added.route);
        break;
      }
    }
  }
  return out;
}

}  // namespace memloom::router
