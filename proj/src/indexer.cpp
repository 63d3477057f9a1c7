#include "memloom/indexer.hpp"

#include "memloom/error.hpp"
#include "memloom/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace memloom::index {

namespace {

std::string one_line(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return collapse_whitespace(out);
}

std::string format_records(const std::vector<const store::Record*>& batch) {
  std::string out;
  for (const auto* r : batch) {
    out += "[" + store::record_id(*r) + "] (" + store::to_string(store::record_kind(*r)) + ") ";
    out += one_line(store::record_text(*r));
    out += "\n";
  }
  return out;
}

std::string batch_key(const std::vector<const store::Record*>& batch) {
  std::string ids;
  for (const auto* r : batch) ids += store::record_id(*r) + ",";
  return sha256_hex(ids).substr(0, 16);
}

Json load_checkpoint(const std::optional<std::filesystem::path>& path) {
  if (!path || !std::filesystem::exists(*path)) return Json::object();
  auto j = read_json(*path);
  if (!j.is_object() || !j.contains("batches") || !j["batches"].is_object()) {
    throw SchemaError("unreadable extraction checkpoint " + path->string());
  }
  return j["batches"];
}

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

ParsedExtraction parse_extraction(std::string_view reply) {
  ParsedExtraction out;
  std::vector<std::string> lines;
  for (auto& l : split_lines(reply)) {
    auto t = trim(l);
    if (!t.empty()) lines.push_back(std::move(t));
  }
  if (lines.size() == 1 && lines[0] == "NONE") return out;
  if (lines.empty()) throw ParseError("empty extraction reply");

  std::set<std::string> declared;
  for (const auto& line : lines) {
    const auto fields = split(line, '|');
    if (fields.empty()) throw ParseError("bad extraction line: " + line);
    if (fields[0] == "ENTITY") {
      if (fields.size() != 4) throw ParseError("ENTITY needs 3 fields: " + line);
      const auto name = trim(fields[1]);
      const auto type = entity_type_from_string(fields[2]);
      if (name.empty()) throw ParseError("ENTITY with empty name: " + line);
      if (!type) throw ParseError("unknown entity type: " + line);
      out.entities.push_back({name, *type, trim(fields[3])});
      declared.insert(to_lower_ascii(name));
    } else if (fields[0] == "RELATION") {
      if (fields.size() != 4) throw ParseError("RELATION needs 3 fields: " + line);
      out.relations.push_back({trim(fields[1]), trim(fields[2]), trim(fields[3])});
    } else {
      throw ParseError("bad extraction line: " + line);
    }
  }
  for (const auto& r : out.relations) {
    if (!declared.count(to_lower_ascii(r.source)) || !declared.count(to_lower_ascii(r.target))) {
      throw ParseError("relation endpoint not declared as an entity: " + r.source + " -> " + r.target);
    }
  }
  return out;
}

MemoryGraph extract_graph(const store::RecordSet& records, llm::Gateway& gateway,
                          const prompts::TemplateLibrary& templates, const ExtractOptions& options) {
  if (options.batch_size == 0) throw PreconditionError("batch_size must be positive");

  std::vector<std::vector<const store::Record*>> batches;
  for (const auto& r : records.all()) {
    if (batches.empty() || batches.back().size() == options.batch_size) batches.emplace_back();
    batches.back().push_back(&r);
  }

  Json done = load_checkpoint(options.checkpoint);
  auto outcome = parallel_try_map(batches.size(), options.parallelism, [&](std::size_t i) -> std::string {
    const auto key = batch_key(batches[i]);
    if (auto it = done.find(key); it != done.end()) return it->get<std::string>();
    prompts::Vars vars{{"batch", std::to_string(i + 1)}, {"records", format_records(batches[i])}};
    for (int attempt = 0;; ++attempt) {
      auto reply = gateway.complete(templates.request(options.role, "extract.graph", vars)).content;
      try {
        parse_extraction(reply);
        return reply;
      } catch (const ParseError&) {
        if (attempt >= options.parse_retries) throw;
      }
    }
  });

  if (outcome.first_error) {
    if (options.checkpoint) {
      Json saved = done;
      for (std::size_t i = 0; i < batches.size(); ++i) {
        if (outcome.results[i]) saved[batch_key(batches[i])] = *outcome.results[i];
      }
      write_file(*options.checkpoint, Json{{"batches", saved}}.dump(2));
    }
    outcome.rethrow_if_failed();
  }

  // Merge in batch order so "first seen" is deterministic.
  struct Merged {
    std::string name;
    EntityType type;
    std::string description;
  };
  std::vector<Merged> merged;
  std::map<std::pair<std::string, EntityType>, std::size_t> merged_index;
  std::map<std::pair<std::size_t, std::size_t>, Relation> merged_relations;

  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto parsed = parse_extraction(*outcome.results[i]);
    std::map<std::string, std::size_t> local;  // lowercase name -> merged index
    for (const auto& e : parsed.entities) {
      const auto k = std::make_pair(to_lower_ascii(e.name), e.type);
      auto it = merged_index.find(k);
      if (it == merged_index.end()) {
        it = merged_index.emplace(k, merged.size()).first;
        merged.push_back({e.name, e.type, e.description});
      }
      local.emplace(k.first, it->second);
    }
    std::set<std::pair<std::size_t, std::size_t>> asserted;
    for (const auto& r : parsed.relations) {
      const auto s = local.at(to_lower_ascii(r.source));
      const auto t = local.at(to_lower_ascii(r.target));
      if (s == t || !asserted.insert({s, t}).second) continue;
      auto [it, inserted] = merged_relations.try_emplace({s, t});
      if (inserted) {
        it->second.description = r.description;
        it->second.frequency = 1;
      } else {
        ++it->second.frequency;
      }
    }
  }

  std::vector<Entity> entities;
  std::vector<std::optional<std::string>> key_of(merged.size());
  for (std::size_t m = 0; m < merged.size(); ++m) {
    Entity e{merged[m].name, merged[m].type, 0, merged[m].description, {}};
    for (const auto& r : records.all()) {
      const auto text = store::record_text(r);
      const auto pos = find_ci(text, e.name);
      if (pos != std::string::npos) e.text_unit_refs.push_back({store::record_id(r), pos, pos + e.name.size()});
    }
    e.frequency = e.text_unit_refs.size();
    if (e.frequency == 0) continue;
    key_of[m] = e.key();
    entities.push_back(std::move(e));
  }

  if (entities.empty() && !options.allow_empty) {
    throw InsufficientContext("extraction produced no grounded entities");
  }

  std::vector<Relation> relations;
  for (auto& [ends, rel] : merged_relations) {
    if (!key_of[ends.first] || !key_of[ends.second]) continue;
    rel.source = *key_of[ends.first];
    rel.target = *key_of[ends.second];
    relations.push_back(rel);
  }

  std::vector<std::string> keys;
  for (const auto& e : entities) keys.push_back(e.key());
  std::sort(keys.begin(), keys.end());
  auto pos_of = [&](const std::string& k) {
    return static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), k) - keys.begin());
  };
  DisjointSet ds(keys.size());
  for (const auto& r : relations) ds.unite(pos_of(r.source), pos_of(r.target));
  std::map<std::size_t, std::vector<std::string>> components;
  for (std::size_t i = 0; i < keys.size(); ++i) components[ds.find(i)].push_back(keys[i]);

  // Roots are the smallest index in each component, so map order is min-key order.
  std::vector<Community> communities;
  for (auto& [root, members] : components) {
    if (members.size() < 2) continue;
    communities.push_back({"c" + std::to_string(communities.size() + 1), members, "", std::nullopt});
  }

  MemoryGraph skeleton(entities, relations, {});
  auto summaries = parallel_map(communities.size(), options.parallelism, [&](std::size_t i) {
    const auto& c = communities[i];
    std::set<std::string> member_set(c.members.begin(), c.members.end());
    std::string rel_lines;
    for (const auto& r : skeleton.relations()) {
      if (member_set.count(r.source) && member_set.count(r.target)) {
        rel_lines += "- " + skeleton.find(r.source)->name + " -> " + skeleton.find(r.target)->name + ": " +
                     r.description + "\n";
      }
    }
    prompts::Vars vars{{"members", format_entity_lines(skeleton, c.members)},
                       {"relations", rel_lines.empty() ? "(none)\n" : rel_lines}};
    return trim(gateway.complete(templates.request(options.role, "community.summary", vars)).content);
  });
  for (std::size_t i = 0; i < communities.size(); ++i) communities[i].summary = summaries[i];

  MemoryGraph graph(std::move(entities), std::move(relations), std::move(communities));
  graph.validate(&records);
  if (options.checkpoint) std::filesystem::remove(*options.checkpoint);
  return graph;
}

std::vector<std::string> rank_entities(const MemoryGraph& graph) {
  std::vector<const Entity*> order;
  for (const auto& e : graph.entities()) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const Entity* a, const Entity* b) {
    if (a->frequency != b->frequency) return a->frequency > b->frequency;
    if (type_priority(a->type) != type_priority(b->type)) return type_priority(a->type) < type_priority(b->type);
    return a->name < b->name;
  });
  std::vector<std::string> keys;
  for (const auto* e : order) keys.push_back(e->key());
  return keys;
}

std::string format_entity_lines(const MemoryGraph& graph, const std::vector<std::string>& keys) {
  std::string out;
  for (const auto& k : keys) {
    const auto* e = graph.find(k);
    if (!e) continue;
    out += "- " + e->name + " (" + to_string(e->type) + ", mentioned in " + std::to_string(e->frequency) +
           " records): " + e->description + "\n";
  }
  return out;
}

namespace {

struct ParsedTags {
  std::vector<std::string> tags;
  Json grounding = Json::object();
};

ParsedTags parse_tags(std::string_view reply, const MemoryGraph& graph, const store::RecordSet& records) {
  ParsedTags out;
  std::set<std::string> seen;
  for (const auto& raw : split_lines(reply)) {
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto fields = split(line, '|');
    if (fields.size() != 3 || fields[0] != "TAG") throw ParseError("bad tag line: " + line);
    const auto tag = trim(fields[1]);
    const auto ground = trim(fields[2]);
    if (tag.empty()) throw ParseError("empty tag");
    if (word_count(tag) > 8) throw ParseError("tag longer than 8 words: " + tag);

    Json where;
    if (const auto* e = graph.find_by_name(ground)) {
      where = {{"kind", "entity"}, {"ref", e->key()}};
    } else if (records.find(ground)) {
      where = {{"kind", "record"}, {"ref", ground}};
    } else {
      for (const auto& e : graph.entities()) {
        if (contains_ci(tag, e.name)) {
          where = {{"kind", "entity"}, {"ref", e.key()}};
          break;
        }
      }
    }
    if (where.is_null()) throw GroundingError("tag is not grounded in the graph or records: " + tag, {{"tag", tag}});
    if (!seen.insert(normalize_query(tag)).second) continue;
    out.tags.push_back(tag);
    out.grounding[tag] = where;
  }
  return out;
}

}  // namespace

ProfileResult build_profile(const MemoryGraph& graph, const store::RecordSet& records, llm::Gateway& gateway,
                            const prompts::TemplateLibrary& templates, const ProfileOptions& options) {
  ProfileResult result;
  result.profile.ranked_entities = rank_entities(graph);
  if (graph.empty()) return result;

  std::vector<std::string> top(result.profile.ranked_entities.begin(),
                               result.profile.ranked_entities.begin() +
                                   std::min(options.top_k, result.profile.ranked_entities.size()));
  std::string community_lines;
  for (const auto& c : graph.communities()) community_lines += "- " + c.id + ": " + one_line(c.summary) + "\n";
  const prompts::Vars vars{{"entities", format_entity_lines(graph, top)},
                           {"communities", community_lines.empty() ? "(none)\n" : community_lines}};

  auto ask_text = [&](std::string_view name) {
    for (int attempt = 0;; ++attempt) {
      auto text = trim(gateway.complete(templates.request(options.role, name, vars)).content);
      if (!text.empty()) return text;
      if (attempt >= options.retries) throw ParseError(std::string(name) + " returned an empty reply");
    }
  };
  result.profile.biography = ask_text("profile.biography");
  result.profile.status_description = ask_text("profile.status");

  for (int attempt = 0;; ++attempt) {
    try {
      auto parsed = parse_tags(gateway.complete(templates.request(options.role, "profile.tags", vars)).content, graph,
                               records);
      result.profile.preference_tags = std::move(parsed.tags);
      result.tag_grounding = std::move(parsed.grounding);
      break;
    } catch (const ParseError&) {
      if (attempt >= options.retries) throw;
    } catch (const GroundingError&) {
      if (attempt >= options.retries) throw;
    }
  }
  return result;
}

}  // namespace memloom::index
