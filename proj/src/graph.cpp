#include "memloom/graph.hpp"

#include "memloom/error.hpp"

#include <algorithm>
#include <set>

namespace memloom::index {

namespace {

constexpr EntityType kAllTypes[] = {EntityType::person,   EntityType::organization, EntityType::concept_,
                                    EntityType::project,  EntityType::artifact,     EntityType::event,
                                    EntityType::other};

}  // namespace

const char* to_string(EntityType t) {
  switch (t) {
    case EntityType::person: return "person";
    case EntityType::organization: return "organization";
    case EntityType::concept_: return "concept";
    case EntityType::project: return "project";
    case EntityType::artifact: return "artifact";
    case EntityType::event: return "event";
    case EntityType::other: return "other";
  }
  return "other";
}

std::optional<EntityType> entity_type_from_string(std::string_view s) {
  const auto lower = to_lower_ascii(trim(s));
  for (auto t : kAllTypes) {
    if (lower == to_string(t)) return t;
  }
  return std::nullopt;
}

int type_priority(EntityType t) {
  switch (t) {
    case EntityType::person: return 0;
    case EntityType::project: return 1;
    case EntityType::organization: return 2;
    case EntityType::concept_: return 3;
    case EntityType::event: return 4;
    case EntityType::artifact: return 5;
    case EntityType::other: return 6;
  }
  return 6;
}

std::string entity_key(std::string_view name, EntityType type) {
  return std::string(to_string(type)) + ":" + std::string(name);
}

MemoryGraph::MemoryGraph(std::vector<Entity> entities, std::vector<Relation> relations,
                         std::vector<Community> communities)
    : entities_(std::move(entities)), relations_(std::move(relations)), communities_(std::move(communities)) {
  std::sort(entities_.begin(), entities_.end(), [](const Entity& a, const Entity& b) { return a.key() < b.key(); });
  std::sort(relations_.begin(), relations_.end(), [](const Relation& a, const Relation& b) {
    return std::tie(a.source, a.target) < std::tie(b.source, b.target);
  });
  std::sort(communities_.begin(), communities_.end(),
            [](const Community& a, const Community& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const auto key = entities_[i].key();
    by_key_.emplace(key, i);
    for (const auto& ref : entities_[i].text_unit_refs) by_record_[ref.record_id].push_back(key);
  }
}

const Entity* MemoryGraph::find(std::string_view key) const {
  auto it = by_key_.find(key);
  return it == by_key_.end() ? nullptr : &entities_[it->second];
}

const Entity* MemoryGraph::find_by_name(std::string_view name) const {
  const auto lower = to_lower_ascii(name);
  for (const auto& e : entities_) {
    if (to_lower_ascii(e.name) == lower) return &e;
  }
  return nullptr;
}

std::vector<std::string> MemoryGraph::entities_in_record(std::string_view record_id) const {
  auto it = by_record_.find(record_id);
  return it == by_record_.end() ? std::vector<std::string>{} : it->second;
}

void MemoryGraph::validate(const store::RecordSet* records) const {
  std::set<std::string> keys;
  for (const auto& e : entities_) {
    if (trim(e.name).empty()) throw SchemaError("entity with empty name");
    if (!keys.insert(e.key()).second) throw SchemaError("duplicate entity " + e.key());
    if (e.text_unit_refs.empty()) throw SchemaError("entity " + e.key() + " has no text unit");
    if (e.frequency != e.text_unit_refs.size()) throw SchemaError("entity " + e.key() + " frequency != |text_unit_refs|");
    if (records) {
      for (const auto& ref : e.text_unit_refs) {
        const auto* rec = records->find(ref.record_id);
        if (!rec) throw SchemaError("entity " + e.key() + " references unknown record " + ref.record_id);
        if (ref.begin > ref.end || ref.end > store::record_text(*rec).size()) {
          throw SchemaError("entity " + e.key() + " has an out-of-range span");
        }
      }
    }
  }
  for (const auto& r : relations_) {
    if (r.source == r.target) throw SchemaError("self relation on " + r.source);
    if (!find(r.source) || !find(r.target)) throw SchemaError("dangling relation " + r.source + " -> " + r.target);
  }
  std::map<std::optional<std::string>, std::set<std::string>> level_members;
  std::set<std::string> community_ids;
  for (const auto& c : communities_) community_ids.insert(c.id);
  for (const auto& c : communities_) {
    if (c.members.empty()) throw SchemaError("community " + c.id + " is empty");
    if (c.parent && !community_ids.count(*c.parent)) throw SchemaError("community " + c.id + " has unknown parent");
    auto& seen = level_members[c.parent];
    for (const auto& m : c.members) {
      if (!find(m)) throw SchemaError("community " + c.id + " has unknown member " + m);
      if (!seen.insert(m).second) throw SchemaError("communities overlap at the same level on " + m);
    }
  }
}

Json MemoryGraph::to_json() const {
  Json entities = Json::array();
  for (const auto& e : entities_) {
    Json refs = Json::array();
    for (const auto& r : e.text_unit_refs) refs.push_back({{"record_id", r.record_id}, {"begin", r.begin}, {"end", r.end}});
    entities.push_back({{"name", e.name},
                        {"type", to_string(e.type)},
                        {"frequency", e.frequency},
                        {"description", e.description},
                        {"text_unit_refs", refs}});
  }
  Json relations = Json::array();
  for (const auto& r : relations_) {
    relations.push_back(
        {{"source", r.source}, {"target", r.target}, {"description", r.description}, {"frequency", r.frequency}});
  }
  Json communities = Json::array();
  for (const auto& c : communities_) {
    communities.push_back({{"id", c.id},
                           {"members", c.members},
                           {"summary", c.summary},
                           {"parent", c.parent ? Json(*c.parent) : Json(nullptr)}});
  }
  return Json{{"entities", entities}, {"relations", relations}, {"communities", communities}};
}

MemoryGraph MemoryGraph::from_json(const Json& j) {
  try {
    std::vector<Entity> entities;
    for (const auto& e : j.at("entities")) {
      Entity ent;
      ent.name = e.at("name").get<std::string>();
      const auto type = entity_type_from_string(e.at("type").get<std::string>());
      if (!type) throw SchemaError("unknown entity type in graph snapshot");
      ent.type = *type;
      ent.frequency = e.at("frequency").get<std::size_t>();
      ent.description = e.value("description", "");
      for (const auto& r : e.at("text_unit_refs")) {
        ent.text_unit_refs.push_back(
            {r.at("record_id").get<std::string>(), r.at("begin").get<std::size_t>(), r.at("end").get<std::size_t>()});
      }
      entities.push_back(std::move(ent));
    }
    std::vector<Relation> relations;
    for (const auto& r : j.at("relations")) {
      relations.push_back({r.at("source").get<std::string>(), r.at("target").get<std::string>(),
                           r.value("description", ""), r.value("frequency", std::size_t{1})});
    }
    std::vector<Community> communities;
    for (const auto& c : j.at("communities")) {
      Community com;
      com.id = c.at("id").get<std::string>();
      com.members = c.at("members").get<std::vector<std::string>>();
      com.summary = c.value("summary", "");
      if (c.contains("parent") && c["parent"].is_string()) com.parent = c["parent"].get<std::string>();
      communities.push_back(std::move(com));
    }
    MemoryGraph g(std::move(entities), std::move(relations), std::move(communities));
    g.validate();
    return g;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed memory graph: ") + e.what());
  }
}

Json L1Profile::to_json() const {
  return Json{{"biography", biography},
              {"status_description", status_description},
              {"preference_tags", preference_tags},
              {"ranked_entities", ranked_entities}};
}

L1Profile L1Profile::from_json(const Json& j) {
  try {
    L1Profile p;
    p.biography = j.value("biography", "");
    p.status_description = j.value("status_description", "");
    p.preference_tags = j.value("preference_tags", std::vector<std::string>{});
    p.ranked_entities = j.value("ranked_entities", std::vector<std::string>{});
    return p;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed L1 profile: ") + e.what());
  }
}

}  // namespace memloom::index
