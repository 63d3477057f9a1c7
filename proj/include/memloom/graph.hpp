#pragma once

// L1 memory graph: entities, relations and communities mined from records.
// Snapshot file `memory_graph.json`:
//   {"entities":[{"name","type","frequency","description",
//                 "text_unit_refs":[{"record_id","begin","end"}]}],
//    "relations":[{"source","target","description","frequency"}],
//    "communities":[{"id","members":[key...],"summary","parent"}]}
// An entity key is "<type>:<name>".

#include "memloom/store.hpp"
#include "memloom/util.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace memloom::index {

enum class EntityType { person, organization, concept_, project, artifact, event, other };

const char* to_string(EntityType t);
std::optional<EntityType> entity_type_from_string(std::string_view s);
/// Tie-break order for ranking: person > project > organization > concept > event > artifact > other.
int type_priority(EntityType t);

std::string entity_key(std::string_view name, EntityType type);

struct TextUnitRef {
  std::string record_id;
  std::size_t begin = 0;  // byte span of the first mention in store::record_text
  std::size_t end = 0;

  bool operator==(const TextUnitRef&) const = default;
};

struct Entity {
  std::string name;
  EntityType type = EntityType::other;
  std::size_t frequency = 0;
  std::string description;
  std::vector<TextUnitRef> text_unit_refs;

  std::string key() const { return entity_key(name, type); }
  bool operator==(const Entity&) const = default;
};

struct Relation {
  std::string source;
  std::string target;
  std::string description;
  std::size_t frequency = 1;

  bool operator==(const Relation&) const = default;
};

struct Community {
  std::string id;
  std::vector<std::string> members;
  std::string summary;
  std::optional<std::string> parent;

  bool operator==(const Community&) const = default;
};

class MemoryGraph {
 public:
  MemoryGraph() = default;
  MemoryGraph(std::vector<Entity> entities, std::vector<Relation> relations, std::vector<Community> communities);

  const std::vector<Entity>& entities() const noexcept { return entities_; }
  const std::vector<Relation>& relations() const noexcept { return relations_; }
  const std::vector<Community>& communities() const noexcept { return communities_; }
  bool empty() const noexcept { return entities_.empty(); }

  const Entity* find(std::string_view key) const;
  /// Case-insensitive name lookup; the first entity by key order wins.
  const Entity* find_by_name(std::string_view name) const;
  /// Keys of entities with a text unit in `record_id`, in key order.
  std::vector<std::string> entities_in_record(std::string_view record_id) const;

  /// Throws SchemaError naming the first broken invariant. With `records`,
  /// text unit refs must also resolve.
  void validate(const store::RecordSet* records = nullptr) const;

  Json to_json() const;
  static MemoryGraph from_json(const Json& j);

  bool operator==(const MemoryGraph& o) const {
    return entities_ == o.entities_ && relations_ == o.relations_ && communities_ == o.communities_;
  }

 private:
  std::vector<Entity> entities_;
  std::vector<Relation> relations_;
  std::vector<Community> communities_;
  std::map<std::string, std::size_t, std::less<>> by_key_;
  std::map<std::string, std::vector<std::string>, std::less<>> by_record_;
};

struct L1Profile {
  std::string biography;
  std::string status_description;
  std::vector<std::string> preference_tags;
  std::vector<std::string> ranked_entities;

  bool empty() const { return biography.empty() && status_description.empty() && preference_tags.empty(); }
  Json to_json() const;
  static L1Profile from_json(const Json& j);
  bool operator==(const L1Profile&) const = default;
};

}  // namespace memloom::index
