#pragma once

#include "memloom/gateway.hpp"
#include "memloom/graph.hpp"
#include "memloom/prompts.hpp"
#include "memloom/store.hpp"

#include <filesystem>
#include <map>
#include <optional>

namespace memloom::index {

struct RawEntity {
  std::string name;
  EntityType type = EntityType::other;
  std::string description;
};

struct RawRelation {
  std::string source;  // entity names as written in the reply
  std::string target;
  std::string description;
};

struct ParsedExtraction {
  std::vector<RawEntity> entities;
  std::vector<RawRelation> relations;
};

/// Parses the line grammar `ENTITY|name|type|description` /
/// `RELATION|src|dst|description` (or a lone `NONE`). Relation endpoints must
/// be declared as entities in the same reply. Throws ParseError.
ParsedExtraction parse_extraction(std::string_view reply);

struct ExtractOptions {
  std::string role = "synth";
  std::size_t batch_size = 8;
  int parse_retries = 2;  // extra requests after a grammar violation
  bool allow_empty = false;
  std::size_t parallelism = 1;
  std::optional<std::filesystem::path> checkpoint;  // completed batch replies survive a GatewayError
};

/// Mines the graph batch by batch, merges entities by (case-folded name, type),
/// locates every mention by scanning all records, drops entities with no
/// mention, forms communities from connected components (two or more members)
/// and asks the model for one summary per community.
MemoryGraph extract_graph(const store::RecordSet& records, llm::Gateway& gateway,
                          const prompts::TemplateLibrary& templates, const ExtractOptions& options = {});

/// Frequency desc, then type priority, then name asc.
std::vector<std::string> rank_entities(const MemoryGraph& graph);

struct ProfileOptions {
  std::string role = "synth";
  std::size_t top_k = 20;
  int retries = 1;
};

struct ProfileResult {
  L1Profile profile;
  Json tag_grounding;  // tag -> {"kind": "entity"|"record", "ref": ...}
};

ProfileResult build_profile(const MemoryGraph& graph, const store::RecordSet& records, llm::Gateway& gateway,
                            const prompts::TemplateLibrary& templates, const ProfileOptions& options = {});

/// Prompt block listing `keys` one per line (name, type, frequency, description).
std::string format_entity_lines(const MemoryGraph& graph, const std::vector<std::string>& keys);

}  // namespace memloom::index
