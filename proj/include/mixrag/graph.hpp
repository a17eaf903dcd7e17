#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mixrag {

using EntityId = std::size_t;
using RelationId = std::size_t;
using TripleId = std::size_t;

struct Entity {
  EntityId id = 0;
  std::string text;
};

struct RelationType {
  RelationId id = 0;
  std::string text;
};

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  std::optional<std::string> edge_text;

  friend bool operator==(const Triple&, const Triple&) = default;
};

enum class Direction { outgoing, incoming };

struct Incidence {
  TripleId triple = 0;
  EntityId other = 0;
  Direction direction = Direction::outgoing;

  friend bool operator==(const Incidence&, const Incidence&) = default;
};

// Immutable textual graph G = (E, R, T) with dense ids per category.
class TextualGraph {
 public:
  TextualGraph() = default;
  // Validates ids and references; removes duplicate triples (first occurrence
  // wins, later ids shift down) and reports how many were dropped.
  TextualGraph(std::vector<Entity> entities, std::vector<RelationType> relations, std::vector<Triple> triples,
               std::size_t* duplicates_removed = nullptr);

  std::span<const Entity> entities() const { return entities_; }
  std::span<const RelationType> relations() const { return relations_; }
  std::span<const Triple> triples() const { return triples_; }

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_triples() const { return triples_.size(); }
  bool empty() const { return entities_.empty(); }

  const Entity& entity(EntityId id) const;
  const RelationType& relation(RelationId id) const;
  const Triple& triple(TripleId id) const;

  // Incident triples of `v` in ascending triple id; self-loops appear once.
  std::span<const Incidence> neighbors(EntityId v) const;

  // Explicit edge text, or "head [SEP] relation [SEP] tail".
  std::string triple_text(TripleId id) const;

  // Rebuilds adjacency from the triple list and compares with the stored one.
  bool adjacency_consistent() const;

  friend bool operator==(const TextualGraph& a, const TextualGraph& b);

 private:
  std::vector<Entity> entities_;
  std::vector<RelationType> relations_;
  std::vector<Triple> triples_;
  std::vector<std::vector<Incidence>> adjacency_;
};

std::vector<std::vector<Incidence>> build_adjacency(std::size_t num_entities, std::span<const Triple> triples);

// A graph cut out of a larger one, with maps from local ids back to source ids.
struct Subgraph {
  TextualGraph graph;
  std::vector<EntityId> node_map;
  std::vector<TripleId> triple_map;
};

// Relation types are carried over unchanged; nodes and triples are renumbered
// densely in ascending source-id order.
Subgraph induced_subgraph(const TextualGraph& g, std::span<const EntityId> node_ids,
                          std::span<const TripleId> triple_ids);

struct LoadStats {
  std::size_t duplicates_removed = 0;
};

nlohmann::json graph_to_json(const TextualGraph& g);
TextualGraph graph_from_json(const nlohmann::json& doc, LoadStats* stats = nullptr);

TextualGraph load_graph(const std::filesystem::path& path, LoadStats* stats = nullptr);
void save_graph(const TextualGraph& g, const std::filesystem::path& path);

// Edge-list TSV as exported by GraphQA-style pipelines: `id \t text` node lines
// and `src \t edge_text \t dst` edge lines. Header lines are skipped. Each
// distinct edge text becomes one relation type.
TextualGraph convert_tsv(const std::filesystem::path& path, LoadStats* stats = nullptr);

}  // namespace mixrag
