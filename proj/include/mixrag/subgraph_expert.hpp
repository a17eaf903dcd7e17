#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixrag/embedding.hpp"
#include "mixrag/graph.hpp"
#include "mixrag/tensor.hpp"

namespace mixrag {

struct ScoredId {
  std::size_t id = 0;
  double similarity = 0.0;

  friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

// Rows of `table` ranked by cosine similarity to `query`, descending, ties by
// ascending id. Zero-norm rows score 0. k is clamped to the row count.
std::vector<ScoredId> cosine_topk(const Tensor& query, const Tensor& table, std::size_t k);

enum class PrizeRule {
  linear_rank,  // k - rank
  similarity,   // max(similarity, 0) scaled by k
};

struct PrizeAssignment {
  std::vector<double> node_prizes;  // indexed by entity id
  std::vector<double> edge_prizes;  // indexed by triple id
  double edge_cost = 1.0;
};

PrizeAssignment assign_prizes(std::span<const ScoredId> ranked_nodes, std::span<const ScoredId> ranked_edges,
                              std::size_t num_nodes, std::size_t num_edges, std::size_t k, double edge_cost,
                              PrizeRule rule = PrizeRule::linear_rank);

struct RetrievedSubgraph {
  Subgraph subgraph;  // induced graph plus back-maps to source ids
  double objective = 0.0;
};

struct PcstOptions {
  // Instances up to this many nodes are solved exactly by enumeration.
  std::size_t exact_node_limit = 12;
};

// Connected subgraph S maximizing sum of node prizes + sum of edge prizes - c * |E_S|.
RetrievedSubgraph solve_pcst(const TextualGraph& graph, const PrizeAssignment& prizes, PcstOptions options = {});

// Objective recomputed from a node set and triple set of the source graph.
double pcst_objective(const PrizeAssignment& prizes, std::span<const EntityId> nodes,
                      std::span<const TripleId> triples);

// Weak connectivity, treating triples as undirected edges. Empty graphs are not connected.
bool is_connected(const TextualGraph& graph);

struct SubgraphExpertOptions {
  std::size_t k = 20;
  double edge_cost = 1.0;
  PrizeRule prize_rule = PrizeRule::linear_rank;
  // When set, only nodes within this many hops of a prized node are eligible.
  std::optional<std::size_t> hop_radius;
  PcstOptions pcst;
};

RetrievedSubgraph run_subgraph_expert(const Tensor& query, const TextualGraph& graph, const EmbeddingTable& table,
                                      const SubgraphExpertOptions& options);

// Graph JSON plus "objective", "node_map" and "triple_map".
nlohmann::json subgraph_to_json(const RetrievedSubgraph& result);
RetrievedSubgraph subgraph_from_json(const nlohmann::json& doc);

}  // namespace mixrag
