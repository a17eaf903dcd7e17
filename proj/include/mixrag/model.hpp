#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixrag/embedding.hpp"
#include "mixrag/graph.hpp"
#include "mixrag/graph_encoder.hpp"
#include "mixrag/moe_gate.hpp"
#include "mixrag/prompt.hpp"
#include "mixrag/semantic_experts.hpp"
#include "mixrag/subgraph_expert.hpp"

namespace mixrag {

struct ModelConfig {
  std::size_t dim = 256;  // text embedding width d
  std::uint64_t embed_seed = 7;
  std::size_t hidden_dim = 64;
  std::size_t layers = 3;
  std::size_t prompt_dim = 64;
  std::size_t prompt_vectors = 1;
  std::size_t projector_hidden = 64;
  double init_scale = 0.1;
  bool scorer_identity_offset = true;
  bool dynamic_keys = false;
  std::size_t k = 20;
  double edge_cost = 1.0;
  PrizeRule prize_rule = PrizeRule::linear_rank;
  std::optional<std::size_t> hop_radius;
  double tau0 = 1.0;
  double anneal_rate = 0.9;
  double tau_min = 0.05;
  bool hard_selection = false;
  std::string task_instruction = std::string(kDefaultTaskInstruction);
  std::size_t evidence_budget = kDefaultEvidenceBudget;

  // Width of the fused soft prompt, prompt_vectors * prompt_dim.
  std::size_t soft_width() const { return prompt_vectors * prompt_dim; }
  void validate() const;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& doc);

struct Model {
  ModelConfig config;
  BilinearScorer entity_scorer;
  BilinearScorer relation_scorer;
  TripleProjector triple_projector;
  GraphEncoder encoder;
  SoftPromptProjector projector;
  GateParams gate;
  ExpertProjectionBank bank;
  GumbelSelector selector;

  // Every learnable tensor, in a fixed order with stable names.
  std::vector<NamedTensor> parameters() const;

  static Model init(const ModelConfig& config, std::uint64_t seed);
};

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const nlohmann::json& doc);

// A graph with its precomputed text embeddings.
struct GraphData {
  TextualGraph graph;
  EmbeddingTable table;
};

struct ForwardOptions {
  ExpertSet active = ExpertSet::all();
  bool noise = false;
  Rng* rng = nullptr;  // required when noise is on
  // Skips the PCST solve; retrieval has no learnable parameters.
  const RetrievedSubgraph* cached_subgraph = nullptr;
};

struct ForwardResult {
  ExpertSet active;  // requested set minus experts with nothing to select
  std::optional<ExpertOutput> entity;
  std::optional<ExpertOutput> relation;
  std::optional<RetrievedSubgraph> subgraph;
  std::optional<Tensor> pooled;  // z_S
  std::array<std::optional<Tensor>, kNumExperts> lifted;
  GateWeights gate;
  Tensor p_soft;  // [prompt_vectors * prompt_dim]
};

SubgraphExpertOptions subgraph_options(const ModelConfig& config, std::size_t num_nodes);

RetrievedSubgraph retrieve_subgraph(const Model& model, const Tensor& query, const GraphData& data);

// Runs the active experts, the gate and the fusion for one query embedding.
ForwardResult forward(const Model& model, const Tensor& query, const GraphData& data, const ForwardOptions& options);

// Splits p_soft into prompt vectors.
std::vector<Tensor> soft_prompt_vectors(const Model& model, const Tensor& p_soft);

PromptBundle build_prompt(const Model& model, const TextualGraph& graph, const ForwardResult& result,
                          const std::string& query);

}  // namespace mixrag
