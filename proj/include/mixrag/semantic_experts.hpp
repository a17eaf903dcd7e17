#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mixrag/embedding.hpp"
#include "mixrag/graph.hpp"
#include "mixrag/rng.hpp"
#include "mixrag/tensor.hpp"

namespace mixrag {

// phi_i = h_q^T W h_i. With `identity_offset` the effective matrix is I + W,
// so an untrained scorer starts from cosine similarity.
struct BilinearScorer {
  Tensor weight;  // [d x d]
  bool identity_offset = false;
};

// h = W [h_head; h_rel; h_tail]
struct TripleProjector {
  Tensor weight;  // [d x 3d]
};

// Temperature-controlled Gumbel-Softmax selection with exponential annealing.
struct GumbelSelector {
  double tau0 = 1.0;
  double tau = 1.0;
  double tau_min = 0.05;
  double anneal_rate = 0.9;
  bool hard = false;
  bool noise = true;
  std::size_t steps = 0;

  // tau_t = max(tau0 * rate^t, tau_min)
  void anneal();
  void reset();
  static double schedule(double tau0, double rate, double tau_min, std::size_t steps);
};

struct Selection {
  Tensor weights;                      // probability vector (one-hot forward in hard mode)
  std::optional<std::size_t> sampled;  // argmax index in hard mode
};

struct RankedItem {
  std::size_t id = 0;
  double weight = 0.0;

  friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

struct ExpertOutput {
  Tensor representation;             // weighted sum of element embeddings, [d]
  Tensor weights;                    // selection distribution over all elements
  Tensor probabilities;              // softmax(phi / tau) without noise
  std::vector<RankedItem> top_items;  // k highest weights, descending, ties by id
};

Tensor project_triple(const TripleProjector& projector, const Tensor& head, const Tensor& relation,
                      const Tensor& tail);
// Projects every triple of `graph` at once; rows follow triple ids.
Tensor project_triples(const TripleProjector& projector, const TextualGraph& graph, const EmbeddingTable& table);

Tensor score(const BilinearScorer& scorer, const Tensor& query, const Tensor& elements);
Tensor score(const BilinearScorer& scorer, const Tensor& query, std::span<const Tensor> elements);

// softmax((phi + g) / tau). `rng` may be null when noise is disabled.
Selection gumbel_select(const GumbelSelector& selector, const Tensor& phi, Rng* rng);

// sum_i p_i * elements[i]
Tensor aggregate(const Tensor& weights, const Tensor& elements);
Tensor aggregate(const Tensor& weights, std::span<const Tensor> elements);

// The k highest weights, descending, ties broken by ascending index.
std::vector<RankedItem> top_k(std::span<const double> weights, std::size_t k);

ExpertOutput run_entity_expert(const Tensor& query, const TextualGraph& graph, const EmbeddingTable& table,
                               const BilinearScorer& scorer, const GumbelSelector& selector, std::size_t k,
                               Rng* rng);

ExpertOutput run_relation_expert(const Tensor& query, const TextualGraph& graph, const EmbeddingTable& table,
                                 const TripleProjector& projector, const BilinearScorer& scorer,
                                 const GumbelSelector& selector, std::size_t k, Rng* rng);

}  // namespace mixrag
