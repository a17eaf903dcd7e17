#include "mixrag/semantic_experts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixrag/errors.hpp"
#include "mixrag/log.hpp"
#include "mixrag/ops.hpp"

namespace mixrag {

void GumbelSelector::anneal() {
  ++steps;
  tau = schedule(tau0, anneal_rate, tau_min, steps);
}

void GumbelSelector::reset() {
  steps = 0;
  tau = std::max(tau0, tau_min);
}

double GumbelSelector::schedule(double tau0, double rate, double tau_min, std::size_t steps) {
  return std::max(tau0 * std::pow(rate, static_cast<double>(steps)), tau_min);
}

Tensor project_triple(const TripleProjector& projector, const Tensor& head, const Tensor& relation,
                      const Tensor& tail) {
  const std::size_t d = head.numel();
  if (head.ndim() != 1 || relation.shape() != head.shape() || tail.shape() != head.shape()) {
    throw DimensionError("project_triple: inputs " + shape_string(head.shape()) + ", " +
                         shape_string(relation.shape()) + ", " + shape_string(tail.shape()) + " must be equal vectors");
  }
  const auto& w = projector.weight;
  if (w.ndim() != 2 || w.cols() != 3 * d) {
    throw DimensionError("project_triple: projector " + shape_string(w.shape()) + " does not accept 3x" +
                         std::to_string(d) + " inputs");
  }
  const Tensor parts[] = {head, relation, tail};
  return ops::matmul(w, ops::concat(parts));
}

Tensor project_triples(const TripleProjector& projector, const TextualGraph& graph, const EmbeddingTable& table) {
  std::vector<std::size_t> heads, rels, tails;
  for (const auto& t : graph.triples()) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
    tails.push_back(t.tail);
  }
  const Tensor blocks[] = {ops::gather_rows(table.nodes(), heads), ops::gather_rows(table.relations(), rels),
                           ops::gather_rows(table.nodes(), tails)};
  // [h_h; h_r; h_t] W^T for all triples at once.
  return ops::matmul(ops::concat_cols(blocks), ops::transpose(projector.weight));
}

Tensor score(const BilinearScorer& scorer, const Tensor& query, const Tensor& elements) {
  if (elements.ndim() != 2 || elements.rows() == 0) throw ParameterError("score: no elements to score");
  const auto& w = scorer.weight;
  if (query.ndim() != 1 || w.ndim() != 2 || w.rows() != query.numel() || w.cols() != elements.cols()) {
    throw DimensionError("score: query " + shape_string(query.shape()) + ", weight " + shape_string(w.shape()) +
                         ", elements " + shape_string(elements.shape()) + " do not agree");
  }
  if (!scorer.identity_offset) return ops::matmul(elements, ops::matmul(query, w));
  if (w.rows() != w.cols()) throw DimensionError("score: identity offset needs a square weight, got " + shape_string(w.shape()));
  return ops::matmul(elements, ops::add(query, ops::matmul(query, w)));
}

Tensor score(const BilinearScorer& scorer, const Tensor& query, std::span<const Tensor> elements) {
  if (elements.empty()) throw ParameterError("score: no elements to score");
  return score(scorer, query, ops::stack_rows(elements));
}

Selection gumbel_select(const GumbelSelector& selector, const Tensor& phi, Rng* rng) {
  if (phi.ndim() != 1 || phi.numel() == 0) throw ParameterError("gumbel_select: phi must be a non-empty vector");
  if (!(selector.tau > 0.0)) throw ParameterError("gumbel_select: tau must be positive");
  Tensor logits = phi;
  if (selector.noise) {
    if (!rng) throw ParameterError("gumbel_select: noise enabled but no rng given");
    logits = ops::add(phi, gumbel_sample(*rng, phi.numel()));
  }
  Tensor soft = ops::softmax(logits, selector.tau);
  if (!selector.hard) return {soft, std::nullopt};

  auto values = logits.data();
  const auto best = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  std::vector<double> hot(phi.numel(), 0.0);
  hot[best] = 1.0;
  Tensor one_hot(phi.shape(), std::move(hot));
  return {ops::straight_through(one_hot, soft), best};
}

Tensor aggregate(const Tensor& weights, const Tensor& elements) {
  if (weights.ndim() != 1 || elements.ndim() != 2 || weights.numel() != elements.rows()) {
    throw DimensionError("aggregate: weights " + shape_string(weights.shape()) + " vs elements " +
                         shape_string(elements.shape()));
  }
  return ops::matmul(weights, elements);
}

Tensor aggregate(const Tensor& weights, std::span<const Tensor> elements) {
  if (elements.size() != weights.numel()) {
    throw DimensionError("aggregate: " + std::to_string(weights.numel()) + " weights for " +
                         std::to_string(elements.size()) + " elements");
  }
  return aggregate(weights, ops::stack_rows(elements));
}

std::vector<RankedItem> top_k(std::span<const double> weights, std::size_t k) {
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return weights[a] > weights[b] || (weights[a] == weights[b] && a < b); });
  std::vector<RankedItem> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({order[i], weights[order[i]]});
  return out;
}

namespace {

std::size_t clamp_k(std::size_t k, std::size_t available, const char* what) {
  if (k == 0) throw ParameterError(std::string(what) + ": k must be at least 1");
  if (k > available) {
    warn(std::string(what) + ": k=" + std::to_string(k) + " exceeds " + std::to_string(available) +
         " candidates; clamped");
    return available;
  }
  return k;
}

ExpertOutput select_and_aggregate(const Tensor& phi, const Tensor& elements, const GumbelSelector& selector,
                                  std::size_t k, Rng* rng) {
  auto selection = gumbel_select(selector, phi, rng);
  ExpertOutput out;
  out.representation = aggregate(selection.weights, elements);
  out.top_items = top_k(selection.weights.data(), k);
  out.weights = selection.weights;
  out.probabilities = (selector.noise || selector.hard) ? ops::softmax(phi, selector.tau) : selection.weights;
  return out;
}

}  // namespace

ExpertOutput run_entity_expert(const Tensor& query, const TextualGraph& graph, const EmbeddingTable& table,
                               const BilinearScorer& scorer, const GumbelSelector& selector, std::size_t k,
                               Rng* rng) {
  if (graph.num_entities() == 0) throw ParameterError("entity expert: graph has no entities");
  k = clamp_k(k, graph.num_entities(), "entity expert");
  const Tensor& elements = table.nodes();
  return select_and_aggregate(score(scorer, query, elements), elements, selector, k, rng);
}

ExpertOutput run_relation_expert(const Tensor& query, const TextualGraph& graph, const EmbeddingTable& table,
                                 const TripleProjector& projector, const BilinearScorer& scorer,
                                 const GumbelSelector& selector, std::size_t k, Rng* rng) {
  if (graph.num_triples() == 0) throw ParameterError("relation expert: graph has no triples");
  k = clamp_k(k, graph.num_triples(), "relation expert");
  Tensor elements = project_triples(projector, graph, table);
  return select_and_aggregate(score(scorer, query, elements), elements, selector, k, rng);
}

}  // namespace mixrag
