#include "mixrag/subgraph_expert.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"

namespace mixrag {

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

struct Candidate {
  std::vector<EntityId> nodes;
  std::vector<TripleId> triples;
  double value = -std::numeric_limits<double>::infinity();
};

// Best edge set for a fixed node set: every positive-gain edge (prize > c) is
// taken, then the remaining components are joined by the cheapest edges
// (Kruskal on descending gain). Returns false when the induced graph is
// disconnected.
bool best_edges_for(const TextualGraph& graph, const PrizeAssignment& prizes, std::span<const char> in_set,
                    std::size_t set_size, Candidate& out) {
  std::vector<TripleId> induced;
  for (TripleId t = 0; t < graph.num_triples(); ++t) {
    const auto& tr = graph.triples()[t];
    if (in_set[tr.head] && in_set[tr.tail]) induced.push_back(t);
  }
  auto gain = [&](TripleId t) { return prizes.edge_prizes[t] - prizes.edge_cost; };
  std::stable_sort(induced.begin(), induced.end(), [&](TripleId a, TripleId b) { return gain(a) > gain(b); });

  DisjointSets sets(graph.num_entities());
  std::size_t components = set_size;
  double value = 0.0;
  out.triples.clear();
  for (TripleId t : induced) {
    const auto& tr = graph.triples()[t];
    const bool joins = sets.unite(tr.head, tr.tail);
    if (joins) --components;
    if (joins || gain(t) > 0.0) {
      out.triples.push_back(t);
      value += gain(t);
    }
  }
  if (components != 1) return false;
  out.nodes.clear();
  for (EntityId v = 0; v < graph.num_entities(); ++v) {
    if (in_set[v]) {
      out.nodes.push_back(v);
      value += prizes.node_prizes[v];
    }
  }
  std::sort(out.triples.begin(), out.triples.end());
  out.value = value;
  return true;
}

Candidate best_single_node(const TextualGraph& graph, const PrizeAssignment& prizes) {
  Candidate best;
  for (EntityId v = 0; v < graph.num_entities(); ++v) {
    // Positive-gain self-loops come for free with the node.
    double value = prizes.node_prizes[v];
    std::vector<TripleId> loops;
    for (const auto& inc : graph.neighbors(v)) {
      const auto& tr = graph.triple(inc.triple);
      if (tr.head == tr.tail && prizes.edge_prizes[inc.triple] - prizes.edge_cost > 0.0) {
        loops.push_back(inc.triple);
        value += prizes.edge_prizes[inc.triple] - prizes.edge_cost;
      }
    }
    if (value > best.value) {
      best.value = value;
      best.nodes = {v};
      best.triples = std::move(loops);
    }
  }
  return best;
}

Candidate solve_exact(const TextualGraph& graph, const PrizeAssignment& prizes) {
  const std::size_t n = graph.num_entities();
  Candidate best;
  Candidate scratch;
  std::vector<char> in_set(n, 0);
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    std::size_t size = 0;
    for (std::size_t v = 0; v < n; ++v) {
      in_set[v] = static_cast<char>((mask >> v) & 1U);
      size += in_set[v];
    }
    if (!best_edges_for(graph, prizes, in_set, size, scratch)) continue;
    if (scratch.value > best.value) best = scratch;
  }
  return best;
}

// Node-prized instance produced by folding edge prizes into costs. Edges whose
// prize exceeds c become a virtual node carrying the surplus, joined to both
// endpoints at zero cost.
struct FoldedInstance {
  std::vector<double> prize;
  struct Edge {
    std::size_t u, v;
    double cost;
  };
  std::vector<Edge> edges;
  std::vector<TripleId> virtual_origin;  // for node ids >= num_real
  std::size_t num_real = 0;
};

FoldedInstance fold_edge_prizes(const TextualGraph& graph, const PrizeAssignment& prizes,
                                std::span<const char> eligible) {
  FoldedInstance inst;
  inst.num_real = graph.num_entities();
  inst.prize = prizes.node_prizes;
  for (EntityId v = 0; v < inst.num_real; ++v) {
    if (!eligible[v]) inst.prize[v] = 0.0;
  }
  for (TripleId t = 0; t < graph.num_triples(); ++t) {
    const auto& tr = graph.triples()[t];
    if (tr.head == tr.tail || !eligible[tr.head] || !eligible[tr.tail]) continue;
    const double surplus = prizes.edge_prizes[t] - prizes.edge_cost;
    if (surplus > 0.0) {
      const std::size_t x = inst.prize.size();
      inst.prize.push_back(surplus);
      inst.virtual_origin.push_back(t);
      inst.edges.push_back({tr.head, x, 0.0});
      inst.edges.push_back({x, tr.tail, 0.0});
    } else {
      inst.edges.push_back({tr.head, tr.tail, -surplus});
    }
  }
  return inst;
}

// Goemans-Williamson moat growing. Returns the forest edges (indices into inst.edges).
std::vector<std::size_t> grow_forest(const FoldedInstance& inst) {
  const std::size_t n = inst.prize.size();
  std::vector<std::size_t> cluster_of(n);
  std::iota(cluster_of.begin(), cluster_of.end(), 0);
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<double> budget(inst.prize);
  std::vector<char> active(n), alive(n, 1);
  for (std::size_t v = 0; v < n; ++v) {
    members[v] = {v};
    active[v] = budget[v] > 0.0;
  }
  std::vector<double> moat(n, 0.0);  // total dual load covering each node
  std::vector<std::size_t> forest;
  constexpr double kEps = 1e-12;

  while (true) {
    double best_t = std::numeric_limits<double>::infinity();
    std::size_t best_edge = SIZE_MAX, best_cluster = SIZE_MAX;
    for (std::size_t e = 0; e < inst.edges.size(); ++e) {
      const auto& edge = inst.edges[e];
      const std::size_t cu = cluster_of[edge.u], cv = cluster_of[edge.v];
      if (cu == cv) continue;
      const int rate = active[cu] + active[cv];
      if (rate == 0) continue;
      const double slack = std::max(0.0, edge.cost - moat[edge.u] - moat[edge.v]);
      const double t = slack / rate;
      if (t < best_t - kEps) {
        best_t = t;
        best_edge = e;
      }
    }
    for (std::size_t c = 0; c < n; ++c) {
      if (!alive[c] || !active[c]) continue;
      if (budget[c] < best_t - kEps) {
        best_t = budget[c];
        best_cluster = c;
        best_edge = SIZE_MAX;
      }
    }
    if (best_edge == SIZE_MAX && best_cluster == SIZE_MAX) break;

    for (std::size_t c = 0; c < n; ++c) {
      if (!alive[c] || !active[c]) continue;
      budget[c] -= best_t;
      for (auto v : members[c]) moat[v] += best_t;
    }
    if (best_edge != SIZE_MAX) {
      const auto& edge = inst.edges[best_edge];
      std::size_t keep = cluster_of[edge.u], gone = cluster_of[edge.v];
      if (gone < keep) std::swap(keep, gone);
      for (auto v : members[gone]) cluster_of[v] = keep;
      members[keep].insert(members[keep].end(), members[gone].begin(), members[gone].end());
      members[gone].clear();
      budget[keep] = std::max(0.0, budget[keep]) + std::max(0.0, budget[gone]);
      active[keep] = budget[keep] > kEps;
      alive[gone] = 0;
      active[gone] = 0;
      forest.push_back(best_edge);
    } else {
      active[best_cluster] = 0;
      budget[best_cluster] = 0.0;
    }
  }
  return forest;
}

// Strong pruning: best subtree of each forest component over all roots.
std::vector<std::size_t> strong_prune(const FoldedInstance& inst, std::span<const std::size_t> forest) {
  const std::size_t n = inst.prize.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
  for (auto e : forest) {
    const auto& edge = inst.edges[e];
    adj[edge.u].push_back({edge.v, edge.cost});
    adj[edge.v].push_back({edge.u, edge.cost});
  }

  std::vector<std::size_t> best_nodes;
  double best_value = -std::numeric_limits<double>::infinity();
  std::vector<double> net(n);
  std::vector<std::size_t> parent(n), order;
  for (std::size_t root = 0; root < n; ++root) {
    if (adj[root].empty()) continue;
    // Iterative DFS order from this root.
    order.clear();
    parent[root] = SIZE_MAX;
    std::vector<std::size_t> stack{root};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      order.push_back(v);
      for (auto [w, cost] : adj[v]) {
        if (w != parent[v]) {
          parent[w] = v;
          stack.push_back(w);
        }
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const auto v = *it;
      net[v] = inst.prize[v];
      for (auto [w, cost] : adj[v]) {
        if (w != parent[v]) net[v] += std::max(0.0, net[w] - cost);
      }
    }
    if (net[root] > best_value) {
      best_value = net[root];
      best_nodes.clear();
      std::vector<std::size_t> keep{root};
      while (!keep.empty()) {
        auto v = keep.back();
        keep.pop_back();
        best_nodes.push_back(v);
        for (auto [w, cost] : adj[v]) {
          if (w != parent[v] && net[w] - cost > 0.0) keep.push_back(w);
        }
      }
    }
  }
  return best_nodes;
}

Candidate solve_heuristic(const TextualGraph& graph, const PrizeAssignment& prizes, std::span<const char> eligible) {
  Candidate best = best_single_node(graph, prizes);
  auto inst = fold_edge_prizes(graph, prizes, eligible);
  auto forest = grow_forest(inst);
  auto chosen = strong_prune(inst, forest);
  if (chosen.empty()) return best;

  std::vector<char> in_set(graph.num_entities(), 0);
  for (auto v : chosen) {
    if (v < inst.num_real) {
      in_set[v] = 1;
    } else {
      const auto& tr = graph.triple(inst.virtual_origin[v - inst.num_real]);
      in_set[tr.head] = 1;
      in_set[tr.tail] = 1;
    }
  }
  const auto size = static_cast<std::size_t>(std::count(in_set.begin(), in_set.end(), 1));
  Candidate tree;
  if (best_edges_for(graph, prizes, in_set, size, tree) && tree.value > best.value) best = std::move(tree);
  return best;
}

std::vector<char> hop_filter(const TextualGraph& graph, const PrizeAssignment& prizes, std::size_t radius) {
  const std::size_t n = graph.num_entities();
  std::vector<std::size_t> dist(n, SIZE_MAX);
  std::deque<EntityId> queue;
  auto seed = [&](EntityId v) {
    if (dist[v] != 0) {
      dist[v] = 0;
      queue.push_back(v);
    }
  };
  for (EntityId v = 0; v < n; ++v) {
    if (prizes.node_prizes[v] > 0.0) seed(v);
  }
  for (TripleId t = 0; t < graph.num_triples(); ++t) {
    if (prizes.edge_prizes[t] > 0.0) {
      seed(graph.triple(t).head);
      seed(graph.triple(t).tail);
    }
  }
  while (!queue.empty()) {
    auto v = queue.front();
    queue.pop_front();
    if (dist[v] == radius) continue;
    for (const auto& inc : graph.neighbors(v)) {
      if (dist[inc.other] == SIZE_MAX) {
        dist[inc.other] = dist[v] + 1;
        queue.push_back(inc.other);
      }
    }
  }
  std::vector<char> eligible(n);
  for (EntityId v = 0; v < n; ++v) eligible[v] = dist[v] != SIZE_MAX;
  return eligible;
}

RetrievedSubgraph finish(const TextualGraph& graph, const PrizeAssignment& prizes, const Candidate& best) {
  RetrievedSubgraph out;
  out.subgraph = induced_subgraph(graph, best.nodes, best.triples);
  out.objective = pcst_objective(prizes, out.subgraph.node_map, out.subgraph.triple_map);
  return out;
}

void check_prizes(const TextualGraph& graph, const PrizeAssignment& prizes) {
  if (prizes.node_prizes.size() != graph.num_entities() || prizes.edge_prizes.size() != graph.num_triples()) {
    throw DimensionError("prize assignment does not match graph size");
  }
  if (!(prizes.edge_cost > 0.0)) throw ParameterError("edge cost must be positive");
}

}  // namespace

std::vector<ScoredId> cosine_topk(const Tensor& query, const Tensor& table, std::size_t k) {
  if (table.ndim() != 2 || table.rows() == 0) throw ParameterError("cosine_topk: empty table");
  if (k == 0) throw ParameterError("cosine_topk: k must be at least 1");
  if (query.ndim() != 1 || query.numel() != table.cols()) {
    throw DimensionError("cosine_topk: query " + shape_string(query.shape()) + " vs table " +
                         shape_string(table.shape()));
  }
  const std::size_t d = table.cols();
  std::vector<ScoredId> scored(table.rows());
  for (std::size_t i = 0; i < table.rows(); ++i) {
    scored[i] = {i, cosine_similarity(query.data(), table.data().subspan(i * d, d))};
  }
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const ScoredId& a, const ScoredId& b) {
                      return a.similarity > b.similarity || (a.similarity == b.similarity && a.id < b.id);
                    });
  scored.resize(k);
  return scored;
}

PrizeAssignment assign_prizes(std::span<const ScoredId> ranked_nodes, std::span<const ScoredId> ranked_edges,
                              std::size_t num_nodes, std::size_t num_edges, std::size_t k, double edge_cost,
                              PrizeRule rule) {
  PrizeAssignment out{std::vector<double>(num_nodes, 0.0), std::vector<double>(num_edges, 0.0), edge_cost};
  auto fill = [&](std::span<const ScoredId> ranked, std::vector<double>& prizes) {
    const std::size_t limit = std::min(k, ranked.size());
    for (std::size_t r = 0; r < limit; ++r) {
      if (ranked[r].id >= prizes.size()) throw RangeError("assign_prizes: id out of range");
      prizes[ranked[r].id] = rule == PrizeRule::linear_rank ? static_cast<double>(k - r)
                                                            : static_cast<double>(k) * std::max(0.0, ranked[r].similarity);
    }
  };
  fill(ranked_nodes, out.node_prizes);
  fill(ranked_edges, out.edge_prizes);
  return out;
}

double pcst_objective(const PrizeAssignment& prizes, std::span<const EntityId> nodes,
                      std::span<const TripleId> triples) {
  double value = 0.0;
  for (auto v : nodes) value += prizes.node_prizes.at(v);
  for (auto t : triples) value += prizes.edge_prizes.at(t) - prizes.edge_cost;
  return value;
}

bool is_connected(const TextualGraph& graph) {
  const std::size_t n = graph.num_entities();
  if (n == 0) return false;
  std::vector<char> seen(n, 0);
  std::vector<EntityId> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    auto v = stack.back();
    stack.pop_back();
    for (const auto& inc : graph.neighbors(v)) {
      if (!seen[inc.other]) {
        seen[inc.other] = 1;
        ++count;
        stack.push_back(inc.other);
      }
    }
  }
  return count == n;
}

RetrievedSubgraph solve_pcst(const TextualGraph& graph, const PrizeAssignment& prizes, PcstOptions options) {
  if (graph.empty()) throw ParameterError("solve_pcst: graph is empty");
  check_prizes(graph, prizes);
  if (graph.num_entities() <= options.exact_node_limit && graph.num_entities() < 63) {
    return finish(graph, prizes, solve_exact(graph, prizes));
  }
  std::vector<char> all(graph.num_entities(), 1);
  return finish(graph, prizes, solve_heuristic(graph, prizes, all));
}

RetrievedSubgraph run_subgraph_expert(const Tensor& query, const TextualGraph& graph, const EmbeddingTable& table,
                                      const SubgraphExpertOptions& options) {
  if (graph.empty()) throw ParameterError("subgraph expert: graph is empty");
  const auto ranked_nodes = cosine_topk(query, table.nodes(), options.k);
  std::vector<ScoredId> ranked_edges;
  if (graph.num_triples() > 0) ranked_edges = cosine_topk(query, table.triples(), options.k);
  auto prizes = assign_prizes(ranked_nodes, ranked_edges, graph.num_entities(), graph.num_triples(), options.k,
                              options.edge_cost, options.prize_rule);
  if (!options.hop_radius) return solve_pcst(graph, prizes, options.pcst);

  // Restrict to the hop neighbourhood of prized elements, then solve there.
  auto eligible = hop_filter(graph, prizes, *options.hop_radius);
  std::vector<EntityId> keep_nodes;
  for (EntityId v = 0; v < graph.num_entities(); ++v) {
    if (eligible[v]) keep_nodes.push_back(v);
  }
  std::vector<TripleId> keep_triples;
  for (TripleId t = 0; t < graph.num_triples(); ++t) {
    if (eligible[graph.triple(t).head] && eligible[graph.triple(t).tail]) keep_triples.push_back(t);
  }
  auto local = induced_subgraph(graph, keep_nodes, keep_triples);
  PrizeAssignment local_prizes{{}, {}, prizes.edge_cost};
  for (auto v : local.node_map) local_prizes.node_prizes.push_back(prizes.node_prizes[v]);
  for (auto t : local.triple_map) local_prizes.edge_prizes.push_back(prizes.edge_prizes[t]);
  auto solved = solve_pcst(local.graph, local_prizes, options.pcst);

  std::vector<EntityId> nodes;
  for (auto v : solved.subgraph.node_map) nodes.push_back(local.node_map[v]);
  std::vector<TripleId> triples;
  for (auto t : solved.subgraph.triple_map) triples.push_back(local.triple_map[t]);
  RetrievedSubgraph out;
  out.subgraph = induced_subgraph(graph, nodes, triples);
  out.objective = pcst_objective(prizes, out.subgraph.node_map, out.subgraph.triple_map);
  return out;
}

nlohmann::json subgraph_to_json(const RetrievedSubgraph& result) {
  auto doc = graph_to_json(result.subgraph.graph);
  doc["objective"] = result.objective;
  doc["node_map"] = result.subgraph.node_map;
  doc["triple_map"] = result.subgraph.triple_map;
  return doc;
}

RetrievedSubgraph subgraph_from_json(const nlohmann::json& doc) {
  RetrievedSubgraph out;
  out.subgraph.graph = graph_from_json(doc);
  try {
    out.objective = doc.at("objective").get<double>();
    out.subgraph.node_map = doc.at("node_map").get<std::vector<EntityId>>();
    out.subgraph.triple_map = doc.at("triple_map").get<std::vector<TripleId>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("retrieved subgraph: ") + e.what());
  }
  if (out.subgraph.node_map.size() != out.subgraph.graph.num_entities() ||
      out.subgraph.triple_map.size() != out.subgraph.graph.num_triples()) {
    throw FormatError("retrieved subgraph: back-map sizes do not match the graph");
  }
  return out;
}

}  // namespace mixrag
