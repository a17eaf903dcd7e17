#include <doctest.h>

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"
#include "mixrag/log.hpp"
#include "mixrag/ops.hpp"
#include "mixrag/subgraph_expert.hpp"
#include "support.hpp"

using namespace mixrag;
using testsupport::brute_force_pcst;

namespace {

PrizeAssignment prizes_for(const TextualGraph& g, std::vector<double> nodes, std::vector<double> edges, double c) {
  PrizeAssignment p;
  p.node_prizes = std::move(nodes);
  p.edge_prizes = edges.empty() ? std::vector<double>(g.num_triples(), 0.0) : std::move(edges);
  p.edge_cost = c;
  return p;
}

TextualGraph path3() {
  return TextualGraph({{0, "a"}, {1, "b"}, {2, "c"}}, {{0, "r"}}, {{0, 0, 1, {}}, {1, 0, 2, {}}});
}

void check_invariants(const TextualGraph& g, const PrizeAssignment& p, const RetrievedSubgraph& r) {
  CHECK(is_connected(r.subgraph.graph));
  CHECK(std::abs(pcst_objective(p, r.subgraph.node_map, r.subgraph.triple_map) - r.objective) <= 1e-9);
  for (std::size_t t = 0; t < r.subgraph.triple_map.size(); ++t) {
    const auto& src = g.triple(r.subgraph.triple_map[t]);
    const auto& loc = r.subgraph.graph.triple(t);
    CHECK(r.subgraph.node_map[loc.head] == src.head);
    CHECK(r.subgraph.node_map[loc.tail] == src.tail);
  }
}

Tensor unit(std::size_t d, std::size_t i) {
  std::vector<double> v(d, 0.0);
  v[i] = 1.0;
  return Tensor::vector(v);
}

}  // namespace

TEST_CASE("cosine_topk basic cases") {
  auto table = Tensor::matrix(3, 2, {0, 1, 1, 0, -1, 0});
  auto top = cosine_topk(Tensor::vector({1, 0}), table, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].id == 1);
  CHECK(top[0].similarity == doctest::Approx(1.0).epsilon(1e-15));

  auto ortho = Tensor::matrix(4, 3, {0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1});
  auto tied = cosine_topk(Tensor::vector({1, 0, 0}), ortho, 2);
  CHECK(tied == std::vector<ScoredId>{{0, 0.0}, {1, 0.0}});
}

TEST_CASE("cosine_topk equals an exhaustive sort") {
  Rng rng(5);
  auto table = normal_tensor(rng, {50, 8}, 1.0);
  auto q = normal_tensor(rng, {8}, 1.0);
  std::vector<ScoredId> all;
  for (std::size_t i = 0; i < 50; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      dot += q[j] * table.at(i, j);
      na += q[j] * q[j];
      nb += table.at(i, j) * table.at(i, j);
    }
    all.push_back({i, dot / std::sqrt(na * nb)});
  }
  std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.similarity > b.similarity || (a.similarity == b.similarity && a.id < b.id); });
  auto got = cosine_topk(q, table, 10);
  REQUIRE(got.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(got[i].id == all[i].id);
    CHECK(std::abs(got[i].similarity - all[i].similarity) < 1e-12);
  }
  CHECK(cosine_topk(q, table, 500).size() == 50);
}

TEST_CASE("linear rank prizes") {
  std::vector<ScoredId> nodes{{4, 0.9}, {1, 0.5}, {2, 0.1}};
  auto p = assign_prizes(nodes, {}, 6, 3, 3, 1.0);
  CHECK(p.node_prizes == std::vector<double>{0, 2, 1, 0, 3, 0});
  CHECK(p.edge_prizes == std::vector<double>{0, 0, 0});
  CHECK(p.edge_cost == 1.0);
}

TEST_CASE("prizes never increase with rank") {
  Rng rng(2);
  auto table = normal_tensor(rng, {30, 5}, 1.0);
  auto q = normal_tensor(rng, {5}, 1.0);
  for (auto rule : {PrizeRule::linear_rank, PrizeRule::similarity}) {
    auto ranked = cosine_topk(q, table, 12);
    auto p = assign_prizes(ranked, {}, 30, 0, 12, 1.0, rule);
    for (std::size_t r = 1; r < ranked.size(); ++r) CHECK(p.node_prizes[ranked[r - 1].id] >= p.node_prizes[ranked[r].id]);
    for (std::size_t v = 0; v < 30; ++v) {
      const bool listed = std::any_of(ranked.begin(), ranked.end(), [&](auto& s) { return s.id == v; });
      if (!listed) CHECK(p.node_prizes[v] == 0.0);
    }
  }
}

TEST_CASE("pcst trivial instances") {
  TextualGraph one({{0, "x"}}, {}, {});
  auto r = solve_pcst(one, prizes_for(one, {5}, {}, 1.0));
  CHECK(r.objective == 5.0);
  CHECK(r.subgraph.graph.num_entities() == 1);

  auto g = path3();
  auto zero = solve_pcst(g, prizes_for(g, {0, 0, 0}, {}, 1.0));
  CHECK(zero.objective == 0.0);
  CHECK(zero.subgraph.graph.num_entities() == 1);
  CHECK(zero.subgraph.graph.num_triples() == 0);
}

TEST_CASE("pcst on the three-node path takes everything") {
  auto g = path3();
  auto p = prizes_for(g, {3, 0, 3}, {}, 1.0);
  auto r = solve_pcst(g, p);
  CHECK(r.objective == 4.0);
  CHECK(r.objective == brute_force_pcst(g, p));
  CHECK(r.subgraph.node_map == std::vector<EntityId>{0, 1, 2});
}

TEST_CASE("pcst matches brute force and keeps invariants") {
  Rng rng(42);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.below(7);
    auto g = testsupport::random_graph(rng, n, rng.below(4));
    std::vector<double> np(n), ep(g.num_triples());
    for (auto& v : np) v = rng.uniform() * 5.0;
    for (auto& v : ep) v = rng.uniform() < 0.5 ? 0.0 : rng.uniform() * 3.0;
    const double costs[] = {0.5, 1.0, 2.0};
    auto p = prizes_for(g, np, ep, costs[rng.below(3)]);
    auto r = solve_pcst(g, p);
    CHECK(std::abs(r.objective - brute_force_pcst(g, p)) <= 1e-9);
    check_invariants(g, p, r);

    // Raising an included node's prize cannot lower the optimum.
    auto raised = p;
    raised.node_prizes[r.subgraph.node_map[0]] += 0.7;
    CHECK(solve_pcst(g, raised).objective >= r.objective - 1e-12);

    // Huge edge cost leaves the best single node.
    auto pricey = p;
    pricey.edge_cost = 1e6;
    CHECK(solve_pcst(g, pricey).objective == *std::max_element(np.begin(), np.end()));
  }
}

TEST_CASE("heuristic path keeps connectivity and objective consistency") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = testsupport::random_graph(rng, 20 + rng.below(20), 10);
    std::vector<double> np(g.num_entities()), ep(g.num_triples());
    for (auto& v : np) v = rng.uniform() < 0.3 ? rng.uniform() * 5.0 : 0.0;
    auto p = prizes_for(g, np, ep, 1.0);
    auto r = solve_pcst(g, p);
    check_invariants(g, p, r);
    CHECK(r.objective >= *std::max_element(np.begin(), np.end()) - 1e-12);
  }
}

TEST_CASE("subgraph expert returns a singleton when one node is similar") {
  const std::size_t d = 4;
  TextualGraph g({{0, "a"}, {1, "b"}, {2, "c"}, {3, "d"}}, {{0, "r"}}, {{0, 0, 1, {}}, {1, 0, 2, {}}, {2, 0, 3, {}}});
  const Tensor nodes[] = {unit(d, 1), unit(d, 2), unit(d, 0), unit(d, 1)};
  const Tensor rel[] = {unit(d, 3)};
  const Tensor tri[] = {unit(d, 3), unit(d, 3), unit(d, 3)};
  EmbeddingTable table(d, ops::stack_rows(nodes), ops::stack_rows(rel), ops::stack_rows(tri));
  SubgraphExpertOptions opts;
  opts.k = 4;
  opts.prize_rule = PrizeRule::similarity;
  auto r = run_subgraph_expert(unit(d, 0), g, table, opts);
  CHECK(r.subgraph.node_map == std::vector<EntityId>{2});
  CHECK(r.objective == doctest::Approx(4.0));
}

TEST_CASE("subgraph expert keeps a similar star") {
  const std::size_t d = 4;
  TextualGraph g({{0, "hub"}, {1, "l1"}, {2, "l2"}, {3, "l3"}, {4, "l4"}, {5, "l5"}}, {{0, "r"}},
                 {{0, 0, 1, {}}, {0, 0, 2, {}}, {0, 0, 3, {}}, {0, 0, 4, {}}, {0, 0, 5, {}}});
  const double s = 1.0 / std::sqrt(2.0);
  const Tensor nodes[] = {unit(d, 0), Tensor::vector({s, s, 0, 0}), Tensor::vector({s, 0, s, 0}), unit(d, 1),
                          unit(d, 2), unit(d, 2)};
  const Tensor rel[] = {unit(d, 3)};
  std::vector<Tensor> tri(5, unit(d, 3));
  EmbeddingTable table(d, ops::stack_rows(nodes), ops::stack_rows(rel), ops::stack_rows(tri));
  SubgraphExpertOptions opts;
  opts.k = 6;
  opts.edge_cost = 0.1;
  opts.prize_rule = PrizeRule::similarity;
  auto r = run_subgraph_expert(unit(d, 0), g, table, opts);
  CHECK(r.subgraph.node_map == std::vector<EntityId>{0, 1, 2});

  auto ranked_nodes = cosine_topk(unit(d, 0), table.nodes(), 6);
  auto ranked_edges = cosine_topk(unit(d, 0), table.triples(), 6);
  auto p = assign_prizes(ranked_nodes, ranked_edges, 6, 5, 6, 0.1, PrizeRule::similarity);
  CHECK(std::abs(r.objective - brute_force_pcst(g, p)) <= 1e-9);
}

TEST_CASE("subgraph expert clamps k") {
  Rng rng(3);
  auto g = testsupport::random_graph(rng, 5, 1);
  auto table = embed_graph(HashEmbedder(16, 7), g);
  SubgraphExpertOptions opts;
  opts.k = 50;
  std::vector<std::string> warnings;
  auto prev = set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
  auto r = run_subgraph_expert(HashEmbedder(16, 7).embed("node 3"), g, table, opts);
  set_warning_handler(prev);
  CHECK(is_connected(r.subgraph.graph));
  CHECK(r.objective >= 5.0);
}

TEST_CASE("hop radius keeps results near prized nodes") {
  Rng rng(6);
  auto g = testsupport::random_graph(rng, 14, 3);
  auto table = embed_graph(HashEmbedder(16, 7), g);
  SubgraphExpertOptions opts;
  opts.k = 3;
  opts.hop_radius = 1;
  auto r = run_subgraph_expert(HashEmbedder(16, 7).embed("node 5"), g, table, opts);
  CHECK(is_connected(r.subgraph.graph));
}

TEST_CASE("retrieved subgraph JSON round-trip") {
  auto g = path3();
  auto r = solve_pcst(g, prizes_for(g, {3, 0, 3}, {}, 1.0));
  auto back = subgraph_from_json(subgraph_to_json(r));
  CHECK(back.objective == r.objective);
  CHECK(back.subgraph.node_map == r.subgraph.node_map);
  CHECK(back.subgraph.triple_map == r.subgraph.triple_map);
  CHECK(back.subgraph.graph == r.subgraph.graph);
}
