#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mixrag/embedding.hpp"
#include "mixrag/eval.hpp"
#include "mixrag/graph.hpp"
#include "mixrag/graph_encoder.hpp"
#include "mixrag/ops.hpp"
#include "mixrag/rng.hpp"
#include "mixrag/subgraph_expert.hpp"
#include "mixrag/tensor.hpp"
#include "mixrag/training.hpp"

namespace testsupport {

using mixrag::Tensor;

inline Tensor random_tensor(mixrag::Rng& rng, mixrag::Shape shape, double scale = 1.0, bool grad = true) {
  return mixrag::normal_tensor(rng, std::move(shape), scale, grad);
}

// Central differences of `f` against backward(), over every element of every input.
inline double max_gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double h = 1e-5) {
  auto grads = mixrag::backward(f(inputs));
  double worst = 0.0;
  for (auto& x : inputs) {
    const auto analytic = grads.of(x);
    std::vector<double> values(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      x.assign(values);
      double up, down;
      {
        mixrag::NoGradGuard guard;
        up = f(inputs).item();
      }
      values[i] = keep - h;
      x.assign(values);
      {
        mixrag::NoGradGuard guard;
        down = f(inputs).item();
      }
      values[i] = keep;
      x.assign(values);
      worst = std::max(worst, mixrag::relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

// Random connected graph: a spanning tree plus `extra` edges, one relation per triple.
inline mixrag::TextualGraph random_graph(mixrag::Rng& rng, std::size_t nodes, std::size_t extra,
                                         const std::string& prefix = "node") {
  std::vector<mixrag::Entity> entities;
  for (std::size_t i = 0; i < nodes; ++i) entities.push_back({i, prefix + " " + std::to_string(i)});
  std::vector<mixrag::Triple> triples;
  for (std::size_t v = 1; v < nodes; ++v) triples.push_back({rng.below(v), 0, v, std::nullopt});
  for (std::size_t e = 0; e < extra && nodes > 1; ++e) {
    const auto a = rng.below(nodes), b = rng.below(nodes);
    if (a != b) triples.push_back({a, 0, b, std::nullopt});
  }
  std::vector<mixrag::RelationType> relations{{0, "linked to"}};
  for (std::size_t i = 0; i < triples.size(); ++i) {
    relations.push_back({i + 1, "relation " + std::to_string(i)});
    triples[i].relation = i + 1;
  }
  return mixrag::TextualGraph(std::move(entities), std::move(relations), std::move(triples));
}

inline mixrag::EmbeddingTable random_table(mixrag::Rng& rng, const mixrag::TextualGraph& g, std::size_t d) {
  return mixrag::EmbeddingTable(d, mixrag::normal_tensor(rng, {g.num_entities(), d}, 1.0),
                                mixrag::normal_tensor(rng, {g.num_relations(), d}, 1.0),
                                mixrag::normal_tensor(rng, {g.num_triples(), d}, 1.0));
}

// Best objective over every connected (node set, edge subset) pair. Exponential;
// meant for graphs with a handful of nodes and edges.
inline double brute_force_pcst(const mixrag::TextualGraph& g, const mixrag::PrizeAssignment& prizes) {
  const std::size_t n = g.num_entities();
  double best = -1e300;
  for (std::size_t nodes = 1; nodes < (std::size_t{1} << n); ++nodes) {
    std::vector<std::size_t> inside;
    for (std::size_t t = 0; t < g.num_triples(); ++t) {
      const auto& tr = g.triple(t);
      if ((nodes >> tr.head & 1) && (nodes >> tr.tail & 1)) inside.push_back(t);
    }
    double node_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < n; ++v)
      if (nodes >> v & 1) {
        node_sum += prizes.node_prizes[v];
        ++count;
      }
    for (std::size_t edges = 0; edges < (std::size_t{1} << inside.size()); ++edges) {
      std::vector<std::size_t> parent(n);
      for (std::size_t v = 0; v < n; ++v) parent[v] = v;
      std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
        return parent[v] == v ? v : parent[v] = find(parent[v]);
      };
      double total = node_sum;
      std::size_t merges = 0;
      for (std::size_t i = 0; i < inside.size(); ++i) {
        if (!(edges >> i & 1)) continue;
        const auto& tr = g.triple(inside[i]);
        total += prizes.edge_prizes[inside[i]] - prizes.edge_cost;
        const auto a = find(tr.head), b = find(tr.tail);
        if (a != b) {
          parent[a] = b;
          ++merges;
        }
      }
      if (merges + 1 == count) best = std::max(best, total);
    }
  }
  return best;
}

// Random encoder, graph and features for encoder tests.
struct Instance {
  mixrag::TextualGraph graph;
  Tensor nodes, edges, query;
  mixrag::GraphEncoder encoder;
};

inline Instance make_instance(mixrag::Rng& rng, std::size_t n, std::size_t extra, std::size_t d = 5, std::size_t dh = 4,
                       std::size_t layers = 2) {
  Instance in;
  in.graph = testsupport::random_graph(rng, n, extra);
  in.nodes = mixrag::normal_tensor(rng, {n, d}, 1.0);
  in.edges = mixrag::normal_tensor(rng, {in.graph.num_triples(), d}, 1.0);
  in.query = mixrag::normal_tensor(rng, {d}, 1.0);
  mixrag::EncoderConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden_dim = dh;
  in.encoder = mixrag::GraphEncoder::random(cfg, d, d, d, rng, 0.5);
  return in;
}

// Same graph with node ids permuted by `perm` (new id of old node v is perm[v]).
inline Instance relabel(const Instance& in, const std::vector<std::size_t>& perm) {
  const auto& g = in.graph;
  std::vector<mixrag::Entity> ents(g.num_entities());
  for (mixrag::EntityId v = 0; v < g.num_entities(); ++v) ents[perm[v]] = {perm[v], g.entity(v).text};
  std::vector<mixrag::Triple> trs;
  for (const auto& t : g.triples()) trs.push_back({perm[t.head], t.relation, perm[t.tail], t.edge_text});
  std::vector<mixrag::RelationType> rels(g.relations().begin(), g.relations().end());
  Instance out = in;
  out.graph = mixrag::TextualGraph(std::move(ents), std::move(rels), std::move(trs));
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t v = 0; v < perm.size(); ++v) inverse[perm[v]] = v;
  out.nodes = mixrag::ops::gather_rows(in.nodes, inverse);
  return out;
}


// Small model widths that keep finite-difference checks fast.
inline mixrag::ModelConfig tiny_config(std::size_t dim = 16) {
  mixrag::ModelConfig c;
  c.dim = dim;
  c.hidden_dim = 4;
  c.layers = 2;
  c.prompt_dim = 3;
  c.projector_hidden = 4;
  c.k = 5;
  return c;
}

// Synthetic corpus with its store, embedded at the model width.
struct Toy {
  mixrag::SyntheticCorpus corpus;
  mixrag::GraphStore store;
};

inline Toy make_toy(const mixrag::ModelConfig& config, std::size_t graphs = 3, std::size_t nodes = 8,
                    std::size_t queries = 12, std::uint64_t seed = 1, double one_hop = 1.0) {
  mixrag::SyntheticSpec spec;
  spec.num_graphs = graphs;
  spec.nodes_per_graph = nodes;
  spec.num_queries = queries;
  spec.seed = seed;
  spec.one_hop_fraction = one_hop;
  Toy toy;
  toy.corpus = mixrag::generate_synthetic(spec);
  toy.store = mixrag::build_store(toy.corpus, mixrag::HashEmbedder(config.dim, config.embed_seed));
  return toy;
}

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mixrag-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace testsupport
