#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixrag/graph.hpp"
#include "mixrag/tensor.hpp"

namespace mixrag {

// Deterministic stand-in for a sentence encoder: signed feature hashing of
// token 1..3-grams followed by L2 normalization.
class HashEmbedder {
 public:
  HashEmbedder(std::size_t dim, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  Tensor embed(std::string_view text) const;
  std::vector<double> embed_values(std::string_view text) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Lowercased alphanumeric tokens; bytes >= 0x80 are kept as token characters.
std::vector<std::string> tokenize(std::string_view text);

enum class EmbeddingKind { node, relation, triple };

std::string_view kind_name(EmbeddingKind kind);

// Embeddings for every id of one graph, one matrix row per id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, Tensor nodes, Tensor relations, Tensor triples);

  std::size_t dim() const { return dim_; }
  const Tensor& nodes() const { return nodes_; }
  const Tensor& relations() const { return relations_; }
  const Tensor& triples() const { return triples_; }
  const Tensor& matrix(EmbeddingKind kind) const;

  Tensor node(EntityId id) const;
  Tensor relation(RelationId id) const;
  Tensor triple(TripleId id) const;

 private:
  std::size_t dim_ = 0;
  Tensor nodes_, relations_, triples_;
};

EmbeddingTable embed_graph(const HashEmbedder& embedder, const TextualGraph& graph);

// Text format: a `dim=<d> kind=<node|relation|triple>` header per section,
// then `<id> <f1> ... <fd>` rows. Values are written in shortest round-trip form.
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
void save_embeddings(const EmbeddingTable& table, EmbeddingKind kind, const std::filesystem::path& path);

// Reads one or more files whose sections together cover the graph.
EmbeddingTable load_embeddings(std::span<const std::filesystem::path> paths, const TextualGraph& graph);
EmbeddingTable load_embeddings(const std::filesystem::path& path, const TextualGraph& graph);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace mixrag
