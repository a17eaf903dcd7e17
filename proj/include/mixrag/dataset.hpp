#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixrag/embedding.hpp"
#include "mixrag/model.hpp"
#include "mixrag/moe_gate.hpp"

namespace mixrag {

struct TrainExample {
  std::string query;
  std::string graph;
  std::vector<EntityId> gold_entities;
  std::vector<TripleId> gold_triples;
  std::optional<ExpertId> best_expert;
};

enum class QueryClass { simple, complex };

struct EvalExample {
  std::string id;
  std::string question;
  std::string graph;
  std::vector<std::string> answers;
  std::optional<QueryClass> query_class;
};

nlohmann::json to_json(const TrainExample& e);
TrainExample train_example_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalExample& e);
EvalExample eval_example_from_json(const nlohmann::json& j);

// JSON lines; errors name the file and line.
std::vector<TrainExample> load_train_corpus(const std::filesystem::path& path);
std::vector<EvalExample> load_eval_set(const std::filesystem::path& path);
void save_train_corpus(const std::vector<TrainExample>& corpus, const std::filesystem::path& path);
void save_eval_set(const std::vector<EvalExample>& set, const std::filesystem::path& path);

// Graphs addressed by id, each with its embedding table.
class GraphStore {
 public:
  void add(std::string id, TextualGraph graph, EmbeddingTable table);
  void add(std::string id, TextualGraph graph, const HashEmbedder& embedder);
  const GraphData& at(const std::string& id) const;
  bool contains(const std::string& id) const { return graphs_.count(id) > 0; }
  std::size_t size() const { return graphs_.size(); }
  const std::map<std::string, GraphData>& all() const { return graphs_; }

  // Loads every `<id>.json` graph in `dir`; `<id>.emb` files are used when
  // present, otherwise the graph is embedded with `embedder`.
  static GraphStore load_directory(const std::filesystem::path& dir, const HashEmbedder& embedder);
  void save_directory(const std::filesystem::path& dir, bool with_embeddings) const;

 private:
  std::map<std::string, GraphData> graphs_;
};

}  // namespace mixrag
