#include "mixrag/dataset.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"

namespace mixrag {

using nlohmann::json;

namespace {

const char* class_name(QueryClass c) { return c == QueryClass::simple ? "simple" : "complex"; }

template <typename T, typename Parse>
std::vector<T> load_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void save_jsonl(const std::vector<T>& items, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& item : items) out << to_json(item).dump() << '\n';
}

}  // namespace

json to_json(const TrainExample& e) {
  json j = {{"query", e.query}, {"graph", e.graph}, {"gold_entities", e.gold_entities}, {"gold_triples", e.gold_triples}};
  if (e.best_expert) j["best_expert"] = std::string(expert_name(*e.best_expert));
  return j;
}

TrainExample train_example_from_json(const json& j) {
  TrainExample e;
  e.query = j.at("query").get<std::string>();
  e.graph = j.at("graph").get<std::string>();
  e.gold_entities = j.value("gold_entities", std::vector<EntityId>{});
  e.gold_triples = j.value("gold_triples", std::vector<TripleId>{});
  if (j.contains("best_expert") && !j.at("best_expert").is_null()) {
    const auto name = j.at("best_expert").get<std::string>();
    e.best_expert = parse_expert(name);
    if (!e.best_expert) throw FormatError("unknown best_expert '" + name + "'");
  }
  if (e.query.empty()) throw FormatError("empty query");
  if (e.gold_entities.empty() && e.gold_triples.empty()) throw FormatError("example has no gold entities or triples");
  return e;
}

json to_json(const EvalExample& e) {
  json j = {{"id", e.id}, {"question", e.question}, {"graph", e.graph}, {"answers", e.answers}};
  if (e.query_class) j["query_class"] = class_name(*e.query_class);
  return j;
}

EvalExample eval_example_from_json(const json& j) {
  EvalExample e;
  e.id = j.at("id").get<std::string>();
  e.question = j.at("question").get<std::string>();
  e.graph = j.at("graph").get<std::string>();
  e.answers = j.at("answers").get<std::vector<std::string>>();
  if (e.answers.empty()) throw FormatError("example '" + e.id + "' has no answers");
  if (j.contains("query_class") && !j.at("query_class").is_null()) {
    const auto c = j.at("query_class").get<std::string>();
    if (c == "simple") {
      e.query_class = QueryClass::simple;
    } else if (c == "complex") {
      e.query_class = QueryClass::complex;
    } else {
      throw FormatError("unknown query_class '" + c + "'");
    }
  }
  return e;
}

std::vector<TrainExample> load_train_corpus(const std::filesystem::path& path) {
  return load_jsonl<TrainExample>(path, train_example_from_json);
}

std::vector<EvalExample> load_eval_set(const std::filesystem::path& path) {
  return load_jsonl<EvalExample>(path, eval_example_from_json);
}

void save_train_corpus(const std::vector<TrainExample>& corpus, const std::filesystem::path& path) {
  save_jsonl(corpus, path);
}

void save_eval_set(const std::vector<EvalExample>& set, const std::filesystem::path& path) { save_jsonl(set, path); }

void GraphStore::add(std::string id, TextualGraph graph, EmbeddingTable table) {
  graphs_[std::move(id)] = GraphData{std::move(graph), std::move(table)};
}

void GraphStore::add(std::string id, TextualGraph graph, const HashEmbedder& embedder) {
  auto table = embed_graph(embedder, graph);
  add(std::move(id), std::move(graph), std::move(table));
}

const GraphData& GraphStore::at(const std::string& id) const {
  auto it = graphs_.find(id);
  if (it == graphs_.end()) throw ReferentialIntegrityError("unknown graph id '" + id + "'");
  return it->second;
}

GraphStore GraphStore::load_directory(const std::filesystem::path& dir, const HashEmbedder& embedder) {
  if (!std::filesystem::is_directory(dir)) throw DataError("graph directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  GraphStore store;
  for (const auto& file : files) {
    auto graph = load_graph(file);
    auto emb = file;
    emb.replace_extension(".emb");
    if (std::filesystem::exists(emb)) {
      auto table = load_embeddings(emb, graph);
      if (table.dim() != embedder.dim()) {
        throw FormatError(emb.string() + ": embedding width " + std::to_string(table.dim()) + " but model uses " +
                          std::to_string(embedder.dim()));
      }
      store.add(file.stem().string(), std::move(graph), std::move(table));
    } else {
      store.add(file.stem().string(), std::move(graph), embedder);
    }
  }
  return store;
}

void GraphStore::save_directory(const std::filesystem::path& dir, bool with_embeddings) const {
  std::filesystem::create_directories(dir);
  for (const auto& [id, data] : graphs_) {
    save_graph(data.graph, dir / (id + ".json"));
    if (with_embeddings) save_embeddings(data.table, dir / (id + ".emb"));
  }
}

}  // namespace mixrag
