#include "mixrag/graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"

namespace mixrag {

namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

template <typename T>
void check_dense(std::vector<T>& items, const char* what) {
  std::sort(items.begin(), items.end(), [](const T& a, const T& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].id != i) {
      throw FormatError(std::string(what) + " ids must be dense 0.." + std::to_string(items.size() - 1) +
                        ", found id " + std::to_string(items[i].id) + " at position " + std::to_string(i));
    }
    if (items[i].text.empty()) {
      throw FormatError(std::string(what) + " " + std::to_string(i) + " has empty text");
    }
  }
}

std::size_t get_index(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + "." + key + ": missing field");
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw FormatError(where + "." + key + ": expected non-negative integer");
  }
  return it->get<std::size_t>();
}

std::string get_text(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + "." + key + ": missing field");
  if (!it->is_string()) throw FormatError(where + "." + key + ": expected string");
  return it->get<std::string>();
}

const json& get_array(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw FormatError(std::string(key) + ": missing field");
  if (!it->is_array()) throw FormatError(std::string(key) + ": expected array");
  return *it;
}

}  // namespace

std::vector<std::vector<Incidence>> build_adjacency(std::size_t num_entities, std::span<const Triple> triples) {
  std::vector<std::vector<Incidence>> adj(num_entities);
  for (TripleId t = 0; t < triples.size(); ++t) {
    const auto& tr = triples[t];
    adj[tr.head].push_back({t, tr.tail, Direction::outgoing});
    if (tr.tail != tr.head) adj[tr.tail].push_back({t, tr.head, Direction::incoming});
  }
  return adj;
}

TextualGraph::TextualGraph(std::vector<Entity> entities, std::vector<RelationType> relations,
                           std::vector<Triple> triples, std::size_t* duplicates_removed)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  check_dense(entities_, "entity");
  check_dense(relations_, "relation");
  std::set<std::tuple<EntityId, RelationId, EntityId, std::optional<std::string>>> seen;
  std::size_t dropped = 0;
  triples_.reserve(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    auto& t = triples[i];
    if (t.head >= entities_.size() || t.tail >= entities_.size() || t.relation >= relations_.size()) {
      std::ostringstream msg;
      msg << "triple " << i << " (" << t.head << ", " << t.relation << ", " << t.tail
          << ") references a missing " << (t.relation >= relations_.size() ? "relation" : "entity");
      throw ReferentialIntegrityError(msg.str());
    }
    if (!seen.emplace(t.head, t.relation, t.tail, t.edge_text).second) {
      ++dropped;
      continue;
    }
    triples_.push_back(std::move(t));
  }
  if (duplicates_removed) *duplicates_removed = dropped;
  adjacency_ = build_adjacency(entities_.size(), triples_);
}

const Entity& TextualGraph::entity(EntityId id) const {
  if (id >= entities_.size()) throw RangeError("entity id " + std::to_string(id) + " out of range");
  return entities_[id];
}

const RelationType& TextualGraph::relation(RelationId id) const {
  if (id >= relations_.size()) throw RangeError("relation id " + std::to_string(id) + " out of range");
  return relations_[id];
}

const Triple& TextualGraph::triple(TripleId id) const {
  if (id >= triples_.size()) throw RangeError("triple id " + std::to_string(id) + " out of range");
  return triples_[id];
}

std::span<const Incidence> TextualGraph::neighbors(EntityId v) const {
  if (v >= adjacency_.size()) throw RangeError("entity id " + std::to_string(v) + " out of range");
  return adjacency_[v];
}

std::string TextualGraph::triple_text(TripleId id) const {
  const auto& t = triple(id);
  if (t.edge_text && !t.edge_text->empty()) return *t.edge_text;
  return entities_[t.head].text + " [SEP] " + relations_[t.relation].text + " [SEP] " + entities_[t.tail].text;
}

bool TextualGraph::adjacency_consistent() const { return build_adjacency(entities_.size(), triples_) == adjacency_; }

bool operator==(const TextualGraph& a, const TextualGraph& b) {
  auto same_items = [](const auto& x, const auto& y) {
    return std::equal(x.begin(), x.end(), y.begin(), y.end(),
                      [](const auto& p, const auto& q) { return p.id == q.id && p.text == q.text; });
  };
  return same_items(a.entities_, b.entities_) && same_items(a.relations_, b.relations_) && a.triples_ == b.triples_;
}

Subgraph induced_subgraph(const TextualGraph& g, std::span<const EntityId> node_ids,
                          std::span<const TripleId> triple_ids) {
  std::vector<EntityId> nodes(node_ids.begin(), node_ids.end());
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::vector<TripleId> trips(triple_ids.begin(), triple_ids.end());
  std::sort(trips.begin(), trips.end());
  trips.erase(std::unique(trips.begin(), trips.end()), trips.end());

  std::unordered_map<EntityId, EntityId> local;
  std::vector<Entity> entities;
  for (auto v : nodes) {
    const auto& e = g.entity(v);
    local.emplace(v, entities.size());
    entities.push_back({entities.size(), e.text});
  }
  std::vector<Triple> triples;
  for (auto t : trips) {
    const auto& tr = g.triple(t);
    auto h = local.find(tr.head);
    auto tl = local.find(tr.tail);
    if (h == local.end() || tl == local.end()) {
      throw ContractError("induced_subgraph: triple " + std::to_string(t) + " has an endpoint outside the node set");
    }
    triples.push_back({h->second, tr.relation, tl->second, tr.edge_text});
  }
  std::vector<RelationType> relations(g.relations().begin(), g.relations().end());
  return {TextualGraph(std::move(entities), std::move(relations), std::move(triples)), std::move(nodes),
          std::move(trips)};
}

nlohmann::json graph_to_json(const TextualGraph& g) {
  json nodes = json::array(), rels = json::array(), triples = json::array();
  for (const auto& e : g.entities()) nodes.push_back({{"id", e.id}, {"text", e.text}});
  for (const auto& r : g.relations()) rels.push_back({{"id", r.id}, {"text", r.text}});
  for (const auto& t : g.triples()) {
    json item = {{"head", t.head}, {"rel", t.relation}, {"tail", t.tail}};
    if (t.edge_text) item["text"] = *t.edge_text;
    triples.push_back(std::move(item));
  }
  return {{"nodes", std::move(nodes)}, {"relations", std::move(rels)}, {"triples", std::move(triples)}};
}

TextualGraph graph_from_json(const nlohmann::json& doc, LoadStats* stats) {
  if (!doc.is_object()) throw FormatError("graph document must be a JSON object");
  std::vector<Entity> entities;
  const auto& nodes = get_array(doc, "nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    entities.push_back({get_index(nodes[i], "id", where), get_text(nodes[i], "text", where)});
  }
  std::vector<RelationType> relations;
  if (doc.contains("relations")) {
    const auto& rels = get_array(doc, "relations");
    for (std::size_t i = 0; i < rels.size(); ++i) {
      const std::string where = "relations[" + std::to_string(i) + "]";
      relations.push_back({get_index(rels[i], "id", where), get_text(rels[i], "text", where)});
    }
  }
  std::vector<Triple> triples;
  if (doc.contains("triples")) {
    const auto& ts = get_array(doc, "triples");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const std::string where = "triples[" + std::to_string(i) + "]";
      Triple t{get_index(ts[i], "head", where), get_index(ts[i], "rel", where), get_index(ts[i], "tail", where), {}};
      if (ts[i].contains("text") && !ts[i]["text"].is_null()) t.edge_text = get_text(ts[i], "text", where);
      triples.push_back(std::move(t));
    }
  }
  std::size_t dropped = 0;
  TextualGraph g(std::move(entities), std::move(relations), std::move(triples), &dropped);
  if (stats) stats->duplicates_removed = dropped;
  return g;
}

TextualGraph load_graph(const std::filesystem::path& path, LoadStats* stats) {
  const std::string text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ":" + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  try {
    return graph_from_json(doc, stats);
  } catch (const DataError& e) {
    throw;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_graph(const TextualGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << graph_to_json(g).dump(1) << '\n';
}

TextualGraph convert_tsv(const std::filesystem::path& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto parse_id = [&](const std::string& field, std::size_t line_no, std::size_t& out) {
    if (field.empty() || !std::all_of(field.begin(), field.end(), [](unsigned char c) { return std::isdigit(c); })) {
      return false;
    }
    try {
      out = std::stoull(field);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": id out of range");
    }
    return true;
  };

  std::vector<Entity> entities;
  std::vector<RelationType> relations;
  std::map<std::string, RelationId> relation_ids;
  std::vector<Triple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() == 2) {
      std::size_t id = 0;
      if (!parse_id(fields[0], line_no, id)) continue;  // header
      entities.push_back({id, fields[1]});
    } else if (fields.size() == 3) {
      std::size_t src = 0, dst = 0;
      const bool ok_src = parse_id(fields[0], line_no, src);
      const bool ok_dst = parse_id(fields[2], line_no, dst);
      if (!ok_src && !ok_dst) continue;  // header
      if (!ok_src || !ok_dst) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": edge endpoints must be integers");
      }
      auto [it, inserted] = relation_ids.emplace(fields[1], relations.size());
      if (inserted) relations.push_back({it->second, fields[1]});
      triples.push_back({src, it->second, dst, {}});
    } else {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 2 or 3 tab-separated fields, got " +
                        std::to_string(fields.size()));
    }
  }
  std::size_t dropped = 0;
  TextualGraph g(std::move(entities), std::move(relations), std::move(triples), &dropped);
  if (stats) stats->duplicates_removed = dropped;
  return g;
}

}  // namespace mixrag
