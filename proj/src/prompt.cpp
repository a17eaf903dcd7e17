#include "mixrag/prompt.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "mixrag/embedding.hpp"
#include "mixrag/errors.hpp"
#include "mixrag/log.hpp"

namespace mixrag {

namespace {

constexpr std::string_view kSep = " \xE2\x80\x94 ";  // spaced U+2014
constexpr std::string_view kEntityPrefix = "Entity: ";

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> words = {
      "what", "which", "who", "whom", "whose", "where", "when", "why", "how", "is",   "are",  "was",
      "were", "the",   "a",   "an",   "of",    "in",    "on",   "at",  "to",  "for",  "does", "do",
      "did",  "by",    "with", "and", "or",    "that",  "this", "be",  "it",  "its",  "from", "as",
  };
  return words;
}

std::string line_for(const TextualGraph& graph, const EvidenceItem& item) {
  if (item.kind == EvidenceItem::Kind::entity) {
    return std::string(kEntityPrefix) + graph.entity(item.id).text + ".";
  }
  const auto& t = graph.triple(item.id);
  std::string out = graph.entity(t.head).text;
  out += kSep;
  out += graph.relation(t.relation).text;
  out += kSep;
  out += graph.entity(t.tail).text;
  out += '.';
  return out;
}

// Fraction of an entity's tokens that appear in `focus`.
double overlap(std::string_view text, const std::set<std::string, std::less<>>& focus) {
  auto tokens = tokenize(text);
  if (tokens.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& t : tokens) hit += focus.count(t);
  return static_cast<double>(hit) / static_cast<double>(tokens.size());
}

std::string_view strip_period(std::string_view s) {
  if (!s.empty() && s.back() == '.') s.remove_suffix(1);
  return s;
}

}  // namespace

void sort_evidence(std::vector<EvidenceItem>& items) {
  std::stable_sort(items.begin(), items.end(), [](const EvidenceItem& a, const EvidenceItem& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    if (a.id != b.id) return a.id < b.id;
    return a.kind == EvidenceItem::Kind::entity && b.kind == EvidenceItem::Kind::triple;
  });
}

std::vector<EvidenceItem> collect_evidence(const std::optional<ExpertOutput>& entity,
                                           const std::optional<ExpertOutput>& relation,
                                           const std::optional<RetrievedSubgraph>& subgraph,
                                           const GateWeights& gate) {
  std::map<std::pair<int, std::size_t>, double> merged;
  auto add = [&](EvidenceItem::Kind kind, std::size_t id, double w) {
    merged[{static_cast<int>(kind), id}] += w;
  };
  if (entity && gate.active.contains(ExpertId::entity)) {
    for (const auto& item : entity->top_items) add(EvidenceItem::Kind::entity, item.id, gate.of(ExpertId::entity) * item.weight);
  }
  if (relation && gate.active.contains(ExpertId::relation)) {
    for (const auto& item : relation->top_items) {
      add(EvidenceItem::Kind::triple, item.id, gate.of(ExpertId::relation) * item.weight);
    }
  }
  if (subgraph && gate.active.contains(ExpertId::subgraph)) {
    const auto& s = subgraph->subgraph;
    const double a = gate.of(ExpertId::subgraph);
    if (!s.triple_map.empty()) {
      for (auto t : s.triple_map) add(EvidenceItem::Kind::triple, t, a / static_cast<double>(s.triple_map.size()));
    } else {
      for (auto v : s.node_map) add(EvidenceItem::Kind::entity, v, a / static_cast<double>(s.node_map.size()));
    }
  }
  std::vector<EvidenceItem> items;
  for (const auto& [key, w] : merged) {
    items.push_back({static_cast<EvidenceItem::Kind>(key.first), key.second, w});
  }
  sort_evidence(items);
  return items;
}

std::string textualize(const TextualGraph& graph, std::vector<EvidenceItem> items, std::size_t budget) {
  if (items.empty()) return std::string(kNoEvidence);
  sort_evidence(items);
  std::string out;
  std::size_t kept = 0;
  for (const auto& item : items) {
    std::string line = line_for(graph, item);
    const std::size_t needed = out.size() + (out.empty() ? 0 : 1) + line.size();
    if (needed > budget) break;
    if (!out.empty()) out += '\n';
    out += line;
    ++kept;
  }
  if (kept == 0) {
    warn("textualize: budget of " + std::to_string(budget) + " chars is smaller than the first evidence line");
  }
  return out;
}

std::string textualize(const TextualGraph& graph, const RetrievedSubgraph* subgraph,
                       std::span<const RankedItem> top_entities, std::span<const RankedItem> top_triples,
                       std::size_t budget) {
  std::map<std::pair<int, std::size_t>, double> merged;
  for (const auto& e : top_entities) merged[{0, e.id}] += e.weight;
  for (const auto& t : top_triples) merged[{1, t.id}] += t.weight;
  if (subgraph != nullptr) {
    const auto& s = subgraph->subgraph;
    if (!s.triple_map.empty()) {
      for (auto t : s.triple_map) merged[{1, t}] += 1.0 / static_cast<double>(s.triple_map.size());
    } else {
      for (auto v : s.node_map) merged[{0, v}] += 1.0 / static_cast<double>(s.node_map.size());
    }
  }
  std::vector<EvidenceItem> items;
  for (const auto& [key, w] : merged) items.push_back({static_cast<EvidenceItem::Kind>(key.first), key.second, w});
  return textualize(graph, std::move(items), budget);
}

std::string PromptBundle::serialized() const {
  std::string out;
  for (const std::string* part : {&task_instruction, &evidence_text, &query}) {
    if (part->empty()) continue;
    if (!out.empty()) out += '\n';
    out += *part;
  }
  return out;
}

PromptBundle assemble(std::string task, std::vector<Tensor> soft, std::string evidence, std::string query) {
  if (query.empty()) throw ParameterError("assemble: query must be non-empty");
  PromptBundle b;
  b.task_instruction = std::move(task);
  b.soft_prompt = std::move(soft);
  b.evidence_text = std::move(evidence);
  b.query = std::move(query);
  return b;
}

std::vector<std::string> query_focus(std::string_view query) {
  std::vector<std::string> out;
  for (auto& t : tokenize(query)) {
    if (!stopwords().count(t)) out.push_back(std::move(t));
  }
  return out;
}

std::string mock_answer(std::string_view evidence, std::string_view query) {
  const auto focus_list = query_focus(query);
  const std::set<std::string, std::less<>> focus(focus_list.begin(), focus_list.end());
  const auto all = tokenize(query);
  const std::set<std::string, std::less<>> query_tokens(all.begin(), all.end());

  // An entity that only restates the question is not an answer.
  auto restates = [&](std::string_view text) {
    auto tokens = tokenize(text);
    return std::all_of(tokens.begin(), tokens.end(), [&](const std::string& t) { return query_tokens.count(t) > 0; });
  };

  std::size_t begin = 0;
  while (begin < evidence.size()) {
    auto end = evidence.find('\n', begin);
    if (end == std::string_view::npos) end = evidence.size();
    std::string_view line = evidence.substr(begin, end - begin);
    begin = end + 1;

    if (line.starts_with(kEntityPrefix)) {
      auto text = strip_period(line.substr(kEntityPrefix.size()));
      if (overlap(text, focus) > 0.0 && !restates(text)) return std::string(text);
      continue;
    }
    auto first = line.find(kSep);
    auto last = line.rfind(kSep);
    if (first == std::string_view::npos || first == last) continue;
    std::string_view head = line.substr(0, first);
    std::string_view tail = strip_period(line.substr(last + kSep.size()));
    const double oh = overlap(head, focus);
    const double ot = overlap(tail, focus);
    // Answer the endpoint the question does not already name.
    if (oh > ot && !restates(tail) && oh > 0.0) return std::string(tail);
    if (ot > oh && !restates(head) && ot > 0.0) return std::string(head);
  }
  return "unknown";
}

Answer MockBackend::generate(const PromptBundle& bundle) const {
  if (expected_vectors_ != 0 && bundle.soft_prompt.size() != expected_vectors_) {
    throw ContractError("mock backend: expected " + std::to_string(expected_vectors_) + " soft prompt vectors, got " +
                        std::to_string(bundle.soft_prompt.size()));
  }
  for (const auto& v : bundle.soft_prompt) {
    if (expected_dim_ != 0 && v.numel() != expected_dim_) {
      throw DimensionError("mock backend: soft prompt vector " + shape_string(v.shape()) + ", expected width " +
                           std::to_string(expected_dim_));
    }
  }
  Answer a;
  a.text = mock_answer(bundle.evidence_text, bundle.query);

  // Echo the part boundaries within the serialized prompt.
  nlohmann::json parts = nlohmann::json::array();
  std::size_t offset = 0;
  bool any = false;
  for (auto [name, part] : {std::pair<const char*, const std::string*>{"task", &bundle.task_instruction},
                            {"evidence", &bundle.evidence_text},
                            {"query", &bundle.query}}) {
    if (part->empty()) continue;
    if (any) ++offset;
    parts.push_back({{"part", name}, {"begin", offset}, {"end", offset + part->size()}});
    offset += part->size();
    any = true;
  }
  a.raw = nlohmann::json{{"parts", parts}, {"soft_vectors", bundle.soft_prompt.size()}, {"answer", a.text}}.dump();
  a.latency_ms = 0.0;
  return a;
}

}  // namespace mixrag
