#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixrag/graph.hpp"
#include "mixrag/moe_gate.hpp"
#include "mixrag/semantic_experts.hpp"
#include "mixrag/subgraph_expert.hpp"
#include "mixrag/tensor.hpp"

namespace mixrag {

inline constexpr std::string_view kDefaultTaskInstruction =
    "Answer the question using only the provided graph evidence.";
inline constexpr std::string_view kNoEvidence = "No graph evidence retrieved.";
inline constexpr std::size_t kDefaultEvidenceBudget = 4000;

struct EvidenceItem {
  enum class Kind { entity, triple };
  Kind kind = Kind::entity;
  std::size_t id = 0;  // entity or triple id of the source graph
  double weight = 0.0;

  friend bool operator==(const EvidenceItem&, const EvidenceItem&) = default;
};

// Descending weight, then ascending id; entities before triples on a full tie.
void sort_evidence(std::vector<EvidenceItem>& items);

// Merges the three retrieval results. Entity items weigh alpha_entity * p,
// triple items alpha_relation * p, and each subgraph triple alpha_subgraph / |E_S|.
// A subgraph without triples contributes its single node. Duplicates are summed.
std::vector<EvidenceItem> collect_evidence(const std::optional<ExpertOutput>& entity,
                                           const std::optional<ExpertOutput>& relation,
                                           const std::optional<RetrievedSubgraph>& subgraph,
                                           const GateWeights& gate);

// "head SEP relation SEP tail." (SEP is a spaced U+2014) per triple and "Entity: text." per entity, ordered by
// weight and truncated at the last whole line within `budget` characters.
std::string textualize(const TextualGraph& graph, std::vector<EvidenceItem> items,
                       std::size_t budget = kDefaultEvidenceBudget);

// Unweighted form: ranked items keep their weights, subgraph triples weigh 1 / |E_S|.
std::string textualize(const TextualGraph& graph, const RetrievedSubgraph* subgraph,
                       std::span<const RankedItem> top_entities, std::span<const RankedItem> top_triples,
                       std::size_t budget = kDefaultEvidenceBudget);

struct PromptBundle {
  std::string task_instruction;
  std::vector<Tensor> soft_prompt;
  std::string evidence_text;
  std::string query;
  // Ranked gate weights; rendered as a preamble by text-only backends.
  std::vector<std::pair<std::string, double>> gate_weights;

  // task + "\n" + evidence + "\n" + query, with empty parts dropped.
  std::string serialized() const;
};

PromptBundle assemble(std::string task, std::vector<Tensor> soft, std::string evidence, std::string query);

struct Answer {
  std::string text;
  std::string raw;
  double latency_ms = 0.0;
};

struct BackendCapabilities {
  bool accepts_soft_prompt = false;
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual BackendCapabilities capabilities() const = 0;
  virtual Answer generate(const PromptBundle& bundle) const = 0;
};

// Deterministic in-process backend. Answers with the first evidence entity
// that does not merely restate the question; "unknown" otherwise.
class MockBackend final : public GenerationBackend {
 public:
  // Zero means "do not check".
  explicit MockBackend(std::size_t expected_vectors = 0, std::size_t expected_dim = 0)
      : expected_vectors_(expected_vectors), expected_dim_(expected_dim) {}

  BackendCapabilities capabilities() const override { return {true}; }
  Answer generate(const PromptBundle& bundle) const override;

 private:
  std::size_t expected_vectors_;
  std::size_t expected_dim_;
};

// Lowercased content tokens of a question minus wh-words and stopwords.
std::vector<std::string> query_focus(std::string_view query);

// Answer text chosen by the mock policy for a given evidence block and query.
std::string mock_answer(std::string_view evidence, std::string_view query);

struct HttpBackendConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/chat/completions
  std::string model = "mixrag";
  std::optional<std::string> api_key;  // defaults to MIXRAG_LLM_API_KEY
  std::chrono::milliseconds timeout{30000};
};

// Chat-completions client. Soft prompts cannot travel over the wire, so the
// gate weights are sent as an "Evidence priority" line instead.
class HttpBackend final : public GenerationBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  BackendCapabilities capabilities() const override { return {false}; }
  Answer generate(const PromptBundle& bundle) const override;

  std::string request_body(const PromptBundle& bundle) const;
  static std::string parse_response(std::string_view body);

 private:
  HttpBackendConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

}  // namespace mixrag
