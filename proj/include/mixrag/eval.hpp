#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mixrag/config.hpp"
#include "mixrag/dataset.hpp"
#include "mixrag/model.hpp"
#include "mixrag/prompt.hpp"
#include "mixrag/training.hpp"

namespace mixrag {

// Lowercase, trim, collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view text);

double compute_accuracy(std::span<const std::string> predictions, std::span<const std::string> golds);
bool compute_hit_at_1(std::string_view prediction, std::span<const std::string> answers);

enum class Metric { accuracy, hit_at_1 };
std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

struct EvalConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  Metric metric = Metric::accuracy;
  bool noise = false;  // Gumbel noise at inference
  ExpertSet active = ExpertSet::all();
  double degraded_threshold = 0.10;  // backend failure fraction
};

struct EvalRecord {
  std::string id;
  std::string question;
  std::string prediction;
  std::vector<std::string> answers;
  bool correct = false;  // normalized match with the first answer
  bool hit = false;      // normalized match with any answer
  std::array<double, kNumExperts> gate{};
  std::optional<QueryClass> query_class;
  std::optional<std::string> error;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  double accuracy = 0.0;
  double hit_at_1 = 0.0;
  std::size_t backend_failures = 0;
  bool degraded = false;
  Metric metric = Metric::accuracy;
  std::string active;

  double headline() const { return metric == Metric::accuracy ? accuracy : hit_at_1; }
};

// Recomputes the aggregates from the records.
void recompute_aggregates(EvalReport& report, double degraded_threshold = 0.10);

// embed query -> experts -> gate -> fuse -> prompt -> generate -> score, per example.
EvalReport run_eval(const EvalConfig& config, const std::vector<EvalExample>& dataset, const GraphStore& graphs,
                    const Model& model, const GenerationBackend& backend);

struct AblationRow {
  ExpertSet combo;
  EvalReport report;
};

std::vector<AblationRow> run_ablation(const EvalConfig& config, const std::vector<EvalExample>& dataset,
                                      const GraphStore& graphs, const Model& model, const GenerationBackend& backend,
                                      std::span<const ExpertSet> combos);

// Report files: JSON lines of records, a summary JSON, and a gate-weight CSV.
nlohmann::json record_to_json(const EvalRecord& r);
nlohmann::json summary_to_json(const EvalReport& report);
void write_report(const EvalReport& report, const nlohmann::json& config_snapshot, const std::filesystem::path& dir);
std::string gate_csv(const EvalReport& report);
// Mean gate weight per query class, rows simple/complex/all.
std::string gate_by_class_csv(const EvalReport& report);
std::string ablation_table(std::span<const AblationRow> rows);

struct SyntheticSpec {
  std::size_t num_graphs = 50;
  std::size_t nodes_per_graph = 15;
  std::size_t branching = 3;
  std::size_t num_queries = 200;
  double one_hop_fraction = 1.0;
  double holdout_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<std::pair<std::string, TextualGraph>> graphs;
  std::vector<TrainExample> train;
  std::vector<EvalExample> eval;
  std::vector<TrainExample> eval_gold;  // gold ids for the held-out queries
};

// Random labelled trees; "What is the R of X?" and "What is the R2 of the R1 of X?" queries.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

GraphStore build_store(const SyntheticCorpus& corpus, const HashEmbedder& embedder);

struct SweepPoint {
  std::size_t layers = 0;
  double metric = 0.0;
  TrainReport training;
};

// Trains and evaluates one model per encoder depth.
std::vector<SweepPoint> layer_sweep(const ModelConfig& model_config, std::uint64_t model_seed,
                                    const TrainConfig& train_config, const EvalConfig& eval_config,
                                    const std::vector<TrainExample>& corpus, const std::vector<EvalExample>& dataset,
                                    const GraphStore& graphs, const GenerationBackend& backend,
                                    std::span<const std::size_t> depths);

// Settings from a key-value config, starting from the defaults.
ModelConfig model_config_from(const Config& c);
TrainConfig train_config_from(const Config& c);
EvalConfig eval_config_from(const Config& c);
SyntheticSpec synthetic_spec_from(const Config& c);
HttpBackendConfig http_config_from(const Config& c);

}  // namespace mixrag
