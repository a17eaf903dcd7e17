#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mixrag/dataset.hpp"
#include "mixrag/model.hpp"

namespace mixrag {

struct LossWeights {
  double entity = 1.0;
  double relation = 1.0;
  double gate = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-2;
  std::size_t batch_size = 16;
  double tau0 = 1.0;
  double anneal_rate = 0.9;
  double tau_min = 0.05;
  std::uint64_t seed = 0;
  LossWeights lambda;
  bool noise = true;  // Gumbel noise during training steps
  std::optional<std::filesystem::path> checkpoint;

  void validate() const;
};

// -log of the probability mass on `gold`. Throws ContractError on an empty set.
Tensor set_cross_entropy(const Tensor& probabilities, const std::vector<std::size_t>& gold);

// Cross entropies use each expert's noise-free selection distribution.
// lambda_e CE(p_entity, gold entities) + lambda_r CE(p_relation, gold triples)
// + lambda_g CE(alpha, best expert). Terms without supervision or output are skipped.
Tensor surrogate_loss(const TrainExample& example, const ForwardResult& result, const LossWeights& lambda);

struct TrainReport {
  std::vector<double> loss_curve;  // mean loss per epoch, measured during the epoch
  double final_tau = 0.0;
  std::size_t steps = 0;
};

// Plain mini-batch gradient descent with per-epoch temperature annealing.
TrainReport train(const TrainConfig& config, const std::vector<TrainExample>& corpus, const GraphStore& graphs,
                  Model& model);

struct ParameterCheck {
  std::string name;
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double max_relative_error() const;
};

enum class CheckObjective {
  surrogate,     // the training loss
  soft_norm,     // ||p_soft||^2
};

struct GradCheckOptions {
  double step = 1e-5;
  CheckObjective objective = CheckObjective::surrogate;
  ExpertSet active = ExpertSet::all();
  std::set<std::string> skip;  // parameter names reported as zero error without checking
};

// Relative error |a - n| / max(|a|, |n|, 1e-6) per element, maximized per parameter.
double relative_error(double analytic, double numeric);

// Analytic gradients against central differences; noise off, temperature fixed.
GradCheckReport grad_check(Model& model, const TrainExample& example, const GraphData& data,
                           const GradCheckOptions& options = {});

}  // namespace mixrag
