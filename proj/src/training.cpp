#include "mixrag/training.hpp"

#include <algorithm>
#include <cmath>

#include "mixrag/errors.hpp"
#include "mixrag/ops.hpp"

namespace mixrag {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("train: learning_rate must be finite and non-negative");
  }
  if (epochs < 1) throw ParameterError("train: epochs must be at least 1");
  if (batch_size < 1) throw ParameterError("train: batch_size must be at least 1");
  if (!(tau0 > 0.0) || !(tau_min > 0.0) || !(anneal_rate > 0.0 && anneal_rate <= 1.0)) {
    throw ParameterError("train: invalid temperature schedule");
  }
}

Tensor set_cross_entropy(const Tensor& probabilities, const std::vector<std::size_t>& gold) {
  if (gold.empty()) throw ContractError("cross entropy: gold set is empty");
  for (auto g : gold) {
    if (g >= probabilities.numel()) {
      throw RangeError("cross entropy: gold index " + std::to_string(g) + " outside " +
                       std::to_string(probabilities.numel()) + " classes");
    }
  }
  return ops::scale(ops::log(ops::sum(ops::take(probabilities, gold))), -1.0);
}

Tensor surrogate_loss(const TrainExample& example, const ForwardResult& result, const LossWeights& lambda) {
  if (example.gold_entities.empty() && example.gold_triples.empty()) {
    throw ContractError("surrogate loss: example has no gold entities or triples");
  }
  Tensor loss = Tensor::scalar(0.0);
  if (lambda.entity != 0.0 && !example.gold_entities.empty() && result.entity) {
    loss = ops::add(loss, ops::scale(set_cross_entropy(result.entity->probabilities, example.gold_entities), lambda.entity));
  }
  if (lambda.relation != 0.0 && !example.gold_triples.empty() && result.relation) {
    loss = ops::add(loss,
                    ops::scale(set_cross_entropy(result.relation->probabilities, example.gold_triples), lambda.relation));
  }
  if (lambda.gate != 0.0 && example.best_expert && result.gate.active.contains(*example.best_expert)) {
    const auto members = result.gate.active.members();
    const auto pos = static_cast<std::size_t>(
        std::find(members.begin(), members.end(), *example.best_expert) - members.begin());
    loss = ops::add(loss, ops::scale(set_cross_entropy(result.gate.probabilities, {pos}), lambda.gate));
  }
  return loss;
}

namespace {

struct Prepared {
  const GraphData* data = nullptr;
  Tensor query;
  RetrievedSubgraph subgraph;
};

void check_gold(const TrainExample& e, const TextualGraph& g) {
  for (auto v : e.gold_entities) {
    if (v >= g.num_entities()) {
      throw ReferentialIntegrityError("example '" + e.query + "': gold entity " + std::to_string(v) +
                                      " not in graph '" + e.graph + "'");
    }
  }
  for (auto t : e.gold_triples) {
    if (t >= g.num_triples()) {
      throw ReferentialIntegrityError("example '" + e.query + "': gold triple " + std::to_string(t) +
                                      " not in graph '" + e.graph + "'");
    }
  }
}

std::vector<Prepared> prepare(const std::vector<TrainExample>& corpus, const GraphStore& graphs, const Model& model) {
  NoGradGuard no_grad;
  HashEmbedder embedder(model.config.dim, model.config.embed_seed);
  std::vector<Prepared> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus) {
    Prepared p;
    p.data = &graphs.at(e.graph);
    check_gold(e, p.data->graph);
    p.query = embedder.embed(e.query);
    p.subgraph = retrieve_subgraph(model, p.query, *p.data);
    out.push_back(std::move(p));
  }
  return out;
}

[[noreturn]] void report_nan(const std::vector<NamedTensor>& params, const Gradients& grads, std::size_t step) {
  for (const auto& [name, t] : params) {
    if (!t.all_finite()) throw NumericError("non-finite value in parameter '" + name + "' at step " + std::to_string(step));
  }
  for (const auto& [name, t] : params) {
    if (!grads.of(t).all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + name + "' at step " + std::to_string(step));
    }
  }
  throw NumericError("non-finite loss at step " + std::to_string(step) + " with finite parameters");
}

}  // namespace

TrainReport train(const TrainConfig& config, const std::vector<TrainExample>& corpus, const GraphStore& graphs,
                  Model& model) {
  config.validate();
  if (corpus.empty()) throw ParameterError("train: corpus is empty");

  model.selector.tau0 = config.tau0;
  model.selector.anneal_rate = config.anneal_rate;
  model.selector.tau_min = config.tau_min;
  model.selector.reset();
  model.config.tau0 = config.tau0;
  model.config.anneal_rate = config.anneal_rate;
  model.config.tau_min = config.tau_min;

  const auto prepared = prepare(corpus, graphs, model);
  auto params = model.parameters();
  std::vector<std::vector<double>> accum(params.size());

  TrainReport report;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(mix_seed(config.seed, "shuffle/" + std::to_string(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t p = 0; p < params.size(); ++p) accum[p].assign(params[p].tensor.numel(), 0.0);

      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto& prep = prepared[idx];
        Rng rng(mix_seed(config.seed, "noise/" + std::to_string(epoch) + "/" + std::to_string(idx)));
        ForwardOptions fo;
        fo.noise = config.noise;
        fo.rng = &rng;
        fo.cached_subgraph = &prep.subgraph;
        auto result = forward(model, prep.query, *prep.data, fo);
        Tensor loss = surrogate_loss(corpus[idx], result, config.lambda);
        auto grads = backward(loss);
        if (!std::isfinite(loss.item())) report_nan(params, grads, report.steps);
        epoch_loss += loss.item();
        for (std::size_t p = 0; p < params.size(); ++p) {
          if (!grads.contains(params[p].tensor)) continue;
          auto g = grads.of(params[p].tensor).data();
          for (std::size_t j = 0; j < g.size(); ++j) accum[p][j] += g[j];
        }
      }

      const double step = config.learning_rate / static_cast<double>(end - start);
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (step == 0.0) break;
        auto values = params[p].tensor.data();
        std::vector<double> next(values.begin(), values.end());
        for (std::size_t j = 0; j < next.size(); ++j) next[j] -= step * accum[p][j];
        params[p].tensor.assign(next);
      }
      for (const auto& [name, t] : params) {
        if (!t.all_finite()) throw NumericError("non-finite value in parameter '" + name + "' after step " +
                                                std::to_string(report.steps));
      }
      ++report.steps;
    }
    report.loss_curve.push_back(epoch_loss / static_cast<double>(corpus.size()));
    model.selector.anneal();
  }
  report.final_tau = model.selector.tau;
  if (config.checkpoint) save_checkpoint(model, *config.checkpoint);
  return report;
}

double relative_error(double analytic, double numeric) {
  const double diff = std::fabs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
}

double GradCheckReport::max_relative_error() const {
  double m = 0.0;
  for (const auto& p : parameters) m = std::max(m, p.max_relative_error);
  return m;
}

GradCheckReport grad_check(Model& model, const TrainExample& example, const GraphData& data,
                           const GradCheckOptions& options) {
  check_gold(example, data.graph);
  HashEmbedder embedder(model.config.dim, model.config.embed_seed);
  const Tensor query = embedder.embed(example.query);
  RetrievedSubgraph subgraph;
  {
    NoGradGuard no_grad;
    subgraph = retrieve_subgraph(model, query, data);
  }
  ForwardOptions fo;
  fo.active = options.active;
  fo.noise = false;
  fo.cached_subgraph = &subgraph;

  auto objective = [&]() {
    auto result = forward(model, query, data, fo);
    if (options.objective == CheckObjective::soft_norm) return ops::squared_norm(result.p_soft);
    return surrogate_loss(example, result, LossWeights{});
  };

  const auto grads = backward(objective());
  GradCheckReport report;
  NoGradGuard no_grad;
  for (auto& [name, t] : model.parameters()) {
    ParameterCheck check{name, 0.0, 0.0};
    if (options.skip.count(name)) {
      report.parameters.push_back(check);
      continue;
    }
    const auto analytic = grads.of(t);
    std::vector<double> values(t.data().begin(), t.data().end());
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + options.step;
      t.assign(values);
      const double up = objective().item();
      values[j] = saved - options.step;
      t.assign(values);
      const double down = objective().item();
      values[j] = saved;
      t.assign(values);
      const double numeric = (up - down) / (2.0 * options.step);
      check.max_relative_error = std::max(check.max_relative_error, relative_error(analytic[j], numeric));
      check.max_abs_analytic = std::max(check.max_abs_analytic, std::fabs(analytic[j]));
    }
    report.parameters.push_back(check);
  }
  return report;
}

}  // namespace mixrag
