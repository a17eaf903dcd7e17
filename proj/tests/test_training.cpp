#include <doctest.h>

#include <limits>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"
#include "mixrag/ops.hpp"
#include "mixrag/training.hpp"
#include "support.hpp"

using namespace mixrag;
using testsupport::values;

namespace {

ForwardResult with_entity_probs(std::vector<double> p) {
  ForwardResult r;
  ExpertOutput out;
  out.probabilities = Tensor(Shape{p.size()}, p, true);
  out.weights = out.probabilities;
  r.entity = out;
  r.active = ExpertSet::of(ExpertId::entity);
  r.gate.active = r.active;
  r.gate.probabilities = Tensor::vector({1.0});
  return r;
}

std::vector<std::vector<double>> snapshot(const Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(values(p.tensor));
  return out;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("set cross entropy") {
  auto p = Tensor::vector({0.1, 0.2, 0.3, 0.4});
  CHECK(set_cross_entropy(p, {3}).item() == doctest::Approx(-std::log(0.4)).epsilon(1e-15));
  CHECK(set_cross_entropy(p, {0, 2}).item() == doctest::Approx(-std::log(0.4)).epsilon(1e-15));
  CHECK_THROWS_AS(set_cross_entropy(p, {}), ContractError);
  CHECK_THROWS_AS(set_cross_entropy(p, {4}), RangeError);
}

TEST_CASE("surrogate loss closed forms") {
  TrainExample ex;
  ex.gold_entities = {1};
  LossWeights only_entity{1.0, 0.0, 0.0};
  CHECK(surrogate_loss(ex, with_entity_probs({0, 1, 0}), only_entity).item() == 0.0);
  CHECK(std::abs(surrogate_loss(ex, with_entity_probs({0.25, 0.25, 0.25, 0.25}), only_entity).item() - std::log(4.0)) <
        1e-15);

  TrainExample none;
  CHECK_THROWS_AS(surrogate_loss(none, with_entity_probs({1.0}), only_entity), ContractError);
}

TEST_CASE("surrogate loss mixed case matches a scalar recomputation") {
  ForwardResult r;
  ExpertOutput ent, rel;
  ent.probabilities = Tensor::vector({0.1, 0.5, 0.15, 0.25});
  rel.probabilities = Tensor::vector({0.6, 0.3, 0.1});
  r.entity = ent;
  r.relation = rel;
  r.active = ExpertSet::parse("entity+subgraph");
  r.gate.active = r.active;
  r.gate.probabilities = Tensor::vector({0.7, 0.3});
  TrainExample ex;
  ex.gold_entities = {1, 3};
  ex.gold_triples = {2};
  ex.best_expert = ExpertId::subgraph;
  LossWeights lambda{0.5, 2.0, 1.5};
  const double expect = -0.5 * std::log(0.5 + 0.25) - 2.0 * std::log(0.1) - 1.5 * std::log(0.3);
  CHECK(std::abs(surrogate_loss(ex, r, lambda).item() - expect) <= 1e-10);

  // An inactive best expert contributes nothing.
  ex.best_expert = ExpertId::relation;
  const double without_gate = -0.5 * std::log(0.75) - 2.0 * std::log(0.1);
  CHECK(std::abs(surrogate_loss(ex, r, lambda).item() - without_gate) <= 1e-10);
}

TEST_CASE("training one example lowers its loss") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  std::vector<TrainExample> one{toy.corpus.train.front()};
  auto model = Model::init(cfg, 3);
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 1;
  tc.learning_rate = 1e-2;
  auto report = train(tc, one, toy.store, model);
  CHECK(report.steps == 200);
  CHECK(report.loss_curve.back() < report.loss_curve.front());
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto model = Model::init(cfg, 3);
  const auto before = snapshot(model);
  auto tc = quick(3);
  tc.learning_rate = 0.0;
  train(tc, toy.corpus.train, toy.store, model);
  CHECK(snapshot(model) == before);
}

TEST_CASE("training is deterministic") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto a = Model::init(cfg, 3), b = Model::init(cfg, 3);
  auto ra = train(quick(4), toy.corpus.train, toy.store, a);
  auto rb = train(quick(4), toy.corpus.train, toy.store, b);
  CHECK(ra.loss_curve == rb.loss_curve);
  CHECK(snapshot(a) == snapshot(b));

  auto other = quick(4);
  other.seed = 6;
  auto c = Model::init(cfg, 3);
  CHECK(train(other, toy.corpus.train, toy.store, c).loss_curve != ra.loss_curve);
}

TEST_CASE("temperature after training follows the schedule") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto model = Model::init(cfg, 3);
  auto tc = quick(7);
  tc.tau0 = 0.8;
  tc.anneal_rate = 0.5;
  tc.tau_min = 0.05;
  auto report = train(tc, toy.corpus.train, toy.store, model);
  CHECK(report.final_tau == std::max(0.8 * std::pow(0.5, 7.0), 0.05));
  CHECK(model.selector.tau == report.final_tau);
}

TEST_CASE("non-finite parameters are named") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto model = Model::init(cfg, 3);
  std::vector<double> bad(model.entity_scorer.weight.numel(), std::numeric_limits<double>::quiet_NaN());
  model.entity_scorer.weight.assign(bad);
  try {
    train(quick(1), toy.corpus.train, toy.store, model);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("entity.W_r") != std::string::npos);
  }
}

TEST_CASE("bad training settings are rejected") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto model = Model::init(cfg, 3);
  auto tc = quick(1);
  tc.epochs = 0;
  CHECK_THROWS_AS(train(tc, toy.corpus.train, toy.store, model), ParameterError);
  CHECK_THROWS_AS(train(quick(1), {}, toy.store, model), ParameterError);
  auto bad = toy.corpus.train;
  bad[0].gold_entities = {999};
  CHECK_THROWS_AS(train(quick(1), bad, toy.store, model), ReferentialIntegrityError);
}

TEST_CASE("gradient check on the linear path") {
  auto cfg = testsupport::tiny_config(8);
  auto toy = testsupport::make_toy(cfg, 1, 5, 4);
  auto model = Model::init(cfg, 11);
  const auto& ex = toy.corpus.train.front();
  GradCheckOptions opts;
  opts.active = ExpertSet::parse("entity+relation");
  auto report = grad_check(model, ex, toy.store.at(ex.graph), opts);
  CHECK(report.max_relative_error() <= 1e-6);
}

TEST_CASE("gradient check through the encoder") {
  auto cfg = testsupport::tiny_config(8);
  auto toy = testsupport::make_toy(cfg, 1, 5, 4);
  auto model = Model::init(cfg, 12);
  const auto& ex = toy.corpus.train.front();
  GradCheckOptions opts;
  opts.objective = CheckObjective::soft_norm;
  auto report = grad_check(model, ex, toy.store.at(ex.graph), opts);
  CHECK(report.max_relative_error() <= 1e-4);
  bool saw_encoder = false;
  for (const auto& p : report.parameters)
    if (p.name.starts_with("encoder.layer1")) saw_encoder = saw_encoder || p.max_abs_analytic > 0.0;
  CHECK(saw_encoder);
}

TEST_CASE("parameters the loss does not reach report zero error") {
  auto cfg = testsupport::tiny_config(8);
  auto toy = testsupport::make_toy(cfg, 1, 5, 4);
  auto model = Model::init(cfg, 13);
  const auto& ex = toy.corpus.train.front();
  auto report = grad_check(model, ex, toy.store.at(ex.graph));
  std::size_t frozen = 0;
  for (const auto& p : report.parameters) {
    if (p.name.starts_with("encoder.") || p.name.starts_with("projector.") || p.name.starts_with("bank.")) {
      CHECK(p.max_relative_error == 0.0);
      CHECK(p.max_abs_analytic == 0.0);
      ++frozen;
    }
  }
  CHECK(frozen > 0);
  CHECK(report.max_relative_error() <= 1e-4);
}

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("checkpoint round-trip") {
  auto cfg = testsupport::tiny_config();
  auto toy = testsupport::make_toy(cfg);
  auto model = Model::init(cfg, 3);
  train(quick(2), toy.corpus.train, toy.store, model);
  testsupport::TempDir dir("ckpt");
  save_checkpoint(model, dir / "m.json");
  auto back = load_checkpoint(dir / "m.json");
  CHECK(snapshot(back) == snapshot(model));
  CHECK(back.selector.tau == model.selector.tau);
  CHECK(back.selector.steps == model.selector.steps);
  CHECK(config_to_json(back.config) == config_to_json(model.config));

  auto names = model.parameters();
  CHECK(names[0].name == "entity.W_r");
  CHECK(names[1].name == "relation.W_r");
  CHECK(names[2].name == "relation.W_t");

  auto doc = checkpoint_to_json(model);
  doc["parameters"]["entity.W_r"]["shape"] = {1, 1};
  CHECK_THROWS_AS(checkpoint_from_json(doc), FormatError);
}

TEST_CASE("trained entity expert ranks the planted gold entity first") {
  SyntheticSpec spec;
  spec.seed = 1;
  auto corpus = generate_synthetic(spec);
  ModelConfig cfg;
  auto store = build_store(corpus, HashEmbedder(cfg.dim, cfg.embed_seed));
  auto model = Model::init(cfg, 1);
  TrainConfig tc;
  tc.seed = 1;
  train(tc, corpus.train, store, model);

  HashEmbedder embedder(cfg.dim, cfg.embed_seed);
  std::size_t hits = 0;
  NoGradGuard no_grad;
  for (const auto& ex : corpus.eval_gold) {
    const auto& data = store.at(ex.graph);
    ForwardOptions fo;
    fo.active = ExpertSet::of(ExpertId::entity);
    auto r = forward(model, embedder.embed(ex.query), data, fo);
    hits += r.entity->top_items.front().id == ex.gold_entities.front();
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(corpus.eval_gold.size());
  MESSAGE("held-out entity top-1: " << rate);
  CHECK(rate >= 0.95);
}
