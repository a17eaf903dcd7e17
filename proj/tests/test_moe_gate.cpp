#include <doctest.h>

#include "mixrag/errors.hpp"
#include "mixrag/moe_gate.hpp"
#include "mixrag/ops.hpp"
#include "support.hpp"

using namespace mixrag;
using testsupport::random_tensor;
using testsupport::values;

namespace {

using Outputs = std::array<std::optional<Tensor>, kNumExperts>;

GateParams unit_keys(Tensor weight) {
  GateParams p;
  p.weight = std::move(weight);
  p.keys = {Tensor::vector({1, 0, 0}), Tensor::vector({0, 1, 0}), Tensor::vector({0, 0, 1})};
  return p;
}

GateWeights manual(ExpertSet active, std::vector<double> probs) {
  GateWeights w;
  w.active = active;
  const auto members = active.members();
  for (std::size_t j = 0; j < members.size(); ++j) w.alpha[static_cast<std::size_t>(members[j])] = probs[j];
  w.probabilities = Tensor::vector(std::move(probs));
  return w;
}

// phi_i = q^T W e_i with loops.
double phi_oracle(const GateParams& p, const Tensor& q, std::size_t i) {
  double s = 0.0;
  for (std::size_t a = 0; a < q.numel(); ++a)
    for (std::size_t b = 0; b < p.keys[i].numel(); ++b) s += q[a] * p.weight.at(a, b) * p.keys[i][b];
  return s;
}

}  // namespace

TEST_CASE("expert sets parse and enumerate") {
  CHECK(ExpertSet::parse("all") == ExpertSet::all());
  auto er = ExpertSet::parse("entity+relation");
  CHECK(er.contains(ExpertId::entity));
  CHECK(er.contains(ExpertId::relation));
  CHECK_FALSE(er.contains(ExpertId::subgraph));
  CHECK(er.to_string() == "entity+relation");
  CHECK_THROWS_AS(ExpertSet::parse("oracle"), ParameterError);
  auto subsets = ExpertSet::non_empty_subsets();
  CHECK(subsets.size() == 7);
  CHECK(subsets.front().size() == 1);
  CHECK(subsets.back() == ExpertSet::all());
}

TEST_CASE("zero gate matrix gives uniform weights") {
  auto p = unit_keys(Tensor::zeros({3, 3}));
  auto w = gate(p, Tensor::vector({0.3, -2, 5}), ExpertSet::all());
  for (double a : w.alpha) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto pair = gate(p, Tensor::vector({1, 1, 1}), ExpertSet::parse("entity+subgraph"));
  CHECK(pair.of(ExpertId::entity) == 0.5);
  CHECK(pair.of(ExpertId::relation) == 0.0);
}

TEST_CASE("single active expert gets weight one") {
  Rng rng(1);
  GateParams p = GateParams::random(3, 3, rng, 1.0);
  for (auto id : kAllExperts) {
    auto w = gate(p, random_tensor(rng, {3}, 1.0, false), ExpertSet::of(id));
    CHECK(w.of(id) == 1.0);
  }
  CHECK_THROWS_AS(gate(p, Tensor::vector({1, 2, 3}), ExpertSet{}), ParameterError);
}

TEST_CASE("closed-form gate weights") {
  auto p = unit_keys(Tensor::identity(3));
  auto w = gate(p, Tensor::vector({std::log(2.0), 0, 0}), ExpertSet::all());
  CHECK(std::abs(w.of(ExpertId::entity) - 0.5) < 1e-15);
  CHECK(std::abs(w.of(ExpertId::relation) - 0.25) < 1e-15);
  CHECK(std::abs(w.of(ExpertId::subgraph) - 0.25) < 1e-15);
  CHECK(w.argmax() == ExpertId::entity);
}

TEST_CASE("masking renormalizes over the remaining experts") {
  Rng rng(2);
  GateParams p = GateParams::random(4, 4, rng, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_tensor(rng, {4}, 1.0, false);
    for (auto combo : ExpertSet::non_empty_subsets()) {
      auto w = gate(p, q, combo);
      double z = 0.0;
      for (auto id : combo.members()) z += std::exp(phi_oracle(p, q, static_cast<std::size_t>(id)));
      double total = 0.0;
      for (auto id : kAllExperts) {
        const double expect = combo.contains(id) ? std::exp(phi_oracle(p, q, static_cast<std::size_t>(id))) / z : 0.0;
        CHECK(std::abs(w.of(id) - expect) <= 1e-12);
        total += w.of(id);
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("argmax survives query scaling") {
  Rng rng(3);
  GateParams p = GateParams::random(5, 5, rng, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto q = random_tensor(rng, {5}, 1.0, false);
    const auto base = gate(p, q, ExpertSet::all()).argmax();
    for (double lambda : {0.5, 2.0}) CHECK(gate(p, ops::scale(q, lambda), ExpertSet::all()).argmax() == base);
  }
}

TEST_CASE("fuse cases") {
  Outputs outs{Tensor::vector({1, 2}), Tensor::vector({3, 4}), Tensor::vector({5, 6})};
  CHECK(values(fuse(manual(ExpertSet::all(), {0, 1, 0}), outs)) == values(*outs[1]));

  Outputs same{Tensor::vector({0.7, -1}), Tensor::vector({0.7, -1}), Tensor::vector({0.7, -1})};
  auto v = fuse(manual(ExpertSet::all(), {0.2, 0.3, 0.5}), same);
  CHECK(std::abs(v[0] - 0.7) < 1e-15);
  CHECK(std::abs(v[1] + 1.0) < 1e-15);

  Rng rng(4);
  GateParams p = GateParams::random(3, 3, rng, 1.0);
  auto w = gate(p, random_tensor(rng, {3}, 1.0, false), ExpertSet::all());
  Outputs r{random_tensor(rng, {4}, 1.0, false), random_tensor(rng, {4}, 1.0, false), random_tensor(rng, {4}, 1.0, false)};
  auto fused = fuse(w, r);
  for (std::size_t k = 0; k < 4; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += w.alpha[i] * (*r[i])[k];
    CHECK(std::abs(fused[k] - s) <= 1e-12);
  }

  Outputs missing{Tensor::vector({1, 2}), std::nullopt, Tensor::vector({5, 6})};
  CHECK_THROWS_AS(fuse(manual(ExpertSet::all(), {0.2, 0.3, 0.5}), missing), ContractError);
}

TEST_CASE("single-expert fusion equals that expert's projection") {
  Rng rng(5);
  ExpertProjectionBank bank;
  for (auto& m : bank.maps) m = Affine::random(3, 2, rng, 0.5);
  GateParams p = GateParams::random(3, 3, rng, 1.0);
  auto out = random_tensor(rng, {3}, 1.0, false);
  for (auto id : kAllExperts) {
    Outputs lifted;
    lifted[static_cast<std::size_t>(id)] = bank.lift(id, out);
    auto w = gate(p, random_tensor(rng, {3}, 1.0, false), ExpertSet::of(id));
    CHECK(values(fuse(w, lifted)) == values(bank.lift(id, out)));
  }
}

TEST_CASE("gate and key gradients match finite differences") {
  Rng rng(6);
  GateParams p = GateParams::random(4, 3, rng, 0.7);
  auto q = random_tensor(rng, {4}, 1.0, false);
  Outputs outs{random_tensor(rng, {2}, 1.0, false), random_tensor(rng, {2}, 1.0, false), random_tensor(rng, {2}, 1.0, false)};
  std::vector<Tensor> params{p.weight, p.keys[0], p.keys[1], p.keys[2]};
  const double err = testsupport::max_gradient_error(
      [&](const std::vector<Tensor>&) { return ops::squared_norm(fuse(gate(p, q, ExpertSet::all()), outs)); }, params);
  CHECK(err <= 1e-4);
}

TEST_CASE("dynamic keys use the expert outputs") {
  Rng rng(7);
  GateParams p = GateParams::random(3, 2, rng, 1.0);
  p.dynamic_keys = true;
  auto q = random_tensor(rng, {3}, 1.0, false);
  CHECK_THROWS_AS(gate(p, q, ExpertSet::all()), ContractError);
  Outputs outs{Tensor::vector({1, 0}), Tensor::vector({0, 1}), std::nullopt};
  CHECK_THROWS_AS(gate(p, q, ExpertSet::all(), &outs), ContractError);
  auto w = gate(p, q, ExpertSet::parse("entity+relation"), &outs);
  auto proj = ops::matmul(q, p.weight);
  const double z = std::exp(proj[0]) + std::exp(proj[1]);
  CHECK(std::abs(w.of(ExpertId::entity) - std::exp(proj[0]) / z) < 1e-12);
  std::vector<NamedTensor> named;
  p.collect(named);
  CHECK(named.size() == 1);
}
