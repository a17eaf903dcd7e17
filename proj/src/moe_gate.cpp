#include "mixrag/moe_gate.hpp"

#include "mixrag/errors.hpp"
#include "mixrag/ops.hpp"

namespace mixrag {

std::string_view expert_name(ExpertId id) {
  switch (id) {
    case ExpertId::entity: return "entity";
    case ExpertId::relation: return "relation";
    case ExpertId::subgraph: return "subgraph";
  }
  return "unknown";
}

std::optional<ExpertId> parse_expert(std::string_view name) {
  for (auto id : kAllExperts) {
    if (expert_name(id) == name) return id;
  }
  return std::nullopt;
}

ExpertSet ExpertSet::parse(std::string_view text) {
  if (text == "all") return all();
  ExpertSet set;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find_first_of("+,", start);
    if (end == std::string_view::npos) end = text.size();
    auto piece = text.substr(start, end - start);
    auto id = parse_expert(piece);
    if (!id) throw ParameterError("unknown expert '" + std::string(piece) + "'");
    set.insert(*id);
    start = end + 1;
  }
  return set;
}

std::vector<ExpertSet> ExpertSet::non_empty_subsets() {
  return {ExpertSet(0b001), ExpertSet(0b010), ExpertSet(0b100), ExpertSet(0b011),
          ExpertSet(0b101), ExpertSet(0b110), ExpertSet(0b111)};
}

std::size_t ExpertSet::size() const {
  std::size_t n = 0;
  for (auto id : kAllExperts) n += contains(id) ? 1 : 0;
  return n;
}

std::vector<ExpertId> ExpertSet::members() const {
  std::vector<ExpertId> out;
  for (auto id : kAllExperts) {
    if (contains(id)) out.push_back(id);
  }
  return out;
}

std::string ExpertSet::to_string() const {
  std::string out;
  for (auto id : members()) {
    if (!out.empty()) out += '+';
    out += expert_name(id);
  }
  return out.empty() ? "none" : out;
}

void GateParams::collect(std::vector<NamedTensor>& out) const {
  out.push_back({"gate.W_g", weight});
  if (dynamic_keys) return;
  for (auto id : kAllExperts) {
    out.push_back({"gate.key." + std::string(expert_name(id)), keys[static_cast<std::size_t>(id)]});
  }
}

GateParams GateParams::random(std::size_t query_dim, std::size_t key_dim, Rng& rng, double weight_scale) {
  GateParams p;
  p.weight = normal_tensor(rng, {query_dim, key_dim}, weight_scale, true);
  for (auto& key : p.keys) key = normal_tensor(rng, {key_dim}, 1.0, true);
  return p;
}

ExpertId GateWeights::argmax() const {
  ExpertId best = ExpertId::entity;
  double best_value = -1.0;
  for (auto id : kAllExperts) {
    if (active.contains(id) && of(id) > best_value) {
      best = id;
      best_value = of(id);
    }
  }
  return best;
}

Tensor gate_scores(const GateParams& params, const Tensor& query, ExpertSet active,
                   const std::array<std::optional<Tensor>, kNumExperts>* dynamic_keys) {
  if (active.empty()) throw ParameterError("gate: active expert set is empty");
  if (query.ndim() != 1 || query.numel() != params.weight.rows()) {
    throw DimensionError("gate: query " + shape_string(query.shape()) + " vs W_g " +
                         shape_string(params.weight.shape()));
  }
  if (params.dynamic_keys && dynamic_keys == nullptr) {
    throw ContractError("gate: dynamic keys requested but no expert outputs given");
  }
  Tensor projected = ops::matmul(query, params.weight);  // [d_key]
  std::vector<Tensor> keys;
  for (auto id : active.members()) {
    const auto i = static_cast<std::size_t>(id);
    if (params.dynamic_keys) {
      const auto& key = (*dynamic_keys)[i];
      if (!key) throw ContractError("gate: missing output of active expert " + std::string(expert_name(id)));
      keys.push_back(*key);
    } else {
      keys.push_back(params.keys[i]);
    }
  }
  for (const auto& key : keys) {
    if (key.numel() != projected.numel()) {
      throw DimensionError("gate: key " + shape_string(key.shape()) + " vs projected query " +
                           shape_string(projected.shape()));
    }
  }
  return ops::matmul(ops::stack_rows(keys), projected);  // [|active|]
}

GateWeights gate(const GateParams& params, const Tensor& query, ExpertSet active,
                 const std::array<std::optional<Tensor>, kNumExperts>* dynamic_keys) {
  GateWeights w;
  w.active = active;
  w.probabilities = ops::softmax(gate_scores(params, query, active, dynamic_keys), 1.0);
  const auto members = active.members();
  for (std::size_t j = 0; j < members.size(); ++j) {
    w.alpha[static_cast<std::size_t>(members[j])] = w.probabilities[j];
  }
  return w;
}

void ExpertProjectionBank::collect(std::vector<NamedTensor>& out) const {
  for (auto id : kAllExperts) maps[static_cast<std::size_t>(id)].collect("bank." + std::string(expert_name(id)), out);
}

Tensor fuse(const GateWeights& weights, const std::array<std::optional<Tensor>, kNumExperts>& outputs) {
  if (weights.active.empty()) throw ParameterError("fuse: active expert set is empty");
  std::vector<Tensor> rows;
  for (auto id : weights.active.members()) {
    const auto& out = outputs[static_cast<std::size_t>(id)];
    if (!out) throw ContractError("fuse: missing output of active expert " + std::string(expert_name(id)));
    if (!rows.empty() && out->numel() != rows.front().numel()) {
      throw DimensionError("fuse: expert outputs have different widths " + shape_string(rows.front().shape()) +
                           " and " + shape_string(out->shape()));
    }
    rows.push_back(ops::reshape(*out, {out->numel()}));
  }
  if (weights.probabilities.numel() != rows.size()) {
    throw ContractError("fuse: gate weights do not match the active expert set");
  }
  return ops::matmul(weights.probabilities, ops::stack_rows(rows));
}

}  // namespace mixrag
