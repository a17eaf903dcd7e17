#include "mixrag/model.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mixrag/errors.hpp"
#include "mixrag/ops.hpp"

namespace mixrag {

using nlohmann::json;

void ModelConfig::validate() const {
  if (dim == 0 || hidden_dim == 0 || prompt_dim == 0 || prompt_vectors == 0 || projector_hidden == 0) {
    throw ParameterError("model: all dimensions must be positive");
  }
  if (layers < 1 || layers > 8) throw ParameterError("model: layers must be in [1, 8], got " + std::to_string(layers));
  if (k == 0) throw ParameterError("model: k must be positive");
  if (!(edge_cost >= 0.0)) throw ParameterError("model: edge cost must be non-negative");
  if (!(tau0 > 0.0) || !(tau_min > 0.0) || !(anneal_rate > 0.0 && anneal_rate <= 1.0)) {
    throw ParameterError("model: invalid temperature schedule");
  }
  if (!(init_scale > 0.0)) throw ParameterError("model: init_scale must be positive");
}

json config_to_json(const ModelConfig& c) {
  json j = {
      {"dim", c.dim},
      {"embed_seed", c.embed_seed},
      {"hidden_dim", c.hidden_dim},
      {"layers", c.layers},
      {"prompt_dim", c.prompt_dim},
      {"prompt_vectors", c.prompt_vectors},
      {"projector_hidden", c.projector_hidden},
      {"init_scale", c.init_scale},
      {"scorer_identity_offset", c.scorer_identity_offset},
      {"dynamic_keys", c.dynamic_keys},
      {"k", c.k},
      {"edge_cost", c.edge_cost},
      {"prize_rule", c.prize_rule == PrizeRule::linear_rank ? "linear_rank" : "similarity"},
      {"tau0", c.tau0},
      {"anneal_rate", c.anneal_rate},
      {"tau_min", c.tau_min},
      {"hard_selection", c.hard_selection},
      {"task_instruction", c.task_instruction},
      {"evidence_budget", c.evidence_budget},
  };
  j["hop_radius"] = c.hop_radius ? json(*c.hop_radius) : json(nullptr);
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.dim = j.at("dim").get<std::size_t>();
    c.embed_seed = j.at("embed_seed").get<std::uint64_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.prompt_dim = j.at("prompt_dim").get<std::size_t>();
    c.prompt_vectors = j.at("prompt_vectors").get<std::size_t>();
    c.projector_hidden = j.at("projector_hidden").get<std::size_t>();
    c.init_scale = j.at("init_scale").get<double>();
    c.scorer_identity_offset = j.at("scorer_identity_offset").get<bool>();
    c.dynamic_keys = j.at("dynamic_keys").get<bool>();
    c.k = j.at("k").get<std::size_t>();
    c.edge_cost = j.at("edge_cost").get<double>();
    const auto rule = j.at("prize_rule").get<std::string>();
    if (rule == "linear_rank") {
      c.prize_rule = PrizeRule::linear_rank;
    } else if (rule == "similarity") {
      c.prize_rule = PrizeRule::similarity;
    } else {
      throw FormatError("checkpoint config: unknown prize_rule '" + rule + "'");
    }
    if (j.contains("hop_radius") && !j.at("hop_radius").is_null()) c.hop_radius = j.at("hop_radius").get<std::size_t>();
    c.tau0 = j.at("tau0").get<double>();
    c.anneal_rate = j.at("anneal_rate").get<double>();
    c.tau_min = j.at("tau_min").get<double>();
    c.hard_selection = j.at("hard_selection").get<bool>();
    c.task_instruction = j.at("task_instruction").get<std::string>();
    c.evidence_budget = j.at("evidence_budget").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"entity.W_r", entity_scorer.weight});
  out.push_back({"relation.W_r", relation_scorer.weight});
  out.push_back({"relation.W_t", triple_projector.weight});
  encoder.collect(out);
  projector.collect(out);
  gate.collect(out);
  bank.collect(out);
  return out;
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  Rng root(seed);
  const double s = config.init_scale;
  const std::size_t d = config.dim;
  const std::size_t p = config.soft_width();
  {
    Rng rng = root.fork("semantic");
    m.entity_scorer.weight = normal_tensor(rng, {d, d}, s, true);
    m.relation_scorer.weight = normal_tensor(rng, {d, d}, s, true);
    m.triple_projector.weight = normal_tensor(rng, {d, 3 * d}, s, true);
    m.entity_scorer.identity_offset = config.scorer_identity_offset;
    m.relation_scorer.identity_offset = config.scorer_identity_offset;
  }
  {
    Rng rng = root.fork("encoder");
    EncoderConfig ec;
    ec.num_layers = config.layers;
    ec.hidden_dim = config.hidden_dim;
    m.encoder = GraphEncoder::random(ec, d, d, d, rng, s);
    m.projector = SoftPromptProjector::random(config.hidden_dim, config.projector_hidden, config.prompt_dim,
                                              config.prompt_vectors, rng, s);
  }
  {
    Rng rng = root.fork("gate");
    m.gate = GateParams::random(d, config.dynamic_keys ? p : d, rng, s);
    m.gate.dynamic_keys = config.dynamic_keys;
    m.bank.maps[static_cast<std::size_t>(ExpertId::entity)] = Affine::random(d, p, rng, s);
    m.bank.maps[static_cast<std::size_t>(ExpertId::relation)] = Affine::random(d, p, rng, s);
    m.bank.maps[static_cast<std::size_t>(ExpertId::subgraph)] = Affine::random(p, p, rng, s);
  }
  m.selector.tau0 = config.tau0;
  m.selector.tau = config.tau0;
  m.selector.tau_min = config.tau_min;
  m.selector.anneal_rate = config.anneal_rate;
  m.selector.hard = config.hard_selection;
  m.selector.noise = false;
  return m;
}

json checkpoint_to_json(const Model& model) {
  json params = json::object();
  for (const auto& [name, t] : model.parameters()) {
    params[name] = {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  }
  return {
      {"format", "mixrag-checkpoint"},
      {"version", 1},
      {"config", config_to_json(model.config)},
      {"selector", {{"tau", model.selector.tau}, {"steps", model.selector.steps}}},
      {"parameters", params},
  };
}

Model checkpoint_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "mixrag-checkpoint") {
    throw FormatError("not a mixrag checkpoint");
  }
  if (!doc.contains("config")) throw FormatError("checkpoint: missing config");
  Model model = Model::init(config_from_json(doc.at("config")), 0);
  try {
    model.selector.tau = doc.at("selector").at("tau").get<double>();
    model.selector.steps = doc.at("selector").at("steps").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint selector: ") + e.what());
  }
  const auto& params = doc.at("parameters");
  for (auto& [name, t] : model.parameters()) {
    if (!params.contains(name)) throw FormatError("checkpoint: missing parameter '" + name + "'");
    const auto& entry = params.at(name);
    Shape shape;
    std::vector<double> data;
    try {
      shape = entry.at("shape").get<Shape>();
      data = entry.at("data").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw FormatError("checkpoint parameter '" + name + "': " + e.what());
    }
    if (shape != t.shape() || data.size() != t.numel()) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(t.shape()));
    }
    t.assign(data);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(model).dump() << '\n';
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

SubgraphExpertOptions subgraph_options(const ModelConfig& config, std::size_t num_nodes) {
  SubgraphExpertOptions o;
  o.k = std::min(config.k, num_nodes);
  o.edge_cost = config.edge_cost;
  o.prize_rule = config.prize_rule;
  o.hop_radius = config.hop_radius;
  return o;
}

RetrievedSubgraph retrieve_subgraph(const Model& model, const Tensor& query, const GraphData& data) {
  return run_subgraph_expert(query, data.graph, data.table, subgraph_options(model.config, data.graph.num_entities()));
}

namespace {

// Node and triple embedding rows of a retrieved subgraph.
std::pair<Tensor, Tensor> subgraph_features(const RetrievedSubgraph& s, const EmbeddingTable& table) {
  Tensor nodes = ops::gather_rows(table.nodes(), s.subgraph.node_map);
  Tensor triples = s.subgraph.triple_map.empty() ? Tensor::zeros({0, table.dim()})
                                                 : ops::gather_rows(table.triples(), s.subgraph.triple_map);
  return {nodes, triples};
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& query, const GraphData& data, const ForwardOptions& options) {
  if (options.active.empty()) throw ParameterError("forward: active expert set is empty");
  if (query.ndim() != 1 || query.numel() != model.config.dim) {
    throw DimensionError("forward: query " + shape_string(query.shape()) + ", expected [" +
                         std::to_string(model.config.dim) + "]");
  }
  if (data.graph.empty()) throw DataError("forward: graph is empty");
  GumbelSelector selector = model.selector;
  selector.noise = options.noise;
  if (options.noise && options.rng == nullptr) throw ContractError("forward: noise requires an rng");

  ForwardResult r;
  r.active = options.active;
  const std::size_t k = model.config.k;
  auto idx = [](ExpertId id) { return static_cast<std::size_t>(id); };

  if (options.active.contains(ExpertId::entity)) {
    r.entity = run_entity_expert(query, data.graph, data.table, model.entity_scorer, selector,
                                 std::min(k, data.graph.num_entities()), options.rng);
    r.lifted[idx(ExpertId::entity)] = model.bank.lift(ExpertId::entity, r.entity->representation);
  }
  if (options.active.contains(ExpertId::relation)) {
    if (data.graph.num_triples() == 0) {
      r.active.erase(ExpertId::relation);
    } else {
      r.relation = run_relation_expert(query, data.graph, data.table, model.triple_projector, model.relation_scorer,
                                       selector, std::min(k, data.graph.num_triples()), options.rng);
      r.lifted[idx(ExpertId::relation)] = model.bank.lift(ExpertId::relation, r.relation->representation);
    }
  }
  if (options.active.contains(ExpertId::subgraph)) {
    r.subgraph = options.cached_subgraph ? *options.cached_subgraph : retrieve_subgraph(model, query, data);
    auto [nodes, triples] = subgraph_features(*r.subgraph, data.table);
    r.pooled = encode_subgraph(model.encoder, r.subgraph->subgraph.graph, nodes, triples, query);
    Tensor p_graph = project_soft_prompt_flat(model.projector, *r.pooled);
    r.lifted[idx(ExpertId::subgraph)] = model.bank.lift(ExpertId::subgraph, p_graph);
  }
  if (r.active.empty()) throw DataError("forward: no expert has anything to retrieve");

  r.gate = gate(model.gate, query, r.active, model.gate.dynamic_keys ? &r.lifted : nullptr);
  r.p_soft = fuse(r.gate, r.lifted);
  return r;
}

std::vector<Tensor> soft_prompt_vectors(const Model& model, const Tensor& p_soft) {
  const std::size_t n = model.config.prompt_vectors;
  Tensor rows = ops::reshape(p_soft, {n, model.config.prompt_dim});
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ops::row(rows, i));
  return out;
}

PromptBundle build_prompt(const Model& model, const TextualGraph& graph, const ForwardResult& result,
                          const std::string& query) {
  auto items = collect_evidence(result.entity, result.relation, result.subgraph, result.gate);
  auto evidence = textualize(graph, std::move(items), model.config.evidence_budget);
  PromptBundle bundle =
      assemble(model.config.task_instruction, soft_prompt_vectors(model, result.p_soft), std::move(evidence), query);
  for (auto id : result.gate.active.members()) {
    bundle.gate_weights.emplace_back(std::string(expert_name(id)), result.gate.of(id));
  }
  return bundle;
}

}  // namespace mixrag
