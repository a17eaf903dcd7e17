#include "mixrag/graph_encoder.hpp"

#include "mixrag/errors.hpp"
#include "mixrag/ops.hpp"

namespace mixrag {

Tensor Affine::operator()(const Tensor& x) const {
  const std::size_t width = x.ndim() == 1 ? x.numel() : x.ndim() == 2 ? x.cols() : 0;
  if (width != weight.rows()) {
    throw DimensionError("affine map " + shape_string(weight.shape()) + " cannot take input " +
                         shape_string(x.shape()));
  }
  return ops::add_bias(ops::matmul(x, weight), bias);
}

void Affine::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Affine Affine::random(std::size_t in, std::size_t out, Rng& rng, double scale) {
  return {normal_tensor(rng, {in, out}, scale, true), normal_tensor(rng, {out}, scale, true)};
}

Affine Affine::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

EncoderLayer EncoderLayer::random(std::size_t hidden, std::size_t edge_dim, std::size_t query_dim, Rng& rng,
                                  double scale) {
  EncoderLayer layer;
  layer.alpha = Affine::random(hidden + query_dim, 1, rng, scale);
  layer.beta = Affine::random(hidden + query_dim, 1, rng, scale);
  layer.gamma = Affine::random(edge_dim + query_dim, 1, rng, scale);
  layer.message = Affine::random(2 * hidden + edge_dim + query_dim, hidden, rng, scale);
  return layer;
}

void GraphEncoder::collect(std::vector<NamedTensor>& out) const {
  input.collect("encoder.input", out);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    layers[l].alpha.collect(p + ".W_alpha", out);
    layers[l].beta.collect(p + ".W_beta", out);
    layers[l].gamma.collect(p + ".W_gamma", out);
    layers[l].message.collect(p + ".W_msg", out);
  }
}

GraphEncoder GraphEncoder::random(const EncoderConfig& config, std::size_t node_dim, std::size_t edge_dim,
                                  std::size_t query_dim, Rng& rng, double scale) {
  if (config.num_layers < 1 || config.num_layers > 8) {
    throw ParameterError("encoder: num_layers must be in [1, 8], got " + std::to_string(config.num_layers));
  }
  if (config.hidden_dim == 0) throw ParameterError("encoder: hidden_dim must be positive");
  GraphEncoder enc;
  enc.config = config;
  enc.input = Affine::random(node_dim, config.hidden_dim, rng, scale);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    enc.layers.push_back(EncoderLayer::random(config.hidden_dim, edge_dim, query_dim, rng, scale));
  }
  return enc;
}

void SoftPromptProjector::collect(std::vector<NamedTensor>& out) const {
  first.collect("projector.first", out);
  second.collect("projector.second", out);
}

SoftPromptProjector SoftPromptProjector::random(std::size_t hidden, std::size_t mlp_hidden, std::size_t prompt_dim,
                                                std::size_t num_vectors, Rng& rng, double scale) {
  if (num_vectors == 0) throw ParameterError("projector: num_prompt_vectors must be positive");
  return {Affine::random(hidden, mlp_hidden, rng, scale), Affine::random(mlp_hidden, prompt_dim * num_vectors, rng, scale),
          num_vectors};
}

MessagePlan plan_messages(const TextualGraph& graph, const EncoderConfig& config) {
  MessagePlan plan;
  plan.num_nodes = graph.num_entities();
  const std::size_t self_feature = graph.num_triples();
  for (TripleId t = 0; t < graph.num_triples(); ++t) {
    const auto& tr = graph.triple(t);
    plan.messages.push_back({tr.head, tr.tail, t});
    if (config.bidirectional_messages && tr.head != tr.tail) plan.messages.push_back({tr.tail, tr.head, t});
  }
  if (config.add_self_loops) {
    for (EntityId v = 0; v < plan.num_nodes; ++v) plan.messages.push_back({v, v, self_feature});
  }
  plan.in_degree.assign(plan.num_nodes, 0.0);
  for (const auto& m : plan.messages) plan.in_degree[m.target] += 1.0;
  for (EntityId v = 0; v < plan.num_nodes; ++v) {
    if (plan.in_degree[v] == 0.0) {
      throw ContractError("encoder: node " + std::to_string(v) + " receives no messages (self-loops disabled)");
    }
  }
  return plan;
}

Tensor edge_attention(const EncoderLayer& layer, const Tensor& source, const Tensor& target, const Tensor& edge,
                      const Tensor& query) {
  const Tensor src_q[] = {source, query};
  const Tensor dst_q[] = {target, query};
  const Tensor edge_q[] = {edge, query};
  Tensor a = layer.alpha(ops::concat(src_q));
  Tensor b = layer.beta(ops::concat(dst_q));
  Tensor g = layer.gamma(ops::concat(edge_q));
  return ops::reshape(ops::tanh(ops::sub(ops::add(a, g), b)), {});
}

Tensor with_self_loop_feature(const Tensor& triple_features, std::size_t edge_dim) {
  const std::size_t rows = triple_features.numel() == 0 ? 0 : triple_features.rows();
  if (rows > 0 && triple_features.cols() != edge_dim) {
    throw DimensionError("edge features " + shape_string(triple_features.shape()) + " do not have width " +
                         std::to_string(edge_dim));
  }
  const Tensor parts[] = {ops::reshape(triple_features, {rows * edge_dim}), Tensor::zeros({edge_dim})};
  return ops::reshape(ops::concat(parts), {rows + 1, edge_dim});
}

namespace {

// Row blocks of a weight acting on a concatenated input, so that
// CONCAT(x, y) W == x W_x + y W_y.
std::vector<Tensor> split_rows(const Tensor& weight, std::initializer_list<std::size_t> widths) {
  std::vector<Tensor> blocks;
  std::size_t offset = 0;
  for (auto w : widths) {
    blocks.push_back(ops::slice_rows(weight, offset, offset + w));
    offset += w;
  }
  if (offset != weight.rows()) {
    throw DimensionError("affine map " + shape_string(weight.shape()) + " does not match input blocks");
  }
  return blocks;
}

struct LayerTerms {
  Tensor zeta;      // [M]
  Tensor messages;  // [M x d_h]
};

LayerTerms layer_terms(const EncoderLayer& layer, const MessagePlan& plan, const Tensor& node_states,
                       const Tensor& edge_features, const Tensor& query, bool with_messages) {
  if (node_states.ndim() != 2 || node_states.rows() != plan.num_nodes) {
    throw DimensionError("layer_forward: node states " + shape_string(node_states.shape()) + " for " +
                         std::to_string(plan.num_nodes) + " nodes");
  }
  const std::size_t hidden = node_states.cols();
  const std::size_t edge_dim = edge_features.cols();
  const std::size_t query_dim = query.numel();

  std::vector<std::size_t> src, dst, feat;
  for (const auto& m : plan.messages) {
    src.push_back(m.source);
    dst.push_back(m.target);
    feat.push_back(m.feature);
  }

  auto alpha = split_rows(layer.alpha.weight, {hidden, query_dim});
  auto beta = split_rows(layer.beta.weight, {hidden, query_dim});
  auto gamma = split_rows(layer.gamma.weight, {edge_dim, query_dim});

  // Per-node and per-edge scalars, then the query/bias constant folded in.
  Tensor node_alpha = ops::reshape(ops::matmul(node_states, alpha[0]), {plan.num_nodes});
  Tensor node_beta = ops::reshape(ops::matmul(node_states, beta[0]), {plan.num_nodes});
  Tensor edge_gamma = ops::reshape(ops::matmul(edge_features, gamma[0]), {edge_features.rows()});
  Tensor q_alpha = ops::add(ops::matmul(query, alpha[1]), layer.alpha.bias);
  Tensor q_beta = ops::add(ops::matmul(query, beta[1]), layer.beta.bias);
  Tensor q_gamma = ops::add(ops::matmul(query, gamma[1]), layer.gamma.bias);
  Tensor constant = ops::sub(ops::add(q_alpha, q_gamma), q_beta);  // [1]

  Tensor pre = ops::sub(ops::add(ops::take(node_alpha, src), ops::take(edge_gamma, feat)), ops::take(node_beta, dst));
  LayerTerms terms;
  terms.zeta = ops::tanh(ops::add_scalar(pre, constant));
  if (!with_messages) return terms;

  auto msg = split_rows(layer.message.weight, {hidden, hidden, edge_dim, query_dim});
  Tensor from_src = ops::gather_rows(ops::matmul(node_states, msg[0]), src);
  Tensor from_dst = ops::gather_rows(ops::matmul(node_states, msg[1]), dst);
  Tensor from_edge = ops::gather_rows(ops::matmul(edge_features, msg[2]), feat);
  Tensor from_query = ops::add(ops::matmul(query, msg[3]), layer.message.bias);  // [d_h]
  terms.messages = ops::add_bias(ops::add(ops::add(from_src, from_dst), from_edge), from_query);
  return terms;
}

}  // namespace

Tensor message_attention(const EncoderLayer& layer, const MessagePlan& plan, const Tensor& node_states,
                         const Tensor& edge_features, const Tensor& query) {
  return layer_terms(layer, plan, node_states, edge_features, query, false).zeta;
}

Tensor layer_forward(const EncoderLayer& layer, const MessagePlan& plan, const Tensor& node_states,
                     const Tensor& edge_features, const Tensor& query) {
  auto terms = layer_terms(layer, plan, node_states, edge_features, query, true);
  std::vector<std::size_t> dst;
  dst.reserve(plan.messages.size());
  for (const auto& m : plan.messages) dst.push_back(m.target);
  Tensor summed = ops::scatter_add_rows(ops::scale_rows(terms.messages, terms.zeta), dst, plan.num_nodes);
  return ops::divide_rows(summed, plan.in_degree);
}

Tensor encode_subgraph(const GraphEncoder& encoder, const TextualGraph& subgraph, const Tensor& node_embeddings,
                       const Tensor& triple_embeddings, const Tensor& query) {
  if (subgraph.empty()) throw ContractError("encode_subgraph: empty subgraph");
  if (encoder.layers.empty()) throw ContractError("encode_subgraph: encoder has no layers");
  if (node_embeddings.ndim() != 2 || node_embeddings.rows() != subgraph.num_entities()) {
    throw DimensionError("encode_subgraph: node embeddings " + shape_string(node_embeddings.shape()) + " for " +
                         std::to_string(subgraph.num_entities()) + " nodes");
  }
  const std::size_t edge_dim = encoder.layers[0].gamma.in_dim() - query.numel();
  const auto plan = plan_messages(subgraph, encoder.config);
  const Tensor features = with_self_loop_feature(triple_embeddings, edge_dim);
  Tensor states = encoder.input(node_embeddings);
  for (const auto& layer : encoder.layers) states = layer_forward(layer, plan, states, features, query);
  return ops::mean_rows(states);
}

Tensor project_soft_prompt_flat(const SoftPromptProjector& projector, const Tensor& pooled) {
  if (pooled.ndim() != 1 || pooled.numel() != projector.first.in_dim()) {
    throw DimensionError("project_soft_prompt: input " + shape_string(pooled.shape()) + " vs projector " +
                         shape_string(projector.first.weight.shape()));
  }
  return projector.second(ops::tanh(projector.first(pooled)));
}

std::vector<Tensor> project_soft_prompt(const SoftPromptProjector& projector, const Tensor& pooled) {
  Tensor flat = project_soft_prompt_flat(projector, pooled);
  const std::size_t width = projector.prompt_dim();
  Tensor rows = ops::reshape(flat, {projector.num_prompt_vectors, width});
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < projector.num_prompt_vectors; ++i) out.push_back(ops::row(rows, i));
  return out;
}

}  // namespace mixrag
