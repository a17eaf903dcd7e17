#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mixrag/graph.hpp"
#include "mixrag/rng.hpp"
#include "mixrag/tensor.hpp"

namespace mixrag {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// y = x W + b, with W stored [in x out].
struct Affine {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  static Affine random(std::size_t in, std::size_t out, Rng& rng, double scale);
  static Affine zeros(std::size_t in, std::size_t out);
};

struct EncoderLayer {
  Affine alpha;    // [d_h + d_q] -> 1
  Affine beta;     // [d_h + d_q] -> 1
  Affine gamma;    // [d_e + d_q] -> 1
  Affine message;  // [2 d_h + d_e + d_q] -> d_h

  static EncoderLayer random(std::size_t hidden, std::size_t edge_dim, std::size_t query_dim, Rng& rng, double scale);
};

struct EncoderConfig {
  std::size_t num_layers = 3;
  std::size_t hidden_dim = 64;
  bool add_self_loops = true;
  bool bidirectional_messages = true;
};

struct GraphEncoder {
  EncoderConfig config;
  Affine input;  // node embedding -> d_h
  std::vector<EncoderLayer> layers;

  std::size_t hidden_dim() const { return config.hidden_dim; }
  void collect(std::vector<NamedTensor>& out) const;

  static GraphEncoder random(const EncoderConfig& config, std::size_t node_dim, std::size_t edge_dim,
                             std::size_t query_dim, Rng& rng, double scale);
};

// MLP: second(tanh(first(z))), output reshaped into prompt vectors.
struct SoftPromptProjector {
  Affine first;
  Affine second;
  std::size_t num_prompt_vectors = 1;

  std::size_t prompt_dim() const { return second.out_dim() / num_prompt_vectors; }
  void collect(std::vector<NamedTensor>& out) const;

  static SoftPromptProjector random(std::size_t hidden, std::size_t mlp_hidden, std::size_t prompt_dim,
                                    std::size_t num_vectors, Rng& rng, double scale);
};

// One directed message of a layer; `feature` indexes the edge-feature rows,
// where the last row is the all-zero self-loop feature.
struct Message {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t feature = 0;
};

struct MessagePlan {
  std::size_t num_nodes = 0;
  std::vector<Message> messages;
  std::vector<double> in_degree;  // messages aggregated per target
};

// Messages for a subgraph: each triple both ways (when bidirectional) plus a
// self-loop per node (when enabled). Throws ContractError when a node would
// receive no message.
MessagePlan plan_messages(const TextualGraph& graph, const EncoderConfig& config);

// zeta = tanh(alpha(z_i, q) + gamma(z_e, q) - beta(z_j, q)); returns a scalar.
Tensor edge_attention(const EncoderLayer& layer, const Tensor& source, const Tensor& target, const Tensor& edge,
                      const Tensor& query);

// Attention values for every message of a plan, in plan order.
Tensor message_attention(const EncoderLayer& layer, const MessagePlan& plan, const Tensor& node_states,
                         const Tensor& edge_features, const Tensor& query);

// z_j' = (1/d_j) sum_{i->j} zeta_ij * msg_ij. `edge_features` has one row per
// triple plus the trailing zero row.
Tensor layer_forward(const EncoderLayer& layer, const MessagePlan& plan, const Tensor& node_states,
                     const Tensor& edge_features, const Tensor& query);

// Appends the zero self-loop row to per-triple features.
Tensor with_self_loop_feature(const Tensor& triple_features, std::size_t edge_dim);

// Mean-pooled final node states, [d_h].
Tensor encode_subgraph(const GraphEncoder& encoder, const TextualGraph& subgraph, const Tensor& node_embeddings,
                       const Tensor& triple_embeddings, const Tensor& query);

// Flat [num_vectors * d_p] projection.
Tensor project_soft_prompt_flat(const SoftPromptProjector& projector, const Tensor& pooled);
std::vector<Tensor> project_soft_prompt(const SoftPromptProjector& projector, const Tensor& pooled);

}  // namespace mixrag
