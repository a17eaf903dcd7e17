#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixrag/graph_encoder.hpp"
#include "mixrag/rng.hpp"
#include "mixrag/tensor.hpp"

namespace mixrag {

enum class ExpertId : std::uint8_t { entity = 0, relation = 1, subgraph = 2 };

inline constexpr std::size_t kNumExperts = 3;
inline constexpr std::array<ExpertId, kNumExperts> kAllExperts = {ExpertId::entity, ExpertId::relation,
                                                                  ExpertId::subgraph};

std::string_view expert_name(ExpertId id);
std::optional<ExpertId> parse_expert(std::string_view name);

// Subset of the three experts.
class ExpertSet {
 public:
  constexpr ExpertSet() = default;
  static constexpr ExpertSet all() { return ExpertSet(0b111); }
  static constexpr ExpertSet of(ExpertId id) { return ExpertSet(static_cast<std::uint8_t>(1U << static_cast<unsigned>(id))); }
  // Parses "entity+relation" style lists; "all" is accepted.
  static ExpertSet parse(std::string_view text);
  // The 7 non-empty subsets, singletons first, then pairs, then all three.
  static std::vector<ExpertSet> non_empty_subsets();

  bool contains(ExpertId id) const { return bits_ & (1U << static_cast<unsigned>(id)); }
  void insert(ExpertId id) { bits_ |= static_cast<std::uint8_t>(1U << static_cast<unsigned>(id)); }
  void erase(ExpertId id) { bits_ &= static_cast<std::uint8_t>(~(1U << static_cast<unsigned>(id))); }
  std::size_t size() const;
  bool empty() const { return bits_ == 0; }
  std::vector<ExpertId> members() const;
  std::string to_string() const;

  friend bool operator==(ExpertSet, ExpertSet) = default;

 private:
  constexpr explicit ExpertSet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

struct GateParams {
  Tensor weight;                              // W_g, [d x d_key]
  std::array<Tensor, kNumExperts> keys;       // learned e_i, [d_key]
  bool dynamic_keys = false;                  // use expert outputs as e_i instead

  void collect(std::vector<NamedTensor>& out) const;
  static GateParams random(std::size_t query_dim, std::size_t key_dim, Rng& rng, double weight_scale);
};

struct GateWeights {
  ExpertSet active;
  std::array<double, kNumExperts> alpha{};  // zero for inactive experts
  Tensor probabilities;                      // softmax over active experts, in ExpertId order

  double of(ExpertId id) const { return alpha[static_cast<std::size_t>(id)]; }
  ExpertId argmax() const;
};

// phi_i = h_q^T W_g e_i for each expert.
Tensor gate_scores(const GateParams& params, const Tensor& query, ExpertSet active,
                   const std::array<std::optional<Tensor>, kNumExperts>* dynamic_keys = nullptr);

// alpha_i = softmax over active experts of phi_i. `dynamic_keys` is required
// when params.dynamic_keys is set.
GateWeights gate(const GateParams& params, const Tensor& query, ExpertSet active,
                 const std::array<std::optional<Tensor>, kNumExperts>* dynamic_keys = nullptr);

// Lifts each expert's output into the prompt space.
struct ExpertProjectionBank {
  std::array<Affine, kNumExperts> maps;

  Tensor lift(ExpertId id, const Tensor& output) const { return maps[static_cast<std::size_t>(id)](output); }
  void collect(std::vector<NamedTensor>& out) const;
};

// p_soft = sum_i alpha_i * outputs[i] over the active experts.
Tensor fuse(const GateWeights& weights, const std::array<std::optional<Tensor>, kNumExperts>& outputs);

}  // namespace mixrag
