#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mixrag {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

// One recorded value on the gradient tape. Parents are kept alive by the
// child so a loss tensor owns the whole graph that produced it.
struct Node {
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> parent_grads)>;

  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;  // leaf parameter
  bool needs_grad = false;     // parameter or depends on one
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

// Dense row-major tensor of doubles with optional reverse-mode recording.
//
// Tensors are cheap handles: copies share the underlying storage. Values are
// treated as immutable once produced; parameters are updated by assigning a
// fresh value via `assign`.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool needs_grad() const { return node_->needs_grad; }
  std::uint64_t id() const { return node_->id; }
  bool defined() const { return static_cast<bool>(node_); }

  // A value copy with no tape history.
  Tensor detach() const;
  Tensor clone() const;

  // Replace the stored values of a leaf in place (optimizer step). Shape must match.
  void assign(std::span<const double> values);

  bool all_finite() const;

  // Internal: used by ops to build the tape.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Gradient map keyed by parameter id.
class Gradients {
 public:
  // Gradient for `param`; zeros of its shape when the loss does not reach it.
  Tensor of(const Tensor& param) const;
  bool contains(const Tensor& param) const { return grads_.contains(param.id()); }
  std::size_t size() const { return grads_.size(); }

  void set(std::uint64_t id, Tensor grad) { grads_[id] = std::move(grad); }

 private:
  std::unordered_map<std::uint64_t, Tensor> grads_;
};

// Reverse sweep from a scalar loss. Throws ContractError for non-scalar losses.
Gradients backward(const Tensor& loss);

}  // namespace mixrag
