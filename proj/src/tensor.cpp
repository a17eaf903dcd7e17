#include "mixrag/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mixrag/errors.hpp"

namespace mixrag {

namespace {

std::atomic<std::uint64_t> next_id{1};
thread_local bool grad_mode = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  node->id = next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor() : node_(make_node({0}, {}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows(): expected a matrix, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols(): expected a matrix, got " + shape_string(shape()));
  return shape()[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor " + shape_string(shape()) + " is not a scalar");
  return node_->data[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

void Tensor::assign(std::span<const double> values) {
  if (values.size() != node_->data.size()) {
    throw DimensionError("assign: " + std::to_string(values.size()) + " values for tensor " +
                         shape_string(shape()));
  }
  std::copy(values.begin(), values.end(), node_->data.begin());
}

bool Tensor::all_finite() const {
  for (double v : node_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  if (t.node_->id == 0) t.node_->id = next_id.fetch_add(1, std::memory_order_relaxed);
  return t;
}

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

bool grad_enabled() { return grad_mode; }

Tensor Gradients::of(const Tensor& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) return Tensor::zeros(param.shape());
  return it->second;
}

Gradients backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  Gradients result;
  const auto& root = loss.node();
  if (!root->needs_grad) return result;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->needs_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<detail::Node*, std::vector<double>> grads;
  grads[root.get()] = {1.0};
  std::vector<std::vector<double>*> parent_slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->requires_grad) {
      result.set(node->id, Tensor(node->shape, found->second));
    }
    if (!node->backward) continue;
    parent_slots.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      auto* parent = node->parents[i].get();
      if (!parent->needs_grad) continue;
      auto& g = grads[parent];
      if (g.empty()) g.assign(parent->data.size(), 0.0);
      parent_slots[i] = &g;
    }
    // `found` may be invalidated by the inserts above.
    const std::vector<double> grad_out = std::move(grads[node]);
    node->backward(grad_out, parent_slots);
    grads.erase(node);
  }
  return result;
}

}  // namespace mixrag
