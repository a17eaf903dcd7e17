#include "mixrag/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mixrag/errors.hpp"

namespace mixrag::ops {

namespace {

using detail::Node;
using Slots = std::span<std::vector<double>*>;

Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, Node::BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || in.needs_grad();
  }
  if (track) {
    node->needs_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& m) {
  if (m.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(m.shape()));
  }
}

void require_vector(const char* op, const Tensor& v) {
  if (v.ndim() != 1) {
    throw DimensionError(std::string(op) + ": expected a vector, got " + shape_string(v.shape()));
  }
}

// C[m×n] += A[m×k] · B[k×n], with optional transposes given as strides.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
              bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      if (!trans_b) {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 1 || a.ndim() > 2 || b.ndim() < 1 || b.ndim() > 2) {
    throw DimensionError("matmul: unsupported shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool a_vec = a.ndim() == 1;
  const bool b_vec = b.ndim() == 1;
  const std::size_t m = a_vec ? 1 : a.shape()[0];
  const std::size_t k = a_vec ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = b.shape()[0];
  const std::size_t n = b_vec ? 1 : b.shape()[1];
  if (k != kb) {
    throw DimensionError("matmul: shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
  Shape shape;
  if (!a_vec) shape.push_back(m);
  if (!b_vec) shape.push_back(n);
  return record(std::move(shape), std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g, Slots pg) {
    if (pg[0]) gemm_acc(g.data(), b.data().data(), pg[0]->data(), m, n, k, false, true);   // g · Bᵀ
    if (pg[1]) gemm_acc(a.data().data(), g.data(), pg[1]->data(), k, m, n, true, false);   // Aᵀ · g
  });
}

Tensor transpose(const Tensor& m) {
  require_matrix("transpose", m);
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  auto d = m.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return record({c, r}, std::move(out), {m}, [r, c](std::span<const double> g, Slots pg) {
    auto& dst = *pg[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record(a.shape(), std::move(out), {a, b}, [](std::span<const double> g, Slots pg) {
    for (auto* slot : pg) {
      if (!slot) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record(a.shape(), std::move(out), {a, b}, [](std::span<const double> g, Slots pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g, Slots pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * b[i];
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * a[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return record(a.shape(), std::move(out), {a}, [s](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("add_scalar: expected one element, got " + shape_string(s.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s[0];
  return record(a.shape(), std::move(out), {a, s}, [](std::span<const double> g, Slots pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
    if (pg[1])
      for (double v : g) (*pg[1])[0] += v;
  });
}

Tensor add_bias(const Tensor& m, const Tensor& bias) {
  require_vector("add_bias", bias);
  const std::size_t cols = m.ndim() == 1 ? m.shape()[0] : m.ndim() == 2 ? m.shape()[1] : 0;
  if (cols != bias.numel() || m.ndim() > 2) {
    throw DimensionError("add_bias: shape mismatch " + shape_string(m.shape()) + " + " + shape_string(bias.shape()));
  }
  std::vector<double> out(m.data().begin(), m.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % cols];
  return record(m.shape(), std::move(out), {m, bias}, [cols](std::span<const double> g, Slots pg) {
    if (pg[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
    if (pg[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i % cols] += g[i];
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  auto y = out;
  return record(a.shape(), std::move(out), {a}, [y = std::move(y)](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  auto y = out;
  return record(a.shape(), std::move(out), {a}, [y = std::move(y)](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * y[i];
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a[i]);
  return record(a.shape(), std::move(out), {a}, [a](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] / a[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record({}, {s}, {a}, [](std::span<const double> g, Slots pg) {
    for (auto& v : *pg[0]) v += g[0];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return record({}, {s}, {a, b}, [a, b](std::span<const double> g, Slots pg) {
    if (pg[0])
      for (std::size_t i = 0; i < b.numel(); ++i) (*pg[0])[i] += g[0] * b[i];
    if (pg[1])
      for (std::size_t i = 0; i < a.numel(); ++i) (*pg[1])[i] += g[0] * a[i];
  });
}

Tensor squared_norm(const Tensor& a) { return dot(a, a); }

Tensor softmax(const Tensor& x, double temperature) {
  require_vector("softmax", x);
  if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be positive");
  if (x.numel() == 0) throw ParameterError("softmax: empty input");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x.data()) hi = std::max(hi, v);
  std::vector<double> out(x.numel());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp((x[i] - hi) / temperature);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  auto y = out;
  return record(x.shape(), std::move(out), {x},
                [y = std::move(y), temperature](std::span<const double> g, Slots pg) {
                  double inner = 0.0;
                  for (std::size_t i = 0; i < y.size(); ++i) inner += g[i] * y[i];
                  for (std::size_t i = 0; i < y.size(); ++i) (*pg[0])[i] += y[i] * (g[i] - inner) / temperature;
                });
}

Tensor concat(std::span<const Tensor> parts) {
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_vector("concat", p);
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  const auto n = out.size();
  return record({n}, std::move(out), {parts.begin(), parts.end()},
                [sizes = std::move(sizes)](std::span<const double> g, Slots pg) {
                  std::size_t offset = 0;
                  for (std::size_t p = 0; p < sizes.size(); ++p) {
                    if (pg[p])
                      for (std::size_t i = 0; i < sizes[p]; ++i) (*pg[p])[i] += g[offset + i];
                    offset += sizes[p];
                  }
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix("concat_cols", p);
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto d = parts[p].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + r * widths[p], widths[p], out.begin() + r * total + offset);
    offset += widths[p];
  }
  return record({rows, total}, std::move(out), {parts.begin(), parts.end()},
                [widths = std::move(widths), rows, total](std::span<const double> g, Slots pg) {
                  std::size_t off = 0;
                  for (std::size_t p = 0; p < widths.size(); ++p) {
                    if (pg[p]) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < widths[p]; ++c)
                          (*pg[p])[r * widths[p] + c] += g[r * total + off + c];
                    }
                    off += widths[p];
                  }
                });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no inputs");
  const std::size_t width = rows[0].numel();
  std::vector<double> out;
  out.reserve(rows.size() * width);
  for (const auto& r : rows) {
    require_vector("stack_rows", r);
    if (r.numel() != width) {
      throw DimensionError("stack_rows: length mismatch " + shape_string(rows[0].shape()) + " vs " +
                           shape_string(r.shape()));
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return record({rows.size(), width}, std::move(out), {rows.begin(), rows.end()},
                [width](std::span<const double> g, Slots pg) {
                  for (std::size_t r = 0; r < pg.size(); ++r) {
                    if (!pg[r]) continue;
                    for (std::size_t c = 0; c < width; ++c) (*pg[r])[c] += g[r * width + c];
                  }
                });
}

Tensor row(const Tensor& m, std::size_t index) {
  const std::size_t idx[] = {index};
  return reshape(gather_rows(m, idx), {m.cols()});
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices) {
  require_matrix("gather_rows", m);
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<double> out(indices.size() * cols);
  auto d = m.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw RangeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                       shape_string(m.shape()));
    }
    std::copy_n(d.begin() + indices[i] * cols, cols, out.begin() + i * cols);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return record({indices.size(), cols}, std::move(out), {m},
                [idx = std::move(idx), cols](std::span<const double> g, Slots pg) {
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < cols; ++c) (*pg[0])[idx[i] * cols + c] += g[i * cols + c];
                });
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", m);
  if (begin > end || end > m.rows()) {
    throw RangeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     shape_string(m.shape()));
  }
  const std::size_t cols = m.cols();
  std::vector<double> out(m.data().begin() + begin * cols, m.data().begin() + end * cols);
  return record({end - begin, cols}, std::move(out), {m}, [begin, cols](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[begin * cols + i] += g[i];
  });
}

Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> indices, std::size_t num_rows) {
  require_matrix("scatter_add_rows", src);
  if (indices.size() != src.rows()) {
    throw DimensionError("scatter_add_rows: " + std::to_string(indices.size()) + " indices for " +
                         shape_string(src.shape()));
  }
  const std::size_t cols = src.cols();
  std::vector<double> out(num_rows * cols, 0.0);
  auto d = src.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= num_rows) throw RangeError("scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) out[indices[i] * cols + c] += d[i * cols + c];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return record({num_rows, cols}, std::move(out), {src},
                [idx = std::move(idx), cols](std::span<const double> g, Slots pg) {
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < cols; ++c) (*pg[0])[i * cols + c] += g[idx[i] * cols + c];
                });
}

Tensor scale_rows(const Tensor& m, const Tensor& s) {
  require_matrix("scale_rows", m);
  require_vector("scale_rows", s);
  if (s.numel() != m.rows()) {
    throw DimensionError("scale_rows: shape mismatch " + shape_string(m.shape()) + " by " + shape_string(s.shape()));
  }
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<double> out(m.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = m[r * cols + c] * s[r];
  return record(m.shape(), std::move(out), {m, s}, [m, s, rows, cols](std::span<const double> g, Slots pg) {
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        if (pg[0]) (*pg[0])[r * cols + c] += g[r * cols + c] * s[r];
        acc += g[r * cols + c] * m[r * cols + c];
      }
      if (pg[1]) (*pg[1])[r] += acc;
    }
  });
}

Tensor divide_rows(const Tensor& m, std::span<const double> divisors) {
  require_matrix("divide_rows", m);
  if (divisors.size() != m.rows()) throw DimensionError("divide_rows: divisor count mismatch");
  const std::size_t cols = m.cols();
  std::vector<double> out(m.data().begin(), m.data().end());
  std::vector<double> inv(divisors.size());
  for (std::size_t r = 0; r < divisors.size(); ++r) {
    if (divisors[r] == 0.0) throw ContractError("divide_rows: zero divisor at row " + std::to_string(r));
    inv[r] = 1.0 / divisors[r];
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= inv[r];
  }
  return record(m.shape(), std::move(out), {m}, [inv = std::move(inv), cols](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * inv[i / cols];
  });
}

Tensor mean_rows(const Tensor& m) {
  require_matrix("mean_rows", m);
  const std::size_t rows = m.rows(), cols = m.cols();
  if (rows == 0) throw ContractError("mean_rows: no rows");
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
  for (auto& v : out) v /= static_cast<double>(rows);
  return record({cols}, std::move(out), {m}, [rows, cols](std::span<const double> g, Slots pg) {
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) (*pg[0])[r * cols + c] += g[c] * inv;
  });
}

Tensor take(const Tensor& x, std::span<const std::size_t> indices) {
  require_vector("take", x);
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.numel()) throw RangeError("take: index " + std::to_string(indices[i]) + " out of range");
    out[i] = x[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return record({indices.size()}, std::move(out), {x}, [idx = std::move(idx)](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < idx.size(); ++i) (*pg[0])[idx[i]] += g[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return record(std::move(shape), std::move(out), {a}, [](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
  });
}

Tensor straight_through(const Tensor& value, const Tensor& grad_source) {
  require_same_shape("straight_through", value, grad_source);
  std::vector<double> out(value.data().begin(), value.data().end());
  return record(value.shape(), std::move(out), {grad_source}, [](std::span<const double> g, Slots pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
  });
}

}  // namespace mixrag::ops
