#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mixrag/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the tape
// when gradient mode is on and an input needs a gradient.
namespace mixrag::ops {

// Matrix product. 1-D operands are promoted numpy-style: a vector on the left
// acts as a row, on the right as a column, and the promoted axis is dropped.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a + s for a one-element tensor s.
Tensor add_scalar(const Tensor& a, const Tensor& s);
// m[r, :] + bias for every row; a 1-D `m` is treated as a single row.
Tensor add_bias(const Tensor& m, const Tensor& bias);

Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor squared_norm(const Tensor& a);

// softmax(x / temperature) over a 1-D tensor, max-subtracted.
Tensor softmax(const Tensor& x, double temperature = 1.0);

// Concatenate 1-D tensors.
Tensor concat(std::span<const Tensor> parts);
// Concatenate matrices with equal row counts side by side.
Tensor concat_cols(std::span<const Tensor> parts);
// Stack equal-length 1-D tensors into rows.
Tensor stack_rows(std::span<const Tensor> rows);

Tensor row(const Tensor& m, std::size_t index);
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices);
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end);
// out[indices[i], :] += src[i, :]
Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> indices, std::size_t num_rows);
// m[i, :] * s[i]
Tensor scale_rows(const Tensor& m, const Tensor& s);
// m[i, :] / divisor[i] with constant divisors
Tensor divide_rows(const Tensor& m, std::span<const double> divisors);
Tensor mean_rows(const Tensor& m);

// Elements of a 1-D tensor.
Tensor take(const Tensor& x, std::span<const std::size_t> indices);
Tensor reshape(const Tensor& a, Shape shape);

// Forward value of `value`, gradient routed to `grad_source` unchanged
// (straight-through estimator). Shapes must match.
Tensor straight_through(const Tensor& value, const Tensor& grad_source);

}  // namespace mixrag::ops
