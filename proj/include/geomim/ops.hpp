#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "geomim/tensor.hpp"

// Differentiable primitives. Each one records itself on the thread's tape when
// any input requires grad. Broadcasting is limited to expanding the second
// operand over leading batch dimensions: b.shape() must equal a.shape() or a
// trailing suffix of it.

namespace geomim {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// (..., m, k) x (k, n) -> (..., m, n), or batched (B..., m, k) x (B..., k, n).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
Tensor reshape(const Tensor& a, Shape shape);

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor softmax(const Tensor& a, std::size_t axis);
/// Normalizes over the last axis; gamma and beta have the last axis' size.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

/// out = target; out[indices[k]] += values[k] along axis 0, in ascending k.
Tensor scatter_add(const Tensor& target, const std::vector<std::size_t>& indices,
                   const Tensor& values);
/// out[k] = a[indices[k]] along axis 0.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices);

/// Max over coordinates of |analytic - numeric| / max(1, |numeric|), with the
/// numeric derivative from central differences of step eps. `f` must map x to
/// a scalar and be deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace geomim
