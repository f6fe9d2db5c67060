#pragma once

#include "comen/tensor.hpp"

#include <vector>

namespace comen {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);
Tensor operator-(const Tensor& a);

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

// (n x k) @ (k x m)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor exp(const Tensor& x);
// Throws DomainError on negative entries.
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
// max(x, floor); gradient is zero where clamped.
Tensor clamp_min(const Tensor& x, double floor);
Tensor square(const Tensor& x);

Tensor softmax(const Tensor& x, Index axis);
Tensor log_softmax(const Tensor& x, Index axis);

Tensor sum(const Tensor& x, Index axis, bool keepdim = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x, Index axis, bool keepdim = false);
Tensor mean(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, Index axis);
// Half-open range [start, stop) along axis.
Tensor slice(const Tensor& x, Index axis, Index start, Index stop);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, Shape shape);

// Stride-1 2-D convolution. x: B x Ci x H x W, weight: Co x Ci x kh x kw,
// bias: Co. Zero padding `pad` on each side.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index pad);
// Non-overlapping average pooling with a k x k window.
Tensor avg_pool2d(const Tensor& x, Index k);

// Mean softmax cross-entropy of B x K logits against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Divides each row of a 2-D tensor by max(L2 norm, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

}  // namespace comen
