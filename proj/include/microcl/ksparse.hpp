#pragma once

#include "microcl/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace microcl {

/// Number of units a k-sparse gate keeps out of `width`: ceil(k/100 * width).
int ksparse_keep_count(int width, double k_percent);

/// Indices (ascending) of the `keep` largest entries of `row`. Ties go to the
/// lower index.
template <typename Scalar>
std::vector<std::int32_t> ksparse_support(std::span<const Scalar> row, int keep);

/// Top-k% gate over the last axis of `z`: kept entries pass through
/// unchanged, the rest are zeroed. When `support` is given it receives the
/// kept indices of every row, row after row.
template <typename Scalar>
Tensor<Scalar> ksparse_activate(const Tensor<Scalar>& z, double k_percent,
                                std::vector<std::int32_t>* support = nullptr);

/// Gradient routed through the kept support only.
template <typename Scalar>
Tensor<Scalar> ksparse_backward(const Tensor<Scalar>& grad, std::span<const std::int32_t> support, int keep);

}  // namespace microcl
