#include "microcl/ksparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace microcl {

int ksparse_keep_count(int width, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0))
    throw std::invalid_argument("k-sparse percentage must be in (0, 100], got " + std::to_string(k_percent));
  if (width < 1) throw std::invalid_argument("k-sparse width must be >= 1");
  // k*d/100 is exact for integral k; the epsilon absorbs representation error otherwise.
  const auto keep = static_cast<int>(std::ceil(k_percent * width / 100.0 - 1e-9));
  return std::clamp(keep, 1, width);
}

template <typename Scalar>
std::vector<std::int32_t> ksparse_support(std::span<const Scalar> row, int keep) {
  std::vector<std::int32_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](std::int32_t a, std::int32_t b) {
    return row[a] > row[b] || (row[a] == row[b] && a < b);
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

template <typename Scalar>
Tensor<Scalar> ksparse_activate(const Tensor<Scalar>& z, double k_percent, std::vector<std::int32_t>* support) {
  if (z.rank() < 1) throw std::invalid_argument("ksparse input must have at least one axis");
  const int width = z.dim(-1);
  const int keep = ksparse_keep_count(width, k_percent);
  const Eigen::Index rows = width == 0 ? 0 : z.size() / width;
  Tensor<Scalar> out(z.shape());
  if (support) {
    support->clear();
    support->reserve(static_cast<std::size_t>(rows * keep));
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::span<const Scalar> row(z.data() + r * width, static_cast<std::size_t>(width));
    for (std::int32_t j : ksparse_support(row, keep)) {
      out[r * width + j] = row[j];
      if (support) support->push_back(j);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ksparse_backward(const Tensor<Scalar>& grad, std::span<const std::int32_t> support, int keep) {
  const int width = grad.dim(-1);
  const Eigen::Index rows = grad.size() / width;
  if (static_cast<Eigen::Index>(support.size()) != rows * keep)
    throw std::invalid_argument("ksparse support does not match gradient shape");
  Tensor<Scalar> out(grad.shape());
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int i = 0; i < keep; ++i) {
      const Eigen::Index at = r * width + support[r * keep + i];
      out[at] = grad[at];
    }
  return out;
}

template std::vector<std::int32_t> ksparse_support<float>(std::span<const float>, int);
template std::vector<std::int32_t> ksparse_support<double>(std::span<const double>, int);
template Tensor<float> ksparse_activate(const Tensor<float>&, double, std::vector<std::int32_t>*);
template Tensor<double> ksparse_activate(const Tensor<double>&, double, std::vector<std::int32_t>*);
template Tensor<float> ksparse_backward(const Tensor<float>&, std::span<const std::int32_t>, int);
template Tensor<double> ksparse_backward(const Tensor<double>&, std::span<const std::int32_t>, int);

}  // namespace microcl
