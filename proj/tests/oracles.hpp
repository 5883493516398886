#pragma once

// Straight-line reference implementations used only by tests. They share no
// code with the library paths they check.

#include "microcl/net.hpp"
#include "microcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using microcl::LayerKind;
using microcl::LayerSpec;
using microcl::NetSpec;
using microcl::ParamSet;
using microcl::TensorD;

inline TensorD conv(const TensorD& x, const TensorD& w, const TensorD& b, int k, int s, int p) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0);
  const int oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  TensorD y({n, o, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int io = 0; io < o; ++io)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b[io];
          for (int ic = 0; ic < c; ++ic)
            for (int a = 0; a < k; ++a)
              for (int bb = 0; bb < k; ++bb) {
                const int yy = i * s - p + a, xx = j * s - p + bb;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += w[io * (c * k * k) + ic * k * k + a * k + bb] * x[((in * c + ic) * h + yy) * wd + xx];
              }
          y[((in * o + io) * oh + i) * ow + j] = acc;
        }
  return y;
}

inline TensorD dense(const TensorD& x, const TensorD& w, const TensorD& b) {
  const int n = x.dim(0), in = x.dim(1), out = w.dim(0);
  TensorD y({n, out});
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += w[o * in + i] * x[r * in + i];
      y[r * out + o] = acc;
    }
  return y;
}

inline TensorD relu(const TensorD& x) {
  TensorD y = x;
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = y[i] > 0 ? y[i] : 0.0;
  return y;
}

inline TensorD maxpool(const TensorD& x, int k) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorD y({n, c, h / k, w / k});
  for (int a = 0; a < n * c; ++a)
    for (int i = 0; i < h / k; ++i)
      for (int j = 0; j < w / k; ++j) {
        double m = -std::numeric_limits<double>::infinity();
        for (int di = 0; di < k; ++di)
          for (int dj = 0; dj < k; ++dj) m = std::max(m, x[(a * h + i * k + di) * w + j * k + dj]);
        y[(a * (h / k) + i) * (w / k) + j] = m;
      }
  return y;
}

inline TensorD gap(const TensorD& x) {
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  TensorD y({n, c});
  for (int a = 0; a < n * c; ++a) {
    double s = 0;
    for (int i = 0; i < hw; ++i) s += x[a * hw + i];
    y[a] = s / hw;
  }
  return y;
}

/// Top-k by full sort with explicit (value desc, index asc) ordering.
inline std::vector<double> ksparse_row(const std::vector<double>& z, double k_percent) {
  const int d = static_cast<int>(z.size());
  int m = static_cast<int>(std::ceil(k_percent * d / 100.0 - 1e-9));
  m = std::clamp(m, 1, d);
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < d; ++i) order.push_back({-z[i], i});
  std::sort(order.begin(), order.end());
  std::vector<double> out(d, 0.0);
  for (int i = 0; i < m; ++i) out[order[i].second] = z[order[i].second];
  return out;
}

inline TensorD ksparse(const TensorD& x, double k_percent) {
  const int d = x.dim(-1);
  TensorD y(x.shape());
  for (Eigen::Index r = 0; r < x.size() / d; ++r) {
    std::vector<double> row(x.data() + r * d, x.data() + (r + 1) * d);
    auto out = ksparse_row(row, k_percent);
    for (int i = 0; i < d; ++i) y[r * d + i] = out[i];
  }
  return y;
}

inline TensorD run(const NetSpec& net, const ParamSet<double>& params, TensorD x) {
  for (const auto& l : net) {
    switch (l.kind) {
      case LayerKind::conv2d:
        x = conv(x, params.at(l.name).weight, params.at(l.name).bias, l.kernel, l.stride, l.padding);
        break;
      case LayerKind::dense: x = dense(x, params.at(l.name).weight, params.at(l.name).bias); break;
      case LayerKind::relu: x = relu(x); break;
      case LayerKind::maxpool2d: x = maxpool(x, l.pool); break;
      case LayerKind::avgpool_global: x = gap(x); break;
      case LayerKind::ksparse: x = ksparse(x, l.k_percent); break;
    }
  }
  return x;
}

inline TensorD random_tensor(microcl::Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = u(gen);
  return t;
}

inline ParamSet<double> random_params(const NetSpec& net, std::mt19937_64& gen, double scale = 0.5) {
  ParamSet<double> params;
  for (const auto& l : net) {
    if (l.kind == LayerKind::conv2d)
      params[l.name] = {random_tensor({l.out_channels, l.in_channels * l.kernel * l.kernel}, gen, -scale, scale),
                        random_tensor({l.out_channels}, gen, -0.1, 0.1)};
    else if (l.kind == LayerKind::dense)
      params[l.name] = {random_tensor({l.out_features, l.in_features}, gen, -scale, scale),
                        random_tensor({l.out_features}, gen, -0.1, 0.1)};
  }
  return params;
}

}  // namespace oracle

namespace oracle {

/// Central-difference gradient of a scalar function of a matrix.
template <typename F>
microcl::MatrixR<double> numeric_gradient(const F& f, microcl::MatrixR<double> m, double step = 1e-5) {
  microcl::MatrixR<double> g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double keep = m.data()[i];
    m.data()[i] = keep + step;
    const double up = f(m);
    m.data()[i] = keep - step;
    const double down = f(m);
    m.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * step);
  }
  return g;
}

/// Max relative error with the same floor convention as grad_check.
inline double max_relative_error(const microcl::MatrixR<double>& a, const microcl::MatrixR<double>& n,
                                 double floor = 1e-6) {
  double worst = 0;
  floor *= std::max(1.0, a.size() ? a.cwiseAbs().maxCoeff() : 0.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a.data()[i]), std::abs(n.data()[i]), floor});
    worst = std::max(worst, std::abs(a.data()[i] - n.data()[i]) / scale);
  }
  return worst;
}

/// Random unit rows.
inline microcl::MatrixR<double> unit_rows(int rows, int cols, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0, 1);
  microcl::MatrixR<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  m.rowwise().normalize();
  return m;
}

using Mat = microcl::MatrixR<double>;

// Printed cross-domain formula, evaluated term by term without any
// log-sum-exp tricks.
inline long double spreadsheet_js_side(const Mat& q, const std::vector<int>& ql, const Mat& k,
                                       const std::vector<int>& kl, double sigma) {
  long double total = 0;
  for (int t = 0; t < q.rows(); ++t) {
    long double negs = 0;
    bool any_pos = false;
    for (int j = 0; j < k.rows(); ++j)
      if (kl[j] != ql[t]) negs += std::exp(static_cast<long double>(q.row(t).dot(k.row(j))) / sigma);
    long double p = 0;
    for (int j = 0; j < k.rows(); ++j)
      if (kl[j] == ql[t]) {
        any_pos = true;
        const long double e = std::exp(static_cast<long double>(q.row(t).dot(k.row(j))) / sigma);
        p += e / (e + negs);
      }
    if (any_pos) total -= std::log(p);
  }
  return total;
}

inline long double spreadsheet_js(const Mat& micro, const std::vector<int>& ml, const Mat& macro,
                                  const std::vector<int>& al, double sigma) {
  return spreadsheet_js_side(micro, ml, macro, al, sigma) + spreadsheet_js_side(macro, al, micro, ml, sigma);
}

inline long double spreadsheet_ju(const Mat& q, const Mat& k, const Mat& queue, double sigma) {
  long double total = 0;
  for (int u = 0; u < q.rows(); ++u) {
    const long double pos = std::exp(static_cast<long double>(q.row(u).dot(k.row(u))) / sigma);
    long double den = pos;
    for (int i = 0; i < queue.rows(); ++i) den += std::exp(static_cast<long double>(q.row(u).dot(queue.row(i))) / sigma);
    total -= std::log(pos / den);
  }
  return total;
}

// Recount one-vs-rest cells straight from the pairs.
struct Cells {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Cells recount(const std::vector<int>& truth, const std::vector<int>& pred, int c) {
  Cells k;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == c, p = pred[i] == c;
    if (t && p) ++k.tp;
    else if (t) ++k.fn;
    else if (p) ++k.fp;
    else ++k.tn;
  }
  return k;
}

// All-pairs AUC: wins + half ties over positive-negative pairs.
inline double pair_auc(const std::vector<double>& s, const std::vector<int>& pos) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

/// Indices (ascending) kept by a top-k gate: ceil(k·d/100) entries for
/// integral k, larger value first, lower index first among equals.
inline std::vector<int> ksparse_support(const std::vector<double>& z, int k_percent) {
  const int d = static_cast<int>(z.size());
  const int m = std::max(1, (k_percent * d + 99) / 100);
  std::vector<int> idx(d);
  for (int i = 0; i < d; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return z[a] > z[b]; });
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace oracle
