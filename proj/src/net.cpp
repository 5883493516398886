#include "microcl/net.hpp"

#include "microcl/ksparse.hpp"
#include "microcl/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace microcl {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool_global: return "avgpool-global";
    case LayerKind::dense: return "dense";
    case LayerKind::ksparse: return "ksparse";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto kind : {LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d, LayerKind::avgpool_global,
                    LayerKind::dense, LayerKind::ksparse})
    if (to_string(kind) == name) return kind;
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv2d(std::string name, int in, int out, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.name = std::move(name);
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = kernel / 2;
  return s;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::maxpool2d(std::string name, int pool) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.name = std::move(name);
  s.pool = pool;
  return s;
}

LayerSpec LayerSpec::avgpool_global(std::string name) {
  LayerSpec s;
  s.kind = LayerKind::avgpool_global;
  s.name = std::move(name);
  return s;
}

LayerSpec LayerSpec::dense(std::string name, int in, int out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.name = std::move(name);
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::ksparse(std::string name, double k_percent) {
  LayerSpec s;
  s.kind = LayerKind::ksparse;
  s.name = std::move(name);
  s.k_percent = k_percent;
  return s;
}

std::optional<std::size_t> find_layer(const NetSpec& net, const std::string& name) {
  for (std::size_t i = 0; i < net.size(); ++i)
    if (net[i].name == name) return i;
  return std::nullopt;
}

void validate(const NetSpec& net) {
  std::unordered_set<std::string> names;
  int channels = -1;  // unknown until the first conv
  int features = -1;
  bool spatial = true;
  for (const auto& layer : net) {
    if (layer.name.empty() || !names.insert(layer.name).second)
      throw std::invalid_argument("layer names must be unique and non-empty: '" + layer.name + "'");
    switch (layer.kind) {
      case LayerKind::conv2d:
        if (!spatial) throw std::invalid_argument(layer.name + ": conv2d after flattening");
        if (layer.kernel < 1 || layer.stride < 1 || layer.in_channels < 1 || layer.out_channels < 1)
          throw std::invalid_argument(layer.name + ": bad conv2d hyperparameters");
        if (channels >= 0 && channels != layer.in_channels)
          throw std::invalid_argument(layer.name + ": expects " + std::to_string(layer.in_channels) +
                                      " channels, previous stage gives " + std::to_string(channels));
        channels = layer.out_channels;
        break;
      case LayerKind::maxpool2d:
        if (!spatial || layer.pool < 1) throw std::invalid_argument(layer.name + ": bad maxpool2d");
        break;
      case LayerKind::avgpool_global:
        if (!spatial) throw std::invalid_argument(layer.name + ": global pool after flattening");
        spatial = false;
        features = channels;
        break;
      case LayerKind::dense:
        if (layer.in_features < 1 || layer.out_features < 1)
          throw std::invalid_argument(layer.name + ": bad dense sizes");
        if (features >= 0 && features != layer.in_features)
          throw std::invalid_argument(layer.name + ": expects " + std::to_string(layer.in_features) +
                                      " features, previous stage gives " + std::to_string(features));
        spatial = false;
        features = layer.out_features;
        break;
      case LayerKind::ksparse:
        ksparse_keep_count(1, layer.k_percent);
        break;
      case LayerKind::relu:
        break;
    }
  }
}

template <typename Scalar>
void require_same_layout(const ParamSet<Scalar>& a, const ParamSet<Scalar>& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": parameter sets differ in size");
  auto ib = b.begin();
  for (const auto& [name, p] : a) {
    if (ib->first != name) throw std::invalid_argument(std::string(what) + ": parameter key mismatch at " + name);
    if (p.weight.shape() != ib->second.weight.shape() || p.bias.shape() != ib->second.bias.shape())
      throw std::invalid_argument(std::string(what) + ": shape mismatch for " + name);
    ++ib;
  }
}

ParamSet<float> init_params(const NetSpec& net, std::uint64_t seed) {
  validate(net);
  ParamSet<float> params;
  for (const auto& layer : net) {
    if (!layer.has_params()) continue;
    Shape wshape;
    int fan_in = 0;
    int out = 0;
    if (layer.kind == LayerKind::conv2d) {
      out = layer.out_channels;
      fan_in = layer.in_channels * layer.kernel * layer.kernel;
      wshape = {out, fan_in};
    } else {
      out = layer.out_features;
      fan_in = layer.in_features;
      wshape = {out, fan_in};
    }
    Rng rng(derive_seed(seed, fnv1a64(layer.name)));
    const double bound = std::sqrt(6.0 / fan_in);
    Tensor<float> w(wshape);
    for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    params[layer.name] = {std::move(w), Tensor<float>(Shape{out})};
  }
  return params;
}

template <typename Scalar>
const Tensor<Scalar>& Tape<Scalar>::output_of(const NetSpec& net, const std::string& name) const {
  if (!recorded) throw std::logic_error("tape was not recorded");
  const auto at = find_layer(net, name);
  if (!at) throw std::invalid_argument("no layer named '" + name + "'");
  return activations.at(*at + 1);
}

namespace {

struct ConvGeometry {
  int n, c, h, w, k, s, p, oh, ow;
};

ConvGeometry conv_geometry(const LayerSpec& layer, const Shape& in) {
  if (in.size() != 4)
    throw std::invalid_argument(layer.name + ": conv2d expects (N, C, H, W), got " + shape_string(in));
  if (in[1] != layer.in_channels)
    throw std::invalid_argument(layer.name + ": expects " + std::to_string(layer.in_channels) + " channels, got " +
                                shape_string(in));
  ConvGeometry g{in[0], in[1], in[2], in[3], layer.kernel, layer.stride, layer.padding, 0, 0};
  g.oh = (g.h + 2 * g.p - g.k) / g.s + 1;
  g.ow = (g.w + 2 * g.p - g.k) / g.s + 1;
  if (g.oh < 1 || g.ow < 1) throw std::invalid_argument(layer.name + ": input smaller than kernel");
  return g;
}

// Columns are (C*k*k, N*OH*OW); column n*OH*OW + y*OW + x is the receptive
// field of output pixel (y, x) of image n.
template <typename Scalar>
MatrixR<Scalar> im2col(const Tensor<Scalar>& x, const ConvGeometry& g) {
  const Eigen::Index plane = static_cast<Eigen::Index>(g.oh) * g.ow;
  MatrixR<Scalar> cols(static_cast<Eigen::Index>(g.c) * g.k * g.k, g.n * plane);
  for (int n = 0; n < g.n; ++n)
    for (int c = 0; c < g.c; ++c) {
      const Scalar* src = x.data() + (static_cast<Eigen::Index>(n) * g.c + c) * g.h * g.w;
      for (int ki = 0; ki < g.k; ++ki)
        for (int kj = 0; kj < g.k; ++kj) {
          Scalar* dst = cols.data() + ((static_cast<Eigen::Index>(c) * g.k + ki) * g.k + kj) * cols.cols() + n * plane;
          for (int y = 0; y < g.oh; ++y) {
            const int iy = y * g.s - g.p + ki;
            for (int xo = 0; xo < g.ow; ++xo) {
              const int ix = xo * g.s - g.p + kj;
              dst[y * g.ow + xo] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : Scalar(0);
            }
          }
        }
    }
  return cols;
}

template <typename Scalar>
void col2im_add(const MatrixR<Scalar>& cols, const ConvGeometry& g, Tensor<Scalar>& dx) {
  const Eigen::Index plane = static_cast<Eigen::Index>(g.oh) * g.ow;
  for (int n = 0; n < g.n; ++n)
    for (int c = 0; c < g.c; ++c) {
      Scalar* dst = dx.data() + (static_cast<Eigen::Index>(n) * g.c + c) * g.h * g.w;
      for (int ki = 0; ki < g.k; ++ki)
        for (int kj = 0; kj < g.k; ++kj) {
          const Scalar* src =
              cols.data() + ((static_cast<Eigen::Index>(c) * g.k + ki) * g.k + kj) * cols.cols() + n * plane;
          for (int y = 0; y < g.oh; ++y) {
            const int iy = y * g.s - g.p + ki;
            if (iy < 0 || iy >= g.h) continue;
            for (int xo = 0; xo < g.ow; ++xo) {
              const int ix = xo * g.s - g.p + kj;
              if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += src[y * g.ow + xo];
            }
          }
        }
    }
}

template <typename Scalar>
const LayerParams<Scalar>& params_for(const ParamSet<Scalar>& params, const LayerSpec& layer) {
  const auto it = params.find(layer.name);
  if (it == params.end()) throw std::invalid_argument("missing parameters for layer '" + layer.name + "'");
  return it->second;
}

template <typename Scalar>
Tensor<Scalar> conv_forward(const LayerSpec& layer, const LayerParams<Scalar>& p, const Tensor<Scalar>& x) {
  const auto g = conv_geometry(layer, x.shape());
  const MatrixR<Scalar> cols = im2col(x, g);
  const auto w = p.weight.matrix();
  MatrixR<Scalar> out = w * cols;
  const Eigen::Index plane = static_cast<Eigen::Index>(g.oh) * g.ow;
  Tensor<Scalar> y({g.n, layer.out_channels, g.oh, g.ow});
  for (int n = 0; n < g.n; ++n) {
    auto dst = y.slice_matrix(n);
    dst = out.middleCols(n * plane, plane);
    dst.colwise() += p.bias.vec();
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> dense_forward(const LayerSpec& layer, const LayerParams<Scalar>& p, const Tensor<Scalar>& x) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features)
    throw std::invalid_argument(layer.name + ": dense expects (N, " + std::to_string(layer.in_features) + "), got " +
                                shape_string(x.shape()));
  Tensor<Scalar> y({x.dim(0), layer.out_features});
  y.matrix().noalias() = x.matrix() * p.weight.matrix().transpose();
  y.matrix().rowwise() += p.bias.vec().transpose();
  return y;
}

template <typename Scalar>
Tensor<Scalar> maxpool_forward(const LayerSpec& layer, const Tensor<Scalar>& x, std::vector<std::int32_t>* argmax) {
  if (x.rank() != 4) throw std::invalid_argument(layer.name + ": maxpool2d expects (N, C, H, W)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), k = layer.pool;
  const int oh = h / k, ow = w / k;
  if (oh < 1 || ow < 1) throw std::invalid_argument(layer.name + ": input smaller than pool window");
  Tensor<Scalar> y({n, c, oh, ow});
  if (argmax) argmax->assign(static_cast<std::size_t>(y.size()), 0);
  Eigen::Index o = 0;
  for (int plane = 0; plane < n * c; ++plane) {
    const Eigen::Index base = static_cast<Eigen::Index>(plane) * h * w;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++o) {
        Eigen::Index best = base + static_cast<Eigen::Index>(i * k) * w + j * k;
        for (int di = 0; di < k; ++di)
          for (int dj = 0; dj < k; ++dj) {
            const Eigen::Index at = base + static_cast<Eigen::Index>(i * k + di) * w + (j * k + dj);
            if (x[at] > x[best]) best = at;
          }
        y[o] = x[best];
        if (argmax) (*argmax)[o] = static_cast<std::int32_t>(best);
      }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> gap_forward(const LayerSpec& layer, const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw std::invalid_argument(layer.name + ": global pool expects (N, C, H, W)");
  const int n = x.dim(0), c = x.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Tensor<Scalar> y({n, c});
  Eigen::Map<const MatrixR<Scalar>> planes(x.data(), static_cast<Eigen::Index>(n) * c, plane);
  y.vec() = planes.rowwise().mean();
  return y;
}

template <typename Scalar>
Tensor<Scalar> layer_forward(const LayerSpec& layer, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                             std::vector<std::int32_t>* index) {
  switch (layer.kind) {
    case LayerKind::conv2d: return conv_forward(layer, params_for(params, layer), x);
    case LayerKind::dense: return dense_forward(layer, params_for(params, layer), x);
    case LayerKind::relu: {
      Tensor<Scalar> y = x;
      y.vec() = y.vec().cwiseMax(Scalar(0));
      return y;
    }
    case LayerKind::maxpool2d: return maxpool_forward(layer, x, index);
    case LayerKind::avgpool_global: return gap_forward(layer, x);
    case LayerKind::ksparse: return ksparse_activate(x, layer.k_percent, index);
  }
  throw std::logic_error("unhandled layer kind");
}

}  // namespace

template <typename Scalar>
ForwardResult<Scalar> forward(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                              bool record) {
  if (!x.all_finite()) throw std::runtime_error("non-finite network input");
  ForwardResult<Scalar> result;
  result.tape.recorded = record;
  if (record) {
    result.tape.activations.reserve(net.size() + 1);
    result.tape.activations.push_back(x);
    result.tape.index.resize(net.size());
  }
  Tensor<Scalar> current = x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& layer = net[i];
    const bool needs_index = record && (layer.kind == LayerKind::maxpool2d || layer.kind == LayerKind::ksparse);
    Tensor<Scalar> next = layer_forward(layer, params, current, needs_index ? &result.tape.index[i] : nullptr);
    if (!next.all_finite()) throw std::runtime_error("non-finite activation in layer '" + layer.name + "'");
    if (record) result.tape.activations.push_back(next);
    current = std::move(next);
  }
  result.output = std::move(current);
  return result;
}

template <typename Scalar>
Gradients<Scalar> backward(const NetSpec& net, const ParamSet<Scalar>& params, const Tape<Scalar>& tape,
                           const Tensor<Scalar>& upstream, const std::map<std::string, Tensor<Scalar>>& tap_grads,
                           bool want_input, bool want_params) {
  if (!tape.recorded || tape.activations.size() != net.size() + 1)
    throw std::logic_error("backward needs a tape recorded by forward(record=true) on the same network");
  const Tensor<Scalar>& output = tape.activations.back();
  Gradients<Scalar> grads;
  if (want_params)
    for (const auto& layer : net)
      if (layer.has_params()) {
        const auto& p = params_for(params, layer);
        grads.params[layer.name] = {Tensor<Scalar>(p.weight.shape()), Tensor<Scalar>(p.bias.shape())};
      }

  Tensor<Scalar> g;
  bool zero = true;
  if (!upstream.empty()) {
    if (upstream.shape() != output.shape())
      throw std::invalid_argument("upstream gradient " + shape_string(upstream.shape()) + " does not match output " +
                                  shape_string(output.shape()));
    g = upstream;
    zero = false;
  } else {
    g = Tensor<Scalar>(output.shape());
  }

  for (std::size_t ii = net.size(); ii-- > 0;) {
    const auto& layer = net[ii];
    const Tensor<Scalar>& x = tape.activations[ii];
    if (auto it = tap_grads.find(layer.name); it != tap_grads.end()) {
      if (it->second.shape() != g.shape())
        throw std::invalid_argument("tap gradient shape mismatch at '" + layer.name + "'");
      g.vec() += it->second.vec();
      zero = false;
    }
    const bool need_dx = ii > 0 || want_input;
    if (zero) {
      // Nothing flows yet; parameter gradients stay zero.
      if (need_dx) g = Tensor<Scalar>(x.shape());
      continue;
    }
    Tensor<Scalar> dx;
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const auto& p = params_for(params, layer);
        const auto geo = conv_geometry(layer, x.shape());
        const Eigen::Index plane = static_cast<Eigen::Index>(geo.oh) * geo.ow;
        MatrixR<Scalar> dout(layer.out_channels, geo.n * plane);
        for (int n = 0; n < geo.n; ++n) dout.middleCols(n * plane, plane) = g.slice_matrix(n);
        const MatrixR<Scalar> cols = im2col(x, geo);
        if (want_params) {
          auto& gp = grads.params[layer.name];
          gp.weight.matrix().noalias() = dout * cols.transpose();
          gp.bias.vec() = dout.rowwise().sum();
        }
        if (need_dx) {
          const MatrixR<Scalar> dcols = p.weight.matrix().transpose() * dout;
          dx = Tensor<Scalar>(x.shape());
          col2im_add(dcols, geo, dx);
        }
        break;
      }
      case LayerKind::dense: {
        const auto& p = params_for(params, layer);
        if (want_params) {
          auto& gp = grads.params[layer.name];
          gp.weight.matrix().noalias() = g.matrix().transpose() * x.matrix();
          gp.bias.vec() = g.matrix().colwise().sum().transpose();
        }
        if (need_dx) {
          dx = Tensor<Scalar>(x.shape());
          dx.matrix().noalias() = g.matrix() * p.weight.matrix();
        }
        break;
      }
      case LayerKind::relu:
        dx = g;
        for (Eigen::Index i = 0; i < dx.size(); ++i)
          if (!(x[i] > Scalar(0))) dx[i] = Scalar(0);
        break;
      case LayerKind::maxpool2d: {
        dx = Tensor<Scalar>(x.shape());
        const auto& argmax = tape.index[ii];
        for (Eigen::Index o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
        break;
      }
      case LayerKind::avgpool_global: {
        dx = Tensor<Scalar>(x.shape());
        const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
        Eigen::Map<MatrixR<Scalar>> planes(dx.data(), g.size(), plane);
        planes.colwise() = g.vec() / static_cast<Scalar>(plane);
        break;
      }
      case LayerKind::ksparse:
        dx = ksparse_backward(g, tape.index[ii], ksparse_keep_count(x.dim(-1), layer.k_percent));
        break;
    }
    if (need_dx) g = std::move(dx);
  }
  if (want_input) grads.input = std::move(g);
  return grads;
}

template <typename Scalar>
void accumulate(ParamSet<Scalar>& into, const ParamSet<Scalar>& grads) {
  for (const auto& [name, g] : grads) {
    auto it = into.find(name);
    if (it == into.end()) {
      into[name] = g;
      continue;
    }
    if (it->second.weight.shape() != g.weight.shape() || it->second.bias.shape() != g.bias.shape())
      throw std::invalid_argument("accumulate: shape mismatch for " + name);
    it->second.weight.vec() += g.weight.vec();
    it->second.bias.vec() += g.bias.vec();
  }
}

#define MICROCL_INSTANTIATE(T)                                                                                      \
  template void require_same_layout(const ParamSet<T>&, const ParamSet<T>&, const char*);                         \
  template struct Tape<T>;                                                                                          \
  template ForwardResult<T> forward(const NetSpec&, const ParamSet<T>&, const Tensor<T>&, bool);                   \
  template Gradients<T> backward(const NetSpec&, const ParamSet<T>&, const Tape<T>&, const Tensor<T>&,            \
                                 const std::map<std::string, Tensor<T>>&, bool, bool);                              \
  template void accumulate(ParamSet<T>&, const ParamSet<T>&);

MICROCL_INSTANTIATE(float)
MICROCL_INSTANTIATE(double)

}  // namespace microcl
