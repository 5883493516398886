#pragma once

#include "microcl/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace microcl {

enum class LayerKind : std::uint8_t { conv2d, relu, maxpool2d, avgpool_global, dense, ksparse };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One stage of a fixed sequential network. Only the fields relevant to
/// `kind` are meaningful.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int in_features = 0;
  int out_features = 0;
  int pool = 2;
  double k_percent = 100.0;

  static LayerSpec conv2d(std::string name, int in, int out, int kernel, int stride = 1);
  static LayerSpec relu(std::string name);
  static LayerSpec maxpool2d(std::string name, int pool = 2);
  static LayerSpec avgpool_global(std::string name);
  static LayerSpec dense(std::string name, int in, int out);
  static LayerSpec ksparse(std::string name, double k_percent);

  bool has_params() const { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using NetSpec = std::vector<LayerSpec>;

/// Index of the layer called `name`, or nullopt.
std::optional<std::size_t> find_layer(const NetSpec& net, const std::string& name);

/// Throws unless layer names are unique and consecutive layers agree on
/// channel/feature counts.
void validate(const NetSpec& net);

template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Parameters keyed by layer name. Several networks (extractor, head,
/// classifier) can share one ParamSet as long as their layer names differ.
template <typename Scalar>
using ParamSet = std::map<std::string, LayerParams<Scalar>>;

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& params) {
  ParamSet<To> out;
  for (const auto& [name, p] : params) out[name] = {p.weight.template cast<To>(), p.bias.template cast<To>()};
  return out;
}

/// Zero-filled ParamSet with the same keys and shapes as `like`.
template <typename Scalar>
ParamSet<Scalar> zeros_like(const ParamSet<Scalar>& like) {
  ParamSet<Scalar> out;
  for (const auto& [name, p] : like) out[name] = {Tensor<Scalar>(p.weight.shape()), Tensor<Scalar>(p.bias.shape())};
  return out;
}

/// Throws unless `a` and `b` have identical key sets and per-key shapes.
template <typename Scalar>
void require_same_layout(const ParamSet<Scalar>& a, const ParamSet<Scalar>& b, const char* what);

/// He-uniform weights, zero biases, for every parameterised layer of `net`.
ParamSet<float> init_params(const NetSpec& net, std::uint64_t seed);

/// Activation record of one forward pass. activations[i] is the input of
/// layer i; activations.back() is the network output. index[i] holds the
/// routing indices of maxpool (argmax) and ksparse (kept support) layers.
template <typename Scalar>
struct Tape {
  bool recorded = false;
  std::vector<Tensor<Scalar>> activations;
  std::vector<std::vector<std::int32_t>> index;

  /// Output of the layer called `name` in `net`.
  const Tensor<Scalar>& output_of(const NetSpec& net, const std::string& name) const;
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> output;
  Tape<Scalar> tape;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                              bool record);

template <typename Scalar>
struct Gradients {
  ParamSet<Scalar> params;
  Tensor<Scalar> input;
};

/// Reverse pass. `upstream` is dLoss/dOutput (an empty tensor means zero).
/// `tap_grads` injects extra gradient at the output of named intermediate
/// layers, which is how feature-space losses enter.
template <typename Scalar>
Gradients<Scalar> backward(const NetSpec& net, const ParamSet<Scalar>& params, const Tape<Scalar>& tape,
                           const Tensor<Scalar>& upstream,
                           const std::map<std::string, Tensor<Scalar>>& tap_grads = {}, bool want_input = false,
                           bool want_params = true);

/// Elementwise a += b over matching layouts.
template <typename Scalar>
void accumulate(ParamSet<Scalar>& into, const ParamSet<Scalar>& grads);

}  // namespace microcl
