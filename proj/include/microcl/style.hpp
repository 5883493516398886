#pragma once

#include "microcl/data_synth.hpp"
#include "microcl/models.hpp"
#include "microcl/net.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace microcl {

enum class StyleInit : std::uint8_t { white_noise, content_copy };
std::string to_string(StyleInit init);
StyleInit style_init_from_string(const std::string& name);

struct StyleConfig {
  double lambda_s = 1e-3;
  std::vector<std::string> content_layers{"stage5"};
  std::vector<std::string> style_layers{"stage1", "stage2", "stage3", "stage4"};
  /// Per-layer weights; empty means uniform 1/|set|.
  std::vector<double> content_weights;
  std::vector<double> style_weights;
  int steps = 300;
  /// First step moves pixels by about this much (RMS); halved on a loss
  /// increase, grown by 10% on success, per image.
  double step_size = 0.05;
  StyleInit init = StyleInit::white_noise;
  /// Feature-net warm-up: cross-entropy iterations on macro + labeled micro.
  int warmup_iterations = 100;
  double warmup_learning_rate = 0.01;
  BackboneConfig backbone{};

  void validate() const;
  double content_weight(std::size_t i) const;
  double style_weight(std::size_t i) const;
  friend bool operator==(const StyleConfig&, const StyleConfig&) = default;
};

/// Per-layer Gram matrices.
template <typename Scalar>
using GramFeature = std::map<std::string, MatrixR<Scalar>>;

/// Feature tensors keyed by layer name; each (N, C, H, W) for a batch.
template <typename Scalar>
using FeatureMap = std::map<std::string, Tensor<Scalar>>;

/// Prefix of `net` ending at the deepest of `layers`.
NetSpec truncate_at(const NetSpec& net, std::span<const std::string> layers);

template <typename Scalar>
FeatureMap<Scalar> extract_features(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                                    std::span<const std::string> layers);

/// G[i][j] = <F_i, F_j> / (C·H·W) for one (C, H, W) feature tensor.
template <typename Scalar>
MatrixR<Scalar> gram_matrix(const Tensor<Scalar>& f);

/// Gram matrix of item n of a batched (N, C, H, W) feature tensor.
template <typename Scalar>
MatrixR<Scalar> gram_matrix(const Tensor<Scalar>& batch, int n);

/// Elementwise mean over `images` of each style layer's Gram matrix.
template <typename Scalar>
GramFeature<Scalar> average_style(const NetSpec& net, const ParamSet<Scalar>& params, std::span<const Image> images,
                                  const StyleConfig& cfg);

/// Fixed targets for a batch of content images: content features of x_s
/// and one shared averaged Gram set.
template <typename Scalar>
struct StyleTarget {
  FeatureMap<Scalar> content;
  GramFeature<Scalar> gram;
};

template <typename Scalar>
StyleTarget<Scalar> make_target(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x_s,
                                GramFeature<Scalar> gram, const StyleConfig& cfg);

template <typename Scalar>
struct PreLoss {
  std::vector<double> total;    // per image: content + λ_s·style
  std::vector<double> content;
  std::vector<double> style;
  Tensor<Scalar> grad;          // d total / d x_a, same shape as x_a
};

/// J_content = ½ Σ_{l∈content} w_l ‖F_a − F_s‖², J_style = ½ Σ_{l∈style} w_l ‖G_a − Ḡ‖².
template <typename Scalar>
PreLoss<Scalar> pre_loss(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x_a,
                         const StyleTarget<Scalar>& target, const StyleConfig& cfg, bool want_grad = true);

struct StylizeTrace {
  std::vector<double> loss;      // accepted (best-so-far) L_pre after each step, index 0 = init
  double initial_content = 0;
  double final_content = 0;
  double initial_style = 0;
  double final_style = 0;
};

struct StylizeResult {
  TensorF images;                 // (N, 3, H, W) best iterates, in [0, 1]
  std::vector<StylizeTrace> traces;
};

/// Pixel gradient descent from white noise (seeded) or a copy of x_s, with
/// clamping to [0, 1] after every step. Only improving steps are accepted,
/// so the returned images are the best iterates.
StylizeResult stylize(const NetSpec& net, const ParamSet<float>& params, const TensorF& x_s,
                      const StyleTarget<float>& target, const StyleConfig& cfg, std::uint64_t seed);

/// Brief supervised warm-up of a fresh extractor on macro + labeled micro
/// images; returns its parameters (the frozen style feature net).
ParamSet<float> warmup_feature_net(const StyleConfig& cfg, std::span<const Sample> macro,
                                   std::span<const Sample> micro_labeled, std::uint64_t seed);

nlohmann::ordered_json to_json(const StyleConfig& cfg);
StyleConfig style_config_from_json(const nlohmann::json& j);

struct StylizeReport {
  std::size_t cached = 0;
  std::size_t computed = 0;
};

/// One adapted image per macro sample (label kept, domain = adapted), in
/// macro order. With a non-empty `cache_dir`, each image is stored as
/// <seed>_<cfg hash>.png plus a .json sidecar with its loss trace, and
/// served from there on later calls.
std::vector<Sample> stylize_dataset(std::span<const Sample> macro, std::span<const Sample> micro_labeled,
                                    const StyleConfig& cfg, std::uint64_t seed,
                                    const std::filesystem::path& cache_dir = {}, StylizeReport* report = nullptr);

}  // namespace microcl
