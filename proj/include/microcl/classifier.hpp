#pragma once

#include "microcl/contrastive.hpp"
#include "microcl/data_synth.hpp"
#include "microcl/metrics.hpp"
#include "microcl/models.hpp"
#include "microcl/net.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace microcl {

struct ClassifierConfig {
  int hidden = 64;  // full scale: 256
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;

  void validate() const;
  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

/// Row-wise softmax, shift-invariant.
template <typename Scalar>
MatrixR<Scalar> softmax_rows(const MatrixR<Scalar>& logits);

template <typename Scalar>
struct CrossEntropyResult {
  double loss = 0;         // mean over rows
  MatrixR<Scalar> grad;    // dLoss/dLogits
};

template <typename Scalar>
CrossEntropyResult<Scalar> softmax_cross_entropy(const MatrixR<Scalar>& logits, std::span<const int> labels);

/// Representations z = e(x) for `images`, computed in chunks.
MatrixR<float> extract_representations(const NetSpec& extractor, const ParamSet<float>& params,
                                       std::span<const Image> images, int chunk = 64);

std::vector<int> labels_of(std::span<const Sample> samples);

/// MLP c on fixed representations: minibatch momentum SGD on mean
/// cross-entropy, reshuffled every epoch. Inputs are standardised per
/// feature with training-set statistics; the affine map is folded into the
/// first dense layer, so the result applies to raw z.
ParamSet<float> train_classifier(const NetSpec& classifier, const MatrixR<float>& z, std::span<const int> labels,
                                 const ClassifierConfig& cfg, std::uint64_t seed);

/// Class probabilities for representations `z`.
MatrixR<double> predict(const NetSpec& classifier, const ParamSet<float>& params, const MatrixR<float>& z);

/// A trained extractor + classifier pair.
struct ClassifierModel {
  NetSpec extractor;
  NetSpec classifier;
  ParamSet<float> params;  // both networks' layers
};

/// Probabilities and the full metrics report on `test`. Both arms are
/// scored through this one function.
struct Evaluation {
  MatrixR<double> probabilities;
  MetricsReport report;
};
Evaluation evaluate(const ClassifierModel& model, std::span<const Sample> test);

/// Frozen-extractor arm: representations of `labeled` under the extractor
/// part of `extractor_params`, then train_classifier.
ClassifierModel fit_frozen(const NetSpec& extractor, const ParamSet<float>& extractor_params,
                           std::span<const Sample> labeled, const ClassifierConfig& cfg, std::uint64_t seed);

struct BaselineConfig {
  int iterations = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;  // best of 3e-4 .. 3e-2 on the desk splits
  double momentum = 0.9;
  bool flip = true;

  friend bool operator==(const BaselineConfig&, const BaselineConfig&) = default;
};

/// Supervised arm: extractor and classifier trained jointly with
/// cross-entropy on `labeled` only, from the same initialisation scheme.
ClassifierModel supervised_baseline(const BackboneConfig& backbone, const ClassifierConfig& cls,
                                    const BaselineConfig& cfg, std::span<const Sample> labeled, std::uint64_t seed,
                                    std::vector<double>* loss_log = nullptr);

}  // namespace microcl
