#include "microcl/classifier.hpp"

#include "microcl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace microcl {

void ClassifierConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("classifier hidden width must be >= 1");
  if (epochs < 0) throw std::invalid_argument("classifier epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("classifier batch size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("classifier learning rate must be > 0");
}

template <typename Scalar>
MatrixR<Scalar> softmax_rows(const MatrixR<Scalar>& logits) {
  MatrixR<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto e = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

template <typename Scalar>
CrossEntropyResult<Scalar> softmax_cross_entropy(const MatrixR<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw std::invalid_argument("cross entropy: label count mismatch");
  CrossEntropyResult<Scalar> out;
  out.grad = softmax_rows(logits);
  const auto n = static_cast<double>(std::max<Eigen::Index>(1, logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols()) throw std::out_of_range("cross entropy: label out of range");
    const Scalar hi = logits.row(r).maxCoeff();
    const double lse = hi + std::log((logits.row(r).array() - hi).exp().sum());
    out.loss += (lse - logits(r, y)) / n;
    out.grad(r, y) -= Scalar(1);
  }
  out.grad /= static_cast<Scalar>(n);
  return out;
}

MatrixR<float> extract_representations(const NetSpec& extractor, const ParamSet<float>& params,
                                       std::span<const Image> images, int chunk) {
  MatrixR<float> z;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const auto part = images.subspan(start, std::min<std::size_t>(chunk, images.size() - start));
    const MatrixR<float> out = forward(extractor, params, batch_images(part), false).output.matrix();
    if (z.size() == 0) z.resize(static_cast<Eigen::Index>(images.size()), out.cols());
    z.middleRows(static_cast<Eigen::Index>(start), out.rows()) = out;
  }
  return z;
}

std::vector<int> labels_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.label) throw std::invalid_argument("expected labeled samples");
    out.push_back(*s.label);
  }
  return out;
}

namespace {

std::vector<Image> images_of(std::span<const Sample> samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

void shuffle(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[rng.index(i + 1)]);
}

}  // namespace

ParamSet<float> train_classifier(const NetSpec& classifier, const MatrixR<float>& z, std::span<const int> labels,
                                 const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (z.rows() == 0) throw std::invalid_argument("train_classifier needs at least one labeled sample");
  if (static_cast<std::size_t>(z.rows()) != labels.size()) throw std::invalid_argument("train_classifier: label count");
  if (z.cols() != classifier.front().in_features)
    throw std::invalid_argument("train_classifier: representation width " + std::to_string(z.cols()) +
                                " does not match classifier input " + std::to_string(classifier.front().in_features));
  // Standardise each feature on the training set; folded into the first
  // dense layer at the end. Constant features get zero weight.
  const Eigen::RowVectorXd mean = z.cast<double>().colwise().mean();
  Eigen::RowVectorXd scale = ((z.cast<double>().rowwise() - mean).cwiseAbs2().colwise().mean()).cwiseSqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j) scale[j] = scale[j] > 1e-6 ? 1.0 / scale[j] : 0.0;
  const MatrixR<float> zs = ((z.cast<double>().rowwise() - mean).array().rowwise() * scale.array()).cast<float>();

  ParamSet<float> params = init_params(classifier, derive_seed(seed, 21));
  auto opt = make_optimizer(params, cfg.learning_rate, cfg.momentum);
  Rng rng(derive_seed(seed, 22));
  std::vector<int> order(z.rows());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      TensorF x({static_cast<int>(n), static_cast<int>(z.cols())});
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x.matrix().row(i) = zs.row(order[start + i]);
        y[i] = labels[order[start + i]];
      }
      auto fwd = forward(classifier, params, x, true);
      const auto ce = softmax_cross_entropy<float>(fwd.output.matrix(), y);
      TensorF up(fwd.output.shape());
      up.matrix() = ce.grad;
      sgd_momentum_step(params, backward(classifier, params, fwd.tape, up).params, opt);
    }
  }
  // W (x - m) s + b = (W s) x + (b - W s m)
  auto& first = params.at(classifier.front().name);
  const MatrixR<double> w = first.weight.matrix().cast<double>().array().rowwise() * scale.array();
  first.bias.vec() = (first.bias.vec().cast<double>() - w * mean.transpose()).cast<float>();
  first.weight.matrix() = w.cast<float>();
  return params;
}

MatrixR<double> predict(const NetSpec& classifier, const ParamSet<float>& params, const MatrixR<float>& z) {
  TensorF x({static_cast<int>(z.rows()), static_cast<int>(z.cols())});
  x.matrix() = z;
  const MatrixR<double> logits = forward(classifier, params, x, false).output.matrix().cast<double>();
  return softmax_rows(logits);
}

Evaluation evaluate(const ClassifierModel& model, std::span<const Sample> test) {
  const auto images = images_of(test);
  const auto z = extract_representations(model.extractor, model.params, images);
  Evaluation out;
  out.probabilities = predict(model.classifier, model.params, z);
  out.report = evaluate_scores(out.probabilities, labels_of(test));
  return out;
}

ClassifierModel fit_frozen(const NetSpec& extractor, const ParamSet<float>& extractor_params,
                           std::span<const Sample> labeled, const ClassifierConfig& cfg, std::uint64_t seed) {
  ClassifierModel model;
  model.extractor = extractor;
  model.classifier = classifier_spec(extractor.back().kind == LayerKind::avgpool_global
                                         ? extractor[extractor.size() - 3].out_channels
                                         : extractor.back().out_features,
                                     cfg.hidden);
  for (const auto& l : extractor)
    if (l.has_params()) model.params[l.name] = extractor_params.at(l.name);
  const auto z = extract_representations(extractor, model.params, images_of(labeled));
  const auto cls = train_classifier(model.classifier, z, labels_of(labeled), cfg, seed);
  model.params.insert(cls.begin(), cls.end());
  return model;
}

ClassifierModel supervised_baseline(const BackboneConfig& backbone, const ClassifierConfig& cls,
                                    const BaselineConfig& cfg, std::span<const Sample> labeled, std::uint64_t seed,
                                    std::vector<double>* loss_log) {
  cls.validate();
  if (labeled.empty()) throw std::invalid_argument("supervised_baseline needs labeled samples");
  ClassifierModel model;
  model.extractor = extractor_spec(backbone);
  model.classifier = classifier_spec(backbone.z_dim, cls.hidden);
  // Same extractor seed derivation as the contrastive arm's initialisation.
  model.params = init_params(model.extractor, derive_seed(seed, 11));
  model.params.merge(init_params(model.classifier, derive_seed(seed, 21)));
  auto opt = make_optimizer(model.params, cfg.learning_rate, cfg.momentum);
  Rng rng(derive_seed(seed, 23));
  const auto labels = labels_of(labeled);
  std::vector<int> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Image> batch;
    std::vector<int> y;
    while (static_cast<int>(batch.size()) < std::min<int>(cfg.batch_size, static_cast<int>(order.size()))) {
      if (cursor == order.size()) {
        shuffle(order, rng);
        cursor = 0;
      }
      const int i = order[cursor++];
      batch.push_back(cfg.flip && rng.coin() ? flip_horizontal(labeled[i].image) : labeled[i].image);
      y.push_back(labels[i]);
    }
    auto ext = forward(model.extractor, model.params, batch_images(batch), true);
    auto head = forward(model.classifier, model.params, ext.output, true);
    const auto ce = softmax_cross_entropy<float>(head.output.matrix(), y);
    if (!std::isfinite(ce.loss))
      throw std::runtime_error("supervised baseline: non-finite loss at iteration " + std::to_string(it + 1));
    TensorF up(head.output.shape());
    up.matrix() = ce.grad;
    auto gh = backward(model.classifier, model.params, head.tape, up, {}, true);
    auto ge = backward(model.extractor, model.params, ext.tape, gh.input);
    accumulate(ge.params, gh.params);
    sgd_momentum_step(model.params, ge.params, opt);
    if (loss_log) loss_log->push_back(ce.loss);
  }
  return model;
}

template MatrixR<float> softmax_rows(const MatrixR<float>&);
template MatrixR<double> softmax_rows(const MatrixR<double>&);
template CrossEntropyResult<float> softmax_cross_entropy(const MatrixR<float>&, std::span<const int>);
template CrossEntropyResult<double> softmax_cross_entropy(const MatrixR<double>&, std::span<const int>);

}  // namespace microcl
