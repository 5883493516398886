#include "microcl/contrastive.hpp"
#include "microcl/ksparse.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace microcl {

namespace {

template <typename Scalar>
Scalar log_add_exp(Scalar a, Scalar b) {
  if (a == -std::numeric_limits<Scalar>::infinity()) return b;
  if (b == -std::numeric_limits<Scalar>::infinity()) return a;
  const Scalar hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

template <typename Scalar, typename Range>
Scalar log_sum_exp(const Range& values) {
  Scalar hi = -std::numeric_limits<Scalar>::infinity();
  for (Scalar v : values) hi = std::max(hi, v);
  if (hi == -std::numeric_limits<Scalar>::infinity()) return hi;
  Scalar acc = 0;
  for (Scalar v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

void require_sigma(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("temperature sigma must be > 0");
}

/// One query of the cross-domain loss: logits to positives and to negatives,
/// returns the term and writes dTerm/dLogit.
template <typename Scalar>
Scalar per_positive_term(std::span<const Scalar> pos, std::span<const Scalar> neg, std::span<Scalar> dpos,
                         std::span<Scalar> dneg) {
  const Scalar lse_neg = log_sum_exp<Scalar>(neg);
  std::vector<Scalar> log_r(pos.size()), denom(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) {
    denom[k] = log_add_exp(pos[k], lse_neg);
    log_r[k] = pos[k] - denom[k];
  }
  const Scalar log_p = log_sum_exp<Scalar>(log_r);
  std::fill(dneg.begin(), dneg.end(), Scalar(0));
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const Scalar share = std::exp(log_r[k] - log_p);  // r_k / p
    const Scalar r = std::exp(log_r[k]);
    dpos[k] = -share * (Scalar(1) - r);
    for (std::size_t j = 0; j < neg.size(); ++j) dneg[j] += share * std::exp(neg[j] - denom[k]);
  }
  return -log_p;
}

}  // namespace

template <typename Scalar>
InfoNceResult<Scalar> info_nce(const VectorX<Scalar>& query, const MatrixR<Scalar>& positives,
                               const MatrixR<Scalar>& negatives, double sigma) {
  require_sigma(sigma);
  if (positives.rows() == 0) throw std::invalid_argument("info_nce needs at least one positive key");
  const auto inv = static_cast<Scalar>(1.0 / sigma);
  const VectorX<Scalar> sp = positives * query * inv;
  const VectorX<Scalar> sn = negatives.rows() ? VectorX<Scalar>(negatives * query * inv) : VectorX<Scalar>(0);
  const Scalar lse_pos = log_sum_exp<Scalar>(sp);
  const Scalar lse_all = log_add_exp(lse_pos, log_sum_exp<Scalar>(sn));
  InfoNceResult<Scalar> out;
  out.loss = lse_all - lse_pos;
  // d/ds_+ = softmax_all - softmax_pos ; d/ds_- = softmax_all.
  const VectorX<Scalar> dp = (sp.array() - lse_all).exp() - (sp.array() - lse_pos).exp();
  const VectorX<Scalar> dn = (sn.array() - lse_all).exp();
  out.grad_query = (positives.transpose() * dp + (negatives.rows() ? VectorX<Scalar>(negatives.transpose() * dn)
                                                                   : VectorX<Scalar>::Zero(query.size()))) * inv;
  out.grad_positives = dp * query.transpose() * inv;
  out.grad_negatives = negatives.rows() ? MatrixR<Scalar>(dn * query.transpose() * inv) : MatrixR<Scalar>(0, query.size());
  return out;
}

template <typename Scalar>
SupervisedLossResult<Scalar> supervised_loss(const MatrixR<Scalar>& micro, std::span<const int> micro_labels,
                                             const MatrixR<Scalar>& macro, std::span<const int> macro_labels,
                                             double sigma) {
  require_sigma(sigma);
  if (static_cast<std::size_t>(micro.rows()) != micro_labels.size() ||
      static_cast<std::size_t>(macro.rows()) != macro_labels.size())
    throw std::invalid_argument("supervised_loss: label count does not match embedding rows");
  if (micro.rows() && macro.rows() && micro.cols() != macro.cols())
    throw std::invalid_argument("supervised_loss: embedding widths differ");
  const auto inv = static_cast<Scalar>(1.0 / sigma);
  SupervisedLossResult<Scalar> out;
  out.grad_micro = MatrixR<Scalar>::Zero(micro.rows(), micro.cols());
  out.grad_macro = MatrixR<Scalar>::Zero(macro.rows(), macro.cols());

  // Queries from `queries` against keys from `keys`; accumulates into both grads.
  auto side = [&](const MatrixR<Scalar>& queries, std::span<const int> qlabels, const MatrixR<Scalar>& keys,
                  std::span<const int> klabels, MatrixR<Scalar>& gq, MatrixR<Scalar>& gk) {
    if (queries.rows() == 0) return;
    if (keys.rows() == 0) {
      out.skipped += static_cast<int>(queries.rows());
      return;
    }
    const MatrixR<Scalar> logits = queries * keys.transpose() * inv;
    MatrixR<Scalar> dlogits = MatrixR<Scalar>::Zero(logits.rows(), logits.cols());
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      std::vector<Scalar> pos, neg;
      std::vector<Eigen::Index> pos_at, neg_at;
      for (Eigen::Index k = 0; k < keys.rows(); ++k) {
        if (klabels[k] == qlabels[q]) {
          pos.push_back(logits(q, k));
          pos_at.push_back(k);
        } else {
          neg.push_back(logits(q, k));
          neg_at.push_back(k);
        }
      }
      if (pos.empty()) {
        ++out.skipped;
        continue;
      }
      std::vector<Scalar> dpos(pos.size()), dneg(neg.size());
      out.loss += per_positive_term<Scalar>(pos, neg, dpos, dneg);
      ++out.terms;
      for (std::size_t i = 0; i < pos.size(); ++i) dlogits(q, pos_at[i]) = dpos[i];
      for (std::size_t i = 0; i < neg.size(); ++i) dlogits(q, neg_at[i]) = dneg[i];
    }
    gq += dlogits * keys * inv;
    gk += dlogits.transpose() * queries * inv;
  };
  side(micro, micro_labels, macro, macro_labels, out.grad_micro, out.grad_macro);
  side(macro, macro_labels, micro, micro_labels, out.grad_macro, out.grad_micro);
  return out;
}

template <typename Scalar>
UnsupervisedLossResult<Scalar> unsupervised_loss(const MatrixR<Scalar>& query, const MatrixR<Scalar>& key,
                                                 const MatrixR<Scalar>& queue, double sigma) {
  require_sigma(sigma);
  if (query.rows() != key.rows() || query.cols() != key.cols())
    throw std::invalid_argument("unsupervised_loss: query and key batches differ in shape");
  if (queue.rows() && queue.cols() != query.cols())
    throw std::invalid_argument("unsupervised_loss: queue width differs from embedding width");
  const auto inv = static_cast<Scalar>(1.0 / sigma);
  UnsupervisedLossResult<Scalar> out;
  out.grad_query = MatrixR<Scalar>::Zero(query.rows(), query.cols());
  out.grad_key = MatrixR<Scalar>::Zero(key.rows(), key.cols());
  const MatrixR<Scalar> neg = queue.rows() ? MatrixR<Scalar>(query * queue.transpose() * inv)
                                           : MatrixR<Scalar>(query.rows(), 0);
  for (Eigen::Index u = 0; u < query.rows(); ++u) {
    const Scalar pos = query.row(u).dot(key.row(u)) * inv;
    Scalar hi = pos;
    for (Eigen::Index i = 0; i < neg.cols(); ++i) hi = std::max(hi, neg(u, i));
    Scalar total = std::exp(pos - hi);
    for (Eigen::Index i = 0; i < neg.cols(); ++i) total += std::exp(neg(u, i) - hi);
    const Scalar lse = hi + std::log(total);
    const Scalar term = lse - pos;
    out.per_sample.push_back(term);
    out.loss += term;
    const Scalar dpos = std::exp(pos - lse) - Scalar(1);
    out.grad_query.row(u) += dpos * key.row(u) * inv;
    out.grad_key.row(u) += dpos * query.row(u) * inv;
    for (Eigen::Index i = 0; i < neg.cols(); ++i) out.grad_query.row(u) += std::exp(neg(u, i) - lse) * queue.row(i) * inv;
  }
  return out;
}

template <typename Scalar>
MatrixR<Scalar> normalize_rows(const MatrixR<Scalar>& u) {
  MatrixR<Scalar> v = u;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const Scalar norm = v.row(r).norm();
    if (!(norm > Scalar(0))) throw std::runtime_error("cannot normalise a zero embedding");
    v.row(r) /= norm;
  }
  return v;
}

template <typename Scalar>
MatrixR<Scalar> normalize_rows_backward(const MatrixR<Scalar>& u, const MatrixR<Scalar>& grad_v) {
  MatrixR<Scalar> du(u.rows(), u.cols());
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    const Scalar norm = u.row(r).norm();
    const auto v = u.row(r) / norm;
    du.row(r) = (grad_v.row(r) - v * v.dot(grad_v.row(r))) / norm;
  }
  return du;
}

// ---------------------------------------------------------------------------

EmbeddingQueue::EmbeddingQueue(int capacity, int dim) : storage_(MatrixR<float>::Zero(capacity, dim)) {
  if (capacity < 1 || dim < 1) throw std::invalid_argument("queue capacity and width must be >= 1");
}

void EmbeddingQueue::enqueue(const MatrixR<float>& batch) {
  if (batch.rows() > capacity())
    throw std::invalid_argument("enqueue of " + std::to_string(batch.rows()) + " rows exceeds queue capacity " +
                                std::to_string(capacity()));
  if (batch.rows() && batch.cols() != dim()) throw std::invalid_argument("enqueue: embedding width mismatch");
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    storage_.row(cursor_) = batch.row(r);
    cursor_ = (cursor_ + 1) % capacity();
    fill_ = std::min(fill_ + 1, capacity());
  }
}

MatrixR<float> EmbeddingQueue::contents() const {
  MatrixR<float> out(fill_, storage_.cols());
  const int start = fill_ < capacity() ? 0 : cursor_;
  for (int i = 0; i < fill_; ++i) out.row(i) = storage_.row((start + i) % capacity());
  return out;
}

EmbeddingQueue EmbeddingQueue::restore(MatrixR<float> storage, int cursor, int fill) {
  if (storage.rows() < 1 || cursor < 0 || cursor >= storage.rows() || fill < 0 || fill > storage.rows() ||
      (fill < storage.rows() && cursor != fill))
    throw std::invalid_argument("inconsistent queue state");
  EmbeddingQueue q;
  q.storage_ = std::move(storage);
  q.cursor_ = cursor;
  q.fill_ = fill;
  return q;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(sigma > 0)) throw std::invalid_argument("sigma must be > 0");
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
  if (batch_size < 2 * kNumClasses) throw std::invalid_argument("batch size must be >= 8");
  if (queue_capacity < batch_size) throw std::invalid_argument("queue capacity must be >= batch size");
  if (iterations < 0 || checkpoint_every < 1) throw std::invalid_argument("bad iteration counts");
  if (hidden < 1 || embed_dim < 1) throw std::invalid_argument("bad head sizes");
  ksparse_keep_count(hidden, k_percent);
}

ContrastiveModel make_contrastive_model(const TrainConfig& cfg) {
  return {extractor_spec(cfg.backbone), projection_head_spec(cfg.backbone.z_dim, cfg.hidden, cfg.k_percent,
                                                             cfg.embed_dim)};
}

ParamSet<float> init_contrastive_params(const ContrastiveModel& model, std::uint64_t seed) {
  auto theta = init_params(model.extractor, seed);
  theta.merge(init_params(model.head, seed));
  return theta;
}

template <typename Scalar>
EmbedPass<Scalar> embed(const ContrastiveModel& model, const ParamSet<Scalar>& theta, const Tensor<Scalar>& x,
                        bool record) {
  EmbedPass<Scalar> pass;
  auto ext = forward(model.extractor, theta, x, record);
  auto head = forward(model.head, theta, ext.output, record);
  pass.z = std::move(ext.output);
  pass.u = head.output.matrix();
  pass.v = normalize_rows(pass.u);
  pass.extractor_tape = std::move(ext.tape);
  pass.head_tape = std::move(head.tape);
  return pass;
}

template <typename Scalar>
ParamSet<Scalar> embed_backward(const ContrastiveModel& model, const ParamSet<Scalar>& theta,
                                const EmbedPass<Scalar>& pass, const MatrixR<Scalar>& grad_v) {
  const MatrixR<Scalar> du = normalize_rows_backward(pass.u, grad_v);
  Tensor<Scalar> upstream({static_cast<int>(du.rows()), static_cast<int>(du.cols())});
  upstream.matrix() = du;
  auto head = backward(model.head, theta, pass.head_tape, upstream, {}, true);
  auto ext = backward(model.extractor, theta, pass.extractor_tape, head.input);
  ParamSet<Scalar> grads = std::move(ext.params);
  grads.merge(head.params);
  return grads;
}

TrainerState init_trainer(const ContrastiveModel& model, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TrainerState state;
  state.theta = init_contrastive_params(model, derive_seed(seed, 11));
  state.theta_m = state.theta;
  state.optimizer = make_optimizer(state.theta, cfg.learning_rate, cfg.momentum);
  state.queue = EmbeddingQueue(cfg.queue_capacity, cfg.embed_dim);
  state.rng = Rng(derive_seed(seed, 12));
  return state;
}

Image query_view(const Image& img, const TrainConfig& cfg, Rng& rng) {
  Image out = color_distort(img, cfg.color, rng.next());
  if (cfg.flip && rng.coin()) out = flip_horizontal(out);
  return out;
}

Image key_view(const Image& img, const TrainConfig& cfg, Rng& rng) {
  static constexpr FilterKind kinds[] = {FilterKind::sobel, FilterKind::scharr, FilterKind::laplacian};
  Image out = edge_filter(img, kinds[rng.index(3)]);
  if (cfg.flip && rng.coin()) out = flip_horizontal(out);
  return out;
}

UnsupervisedStep unsupervised_step(const ContrastiveModel& model, const TrainConfig& cfg, const TrainerState& state,
                                   std::span<const Image> batch, Rng& rng) {
  std::vector<Image> queries, keys;
  queries.reserve(batch.size());
  keys.reserve(batch.size());
  for (const auto& img : batch) {
    queries.push_back(query_view(img, cfg, rng));
    keys.push_back(key_view(img, cfg, rng));
  }
  auto q = embed(model, state.theta, batch_images(queries), true);
  const auto k = embed(model, state.theta_m, batch_images(keys), false);
  const auto loss = unsupervised_loss<float>(q.v, k.v, state.queue.contents(), cfg.sigma);
  UnsupervisedStep step;
  step.loss = loss.loss;
  step.grads = embed_backward(model, state.theta, q, loss.grad_query);
  step.keys = k.v;
  return step;
}

namespace {

// `count` distinct picks from [0, n) (with repeats only once n is exhausted).
std::vector<int> draw(int n, int count, Rng& rng) {
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    const int take = std::min(n, count - static_cast<int>(out.size()));
    for (int i = 0; i < take; ++i) {
      std::swap(pool[i], pool[i + rng.index(n - i)]);
      out.push_back(pool[i]);
    }
  }
  return out;
}

std::array<std::vector<int>, kNumClasses> by_class(std::span<const Sample> samples) {
  std::array<std::vector<int>, kNumClasses> out;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    if (!samples[i].label) throw std::invalid_argument("labeled split contains an unlabeled sample");
    out.at(*samples[i].label).push_back(i);
  }
  return out;
}

Image maybe_flip(const Image& img, const TrainConfig& cfg, Rng& rng) {
  return cfg.flip && rng.coin() ? flip_horizontal(img) : img;
}

}  // namespace

std::vector<LossRecord> train_extractor(const ContrastiveModel& model, const TrainData& data, const TrainConfig& cfg,
                                        TrainerState& state, const CheckpointHook& on_checkpoint) {
  cfg.validate();
  if (data.micro_labeled.empty()) throw std::invalid_argument("train_extractor needs labeled micro samples");
  const auto micro_classes = by_class(data.micro_labeled);
  const auto macro_classes = by_class(data.adapted);
  const int pool = static_cast<int>(data.micro_labeled.size() + data.adapted.size() + data.micro_unlabeled.size());
  auto pooled = [&](int i) -> const Image& {
    if (i < static_cast<int>(data.micro_labeled.size())) return data.micro_labeled[i].image;
    i -= static_cast<int>(data.micro_labeled.size());
    if (i < static_cast<int>(data.adapted.size())) return data.adapted[i].image;
    return data.micro_unlabeled[i - data.adapted.size()].image;
  };
  const int per_class_side = std::max(1, cfg.batch_size / (2 * kNumClasses));

  std::vector<LossRecord> log;
  Rng& rng = state.rng;
  while (state.iteration < cfg.iterations) {
    LossRecord rec;
    rec.iteration = state.iteration + 1;
    ParamSet<float> grads;

    // Supervised cross-domain batch, class-balanced on both sides.
    if (!data.adapted.empty()) {
      std::vector<Image> images;
      std::vector<int> micro_labels, macro_labels;
      for (int c = 0; c < kNumClasses; ++c) {
        if (micro_classes[c].empty()) continue;
        for (int i : draw(static_cast<int>(micro_classes[c].size()), per_class_side, rng)) {
          images.push_back(maybe_flip(data.micro_labeled[micro_classes[c][i]].image, cfg, rng));
          micro_labels.push_back(c);
        }
      }
      for (int c = 0; c < kNumClasses; ++c) {
        if (macro_classes[c].empty()) continue;
        for (int i : draw(static_cast<int>(macro_classes[c].size()), per_class_side, rng)) {
          images.push_back(maybe_flip(data.adapted[macro_classes[c][i]].image, cfg, rng));
          macro_labels.push_back(c);
        }
      }
      auto pass = embed(model, state.theta, batch_images(images), true);
      const auto n_t = static_cast<Eigen::Index>(micro_labels.size());
      const MatrixR<float> vt = pass.v.topRows(n_t);
      const MatrixR<float> va = pass.v.bottomRows(pass.v.rows() - n_t);
      const auto sl = supervised_loss<float>(vt, micro_labels, va, macro_labels, cfg.sigma);
      MatrixR<float> dv(pass.v.rows(), pass.v.cols());
      dv << sl.grad_micro, sl.grad_macro;
      accumulate(grads, embed_backward(model, state.theta, pass, dv));
      rec.js = sl.loss;
      rec.skipped = sl.skipped;
    }

    // Unsupervised two-view batch over everything.
    std::vector<Image> batch;
    for (int i : draw(pool, std::min(cfg.batch_size, pool), rng)) batch.push_back(pooled(i));
    auto us = unsupervised_step(model, cfg, state, batch, rng);
    rec.ju = us.loss;
    for (auto& [name, g] : us.grads) {
      g.weight.vec() *= static_cast<float>(cfg.lambda);
      g.bias.vec() *= static_cast<float>(cfg.lambda);
    }
    accumulate(grads, us.grads);
    rec.le = rec.js + cfg.lambda * rec.ju;
    if (!std::isfinite(rec.le)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << rec.iteration << ": J_S=" << rec.js << " J_U=" << rec.ju;
      throw std::runtime_error(os.str());
    }

    sgd_momentum_step(state.theta, grads, state.optimizer);
    ema_update(state.theta_m, state.theta, cfg.alpha);
    state.queue.enqueue(us.keys);
    state.iteration = rec.iteration;
    log.push_back(rec);
    if (on_checkpoint && (state.iteration % cfg.checkpoint_every == 0 || state.iteration == cfg.iterations))
      on_checkpoint(state, log);
  }
  return log;
}

#define MICROCL_INSTANTIATE(T)                                                                                    \
  template InfoNceResult<T> info_nce(const VectorX<T>&, const MatrixR<T>&, const MatrixR<T>&, double);            \
  template SupervisedLossResult<T> supervised_loss(const MatrixR<T>&, std::span<const int>, const MatrixR<T>&,    \
                                                   std::span<const int>, double);                                 \
  template UnsupervisedLossResult<T> unsupervised_loss(const MatrixR<T>&, const MatrixR<T>&, const MatrixR<T>&,   \
                                                       double);                                                   \
  template MatrixR<T> normalize_rows(const MatrixR<T>&);                                                          \
  template MatrixR<T> normalize_rows_backward(const MatrixR<T>&, const MatrixR<T>&);                              \
  template EmbedPass<T> embed(const ContrastiveModel&, const ParamSet<T>&, const Tensor<T>&, bool);               \
  template ParamSet<T> embed_backward(const ContrastiveModel&, const ParamSet<T>&, const EmbedPass<T>&,           \
                                      const MatrixR<T>&);

MICROCL_INSTANTIATE(float)
MICROCL_INSTANTIATE(double)

}  // namespace microcl
