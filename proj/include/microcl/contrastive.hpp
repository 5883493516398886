#pragma once

#include "microcl/augment.hpp"
#include "microcl/data_synth.hpp"
#include "microcl/models.hpp"
#include "microcl/net.hpp"
#include "microcl/optim.hpp"
#include "microcl/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace microcl {

// ---------------------------------------------------------------------------
// Embedding-level losses. Rows of every matrix are embeddings; callers pass
// unit vectors, so every dot product lies in [-1, 1].
// ---------------------------------------------------------------------------

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = 0;
  VectorX<Scalar> grad_query;
  MatrixR<Scalar> grad_positives;
  MatrixR<Scalar> grad_negatives;
};

/// -log( sum_+ exp(v.k+/sigma) / (sum_+ exp(v.k+/sigma) + sum_- exp(v.k-/sigma)) ).
/// With one positive this is the usual InfoNCE negative log-likelihood.
template <typename Scalar>
InfoNceResult<Scalar> info_nce(const VectorX<Scalar>& query, const MatrixR<Scalar>& positives,
                               const MatrixR<Scalar>& negatives, double sigma);

template <typename Scalar>
struct SupervisedLossResult {
  Scalar loss = 0;
  MatrixR<Scalar> grad_micro;
  MatrixR<Scalar> grad_macro;
  int terms = 0;
  int skipped = 0;  // queries with no same-class counterpart on the other side
};

/// Cross-domain supervised contrast. Each micro query t scores every
/// same-class macro key k+ separately against all other-class macro keys:
///
///   p_t = sum_{k+} exp(s_tk+) / (exp(s_tk+) + sum_{k-} exp(s_tk-)),  s = v.v'/sigma
///
/// and symmetrically for macro queries against micro keys; the loss is
/// -sum log p over all queries. p can exceed 1 when a query has several
/// positives, so individual terms can be negative.
template <typename Scalar>
SupervisedLossResult<Scalar> supervised_loss(const MatrixR<Scalar>& micro, std::span<const int> micro_labels,
                                             const MatrixR<Scalar>& macro, std::span<const int> macro_labels,
                                             double sigma);

template <typename Scalar>
struct UnsupervisedLossResult {
  Scalar loss = 0;
  MatrixR<Scalar> grad_query;
  MatrixR<Scalar> grad_key;
  std::vector<Scalar> per_sample;
};

/// -sum_u log( exp(q_u.m_u/sigma) / (exp(q_u.m_u/sigma) + sum_i exp(q_u.Q_i/sigma)) ).
/// `queue` may have zero rows.
template <typename Scalar>
UnsupervisedLossResult<Scalar> unsupervised_loss(const MatrixR<Scalar>& query, const MatrixR<Scalar>& key,
                                                 const MatrixR<Scalar>& queue, double sigma);

/// Row-wise L2 normalisation and its backward pass.
template <typename Scalar>
MatrixR<Scalar> normalize_rows(const MatrixR<Scalar>& u);
template <typename Scalar>
MatrixR<Scalar> normalize_rows_backward(const MatrixR<Scalar>& u, const MatrixR<Scalar>& grad_v);

// ---------------------------------------------------------------------------
// Queue
// ---------------------------------------------------------------------------

/// Fixed-capacity FIFO of unit embeddings used as negative keys.
class EmbeddingQueue {
 public:
  EmbeddingQueue() = default;
  EmbeddingQueue(int capacity, int dim);

  /// Appends the rows of `batch`, evicting the oldest entries once full.
  void enqueue(const MatrixR<float>& batch);

  /// Stored embeddings, oldest first.
  MatrixR<float> contents() const;

  int capacity() const { return static_cast<int>(storage_.rows()); }
  int dim() const { return static_cast<int>(storage_.cols()); }
  int size() const { return fill_; }
  int cursor() const { return cursor_; }
  const MatrixR<float>& storage() const { return storage_; }

  /// Rebuilds a queue from serialized parts.
  static EmbeddingQueue restore(MatrixR<float> storage, int cursor, int fill);

  friend bool operator==(const EmbeddingQueue&, const EmbeddingQueue&) = default;

 private:
  MatrixR<float> storage_;
  int cursor_ = 0;
  int fill_ = 0;
};

// ---------------------------------------------------------------------------
// Networks and training
// ---------------------------------------------------------------------------

/// Desk-scale defaults; full-scale values in comments.
struct TrainConfig {
  double sigma = 0.08;
  double lambda = 1.0;          // weight of the unsupervised term
  double alpha = 0.999;         // EMA decay
  int batch_size = 32;          // full scale: 256
  int queue_capacity = 512;     // full scale: 4096
  int iterations = 200;         // full scale: 500
  double learning_rate = 1e-4;  // losses are batch sums; 1e-3 and up collapses v
  double momentum = 0.9;
  double k_percent = 20.0;
  int hidden = 64;              // full scale: 256
  int embed_dim = 32;           // full scale: 128
  int checkpoint_every = 100;
  AugmentSpec color{180.0, 0.25, 0.75, FilterKind::none, 0};
  bool flip = true;
  BackboneConfig backbone{};    // full scale: DenseNet-121, 1024-D z

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Online network F = head(extractor(x)); the momentum network shares the specs.
struct ContrastiveModel {
  NetSpec extractor;
  NetSpec head;
};

ContrastiveModel make_contrastive_model(const TrainConfig& cfg);

/// Θ for `model`: extractor and head parameters in one set.
ParamSet<float> init_contrastive_params(const ContrastiveModel& model, std::uint64_t seed);

template <typename Scalar>
struct EmbedPass {
  Tensor<Scalar> z;    // representation
  MatrixR<Scalar> u;   // head output before normalisation
  MatrixR<Scalar> v;   // unit metric embedding
  Tape<Scalar> extractor_tape;
  Tape<Scalar> head_tape;
};

/// z = e(x), v = normalize(h(z)).
template <typename Scalar>
EmbedPass<Scalar> embed(const ContrastiveModel& model, const ParamSet<Scalar>& theta, const Tensor<Scalar>& x,
                        bool record);

/// Parameter gradients of a loss given dLoss/dv for a recorded pass.
template <typename Scalar>
ParamSet<Scalar> embed_backward(const ContrastiveModel& model, const ParamSet<Scalar>& theta,
                                const EmbedPass<Scalar>& pass, const MatrixR<Scalar>& grad_v);

/// Everything a training run carries between iterations.
struct TrainerState {
  ParamSet<float> theta;
  ParamSet<float> theta_m;
  OptimizerState<float> optimizer;
  EmbeddingQueue queue;
  Rng rng;
  int iteration = 0;

  friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

TrainerState init_trainer(const ContrastiveModel& model, const TrainConfig& cfg, std::uint64_t seed);

struct LossRecord {
  int iteration = 0;
  double js = 0;
  double ju = 0;
  double le = 0;
  int skipped = 0;
};

struct TrainData {
  std::span<const Sample> micro_labeled;    // X_T
  std::span<const Sample> adapted;          // X_A
  std::span<const Sample> micro_unlabeled;  // X_U
};

/// at1: random colour distortion (+ optional flip).
Image query_view(const Image& img, const TrainConfig& cfg, Rng& rng);
/// at2: random choice of sobel / scharr / laplacian (+ optional flip).
Image key_view(const Image& img, const TrainConfig& cfg, Rng& rng);

struct UnsupervisedStep {
  double loss = 0;
  ParamSet<float> grads;
  MatrixR<float> keys;  // momentum embeddings to enqueue after the step
};

/// J_U on a batch of raw images: builds the two views, embeds the query
/// view with Θ and the key view with Θ_m (no gradient), scores against the
/// current queue. Does not enqueue.
UnsupervisedStep unsupervised_step(const ContrastiveModel& model, const TrainConfig& cfg, const TrainerState& state,
                                   std::span<const Image> batch, Rng& rng);

using CheckpointHook = std::function<void(const TrainerState&, const std::vector<LossRecord>&)>;

/// Runs iterations state.iteration+1 .. cfg.iterations: each draws a
/// class-balanced supervised batch from X_T and X_A and an unsupervised
/// batch from X_T ∪ X_A ∪ X_U, minimises J_S + λ J_U with one SGD step,
/// then updates Θ_m by EMA and enqueues the momentum keys. `on_checkpoint`
/// fires every cfg.checkpoint_every iterations and at the end.
std::vector<LossRecord> train_extractor(const ContrastiveModel& model, const TrainData& data, const TrainConfig& cfg,
                                        TrainerState& state, const CheckpointHook& on_checkpoint = {});

}  // namespace microcl
