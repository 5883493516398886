#pragma once

#include "microcl/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace microcl {

/// counts(truth, predicted).
struct ConfusionMatrix {
  explicit ConfusionMatrix(int classes = 4) : counts(classes, std::vector<std::int64_t>(classes, 0)) {}

  std::vector<std::vector<std::int64_t>> counts;

  int classes() const { return static_cast<int>(counts.size()); }
  void add(int truth, int predicted);
  std::int64_t total() const;
  std::int64_t trace() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int classes);

/// One-vs-rest counts and rates for one class. A rate is nullopt when its
/// denominator is zero.
struct ClassMetrics {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> ac, se, sp, f1, ja;
};

struct Rates {
  double ac = 0, se = 0, sp = 0, f1 = 0, ja = 0;
};

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  Rates macro;                    // mean over classes with all rates defined
  double overall_accuracy = 0;    // trace / total
  std::int64_t samples = 0;
  std::vector<std::optional<double>> auc;   // per class
  std::optional<double> overall_auc;        // mean of defined per-class AUCs
  std::vector<std::vector<RocPoint>> roc;  // per class
  std::vector<std::string> warnings;
};

/// AC, SE, SP, F1 (= 2·SE·SP/(SE+SP), 0 when both are 0) and JA per class,
/// one-vs-rest, plus their macro average. Classes with no test samples get
/// undefined rates, are left out of the average and raise a warning.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// ROC points of a one-vs-rest score column, from (0,0) to (1,1), one point
/// per distinct score (descending); the first point's threshold is +inf.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> positive);

/// Trapezoid area under a ROC point list.
double trapezoid_auc(std::span<const RocPoint> curve);

/// Mann-Whitney statistic: P(score+ > score-) + ½ P(tie).
double rank_auc(std::span<const double> scores, std::span<const int> positive);

/// Per-class ROC curves and AUCs for `scores` (rows = samples, cols =
/// classes); fills report.roc / auc / overall_auc and warns about classes
/// absent from `truth`.
void roc_auc(const MatrixR<double>& scores, std::span<const int> truth, MetricsReport& report);

/// Full report from class probabilities: argmax predictions (lowest index
/// on ties), confusion metrics and ROC/AUC.
MetricsReport evaluate_scores(const MatrixR<double>& scores, std::span<const int> truth);

nlohmann::ordered_json to_json(const MetricsReport& report);
/// `class,fpr,tpr,threshold` rows.
std::string roc_csv(const MetricsReport& report);

}  // namespace microcl
