#include "microcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace microcl {

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= classes() || predicted < 0 || predicted >= classes())
    throw std::out_of_range("confusion: label out of range");
  ++counts[truth][predicted];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (int i = 0; i < classes(); ++i) n += counts[i][i];
  return n;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, int classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("confusion: length mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  MetricsReport report;
  const int k = cm.classes();
  const std::int64_t total = cm.total();
  report.samples = total;
  report.overall_accuracy = total ? static_cast<double>(cm.trace()) / static_cast<double>(total) : 0.0;
  int defined = 0;
  for (int c = 0; c < k; ++c) {
    ClassMetrics m;
    for (int t = 0; t < k; ++t)
      for (int p = 0; p < k; ++p) {
        const auto n = cm.counts[t][p];
        if (t == c && p == c) m.tp += n;
        else if (t == c) m.fn += n;
        else if (p == c) m.fp += n;
        else m.tn += n;
      }
    if (m.tp + m.fn == 0) {
      report.warnings.push_back("class " + std::to_string(c) + " has no test samples; rates undefined");
    } else {
      m.ac = ratio(m.tp + m.tn, total);
      m.se = ratio(m.tp, m.tp + m.fn);
      m.sp = ratio(m.tn, m.tn + m.fp);
      m.ja = ratio(m.tp, m.tp + m.fp + m.fn);
      if (m.se && m.sp) m.f1 = (*m.se + *m.sp) > 0 ? 2 * *m.se * *m.sp / (*m.se + *m.sp) : 0.0;
    }
    if (m.ac && m.se && m.sp && m.f1 && m.ja) {
      report.macro.ac += *m.ac;
      report.macro.se += *m.se;
      report.macro.sp += *m.sp;
      report.macro.f1 += *m.f1;
      report.macro.ja += *m.ja;
      ++defined;
    } else if (m.tp + m.fn != 0) {
      report.warnings.push_back("class " + std::to_string(c) + " has undefined specificity; left out of averages");
    }
    report.per_class.push_back(m);
  }
  if (defined) {
    report.macro.ac /= defined;
    report.macro.se /= defined;
    report.macro.sp /= defined;
    report.macro.f1 /= defined;
    report.macro.ja /= defined;
  }
  return report;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("roc_curve: length mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("roc_curve: non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::int64_t pos = 0, neg = 0;
  for (int p : positive) (p ? pos : neg) += 1;
  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (positive[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({neg ? static_cast<double>(fp) / neg : 0.0, pos ? static_cast<double>(tp) / pos : 0.0, s});
  }
  return curve;
}

double trapezoid_auc(std::span<const RocPoint> curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2;
  return area;
}

double rank_auc(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("rank_auc: length mismatch");
  // Midranks over the pooled sample.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t t = i; t < j; ++t) rank[order[t]] = mid;
    i = j;
  }
  double pos = 0, neg = 0, sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      pos += 1;
      sum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("rank_auc needs both positives and negatives");
  return (sum - pos * (pos + 1) / 2) / (pos * neg);
}

void roc_auc(const MatrixR<double>& scores, std::span<const int> truth, MetricsReport& report) {
  if (static_cast<std::size_t>(scores.rows()) != truth.size()) throw std::invalid_argument("roc_auc: length mismatch");
  report.roc.assign(scores.cols(), {});
  report.auc.assign(scores.cols(), std::nullopt);
  double sum = 0;
  int defined = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    std::vector<double> s(scores.rows());
    std::vector<int> positive(scores.rows());
    int count = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      s[i] = scores(i, c);
      positive[i] = truth[i] == c;
      count += positive[i];
    }
    report.roc[c] = roc_curve(s, positive);
    if (count == 0 || count == static_cast<int>(truth.size())) {
      report.warnings.push_back("class " + std::to_string(c) + " lacks positives or negatives; AUC excluded");
      continue;
    }
    report.auc[c] = rank_auc(s, positive);
    sum += *report.auc[c];
    ++defined;
  }
  if (defined) report.overall_auc = sum / defined;
}

MetricsReport evaluate_scores(const MatrixR<double>& scores, std::span<const int> truth) {
  std::vector<int> predicted(scores.rows());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    predicted[i] = static_cast<int>(best);
  }
  MetricsReport report = compute_metrics(confusion(truth, predicted, static_cast<int>(scores.cols())));
  roc_auc(scores, truth, report);
  return report;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["samples"] = report.samples;
  j["overall_accuracy"] = report.overall_accuracy;
  j["macro"] = {{"AC", report.macro.ac}, {"SE", report.macro.se}, {"SP", report.macro.sp},
                {"F1", report.macro.f1}, {"JA", report.macro.ja}};
  j["overall_auc"] = optional_json(report.overall_auc);
  auto& classes = j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    classes.push_back({{"class", c},
                       {"TP", m.tp},
                       {"FP", m.fp},
                       {"TN", m.tn},
                       {"FN", m.fn},
                       {"AC", optional_json(m.ac)},
                       {"SE", optional_json(m.se)},
                       {"SP", optional_json(m.sp)},
                       {"F1", optional_json(m.f1)},
                       {"JA", optional_json(m.ja)},
                       {"AUC", c < report.auc.size() ? optional_json(report.auc[c]) : nullptr}});
  }
  j["warnings"] = report.warnings;
  return j;
}

std::string roc_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "class,fpr,tpr,threshold\n" << std::setprecision(17);
  for (std::size_t c = 0; c < report.roc.size(); ++c)
    for (const auto& p : report.roc[c]) os << c << ',' << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
  return os.str();
}

}  // namespace microcl
