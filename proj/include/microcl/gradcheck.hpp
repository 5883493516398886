#pragma once

#include "microcl/net.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace microcl {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Entries whose analytic and numeric values are both below
  /// floor * max(1, largest |gradient| in the tensor) are compared against
  /// that instead of their own magnitude.
  double floor = 1e-6;
  /// 0 checks every entry; otherwise a seeded random subset of this size per tensor.
  int max_entries = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string tensor;  // "<layer>.weight" or "<layer>.bias"
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  int checked = 0;
  int kinks = 0;  // probes that changed the routing pattern and were replaced
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed = true;

  std::vector<std::string> failing() const;
};

double relative_error(double analytic, double numeric, double floor);

/// Loss and its analytic gradient with respect to every tensor in the set.
using Objective = std::function<std::pair<double, ParamSet<double>>(const ParamSet<double>&)>;

/// Central-difference check of `objective`'s analytic gradient.
GradCheckReport grad_check(const ParamSet<double>& params, const Objective& objective,
                           const GradCheckOptions& options = {});

/// Discrete decisions of the forward pass(es) at a point: ReLU signs,
/// max-pool argmaxes, k-sparse supports.
using Pattern = std::function<std::vector<std::int32_t>(const ParamSet<double>&)>;

/// As above, for piecewise-smooth objectives. A probe whose +step or -step
/// point has a different pattern than the centre straddles a kink, where no
/// difference quotient approximates the gradient; that entry is replaced by
/// another entry of the same tensor and counted in GradCheckEntry::kinks.
GradCheckReport grad_check(const ParamSet<double>& params, const Objective& objective, const Pattern& pattern,
                           const GradCheckOptions& options = {});

/// Appends the decisions recorded in `tape` (a recorded pass of `net`).
void append_pattern(const NetSpec& net, const Tape<double>& tape, std::vector<std::int32_t>& out);

/// Loss on a network output: returns (loss, dLoss/dOutput).
using OutputLoss = std::function<std::pair<double, TensorD>(const TensorD&)>;

/// Checks backward() for `net` under `loss` at input `x`.
GradCheckReport grad_check(const NetSpec& net, const ParamSet<double>& params, const OutputLoss& loss,
                           const TensorD& x, const GradCheckOptions& options = {});

/// Checks the input gradient of `net` under `loss` at `x`; this is what
/// covers parameter-free layers. The report has one entry, "input.weight".
GradCheckReport grad_check_input(const NetSpec& net, const ParamSet<double>& params, const OutputLoss& loss,
                                 const TensorD& x, const GradCheckOptions& options = {});

/// Half squared norm of the output; a quadratic loss for checks.
std::pair<double, TensorD> half_squared_norm(const TensorD& output);

}  // namespace microcl
