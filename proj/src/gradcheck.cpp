#include "microcl/gradcheck.hpp"

#include "microcl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace microcl {

std::vector<std::string> GradCheckReport::failing() const {
  std::vector<std::string> names;
  for (const auto& e : entries)
    if (!e.passed) names.push_back(e.tensor);
  return names;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

// Seeded random order of a tensor's entries.
std::vector<Eigen::Index> entry_order(Eigen::Index size, const GradCheckOptions& options, std::uint64_t tag) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(size));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  if (options.max_entries <= 0 || size <= options.max_entries) return all;
  Rng rng(derive_seed(options.seed, tag));
  for (Eigen::Index i = 0; i + 1 < size; ++i) std::swap(all[i], all[i + rng.index(static_cast<int>(size - i))]);
  return all;
}

GradCheckReport check(const ParamSet<double>& params, const Objective& objective, const Pattern* pattern,
                      const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  const auto analytic = objective(params).second;
  const auto centre = pattern ? (*pattern)(params) : std::vector<std::int32_t>{};
  ParamSet<double> probe = params;
  for (auto& [name, layer] : probe) {
    for (int part = 0; part < 2; ++part) {
      TensorD& t = part == 0 ? layer.weight : layer.bias;
      const auto& grad_layer = analytic.at(name);
      const TensorD& g = part == 0 ? grad_layer.weight : grad_layer.bias;
      GradCheckEntry entry;
      entry.tensor = name + (part == 0 ? ".weight" : ".bias");
      // Roundoff in the difference quotient scales with the tensor's largest
      // gradient, so tiny entries are judged against that scale.
      const double floor = options.floor * std::max(1.0, g.size() ? g.vec().cwiseAbs().maxCoeff() : 0.0);
      const int wanted = options.max_entries > 0 ? options.max_entries : static_cast<int>(t.size());
      for (Eigen::Index i : entry_order(t.size(), options, fnv1a64(entry.tensor))) {
        if (entry.checked == wanted) break;
        const double saved = t[i];
        t[i] = saved + options.step;
        const double up = objective(probe).first;
        const bool up_smooth = !pattern || (*pattern)(probe) == centre;
        t[i] = saved - options.step;
        const double down = objective(probe).first;
        const bool down_smooth = !pattern || (*pattern)(probe) == centre;
        t[i] = saved;
        if (!up_smooth || !down_smooth) {
          ++entry.kinks;
          continue;
        }
        const double numeric = (up - down) / (2.0 * options.step);
        const double err = relative_error(g[i], numeric, floor);
        ++entry.checked;
        if (err > entry.max_rel_error || entry.worst_index < 0) {
          entry.max_rel_error = std::max(err, entry.max_rel_error);
          entry.worst_index = i;
        }
      }
      entry.passed = entry.max_rel_error < options.tolerance;
      report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
      report.passed = report.passed && entry.passed;
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

}  // namespace

GradCheckReport grad_check(const ParamSet<double>& params, const Objective& objective,
                           const GradCheckOptions& options) {
  return check(params, objective, nullptr, options);
}

GradCheckReport grad_check(const ParamSet<double>& params, const Objective& objective, const Pattern& pattern,
                           const GradCheckOptions& options) {
  return check(params, objective, &pattern, options);
}

void append_pattern(const NetSpec& net, const Tape<double>& tape, std::vector<std::int32_t>& out) {
  if (!tape.recorded) throw std::logic_error("append_pattern needs a recorded tape");
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net[i].kind == LayerKind::relu) {
      for (double v : tape.activations[i + 1].values()) out.push_back(v > 0.0);
    } else {
      out.insert(out.end(), tape.index[i].begin(), tape.index[i].end());
    }
  }
}

GradCheckReport grad_check(const NetSpec& net, const ParamSet<double>& params, const OutputLoss& loss,
                           const TensorD& x, const GradCheckOptions& options) {
  const Objective objective = [&](const ParamSet<double>& p) {
    auto fwd = forward(net, p, x, true);
    auto [value, upstream] = loss(fwd.output);
    return std::pair{value, backward(net, p, fwd.tape, upstream).params};
  };
  return grad_check(params, objective, options);
}

GradCheckReport grad_check_input(const NetSpec& net, const ParamSet<double>& params, const OutputLoss& loss,
                                 const TensorD& x, const GradCheckOptions& options) {
  ParamSet<double> wrapped;
  wrapped["input"] = {x, TensorD(Shape{0})};
  const Objective objective = [&](const ParamSet<double>& p) {
    const TensorD& input = p.at("input").weight;
    auto fwd = forward(net, params, input, true);
    auto [value, upstream] = loss(fwd.output);
    ParamSet<double> g;
    g["input"] = {backward(net, params, fwd.tape, upstream, {}, true, false).input, TensorD(Shape{0})};
    return std::pair{value, std::move(g)};
  };
  auto report = grad_check(wrapped, objective, options);
  std::erase_if(report.entries, [](const GradCheckEntry& e) { return e.checked == 0; });
  return report;
}

std::pair<double, TensorD> half_squared_norm(const TensorD& output) {
  return {0.5 * output.vec().squaredNorm(), output};
}

}  // namespace microcl
