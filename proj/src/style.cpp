#include "microcl/style.hpp"

#include "microcl/classifier.hpp"
#include "microcl/optim.hpp"
#include "microcl/rng.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace microcl {

std::string to_string(StyleInit init) { return init == StyleInit::white_noise ? "white-noise" : "content-copy"; }

StyleInit style_init_from_string(const std::string& name) {
  if (name == "white-noise") return StyleInit::white_noise;
  if (name == "content-copy") return StyleInit::content_copy;
  throw std::invalid_argument("unknown style init mode: " + name);
}

void StyleConfig::validate() const {
  if (!(lambda_s >= 0)) throw std::invalid_argument("lambda_s must be >= 0");
  if (content_layers.empty() && style_layers.empty()) throw std::invalid_argument("no content or style layers");
  for (const auto& c : content_layers)
    if (std::find(style_layers.begin(), style_layers.end(), c) != style_layers.end())
      throw std::invalid_argument("layer " + c + " is both a content and a style layer");
  if (!content_weights.empty() && content_weights.size() != content_layers.size())
    throw std::invalid_argument("content weight count does not match content layers");
  if (!style_weights.empty() && style_weights.size() != style_layers.size())
    throw std::invalid_argument("style weight count does not match style layers");
  for (double w : content_weights)
    if (!(w > 0)) throw std::invalid_argument("layer weights must be positive");
  for (double w : style_weights)
    if (!(w > 0)) throw std::invalid_argument("layer weights must be positive");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(step_size > 0)) throw std::invalid_argument("step size must be > 0");
  if (warmup_iterations < 0) throw std::invalid_argument("warm-up iterations must be >= 0");
}

double StyleConfig::content_weight(std::size_t i) const {
  return content_weights.empty() ? 1.0 / static_cast<double>(content_layers.size()) : content_weights.at(i);
}

double StyleConfig::style_weight(std::size_t i) const {
  return style_weights.empty() ? 1.0 / static_cast<double>(style_layers.size()) : style_weights.at(i);
}

NetSpec truncate_at(const NetSpec& net, std::span<const std::string> layers) {
  std::size_t last = 0;
  for (const auto& name : layers) {
    const auto at = find_layer(net, name);
    if (!at) throw std::invalid_argument("network has no layer named " + name);
    last = std::max(last, *at);
  }
  return NetSpec(net.begin(), net.begin() + static_cast<std::ptrdiff_t>(last) + 1);
}

template <typename Scalar>
FeatureMap<Scalar> extract_features(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x,
                                    std::span<const std::string> layers) {
  if (x.rank() != 4 || x.dim(1) != 3) throw std::invalid_argument("extract_features expects (N, 3, H, W) images");
  const NetSpec prefix = truncate_at(net, layers);
  const auto fwd = forward(prefix, params, x, true);
  FeatureMap<Scalar> out;
  for (const auto& name : layers) out[name] = fwd.tape.output_of(prefix, name);
  return out;
}

template <typename Scalar>
MatrixR<Scalar> gram_matrix(const Tensor<Scalar>& batch, int n) {
  if (batch.rank() != 4) throw std::invalid_argument("gram_matrix expects (N, C, H, W) features");
  const auto f = batch.slice_matrix(n);
  MatrixR<Scalar> g = MatrixR<Scalar>::Zero(f.rows(), f.rows());
  g.template selfadjointView<Eigen::Lower>().rankUpdate(f);
  g = g.template selfadjointView<Eigen::Lower>();
  return g / static_cast<Scalar>(f.rows() * f.cols());
}

template <typename Scalar>
MatrixR<Scalar> gram_matrix(const Tensor<Scalar>& f) {
  if (f.rank() != 3) throw std::invalid_argument("gram_matrix expects (C, H, W) features");
  return gram_matrix(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}), 0);
}

template <typename Scalar>
GramFeature<Scalar> average_style(const NetSpec& net, const ParamSet<Scalar>& params, std::span<const Image> images,
                                  const StyleConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("average_style needs at least one image");
  std::map<std::string, MatrixR<double>> sum;
  constexpr std::size_t chunk = 32;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const auto part = images.subspan(start, std::min(chunk, images.size() - start));
    const Tensor<Scalar> x = batch_images(part).template cast<Scalar>();
    const auto feats = extract_features(net, params, x, cfg.style_layers);
    for (const auto& [name, f] : feats)
      for (int n = 0; n < f.dim(0); ++n) {
        const MatrixR<double> g = gram_matrix(f, n).template cast<double>();
        auto it = sum.find(name);
        if (it == sum.end()) sum.emplace(name, g);
        else it->second += g;
      }
  }
  GramFeature<Scalar> out;
  for (auto& [name, g] : sum) out[name] = (g / static_cast<double>(images.size())).template cast<Scalar>();
  return out;
}

template <typename Scalar>
StyleTarget<Scalar> make_target(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x_s,
                                GramFeature<Scalar> gram, const StyleConfig& cfg) {
  cfg.validate();
  for (const auto& name : cfg.style_layers)
    if (!gram.count(name)) throw std::invalid_argument("style target lacks a Gram matrix for " + name);
  StyleTarget<Scalar> t;
  if (!cfg.content_layers.empty()) t.content = extract_features(net, params, x_s, cfg.content_layers);
  t.gram = std::move(gram);
  return t;
}

template <typename Scalar>
PreLoss<Scalar> pre_loss(const NetSpec& net, const ParamSet<Scalar>& params, const Tensor<Scalar>& x_a,
                         const StyleTarget<Scalar>& target, const StyleConfig& cfg, bool want_grad) {
  std::vector<std::string> layers = cfg.content_layers;
  layers.insert(layers.end(), cfg.style_layers.begin(), cfg.style_layers.end());
  const NetSpec prefix = truncate_at(net, layers);
  const auto fwd = forward(prefix, params, x_a, true);
  const int n_img = x_a.dim(0);
  PreLoss<Scalar> out;
  out.content.assign(n_img, 0.0);
  out.style.assign(n_img, 0.0);
  std::map<std::string, Tensor<Scalar>> taps;

  for (std::size_t i = 0; i < cfg.content_layers.size(); ++i) {
    const auto& name = cfg.content_layers[i];
    const double w = cfg.content_weight(i);
    const Tensor<Scalar>& fa = fwd.tape.output_of(prefix, name);
    const Tensor<Scalar>& fs = target.content.at(name);
    if (fa.shape() != fs.shape()) throw std::invalid_argument("pre_loss: content target shape mismatch at " + name);
    Tensor<Scalar> diff(fa.shape(), VectorX<Scalar>(fa.vec() - fs.vec()));
    for (int n = 0; n < n_img; ++n) out.content[n] += 0.5 * w * diff.slice_matrix(n).template cast<double>().squaredNorm();
    if (want_grad) {
      diff.vec() *= static_cast<Scalar>(w);
      taps[name] = std::move(diff);
    }
  }
  for (std::size_t i = 0; i < cfg.style_layers.size(); ++i) {
    const auto& name = cfg.style_layers[i];
    const double w = cfg.style_weight(i);
    const Tensor<Scalar>& fa = fwd.tape.output_of(prefix, name);
    const MatrixR<Scalar>& target_gram = target.gram.at(name);
    Tensor<Scalar> g_tap(fa.shape());
    const auto scale = static_cast<Scalar>(fa.dim(1)) * fa.dim(2) * fa.dim(3);
    for (int n = 0; n < n_img; ++n) {
      const MatrixR<Scalar> d = gram_matrix(fa, n) - target_gram;
      out.style[n] += 0.5 * w * d.template cast<double>().squaredNorm();
      if (want_grad)
        g_tap.slice_matrix(n) = (static_cast<Scalar>(2 * w * cfg.lambda_s) / scale) * d * fa.slice_matrix(n);
    }
    if (want_grad) {
      auto [it, fresh] = taps.emplace(name, g_tap);
      if (!fresh) it->second.vec() += g_tap.vec();
    }
  }
  out.total.resize(n_img);
  for (int n = 0; n < n_img; ++n) {
    out.total[n] = out.content[n] + cfg.lambda_s * out.style[n];
    if (!std::isfinite(out.total[n])) throw std::runtime_error("pre_loss: non-finite loss");
  }
  if (want_grad) out.grad = backward(prefix, params, fwd.tape, Tensor<Scalar>(), taps, true, false).input;
  return out;
}

StylizeResult stylize(const NetSpec& net, const ParamSet<float>& params, const TensorF& x_s,
                      const StyleTarget<float>& target, const StyleConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int n_img = x_s.dim(0);
  TensorF x = x_s;
  if (cfg.init == StyleInit::white_noise)
    for (int n = 0; n < n_img; ++n) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n)));
      for (auto& v : x.slice_matrix(n).reshaped()) v = static_cast<float>(rng.uniform());
    }
  auto cur = pre_loss(net, params, x, target, cfg);
  StylizeResult result;
  result.traces.resize(n_img);
  std::vector<double> eta(n_img);
  for (int n = 0; n < n_img; ++n) {
    auto& t = result.traces[n];
    t.loss.push_back(cur.total[n]);
    t.initial_content = cur.content[n];
    t.initial_style = cur.style[n];
    const auto g = cur.grad.slice_matrix(n);
    const double rms = std::sqrt(g.template cast<double>().squaredNorm() / static_cast<double>(g.size()));
    eta[n] = rms > 0 ? cfg.step_size / rms : 0.0;
  }
  for (int step = 0; step < cfg.steps; ++step) {
    TensorF cand = x;
    for (int n = 0; n < n_img; ++n)
      cand.slice_matrix(n) = (x.slice_matrix(n) - static_cast<float>(eta[n]) * cur.grad.slice_matrix(n))
                                 .cwiseMax(0.0f)
                                 .cwiseMin(1.0f);
    PreLoss<float> next;
    try {
      next = pre_loss(net, params, cand, target, cfg);
    } catch (const std::runtime_error& e) {
      std::ostringstream os;
      os << "stylize diverged at step " << step + 1 << " (" << e.what() << "); loss trace of image 0:";
      for (double l : result.traces[0].loss) os << ' ' << l;
      throw std::runtime_error(os.str());
    }
    for (int n = 0; n < n_img; ++n) {
      if (next.total[n] < cur.total[n]) {
        x.slice_matrix(n) = cand.slice_matrix(n);
        cur.grad.slice_matrix(n) = next.grad.slice_matrix(n);
        cur.total[n] = next.total[n];
        cur.content[n] = next.content[n];
        cur.style[n] = next.style[n];
        eta[n] *= 1.1;
      } else {
        eta[n] *= 0.5;
      }
      result.traces[n].loss.push_back(cur.total[n]);
    }
  }
  for (int n = 0; n < n_img; ++n) {
    result.traces[n].final_content = cur.content[n];
    result.traces[n].final_style = cur.style[n];
  }
  result.images = std::move(x);
  return result;
}

ParamSet<float> warmup_feature_net(const StyleConfig& cfg, std::span<const Sample> macro,
                                   std::span<const Sample> micro_labeled, std::uint64_t seed) {
  std::vector<Sample> pool(macro.begin(), macro.end());
  pool.insert(pool.end(), micro_labeled.begin(), micro_labeled.end());
  if (pool.empty()) throw std::invalid_argument("feature-net warm-up needs labeled images");
  ClassifierConfig cls;
  BaselineConfig base;
  base.iterations = cfg.warmup_iterations;
  base.learning_rate = cfg.warmup_learning_rate;
  auto model = supervised_baseline(cfg.backbone, cls, base, pool, derive_seed(seed, 31));
  ParamSet<float> out;
  for (const auto& l : model.extractor)
    if (l.has_params()) out[l.name] = model.params.at(l.name);
  return out;
}

nlohmann::ordered_json to_json(const StyleConfig& cfg) {
  return {{"lambda_s", cfg.lambda_s},
          {"content_layers", cfg.content_layers},
          {"style_layers", cfg.style_layers},
          {"content_weights", cfg.content_weights},
          {"style_weights", cfg.style_weights},
          {"steps", cfg.steps},
          {"step_size", cfg.step_size},
          {"init", to_string(cfg.init)},
          {"warmup_iterations", cfg.warmup_iterations},
          {"warmup_learning_rate", cfg.warmup_learning_rate},
          {"backbone", {{"width", cfg.backbone.width}, {"z_dim", cfg.backbone.z_dim}}}};
}

StyleConfig style_config_from_json(const nlohmann::json& j) {
  StyleConfig cfg;
  cfg.lambda_s = j.value("lambda_s", cfg.lambda_s);
  cfg.content_layers = j.value("content_layers", cfg.content_layers);
  cfg.style_layers = j.value("style_layers", cfg.style_layers);
  cfg.content_weights = j.value("content_weights", cfg.content_weights);
  cfg.style_weights = j.value("style_weights", cfg.style_weights);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.step_size = j.value("step_size", cfg.step_size);
  cfg.init = style_init_from_string(j.value("init", to_string(cfg.init)));
  cfg.warmup_iterations = j.value("warmup_iterations", cfg.warmup_iterations);
  cfg.warmup_learning_rate = j.value("warmup_learning_rate", cfg.warmup_learning_rate);
  if (j.contains("backbone")) {
    cfg.backbone.width = j["backbone"].value("width", cfg.backbone.width);
    cfg.backbone.z_dim = j["backbone"].value("z_dim", cfg.backbone.z_dim);
  }
  cfg.validate();
  return cfg;
}

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::vector<Sample> stylize_dataset(std::span<const Sample> macro, std::span<const Sample> micro_labeled,
                                    const StyleConfig& cfg, std::uint64_t seed,
                                    const std::filesystem::path& cache_dir, StylizeReport* report) {
  cfg.validate();
  std::array<std::vector<std::size_t>, kNumClasses> macro_by_class;
  std::array<std::vector<Image>, kNumClasses> micro_by_class;
  for (std::size_t i = 0; i < macro.size(); ++i) macro_by_class.at(macro[i].label.value()).push_back(i);
  for (const auto& s : micro_labeled) micro_by_class.at(s.label.value()).push_back(s.image);
  for (int c = 0; c < kNumClasses; ++c)
    if (!macro_by_class[c].empty() && micro_by_class[c].empty())
      throw std::invalid_argument("class " + std::to_string(c) + " (" + to_string(static_cast<ShapeClass>(c)) +
                                  ") has macro samples but no labeled micro samples to take a style from");

  // Everything the outputs depend on goes into the cache key.
  nlohmann::ordered_json key = {{"style", to_json(cfg)}, {"seed", seed}};
  for (const auto& s : macro) key["macro"].push_back(s.seed);
  for (const auto& s : micro_labeled) key["micro"].push_back(s.seed);
  const std::string cfg_hash = hex16(fnv1a64(key.dump()));
  auto png_path = [&](const Sample& s) { return cache_dir / (hex16(s.seed) + "_" + cfg_hash + ".png"); };

  std::vector<Sample> out(macro.size());
  std::vector<bool> done(macro.size(), false);
  if (!cache_dir.empty())
    for (std::size_t i = 0; i < macro.size(); ++i)
      if (std::filesystem::exists(png_path(macro[i]))) {
        out[i] = {read_png(png_path(macro[i])), macro[i].label, Domain::adapted, macro[i].seed};
        done[i] = true;
        if (report) ++report->cached;
      }
  if (std::all_of(done.begin(), done.end(), [](bool b) { return b; })) return out;

  const NetSpec net = extractor_spec(cfg.backbone);
  const ParamSet<float> params = warmup_feature_net(cfg, macro, micro_labeled, seed);
  if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> todo;
    for (std::size_t i : macro_by_class[c])
      if (!done[i]) todo.push_back(i);
    if (todo.empty()) continue;
    const auto gram = average_style(net, params, std::span<const Image>(micro_by_class[c]), cfg);
    std::vector<Image> content;
    for (std::size_t i : todo) content.push_back(macro[i].image);
    const TensorF x_s = batch_images(content);
    const auto target = make_target(net, params, x_s, gram, cfg);
    const auto result = stylize(net, params, x_s, target, cfg, derive_seed(seed, 40 + c));
    for (std::size_t k = 0; k < todo.size(); ++k) {
      const std::size_t i = todo[k];
      const Image img = quantize8(unstack(result.images, static_cast<int>(k)));
      out[i] = {img, macro[i].label, Domain::adapted, macro[i].seed};
      if (report) ++report->computed;
      if (cache_dir.empty()) continue;
      write_png(png_path(macro[i]), img);
      const auto& t = result.traces[k];
      nlohmann::ordered_json side = {{"cfg_hash", cfg_hash},
                                     {"sample_seed", macro[i].seed},
                                     {"label", *macro[i].label},
                                     {"initial_content", t.initial_content},
                                     {"final_content", t.final_content},
                                     {"initial_style", t.initial_style},
                                     {"final_style", t.final_style},
                                     {"loss", t.loss}};
      std::ofstream(std::filesystem::path(png_path(macro[i])).replace_extension(".json")) << side.dump(1) << '\n';
    }
  }
  return out;
}

#define MICROCL_INSTANTIATE(T)                                                                                   \
  template FeatureMap<T> extract_features(const NetSpec&, const ParamSet<T>&, const Tensor<T>&,                 \
                                          std::span<const std::string>);                                         \
  template MatrixR<T> gram_matrix(const Tensor<T>&);                                                             \
  template MatrixR<T> gram_matrix(const Tensor<T>&, int);                                                        \
  template GramFeature<T> average_style(const NetSpec&, const ParamSet<T>&, std::span<const Image>,              \
                                        const StyleConfig&);                                                     \
  template StyleTarget<T> make_target(const NetSpec&, const ParamSet<T>&, const Tensor<T>&, GramFeature<T>,      \
                                      const StyleConfig&);                                                       \
  template PreLoss<T> pre_loss(const NetSpec&, const ParamSet<T>&, const Tensor<T>&, const StyleTarget<T>&,      \
                               const StyleConfig&, bool);

MICROCL_INSTANTIATE(float)
MICROCL_INSTANTIATE(double)

}  // namespace microcl
