#include "microcl/data_synth.hpp"

#include "microcl/augment.hpp"
#include "microcl/models.hpp"
#include "microcl/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace microcl {

std::string to_string(ShapeClass cls) {
  switch (cls) {
    case ShapeClass::ring: return "ring";
    case ShapeClass::crescent: return "crescent";
    case ShapeClass::double_lobe: return "double-lobe";
    case ShapeClass::notched_disc: return "notched-disc";
  }
  throw std::invalid_argument("unknown shape class");
}

std::string to_string(Domain domain) {
  switch (domain) {
    case Domain::macro: return "macro";
    case Domain::micro: return "micro";
    case Domain::adapted: return "adapted";
  }
  return "?";
}

Domain domain_from_string(const std::string& name) {
  for (auto d : {Domain::macro, Domain::micro, Domain::adapted})
    if (to_string(d) == name) return d;
  throw std::invalid_argument("unknown domain '" + name + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::macro: return "macro";
    case Split::micro_labeled: return "micro_labeled";
    case Split::micro_unlabeled: return "micro_unlabeled";
    case Split::test: return "test";
  }
  return "?";
}

void SplitSpec::validate() const {
  if (macro_per_class < 0 || micro_labeled_per_class < 0 || micro_unlabeled_per_class < 0 || micro_test_per_class < 0)
    throw std::invalid_argument("split counts must be >= 0");
  if (macro_per_class >= (1 << 24) || micro_labeled_per_class >= (1 << 24) || micro_unlabeled_per_class >= (1 << 24) ||
      micro_test_per_class >= (1 << 24))
    throw std::invalid_argument("split counts must be < 2^24");
  if (image_size < 32) throw std::invalid_argument("image size must be >= 32");
}

std::uint64_t sample_seed(std::uint64_t master_seed, Split split, int cls, int index) {
  // XOR with an injective code keeps seeds distinct across (split, class, index).
  const std::uint64_t code = (static_cast<std::uint64_t>(split) << 40) | (static_cast<std::uint64_t>(cls) << 32) |
                             static_cast<std::uint64_t>(index);
  return splitmix64(master_seed) ^ code;
}

namespace {

struct Geometry {
  int cls = 0;
  double cx = 0.5, cy = 0.5, cos_a = 1.0, sin_a = 0.0;
  double a = 0.0, b = 0.0, c = 0.0;  // class-specific sizes, in image-width units
};

Geometry draw_geometry(int cls, Domain domain, std::uint64_t seed) {
  if (cls < 0 || cls >= kNumClasses) throw std::invalid_argument("class must be in [0, 3]");
  Rng rng(derive_seed(seed, 1));
  Geometry g;
  g.cls = cls;
  g.cx = 0.5 + rng.uniform(-0.08, 0.08);
  g.cy = 0.5 + rng.uniform(-0.08, 0.08);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  g.cos_a = std::cos(angle);
  g.sin_a = std::sin(angle);
  const double k = domain == Domain::micro ? rng.uniform(0.75, 0.95) : 1.0;
  switch (static_cast<ShapeClass>(cls)) {
    case ShapeClass::ring:
      g.a = rng.uniform(0.25, 0.33) * k;  // outer radius
      g.b = g.a * rng.uniform(0.5, 0.65);  // inner radius
      break;
    case ShapeClass::crescent:
      g.a = rng.uniform(0.27, 0.33) * k;   // disc radius
      g.b = g.a * rng.uniform(0.78, 0.9);  // bite radius
      g.c = g.a * rng.uniform(0.38, 0.5);  // bite offset
      break;
    case ShapeClass::double_lobe:
      g.a = rng.uniform(0.14, 0.18) * k;   // lobe radius
      g.c = g.a * rng.uniform(0.95, 1.1);  // lobe centre offset
      break;
    case ShapeClass::notched_disc:
      g.a = rng.uniform(0.25, 0.31) * k;    // disc radius
      g.b = g.a * rng.uniform(0.3, 0.4);    // notch radius
      g.c = g.a * rng.uniform(0.95, 1.05);  // notch centre offset
      break;
  }
  return g;
}

bool inside(const Geometry& g, double px, double py) {
  const double dx = px - g.cx, dy = py - g.cy;
  const double u = g.cos_a * dx + g.sin_a * dy;
  const double v = -g.sin_a * dx + g.cos_a * dy;
  const double r2 = u * u + v * v;
  switch (static_cast<ShapeClass>(g.cls)) {
    case ShapeClass::ring: return r2 <= g.a * g.a && r2 >= g.b * g.b;
    case ShapeClass::crescent: return r2 <= g.a * g.a && (u - g.c) * (u - g.c) + v * v > g.b * g.b;
    case ShapeClass::double_lobe: {
      const double ax = 1.15 * g.a;
      auto lobe = [&](double centre) {
        const double du = (u - centre) / ax, dv = v / g.a;
        return du * du + dv * dv <= 1.0;
      };
      return lobe(g.c) || lobe(-g.c);
    }
    case ShapeClass::notched_disc: {
      const bool stem = std::abs(u) < 0.02 && v > -1.2 * g.a && v < -0.75 * g.a;
      const bool notch = u * u + (v + g.c) * (v + g.c) < g.b * g.b;
      return (r2 <= g.a * g.a && !notch) || stem;
    }
  }
  return false;
}

TensorF render_mask(const Geometry& g, int size) {
  constexpr int kSub = 3;
  TensorF mask({1, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int i = 0; i < kSub; ++i)
        for (int j = 0; j < kSub; ++j)
          hits += inside(g, (x + (j + 0.5) / kSub) / size, (y + (i + 0.5) / kSub) / size);
      mask[y * size + x] = static_cast<float>(hits) / (kSub * kSub);
    }
  return mask;
}

std::array<double, 3> random_color(Rng& rng, double hue, double s_lo, double s_hi, double l_lo, double l_hi) {
  return hsl_to_rgb(hue, rng.uniform(s_lo, s_hi), rng.uniform(l_lo, l_hi));
}

// Soft disc of radius r at (cx, cy), in image-width units.
void blend_disc(Image& img, double cx, double cy, double r, const std::array<double, 3>& color, double opacity) {
  const int h = img.dim(1), w = img.dim(2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = (x + 0.5) / w - cx, dy = (y + 0.5) / h - cy;
      const double t = std::clamp((r - std::sqrt(dx * dx + dy * dy)) * w + 0.5, 0.0, 1.0) * opacity;
      if (t <= 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        float& p = img[(c * h + y) * w + x];
        p = static_cast<float>((1.0 - t) * p + t * color[c]);
      }
    }
}

Image render_macro(const TensorF& mask, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  const int size = mask.dim(1);
  const double base = rng.uniform(0.78, 0.92);
  std::array<double, 3> bg;
  for (auto& c : bg) c = base + rng.uniform(-0.03, 0.03);
  const auto fg = random_color(rng, rng.uniform(0.0, 360.0), 0.4, 0.9, 0.2, 0.45);
  const double ramp = rng.uniform(-0.05, 0.05);
  const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Image img({3, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double m = mask[y * size + x];
      const double shade = 1.0 + ramp * ((x + 0.5) / size - 0.5) * std::cos(ramp_angle) * 2.0 +
                           ramp * ((y + 0.5) / size - 0.5) * std::sin(ramp_angle) * 2.0;
      for (int c = 0; c < 3; ++c)
        img[(c * size + y) * size + x] =
            static_cast<float>(((1.0 - m) * bg[c] + m * fg[c]) * shade + 0.01 * rng.normal());
    }
  return quantize8(std::move(img));
}

Image render_micro(const TensorF& mask, const Geometry& g, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  const int size = mask.dim(1);
  const double bg_hue = rng.uniform(0.0, 360.0);
  const auto bg = random_color(rng, bg_hue, 0.25, 0.65, 0.6, 0.85);
  const auto fg = random_color(rng, bg_hue + rng.uniform(-60.0, 60.0), 0.3, 0.8, 0.25, 0.5);
  Image img({3, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double m = mask[y * size + x];
      for (int c = 0; c < 3; ++c) img[(c * size + y) * size + x] = static_cast<float>((1.0 - m) * bg[c] + m * fg[c]);
    }
  // Faint debris anywhere, darker granules inside the object.
  const int debris = rng.index(4);
  for (int i = 0; i < debris; ++i) {
    std::array<double, 3> tone;
    for (int c = 0; c < 3; ++c) tone[c] = 0.7 * bg[c] + 0.3 * fg[c];
    blend_disc(img, rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.03, 0.08), tone, 0.8);
  }
  const int granules = 2 + rng.index(4);
  for (int i = 0; i < granules; ++i) {
    // Rejection-sample a point on the object.
    for (int tries = 0; tries < 50; ++tries) {
      const double px = rng.uniform(0.0, 1.0), py = rng.uniform(0.0, 1.0);
      if (!inside(g, px, py)) continue;
      std::array<double, 3> dark;
      for (int c = 0; c < 3; ++c) dark[c] = 0.6 * fg[c];
      blend_disc(img, px, py, rng.uniform(0.015, 0.035), dark, 0.9);
      break;
    }
  }
  img = gaussian_blur(img, rng.uniform(0.5, 1.5));
  const double contrast = rng.uniform(0.7, 1.2);
  const double brightness = rng.uniform(-0.1, 0.1);
  const double speckle = rng.uniform(0.03, 0.08);
  for (auto& p : img.values()) {
    double v = (p - 0.5) * contrast + 0.5 + brightness;
    v *= 1.0 + speckle * rng.normal();
    p = static_cast<float>(v + 0.01 * rng.normal());
  }
  return quantize8(std::move(img));
}

}  // namespace

TensorF shape_mask(int cls, Domain domain, int size, std::uint64_t seed) {
  return render_mask(draw_geometry(cls, domain, seed), size);
}

Sample generate_sample(int cls, Domain domain, int size, std::uint64_t seed) {
  if (size < 32) throw std::invalid_argument("image size must be >= 32");
  if (domain == Domain::adapted) throw std::invalid_argument("adapted samples come from stylization, not generation");
  const Geometry g = draw_geometry(cls, domain, seed);
  const TensorF mask = render_mask(g, size);
  Sample s;
  s.image = domain == Domain::macro ? render_macro(mask, seed) : render_micro(mask, g, seed);
  s.label = cls;
  s.domain = domain;
  s.seed = seed;
  return s;
}

DatasetBundle make_splits(const SplitSpec& spec) {
  spec.validate();
  DatasetBundle data;
  data.spec = spec;
  auto fill = [&](std::vector<Sample>& out, Split split, Domain domain, int per_class, bool labeled) {
    out.reserve(static_cast<std::size_t>(per_class) * kNumClasses);
    for (int cls = 0; cls < kNumClasses; ++cls)
      for (int i = 0; i < per_class; ++i) {
        Sample s = generate_sample(cls, domain, spec.image_size, sample_seed(spec.master_seed, split, cls, i));
        if (!labeled) s.label.reset();
        out.push_back(std::move(s));
      }
  };
  fill(data.macro, Split::macro, Domain::macro, spec.macro_per_class, true);
  fill(data.micro_labeled, Split::micro_labeled, Domain::micro, spec.micro_labeled_per_class, true);
  fill(data.micro_unlabeled, Split::micro_unlabeled, Domain::micro, spec.micro_unlabeled_per_class, false);
  fill(data.test, Split::test, Domain::micro, spec.micro_test_per_class, true);
  data.test_colordropped.reserve(data.test.size());
  for (const auto& s : data.test) {
    Sample d = s;
    d.image = quantize8(color_drop(s.image));
    data.test_colordropped.push_back(std::move(d));
  }
  return data;
}

namespace {

struct SplitRef {
  const char* name;
  std::vector<Sample> DatasetBundle::*member;
};

constexpr SplitRef kSplits[] = {{"macro", &DatasetBundle::macro},
                                {"micro_labeled", &DatasetBundle::micro_labeled},
                                {"micro_unlabeled", &DatasetBundle::micro_unlabeled},
                                {"test", &DatasetBundle::test},
                                {"test_colordropped", &DatasetBundle::test_colordropped}};

std::string sample_path(const char* split, std::size_t i, const Sample& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s/%05zu_%016llx.png", split, i, static_cast<unsigned long long>(s.seed));
  return buf;
}

}  // namespace

nlohmann::json to_json(const SplitSpec& spec) {
  return {{"macro_per_class", spec.macro_per_class},
          {"micro_labeled_per_class", spec.micro_labeled_per_class},
          {"micro_unlabeled_per_class", spec.micro_unlabeled_per_class},
          {"micro_test_per_class", spec.micro_test_per_class},
          {"image_size", spec.image_size},
          {"master_seed", spec.master_seed}};
}

SplitSpec split_spec_from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.macro_per_class = j.value("macro_per_class", s.macro_per_class);
  s.micro_labeled_per_class = j.value("micro_labeled_per_class", s.micro_labeled_per_class);
  s.micro_unlabeled_per_class = j.value("micro_unlabeled_per_class", s.micro_unlabeled_per_class);
  s.micro_test_per_class = j.value("micro_test_per_class", s.micro_test_per_class);
  s.image_size = j.value("image_size", s.image_size);
  s.master_seed = j.value("master_seed", s.master_seed);
  return s;
}

nlohmann::json manifest_json(const DatasetBundle& data) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& [name, member] : kSplits) {
    const auto& split = data.*member;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const Sample& s = split[i];
      samples.push_back({{"path", sample_path(name, i, s)},
                         {"split", name},
                         {"label", s.label ? nlohmann::json(*s.label) : nlohmann::json(nullptr)},
                         {"domain", to_string(s.domain)},
                         {"seed", s.seed}});
    }
  }
  return {{"spec", to_json(data.spec)}, {"samples", std::move(samples)}};
}

void write_dataset(const DatasetBundle& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto manifest = manifest_json(data);
  for (const auto& [name, member] : kSplits) {
    fs::create_directories(dir / name);
    const auto& split = data.*member;
    for (std::size_t i = 0; i < split.size(); ++i) write_png(dir / sample_path(name, i, split[i]), split[i].image);
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + (dir / "manifest.json").string());
}

DatasetBundle read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  DatasetBundle data;
  data.spec = split_spec_from_json(manifest.at("spec"));
  for (const auto& entry : manifest.at("samples")) {
    Sample s;
    s.image = read_png(dir / entry.at("path").get<std::string>());
    if (!entry.at("label").is_null()) s.label = entry.at("label").get<int>();
    s.domain = domain_from_string(entry.at("domain").get<std::string>());
    s.seed = entry.at("seed").get<std::uint64_t>();
    const auto split = entry.at("split").get<std::string>();
    bool placed = false;
    for (const auto& [name, member] : kSplits)
      if (split == name) {
        (data.*member).push_back(std::move(s));
        placed = true;
        break;
      }
    if (!placed) throw std::runtime_error("manifest names unknown split '" + split + "'");
  }
  return data;
}

}  // namespace microcl
