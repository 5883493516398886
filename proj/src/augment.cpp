#include "microcl/augment.hpp"

#include "microcl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace microcl {

std::string to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::none: return "none";
    case FilterKind::sobel: return "sobel";
    case FilterKind::scharr: return "scharr";
    case FilterKind::laplacian: return "laplacian";
  }
  return "?";
}

FilterKind filter_kind_from_string(const std::string& name) {
  for (auto k : {FilterKind::none, FilterKind::sobel, FilterKind::scharr, FilterKind::laplacian})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown filter kind '" + name + "'");
}

std::array<double, 3> rgb_to_hsl(double r, double g, double b) {
  const double hi = std::max({r, g, b});
  const double lo = std::min({r, g, b});
  const double l = 0.5 * (hi + lo);
  const double d = hi - lo;
  if (d <= 0.0) return {0.0, 0.0, l};
  const double s = d / (1.0 - std::abs(2.0 * l - 1.0));
  double h;
  if (hi == r)
    h = std::fmod((g - b) / d, 6.0);
  else if (hi == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h *= 60.0;
  if (h < 0.0) h += 360.0;
  return {h, std::clamp(s, 0.0, 1.0), l};
}

std::array<double, 3> hsl_to_rgb(double h, double s, double l) {
  const double c = (1.0 - std::abs(2.0 * l - 1.0)) * s;
  const double hp = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = l - 0.5 * c;
  return {r + m, g + m, b + m};
}

Image hsl_shift(const Image& img, double hue_degrees, double lightness, double saturation) {
  require_valid_image(img);
  if (hue_degrees == 0.0 && lightness == 0.0 && saturation == 0.0) return img;
  const Eigen::Index plane = static_cast<Eigen::Index>(img.dim(1)) * img.dim(2);
  Image out(img.shape());
  for (Eigen::Index i = 0; i < plane; ++i) {
    auto [h, s, l] = rgb_to_hsl(img[i], img[plane + i], img[2 * plane + i]);
    const auto rgb = hsl_to_rgb(h + hue_degrees, std::clamp(s + saturation, 0.0, 1.0), std::clamp(l + lightness, 0.0, 1.0));
    for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
  }
  return out;
}

Image color_distort(const Image& img, const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(spec.seed, seed));
  const double dh = rng.uniform(-spec.hue_degrees, spec.hue_degrees);
  const double dl = rng.uniform(-spec.lightness, spec.lightness);
  const double ds = rng.uniform(-spec.saturation, spec.saturation);
  return hsl_shift(img, dh, dl, ds);
}

Image edge_filter(const Image& img, FilterKind kind) {
  require_valid_image(img);
  if (kind == FilterKind::none) throw std::invalid_argument("edge_filter needs sobel, scharr or laplacian");
  const int h = img.dim(1), w = img.dim(2);
  const double side = kind == FilterKind::scharr ? 3.0 : 1.0;
  const double mid = kind == FilterKind::scharr ? 10.0 : 2.0;
  Image out(img.shape());
  for (int c = 0; c < 3; ++c) {
    const float* src = img.data() + c * h * w;
    auto at = [&](int y, int x) -> double { return src[std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1)]; };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double response;
        if (kind == FilterKind::laplacian) {
          response = std::abs(at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x));
        } else {
          const double gx = side * (at(y - 1, x + 1) - at(y - 1, x - 1)) + mid * (at(y, x + 1) - at(y, x - 1)) +
                            side * (at(y + 1, x + 1) - at(y + 1, x - 1));
          const double gy = side * (at(y + 1, x - 1) - at(y - 1, x - 1)) + mid * (at(y + 1, x) - at(y - 1, x)) +
                            side * (at(y + 1, x + 1) - at(y - 1, x + 1));
          response = std::sqrt(gx * gx + gy * gy);
        }
        out[(c * h + y) * w + x] = static_cast<float>(response);
      }
  }
  const float peak = out.size() ? out.vec().maxCoeff() : 0.0f;
  if (peak > 0.0f) out.vec() /= peak;
  out.vec() = out.vec().cwiseMin(1.0f);
  return out;
}

Image color_drop(const Image& img) {
  require_valid_image(img);
  const Eigen::Index plane = static_cast<Eigen::Index>(img.dim(1)) * img.dim(2);
  Image out(img.shape());
  for (Eigen::Index i = 0; i < plane; ++i) {
    const float r = img[i], g = img[plane + i], b = img[2 * plane + i];
    const float lum = (r == g && g == b) ? r : static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
    for (int c = 0; c < 3; ++c) out[c * plane + i] = lum;
  }
  return out;
}

}  // namespace microcl
