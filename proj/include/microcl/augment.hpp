#pragma once

#include "microcl/image.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace microcl {

enum class FilterKind { none, sobel, scharr, laplacian };

std::string to_string(FilterKind kind);
FilterKind filter_kind_from_string(const std::string& name);

/// Appearance-transform ranges. Each shift is drawn uniformly from
/// [-range, range]; all-zero ranges with no filter is the identity.
struct AugmentSpec {
  double hue_degrees = 0.0;
  double lightness = 0.0;
  double saturation = 0.0;
  FilterKind filter = FilterKind::none;
  std::uint64_t seed = 0;

  friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

/// HSL with hue in degrees [0, 360), saturation and lightness in [0, 1].
std::array<double, 3> rgb_to_hsl(double r, double g, double b);
std::array<double, 3> hsl_to_rgb(double h, double s, double l);

/// Rotate hue by `hue_degrees`, add `lightness` and `saturation`, clamp.
Image hsl_shift(const Image& img, double hue_degrees, double lightness, double saturation);

/// Random hue/lightness/saturation jitter; deterministic in (img, spec, seed).
Image color_distort(const Image& img, const AugmentSpec& spec, std::uint64_t seed);

/// Per-channel 3x3 edge response (gradient magnitude for sobel/scharr,
/// |4-neighbour laplacian|) with replicated borders, scaled by the image's
/// maximum response into [0, 1].
Image edge_filter(const Image& img, FilterKind kind);

/// Luminance 0.299 R + 0.587 G + 0.114 B copied to all three channels.
Image color_drop(const Image& img);

}  // namespace microcl
