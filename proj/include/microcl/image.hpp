#pragma once

#include "microcl/tensor.hpp"

#include <filesystem>

namespace microcl {

/// Images are (3, H, W) float tensors with values in [0, 1].
using Image = TensorF;

inline int image_height(const Image& img) { return img.dim(1); }
inline int image_width(const Image& img) { return img.dim(2); }

/// Throws unless `img` is a finite (3, H, W) tensor within [0, 1].
void require_valid_image(const Image& img);

/// Clamp to [0, 1] and snap to the nearest multiple of 1/255, so 8-bit PNG
/// round trips are exact.
Image quantize8(Image img);

Image flip_horizontal(const Image& img);

/// Separable Gaussian blur with replicated borders.
Image gaussian_blur(const Image& img, double sigma);

/// Batch of images as one (N, 3, H, W) tensor.
TensorF batch_images(std::span<const Image> images);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace microcl
