#pragma once

#include <filesystem>

#include "meshforge/types.hpp"

namespace meshforge {

// Grayscale raster, row-major, origin at the top-left pixel.
struct Image {
  int width = 0;
  int height = 0;
  VecX pixels;  // width * height values

  Image() = default;
  Image(int w, int h, Scalar fill = 0) : width(w), height(h), pixels(VecX::Constant(w * h, fill)) {}

  Scalar& at(int x, int y) { return pixels(y * width + x); }
  Scalar at(int x, int y) const { return pixels(y * width + x); }
};

// 8-bit binary PGM; values are clamped from [0, 1].
void save_pgm(const Image& img, const std::filesystem::path& path);

// 16-bit PGM mapping [0, far] depths; +inf background becomes maxval.
void save_pgm_depth(const Image& img, Scalar far, const std::filesystem::path& path);

// Reads an 8-bit or 16-bit binary PGM back into [0, 1] values.
Image load_pgm(const std::filesystem::path& path);

}  // namespace meshforge
