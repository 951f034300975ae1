#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "conceptmil/matrix.hpp"

namespace conceptmil {

// 8-bit RGB raster. Loads PPM (P6) and PNG, chosen by file magic.
struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // RGB interleaved

  std::uint8_t channel(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  static RasterImage load(const std::filesystem::path& path);
  void save_ppm(const std::filesystem::path& path) const;
};

struct SegParams {
  int saturation_threshold = 20;  // 0..255
  bool otsu = false;              // derive the threshold from the histogram
  int median_kernel = 7;          // odd
  int closing_kernel = 4;         // square structuring element
  int min_area = 512;             // connected components below this are dropped
  int patch_size = 448;           // pixels at full resolution
  // The mask is assumed to live at 1/downsample of the patch resolution;
  // tiling windows shrink accordingly. 1 at desk scale.
  int downsample = 1;

  void validate() const;
  int mask_window() const;  // patch_size / downsample, at least 1
};

struct TissueMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;  // 0 background, 1 tissue

  std::uint8_t at(std::size_t x, std::size_t y) const {
    return values[y * width + x];
  }
  std::size_t area() const;
  double iou(const TissueMask& other) const;
  void save_pgm(const std::filesystem::path& path) const;
  static TissueMask load_pgm(const std::filesystem::path& path);
};

std::vector<std::uint8_t> saturation_channel(const RasterImage& img);

// HSV saturation -> median blur -> threshold -> morphological closing ->
// connected components filtered by area.
TissueMask segment_tissue(const RasterImage& img, const SegParams& params);

// Non-overlapping grid of windows fully inside the mask; a window is kept
// when at least half of its pixels are foreground. Coordinates are in patch
// units, row-major.
std::vector<std::pair<std::uint32_t, std::uint32_t>> tile(const TissueMask& mask,
                                                          const SegParams& params);

// Stand-in patch featurizer: average-pool each patch to a fixed 16x16x3
// grid, project with a seeded fixed random matrix, L2-normalize rows.
Matrix stub_featurize(const RasterImage& img,
                      std::span<const std::pair<std::uint32_t, std::uint32_t>> coords,
                      const SegParams& params, std::size_t dim,
                      std::uint64_t seed);

}  // namespace conceptmil
