#include "conceptmil/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>

#include <png.h>

#include "conceptmil/errors.hpp"
#include "conceptmil/rng.hpp"

namespace conceptmil {

namespace {

RasterImage load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(path.string() + ": not a P6 PPM");
  auto next_int = [&]() -> long {
    // Skip whitespace and '#' comments between header tokens.
    while (true) {
      const int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw ParseError(path.string() + ": bad PPM header");
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (maxval != 255) throw ParseError(path.string() + ": PPM maxval must be 255");
  in.get();  // single whitespace after header
  RasterImage img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.pixels.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw ParseError(path.string() + ": truncated PPM payload");
  }
  return img;
}

RasterImage load_png(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open image " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  RasterImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ParseError(path.string() + ": PNG decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  // Normalize everything to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.pixels.resize(img.width * img.height * 3);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    rows[y] = img.pixels.data() + y * img.width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace

RasterImage RasterImage::load(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image " + path.string());
  std::array<unsigned char, 8> magic{};
  probe.read(reinterpret_cast<char*>(magic.data()), magic.size());
  probe.close();
  static const unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (std::memcmp(magic.data(), kPngMagic, 8) == 0) return load_png(path);
  if (magic[0] == 'P' && magic[1] == '6') return load_ppm(path);
  throw ParseError(path.string() + ": unsupported image format (PPM P6 or PNG)");
}

void RasterImage::save_ppm(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

void SegParams::validate() const {
  if (saturation_threshold < 0 || saturation_threshold > 255) {
    throw ConfigError("segment: saturation threshold must lie in 0..255");
  }
  if (median_kernel < 1 || median_kernel % 2 == 0) {
    throw ConfigError("segment: median kernel must be odd and positive");
  }
  if (closing_kernel < 1) throw ConfigError("segment: closing kernel must be positive");
  if (min_area < 0) throw ConfigError("segment: min area must be >= 0");
  if (patch_size < 1) throw ConfigError("segment: patch size must be positive");
  if (downsample < 1) throw ConfigError("segment: downsample must be >= 1");
}

int SegParams::mask_window() const {
  return std::max(1, patch_size / downsample);
}

std::size_t TissueMask::area() const {
  std::size_t n = 0;
  for (std::uint8_t v : values) n += (v != 0);
  return n;
}

double TissueMask::iou(const TissueMask& other) const {
  if (width != other.width || height != other.height) {
    throw ShapeError("mask iou: size mismatch");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const bool a = values[i] != 0, b = other.values[i] != 0;
    inter += (a && b);
    uni += (a || b);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void TissueMask::save_pgm(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mask " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  for (std::uint8_t v : values) out.put(v ? char(255) : char(0));
}

TissueMask TissueMask::load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask " + path.string());
  std::string magic;
  long w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError(path.string() + ": not an 8-bit P5 PGM");
  }
  in.get();
  TissueMask mask;
  mask.width = static_cast<std::size_t>(w);
  mask.height = static_cast<std::size_t>(h);
  std::vector<std::uint8_t> raw(mask.width * mask.height);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw ParseError(path.string() + ": truncated PGM payload");
  }
  mask.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) mask.values[i] = raw[i] >= 128;
  return mask;
}

std::vector<std::uint8_t> saturation_channel(const RasterImage& img) {
  std::vector<std::uint8_t> sat(img.width * img.height);
  for (std::size_t i = 0; i < sat.size(); ++i) {
    const std::uint8_t r = img.pixels[i * 3], g = img.pixels[i * 3 + 1],
                       b = img.pixels[i * 3 + 2];
    const std::uint8_t mx = std::max({r, g, b});
    const std::uint8_t mn = std::min({r, g, b});
    sat[i] = mx == 0 ? 0
                     : static_cast<std::uint8_t>(
                           (255 * (mx - mn) + mx / 2) / mx);  // rounded
  }
  return sat;
}

namespace {

std::vector<std::uint8_t> median_blur(const std::vector<std::uint8_t>& src,
                                      std::size_t w, std::size_t h, int kernel) {
  if (kernel == 1) return src;
  const int r = kernel / 2;
  std::vector<std::uint8_t> dst(src.size());
  std::array<int, 256> hist{};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      hist.fill(0);
      int count = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const std::size_t yy = static_cast<std::size_t>(
            std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
        for (int dx = -r; dx <= r; ++dx) {
          const std::size_t xx = static_cast<std::size_t>(std::clamp<long>(
              static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
          ++hist[src[yy * w + xx]];
          ++count;
        }
      }
      int target = (count + 1) / 2;
      int v = 0;
      for (; v < 256; ++v) {
        target -= hist[v];
        if (target <= 0) break;
      }
      dst[y * w + x] = static_cast<std::uint8_t>(v);
    }
  }
  return dst;
}

int otsu_threshold(const std::vector<std::uint8_t>& values) {
  std::array<long long, 256> hist{};
  for (std::uint8_t v : values) ++hist[v];
  const long long total = static_cast<long long>(values.size());
  long long sum_all = 0;
  for (int v = 0; v < 256; ++v) sum_all += static_cast<long long>(v) * hist[v];
  long long w0 = 0, sum0 = 0;
  double best_var = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    if (w0 == 0) continue;
    const long long w1 = total - w0;
    if (w1 == 0) break;
    sum0 += static_cast<long long>(t) * hist[t];
    const double m0 = static_cast<double>(sum0) / static_cast<double>(w0);
    const double m1 =
        static_cast<double>(sum_all - sum0) / static_cast<double>(w1);
    const double var = static_cast<double>(w0) * static_cast<double>(w1) *
                       (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

// Square-element dilation/erosion. The erosion uses the reflected support so
// the pair forms a proper closing. Pixels outside the image contribute
// nothing: dilation cannot grow from the border and erosion cannot eat it.
std::vector<std::uint8_t> morph(const std::vector<std::uint8_t>& src,
                                std::size_t w, std::size_t h, int lo, int hi,
                                bool dilate) {
  std::vector<std::uint8_t> dst(src.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint8_t acc = dilate ? 0 : 1;
      for (int dy = -lo; dy <= hi && (dilate ? acc == 0 : acc == 1); ++dy) {
        const long yy = static_cast<long>(y) + dy;
        if (yy < 0 || yy >= static_cast<long>(h)) continue;
        for (int dx = -lo; dx <= hi; ++dx) {
          const long xx = static_cast<long>(x) + dx;
          if (xx < 0 || xx >= static_cast<long>(w)) continue;
          const std::uint8_t v = src[static_cast<std::size_t>(yy) * w +
                                     static_cast<std::size_t>(xx)];
          if (dilate && v) {
            acc = 1;
            break;
          }
          if (!dilate && !v) {
            acc = 0;
            break;
          }
        }
      }
      dst[y * w + x] = acc;
    }
  }
  return dst;
}

}  // namespace

TissueMask segment_tissue(const RasterImage& img, const SegParams& params) {
  params.validate();
  const std::size_t w = img.width, h = img.height;
  std::vector<std::uint8_t> sat = saturation_channel(img);
  sat = median_blur(sat, w, h, params.median_kernel);

  const int threshold =
      params.otsu ? otsu_threshold(sat) : params.saturation_threshold;
  std::vector<std::uint8_t> binary(sat.size());
  for (std::size_t i = 0; i < sat.size(); ++i) binary[i] = sat[i] > threshold;

  if (params.closing_kernel > 1) {
    const int k = params.closing_kernel;
    const int lo = k / 2, hi = (k - 1) / 2;
    binary = morph(binary, w, h, lo, hi, true);   // dilate
    binary = morph(binary, w, h, hi, lo, false);  // erode with reflected element
  }

  // Connected components (8-connectivity), drop areas below min_area.
  TissueMask mask;
  mask.width = w;
  mask.height = h;
  mask.values.assign(w * h, 0);
  std::vector<std::uint8_t> visited(w * h, 0);
  std::vector<std::size_t> component;
  for (std::size_t start = 0; start < binary.size(); ++start) {
    if (!binary[start] || visited[start]) continue;
    component.clear();
    std::deque<std::size_t> queue{start};
    visited[start] = 1;
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      component.push_back(p);
      const long px = static_cast<long>(p % w), py = static_cast<long>(p / w);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const long nx = px + dx, ny = py + dy;
          if (nx < 0 || ny < 0 || nx >= static_cast<long>(w) ||
              ny >= static_cast<long>(h)) {
            continue;
          }
          const std::size_t q = static_cast<std::size_t>(ny) * w +
                                static_cast<std::size_t>(nx);
          if (binary[q] && !visited[q]) {
            visited[q] = 1;
            queue.push_back(q);
          }
        }
      }
    }
    if (component.size() >= static_cast<std::size_t>(params.min_area)) {
      for (std::size_t p : component) mask.values[p] = 1;
    }
  }
  return mask;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> tile(
    const TissueMask& mask, const SegParams& params) {
  params.validate();
  const std::size_t window = static_cast<std::size_t>(params.mask_window());
  std::vector<std::pair<std::uint32_t, std::uint32_t>> coords;
  const std::size_t grid_w = mask.width / window;
  const std::size_t grid_h = mask.height / window;
  for (std::size_t gy = 0; gy < grid_h; ++gy) {
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      std::size_t fg = 0;
      for (std::size_t y = gy * window; y < (gy + 1) * window; ++y) {
        for (std::size_t x = gx * window; x < (gx + 1) * window; ++x) {
          fg += mask.at(x, y);
        }
      }
      if (2 * fg >= window * window) {  // >= 50%, boundary kept
        coords.emplace_back(static_cast<std::uint32_t>(gx),
                            static_cast<std::uint32_t>(gy));
      }
    }
  }
  return coords;
}

Matrix stub_featurize(
    const RasterImage& img,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> coords,
    const SegParams& params, std::size_t dim, std::uint64_t seed) {
  params.validate();
  if (dim == 0) throw ConfigError("stub_featurize: dim must be positive");
  constexpr std::size_t kPoolGrid = 16;
  constexpr std::size_t kPooled = kPoolGrid * kPoolGrid * 3;
  const std::size_t patch = static_cast<std::size_t>(params.patch_size);

  Rng rng(mix_seed(seed, "stub_featurizer"));
  const Matrix projection(kPooled, dim,
                          rng.normal_vector(kPooled * dim,
                                            1.0 / std::sqrt(double(kPooled))));

  Matrix out(coords.size(), dim);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const std::size_t x0 = static_cast<std::size_t>(coords[i].first) * patch;
    const std::size_t y0 = static_cast<std::size_t>(coords[i].second) * patch;
    if (x0 + patch > img.width || y0 + patch > img.height) {
      throw ValidationError("stub_featurize: patch (" +
                            std::to_string(coords[i].first) + "," +
                            std::to_string(coords[i].second) +
                            ") exceeds image bounds");
    }
    std::array<double, kPooled> pooled{};
    for (std::size_t cy = 0; cy < kPoolGrid; ++cy) {
      const std::size_t ys = y0 + cy * patch / kPoolGrid;
      const std::size_t ye = y0 + (cy + 1) * patch / kPoolGrid;
      for (std::size_t cx = 0; cx < kPoolGrid; ++cx) {
        const std::size_t xs = x0 + cx * patch / kPoolGrid;
        const std::size_t xe = x0 + (cx + 1) * patch / kPoolGrid;
        double sums[3] = {0, 0, 0};
        std::size_t count = 0;
        for (std::size_t y = ys; y < std::max(ye, ys + 1); ++y) {
          for (std::size_t x = xs; x < std::max(xe, xs + 1); ++x) {
            for (std::size_t c = 0; c < 3; ++c) sums[c] += img.channel(x, y, c);
            ++count;
          }
        }
        for (std::size_t c = 0; c < 3; ++c) {
          pooled[(cy * kPoolGrid + cx) * 3 + c] =
              sums[c] / (255.0 * static_cast<double>(count));
        }
      }
    }
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < kPooled; ++p) {
        acc += pooled[p] * projection(p, j);
      }
      out(i, j) = acc;
    }
    const double norm = row_norm(out, i);
    if (norm > 0.0) {
      for (std::size_t j = 0; j < dim; ++j) out(i, j) /= norm;
    } else {
      out(i, 0) = 1.0;
    }
  }
  return out;
}

}  // namespace conceptmil
