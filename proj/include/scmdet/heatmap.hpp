#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "scmdet/geometry.hpp"

namespace scmdet {

/// Knobs of heatmap construction. The downsample factor R is the number of
/// image pixels per heatmap cell; binarize_threshold is a fraction of the
/// heatmap maximum.
struct HeatmapConfig {
  int downsample = 4;
  double gaussian_sigma_divisor = 6.0;
  double binarize_threshold = 0.2;

  void validate() const {
    if (downsample < 1) throw std::invalid_argument("HeatmapConfig: downsample must be >= 1");
    if (!(gaussian_sigma_divisor > 0.0)) {
      throw std::invalid_argument("HeatmapConfig: gaussian_sigma_divisor must be positive");
    }
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
      throw std::invalid_argument("HeatmapConfig: binarize_threshold must be in (0,1)");
    }
  }
};

/// Downsampled non-negative density field. Row-major, top row first.
struct Heatmap {
  int width;
  int height;
  int downsample;
  std::vector<float> values;

  Heatmap(int width_, int height_, int downsample_)
      : width(width_), height(height_), downsample(downsample_) {
    if (width < 1 || height < 1) throw std::invalid_argument("Heatmap: dimensions must be positive");
    if (downsample < 1) throw std::invalid_argument("Heatmap: downsample must be >= 1");
    values.assign(static_cast<std::size_t>(width) * height, 0.0f);
  }

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }

  double total() const {
    double s = 0.0;
    for (float v : values) s += v;
    return s;
  }

  float max_value() const {
    float m = 0.0f;
    for (float v : values) m = std::max(m, v);
    return m;
  }
};

/// Binarized heatmap; same cell grid as its source.
struct LocationMask {
  int width;
  int height;
  std::vector<std::uint8_t> bits;

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Per-grid-cell density sums. grid_y rows by grid_x columns, row-major.
/// Carries the source heatmap dimensions so window boundaries can be
/// reconstructed downstream.
struct GridDensities {
  int grid_x;
  int grid_y;
  int heatmap_w;
  int heatmap_h;
  std::vector<double> values;

  double at(int i, int j) const { return values[static_cast<std::size_t>(j) * grid_x + i]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(j) * grid_x + i]; }
};

/// Writes one truncated Gaussian with peak 1.0 at the box center, composing by
/// per-cell maximum. Cells farther than 3 sigma from the center are untouched.
inline void splat_one(Heatmap& h, const BoundingBox& b, double sigma_divisor) {
  const int cx = static_cast<int>(std::floor(b.center_x() / h.downsample));
  const int cy = static_cast<int>(std::floor(b.center_y() / h.downsample));
  const double sigma = std::max(1.0, std::min(b.w, b.h) / (sigma_divisor * h.downsample));
  const double radius2 = 9.0 * sigma * sigma;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  for (int dy = -r; dy <= r; ++dy) {
    const int y = cy + dy;
    if (y < 0 || y >= h.height) continue;
    for (int dx = -r; dx <= r; ++dx) {
      const int x = cx + dx;
      if (x < 0 || x >= h.width) continue;
      const double d2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
      if (d2 > radius2) continue;
      const float v = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
      h.at(x, y) = std::max(h.at(x, y), v);
    }
  }
}

/// Builds a heatmap of dimensions ceil(image/R) from object boxes. Every box
/// must lie within the image.
inline Heatmap splat_boxes(const std::vector<BoundingBox>& boxes, int image_w, int image_h,
                           const HeatmapConfig& cfg = {}) {
  cfg.validate();
  if (image_w < 1 || image_h < 1) throw std::invalid_argument("splat: image dimensions must be positive");
  const int r = cfg.downsample;
  Heatmap h((image_w + r - 1) / r, (image_h + r - 1) / r, r);
  for (const BoundingBox& b : boxes) {
    if (b.x < 0.0 || b.y < 0.0 || b.right() > image_w || b.bottom() > image_h) {
      throw std::invalid_argument("splat: object box lies outside the image");
    }
    splat_one(h, b, cfg.gaussian_sigma_divisor);
  }
  return h;
}

inline Heatmap splat(const std::vector<GroundTruth>& objects, int image_w, int image_h,
                     const HeatmapConfig& cfg = {}) {
  std::vector<BoundingBox> boxes;
  boxes.reserve(objects.size());
  for (const GroundTruth& g : objects) boxes.push_back(g.bbox);
  return splat_boxes(boxes, image_w, image_h, cfg);
}

inline Heatmap splat(const std::vector<Detection>& objects, int image_w, int image_h,
                     const HeatmapConfig& cfg = {}) {
  std::vector<BoundingBox> boxes;
  boxes.reserve(objects.size());
  for (const Detection& d : objects) boxes.push_back(d.bbox);
  return splat_boxes(boxes, image_w, image_h, cfg);
}

/// Mask bit set iff the cell value exceeds tau times the heatmap maximum.
/// An all-zero heatmap yields an all-zero mask.
inline LocationMask binarize(const Heatmap& h, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("binarize: tau must be in (0,1)");
  const double threshold = tau * static_cast<double>(h.max_value());
  LocationMask mask{h.width, h.height, {}};
  mask.bits.resize(h.values.size());
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    mask.bits[i] = static_cast<double>(h.values[i]) > threshold ? 1 : 0;
  }
  return mask;
}

/// Copy of h with sub-threshold cells zeroed.
inline Heatmap apply_mask(const Heatmap& h, const LocationMask& mask) {
  if (mask.width != h.width || mask.height != h.height) {
    throw std::invalid_argument("apply_mask: mask dimensions differ from heatmap");
  }
  Heatmap out = h;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (mask.bits[i] == 0) out.values[i] = 0.0f;
  }
  return out;
}

/// Start of grid window k over an axis of size n split into g windows.
/// Windows [floor(k*n/g), floor((k+1)*n/g)) partition the axis exactly.
inline int grid_window_start(int k, int n, int g) {
  return static_cast<int>((static_cast<std::int64_t>(k) * n) / g);
}

/// Sums heatmap values per grid window. The windows partition the heatmap
/// with no overlap and no gap.
inline GridDensities grid_densities(const Heatmap& h, int grid_x, int grid_y) {
  if (grid_x < 1 || grid_y < 1) throw std::invalid_argument("grid_densities: grid dims must be positive");
  if (grid_x > h.width || grid_y > h.height) {
    throw std::invalid_argument("grid_densities: grid larger than heatmap");
  }
  GridDensities d{grid_x, grid_y, h.width, h.height, {}};
  d.values.assign(static_cast<std::size_t>(grid_x) * grid_y, 0.0);

  // Column/row -> window index maps, then one pass over the heatmap.
  std::vector<int> col_window(h.width), row_window(h.height);
  for (int i = 0; i < grid_x; ++i) {
    for (int x = grid_window_start(i, h.width, grid_x); x < grid_window_start(i + 1, h.width, grid_x); ++x) {
      col_window[x] = i;
    }
  }
  for (int j = 0; j < grid_y; ++j) {
    for (int y = grid_window_start(j, h.height, grid_y); y < grid_window_start(j + 1, h.height, grid_y); ++y) {
      row_window[y] = j;
    }
  }
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      d.at(col_window[x], row_window[y]) += static_cast<double>(h.at(x, y));
    }
  }
  return d;
}

namespace detail {

inline void store_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t load_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr char kHeatmapMagic[4] = {'S', 'C', 'M', 'H'};

/// Binary layout: magic "SCMH", then little-endian u32 width, height,
/// downsample, then width*height little-endian f32 values, row-major,
/// top row first. No padding, no checksum.
inline void save_heatmap(const Heatmap& h, const std::string& path) {
  std::string buf;
  buf.reserve(16 + h.values.size() * 4);
  buf.append(kHeatmapMagic, 4);
  detail::store_u32le(buf, static_cast<std::uint32_t>(h.width));
  detail::store_u32le(buf, static_cast<std::uint32_t>(h.height));
  detail::store_u32le(buf, static_cast<std::uint32_t>(h.downsample));
  for (float v : h.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::store_u32le(buf, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_heatmap: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_heatmap: write failed for " + path);
}

inline Heatmap load_heatmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_heatmap: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());

  if (data.size() < 4 || std::memcmp(data.data(), kHeatmapMagic, 4) != 0) {
    throw std::runtime_error("load_heatmap: " + path + ": bad magic at byte 0");
  }
  if (data.size() < 16) {
    throw std::runtime_error("load_heatmap: " + path + ": truncated header at byte " +
                             std::to_string(data.size()));
  }
  const std::uint32_t w = detail::load_u32le(p + 4);
  const std::uint32_t h = detail::load_u32le(p + 8);
  const std::uint32_t r = detail::load_u32le(p + 12);
  if (w == 0 || h == 0 || r == 0 || static_cast<std::uint64_t>(w) * h > (1u << 30)) {
    throw std::runtime_error("load_heatmap: " + path + ": invalid dimensions at byte 4");
  }
  const std::size_t expected = 16 + static_cast<std::size_t>(w) * h * 4;
  if (data.size() != expected) {
    throw std::runtime_error("load_heatmap: " + path + ": truncated payload at byte " +
                             std::to_string(data.size()));
  }
  Heatmap out(static_cast<int>(w), static_cast<int>(h), static_cast<int>(r));
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::uint32_t bits = detail::load_u32le(p + 16 + i * 4);
    float v;
    std::memcpy(&v, &bits, 4);
    if (!std::isfinite(v)) {
      throw std::runtime_error("load_heatmap: " + path + ": non-finite value at byte " +
                               std::to_string(16 + i * 4));
    }
    if (v < 0.0f) {
      throw std::runtime_error("load_heatmap: " + path + ": negative value at byte " +
                               std::to_string(16 + i * 4));
    }
    out.values[i] = v;
  }
  return out;
}

}  // namespace scmdet
