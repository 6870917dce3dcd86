#pragma once

// Segmentation-regression ring maps: antinode interiors painted with their
// ring count, quantization, and per-region count extraction.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fringe/annot.hpp"
#include "fringe/detect.hpp"
#include "fringe/png_io.hpp"
#include "fringe/predict.hpp"

namespace fringe {

/// Per-pixel ring counts; 0 is background.
using RingMap = Grid<double>;

struct QuantizedRingMap {
  RingMap values;
  double bin = 0.7;
};

inline constexpr double kDefaultBin = 0.7;
inline constexpr double kMapScale = 5000.0;  // 16-bit PNG counts per ring

/// Paint ellipse interiors (pixel centers strictly inside) with their rings
/// value; overlapping pixels keep the larger value.
inline RingMap paint_ellipses(const std::vector<EllipseAnnotation>& ellipses, int width,
                              int height) {
  RingMap m(width, height, 0.0);
  for (const auto& e : ellipses) {
    for_each_pixel_inside(e, width, height, [&](int x, int y) {
      m(x, y) = std::max(m(x, y), e.rings);
    });
  }
  return m;
}

inline RingMap build_target_map(const FrameRecord& frame, int width, int height) {
  return paint_ellipses(frame.annotations, width, height);
}

/// Map painted from already-counted detections.
inline RingMap paint_detections(const std::vector<Detection>& dets, int width, int height) {
  std::vector<EllipseAnnotation> es;
  es.reserve(dets.size());
  for (const auto& d : dets) es.push_back(d.ellipse);
  return paint_ellipses(es, width, height);
}

inline RingMap predict_map(const Image& img, const DetectorConfig& dcfg = {},
                           const RingConfig& rcfg = {}) {
  return paint_detections(predict_detections(img, dcfg, rcfg), img.width(), img.height());
}

/// Nearest multiple of bin; exact half-bin ties round away from zero.
inline double quantize_value(double v, double bin) {
  const double q = v / bin;
  const double mag = std::fabs(q);
  double n = std::floor(mag);
  if (mag - n >= 0.5 - 1e-9) n += 1;
  return std::copysign(n, q) * bin + 0.0;
}

inline QuantizedRingMap quantize_map(const RingMap& m, double bin = kDefaultBin) {
  if (!(bin > 0)) throw std::invalid_argument("quantization bin must be > 0");
  QuantizedRingMap q{RingMap(m.width(), m.height()), bin};
  auto src = m.pixels();
  auto dst = q.values.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_value(src[i], bin);
  return q;
}

struct RegionCount {
  BBox bbox;  // pixel extents, max exclusive
  double rings = 0;
  double cx = 0;  // centroid of the region's pixel centers
  double cy = 0;
};

/// 4-connected regions of nonzero support, each with the median value.
/// Regions are listed in raster order of their first pixel.
inline std::vector<RegionCount> map_to_counts(const RingMap& m) {
  const int W = m.width(), H = m.height();
  Grid<unsigned char> seen(W, H, 0);
  std::vector<RegionCount> out;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (m(x, y) == 0 || seen(x, y)) continue;
      std::vector<double> vals;
      int x0 = x, x1 = x, y0 = y, y1 = y;
      double sx = 0, sy = 0;
      seen(x, y) = 1;
      stack.assign(1, {x, y});
      while (!stack.empty()) {
        auto [px, py] = stack.back();
        stack.pop_back();
        vals.push_back(m(px, py));
        sx += px;
        sy += py;
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
        const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto& d : nb) {
          const int nx = px + d[0], ny = py + d[1];
          if (m.contains(nx, ny) && m(nx, ny) != 0 && !seen(nx, ny)) {
            seen(nx, ny) = 1;
            stack.emplace_back(nx, ny);
          }
        }
      }
      const double n = static_cast<double>(vals.size());
      out.push_back({{double(x0), double(y0), double(x1 + 1), double(y1 + 1)},
                     detail::median(std::move(vals)), sx / n, sy / n});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: 16-bit PNG at kMapScale counts per ring plus a JSON sidecar.

inline std::string encode_ring_map(const RingMap& m, double scale = kMapScale) {
  Grid<std::uint16_t> raw(m.width(), m.height());
  auto src = m.pixels();
  auto dst = raw.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double c = std::floor(src[i] * scale + 0.5);
    dst[i] = static_cast<std::uint16_t>(std::clamp(c, 0.0, 65535.0));
  }
  return encode_png16(raw);
}

inline RingMap decode_ring_map(const std::string& png, double scale = kMapScale) {
  const auto raw = decode_png16(png);
  RingMap m(raw.width(), raw.height());
  auto src = raw.pixels();
  auto dst = m.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / scale;
  return m;
}

inline std::string ring_map_sidecar(double scale = kMapScale, double bin = kDefaultBin) {
  nlohmann::ordered_json j;
  j["scale"] = scale;
  j["bin"] = bin;
  return j.dump() + "\n";
}

}  // namespace fringe
