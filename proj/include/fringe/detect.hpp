#pragma once

// Classical antinode detector: local-contrast saliency, Otsu threshold,
// morphology, connected components and moment-based ellipse fits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "fringe/annot.hpp"
#include "fringe/geometry.hpp"
#include "fringe/image.hpp"

namespace fringe {

struct Detection {
  BBox bbox;
  double score = 0;
  EllipseAnnotation ellipse;  // rings filled in by the counter
};

struct DetectorConfig {
  int window = 15;
  int min_area = 200;
  std::optional<double> fixed_threshold;  // unset = Otsu
  double merge_iou = 0.5;
  // Edge window used to refine each component's ellipse fit; 0 disables.
  int refine_window = 5;
  // Pixels trimmed from each refined semi-axis: the thresholded fine-window
  // response reaches past the true edge by roughly a quarter window.
  double edge_shrink = 1.25;
  // Components whose mean local standard deviation is below this fraction of
  // the frame's mean intensity are treated as speckle, not fringes.
  double min_relative_contrast = 0.25;
};

inline void validate(const DetectorConfig& cfg) {
  if (cfg.window < 3 || cfg.window % 2 == 0)
    throw std::invalid_argument("detector window must be odd and >= 3");
  if (cfg.refine_window != 0 && (cfg.refine_window < 3 || cfg.refine_window % 2 == 0))
    throw std::invalid_argument("refine window must be 0 or odd and >= 3");
  if (cfg.min_area < 1) throw std::invalid_argument("min_area must be >= 1");
  if (!(cfg.merge_iou > 0 && cfg.merge_iou <= 1))
    throw std::invalid_argument("merge_iou must be in (0, 1]");
}

namespace detail {

/// Per-pixel standard deviation over a window x window neighborhood with
/// edge clamping, via summed-area tables of the padded image.
inline Image local_stddev(const Image& img, int window) {
  const int W = img.width();
  const int H = img.height();
  const int r = window / 2;
  const int PW = W + 2 * r;
  const int PH = H + 2 * r;
  // (PW+1) x (PH+1) integral tables
  std::vector<double> s1(static_cast<std::size_t>(PW + 1) * (PH + 1), 0.0);
  std::vector<double> s2(s1.size(), 0.0);
  auto at = [PW](int x, int y) { return static_cast<std::size_t>(y) * (PW + 1) + x; };
  // Offset by one pixel value so flat regions sum to exact zeros.
  const double ref = img.empty() ? 0.0 : img(0, 0);
  for (int y = 0; y < PH; ++y) {
    double row1 = 0, row2 = 0;
    for (int x = 0; x < PW; ++x) {
      const double v = img.clamped(x - r, y - r) - ref;
      row1 += v;
      row2 += v * v;
      s1[at(x + 1, y + 1)] = s1[at(x + 1, y)] + row1;
      s2[at(x + 1, y + 1)] = s2[at(x + 1, y)] + row2;
    }
  }
  const double n = static_cast<double>(window) * window;
  Image out(W, H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      // padded window spans [x, x+window) x [y, y+window)
      const int x0 = x, y0 = y, x1 = x + window, y1 = y + window;
      const double a = s1[at(x1, y1)] - s1[at(x0, y1)] - s1[at(x1, y0)] + s1[at(x0, y0)];
      const double b = s2[at(x1, y1)] - s2[at(x0, y1)] - s2[at(x1, y0)] + s2[at(x0, y0)];
      const double mean = a / n;
      const double var = std::max(0.0, b / n - mean * mean);
      out(x, y) = static_cast<float>(std::sqrt(var));
    }
  }
  return out;
}

/// Otsu threshold of values in [0,1] over a 256-bin histogram; returns the
/// upper edge of the last background bin.
inline double otsu_threshold(std::span<const float> values) {
  std::array<double, 256> hist{};
  for (float v : values) {
    const int bin = std::clamp(static_cast<int>(v * 256.0f), 0, 255);
    hist[bin] += 1;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];
  double w0 = 0, sum0 = 0, best = -1;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    if (w0 == 0) continue;
    const double w1 = total - w0;
    if (w1 == 0) break;
    sum0 += t * hist[t];
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return (best_t + 1) / 256.0;
}

inline Mask morph(const Mask& m, bool dilate_op) {
  Mask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool acc = !dilate_op;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!m.contains(x + dx, y + dy)) continue;
          const bool v = m(x + dx, y + dy) != 0;
          acc = dilate_op ? (acc || v) : (acc && v);
        }
      }
      out(x, y) = acc ? 1 : 0;
    }
  }
  return out;
}

/// Morphological closing with a 3x3 square element.
inline Mask close3x3(Mask m, int iterations) {
  for (int i = 0; i < iterations; ++i) m = morph(m, true);
  for (int i = 0; i < iterations; ++i) m = morph(m, false);
  return m;
}

/// Set every background pixel not 4-connected to the image border.
inline Mask fill_holes(const Mask& m) {
  const int W = m.width(), H = m.height();
  Mask outside(W, H, 0);
  std::vector<std::pair<int, int>> stack;
  auto seed = [&](int x, int y) {
    if (!m(x, y) && !outside(x, y)) {
      outside(x, y) = 1;
      stack.emplace_back(x, y);
    }
  };
  for (int x = 0; x < W; ++x) {
    seed(x, 0);
    seed(x, H - 1);
  }
  for (int y = 0; y < H; ++y) {
    seed(0, y);
    seed(W - 1, y);
  }
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (auto& d : nb) {
      const int nx = x + d[0], ny = y + d[1];
      if (m.contains(nx, ny)) seed(nx, ny);
    }
  }
  Mask out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) out(x, y) = outside(x, y) ? 0 : 1;
  return out;
}

struct Component {
  std::vector<std::pair<int, int>> pixels;  // raster order
};

/// 8-connected components in raster-scan discovery order.
inline std::vector<Component> connected_components(const Mask& m) {
  const int W = m.width(), H = m.height();
  Grid<int> label(W, H, -1);
  std::vector<Component> comps;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (!m(x, y) || label(x, y) >= 0) continue;
      const int id = static_cast<int>(comps.size());
      comps.emplace_back();
      label(x, y) = id;
      stack.assign(1, {x, y});
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        comps[id].pixels.emplace_back(cx, cy);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (m.contains(nx, ny) && m(nx, ny) && label(nx, ny) < 0) {
              label(nx, ny) = id;
              stack.emplace_back(nx, ny);
            }
          }
        }
      }
      std::sort(comps[id].pixels.begin(), comps[id].pixels.end(),
                [](auto& l, auto& r) { return std::tie(l.second, l.first) < std::tie(r.second, r.first); });
    }
  }
  return comps;
}

/// Ellipse with the same first and second moments as a uniform pixel set:
/// semi-axes = 2 sqrt(eigenvalues of the covariance).
inline EllipseAnnotation moment_ellipse(const std::vector<std::pair<int, int>>& pixels) {
  double sx = 0, sy = 0;
  for (auto [x, y] : pixels) {
    sx += x;
    sy += y;
  }
  const double n = static_cast<double>(pixels.size());
  const double mx = sx / n, my = sy / n;
  double cxx = 0, cyy = 0, cxy = 0;
  for (auto [x, y] : pixels) {
    const double dx = x - mx, dy = y - my;
    cxx += dx * dx;
    cyy += dy * dy;
    cxy += dx * dy;
  }
  // Pixel-center sampling of a continuous region: add the 1/12 px^2 of
  // each unit pixel so a filled disk of radius r maps back to r.
  cxx = cxx / n + 1.0 / 12.0;
  cyy = cyy / n + 1.0 / 12.0;
  cxy /= n;
  const double tr = cxx + cyy;
  const double disc = std::sqrt(std::max(0.0, 0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy));
  const double l1 = 0.5 * tr + disc;
  const double l2 = std::max(1e-12, 0.5 * tr - disc);
  // Principal eigenvector angle in pixel coordinates, then flip to the
  // on-screen counterclockwise convention (y down).
  const double phi = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
  EllipseAnnotation e;
  e.cx = mx;
  e.cy = my;
  e.a = 2.0 * std::sqrt(l1);
  e.b = 2.0 * std::sqrt(l2);
  e.theta = normalize_theta(-rad2deg(phi));
  e.rings = 0;
  return e;
}

struct Candidate {
  std::vector<std::pair<int, int>> support;
  double score = 0;
  EllipseAnnotation ellipse;
  BBox box;
};

inline double mean_over(const Image& map, const std::vector<std::pair<int, int>>& pixels) {
  double s = 0;
  for (auto [x, y] : pixels) s += map(x, y);
  return pixels.empty() ? 0.0 : s / static_cast<double>(pixels.size());
}

/// Split-and-refit a coarse component against a fine-scale contrast map.
/// The padded bounding rectangle of the component is thresholded at its own
/// Otsu level, closed and hole-filled; every blob of at least min_area pixels
/// whose centroid lies on the component is returned.
inline std::vector<std::vector<std::pair<int, int>>> refine_component(
    const Image& fine, const std::vector<std::pair<int, int>>& comp, int pad, int min_area) {
  int x0 = fine.width(), y0 = fine.height(), x1 = -1, y1 = -1;
  for (auto [x, y] : comp) {
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
  x0 = std::max(0, x0 - pad);
  y0 = std::max(0, y0 - pad);
  x1 = std::min(fine.width() - 1, x1 + pad);
  y1 = std::min(fine.height() - 1, y1 + pad);
  const int rw = x1 - x0 + 1, rh = y1 - y0 + 1;
  Mask on_comp(rw, rh, 0);
  for (auto [x, y] : comp) on_comp(x - x0, y - y0) = 1;

  Image roi(rw, rh);
  double peak = 0;
  for (int y = 0; y < rh; ++y)
    for (int x = 0; x < rw; ++x) peak = std::max(peak, static_cast<double>(fine(x + x0, y + y0)));
  if (peak <= 0) return {};
  for (int y = 0; y < rh; ++y)
    for (int x = 0; x < rw; ++x) roi(x, y) = static_cast<float>(fine(x + x0, y + y0) / peak);
  const double t = otsu_threshold(roi.pixels());
  Mask m(rw, rh);
  for (int y = 0; y < rh; ++y)
    for (int x = 0; x < rw; ++x) m(x, y) = roi(x, y) >= t ? 1 : 0;
  m = fill_holes(close3x3(m, 1));

  std::vector<std::vector<std::pair<int, int>>> blobs;
  for (auto& c : connected_components(m)) {
    if (static_cast<int>(c.pixels.size()) < min_area) continue;
    double sx = 0, sy = 0;
    for (auto [x, y] : c.pixels) {
      sx += x;
      sy += y;
    }
    const double n = static_cast<double>(c.pixels.size());
    const int mx = static_cast<int>(std::lround(sx / n));
    const int my = static_cast<int>(std::lround(sy / n));
    if (!on_comp.contains(mx, my) || !on_comp(mx, my)) continue;
    for (auto& [x, y] : c.pixels) {
      x += x0;
      y += y0;
    }
    blobs.push_back(std::move(c.pixels));
  }
  return blobs;
}

}  // namespace detail

/// Local standard deviation map normalized by its maximum (all-zero input
/// variance stays zero).
inline Image local_contrast_map(const Image& img, int window = 15) {
  Image sd = detail::local_stddev(img, window);
  double peak = 0;
  for (float v : sd.pixels()) peak = std::max(peak, static_cast<double>(v));
  if (peak > 0)
    for (auto& v : sd.pixels()) v = static_cast<float>(v / peak);
  return sd;
}

/// Detect fringed antinode regions. Output sorted by descending score.
inline std::vector<Detection> detect_antinodes(const Image& img, const DetectorConfig& cfg = {}) {
  validate(cfg);
  if (img.empty()) return {};
  Image contrast = detail::local_stddev(img, cfg.window);
  double raw_peak = 0;
  for (float v : contrast.pixels()) raw_peak = std::max(raw_peak, static_cast<double>(v));
  if (raw_peak <= 0) return {};
  for (auto& v : contrast.pixels()) v = static_cast<float>(v / raw_peak);

  const double thr = cfg.fixed_threshold ? *cfg.fixed_threshold
                                         : detail::otsu_threshold(contrast.pixels());
  Mask mask(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) mask(x, y) = contrast(x, y) >= thr ? 1 : 0;
  mask = detail::fill_holes(detail::close3x3(mask, 2));

  std::optional<Image> fine;
  if (cfg.refine_window > 0) fine = detail::local_stddev(img, cfg.refine_window);
  double mean_intensity = 0;
  for (float v : img.pixels()) mean_intensity += v;
  mean_intensity /= static_cast<double>(img.size());

  const bool refined = fine.has_value();
  auto fit = [&](const std::vector<std::pair<int, int>>& support) {
    EllipseAnnotation e = detail::moment_ellipse(support);
    if (refined) {
      e.a = std::max(1.0, e.a - cfg.edge_shrink);
      e.b = std::max(1.0, e.b - cfg.edge_shrink);
    }
    return e;
  };

  std::vector<detail::Candidate> cands;
  for (auto& comp : detail::connected_components(mask)) {
    if (static_cast<int>(comp.pixels.size()) < cfg.min_area) continue;
    std::vector<std::vector<std::pair<int, int>>> blobs;
    if (refined) blobs = detail::refine_component(*fine, comp.pixels, cfg.window, cfg.min_area);
    if (blobs.empty()) blobs.push_back(std::move(comp.pixels));
    for (auto& blob : blobs) {
      detail::Candidate c;
      c.score = detail::mean_over(contrast, blob);
      if (c.score * raw_peak < cfg.min_relative_contrast * mean_intensity) continue;
      c.ellipse = refined ? fit(blob) : detail::moment_ellipse(blob);
      c.box = ellipse_to_bbox(c.ellipse);
      c.support = std::move(blob);
      cands.push_back(std::move(c));
    }
  }

  auto by_score = [](const detail::Candidate& l, const detail::Candidate& r) {
    if (l.score != r.score) return l.score > r.score;
    return std::tie(l.ellipse.cx, l.ellipse.cy) < std::tie(r.ellipse.cx, r.ellipse.cy);
  };
  std::sort(cands.begin(), cands.end(), by_score);

  // Merge overlapping candidates into the higher-scoring one.
  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t i = 0; i < cands.size() && !merged; ++i) {
      for (std::size_t j = i + 1; j < cands.size(); ++j) {
        if (iou(cands[i].box, cands[j].box) > cfg.merge_iou) {
          auto& keep = cands[i];
          keep.support.insert(keep.support.end(), cands[j].support.begin(), cands[j].support.end());
          std::sort(keep.support.begin(), keep.support.end(),
                    [](auto& l, auto& r) { return std::tie(l.second, l.first) < std::tie(r.second, r.first); });
          keep.support.erase(std::unique(keep.support.begin(), keep.support.end()), keep.support.end());
          keep.ellipse = fit(keep.support);
          keep.box = ellipse_to_bbox(keep.ellipse);
          cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(j));
          merged = true;
          break;
        }
      }
    }
  }

  std::vector<Detection> out;
  out.reserve(cands.size());
  for (auto& c : cands) out.push_back({c.box, std::clamp(c.score, 0.0, 1.0), c.ellipse});
  return out;
}

}  // namespace fringe
