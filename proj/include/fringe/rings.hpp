#pragma once

// Ring counting on square-resampled antinode crops via radial profiles.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "fringe/annot.hpp"
#include "fringe/image.hpp"

namespace fringe {

/// S x S resampling of an ellipse-aligned frame: the ellipse boundary maps to
/// the circle of radius S/2.2 around the patch center.
struct CropPatch {
  Image pixels;
  EllipseAnnotation source_ellipse;
  int size = 128;

  /// Continuous pixel coordinate of the patch center.
  double center() const { return size / 2.0 - 0.5; }
  /// Patch radius (pixels) of the ellipse boundary.
  double boundary_radius() const { return size / 2.2; }
};

struct RadialProfile {
  std::vector<double> samples;  // center -> boundary
  double spoke_angle = 0;       // radians
};

struct RingCount {
  double value = 0;
  std::vector<double> per_spoke;
  double spread = 0;  // median absolute deviation across spokes
};

struct RingConfig {
  int crop_size = 128;
  int spokes = 36;
  int samples = 100;
  int smooth_width = 5;
  double prominence = 0.1;  // fraction of the detrended profile range
  // The partial half-fringe at the center counts when it spans this fraction
  // of the median half-cycle spacing (rounds to the nearest half ring).
  double center_fraction = 0.5;
  // Spokes run slightly past the fitted boundary so the bright boundary
  // fringe is captured even when the fit is a pixel small.
  double reach = 1.08;
};

inline constexpr double kCropExtent = 1.1;

/// As crop_and_square, but samples outside the image are edge-clamped
/// instead of rejected. Used for detections touching the frame border.
inline CropPatch crop_and_square_clamped(const Image& img, const EllipseAnnotation& e,
                                         int size = 128) {
  if (size < 32) throw std::invalid_argument("crop size must be >= 32");
  CropPatch patch{Image(size, size), e, size};
  const auto [c, s] = major_axis_dir(e.theta);
  for (int j = 0; j < size; ++j) {
    const double v = ((j + 0.5) / size * 2.0 - 1.0) * kCropExtent;
    for (int i = 0; i < size; ++i) {
      const double u = ((i + 0.5) / size * 2.0 - 1.0) * kCropExtent;
      const double x = e.cx + e.a * u * c - e.b * v * s;
      const double y = e.cy + e.a * u * s + e.b * v * c;
      patch.pixels(i, j) = static_cast<float>(bilinear(img, x, y));
    }
  }
  return patch;
}

/// Resample the ellipse into a square patch. Throws if the ellipse is not
/// inside the image.
inline CropPatch crop_and_square(const Image& img, const EllipseAnnotation& e, int size = 128) {
  if (size < 32) throw std::invalid_argument("crop size must be >= 32");
  if (!validate(e).empty()) throw DataError("invalid ellipse: " + validate(e).front().message);
  const BBox box = ellipse_to_bbox(e);
  if (box.x_min < -0.5 || box.y_min < -0.5 || box.x_max > img.width() - 0.5 ||
      box.y_max > img.height() - 0.5)
    throw DataError("ellipse extends outside the image");
  return crop_and_square_clamped(img, e, size);
}

/// K equally spaced radial profiles from the patch center out to `reach`
/// times the ellipse boundary (at most the crop extent), N bilinear samples each.
inline std::vector<RadialProfile> extract_spokes(const CropPatch& patch, int spokes = 36,
                                                 int samples = 100, double reach = 1.0) {
  if (spokes < 4 || samples < 32) throw std::invalid_argument("need >= 4 spokes and >= 32 samples");
  std::vector<RadialProfile> out(static_cast<std::size_t>(spokes));
  const double c0 = patch.center();
  const double rmax = patch.boundary_radius() * std::clamp(reach, 0.1, kCropExtent);
  for (int k = 0; k < spokes; ++k) {
    const double ang = 2.0 * std::numbers::pi * k / spokes;
    const double dx = std::cos(ang), dy = std::sin(ang);
    auto& prof = out[k];
    prof.spoke_angle = ang;
    prof.samples.resize(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) {
      const double r = rmax * i / (samples - 1);
      prof.samples[i] = bilinear(patch.pixels, c0 + r * dx, c0 + r * dy);
    }
  }
  return out;
}

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& p, int width) {
  const int n = static_cast<int>(p.size());
  const int h = width / 2;
  std::vector<double> out(p.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - h), hi = std::min(n - 1, i + h);
    double s = 0;
    for (int k = lo; k <= hi; ++k) s += p[k];
    out[i] = s / (hi - lo + 1);
  }
  return out;
}

/// Subtract the least-squares quadratic in the sample index.
inline std::vector<double> detrend_quadratic(const std::vector<double>& p) {
  const int n = static_cast<int>(p.size());
  if (n < 3) return p;
  // Normal equations on t in [-1, 1] for conditioning.
  double m[3][4] = {};
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * i / (n - 1) - 1.0;
    const double basis[3] = {1.0, t, t * t};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += basis[r] * basis[c];
      m[r][3] += basis[r] * p[i];
    }
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
    for (int c = 0; c < 4; ++c) std::swap(m[col][c], m[piv][c]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  const double coef[3] = {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
  std::vector<double> out(p.size());
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * i / (n - 1) - 1.0;
    out[i] = p[i] - (coef[0] + coef[1] * t + coef[2] * t * t);
  }
  return out;
}

struct Pivot {
  int index;
  double value;
};

/// Alternating extrema with hysteresis h, starting from sample 0. The first
/// pivot is always sample 0 and the last is the final tracked extremum.
inline std::vector<Pivot> zigzag_pivots(const std::vector<double>& p, double h) {
  std::vector<Pivot> piv;
  const int n = static_cast<int>(p.size());
  if (n == 0) return piv;
  int dir = 0;
  Pivot hi{0, p[0]}, lo{0, p[0]}, ext{0, p[0]};
  for (int i = 1; i < n; ++i) {
    const double v = p[i];
    if (dir == 0) {
      if (v > hi.value) hi = {i, v};
      if (v < lo.value) lo = {i, v};
      if (v - lo.value >= h) {
        piv.push_back({0, p[0]});
        if (lo.index > 0) piv.push_back(lo);
        dir = +1;
        ext = {i, v};
      } else if (hi.value - v >= h) {
        piv.push_back({0, p[0]});
        if (hi.index > 0) piv.push_back(hi);
        dir = -1;
        ext = {i, v};
      }
    } else if (dir > 0) {
      if (v > ext.value) {
        ext = {i, v};
      } else if (ext.value - v >= h) {
        piv.push_back(ext);
        dir = -1;
        ext = {i, v};
      }
    } else {
      if (v < ext.value) {
        ext = {i, v};
      } else if (v - ext.value >= h) {
        piv.push_back(ext);
        dir = +1;
        ext = {i, v};
      }
    }
  }
  if (dir != 0) piv.push_back(ext);
  return piv;
}

}  // namespace detail

/// Rings along one center-to-boundary profile: half the number of fringe
/// half-cycles between the bright boundary fringe and the center.
inline double count_spoke(const std::vector<double>& samples, const RingConfig& cfg = {}) {
  auto p = detail::detrend_quadratic(detail::moving_average(samples, cfg.smooth_width));
  const auto [mn, mx] = std::minmax_element(p.begin(), p.end());
  const double range = *mx - *mn;
  if (!(range > 1e-9)) return 0.0;
  auto piv = detail::zigzag_pivots(p, cfg.prominence * range);
  // The boundary fringe is bright; anything darker after the last maximum
  // lies outside the antinode.
  while (piv.size() >= 2 && piv.back().value < piv[piv.size() - 2].value) piv.pop_back();
  if (piv.size() < 2) return 0.0;
  // Fringe phase is linear in radius, so half-cycles are evenly spaced; the
  // partial segment at the center counts when it spans at least
  // center_fraction of a typical half-cycle.
  std::vector<double> spacing;
  for (std::size_t j = 2; j < piv.size(); ++j) spacing.push_back(piv[j].index - piv[j - 1].index);
  int half_cycles = static_cast<int>(piv.size()) - 2;
  const double first = piv[1].index - piv[0].index;
  if (spacing.empty() || first >= cfg.center_fraction * detail::median(spacing)) ++half_cycles;
  return half_cycles / 2.0;
}

/// Ring count of a crop: median over spokes of the per-spoke count.
inline RingCount count_rings(const CropPatch& patch, const RingConfig& cfg = {}) {
  RingCount rc;
  for (const auto& spoke : extract_spokes(patch, cfg.spokes, cfg.samples, cfg.reach))
    rc.per_spoke.push_back(count_spoke(spoke.samples, cfg));
  rc.value = detail::median(rc.per_spoke);
  std::vector<double> dev;
  for (double v : rc.per_spoke) dev.push_back(std::fabs(v - rc.value));
  rc.spread = detail::median(dev);
  return rc;
}

/// Independent cross-check: zero crossings of the mean-subtracted raw
/// profile, halved.
inline double count_rings_oracle(const RadialProfile& profile) {
  const auto& p = profile.samples;
  if (p.empty()) return 0.0;
  double mean = 0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(p.size());
  int crossings = 0;
  int prev_sign = 0;
  for (double v : p) {
    const double d = v - mean;
    const int sign = d > 1e-12 ? 1 : (d < -1e-12 ? -1 : 0);
    if (sign == 0) continue;
    if (prev_sign != 0 && sign != prev_sign) ++crossings;
    prev_sign = sign;
  }
  return crossings / 2.0;
}

}  // namespace fringe
