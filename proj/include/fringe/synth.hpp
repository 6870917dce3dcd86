#pragma once

// Deterministic synthetic ESPI frames with exact ground truth.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fringe/annot.hpp"
#include "fringe/image.hpp"
#include "fringe/portable_math.hpp"

namespace fringe {

enum class FringeProfile { cosine, bessel };

struct AntinodeSpec {
  EllipseAnnotation ellipse;  // rings = ground-truth ring count
  double contrast = 0.8;
  FringeProfile profile = FringeProfile::cosine;
};

struct SynthSpec {
  int width = 512;
  int height = 384;
  std::vector<AntinodeSpec> antinodes;
  double background = 0.35;
  double speckle_strength = 0.5;
  double speckle_scale = 1.0;  // Gaussian sigma of the speckle smoothing, pixels
  double blur_sigma = 0.7;
  std::uint64_t seed = 0;
  std::string frame_id = "frame";
};

struct RenderedFrame {
  Image image;
  FrameRecord truth;
};

// ---------------------------------------------------------------------------
// Fringe profiles

/// k-th positive zero of J0 (k >= 1), by Newton iteration from McMahon's
/// asymptotic estimate.
inline double bessel_j0_zero(int k) {
  if (k <= 0) return 0.0;
  const double beta = (k - 0.25) * std::numbers::pi;
  double x = beta + 1.0 / (8.0 * beta) - 124.0 / (3.0 * std::pow(8.0 * beta, 3));
  for (int it = 0; it < 50; ++it) {
    const double f = std::cyl_bessel_j(0.0, x);
    const double df = -std::cyl_bessel_j(1.0, x);
    const double step = f / df;
    x -= step;
    if (std::fabs(step) < 1e-15 * x) break;
  }
  return x;
}

/// R-th zero of J0, linearly interpolated for fractional R (zero "0" is 0).
inline double bessel_zero_interp(double rings) {
  const int k = static_cast<int>(std::floor(rings));
  const double frac = rings - k;
  const double lo = bessel_j0_zero(k);
  if (frac == 0.0) return lo;
  return lo + frac * (bessel_j0_zero(k + 1) - lo);
}

/// Fringe intensity in [0,1] at normalized elliptical radius u (0 = center,
/// 1 = boundary) for an antinode with `rings` dark fringes.
inline double fringe_profile(double u, double rings, FringeProfile kind) {
  const double phase = 1.0 - u;
  if (kind == FringeProfile::cosine) {
    return 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * rings * phase);
  }
  const double j = std::cyl_bessel_j(0.0, bessel_zero_interp(rings) * phase);
  return j * j;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = portable::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline void validate_spec(const SynthSpec& spec) {
  if (spec.width < 64 || spec.height < 64) throw DataError("frame must be at least 64x64");
  if (spec.background < 0 || spec.background > 1) throw DataError("background outside [0,1]");
  if (spec.speckle_strength < 0 || spec.speckle_strength > 1)
    throw DataError("speckle_strength outside [0,1]");
  if (spec.speckle_scale < 0 || spec.blur_sigma < 0) throw DataError("negative smoothing radius");
  for (std::size_t i = 0; i < spec.antinodes.size(); ++i) {
    const auto& an = spec.antinodes[i];
    const std::string who = "antinode " + std::to_string(i);
    if (!validate(an.ellipse).empty())
      throw DataError(who + ": invalid ellipse (" + validate(an.ellipse).front().message + ")");
    if (!(an.contrast > 0 && an.contrast <= 1)) throw DataError(who + ": contrast outside (0,1]");
    if (an.ellipse.rings < 0.5 || an.ellipse.rings > 12)
      throw DataError(who + ": rings outside [0.5, 12]");
    const BBox box = ellipse_to_bbox(an.ellipse);
    if (box.x_min < 0 || box.y_min < 0 || box.x_max > spec.width - 1 ||
        box.y_max > spec.height - 1)
      throw DataError(who + ": ellipse extends outside the frame");
  }
}

}  // namespace detail

/// Render a frame: fringed antinodes over a flat background, multiplicative
/// speckle, Gaussian blur, clamp. Pure function of the spec.
inline RenderedFrame render_frame(const SynthSpec& spec) {
  detail::validate_spec(spec);
  const int W = spec.width;
  const int H = spec.height;
  Image img(W, H, static_cast<float>(spec.background));
  Grid<int> owner(W, H, -1);

  for (std::size_t i = 0; i < spec.antinodes.size(); ++i) {
    const auto& an = spec.antinodes[i];
    for_each_pixel_inside(an.ellipse, W, H, [&](int x, int y) {
      if (owner(x, y) >= 0)
        throw DataError("antinodes " + std::to_string(owner(x, y)) + " and " +
                        std::to_string(i) + " overlap");
      owner(x, y) = static_cast<int>(i);
      const double u = elliptical_radius(an.ellipse, x, y);
      const double f = fringe_profile(u, an.ellipse.rings, an.profile);
      img(x, y) = static_cast<float>((1.0 - an.contrast) * spec.background + an.contrast * f);
    });
  }

  if (spec.speckle_strength > 0) {
    std::mt19937_64 rng(spec.seed);
    Image field(W, H);
    for (auto& v : field.pixels()) v = static_cast<float>(portable::exponential(rng));
    if (spec.speckle_scale > 0) {
      const auto k = detail::gaussian_kernel(spec.speckle_scale);
      field = convolve_separable(field, k);
    }
    auto px = img.pixels();
    auto fv = field.pixels();
    const double s = spec.speckle_strength;
    for (std::size_t i = 0; i < px.size(); ++i) {
      px[i] = static_cast<float>(px[i] * ((1.0 - s) + s * fv[i]));
    }
  }

  if (spec.blur_sigma > 0) {
    const auto k = detail::gaussian_kernel(spec.blur_sigma);
    img = convolve_separable(img, k);
  }
  for (auto& v : img.pixels()) v = std::clamp(v, 0.0f, 1.0f);

  RenderedFrame out{std::move(img), {spec.frame_id, {}}};
  for (const auto& an : spec.antinodes) out.truth.annotations.push_back(an.ellipse);
  return out;
}

// ---------------------------------------------------------------------------
// Random frame recipes

/// Distribution of random benchmark frames.
struct FrameSampler {
  int width = 512;
  int height = 384;
  int min_antinodes = 0;
  int max_antinodes = 4;
  double rings_min = 1.0;
  double rings_max = 11.0;
  bool integer_rings = false;
  double a_min = 36.0;
  double a_max = 80.0;
  double aspect_min = 0.7;   // b / a
  double px_per_ring = 5.5;  // minimum minor semi-axis per ring
  double contrast_min = 0.6;
  double contrast_max = 1.0;
  double background_min = 0.25;
  double background_max = 0.45;
  double speckle_strength = 0.5;
  double speckle_scale = 1.0;
  double blur_sigma = 0.7;
  double gap = 12.0;  // minimum clearance between antinodes, pixels
  FringeProfile profile = FringeProfile::cosine;
};

/// Deterministic random recipe. Antinodes that cannot be placed without
/// overlap after a bounded number of attempts are dropped.
inline SynthSpec sample_frame(const FrameSampler& fs, std::uint64_t seed, std::string frame_id) {
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  auto uni = [&](double lo, double hi) { return portable::uniform(rng, lo, hi); };
  SynthSpec spec;
  spec.width = fs.width;
  spec.height = fs.height;
  spec.background = uni(fs.background_min, fs.background_max);
  spec.speckle_strength = fs.speckle_strength;
  spec.speckle_scale = fs.speckle_scale;
  spec.blur_sigma = fs.blur_sigma;
  spec.seed = seed;
  spec.frame_id = std::move(frame_id);

  const int span = fs.max_antinodes - fs.min_antinodes + 1;
  const int n = fs.min_antinodes + static_cast<int>(uni(0, span));
  for (int i = 0; i < n; ++i) {
    double rings = uni(fs.rings_min, fs.rings_max);
    if (fs.integer_rings) rings = std::floor(uni(fs.rings_min, fs.rings_max + 1));
    rings = std::clamp(rings, fs.rings_min, fs.rings_max);
    double a = uni(fs.a_min, fs.a_max);
    double b = a * uni(fs.aspect_min, 1.0);
    b = std::max(b, fs.px_per_ring * rings);
    a = std::max(a, b);
    const double theta = uni(0.0, 180.0);
    const double contrast = uni(fs.contrast_min, fs.contrast_max);
    for (int attempt = 0; attempt < 200; ++attempt) {
      EllipseAnnotation e{0, 0, a, b, theta, rings};
      const BBox box = ellipse_to_bbox(e);
      const double hw = box.width() / 2 + 2;
      const double hh = box.height() / 2 + 2;
      if (2 * hw >= fs.width - 1 || 2 * hh >= fs.height - 1) break;
      e.cx = uni(hw, fs.width - 1 - hw);
      e.cy = uni(hh, fs.height - 1 - hh);
      bool clear = true;
      for (const auto& other : spec.antinodes) {
        const double d = std::hypot(e.cx - other.ellipse.cx, e.cy - other.ellipse.cy);
        if (d < e.a + other.ellipse.a + fs.gap) {
          clear = false;
          break;
        }
      }
      if (clear) {
        spec.antinodes.push_back({e, contrast, fs.profile});
        break;
      }
    }
  }
  return spec;
}

}  // namespace fringe
