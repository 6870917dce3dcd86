#pragma once

// Antinode tracking across video frames and saturating-exponential rise fits
// of ring count against time.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "fringe/annot.hpp"
#include "fringe/detect.hpp"

namespace fringe {

struct TrackConfig {
  double fps = 15037.0;
  std::optional<double> gate;  // pixels; unset = 0.5 * max(a, b) of the track's last detection
  int max_misses = 3;
};

inline void validate(const TrackConfig& cfg) {
  if (!(cfg.fps > 0)) throw std::invalid_argument("fps must be > 0");
  if (cfg.gate && !(*cfg.gate > 0)) throw std::invalid_argument("gate must be > 0");
  if (cfg.max_misses < 0) throw std::invalid_argument("max_misses must be >= 0");
}

struct TrackSample {
  int frame = 0;
  double t = 0;  // seconds
  double cx = 0;
  double cy = 0;
  double rings = 0;
};

struct Track {
  int track_id = 0;
  std::vector<TrackSample> samples;
  EllipseAnnotation last;  // most recent detection, used for the auto gate
};

/// Greedy gated nearest-centroid linking. Within a frame detections are
/// taken by descending score (ties by centroid); each joins the nearest open
/// track within the gate, else starts a new track. A track stays open while
/// its run of consecutive misses is at most max_misses.
inline std::vector<Track> link(const std::vector<std::vector<Detection>>& frames,
                               const TrackConfig& cfg = {}) {
  validate(cfg);
  std::vector<Track> tracks;
  std::vector<int> last_frame;
  for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
    std::vector<const Detection*> dets;
    for (const auto& d : frames[f]) dets.push_back(&d);
    std::sort(dets.begin(), dets.end(), [](const Detection* l, const Detection* r) {
      return std::tuple(-l->score, l->ellipse.cx, l->ellipse.cy) <
             std::tuple(-r->score, r->ellipse.cx, r->ellipse.cy);
    });
    std::vector<bool> taken(tracks.size(), false);
    for (const Detection* d : dets) {
      std::optional<std::size_t> best;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < tracks.size(); ++k) {
        if (taken[k] || f - last_frame[k] - 1 > cfg.max_misses) continue;
        const auto& prev = tracks[k].last;
        const double gate = cfg.gate ? *cfg.gate : 0.5 * std::max(prev.a, prev.b);
        const double dist = std::hypot(d->ellipse.cx - prev.cx, d->ellipse.cy - prev.cy);
        if (dist <= gate && dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      if (!best) {
        best = tracks.size();
        tracks.push_back({static_cast<int>(tracks.size()), {}, {}});
        last_frame.push_back(f);
        taken.push_back(false);
      }
      auto& tr = tracks[*best];
      taken[*best] = true;
      last_frame[*best] = f;
      tr.last = d->ellipse;
      tr.samples.push_back({f, f / cfg.fps, d->ellipse.cx, d->ellipse.cy, d->ellipse.rings});
    }
  }
  return tracks;
}

inline constexpr std::string_view kTrackHeader = "track_id,frame,t,cx,cy,rings";

inline std::string write_tracks(const std::vector<Track>& tracks) {
  std::string out(kTrackHeader);
  out += '\n';
  char buf[160];
  for (const auto& tr : tracks) {
    for (const auto& s : tr.samples) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.6g,%.6g,%.6g\n", tr.track_id, s.frame, s.t,
                    s.cx, s.cy, s.rings);
      out += buf;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rise fits

struct RiseParams {
  double a_max = 1;
  double tau = 1e-3;  // seconds
  double t0 = 0;      // seconds
};

struct RiseFit {
  double a_max = 0;
  double tau = 0;
  double t0 = 0;
  double rmse = 0;
  bool converged = false;
  bool degenerate = false;  // rise not resolved by the sampling (tau at its lower bound)
  bool poor_fit = false;    // model explains little of the variance
  int iterations = 0;
};

inline double rise_model(const RiseParams& p, double t) {
  if (t < p.t0) return 0.0;
  return p.a_max * (1.0 - std::exp(-(t - p.t0) / p.tau));
}

/// Noiseless samples of the rise model at the given frame rate: `count`
/// frames starting at t_start.
inline std::vector<std::pair<double, double>> forward_model(const RiseParams& p, double fps,
                                                            int count, double t_start = 0) {
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const double t = t_start + i / fps;
    out.emplace_back(t, rise_model(p, t));
  }
  return out;
}

namespace detail {

struct RiseProblem {
  const std::vector<std::pair<double, double>>& s;

  /// Best amplitude for fixed (t0, tau) and the resulting squared error.
  std::pair<double, double> amplitude(double t0, double tau, std::size_t stride = 1) const {
    double gg = 0, gy = 0, yy = 0;
    for (std::size_t i = 0; i < s.size(); i += stride) {
      const auto [t, y] = s[i];
      const double g = t < t0 ? 0.0 : 1.0 - std::exp(-(t - t0) / tau);
      gg += g * g;
      gy += g * y;
      yy += y * y;
    }
    if (gg <= 0) return {0.0, yy};
    const double a = gy / gg;
    return {a, yy - a * gy};
  }

  double sse(const RiseParams& p) const {
    double e = 0;
    for (auto [t, y] : s) {
      const double r = y - rise_model(p, t);
      e += r * r;
    }
    return e;
  }
};

/// Solve the 3x3 system m x = v by Gaussian elimination with partial
/// pivoting; false if singular.
inline bool solve3(double m[3][3], double v[3], double x[3]) {
  int idx[3] = {0, 1, 2};
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::fabs(m[r][c]) > std::fabs(m[piv][c])) piv = r;
    if (std::fabs(m[piv][c]) < 1e-300) return false;
    std::swap(m[c], m[piv]);
    std::swap(v[c], v[piv]);
    std::swap(idx[c], idx[piv]);
    for (int r = c + 1; r < 3; ++r) {
      const double f = m[r][c] / m[c][c];
      for (int k = c; k < 3; ++k) m[r][k] -= f * m[c][k];
      v[r] -= f * v[c];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double acc = v[r];
    for (int k = r + 1; k < 3; ++k) acc -= m[r][k] * x[k];
    x[r] = acc / m[r][r];
  }
  return true;
}

}  // namespace detail

/// Least-squares fit of r(t) = a_max (1 - exp(-(t - t0)/tau)) for t >= t0
/// (0 before): coarse (t0, tau) grid with closed-form a_max, then
/// Gauss-Newton on all three parameters with step halving.
inline RiseFit fit_rise(const std::vector<std::pair<double, double>>& samples) {
  if (samples.size() < 6) throw DataError("rise fit needs at least 6 samples");
  auto s = samples;
  std::sort(s.begin(), s.end());
  const double t_first = s.front().first;
  const double span = s.back().first - t_first;
  double dt = span;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i].first > s[i - 1].first) dt = std::min(dt, s[i].first - s[i - 1].first);
  if (!(span > 0)) throw DataError("rise fit needs samples at distinct times");
  const double tau_min = dt / 20.0;
  const double tau_max = 10.0 * span;

  detail::RiseProblem prob{s};
  const std::size_t stride = std::max<std::size_t>(1, s.size() / 64);
  RiseParams best;
  double best_err = std::numeric_limits<double>::infinity();
  constexpr int kT0 = 24, kTau = 32;
  for (int i = 0; i < kT0; ++i) {
    const double t0 = t_first - 0.25 * span + span * i / (kT0 - 1.0);
    for (int j = 0; j < kTau; ++j) {
      const double tau = tau_min * std::pow(tau_max / tau_min, j / (kTau - 1.0));
      const auto [a, err] = prob.amplitude(t0, tau, stride);
      if (err < best_err) {
        best_err = err;
        best = {a, tau, t0};
      }
    }
  }
  best.a_max = prob.amplitude(best.t0, best.tau).first;

  RiseFit fit;
  double err = prob.sse(best);
  const double scale_t = span;  // parameter scaling for conditioning
  for (int it = 0; it < 200; ++it) {
    fit.iterations = it + 1;
    double jtj[3][3] = {}, jtr[3] = {};
    for (auto [t, y] : s) {
      if (t < best.t0) continue;
      const double e = std::exp(-(t - best.t0) / best.tau);
      const double r = y - best.a_max * (1.0 - e);
      // derivatives w.r.t. (a, tau/scale, t0/scale)
      const double g[3] = {1.0 - e, -best.a_max * e * (t - best.t0) / (best.tau * best.tau) * scale_t,
                           -best.a_max * e / best.tau * scale_t};
      for (int p = 0; p < 3; ++p) {
        jtr[p] += g[p] * r;
        for (int q = 0; q < 3; ++q) jtj[p][q] += g[p] * g[q];
      }
    }
    double step[3];
    if (!detail::solve3(jtj, jtr, step)) break;
    double lambda = 1.0;
    bool improved = false;
    RiseParams cand;
    double cand_err = err;
    for (int h = 0; h < 40; ++h, lambda *= 0.5) {
      cand = {best.a_max + lambda * step[0], best.tau + lambda * step[1] * scale_t,
              best.t0 + lambda * step[2] * scale_t};
      if (!(cand.tau >= tau_min)) continue;
      cand_err = prob.sse(cand);
      if (cand_err <= err) {
        improved = true;
        break;
      }
    }
    if (!improved) {
      fit.converged = true;
      break;
    }
    const double gain = err - cand_err;
    best = cand;
    err = cand_err;
    if (gain <= 1e-14 * std::max(err, 1e-300) || err < 1e-28) {
      fit.converged = true;
      break;
    }
  }

  fit.a_max = best.a_max;
  fit.tau = best.tau;
  fit.t0 = best.t0;
  fit.rmse = std::sqrt(err / static_cast<double>(s.size()));
  double mean = 0;
  for (auto [t, y] : s) mean += y;
  mean /= static_cast<double>(s.size());
  double sst = 0;
  for (auto [t, y] : s) sst += (y - mean) * (y - mean);
  fit.degenerate = best.tau < dt || sst <= 1e-12 * std::max(1.0, mean * mean);
  fit.poor_fit = sst > 0 && err > 0.1 * sst;
  return fit;
}

inline RiseFit fit_rise(const Track& track) {
  std::vector<std::pair<double, double>> s;
  for (const auto& x : track.samples) s.emplace_back(x.t, x.rings);
  return fit_rise(s);
}

inline constexpr std::string_view kRiseHeader =
    "track_id,samples,a_max,tau,t0,rmse,converged,degenerate,poor_fit";

inline std::string rise_row(int track_id, std::size_t n, const RiseFit& f) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%zu,%.6g,%.6g,%.6g,%.6g,%d,%d,%d\n", track_id, n, f.a_max,
                f.tau, f.t0, f.rmse, f.converged ? 1 : 0, f.degenerate ? 1 : 0, f.poor_fit ? 1 : 0);
  return buf;
}

/// Pearson correlation of ring values after pairing each sample of `a` with
/// the nearest-in-time sample of `b` within half a frame period.
inline double series_correlation(const Track& a, const Track& b, double fps = 15037.0) {
  const double tol = 0.5 / fps * (1 + 1e-9);
  std::vector<double> bt;
  for (const auto& s : b.samples) bt.push_back(s.t);
  std::vector<std::pair<double, double>> pairs;
  for (const auto& s : a.samples) {
    auto it = std::lower_bound(bt.begin(), bt.end(), s.t);
    std::optional<std::size_t> best;
    double bd = std::numeric_limits<double>::infinity();
    for (auto cand : {it, it == bt.begin() ? bt.end() : std::prev(it)}) {
      if (cand == bt.end()) continue;
      const double d = std::fabs(*cand - s.t);
      if (d < bd) {
        bd = d;
        best = static_cast<std::size_t>(cand - bt.begin());
      }
    }
    if (best && bd <= tol) pairs.emplace_back(s.rings, b.samples[*best].rings);
  }
  if (pairs.size() < 3) throw DataError("correlation needs at least 3 aligned samples");
  double mx = 0, my = 0;
  for (auto [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= pairs.size();
  my /= pairs.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (auto [x, y] : pairs) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0 && syy > 0)) throw DataError("correlation undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace fringe
