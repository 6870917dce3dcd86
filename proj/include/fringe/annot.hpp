#pragma once

// Annotation data model: elliptical antinode labels, CSV persistence,
// validation and aggregation of multi-volunteer submissions.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "fringe/geometry.hpp"

namespace fringe {

/// Raised for malformed or invariant-violating input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One antinode label. theta is the major-axis rotation in degrees,
/// counterclockwise as seen on screen (image y grows downward), in [0, 180).
struct EllipseAnnotation {
  double cx = 0;
  double cy = 0;
  double a = 1;
  double b = 1;
  double theta = 0;
  double rings = 0;

  bool operator==(const EllipseAnnotation&) const = default;
};

struct FrameRecord {
  std::string frame_id;
  std::vector<EllipseAnnotation> annotations;

  bool operator==(const FrameRecord&) const = default;
};

struct VolunteerSubmission {
  std::string volunteer_id;
  std::vector<EllipseAnnotation> annotations;
};

struct VolunteerBatch {
  std::string frame_id;
  std::vector<VolunteerSubmission> submissions;
};

struct FieldError {
  std::string field;
  std::string message;
};

/// Invariant violations of a single annotation, with field names as in the
/// CSV header. Empty when valid.
inline std::vector<FieldError> validate(const EllipseAnnotation& e) {
  std::vector<FieldError> errs;
  const std::pair<const char*, double> fields[] = {
      {"cx", e.cx}, {"cy", e.cy}, {"a", e.a}, {"b", e.b}, {"theta", e.theta}, {"rings", e.rings}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v)) errs.push_back({name, "not a finite number"});
  }
  if (!errs.empty()) return errs;
  if (e.b <= 0) errs.push_back({"b", "b must be > 0"});
  if (e.a < e.b) errs.push_back({"a", "a < b"});
  if (e.rings < 0) errs.push_back({"rings", "negative rings"});
  if (e.theta < 0 || e.theta >= 180) errs.push_back({"theta", "theta outside [0, 180)"});
  return errs;
}

inline std::vector<FieldError> validate(const FrameRecord& r) {
  std::vector<FieldError> errs;
  if (r.frame_id.empty()) errs.push_back({"frame_id", "empty frame_id"});
  if (r.frame_id.find_first_of(",\n\r\"") != std::string::npos)
    errs.push_back({"frame_id", "frame_id contains a CSV delimiter"});
  for (std::size_t i = 0; i < r.annotations.size(); ++i) {
    for (auto& fe : validate(r.annotations[i])) {
      errs.push_back({"annotations[" + std::to_string(i) + "]." + fe.field, fe.message});
    }
  }
  return errs;
}

inline EllipseAnnotation normalized(EllipseAnnotation e) {
  e.theta = normalize_theta(e.theta);
  return e;
}

/// Unit vector of the major axis in pixel coordinates.
inline std::pair<double, double> major_axis_dir(double theta_deg) {
  const double t = deg2rad(theta_deg);
  return {std::cos(t), -std::sin(t)};
}

/// Normalized elliptical radius of point (x, y): < 1 inside, 1 on the boundary.
inline double elliptical_radius(const EllipseAnnotation& e, double x, double y) {
  const auto [c, s] = major_axis_dir(e.theta);
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double u = (dx * c + dy * s) / e.a;
  const double v = (-dx * s + dy * c) / e.b;
  return std::sqrt(u * u + v * v);
}

/// Tight axis-aligned box of the ellipse.
inline BBox ellipse_to_bbox(const EllipseAnnotation& e) {
  const double t = deg2rad(e.theta);
  const double c = std::cos(t);
  const double s = std::sin(t);
  const double hw = std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
  const double hh = std::sqrt(e.a * e.a * s * s + e.b * e.b * c * c);
  return {e.cx - hw, e.cy - hh, e.cx + hw, e.cy + hh};
}

/// Calls f(x, y) for every pixel whose center lies strictly inside the
/// ellipse, clipped to [0,width) x [0,height). Row-major order.
template <typename F>
void for_each_pixel_inside(const EllipseAnnotation& e, int width, int height, F&& f) {
  const BBox box = ellipse_to_bbox(e);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(box.x_max)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(box.y_max)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (elliptical_radius(e, x, y) < 1.0) f(x, y);
    }
  }
}

// ---------------------------------------------------------------------------
// CSV persistence

inline constexpr std::string_view kAnnotationHeader = "filename,cx,cy,a,b,theta,rings";

namespace detail {

inline std::vector<std::string_view> split_line(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

/// Iterates lines of a document; yields (1-based line number, line without EOL).
template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    f(++line_no, line);
    start = end + 1;
  }
}

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Shortest text that parses back to exactly v.
inline std::string fmt_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Groups (frame_id, item) rows by frame in order of first appearance.
template <typename T>
class FrameGrouper {
 public:
  std::vector<T>& slot(const std::string& id) {
    auto it = index_.find(id);
    if (it == index_.end()) {
      it = index_.emplace(id, order_.size()).first;
      order_.push_back({id, {}});
    }
    return order_[it->second].second;
  }
  std::vector<std::pair<std::string, std::vector<T>>> take() { return std::move(order_); }

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, std::vector<T>>> order_;
};

}  // namespace detail

/// Parse an annotation CSV (`filename,cx,cy,a,b,theta,rings`). Rows are
/// grouped by filename in order of first appearance; theta is normalized
/// into [0, 180).
inline std::vector<FrameRecord> parse_annotations(std::string_view text) {
  static constexpr const char* kCols[] = {"filename", "cx", "cy", "a", "b", "theta", "rings"};
  detail::FrameGrouper<EllipseAnnotation> groups;
  bool saw_header = false;
  detail::for_each_line(text, [&](std::size_t ln, std::string_view line) {
    if (!saw_header) {
      if (detail::trim(line) != kAnnotationHeader)
        throw DataError("line 1: expected header '" + std::string(kAnnotationHeader) + "'");
      saw_header = true;
      return;
    }
    if (detail::trim(line).empty()) return;
    const auto cells = detail::split_line(line);
    const std::string where = "line " + std::to_string(ln);
    if (cells.size() != 7)
      throw DataError(where + ": expected 7 columns, found " + std::to_string(cells.size()));
    const std::string fname(detail::trim(cells[0]));
    if (fname.empty()) throw DataError(where + ", column 1 (filename): empty filename");
    double v[6];
    for (int c = 0; c < 6; ++c) {
      if (!detail::parse_double(cells[c + 1], v[c]))
        throw DataError(where + ", column " + std::to_string(c + 2) + " (" + kCols[c + 1] +
                        "): not a number: '" + std::string(cells[c + 1]) + "'");
    }
    EllipseAnnotation e{v[0], v[1], v[2], v[3], normalize_theta(v[4]), v[5]};
    if (e.b <= 0) throw DataError("b <= 0 at " + where);
    if (e.a < e.b) throw DataError("a < b at " + where);
    if (e.rings < 0) throw DataError("negative rings at " + where);
    groups.slot(fname).push_back(e);
  });
  if (!saw_header) throw DataError("line 1: missing header");
  std::vector<FrameRecord> out;
  for (auto& [id, anns] : groups.take()) out.push_back({id, std::move(anns)});
  return out;
}

/// Serialize records; numbers use 6 significant digits. Every record is
/// validated before any output is produced.
inline std::string write_annotations(const std::vector<FrameRecord>& records) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    const auto errs = validate(r);
    if (!errs.empty())
      throw DataError("invalid record '" + r.frame_id + "': " + errs.front().field + ": " +
                      errs.front().message);
    if (!seen.insert(r.frame_id).second)
      throw DataError("duplicate frame_id '" + r.frame_id + "'");
  }
  std::string out(kAnnotationHeader);
  out += '\n';
  for (const auto& r : records) {
    for (const auto& e : r.annotations) {
      out += r.frame_id;
      for (double v : {e.cx, e.cy, e.a, e.b, e.theta, e.rings}) {
        out += ',';
        out += detail::fmt6(v);
      }
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Volunteer aggregation

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Circular median of axial angles in degrees [0, 180): the sample minimizing
/// the summed circular distance of the doubled angles. Ties go to the smaller angle.
inline double axial_median(const std::vector<double>& theta) {
  double best = 0;
  double best_cost = INFINITY;
  for (double cand : theta) {
    double cost = 0;
    for (double t : theta) {
      double d = std::fabs(2 * t - 2 * cand);
      cost += std::min(d, 360.0 - d);
    }
    if (cost < best_cost - 1e-12 || (std::fabs(cost - best_cost) <= 1e-12 && cand < best)) {
      best = cand;
      best_cost = cost;
    }
  }
  return best;
}

struct Raster {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  long area = 0;
};

inline Raster raster_bounds(const EllipseAnnotation& e) {
  const BBox box = ellipse_to_bbox(e);
  Raster r{static_cast<int>(std::floor(box.x_min)), static_cast<int>(std::floor(box.y_min)),
           static_cast<int>(std::ceil(box.x_max)), static_cast<int>(std::ceil(box.y_max)), 0};
  for (int y = r.y0; y <= r.y1; ++y)
    for (int x = r.x0; x <= r.x1; ++x)
      if (elliptical_radius(e, x, y) < 1.0) ++r.area;
  return r;
}

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

/// IoU of the pixel sets covered by two ellipses (pixel centers strictly inside).
inline double ellipse_iou(const EllipseAnnotation& p, const EllipseAnnotation& q) {
  const auto rp = detail::raster_bounds(p);
  const auto rq = detail::raster_bounds(q);
  const int x0 = std::max(rp.x0, rq.x0), x1 = std::min(rp.x1, rq.x1);
  const int y0 = std::max(rp.y0, rq.y0), y1 = std::min(rp.y1, rq.y1);
  long inter = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (elliptical_radius(p, x, y) < 1.0 && elliptical_radius(q, x, y) < 1.0) ++inter;
  const long uni = rp.area + rq.area - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct AggregationConfig {
  int min_support = 3;
  double iou_threshold = 0.3;
};

/// Single-linkage clustering of all submitted ellipses on pixel IoU. Each
/// cluster backed by at least min_support distinct volunteers yields the
/// component-wise median ellipse. Output sorted by (cx, cy).
inline std::vector<EllipseAnnotation> aggregate_volunteers(const VolunteerBatch& batch,
                                                           AggregationConfig cfg = {}) {
  if (cfg.min_support < 1) throw std::invalid_argument("min_support must be >= 1");
  if (!(cfg.iou_threshold > 0 && cfg.iou_threshold < 1))
    throw std::invalid_argument("iou_threshold must be in (0, 1)");

  std::vector<std::pair<std::string, EllipseAnnotation>> items;
  for (const auto& sub : batch.submissions)
    for (const auto& e : sub.annotations) items.emplace_back(sub.volunteer_id, normalized(e));

  detail::DisjointSets sets(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j)
      if (ellipse_iou(items[i].second, items[j].second) >= cfg.iou_threshold) sets.unite(i, j);

  std::map<std::size_t, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < items.size(); ++i) clusters[sets.find(i)].push_back(i);

  std::vector<EllipseAnnotation> out;
  for (const auto& [root, members] : clusters) {
    std::set<std::string> volunteers;
    for (auto m : members) volunteers.insert(items[m].first);
    if (static_cast<int>(volunteers.size()) < cfg.min_support) continue;
    std::vector<double> cx, cy, a, b, th, rings;
    for (auto m : members) {
      const auto& e = items[m].second;
      cx.push_back(e.cx);
      cy.push_back(e.cy);
      a.push_back(e.a);
      b.push_back(e.b);
      th.push_back(e.theta);
      rings.push_back(e.rings);
    }
    out.push_back({detail::median(cx), detail::median(cy), detail::median(a), detail::median(b),
                   detail::axial_median(th), detail::median(rings)});
  }
  std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) {
    return std::tie(l.cx, l.cy, l.a, l.b, l.theta, l.rings) <
           std::tie(r.cx, r.cy, r.a, r.b, r.theta, r.rings);
  });
  return out;
}

}  // namespace fringe
