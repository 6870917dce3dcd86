#pragma once

// Detect-then-count prediction for a frame, the predictions CSV, and the
// pluggable predictor interface used by the CLI and the curation service.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "fringe/annot.hpp"
#include "fringe/detect.hpp"
#include "fringe/png_io.hpp"
#include "fringe/rings.hpp"

namespace fringe {

/// Detections in descending score order, each with its counted rings in
/// ellipse.rings.
inline std::vector<Detection> predict_detections(const Image& img, const DetectorConfig& dcfg = {},
                                                 const RingConfig& rcfg = {}) {
  auto dets = detect_antinodes(img, dcfg);
  for (auto& d : dets) {
    const auto patch = crop_and_square_clamped(img, d.ellipse, rcfg.crop_size);
    d.ellipse.rings = count_rings(patch, rcfg).value;
  }
  return dets;
}

// ---------------------------------------------------------------------------
// Predictions CSV, numbers written exactly. A frame without detections is written as a row whose
// numeric fields are all empty, so "no detections" and "not predicted" stay
// distinguishable.

inline constexpr std::string_view kPredictionHeader =
    "filename,x_min,y_min,x_max,y_max,score,cx,cy,a,b,theta,rings";

using FramePredictions = std::pair<std::string, std::vector<Detection>>;

inline std::vector<FramePredictions> parse_predictions(std::string_view text) {
  static constexpr const char* kCols[] = {"filename", "x_min", "y_min", "x_max", "y_max", "score",
                                          "cx",       "cy",    "a",     "b",     "theta", "rings"};
  detail::FrameGrouper<Detection> groups;
  bool saw_header = false;
  detail::for_each_line(text, [&](std::size_t ln, std::string_view line) {
    if (!saw_header) {
      if (detail::trim(line) != kPredictionHeader)
        throw DataError("line 1: expected header '" + std::string(kPredictionHeader) + "'");
      saw_header = true;
      return;
    }
    if (detail::trim(line).empty()) return;
    const auto cells = detail::split_line(line);
    const std::string where = "line " + std::to_string(ln);
    if (cells.size() != 12)
      throw DataError(where + ": expected 12 columns, found " + std::to_string(cells.size()));
    const std::string fname(detail::trim(cells[0]));
    if (fname.empty()) throw DataError(where + ", column 1 (filename): empty filename");
    bool all_empty = true;
    for (std::size_t c = 1; c < 12; ++c) all_empty = all_empty && detail::trim(cells[c]).empty();
    auto& slot = groups.slot(fname);
    if (all_empty) return;
    double v[11];
    for (int c = 0; c < 11; ++c) {
      if (!detail::parse_double(cells[c + 1], v[c]))
        throw DataError(where + ", column " + std::to_string(c + 2) + " (" + kCols[c + 1] +
                        "): not a number: '" + std::string(cells[c + 1]) + "'");
    }
    Detection d;
    d.bbox = {v[0], v[1], v[2], v[3]};
    d.score = v[4];
    d.ellipse = {v[5], v[6], v[7], v[8], normalize_theta(v[9]), v[10]};
    if (!d.bbox.valid()) throw DataError("degenerate box at " + where);
    if (d.ellipse.a < d.ellipse.b || d.ellipse.b <= 0) throw DataError("a < b at " + where);
    if (d.ellipse.rings < 0) throw DataError("negative rings at " + where);
    slot.push_back(d);
  });
  if (!saw_header) throw DataError("line 1: missing header");
  return groups.take();
}

inline std::string write_predictions(const std::vector<FramePredictions>& frames) {
  std::string out(kPredictionHeader);
  out += '\n';
  for (const auto& [id, dets] : frames) {
    if (dets.empty()) {
      out += id + ",,,,,,,,,,,\n";
      continue;
    }
    for (const auto& d : dets) {
      out += id;
      for (double v : {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max, d.score,
                       d.ellipse.cx, d.ellipse.cy, d.ellipse.a, d.ellipse.b, d.ellipse.theta,
                       d.ellipse.rings}) {
        out += ',';
        out += detail::fmt_exact(v);
      }
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictor backends

/// Source of per-frame predictions. After prepare(), predict() may be called
/// from several threads at once.
class Predictor {
 public:
  virtual ~Predictor() = default;
  /// Called once before a batch of predict() calls.
  virtual void prepare() {}
  virtual std::vector<Detection> predict(const std::string& frame_id,
                                         const std::filesystem::path& image_path) = 0;
};

/// Classical detect-and-count on the frame image.
class ClassicalPredictor : public Predictor {
 public:
  explicit ClassicalPredictor(DetectorConfig dcfg = {}, RingConfig rcfg = {})
      : dcfg_(dcfg), rcfg_(rcfg) {}

  std::vector<Detection> predict(const std::string&, const std::filesystem::path& image_path) override {
    return predict_detections(read_png(image_path), dcfg_, rcfg_);
  }

 private:
  DetectorConfig dcfg_;
  RingConfig rcfg_;
};

/// Predictions read from a predictions CSV; prepare() re-reads the file so
/// externally produced predictions are picked up.
class CsvPredictor : public Predictor {
 public:
  explicit CsvPredictor(std::filesystem::path csv) : csv_(std::move(csv)) {}

  void prepare() override {
    std::map<std::string, std::vector<Detection>> table;
    if (std::filesystem::exists(csv_)) {
      for (auto& [id, dets] : parse_predictions(read_file(csv_))) table[id] = std::move(dets);
    }
    table_ = std::move(table);
  }

  std::vector<Detection> predict(const std::string& frame_id, const std::filesystem::path&) override {
    auto it = table_.find(frame_id);
    return it == table_.end() ? std::vector<Detection>{} : it->second;
  }

 private:
  std::filesystem::path csv_;
  std::map<std::string, std::vector<Detection>> table_;
};

}  // namespace fringe
