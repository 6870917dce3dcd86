#pragma once

// Scoring: greedy IoU matching, COCO-style mAP, ring-count error and
// tolerance accuracies, pixelwise map scores, per-frame loss and ranking.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fringe/annot.hpp"
#include "fringe/detect.hpp"
#include "fringe/geometry.hpp"
#include "fringe/segmap.hpp"

namespace fringe {

inline constexpr std::array<double, 5> kTolerances{0.5, 0.7, 1.0, 1.5, 2.0};
inline constexpr double kToleranceSlack = 1e-9;

using FrameTruths = std::map<std::string, std::vector<EllipseAnnotation>>;
using FrameDetections = std::map<std::string, std::vector<Detection>>;

// ---------------------------------------------------------------------------
// Matching

struct MatchPair {
  std::size_t pred;
  std::size_t truth;
  double iou;
};

struct MatchResult {
  std::vector<MatchPair> pairs;    // in prediction processing order
  std::vector<std::size_t> fp;     // unmatched prediction indices
  std::vector<std::size_t> fn;     // unmatched truth indices
};

/// Prediction indices by descending score; equal scores keep input order.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return preds[l].score > preds[r].score; });
  return order;
}

/// Greedy matching: each prediction in score order claims the unclaimed
/// truth of highest IoU (ties to the lower truth index) if IoU >= thresh.
inline MatchResult match(const std::vector<Detection>& preds,
                         const std::vector<EllipseAnnotation>& truths, double iou_thresh) {
  std::vector<BBox> tboxes;
  tboxes.reserve(truths.size());
  for (const auto& t : truths) tboxes.push_back(ellipse_to_bbox(t));
  std::vector<bool> claimed(truths.size(), false);
  MatchResult res;
  for (std::size_t p : score_order(preds)) {
    std::optional<std::size_t> best;
    double best_iou = -1;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (claimed[t]) continue;
      const double v = iou(preds[p].bbox, tboxes[t]);
      if (v > best_iou) {
        best_iou = v;
        best = t;
      }
    }
    if (best && best_iou >= iou_thresh) {
      claimed[*best] = true;
      res.pairs.push_back({p, *best, best_iou});
    } else {
      res.fp.push_back(p);
    }
  }
  for (std::size_t t = 0; t < truths.size(); ++t)
    if (!claimed[t]) res.fn.push_back(t);
  return res;
}

// ---------------------------------------------------------------------------
// COCO mAP

/// IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::array<double, 10> coco_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

/// Scored outcome of one prediction at a given IoU threshold.
struct ScoredHit {
  double score;
  bool tp;
};

/// 101-point interpolated AP from scored hits and the truth count. Hits of
/// equal score form one operating point, so the result does not depend on
/// how ties are ordered.
inline double average_precision(std::vector<ScoredHit> hits, std::size_t n_truth) {
  if (n_truth == 0) throw DataError("average precision undefined without ground truth");
  std::stable_sort(hits.begin(), hits.end(),
                   [](const ScoredHit& l, const ScoredHit& r) { return l.score > r.score; });
  std::vector<std::size_t> tp_at;  // cumulative TP at each operating point
  std::vector<double> prec;
  std::size_t tp = 0, n = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i].tp ? 1 : 0;
    ++n;
    if (i + 1 == hits.size() || hits[i + 1].score != hits[i].score) {
      tp_at.push_back(tp);
      prec.push_back(static_cast<double>(tp) / static_cast<double>(n));
    }
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double sum = 0;
  std::size_t k = 0;
  for (std::size_t r = 0; r <= 100; ++r) {
    // recall >= r/100, compared exactly in integers
    while (k < tp_at.size() && 100 * tp_at[k] < r * n_truth) ++k;
    if (k == tp_at.size()) break;
    sum += prec[k];
  }
  return sum / 101.0;
}

/// Single-class COCO mAP: 101-point AP averaged over IoU 0.50:0.05:0.95.
/// Frames missing from either side count as having no boxes there.
inline double coco_map(const FrameDetections& preds, const FrameTruths& truths) {
  std::size_t n_truth = 0;
  for (const auto& [id, ts] : truths) n_truth += ts.size();
  if (n_truth == 0) throw DataError("mAP undefined: no ground truth");
  static const std::vector<EllipseAnnotation> kNone;
  double total = 0;
  for (double thr : coco_thresholds()) {
    std::vector<ScoredHit> hits;
    for (const auto& [id, ps] : preds) {
      auto it = truths.find(id);
      const auto& ts = it == truths.end() ? kNone : it->second;
      const auto m = match(ps, ts, thr);
      for (const auto& pr : m.pairs) hits.push_back({ps[pr.pred].score, true});
      for (std::size_t f : m.fp) hits.push_back({ps[f].score, false});
    }
    total += average_precision(std::move(hits), n_truth);
  }
  return total / 10.0;
}

// ---------------------------------------------------------------------------
// Ring-count scores

/// Mean absolute error and tolerance accuracies; all metrics absent when n == 0.
struct ScoreSummary {
  std::size_t n = 0;
  std::optional<double> mae;
  std::array<std::optional<double>, kTolerances.size()> acc{};

  std::optional<double> acc_at(double tol) const {
    for (std::size_t i = 0; i < kTolerances.size(); ++i)
      if (kTolerances[i] == tol) return acc[i];
    return std::nullopt;
  }
};

/// Incremental accumulator for |pred - target| errors.
class ScoreAccumulator {
 public:
  void add(double pred, double target) {
    const double d = std::fabs(pred - target);
    ++n_;
    abs_sum_ += d;
    for (std::size_t i = 0; i < kTolerances.size(); ++i)
      if (d <= kTolerances[i] + kToleranceSlack) ++within_[i];
  }
  void merge(const ScoreAccumulator& o) {
    n_ += o.n_;
    abs_sum_ += o.abs_sum_;
    for (std::size_t i = 0; i < kTolerances.size(); ++i) within_[i] += o.within_[i];
  }
  ScoreSummary summary() const {
    ScoreSummary s;
    s.n = n_;
    if (n_ == 0) return s;
    const double n = static_cast<double>(n_);
    s.mae = abs_sum_ / n;
    for (std::size_t i = 0; i < kTolerances.size(); ++i) s.acc[i] = within_[i] / n;
    return s;
  }

 private:
  std::size_t n_ = 0;
  double abs_sum_ = 0;
  std::array<std::size_t, kTolerances.size()> within_{};
};

inline ScoreSummary ring_scores(const std::vector<std::pair<double, double>>& pairs) {
  ScoreAccumulator acc;
  for (auto [p, t] : pairs) acc.add(p, t);
  return acc.summary();
}

struct PixelEvalReport {
  ScoreSummary scores;
  std::size_t support_px = 0;
};

/// Accumulate pixel errors over the union of the two supports.
inline void accumulate_pixels(const RingMap& pred, const RingMap& target, ScoreAccumulator& acc) {
  if (pred.width() != target.width() || pred.height() != target.height())
    throw std::invalid_argument("pixel_scores: map dimensions differ");
  auto p = pred.pixels();
  auto t = target.pixels();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0 || t[i] > 0) acc.add(p[i], t[i]);
}

inline PixelEvalReport pixel_scores(const RingMap& pred, const RingMap& target) {
  ScoreAccumulator acc;
  accumulate_pixels(pred, target, acc);
  PixelEvalReport r;
  r.scores = acc.summary();
  r.support_px = r.scores.n;
  return r;
}

// ---------------------------------------------------------------------------
// Dataset report

struct EvalReport {
  std::optional<double> map_coco;  // absent when there is no ground truth
  ScoreSummary rings;              // over pairs matched at eval_iou
  std::size_t n_matched = 0;
  std::size_t n_fp = 0;
  std::size_t n_fn = 0;
};

inline constexpr double kEvalIou = 0.5;

inline EvalReport evaluate(const FrameDetections& preds, const FrameTruths& truths,
                           double iou_thresh = kEvalIou) {
  EvalReport rep;
  std::size_t n_truth = 0;
  for (const auto& [id, ts] : truths) n_truth += ts.size();
  if (n_truth > 0) rep.map_coco = coco_map(preds, truths);
  static const std::vector<EllipseAnnotation> kNone;
  static const std::vector<Detection> kNoPreds;
  std::set<std::string> ids;
  for (const auto& [id, _] : preds) ids.insert(id);
  for (const auto& [id, _] : truths) ids.insert(id);
  ScoreAccumulator acc;
  for (const auto& id : ids) {
    auto pi = preds.find(id);
    auto ti = truths.find(id);
    const auto& ps = pi == preds.end() ? kNoPreds : pi->second;
    const auto& ts = ti == truths.end() ? kNone : ti->second;
    const auto m = match(ps, ts, iou_thresh);
    for (const auto& pr : m.pairs) acc.add(ps[pr.pred].ellipse.rings, ts[pr.truth].rings);
    rep.n_matched += m.pairs.size();
    rep.n_fp += m.fp.size();
    rep.n_fn += m.fn.size();
  }
  rep.rings = acc.summary();
  return rep;
}

namespace detail {

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json summary_json(const ScoreSummary& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["mae"] = opt_json(s.mae);
  nlohmann::ordered_json acc = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kTolerances.size(); ++i) acc[fmt6(kTolerances[i])] = opt_json(s.acc[i]);
  j["acc"] = acc;
  return j;
}

inline std::string fmt3(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", *v);
  return buf;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["map_coco"] = detail::opt_json(r.map_coco);
  j["rings"] = detail::summary_json(r.rings);
  j["n_matched"] = r.n_matched;
  j["n_fp"] = r.n_fp;
  j["n_fn"] = r.n_fn;
  return j;
}

inline nlohmann::ordered_json to_json(const PixelEvalReport& r) {
  nlohmann::ordered_json j = detail::summary_json(r.scores);
  j["support_px"] = r.support_px;
  return j;
}

inline constexpr std::string_view kReportHeader = "dataset,mAP,MAE,acc0.5,acc0.7,acc1,acc1.5,acc2";

/// Table row with three significant digits; absent metrics are empty cells.
inline std::string report_row(const std::string& dataset, const std::optional<double>& map,
                              const ScoreSummary& s) {
  std::string row = dataset + "," + detail::fmt3(map) + "," + detail::fmt3(s.mae);
  for (const auto& a : s.acc) row += "," + detail::fmt3(a);
  return row;
}

// ---------------------------------------------------------------------------
// Per-frame loss and the curation queue

struct LossWeights {
  double cardinality = 1.0;  // per false positive or missed truth
  double iou = 1.0;          // times (1 - IoU) per match
  double ring = 0.5;         // times |delta rings| per match
  double match_iou = 0.5;
};

inline double frame_loss(const std::vector<Detection>& preds,
                         const std::vector<EllipseAnnotation>& truths, const LossWeights& w = {}) {
  const auto m = match(preds, truths, w.match_iou);
  double loss = w.cardinality * static_cast<double>(m.fp.size() + m.fn.size());
  for (const auto& pr : m.pairs) {
    loss += w.iou * (1.0 - pr.iou);
    loss += w.ring * std::fabs(preds[pr.pred].ellipse.rings - truths[pr.truth].rings);
  }
  return loss;
}

struct LossEntry {
  std::string frame_id;
  double loss = 0;
};

struct LossRanking {
  std::vector<LossEntry> entries;  // descending loss, ties by frame id
};

/// Rank every frame present in either input; a frame absent from one side
/// has no boxes there.
inline LossRanking rank_by_loss(const FrameTruths& truths, const FrameDetections& preds,
                                const LossWeights& w = {}) {
  static const std::vector<EllipseAnnotation> kNone;
  static const std::vector<Detection> kNoPreds;
  std::set<std::string> ids;
  for (const auto& [id, _] : preds) ids.insert(id);
  for (const auto& [id, _] : truths) ids.insert(id);
  LossRanking r;
  for (const auto& id : ids) {
    auto pi = preds.find(id);
    auto ti = truths.find(id);
    r.entries.push_back({id, frame_loss(pi == preds.end() ? kNoPreds : pi->second,
                                        ti == truths.end() ? kNone : ti->second, w)});
  }
  std::stable_sort(r.entries.begin(), r.entries.end(),
                   [](const LossEntry& l, const LossEntry& r2) { return l.loss > r2.loss; });
  return r;
}

inline std::string write_ranking(const LossRanking& r) {
  std::string out = "frame_id,loss\n";
  for (const auto& e : r.entries) out += e.frame_id + "," + detail::fmt6(e.loss) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Conversions

inline FrameTruths truths_by_frame(const std::vector<FrameRecord>& records) {
  FrameTruths out;
  for (const auto& r : records) {
    auto& slot = out[r.frame_id];
    slot.insert(slot.end(), r.annotations.begin(), r.annotations.end());
  }
  return out;
}

inline FrameDetections detections_by_frame(const std::vector<FramePredictions>& frames) {
  FrameDetections out;
  for (const auto& [id, dets] : frames) {
    auto& slot = out[id];
    slot.insert(slot.end(), dets.begin(), dets.end());
  }
  return out;
}

/// Treat annotations as perfect predictions with score 1.
inline std::vector<Detection> as_detections(const std::vector<EllipseAnnotation>& truths) {
  std::vector<Detection> out;
  for (const auto& t : truths) out.push_back({ellipse_to_bbox(t), 1.0, t});
  return out;
}

}  // namespace fringe
