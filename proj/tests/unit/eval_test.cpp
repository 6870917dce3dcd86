#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fringe/eval.hpp"

using namespace fringe;

namespace {

EllipseAnnotation ell(double cx, double cy, double a, double b, double rings = 3) {
  return {cx, cy, a, b, 0, rings};
}

Detection det(const EllipseAnnotation& e, double score) { return {ellipse_to_bbox(e), score, e}; }

Detection box(double x0, double y0, double x1, double y1, double score, double rings = 0) {
  return {{x0, y0, x1, y1}, score, {(x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 2, (y1 - y0) / 2, 0, rings}};
}

struct OracleFrame {
  std::string id;
  std::vector<std::array<double, 4>> truths;
  std::vector<std::array<double, 5>> preds;
};

struct OracleCase {
  std::vector<OracleFrame> frames;
  double map;
};

const std::vector<OracleCase> kOracleCases = {
#include "coco_oracle_cases.inc"
};

std::pair<FrameDetections, FrameTruths> unpack(const OracleCase& c) {
  FrameDetections p;
  FrameTruths t;
  for (const auto& f : c.frames) {
    auto& ts = t[f.id];
    for (const auto& v : f.truths) ts.push_back(ell(v[0], v[1], v[2], v[3]));
    auto& ps = p[f.id];
    for (const auto& v : f.preds) ps.push_back(box(v[0], v[1], v[2], v[3], v[4]));
  }
  return {p, t};
}

// Frames of truths with noisy predictions and distractors.
std::pair<FrameDetections, FrameTruths> random_dataset(std::mt19937& rng, int frames) {
  std::uniform_real_distribution<double> pos(60, 400), ax(12, 50), jit(-4, 4), sc(0, 1), r(1, 11);
  FrameDetections p;
  FrameTruths t;
  for (int f = 0; f < frames; ++f) {
    const std::string id = "frame_" + std::to_string(f);
    auto& ts = t[id];
    auto& ps = p[id];
    for (int k = 0; k < 3; ++k) {
      const double a = ax(rng);
      ts.push_back({pos(rng), pos(rng), a, a * 0.8, 0, r(rng)});
      if (sc(rng) < 0.8) {
        auto e = ts.back();
        e.cx += jit(rng);
        e.cy += jit(rng);
        e.rings += jit(rng) / 4;
        ps.push_back(det(e, std::round(sc(rng) * 10) / 10));
      }
    }
    if (sc(rng) < 0.5) ps.push_back(det(ell(pos(rng), pos(rng), 20, 15), sc(rng)));
  }
  return {p, t};
}

}  // namespace

TEST(Match, Examples) {
  const auto t = ell(50, 50, 20, 10);
  auto r = match({det(t, 0.9)}, {t}, 0.5);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_DOUBLE_EQ(r.pairs[0].iou, 1.0);
  EXPECT_TRUE(r.fp.empty());
  EXPECT_TRUE(r.fn.empty());

  r = match({det(t, 0.5), det(t, 0.9)}, {t}, 0.5);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].pred, 1u);
  EXPECT_EQ(r.fp, std::vector<std::size_t>{0});

  // Same-size box shifted along x until IoU is 0.4.
  const BBox tb = ellipse_to_bbox(t);
  const double w = tb.width();
  const double shift = w * (1 - 0.4) / (1 + 0.4);
  r = match({box(tb.x_min + shift, tb.y_min, tb.x_max + shift, tb.y_max, 1)}, {t}, 0.5);
  EXPECT_TRUE(r.pairs.empty());
  EXPECT_EQ(r.fp.size(), 1u);
  EXPECT_EQ(r.fn.size(), 1u);
}

TEST(Match, TiesGoToLowerTruthIndex) {
  const auto t = ell(50, 50, 20, 10);
  const auto r = match({det(t, 1)}, {t, t}, 0.5);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].truth, 0u);
  EXPECT_EQ(r.fn, std::vector<std::size_t>{1});
}

TEST(CocoMap, Examples) {
  const auto a = ell(50, 50, 20, 10), b = ell(200, 200, 30, 20);
  EXPECT_DOUBLE_EQ(coco_map({{"f", {det(a, 1), det(b, 1)}}}, {{"f", {a, b}}}), 1.0);
  EXPECT_DOUBLE_EQ(coco_map({}, {{"f", {a, b}}}), 0.0);
  EXPECT_THROW(coco_map({{"f", {det(a, 1)}}}, {}), DataError);
  EXPECT_THROW(coco_map({}, {{"f", {}}}), DataError);
}

// Two truths, one perfect prediction (0.9) and one disjoint (0.8): precision
// is 1 up to recall 1/2, so 51 of the 101 recall levels (0, .01, ..., .50)
// score 1 at every threshold.
TEST(CocoMap, HalfRecallExample) {
  const auto a = ell(50, 50, 20, 10), b = ell(200, 200, 30, 20);
  const FrameDetections p{{"f", {det(a, 0.9), box(400, 10, 450, 40, 0.8)}}};
  const FrameTruths t{{"f", {a, b}}};
  EXPECT_NEAR(coco_map(p, t), 51.0 / 101.0, 1e-15);
  std::vector<ScoredHit> hits{{0.9, true}, {0.8, false}};
  EXPECT_NEAR(average_precision(hits, 2), 51.0 / 101.0, 1e-15);
}

TEST(CocoMap, FrozenOracleCases) {
  ASSERT_EQ(kOracleCases.size(), 10u);
  for (std::size_t i = 0; i < kOracleCases.size(); ++i) {
    const auto [p, t] = unpack(kOracleCases[i]);
    EXPECT_NEAR(coco_map(p, t), kOracleCases[i].map, 1e-9) << "case " << i;
  }
}

TEST(CocoMap, RelabelAndScoreScalingInvariant) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto [p, t] = random_dataset(rng, 6);
    const double base = coco_map(p, t);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    FrameDetections p2;
    FrameTruths t2;
    for (auto& [id, v] : p) {
      auto scaled = v;
      for (auto& d : scaled) d.score *= 0.37;
      std::reverse(scaled.begin(), scaled.end());
      p2["z" + id] = scaled;
    }
    for (auto& [id, v] : t) t2["z" + id] = v;
    EXPECT_DOUBLE_EQ(coco_map(p2, t2), base);
  }
}

TEST(CocoMap, PerfectOnlyWhenAllMatchAbove95) {
  const auto a = ell(100, 100, 40, 30);
  EXPECT_DOUBLE_EQ(coco_map({{"f", {det(a, 1)}}}, {{"f", {a}}}), 1.0);
  auto shifted = a;
  shifted.cx += 3;  // IoU 77/83
  EXPECT_LT(coco_map({{"f", {det(shifted, 1)}}}, {{"f", {a}}}), 1.0);
  // A higher-scored false positive drops precision.
  EXPECT_LT(coco_map({{"f", {det(a, 0.5), det(ell(300, 300, 10, 10), 0.9)}}}, {{"f", {a}}}), 1.0);
}

TEST(RingScores, Examples) {
  const auto s = ring_scores({{2.0, 2.4}, {5.0, 5.0}, {9.6, 11.0}});
  EXPECT_EQ(s.n, 3u);
  EXPECT_NEAR(*s.mae, 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(*s.acc_at(0.5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*s.acc_at(1.5), 1.0);
  const auto same = ring_scores({{3, 3}, {7.5, 7.5}});
  EXPECT_EQ(*same.mae, 0.0);
  for (const auto& a : same.acc) EXPECT_EQ(*a, 1.0);
  const auto none = ring_scores({});
  EXPECT_EQ(none.n, 0u);
  EXPECT_FALSE(none.mae);
  for (const auto& a : none.acc) EXPECT_FALSE(a);
  EXPECT_FALSE(s.acc_at(0.6));
}

TEST(RingScores, MonotoneAndSymmetric) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 12), d(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> pairs, swapped;
    for (int i = 0; i < 40; ++i) {
      const double t = u(rng), p = t + d(rng);
      pairs.emplace_back(p, t);
      swapped.emplace_back(t, p);
    }
    const auto s = ring_scores(pairs), w = ring_scores(swapped);
    EXPECT_EQ(*s.mae, *w.mae);
    for (std::size_t i = 0; i < kTolerances.size(); ++i) {
      EXPECT_EQ(*s.acc[i], *w.acc[i]);
      if (i > 0) {
        EXPECT_GE(*s.acc[i], *s.acc[i - 1]);
      }
    }
  }
}

TEST(PixelScores, Examples) {
  RingMap t(20, 10, 0.0);
  for (int y = 2; y < 8; ++y)
    for (int x = 3; x < 12; ++x) t(x, y) = 4.0;
  auto r = pixel_scores(t, t);
  EXPECT_EQ(*r.scores.mae, 0.0);
  EXPECT_EQ(r.support_px, 54u);
  RingMap p = t;
  for (auto& v : p.pixels())
    if (v > 0) v += 0.6;
  r = pixel_scores(p, t);
  EXPECT_EQ(*r.scores.acc_at(0.5), 0.0);
  EXPECT_EQ(*r.scores.acc_at(0.7), 1.0);
  EXPECT_FALSE(pixel_scores(RingMap(4, 4), RingMap(4, 4)).scores.mae);
  EXPECT_THROW(pixel_scores(RingMap(4, 4), RingMap(5, 4)), std::invalid_argument);
  // Union support: a predicted region with no target counts.
  RingMap extra = t;
  extra(0, 0) = 2.0;
  EXPECT_EQ(pixel_scores(extra, t).support_px, 55u);
}

TEST(Loss, Examples) {
  const auto a = ell(100, 100, 30, 20, 4);
  EXPECT_EQ(frame_loss({det(a, 1)}, {a}), 0.0);
  EXPECT_EQ(frame_loss({}, {a}), 1.0);
  EXPECT_EQ(frame_loss({det(a, 1)}, {}), 1.0);
  // IoU 0.8 by widening the box; rings off by 1.
  const BBox tb = ellipse_to_bbox(a);
  const double grow = tb.width() * 0.25;
  const double loss = frame_loss({box(tb.x_min, tb.y_min, tb.x_max + grow, tb.y_max, 1, 5)}, {a});
  EXPECT_NEAR(loss, 0.7, 1e-12);
}

TEST(Loss, ZeroIffPerfect) {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto [p, t] = random_dataset(rng, 4);
    for (const auto& [id, ts] : t) {
      EXPECT_EQ(frame_loss(as_detections(ts), ts), 0.0);
      if (!p[id].empty() || !ts.empty()) {
        const bool perfect = frame_loss(p[id], ts) == 0.0;
        const auto m = match(p[id], ts, 0.5);
        EXPECT_EQ(perfect, m.fp.empty() && m.fn.empty() &&
                               std::all_of(m.pairs.begin(), m.pairs.end(), [&](const MatchPair& x) {
                                 return x.iou == 1.0 && p[id][x.pred].ellipse.rings == ts[x.truth].rings;
                               }));
      }
    }
  }
}

TEST(Rank, OrderingAndTies) {
  const auto a = ell(100, 100, 30, 20, 4);
  FrameTruths t{{"c", {a}}, {"a", {a}}, {"b", {a}}, {"d", {a}}};
  FrameDetections p{{"a", {det(a, 1)}}, {"b", {det(a, 1)}}, {"c", {}}, {"d", {det(a, 1)}}};
  auto r = rank_by_loss(t, p);
  ASSERT_EQ(r.entries.size(), 4u);
  EXPECT_EQ(r.entries[0].frame_id, "c");
  EXPECT_EQ(r.entries[0].loss, 1.0);
  EXPECT_EQ(r.entries[1].frame_id, "a");
  EXPECT_EQ(r.entries[2].frame_id, "b");
  EXPECT_EQ(r.entries[3].frame_id, "d");
  EXPECT_EQ(write_ranking(r), "frame_id,loss\nc,1\na,0\nb,0\nd,0\n");
  // Frames absent from predictions have no boxes.
  p.erase("c");
  EXPECT_EQ(rank_by_loss(t, p).entries[0].frame_id, "c");
}

TEST(Rank, PermutationInvariant) {
  std::mt19937 rng(12);
  auto [p, t] = random_dataset(rng, 12);
  const auto base = rank_by_loss(t, p);
  std::vector<FramePredictions> listed(p.begin(), p.end());
  std::shuffle(listed.begin(), listed.end(), rng);
  const auto again = rank_by_loss(t, detections_by_frame(listed));
  ASSERT_EQ(base.entries.size(), again.entries.size());
  for (std::size_t i = 0; i < base.entries.size(); ++i) {
    EXPECT_EQ(base.entries[i].frame_id, again.entries[i].frame_id);
    EXPECT_EQ(base.entries[i].loss, again.entries[i].loss);
    if (i > 0) {
      EXPECT_GE(base.entries[i - 1].loss, base.entries[i].loss);
    }
  }
}

TEST(Evaluate, ReportAndCsvRow) {
  const auto a = ell(100, 100, 30, 20, 4), b = ell(300, 200, 40, 30, 7);
  auto pa = det(a, 0.9);
  pa.ellipse.rings = 4.4;
  const FrameDetections p{{"f", {pa, det(ell(500, 50, 10, 10), 0.2)}}};
  const FrameTruths t{{"f", {a, b}}};
  const auto rep = evaluate(p, t);
  EXPECT_EQ(rep.n_matched, 1u);
  EXPECT_EQ(rep.n_fp, 1u);
  EXPECT_EQ(rep.n_fn, 1u);
  EXPECT_NEAR(*rep.rings.mae, 0.4, 1e-12);
  EXPECT_EQ(report_row("boxes", rep.map_coco, rep.rings), "boxes,0.505,0.4,1,1,1,1,1");
  const auto empty = evaluate({}, {});
  EXPECT_FALSE(empty.map_coco);
  EXPECT_EQ(report_row("boxes", empty.map_coco, empty.rings), "boxes,,,,,,,");
  const auto j = to_json(rep);
  EXPECT_EQ(j["n_matched"], 1);
  EXPECT_TRUE(to_json(empty)["map_coco"].is_null());
}
