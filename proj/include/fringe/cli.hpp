#pragma once

// Command-line front end: synth, predict, eval, rank, track, serve.
// Exit status: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fringe/annot.hpp"
#include "fringe/config.hpp"
#include "fringe/dataset.hpp"
#include "fringe/eval.hpp"
#include "fringe/png_io.hpp"
#include "fringe/predict.hpp"
#include "fringe/segmap.hpp"
#include "fringe/server.hpp"
#include "fringe/synth.hpp"
#include "fringe/track.hpp"

namespace fringe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline constexpr const char* kFormats = R"(Output formats:
  annotations.csv  filename,cx,cy,a,b,theta,rings
  predictions.csv  filename,x_min,y_min,x_max,y_max,score,cx,cy,a,b,theta,rings
                   (a frame without detections is one row with empty fields)
  maps/<stem>.png  16-bit ring map, value = rings * 5000; maps/<stem>.json {"scale","bin"}
  eval.csv         dataset,mAP,MAE,acc0.5,acc0.7,acc1,acc1.5,acc2 (rows: boxes, pixels)
  ranking.csv      frame_id,loss
  tracks.csv       track_id,frame,t,cx,cy,rings
  rise.csv         track_id,samples,a_max,tau,t0,rmse,converged,degenerate,poor_fit

Config file lines are `section.key = value`; flags override the file.
FRINGE_DATA_DIR is the default dataset directory.)";

namespace detail {

inline std::string env_data_dir() {
  const char* v = std::getenv("FRINGE_DATA_DIR");
  return v ? v : "";
}

/// Image directory for a path given on the command line: its images/
/// subdirectory when there is one, else the path itself.
inline fs::path images_dir_of(const fs::path& input) {
  return fs::is_directory(input / "images") ? input / "images" : input;
}

/// Pixel scores over per-frame canvases large enough for every box; the
/// prediction map is quantized to `bin`.
inline PixelEvalReport pixel_scores_from_boxes(const FrameDetections& preds, const FrameTruths& truths,
                                               double bin) {
  ScoreAccumulator acc;
  std::set<std::string> ids;
  for (const auto& [id, _] : preds) ids.insert(id);
  for (const auto& [id, _] : truths) ids.insert(id);
  for (const auto& id : ids) {
    std::vector<Detection> ps;
    std::vector<EllipseAnnotation> ts;
    if (auto it = preds.find(id); it != preds.end()) ps = it->second;
    if (auto it = truths.find(id); it != truths.end()) ts = it->second;
    double w = 1, h = 1;
    for (const auto& p : ps) {
      const BBox b = ellipse_to_bbox(p.ellipse);
      w = std::max(w, b.x_max + 2);
      h = std::max(h, b.y_max + 2);
    }
    for (const auto& t : ts) {
      const BBox b = ellipse_to_bbox(t);
      w = std::max(w, b.x_max + 2);
      h = std::max(h, b.y_max + 2);
    }
    const int W = static_cast<int>(std::ceil(w)), H = static_cast<int>(std::ceil(h));
    const auto pm = quantize_map(paint_detections(ps, W, H), bin).values;
    accumulate_pixels(pm, paint_ellipses(ts, W, H), acc);
  }
  PixelEvalReport r;
  r.scores = acc.summary();
  r.support_px = r.scores.n;
  return r;
}

inline std::vector<Detection> above(const std::vector<Detection>& dets, double thresh) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (d.score >= thresh) out.push_back(d);
  return out;
}

inline FrameDetections filter_scores(FrameDetections preds, double thresh) {
  for (auto& [id, dets] : preds) dets = above(dets, thresh);
  return preds;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline DatasetManifest cmd_synth(const RunConfig& cfg, std::size_t count, const fs::path& out_dir) {
  return render_dataset(cfg.synth, count, cfg.seed, out_dir, static_cast<unsigned>(cfg.threads));
}

struct PredictSummary {
  std::size_t frames = 0;
  std::vector<std::string> failures;  // "file: message"
};

/// Detect, count and paint every PNG in images_dir; writes predictions.csv
/// and maps/ under out_dir. Unreadable images are reported and skipped.
inline PredictSummary cmd_predict(const RunConfig& cfg, const fs::path& images_dir, const fs::path& out_dir) {
  const auto names = list_pngs(images_dir);
  const DatasetPaths out{out_dir};
  fs::create_directories(out.maps());
  std::vector<std::optional<std::vector<Detection>>> results(names.size());
  std::vector<std::string> errors(names.size());
  parallel_for(
      names.size(),
      [&](std::size_t i) {
        try {
          const Image img = read_png(images_dir / names[i]);
          auto dets = detail::above(predict_detections(img, cfg.detector, cfg.rings), cfg.score_thresh);
          const auto stem = fs::path(names[i]).stem().string();
          write_file(out.maps() / (stem + ".png"),
                     encode_ring_map(paint_detections(dets, img.width(), img.height())));
          write_file(out.maps() / (stem + ".json"), ring_map_sidecar(kMapScale, cfg.bin));
          results[i] = std::move(dets);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      },
      static_cast<unsigned>(cfg.threads));
  PredictSummary sum;
  std::vector<FramePredictions> rows;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (results[i]) {
      rows.emplace_back(names[i], std::move(*results[i]));
      ++sum.frames;
    } else {
      sum.failures.push_back(names[i] + ": " + errors[i]);
    }
  }
  write_file(out.predictions(), write_predictions(rows));
  return sum;
}

struct EvalOutput {
  EvalReport boxes;
  PixelEvalReport pixels;
  std::string json;
  std::string csv;
};

inline EvalOutput cmd_eval(const RunConfig& cfg, const fs::path& pred_csv, const fs::path& truth_csv) {
  const auto pred_frames = parse_predictions(read_file(pred_csv));
  const auto truth = truths_by_frame(parse_annotations(read_file(truth_csv)));
  const auto preds = detail::filter_scores(detections_by_frame(pred_frames), cfg.score_thresh);
  std::vector<std::string> missing;
  for (const auto& [id, _] : truth)
    if (!preds.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "predictions missing for " + std::to_string(missing.size()) + " frame(s):";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
  EvalOutput out;
  out.boxes = evaluate(preds, truth, cfg.loss.match_iou);
  out.pixels = detail::pixel_scores_from_boxes(preds, truth, cfg.bin);
  nlohmann::ordered_json j;
  j["boxes"] = to_json(out.boxes);
  j["pixels"] = to_json(out.pixels);
  j["iou_thresh"] = cfg.loss.match_iou;
  j["bin"] = cfg.bin;
  out.json = j.dump(2) + "\n";
  out.csv = std::string(kReportHeader) + "\n" + report_row("boxes", out.boxes.map_coco, out.boxes.rings) +
            "\n" + report_row("pixels", std::nullopt, out.pixels.scores) + "\n";
  return out;
}

inline LossRanking cmd_rank(const RunConfig& cfg, const fs::path& pred_csv, const fs::path& truth_csv) {
  const auto preds = detail::filter_scores(detections_by_frame(parse_predictions(read_file(pred_csv))),
                                           cfg.score_thresh);
  const auto truth = truths_by_frame(parse_annotations(read_file(truth_csv)));
  return rank_by_loss(truth, preds, cfg.loss);
}

struct TrackOutput {
  std::vector<Track> tracks;
  std::string tracks_csv;
  std::string rise_csv;
};

/// Frames are taken in the order they first appear in the predictions CSV.
inline TrackOutput cmd_track(const RunConfig& cfg, const fs::path& pred_csv) {
  const auto rows = parse_predictions(read_file(pred_csv));
  std::vector<std::vector<Detection>> frames;
  for (const auto& [id, dets] : rows) frames.push_back(detail::above(dets, cfg.score_thresh));
  TrackOutput out;
  out.tracks = link(frames, cfg.track);
  out.tracks_csv = write_tracks(out.tracks);
  out.rise_csv = std::string(kRiseHeader) + "\n";
  std::size_t fitted = 0;
  for (const auto& tr : out.tracks) {
    if (tr.samples.size() < 6) continue;
    out.rise_csv += rise_row(tr.track_id, tr.samples.size(), fit_rise(tr));
    ++fitted;
  }
  if (fitted == 0) throw DataError("no track has the 6 samples a rise fit needs");
  return out;
}

// ---------------------------------------------------------------------------
// Entry point

/// Run the CLI with argv-style arguments (without the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Fringe: antinode detection, ring counting and curation for ESPI frames", "fringe"};
  app.require_subcommand(1);
  app.footer(kFormats);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> score_thresh, iou_thresh, bin;
  std::optional<int> port;
  std::string out_path;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file (section.key = value)");
    sub->footer(kFormats);
  };

  auto* synth = app.add_subcommand("synth", "Render a seeded synthetic dataset");
  std::size_t count = 500;
  synth->add_option("--count", count, "Number of frames")->capture_default_str();
  synth->add_option("--seed", seed, "Dataset seed");
  synth->add_option("--out", out_path, "Dataset directory (default: $FRINGE_DATA_DIR)");
  common(synth);

  auto* predict = app.add_subcommand("predict", "Detect antinodes and count rings in a directory of PNGs");
  std::string images_in;
  predict->add_option("images", images_in, "Dataset or image directory (default: $FRINGE_DATA_DIR)");
  predict->add_option("--out", out_path, "Output directory (default: the dataset directory)");
  predict->add_option("--score-thresh", score_thresh, "Drop detections scoring below this");
  predict->add_option("--bin", bin, "Quantization bin recorded in map sidecars");
  common(predict);

  auto* eval = app.add_subcommand("eval", "Score predictions against annotations");
  std::string pred_csv, truth_csv;
  eval->add_option("predictions", pred_csv, "predictions.csv")->required();
  eval->add_option("truth", truth_csv, "annotations.csv")->required();
  eval->add_option("--out", out_path, "Directory for eval.json and eval.csv (default: stdout)");
  eval->add_option("--score-thresh", score_thresh, "Drop detections scoring below this");
  eval->add_option("--iou-thresh", iou_thresh, "IoU for matching ring counts");
  eval->add_option("--bin", bin, "Quantization bin for pixel scores");
  common(eval);

  auto* rank = app.add_subcommand("rank", "Order frames by descending loss");
  rank->add_option("predictions", pred_csv, "predictions.csv")->required();
  rank->add_option("truth", truth_csv, "annotations.csv")->required();
  rank->add_option("--out", out_path, "ranking.csv path (default: stdout)");
  rank->add_option("--score-thresh", score_thresh, "Drop detections scoring below this");
  rank->add_option("--iou-thresh", iou_thresh, "IoU for matching");
  common(rank);

  auto* track = app.add_subcommand("track", "Link detections over time and fit rise curves");
  track->add_option("predictions", pred_csv, "predictions.csv in frame order")->required();
  track->add_option("--out", out_path, "Directory for tracks.csv and rise.csv (default: stdout)");
  track->add_option("--score-thresh", score_thresh, "Drop detections scoring below this");
  common(track);

  auto* serve = app.add_subcommand("serve", "Serve the curation API for a dataset");
  std::string data_in;
  std::string predictor_kind;
  serve->add_option("data", data_in, "Dataset directory (default: $FRINGE_DATA_DIR)");
  serve->add_option("--port", port, "TCP port (default 8077)");
  serve->add_option("--predictor", predictor_kind, "classical or file (reuse predictions.csv)")
      ->check(CLI::IsMember({"classical", "file"}));
  common(serve);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  RunConfig cfg;
  try {
    cfg.data_dir = detail::env_data_dir();
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      apply_config_text(cfg, read_file(config_path));
    }
    if (seed) cfg.seed = *seed;
    if (score_thresh) cfg.score_thresh = *score_thresh;
    if (iou_thresh) cfg.loss.match_iou = *iou_thresh;
    if (bin) cfg.bin = *bin;
    if (port) cfg.port = *port;
    if (!predictor_kind.empty())
      cfg.predictor = predictor_kind == "file" ? PredictorKind::file : PredictorKind::classical;
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }

  auto need_dir = [&](const std::string& given) -> std::string {
    if (!given.empty()) return given;
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    throw ConfigError("no directory given and FRINGE_DATA_DIR is not set");
  };

  try {
    if (*synth) {
      const auto m = cmd_synth(cfg, count, need_dir(out_path));
      out << "wrote " << m.files.size() << " frames to " << need_dir(out_path) << "\n";
    } else if (*predict) {
      const fs::path root = need_dir(images_in);
      const fs::path dest = out_path.empty() ? root : fs::path(out_path);
      const auto sum = cmd_predict(cfg, detail::images_dir_of(root), dest);
      for (const auto& f : sum.failures) err << "error: " << f << "\n";
      out << "predicted " << sum.frames << " frames into " << dest.string() << "\n";
      if (!sum.failures.empty()) return kExitData;
    } else if (*eval) {
      const auto res = cmd_eval(cfg, pred_csv, truth_csv);
      if (out_path.empty()) {
        out << res.json << res.csv;
      } else {
        fs::create_directories(out_path);
        write_file(fs::path(out_path) / "eval.json", res.json);
        write_file(fs::path(out_path) / "eval.csv", res.csv);
        out << res.csv;
      }
    } else if (*rank) {
      const auto text = write_ranking(cmd_rank(cfg, pred_csv, truth_csv));
      if (out_path.empty()) out << text;
      else write_file(out_path, text);
    } else if (*track) {
      const auto res = cmd_track(cfg, pred_csv);
      if (out_path.empty()) {
        out << res.tracks_csv << "\n" << res.rise_csv;
      } else {
        fs::create_directories(out_path);
        write_file(fs::path(out_path) / "tracks.csv", res.tracks_csv);
        write_file(fs::path(out_path) / "rise.csv", res.rise_csv);
        out << res.tracks.size() << " tracks\n";
      }
    } else if (*serve) {
      const fs::path root = need_dir(data_in);
      if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
      std::shared_ptr<Predictor> predictor;
      if (cfg.predictor == PredictorKind::file)
        predictor = std::make_shared<CsvPredictor>(DatasetPaths{root}.predictions());
      else
        predictor = std::make_shared<ClassicalPredictor>(cfg.detector, cfg.rings);
      auto store = std::make_shared<SessionStore>(root, predictor, cfg.loss);
      store->writes_predictions = cfg.predictor == PredictorKind::classical;
      store->threads = static_cast<unsigned>(cfg.threads);
      httplib::Server srv;
      install_routes(srv, store);
      store->load_async();
      out << "serving " << root.string() << " on http://127.0.0.1:" << cfg.port << "\n" << std::flush;
      if (!srv.listen("0.0.0.0", cfg.port)) throw DataError("cannot listen on port " + std::to_string(cfg.port));
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace fringe::cli
