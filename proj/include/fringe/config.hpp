#pragma once

// Run configuration: flat `section.key = value` text, defaults from each
// module, unknown keys rejected.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fringe/annot.hpp"
#include "fringe/detect.hpp"
#include "fringe/eval.hpp"
#include "fringe/rings.hpp"
#include "fringe/segmap.hpp"
#include "fringe/synth.hpp"
#include "fringe/track.hpp"

namespace fringe {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PredictorKind { classical, file };

struct RunConfig {
  DetectorConfig detector;
  RingConfig rings;
  FrameSampler synth;
  TrackConfig track;
  LossWeights loss;
  double score_thresh = 0.0;
  double bin = kDefaultBin;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = all cores
  int port = 8077;
  PredictorKind predictor = PredictorKind::classical;
  std::string data_dir;
};

namespace detail {

inline double cfg_number(std::string_view key, std::string_view v) {
  double d;
  if (!parse_double(v, d)) throw ConfigError(std::string(key) + ": not a number: '" + std::string(v) + "'");
  return d;
}

inline int cfg_int(std::string_view key, std::string_view v) {
  const double d = cfg_number(key, v);
  if (d != static_cast<double>(static_cast<long long>(d)) || d < -2147483648.0 || d > 2147483647.0)
    throw ConfigError(std::string(key) + ": not an integer: '" + std::string(v) + "'");
  return static_cast<int>(d);
}

inline bool cfg_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false");
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

inline const std::map<std::string, Setter, std::less<>>& config_setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"detector.window", [](RunConfig& c, auto k, auto v) { c.detector.window = cfg_int(k, v); }},
      {"detector.min_area", [](RunConfig& c, auto k, auto v) { c.detector.min_area = cfg_int(k, v); }},
      {"detector.threshold",
       [](RunConfig& c, auto k, auto v) {
         if (v == "otsu") c.detector.fixed_threshold.reset();
         else c.detector.fixed_threshold = cfg_number(k, v);
       }},
      {"detector.merge_iou", [](RunConfig& c, auto k, auto v) { c.detector.merge_iou = cfg_number(k, v); }},
      {"detector.refine_window",
       [](RunConfig& c, auto k, auto v) { c.detector.refine_window = cfg_int(k, v); }},
      {"detector.edge_shrink",
       [](RunConfig& c, auto k, auto v) { c.detector.edge_shrink = cfg_number(k, v); }},
      {"detector.min_relative_contrast",
       [](RunConfig& c, auto k, auto v) { c.detector.min_relative_contrast = cfg_number(k, v); }},
      {"rings.crop_size", [](RunConfig& c, auto k, auto v) { c.rings.crop_size = cfg_int(k, v); }},
      {"rings.spokes", [](RunConfig& c, auto k, auto v) { c.rings.spokes = cfg_int(k, v); }},
      {"rings.samples", [](RunConfig& c, auto k, auto v) { c.rings.samples = cfg_int(k, v); }},
      {"rings.smooth_width", [](RunConfig& c, auto k, auto v) { c.rings.smooth_width = cfg_int(k, v); }},
      {"rings.prominence", [](RunConfig& c, auto k, auto v) { c.rings.prominence = cfg_number(k, v); }},
      {"rings.center_fraction",
       [](RunConfig& c, auto k, auto v) { c.rings.center_fraction = cfg_number(k, v); }},
      {"rings.reach", [](RunConfig& c, auto k, auto v) { c.rings.reach = cfg_number(k, v); }},
      {"eval.score_thresh", [](RunConfig& c, auto k, auto v) { c.score_thresh = cfg_number(k, v); }},
      {"eval.iou_thresh", [](RunConfig& c, auto k, auto v) { c.loss.match_iou = cfg_number(k, v); }},
      {"eval.bin", [](RunConfig& c, auto k, auto v) { c.bin = cfg_number(k, v); }},
      {"eval.loss_cardinality",
       [](RunConfig& c, auto k, auto v) { c.loss.cardinality = cfg_number(k, v); }},
      {"eval.loss_iou", [](RunConfig& c, auto k, auto v) { c.loss.iou = cfg_number(k, v); }},
      {"eval.loss_ring", [](RunConfig& c, auto k, auto v) { c.loss.ring = cfg_number(k, v); }},
      {"track.fps", [](RunConfig& c, auto k, auto v) { c.track.fps = cfg_number(k, v); }},
      {"track.gate",
       [](RunConfig& c, auto k, auto v) {
         if (v == "auto") c.track.gate.reset();
         else c.track.gate = cfg_number(k, v);
       }},
      {"track.max_misses", [](RunConfig& c, auto k, auto v) { c.track.max_misses = cfg_int(k, v); }},
      {"synth.width", [](RunConfig& c, auto k, auto v) { c.synth.width = cfg_int(k, v); }},
      {"synth.height", [](RunConfig& c, auto k, auto v) { c.synth.height = cfg_int(k, v); }},
      {"synth.min_antinodes", [](RunConfig& c, auto k, auto v) { c.synth.min_antinodes = cfg_int(k, v); }},
      {"synth.max_antinodes", [](RunConfig& c, auto k, auto v) { c.synth.max_antinodes = cfg_int(k, v); }},
      {"synth.rings_min", [](RunConfig& c, auto k, auto v) { c.synth.rings_min = cfg_number(k, v); }},
      {"synth.rings_max", [](RunConfig& c, auto k, auto v) { c.synth.rings_max = cfg_number(k, v); }},
      {"synth.integer_rings", [](RunConfig& c, auto k, auto v) { c.synth.integer_rings = cfg_bool(k, v); }},
      {"synth.a_min", [](RunConfig& c, auto k, auto v) { c.synth.a_min = cfg_number(k, v); }},
      {"synth.a_max", [](RunConfig& c, auto k, auto v) { c.synth.a_max = cfg_number(k, v); }},
      {"synth.aspect_min", [](RunConfig& c, auto k, auto v) { c.synth.aspect_min = cfg_number(k, v); }},
      {"synth.px_per_ring", [](RunConfig& c, auto k, auto v) { c.synth.px_per_ring = cfg_number(k, v); }},
      {"synth.contrast_min", [](RunConfig& c, auto k, auto v) { c.synth.contrast_min = cfg_number(k, v); }},
      {"synth.contrast_max", [](RunConfig& c, auto k, auto v) { c.synth.contrast_max = cfg_number(k, v); }},
      {"synth.background_min",
       [](RunConfig& c, auto k, auto v) { c.synth.background_min = cfg_number(k, v); }},
      {"synth.background_max",
       [](RunConfig& c, auto k, auto v) { c.synth.background_max = cfg_number(k, v); }},
      {"synth.speckle_strength",
       [](RunConfig& c, auto k, auto v) { c.synth.speckle_strength = cfg_number(k, v); }},
      {"synth.speckle_scale", [](RunConfig& c, auto k, auto v) { c.synth.speckle_scale = cfg_number(k, v); }},
      {"synth.blur_sigma", [](RunConfig& c, auto k, auto v) { c.synth.blur_sigma = cfg_number(k, v); }},
      {"synth.gap", [](RunConfig& c, auto k, auto v) { c.synth.gap = cfg_number(k, v); }},
      {"synth.profile",
       [](RunConfig& c, auto k, std::string_view v) {
         if (v == "cosine") c.synth.profile = FringeProfile::cosine;
         else if (v == "bessel") c.synth.profile = FringeProfile::bessel;
         else throw ConfigError(std::string(k) + ": expected cosine or bessel");
       }},
      {"run.seed",
       [](RunConfig& c, auto k, std::string_view v) {
         std::uint64_t s;
         auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
         if (ec != std::errc() || p != v.data() + v.size())
           throw ConfigError(std::string(k) + ": not an unsigned integer");
         c.seed = s;
       }},
      {"run.threads", [](RunConfig& c, auto k, auto v) { c.threads = cfg_int(k, v); }},
      {"server.port", [](RunConfig& c, auto k, auto v) { c.port = cfg_int(k, v); }},
      {"server.predictor",
       [](RunConfig& c, auto k, std::string_view v) {
         if (v == "classical") c.predictor = PredictorKind::classical;
         else if (v == "file") c.predictor = PredictorKind::file;
         else throw ConfigError(std::string(k) + ": expected classical or file");
       }},
      {"paths.data_dir", [](RunConfig& c, auto, std::string_view v) { c.data_dir = std::string(v); }},
  };
  return table;
}

}  // namespace detail

/// Apply one `section.key = value` setting.
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = detail::config_setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(cfg, key, value);
}

/// Apply a config document onto cfg. Blank lines and lines starting with
/// '#' are ignored.
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
  detail::for_each_line(text, [&](std::size_t ln, std::string_view line) {
    line = detail::trim(line);
    if (line.empty() || line.front() == '#') return;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(ln) + ": expected 'section.key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
      apply_setting(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(ln) + ": " + e.what());
    }
  });
}

/// Reject settings no module can run with.
inline void validate(const RunConfig& cfg) {
  validate(cfg.detector);
  validate(cfg.track);
  if (cfg.rings.crop_size < 32) throw ConfigError("rings.crop_size must be >= 32");
  if (cfg.rings.spokes < 4 || cfg.rings.samples < 32)
    throw ConfigError("rings.spokes must be >= 4 and rings.samples >= 32");
  if (!(cfg.bin > 0)) throw ConfigError("eval.bin must be > 0");
  if (cfg.threads < 0) throw ConfigError("run.threads must be >= 0");
  if (cfg.port < 0 || cfg.port > 65535) throw ConfigError("server.port out of range");
}

}  // namespace fringe
