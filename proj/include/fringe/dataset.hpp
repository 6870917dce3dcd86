#pragma once

// On-disk dataset layout, seeded dataset rendering and a deterministic
// per-frame parallel loop.
//
//   <root>/images/<frame>.png
//   <root>/annotations.csv
//   <root>/manifest.json
//   <root>/predictions.csv, <root>/maps/<stem>.png + <stem>.json

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fringe/annot.hpp"
#include "fringe/png_io.hpp"
#include "fringe/synth.hpp"

namespace fringe {

namespace fs = std::filesystem;

struct DatasetPaths {
  fs::path root;
  fs::path images() const { return root / "images"; }
  fs::path annotations() const { return root / "annotations.csv"; }
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path predictions() const { return root / "predictions.csv"; }
  fs::path maps() const { return root / "maps"; }
};

/// Run fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; results must be written to per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.png", index);
  return buf;
}

/// Per-frame seed derived from the dataset seed (splitmix64 step).
inline std::uint64_t frame_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> files;
  std::vector<std::uint64_t> seeds;
};

inline std::string manifest_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["count"] = m.files.size();
  j["files"] = m.files;
  j["seeds"] = m.seeds;
  return j.dump(2) + "\n";
}

/// Sorted PNG file names in a directory (not recursive).
inline std::vector<std::string> list_pngs(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

/// Render `count` random frames into a dataset directory. Frames without
/// antinodes are listed in the manifest but have no annotation rows.
inline DatasetManifest render_dataset(const FrameSampler& sampler, std::size_t count,
                                      std::uint64_t seed, const fs::path& root,
                                      unsigned threads = 0) {
  const DatasetPaths paths{root};
  fs::create_directories(paths.images());
  DatasetManifest m;
  m.seed = seed;
  std::vector<FrameRecord> truth(count);
  for (std::size_t i = 0; i < count; ++i) {
    m.files.push_back(frame_name(i));
    m.seeds.push_back(frame_seed(seed, i));
  }
  parallel_for(
      count,
      [&](std::size_t i) {
        const auto frame = render_frame(sample_frame(sampler, m.seeds[i], m.files[i]));
        write_file(paths.images() / m.files[i], encode_png8(frame.image));
        truth[i] = frame.truth;
      },
      threads);
  std::erase_if(truth, [](const FrameRecord& r) { return r.annotations.empty(); });
  write_file(paths.annotations(), write_annotations(truth));
  write_file(paths.manifest(), manifest_json(m));
  return m;
}

}  // namespace fringe
