#pragma once

// HTTP/JSON service for annotation curation: frames, annotations,
// predictions and a loss-ordered review queue, with optimistic-concurrency
// edits and a background recompute job.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fringe/annot.hpp"
#include "fringe/dataset.hpp"
#include "fringe/eval.hpp"
#include "fringe/predict.hpp"
#include "fringe/segmap.hpp"

namespace fringe {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// JSON mirrors

inline json to_json(const EllipseAnnotation& e) {
  return json{{"cx", e.cx}, {"cy", e.cy}, {"a", e.a}, {"b", e.b}, {"theta", e.theta}, {"rings", e.rings}};
}

inline json to_json(const FrameRecord& r) {
  json anns = json::array();
  for (const auto& e : r.annotations) anns.push_back(to_json(e));
  return json{{"frame_id", r.frame_id}, {"annotations", anns}};
}

inline json to_json(const Detection& d) {
  return json{{"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}},
              {"score", d.score},
              {"rings", d.ellipse.rings},
              {"ellipse", to_json(d.ellipse)}};
}

inline json to_json(const FieldError& e) { return json{{"field", e.field}, {"message", e.message}}; }

/// Parse a FrameRecord body. Structural problems are reported as field
/// errors alongside invariant violations.
inline std::pair<FrameRecord, std::vector<FieldError>> frame_record_from_json(const json& j,
                                                                            const std::string& id) {
  FrameRecord r{id, {}};
  std::vector<FieldError> errs;
  if (!j.is_object()) return {r, {{"body", "expected a JSON object"}}};
  if (j.contains("frame_id")) {
    if (!j["frame_id"].is_string() || j["frame_id"].get<std::string>() != id)
      errs.push_back({"frame_id", "does not match the frame in the URL"});
  }
  if (!j.contains("annotations") || !j["annotations"].is_array()) {
    errs.push_back({"annotations", "expected an array"});
    return {r, errs};
  }
  static constexpr const char* kFields[] = {"cx", "cy", "a", "b", "theta", "rings"};
  const auto& arr = j["annotations"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string pre = "annotations[" + std::to_string(i) + "].";
    if (!arr[i].is_object()) {
      errs.push_back({"annotations[" + std::to_string(i) + "]", "expected an object"});
      continue;
    }
    double v[6] = {};
    bool ok = true;
    for (int f = 0; f < 6; ++f) {
      if (!arr[i].contains(kFields[f]) || !arr[i][kFields[f]].is_number()) {
        errs.push_back({pre + kFields[f], "missing or not a number"});
        ok = false;
      } else {
        v[f] = arr[i][kFields[f]].get<double>();
      }
    }
    if (ok) r.annotations.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
  }
  if (errs.empty()) {
    for (auto& e : validate(r)) errs.push_back(std::move(e));
  }
  return {r, errs};
}

// ---------------------------------------------------------------------------
// Session store

struct JobState {
  std::string status = "queued";  // queued, running, done, failed
  double progress = 0;
  std::string error;
};

/// Dataset state shared by request handlers. Reads take a shared lock;
/// writes and job results are applied under an exclusive lock.
class SessionStore {
 public:
  SessionStore(fs::path data_dir, std::shared_ptr<Predictor> predictor, LossWeights weights = {})
      : paths_{std::move(data_dir)}, predictor_(std::move(predictor)), weights_(weights) {}

  ~SessionStore() { join(); }

  /// Read annotations, image list and any existing predictions; compute losses.
  void load() {
    std::vector<std::string> ids;
    if (fs::is_directory(paths_.images())) ids = list_pngs(paths_.images());
    std::map<std::string, FrameRecord> ann;
    if (fs::exists(paths_.annotations())) {
      for (auto& r : parse_annotations(read_file(paths_.annotations()))) ann[r.frame_id] = std::move(r);
    }
    for (const auto& [id, _] : ann)
      if (!std::binary_search(ids.begin(), ids.end(), id)) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    FrameDetections preds;
    if (fs::exists(paths_.predictions()))
      preds = detections_by_frame(parse_predictions(read_file(paths_.predictions())));
    std::unique_lock lock(mu_);
    frames_ = std::move(ids);
    annotations_ = std::move(ann);
    predictions_ = std::move(preds);
    losses_ = compute_losses();
    loaded_ = true;
  }

  /// load() on a background thread; failures are kept for /api responses.
  void load_async() {
    loader_ = std::thread([this] {
      try {
        load();
      } catch (const std::exception& e) {
        std::unique_lock lock(mu_);
        load_error_ = e.what();
      }
    });
  }

  bool loaded() const {
    std::shared_lock lock(mu_);
    return loaded_;
  }
  std::string load_error() const {
    std::shared_lock lock(mu_);
    return load_error_;
  }
  std::uint64_t revision() const {
    std::shared_lock lock(mu_);
    return revision_;
  }
  bool has_frame(const std::string& id) const {
    std::shared_lock lock(mu_);
    return std::binary_search(frames_.begin(), frames_.end(), id);
  }
  fs::path image_path(const std::string& id) const { return paths_.images() / id; }
  const DatasetPaths& paths() const { return paths_; }

  FrameRecord annotations(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = annotations_.find(id);
    return it == annotations_.end() ? FrameRecord{id, {}} : it->second;
  }

  std::vector<Detection> predictions(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = predictions_.find(id);
    return it == predictions_.end() ? std::vector<Detection>{} : it->second;
  }

  LossRanking queue() const {
    std::shared_lock lock(mu_);
    return losses_;
  }

  struct PutOutcome {
    enum Kind { ok, conflict, invalid } kind = ok;
    std::uint64_t revision = 0;
    std::vector<FieldError> errors;
    FrameRecord stored;
  };

  /// Replace one frame's annotations and rewrite the CSV atomically. Values
  /// are stored as they read back from the CSV.
  PutOutcome put_annotations(FrameRecord rec, std::optional<std::uint64_t> if_match) {
    PutOutcome out;
    out.errors = validate(rec);
    if (!out.errors.empty()) {
      out.kind = PutOutcome::invalid;
      return out;
    }
    std::unique_lock lock(mu_);
    if (if_match && *if_match != revision_) {
      out.kind = PutOutcome::conflict;
      out.revision = revision_;
      return out;
    }
    if (!rec.annotations.empty()) {
      rec = parse_annotations(write_annotations({rec})).front();
    }
    auto next = annotations_;
    if (rec.annotations.empty()) next.erase(rec.frame_id);
    else next[rec.frame_id] = rec;
    std::vector<FrameRecord> all;
    for (const auto& [id, r] : next) all.push_back(r);
    write_file_atomic(paths_.annotations(), write_annotations(all));
    annotations_ = std::move(next);
    out.revision = ++revision_;
    out.stored = rec;
    return out;
  }

  /// Start a recompute job unless one is active. Returns the job id.
  std::optional<std::string> start_recompute() {
    std::lock_guard jl(job_mu_);
    if (active_job_) return std::nullopt;
    join();
    const std::string id = std::to_string(++job_counter_);
    jobs_[id] = JobState{};
    active_job_ = true;
    worker_ = std::thread([this, id] { run_job(id); });
    return id;
  }

  std::optional<JobState> job(const std::string& id) const {
    std::lock_guard jl(job_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  void join() {
    if (worker_.joinable() && worker_.get_id() != std::this_thread::get_id()) worker_.join();
    if (loader_.joinable()) loader_.join();
  }

  bool writes_predictions = false;  // persist recomputed predictions and maps
  unsigned threads = 0;

 private:
  LossRanking compute_losses() const {
    FrameTruths truths;
    for (const auto& [id, r] : annotations_) truths[id] = r.annotations;
    FrameDetections preds;
    for (const auto& id : frames_) {
      auto it = predictions_.find(id);
      preds[id] = it == predictions_.end() ? std::vector<Detection>{} : it->second;
    }
    return rank_by_loss(truths, preds, weights_);
  }

  void set_job(const std::string& id, const char* status, double progress, std::string err = {}) {
    std::lock_guard jl(job_mu_);
    auto& j = jobs_[id];
    j.status = status;
    j.progress = progress;
    j.error = std::move(err);
    if (j.status == "done" || j.status == "failed") active_job_ = false;
  }

  void run_job(const std::string& id) {
    try {
      set_job(id, "running", 0);
      std::vector<std::string> frames;
      {
        std::shared_lock lock(mu_);
        frames = frames_;
      }
      predictor_->prepare();
      std::vector<std::vector<Detection>> results(frames.size());
      std::atomic<std::size_t> finished{0};
      parallel_for(
          frames.size(),
          [&](std::size_t i) {
            results[i] = predictor_->predict(frames[i], image_path(frames[i]));
            const double p = static_cast<double>(++finished) / frames.size();
            std::lock_guard jl(job_mu_);
            jobs_[id].progress = std::max(jobs_[id].progress, p);
          },
          threads);
      FrameDetections preds;
      std::vector<FramePredictions> rows;
      for (std::size_t i = 0; i < frames.size(); ++i) {
        preds[frames[i]] = results[i];
        rows.emplace_back(frames[i], results[i]);
      }
      if (writes_predictions) persist(rows);
      {
        std::unique_lock lock(mu_);
        predictions_ = std::move(preds);
        losses_ = compute_losses();
      }
      set_job(id, "done", 1.0);
    } catch (const std::exception& e) {
      set_job(id, "failed", 0, e.what());
    }
  }

  void persist(const std::vector<FramePredictions>& rows) {
    fs::create_directories(paths_.maps());
    for (const auto& [frame, dets] : rows) {
      const auto dims = image_dims(image_path(frame));
      if (!dims) continue;
      const auto stem = fs::path(frame).stem().string();
      write_file_atomic(paths_.maps() / (stem + ".png"),
                        encode_ring_map(paint_detections(dets, dims->first, dims->second)));
      write_file_atomic(paths_.maps() / (stem + ".json"), ring_map_sidecar());
    }
    write_file_atomic(paths_.predictions(), write_predictions(rows));
  }

  static std::optional<std::pair<int, int>> image_dims(const fs::path& p) {
    try {
      const auto img = read_png(p);
      return std::pair{img.width(), img.height()};
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  DatasetPaths paths_;
  std::shared_ptr<Predictor> predictor_;
  LossWeights weights_;

  mutable std::shared_mutex mu_;
  bool loaded_ = false;
  std::string load_error_;
  std::uint64_t revision_ = 0;
  std::vector<std::string> frames_;  // sorted
  std::map<std::string, FrameRecord> annotations_;
  FrameDetections predictions_;
  LossRanking losses_;

  mutable std::mutex job_mu_;
  std::map<std::string, JobState> jobs_;
  std::uint64_t job_counter_ = 0;
  bool active_job_ = false;
  std::thread worker_;
  std::thread loader_;
};

// ---------------------------------------------------------------------------
// HTTP routes

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, json{{"error", msg}});
}

inline std::optional<std::uint64_t> parse_revision(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  std::uint64_t r;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
  if (ec != std::errc() || p != v.data() + v.size()) return std::nullopt;
  return r;
}

}  // namespace detail

/// Register all API routes on `srv`.
inline void install_routes(httplib::Server& srv, std::shared_ptr<SessionStore> store) {
  using httplib::Request;
  using httplib::Response;
  using detail::send_error;
  using detail::send_json;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type, If-Match"},
                           {"Access-Control-Expose-Headers", "ETag"}});
  srv.Options(R"(/api/.*)", [](const Request&, Response& res) { res.status = 204; });

  // Returns false (and answers) when the store cannot serve yet.
  auto ready = [store](Response& res) {
    if (store->loaded()) return true;
    const auto err = store->load_error();
    send_error(res, 503, err.empty() ? "dataset is loading" : "dataset failed to load: " + err);
    return false;
  };
  auto known = [store](const std::string& id, Response& res) {
    if (store->has_frame(id)) return true;
    send_error(res, 404, "unknown frame '" + id + "'");
    return false;
  };

  srv.Get("/api/queue", [store, ready](const Request& req, Response& res) {
    if (!ready(res)) return;
    if (req.has_param("order") && req.get_param_value("order") != "loss_desc") {
      send_error(res, 400, "unsupported order '" + req.get_param_value("order") + "'");
      return;
    }
    json out = json::array();
    for (const auto& e : store->queue().entries) out.push_back({{"frame_id", e.frame_id}, {"loss", e.loss}});
    send_json(res, 200, out);
  });

  srv.Get(R"(/api/frames/([^/]+)/image)", [store, ready, known](const Request& req, Response& res) {
    if (!ready(res)) return;
    const std::string id = req.matches[1];
    if (!known(id, res)) return;
    try {
      res.set_content(read_file(store->image_path(id)), "image/png");
    } catch (const std::exception&) {
      send_error(res, 404, "no image for frame '" + id + "'");
    }
  });

  srv.Get(R"(/api/frames/([^/]+)/annotations)", [store, ready, known](const Request& req, Response& res) {
    if (!ready(res)) return;
    const std::string id = req.matches[1];
    if (!known(id, res)) return;
    res.set_header("ETag", std::to_string(store->revision()));
    send_json(res, 200, to_json(store->annotations(id)));
  });

  srv.Get(R"(/api/frames/([^/]+)/predictions)", [store, ready, known](const Request& req, Response& res) {
    if (!ready(res)) return;
    const std::string id = req.matches[1];
    if (!known(id, res)) return;
    json dets = json::array();
    for (const auto& d : store->predictions(id)) dets.push_back(to_json(d));
    json body{{"detections", dets}};
    const auto stem = fs::path(id).stem().string();
    if (fs::exists(store->paths().maps() / (stem + ".png"))) body["map_url"] = "/maps/" + stem + ".png";
    send_json(res, 200, body);
  });

  srv.Put(R"(/api/frames/([^/]+)/annotations)", [store, ready, known](const Request& req, Response& res) {
    if (!ready(res)) return;
    const std::string id = req.matches[1];
    if (!known(id, res)) return;
    std::optional<std::uint64_t> if_match;
    if (req.has_header("If-Match")) {
      if_match = detail::parse_revision(req.get_header_value("If-Match"));
      if (!if_match) {
        send_error(res, 400, "If-Match must be a revision number");
        return;
      }
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      send_json(res, 422, json{{"error", "invalid JSON"}, {"errors", {to_json(FieldError{"body", e.what()})}}});
      return;
    }
    auto [rec, errs] = frame_record_from_json(body, id);
    if (!errs.empty()) {
      json arr = json::array();
      for (const auto& e : errs) arr.push_back(to_json(e));
      send_json(res, 422, json{{"error", "validation failed"}, {"errors", arr}});
      return;
    }
    try {
      const auto out = store->put_annotations(std::move(rec), if_match);
      if (out.kind == SessionStore::PutOutcome::conflict) {
        send_json(res, 409, json{{"error", "stale revision"}, {"revision", out.revision}});
        return;
      }
      if (out.kind == SessionStore::PutOutcome::invalid) {
        json arr = json::array();
        for (const auto& e : out.errors) arr.push_back(to_json(e));
        send_json(res, 422, json{{"error", "validation failed"}, {"errors", arr}});
        return;
      }
      res.set_header("ETag", std::to_string(out.revision));
      send_json(res, 200, json{{"revision", out.revision}});
    } catch (const std::exception& e) {
      send_error(res, 500, std::string("write failed: ") + e.what());
    }
  });

  srv.Post("/api/recompute", [store, ready](const Request&, Response& res) {
    if (!ready(res)) return;
    const auto id = store->start_recompute();
    if (!id) {
      send_error(res, 409, "a recompute job is already active");
      return;
    }
    send_json(res, 202, json{{"job_id", *id}});
  });

  srv.Get(R"(/api/jobs/([^/]+))", [store](const Request& req, Response& res) {
    const auto job = store->job(req.matches[1]);
    if (!job) {
      send_error(res, 404, "unknown job");
      return;
    }
    json body{{"status", job->status}, {"progress", job->progress}};
    if (!job->error.empty()) body["error"] = job->error;
    send_json(res, 200, body);
  });

  std::error_code ec;
  fs::create_directories(store->paths().maps(), ec);
  srv.set_mount_point("/maps", store->paths().maps().string());
}

}  // namespace fringe
