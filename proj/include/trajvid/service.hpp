#pragma once

// Generation job service: content-addressed asset store, a persisted job
// store, a worker pool and the HTTP routes on top of them.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "trajvid/checkpoint.hpp"
#include "trajvid/image.hpp"
#include "trajvid/sampler.hpp"
#include "trajvid/synthgen.hpp"
#include "trajvid/triplet.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace trajvid {

inline std::string sha256_hex(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

inline void write_atomic(const std::filesystem::path& p, const std::string& bytes) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

// HTTP-flavoured error: status code plus a JSON body.
struct ServiceError : std::runtime_error {
  int status;
  nlohmann::json body;
  ServiceError(int s, const std::string& msg, nlohmann::json b = nullptr)
      : std::runtime_error(msg), status(s), body(b.is_null() ? nlohmann::json{{"error", msg}} : std::move(b)) {}
};

// ---------------------------------------------------------------------------
// Assets

class AssetStore {
 public:
  AssetStore(std::filesystem::path root, std::size_t max_bytes)
      : dir_(std::move(root) / "assets"), max_bytes_(max_bytes) {
    std::filesystem::create_directories(dir_);
  }

  std::size_t max_bytes() const { return max_bytes_; }

  // Uploads accept PNG only.
  std::string upload(const std::string& bytes) {
    if (bytes.size() > max_bytes_) throw ServiceError(413, "asset exceeds " + std::to_string(max_bytes_) + " bytes");
    const std::vector<std::uint8_t> v(bytes.begin(), bytes.end());
    if (bytes.empty() || !is_png(v.data(), v.size())) throw ServiceError(415, "unsupported format: only PNG is accepted");
    try {
      decode_png(v);
    } catch (const ImageIoError& e) {
      throw ServiceError(415, std::string("undecodable PNG: ") + e.what());
    }
    return put(bytes, "png");
  }

  // Internal results (frames, manifests).
  std::string put(const std::string& bytes, const std::string& ext) {
    const auto id = sha256_hex(bytes);
    std::lock_guard<std::mutex> lk(mu_);
    const auto p = dir_ / (id + "." + ext);
    if (!std::filesystem::exists(p)) write_atomic(p, bytes);
    return id;
  }

  struct Blob {
    std::string bytes;
    std::string content_type;
  };

  std::optional<Blob> get(const std::string& id) const {
    if (id.size() != 64 || id.find_first_not_of("0123456789abcdef") != std::string::npos) return std::nullopt;
    for (const auto& [ext, type] : {std::pair{"png", "image/png"}, std::pair{"json", "application/json"}}) {
      const auto p = dir_ / (id + "." + ext);
      std::ifstream in(p, std::ios::binary);
      if (!in) continue;
      std::ostringstream ss;
      ss << in.rdbuf();
      return Blob{ss.str(), type};
    }
    return std::nullopt;
  }

  bool exists(const std::string& id) const { return get(id).has_value(); }

  std::optional<Image> image(const std::string& id) const {
    const auto b = get(id);
    if (!b || b->content_type != "image/png") return std::nullopt;
    return decode_png(std::vector<std::uint8_t>(b->bytes.begin(), b->bytes.end()));
  }

 private:
  std::filesystem::path dir_;
  std::size_t max_bytes_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Jobs

enum class JobStatus { kQueued, kRunning, kDone, kFailed };

inline const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "queued";
}

inline JobStatus job_status_from_string(const std::string& s) {
  if (s == "queued") return JobStatus::kQueued;
  if (s == "running") return JobStatus::kRunning;
  if (s == "done") return JobStatus::kDone;
  if (s == "failed") return JobStatus::kFailed;
  throw std::invalid_argument("unknown job status '" + s + "'");
}

struct GenerationJob {
  std::string job_id;
  nlohmann::json request;
  std::string idempotency_key;
  std::string request_hash;
  JobStatus status = JobStatus::kQueued;
  double progress = 0.0;
  std::string result_ref;
  std::string error_msg;
};

inline nlohmann::json job_to_json(const GenerationJob& j) {
  return {{"job_id", j.job_id},
          {"request", j.request},
          {"idempotency_key", j.idempotency_key},
          {"request_hash", j.request_hash},
          {"status", to_string(j.status)},
          {"progress", j.progress},
          {"result_ref", j.result_ref},
          {"error_msg", j.error_msg}};
}

inline GenerationJob job_from_json(const nlohmann::json& j) {
  GenerationJob g;
  g.job_id = j.at("job_id").get<std::string>();
  g.request = j.at("request");
  g.idempotency_key = j.value("idempotency_key", std::string());
  g.request_hash = j.value("request_hash", std::string());
  g.status = job_status_from_string(j.at("status").get<std::string>());
  g.progress = j.value("progress", 0.0);
  g.result_ref = j.value("result_ref", std::string());
  g.error_msg = j.value("error_msg", std::string());
  return g;
}

// Public view returned by GET /jobs/{id}.
inline nlohmann::json job_view(const GenerationJob& j) {
  nlohmann::json v = {{"job_id", j.job_id}, {"status", to_string(j.status)}, {"progress", j.progress}};
  if (j.status == JobStatus::kDone) v["result_ref"] = j.result_ref;
  if (j.status == JobStatus::kFailed) v["error_msg"] = j.error_msg;
  return v;
}

// All jobs in one JSON file, rewritten atomically on every change. On load,
// jobs that were running are queued again.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path root) : path_(std::move(root) / "jobs.json") {
    std::filesystem::create_directories(path_.parent_path());
    std::ifstream in(path_);
    if (in) {
      const auto j = nlohmann::json::parse(in);
      for (const auto& e : j.at("jobs")) {
        auto job = job_from_json(e);
        if (job.status == JobStatus::kRunning) {
          job.status = JobStatus::kQueued;
          job.progress = 0.0;
        }
        order_.push_back(job.job_id);
        jobs_.emplace(job.job_id, std::move(job));
      }
      counter_ = j.value("counter", std::uint64_t{0});
      persist_locked();
    }
  }

  struct Submitted {
    GenerationJob job;
    bool created;
  };

  // Creates a queued job, or returns the existing one for a repeated
  // idempotency key with the same request. A different request under the
  // same key is a conflict (409).
  Submitted submit(const nlohmann::json& request, const std::string& idem_key) {
    const auto hash = sha256_hex(request.dump());
    std::lock_guard<std::mutex> lk(mu_);
    if (!idem_key.empty())
      for (const auto& [id, j] : jobs_)
        if (j.idempotency_key == idem_key) {
          if (j.request_hash != hash)
            throw ServiceError(409, "idempotency key '" + idem_key + "' was used with a different request");
          return {j, false};
        }
    GenerationJob j;
    char buf[32];
    std::snprintf(buf, sizeof buf, "job_%06llu_", static_cast<unsigned long long>(++counter_));
    j.job_id = buf + hash.substr(0, 12);
    j.request = request;
    j.idempotency_key = idem_key;
    j.request_hash = hash;
    order_.push_back(j.job_id);
    jobs_.emplace(j.job_id, j);
    persist_locked();
    cv_.notify_all();
    return {j, true};
  }

  std::optional<GenerationJob> get(const std::string& id) const {
    std::lock_guard<std::mutex> lk(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  // Blocks until a queued job exists (or stop), marks it running.
  std::optional<GenerationJob> claim(const std::atomic<bool>& stop) {
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
      if (stop) return std::nullopt;
      for (const auto& id : order_) {
        auto& j = jobs_.at(id);
        if (j.status == JobStatus::kQueued) {
          j.status = JobStatus::kRunning;
          j.progress = 0.0;
          persist_locked();
          return j;
        }
      }
      cv_.wait_for(lk, std::chrono::milliseconds(200));
    }
  }

  void progress(const std::string& id, double p) {
    std::lock_guard<std::mutex> lk(mu_);
    auto& j = jobs_.at(id);
    if (j.status != JobStatus::kRunning) return;
    j.progress = p;
    persist_locked();
  }

  void finish(const std::string& id, const std::string& result_ref) {
    std::lock_guard<std::mutex> lk(mu_);
    auto& j = jobs_.at(id);
    if (j.status != JobStatus::kRunning) throw std::logic_error("finish on a job that is not running");
    j.status = JobStatus::kDone;
    j.progress = 1.0;
    j.result_ref = result_ref;
    persist_locked();
  }

  void fail(const std::string& id, std::string msg) {
    std::lock_guard<std::mutex> lk(mu_);
    auto& j = jobs_.at(id);
    if (j.status != JobStatus::kRunning) throw std::logic_error("fail on a job that is not running");
    j.status = JobStatus::kFailed;
    j.error_msg = msg.empty() ? "unknown error" : std::move(msg);
    persist_locked();
  }

  void wake() { cv_.notify_all(); }

  std::size_t size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return jobs_.size();
  }

 private:
  void persist_locked() {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& id : order_) arr.push_back(job_to_json(jobs_.at(id)));
    write_atomic(path_, nlohmann::json{{"counter", counter_}, {"jobs", std::move(arr)}}.dump());
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, GenerationJob> jobs_;
  std::vector<std::string> order_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Generation (shared by the CLI and the worker)

struct GenerationRequest {
  MultimodalTriplet triplet;
  std::string first_frame;   // asset id, or empty when a preset is used
  std::string scene_preset;  // "gray" | "checker"
  int steps = 10;
  std::uint64_t seed = 0;
};

// Background-only first frames for requests without an uploaded image.
inline Image scene_preset_frame(const std::string& name, FrameSize fs) {
  Background bg;
  if (name == "gray") {
    bg.a = {128, 128, 128};
  } else if (name == "checker") {
    bg.kind = Background::Kind::kChecker;
    bg.a = {110, 110, 110};
    bg.b = {140, 140, 140};
    bg.cell = 8;
  } else {
    throw ServiceError(400, "unknown scene preset '" + name + "'");
  }
  Image img(fs.width, fs.height);
  for (int y = 0; y < fs.height; ++y)
    for (int x = 0; x < fs.width; ++x) img.set(x, y, bg.at(x, y));
  return img;
}

// Parses and validates a request body. Throws ServiceError with the
// ValidationReport as the body for invalid triplets.
inline GenerationRequest parse_generation_request(const nlohmann::json& body) {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  GenerationRequest r;
  if (!body.contains("triplet")) throw ServiceError(400, "missing 'triplet'");
  try {
    r.triplet = triplet_from_json(body.at("triplet"));
  } catch (const TripletError& e) {
    if (e.kind() == TripletError::Kind::kInvalid) throw ServiceError(400, e.what(), e.report().to_json());
    throw ServiceError(400, e.what());
  }
  r.first_frame = body.value("first_frame", std::string());
  r.scene_preset = body.value("scene_preset", std::string());
  if (r.first_frame.empty() == r.scene_preset.empty())
    throw ServiceError(400, "exactly one of 'first_frame' and 'scene_preset' is required");
  r.steps = body.value("steps", 10);
  if (r.steps < 1 || r.steps > 1000) throw ServiceError(400, "steps must be in [1, 1000]");
  r.seed = body.value("seed", std::uint64_t{0});
  return r;
}

struct GenerationOutput {
  std::vector<Image> frames;
};

// Runs the sampler for a request whose assets come from `lookup`.
inline GenerationOutput run_generation(const Model<float>& model, const GenerationRequest& r, const Image& first_frame,
                                       const AssetLookup& lookup, const ProgressFn& progress = nullptr) {
  const auto g = grid_for(r.triplet, model.config().grid.spatial_stride, model.config().grid.temporal_stride);
  if (!(g == model.config().grid))
    throw std::runtime_error("triplet frame size / length does not match the loaded model (" +
                             std::to_string(model.config().grid.num_frames) + " frames of " +
                             std::to_string(model.config().grid.width) + "x" +
                             std::to_string(model.config().grid.height) + ")");
  return {sample(model, r.triplet, first_frame, lookup, r.steps, r.seed, progress).frames};
}

// ---------------------------------------------------------------------------
// Service

struct ServiceConfig {
  std::filesystem::path data_dir = "canvas_data";
  std::size_t max_asset_bytes = 8u << 20;
  int workers = 1;
};

// Store root: CANVAS_DATA_DIR when set, else the given default.
inline std::filesystem::path resolve_data_dir(const std::filesystem::path& fallback) {
  const char* env = std::getenv("CANVAS_DATA_DIR");
  return env && *env ? std::filesystem::path(env) : fallback;
}

class Service {
 public:
  Service(ServiceConfig cfg, Model<float> model)
      : cfg_(std::move(cfg)), assets_(cfg_.data_dir, cfg_.max_asset_bytes), jobs_(cfg_.data_dir), model_(std::move(model)) {}

  ~Service() { stop(); }

  AssetStore& assets() { return assets_; }
  JobStore& jobs() { return jobs_; }
  const Model<float>& model() const { return model_; }

  void start() {
    stop_ = false;
    for (int i = 0; i < std::max(1, cfg_.workers); ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  void stop() {
    stop_ = true;
    jobs_.wake();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

  // Returns (job view, created).
  std::pair<nlohmann::json, bool> submit(const nlohmann::json& body, std::string idem_key = {}) {
    const auto req = parse_generation_request(body);
    if (!req.first_frame.empty() && !assets_.image(req.first_frame))
      throw ServiceError(404, "first_frame asset '" + req.first_frame + "' not found");
    for (const auto& ref : req.triplet.references)
      if (!assets_.image(ref.image_ref)) throw ServiceError(404, "reference asset '" + ref.image_ref + "' not found");
    if (idem_key.empty()) idem_key = body.value("idempotency_key", std::string());
    auto s = jobs_.submit(body, idem_key);
    return {job_view(s.job), s.created};
  }

  nlohmann::json status(const std::string& id) const {
    const auto j = jobs_.get(id);
    if (!j) throw ServiceError(404, "unknown job '" + id + "'");
    return job_view(*j);
  }

  nlohmann::json result(const std::string& id) const {
    const auto j = jobs_.get(id);
    if (!j) throw ServiceError(404, "unknown job '" + id + "'");
    if (j->status != JobStatus::kDone) throw ServiceError(409, "job '" + id + "' is " + to_string(j->status));
    const auto blob = assets_.get(j->result_ref);
    if (!blob) throw ServiceError(500, "result asset missing");
    return nlohmann::json::parse(blob->bytes);
  }

  nlohmann::json config_json() const {
    return {{"model", config_to_json(model_.config())},
            {"channel_contract", kChannelContract},
            {"max_asset_bytes", cfg_.max_asset_bytes},
            {"workers", cfg_.workers},
            {"scene_presets", {"gray", "checker"}},
            {"data_dir", cfg_.data_dir.string()}};
  }

  // Executes one job synchronously; used by workers.
  void execute(const GenerationJob& job) {
    try {
      const auto req = parse_generation_request(job.request);
      Image first;
      if (!req.first_frame.empty()) {
        auto img = assets_.image(req.first_frame);
        if (!img) throw std::runtime_error("first_frame asset disappeared");
        first = std::move(*img);
      } else {
        first = scene_preset_frame(req.scene_preset, req.triplet.frame_size);
      }
      std::map<std::string, Image> refs;
      for (const auto& r : req.triplet.references)
        if (auto img = assets_.image(r.image_ref)) refs.emplace(r.image_ref, std::move(*img));
      const auto out = run_generation(model_, req, first, map_lookup(refs), [&](int s, int n) {
        jobs_.progress(job.job_id, 0.95 * s / n);
      });
      nlohmann::json frames = nlohmann::json::array();
      for (const auto& f : out.frames) {
        const auto png = encode_png(f);
        frames.push_back(assets_.put(std::string(png.begin(), png.end()), "png"));
      }
      const nlohmann::json manifest = {{"job_id", job.job_id},
                                       {"num_frames", out.frames.size()},
                                       {"width", req.triplet.frame_size.width},
                                       {"height", req.triplet.frame_size.height},
                                       {"format", "png-frames"},
                                       {"frames", std::move(frames)}};
      jobs_.finish(job.job_id, assets_.put(manifest.dump(2), "json"));
    } catch (const ServiceError& e) {
      jobs_.fail(job.job_id, e.what());
    } catch (const std::exception& e) {
      jobs_.fail(job.job_id, e.what());
    }
  }

 private:
  void worker_loop() {
    while (!stop_) {
      auto j = jobs_.claim(stop_);
      if (!j) return;
      execute(*j);
    }
  }

  ServiceConfig cfg_;
  AssetStore assets_;
  JobStore jobs_;
  Model<float> model_;
  std::atomic<bool> stop_{false};
  std::vector<std::thread> workers_;
};

// ---------------------------------------------------------------------------
// HTTP

inline void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    reply(res, e.status, e.body);
  } catch (const nlohmann::json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

inline void install_routes(httplib::Server& srv, Service& svc) {
  srv.set_payload_max_length(svc.assets().max_bytes() + 1024);

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

  srv.Get("/config", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, svc.config_json()); });
  });

  srv.Post("/assets", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto id = svc.assets().upload(req.body);
      reply(res, 201, {{"asset_id", id}, {"kind", req.has_param("kind") ? req.get_param_value("kind") : "image"}});
    });
  });

  srv.Get(R"(/assets/([0-9a-f]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto blob = svc.assets().get(req.matches[1]);
      if (!blob) throw ServiceError(404, "unknown asset");
      res.status = 200;
      res.set_content(blob->bytes, blob->content_type);
    });
  });

  srv.Post("/jobs/generate", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      const auto [view, created] = svc.submit(body, req.get_header_value("Idempotency-Key"));
      reply(res, created ? 202 : 200, view);
    });
  });

  srv.Get(R"(/jobs/([A-Za-z0-9_]+)/result)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, svc.result(req.matches[1])); });
  });

  srv.Get(R"(/jobs/([A-Za-z0-9_]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, svc.status(req.matches[1])); });
  });
}

}  // namespace trajvid
