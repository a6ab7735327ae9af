#pragma once

// Editing sessions over a loaded checkpoint. Each session keeps the latents,
// colors, flag, truncation and camera of one avatar plus a per-component
// cache of generator stages, so an edit regenerates only what it touches:
//
//   features  <- own w (own z or override, light latent, psi)
//   geometry  <- features, shape latent
//   colors    <- features, own histogram
//   glasses flag and camera: composition and render only
//
// Edits are JSON objects, e.g. {"op":"set_color","region":"hair","rgb":[0.1,0.8,0.2]}.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cosy/checkpoint.hpp"
#include "cosy/config.hpp"
#include "cosy/evalkit.hpp"
#include "cosy/generator.hpp"
#include "cosy/splat.hpp"

namespace cosy {

struct ServiceOptions {
    std::string addr = "127.0.0.1:8080";
    std::filesystem::path checkpoint_dir = ".";
    int max_sessions = 100;
    double psi = 0.8;

    static ServiceOptions from(const RunConfig& cfg);
};

/// Immutable weights shared by every session of one checkpoint.
struct LoadedModel {
    std::string name;
    RunConfig config;
    std::uint64_t content_digest = 0;  // fnv1a64 of the checkpoint bytes
    // forward() is non-const in libtorch; the weights are never written
    mutable Generator generator{nullptr};
    std::optional<PcaSidecar> pca;
    int resolution = 64;
};

/// Loads `path` and its optional "<path>.pca" sidecar. Throws
/// CheckpointInvalid on a bad checkpoint, a monolithic generator or a
/// sidecar computed for different bytes.
std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& path, const std::string& name);

/// Soft histogram of one color: per channel a Gaussian kernel (sigma half a
/// bin) over the ten bin centers, normalized to sum 1.
Histogram soft_histogram(const std::array<float, 3>& rgb);

struct OrbitParams {
    double yaw = 0.0, pitch = 0.0;
    double radius = OrbitDefaults::kRadius;
};

struct StageCounters {
    std::int64_t hits = 0;
    std::int64_t misses = 0;
};

struct CacheCounters {
    std::array<StageCounters, 4> features, geometry, colors;
};

struct Frame {
    std::uint32_t id = 0;
    int width = 0;
    int height = 0;
    std::vector<float> rgb;  // H*W*3, composited over white
    double latency_ms = 0.0;

    std::string png() const;
    /// 8-byte header (id u32, width u16, height u16, little-endian) + PNG.
    std::string stream_message() const;
};

/// Kind of an edit for the latency metrics.
enum class EditClass { Appearance, Latent, Camera };

class Session {
public:
    Session(std::string id, std::shared_ptr<const LoadedModel> model, std::uint64_t seed, double psi);

    /// Applies one edit object and renders. Throws Error(BadEdit).
    Frame apply(const nlohmann::json& edit);
    static EditClass classify(const nlohmann::json& edit);

    const std::string& id() const { return id_; }
    const Frame& frame() const { return frame_; }
    const ComposedScene& scene() const { return scene_; }
    std::string export_splat() const;
    /// Content hash of each component's (unhidden) Gaussian set.
    std::array<std::uint64_t, 4> content_hashes() const;
    const CacheCounters& counters() const { return counters_; }
    const ColorConditioning& labels() const { return labels_; }
    double psi() const { return psi_; }
    Camera camera() const;
    const LoadedModel& model() const { return *model_; }

    /// Serializes edits of this session.
    std::mutex mutex;

private:
    void refresh();
    void render_frame();
    torch::Tensor z_from(const nlohmann::json& edit, const char* what);
    void invalidate_features(int i);
    void invalidate_all_features();

    std::string id_;
    std::shared_ptr<const LoadedModel> model_;
    LatentBundle bundle_;
    std::array<std::optional<torch::Tensor>, 4> w_override_;  // [1, w_dim]
    ColorConditioning labels_;
    double psi_;
    OrbitParams orbit_;

    // caches
    std::array<torch::Tensor, 4> features_, geometry_, colors_;
    std::array<GaussianSet, 4> sets_;
    ComposedScene scene_;
    CacheCounters counters_;
    Frame frame_;
    std::uint32_t next_frame_ = 0;
};

struct LatencySummary {
    std::size_t count = 0;
    double median_ms = 0.0;
    double p90_ms = 0.0;
};

class EditService {
public:
    explicit EditService(ServiceOptions options);

    /// Loads a checkpoint from the checkpoint directory under `name`; the
    /// first one loaded becomes the default for new sessions.
    void load_checkpoint(const std::string& name);

    /// Creates a session; `checkpoint` empty selects the default model.
    std::shared_ptr<Session> create_session(std::uint64_t seed, const std::string& checkpoint = "");
    /// Throws Error(UnknownSession).
    std::shared_ptr<Session> session(const std::string& id) const;
    void close_session(const std::string& id);
    std::size_t session_count() const;

    /// Applies an edit under the session's lock and records its latency.
    Frame edit(const std::string& id, const nlohmann::json& edit);
    /// JSON view of the service-side latency metrics per edit class.
    nlohmann::json metrics() const;
    LatencySummary latency(EditClass c) const;
    const ServiceOptions& options() const { return options_; }

private:
    std::shared_ptr<const LoadedModel> model(const std::string& name);

    ServiceOptions options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
    std::string default_model_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_session_ = 1;
    std::array<std::vector<double>, 3> latencies_;
};

/// HTTP + WebSocket front end.
///   POST /session                 {"seed":1,"checkpoint":"name"} -> {"id","frame_id","width","height"}
///   POST /session/{id}/edit       edit object -> {"frame_id","latency_ms"}
///   GET  /session/{id}/frame      current frame as PNG
///   GET  /session/{id}/export     splat file
///   GET  /session/{id}/hashes     per-component content hashes and cache counters
///   DELETE /session/{id}
///   GET  /healthz, GET /metrics
///   WS   /session/{id}/stream     text edits in; binary frames and text acks out
class Server {
public:
    /// Binds immediately; port 0 picks a free port.
    Server(EditService& service, const std::string& addr);
    ~Server();
    std::uint16_t port() const;
    /// Serves until stop(); one thread per connection.
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace cosy
