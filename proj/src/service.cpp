#include "cosy/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "cosy/error.hpp"
#include "cosy/png.hpp"
#include "cosy/raster.hpp"
#include "cosy/splat_io.hpp"

namespace cosy {

using nlohmann::json;

ServiceOptions ServiceOptions::from(const RunConfig& cfg) {
    ServiceOptions o;
    o.addr = cfg.get_string("serve.addr");
    o.checkpoint_dir = cfg.get_string("serve.checkpoint_dir");
    o.max_sessions = static_cast<int>(cfg.get_int("serve.max_sessions"));
    o.psi = cfg.get_float("serve.psi");
    return o;
}

std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& path, const std::string& name) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::CheckpointInvalid, e.what());
    }
    auto ckpt = decode_checkpoint(bytes);
    if (ckpt.config.get_bool("model.monolithic")) {
        throw Error(ErrorCode::CheckpointInvalid, "editing needs a component generator");
    }
    auto m = std::make_shared<LoadedModel>();
    m->name = name;
    m->config = ckpt.config;
    m->content_digest = fnv1a64(bytes);
    m->generator = generator_from_checkpoint(ckpt);
    m->resolution = static_cast<int>(ckpt.config.get_int("data.resolution"));
    auto side = path;
    side += ".pca";
    if (std::filesystem::exists(side)) {
        auto pca = decode_pca_sidecar(read_file(side));
        if (pca.checkpoint_digest != m->content_digest) {
            throw Error(ErrorCode::CheckpointInvalid, "PCA sidecar " + side.string() + " was computed for another checkpoint");
        }
        if (pca.components[0].directions.cols() != m->generator->cfg.w_dim) {
            throw Error(ErrorCode::CheckpointInvalid, "PCA sidecar dimension differs from the latent width");
        }
        m->pca = std::move(pca);
    }
    return m;
}

Histogram soft_histogram(const std::array<float, 3>& rgb) {
    Histogram h{};
    constexpr double sigma = 0.5 / kHistBins;
    for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp<double>(rgb[ch], 0.0, 1.0);
        double total = 0.0;
        std::array<double, kHistBins> w{};
        for (int k = 0; k < kHistBins; ++k) {
            const double d = (v - (k + 0.5) / kHistBins) / sigma;
            w[k] = std::exp(-0.5 * d * d);
            total += w[k];
        }
        for (int k = 0; k < kHistBins; ++k) h[ch * kHistBins + k] = static_cast<float>(w[k] / total);
    }
    return h;
}

std::string Frame::png() const { return encode_png(rgb, width, height); }

std::string Frame::stream_message() const {
    std::string out(8, '\0');
    const std::uint16_t w = static_cast<std::uint16_t>(width), h = static_cast<std::uint16_t>(height);
    std::memcpy(out.data(), &id, 4);
    std::memcpy(out.data() + 4, &w, 2);
    std::memcpy(out.data() + 6, &h, 2);
    return out + png();
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::BadEdit, what); }

Component region_component(const std::string& region) {
    if (region == "skin" || region == "face") return Component::Face;
    if (region == "hair") return Component::Hair;
    if (region == "torso") return Component::Torso;
    bad("unknown color region " + region);
}

std::vector<float> float_array(const json& v, std::size_t n, const char* what) {
    if (!v.is_array() || v.size() != n) bad(std::string(what) + " must be an array of " + std::to_string(n) + " numbers");
    std::vector<float> out;
    for (const auto& x : v) {
        if (!x.is_number()) bad(std::string(what) + " must hold numbers");
        const double d = x.get<double>();
        if (!std::isfinite(d)) bad(std::string(what) + " must be finite");
        out.push_back(static_cast<float>(d));
    }
    return out;
}

double finite_number(const json& edit, const char* key, double fallback) {
    if (!edit.contains(key)) return fallback;
    if (!edit[key].is_number()) bad(std::string(key) + " must be a number");
    const double v = edit[key].get<double>();
    if (!std::isfinite(v)) bad(std::string(key) + " must be finite");
    return v;
}

}  // namespace

Session::Session(std::string id, std::shared_ptr<const LoadedModel> model, std::uint64_t seed, double psi)
    : id_(std::move(id)), model_(std::move(model)), psi_(psi) {
    if (psi < 0.0 || psi > 1.0) bad("psi must lie in [0, 1]");
    std::mt19937_64 rng(seed);
    bundle_ = LatentBundle::sample(1, model_->generator->cfg.z_dim, rng);
    const auto data = model_->config.dataset();
    labels_ = generate_sample(rng, data.palette, data.resolution, data.shrink_radius).labels;
    const auto t0 = std::chrono::steady_clock::now();
    refresh();
    render_frame();
    frame_.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Camera Session::camera() const {
    return Camera::orbit(orbit_.yaw, orbit_.pitch, orbit_.radius, OrbitDefaults::kTarget, OrbitDefaults::kFocal,
                         model_->resolution, model_->resolution);
}

void Session::invalidate_features(int i) {
    features_[i] = torch::Tensor();
    geometry_[i] = torch::Tensor();
    colors_[i] = torch::Tensor();
}

void Session::invalidate_all_features() {
    for (int i = 0; i < 4; ++i) invalidate_features(i);
}

torch::Tensor Session::z_from(const json& edit, const char* what) {
    const int z_dim = model_->generator->cfg.z_dim;
    if (edit.contains("seed")) {
        if (!edit["seed"].is_number_integer()) bad(std::string(what) + ": seed must be an integer");
        std::mt19937_64 rng(edit["seed"].get<std::uint64_t>());
        return randn_from(rng, 1, z_dim);
    }
    if (edit.contains("vector")) {
        auto v = float_array(edit["vector"], z_dim, "vector");
        return torch::from_blob(v.data(), {1, z_dim}).clone();
    }
    bad(std::string(what) + " needs a seed or a vector");
}

EditClass Session::classify(const json& edit) {
    const auto op = edit.value("op", std::string());
    if (op == "set_color" || op == "set_glasses") return EditClass::Appearance;
    if (op == "set_camera") return EditClass::Camera;
    return EditClass::Latent;
}

Frame Session::apply(const json& edit) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!edit.is_object() || !edit.contains("op") || !edit["op"].is_string()) bad("edit must be an object with an op");
    const auto op = edit["op"].get<std::string>();
    auto& g = model_->generator;
    try {
        if (op == "set_component_latent") {
            const auto c = component_from_name(edit.value("component", std::string()));
            const int i = index_of(c);
            if (edit.contains("pca")) {
                if (!model_->pca) bad("no PCA sidecar was loaded with this checkpoint");
                const auto& p = model_->pca->components[i];
                const auto k = static_cast<std::size_t>(p.directions.rows());
                if (!edit["pca"].is_array() || edit["pca"].empty() || edit["pca"].size() > k) {
                    bad("pca must hold 1.." + std::to_string(k) + " coordinates");
                }
                const auto coords = float_array(edit["pca"], edit["pca"].size(), "pca");
                Eigen::VectorXd w = p.mean;
                for (std::size_t j = 0; j < coords.size(); ++j) {
                    w += coords[j] * std::sqrt(p.variances[j]) * p.directions.row(j).transpose();
                }
                auto t = torch::empty({1, g->cfg.w_dim});
                for (int d = 0; d < g->cfg.w_dim; ++d) t[0][d] = static_cast<float>(w[d]);
                w_override_[i] = t;
            } else {
                bundle_.z[i] = z_from(edit, "set_component_latent");
                w_override_[i].reset();
            }
            invalidate_features(i);
        } else if (op == "set_color") {
            const auto c = region_component(edit.value("region", std::string()));
            Histogram h{};
            if (edit.contains("rgb")) {
                const auto v = float_array(edit["rgb"], 3, "rgb");
                for (float x : v) {
                    if (x < 0.0f || x > 1.0f) bad("rgb components must lie in [0, 1]");
                }
                h = soft_histogram({v[0], v[1], v[2]});
            } else if (edit.contains("histogram")) {
                const auto v = float_array(edit["histogram"], kHistDim, "histogram");
                if (!histogram_is_simplex(v)) bad("histogram channels must be non-negative and sum to 1");
                std::copy(v.begin(), v.end(), h.begin());
            } else {
                bad("set_color needs rgb or histogram");
            }
            (c == Component::Face ? labels_.skin : c == Component::Hair ? labels_.hair : labels_.torso) = h;
            colors_[index_of(c)] = torch::Tensor();
        } else if (op == "set_glasses") {
            if (!edit.contains("value") || !edit["value"].is_boolean()) bad("set_glasses needs a boolean value");
            labels_.glasses_flag = edit["value"].get<bool>() ? 1.0f : 0.0f;
        } else if (op == "set_shape") {
            bundle_.z_shape = z_from(edit, "set_shape");
            for (auto& geo : geometry_) geo = torch::Tensor();
        } else if (op == "set_light") {
            bundle_.z_light = z_from(edit, "set_light");
            for (int i = 0; i < 4; ++i) {
                if (!w_override_[i]) invalidate_features(i);
            }
        } else if (op == "set_camera") {
            OrbitParams o = orbit_;
            o.yaw = finite_number(edit, "yaw", o.yaw);
            o.pitch = finite_number(edit, "pitch", o.pitch);
            o.radius = finite_number(edit, "radius", o.radius);
            if (std::abs(o.pitch) >= 89.0) bad("pitch must lie in (-89, 89) degrees");
            if (o.radius < 1.0 || o.radius > 20.0) bad("radius must lie in [1, 20]");
            orbit_ = o;
        } else if (op == "set_truncation") {
            const double psi = finite_number(edit, "psi", -1.0);
            if (psi < 0.0 || psi > 1.0) bad("psi must lie in [0, 1]");
            if (psi != psi_) {
                psi_ = psi;
                invalidate_all_features();
            }
        } else {
            bad("unknown op " + op);
        }
    } catch (const json::exception& e) {
        bad(e.what());
    }
    refresh();
    render_frame();
    frame_.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return frame_;
}

void Session::refresh() {
    torch::NoGradGuard ng;
    auto& g = model_->generator;
    const auto& cfg = g->cfg;
    auto trunc = [&](const torch::Tensor& w, int slot) { return psi_ == 1.0 ? w : truncate(w, g->w_mean[slot], psi_); };

    bool need_features = false;
    for (int i = 0; i < 4; ++i) need_features = need_features || !features_[i].defined();
    if (need_features && cfg.cross_block_attention) invalidate_all_features();
    bool need_geometry = need_features;
    for (int i = 0; i < 4; ++i) need_geometry = need_geometry || !geometry_[i].defined();

    torch::Tensor w_light;
    if (need_features) w_light = g->map_light(bundle_.z_light);
    std::array<torch::Tensor, 4> w;
    for (auto c : kComponents) {
        const int i = index_of(c);
        if (features_[i].defined()) continue;
        w[i] = trunc(w_override_[i] ? *w_override_[i] : g->map_latent(c, bundle_.z[i], w_light), i);
    }
    std::array<torch::Tensor, 4> tokens;
    if (need_features && cfg.cross_block_attention) tokens = g->backbone->forward(w);

    const torch::Tensor w_shape = need_geometry ? trunc(g->map_shape(bundle_.z_shape), 4) : torch::Tensor();
    const auto cond = ConditioningBatch::from({labels_});
    for (auto c : kComponents) {
        const int i = index_of(c);
        bool changed = false;
        auto& sub = g->sub[i];
        if (features_[i].defined()) {
            ++counters_.features[i].hits;
        } else {
            ++counters_.features[i].misses;
            const auto t = cfg.cross_block_attention ? tokens[i] : g->backbone->block(c, w[i]);
            features_[i] = sub->features(t, w[i]);
            geometry_[i] = torch::Tensor();
            colors_[i] = torch::Tensor();
        }
        if (geometry_[i].defined()) {
            ++counters_.geometry[i].hits;
        } else {
            ++counters_.geometry[i].misses;
            geometry_[i] = sub->geometry(features_[i], w_shape);
            changed = true;
        }
        if (colors_[i].defined()) {
            ++counters_.colors[i].hits;
        } else {
            ++counters_.colors[i].misses;
            colors_[i] = sub->colors(features_[i], cond.histogram(c));
            changed = true;
        }
        if (changed || sets_[i].empty()) sets_[i] = to_gaussian_set(c, torch::cat({geometry_[i], colors_[i]}, -1)[0]);
    }
    scene_ = compose(sets_[0], sets_[1], sets_[2], sets_[3], labels_.glasses_flag > 0.5f);
}

void Session::render_frame() {
    const auto out = render(scene_, camera());
    frame_.id = next_frame_++;
    frame_.width = out.width;
    frame_.height = out.height;
    frame_.rgb = out.rgb;
}

std::string Session::export_splat() const { return encode_splat(scene_); }

std::array<std::uint64_t, 4> Session::content_hashes() const {
    std::array<std::uint64_t, 4> h{};
    for (int i = 0; i < 4; ++i) h[i] = sets_[i].content_hash();
    return h;
}

EditService::EditService(ServiceOptions options) : options_(std::move(options)) {
    if (options_.max_sessions < 1) throw Error(ErrorCode::ConfigError, "max_sessions must be positive");
}

void EditService::load_checkpoint(const std::string& name) {
    std::filesystem::path p(name);
    if (p.is_relative()) p = options_.checkpoint_dir / p;
    auto m = load_model(p, name);
    std::lock_guard lock(mutex_);
    models_[name] = std::move(m);
    if (default_model_.empty()) default_model_ = name;
}

std::shared_ptr<const LoadedModel> EditService::model(const std::string& name) {
    {
        std::lock_guard lock(mutex_);
        const auto& key = name.empty() ? default_model_ : name;
        if (auto it = models_.find(key); it != models_.end()) return it->second;
        if (name.empty()) throw Error(ErrorCode::CheckpointInvalid, "no checkpoint loaded");
    }
    load_checkpoint(name);
    std::lock_guard lock(mutex_);
    return models_.at(name);
}

std::shared_ptr<Session> EditService::create_session(std::uint64_t seed, const std::string& checkpoint) {
    auto m = model(checkpoint);
    std::string id;
    {
        std::lock_guard lock(mutex_);
        if (static_cast<int>(sessions_.size()) >= options_.max_sessions) {
            throw Error(ErrorCode::SessionLimit, "at most " + std::to_string(options_.max_sessions) + " sessions");
        }
        id = "s" + std::to_string(next_session_++);
        sessions_[id] = nullptr;  // reserves the slot while the first frame renders
    }
    try {
        auto s = std::make_shared<Session>(id, std::move(m), seed, options_.psi);
        std::lock_guard lock(mutex_);
        sessions_[id] = s;
        return s;
    } catch (...) {
        std::lock_guard lock(mutex_);
        sessions_.erase(id);
        throw;
    }
}

std::shared_ptr<Session> EditService::session(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end() || !it->second) throw Error(ErrorCode::UnknownSession, "no session " + id);
    return it->second;
}

void EditService::close_session(const std::string& id) {
    std::lock_guard lock(mutex_);
    if (sessions_.erase(id) == 0) throw Error(ErrorCode::UnknownSession, "no session " + id);
}

std::size_t EditService::session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

Frame EditService::edit(const std::string& id, const json& edit) {
    auto s = session(id);
    Frame f;
    {
        std::lock_guard lock(s->mutex);
        f = s->apply(edit);
    }
    std::lock_guard lock(mutex_);
    latencies_[static_cast<int>(Session::classify(edit))].push_back(f.latency_ms);
    return f;
}

LatencySummary EditService::latency(EditClass c) const {
    std::vector<double> v;
    {
        std::lock_guard lock(mutex_);
        v = latencies_[static_cast<int>(c)];
    }
    LatencySummary s;
    s.count = v.size();
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    auto at = [&](double q) {
        const double pos = q * double(v.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
    };
    s.median_ms = at(0.5);
    s.p90_ms = at(0.9);
    return s;
}

json EditService::metrics() const {
    json out;
    const char* names[] = {"appearance", "latent", "camera"};
    for (int i = 0; i < 3; ++i) {
        const auto s = latency(static_cast<EditClass>(i));
        out["latency"][names[i]] = {{"count", s.count}, {"median_ms", s.median_ms}, {"p90_ms", s.p90_ms}};
    }
    out["sessions"] = session_count();
    return out;
}

}  // namespace cosy
