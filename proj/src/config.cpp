#include "cosy/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cosy/error.hpp"
#include "cosy/splat_io.hpp"

namespace cosy {

namespace {

std::vector<ConfigKey> build_schema() {
    using enum KeyType;
    return {
        {"seed", Int, "7", "master seed for init, latents and data order"},
        {"threads", Int, "1", "intra-op threads"},

        {"data.corpus", String, "", "on-disk corpus directory; empty streams procedural samples"},
        {"data.resolution", Int, "64", "training and render resolution (square)"},
        {"data.shrink_radius", Int, "2", "erosion radius in px before histogramming"},
        {"data.glasses_rate", Float, "0.3", "procedural glasses probability"},

        {"model.z_dim", Int, "512", "latent width"},
        {"model.w_dim", Int, "512", "mapped latent width"},
        {"model.mapping_lr_mul", Float, "0.01", "mapping network learning-rate multiplier"},
        {"model.token_dim", Int, "128", "backbone token width"},
        {"model.backbone_depth", Int, "2", "modulated transformer layers per block"},
        {"model.heads", Int, "4", "attention heads"},
        {"model.anchors_face", Int, "64", "face anchor count"},
        {"model.anchors_hair", Int, "64", "hair anchor count"},
        {"model.anchors_glasses", Int, "16", "glasses anchor count"},
        {"model.anchors_torso", Int, "64", "torso anchor count"},
        {"model.children_face", Int, "16", "children per face anchor"},
        {"model.children_hair", Int, "16", "children per hair anchor"},
        {"model.children_glasses", Int, "8", "children per glasses anchor"},
        {"model.children_torso", Int, "16", "children per torso anchor"},
        {"model.point_dim", Int, "64", "per-primitive feature width"},
        {"model.cross_block_attention", Bool, "false", "let backbone blocks attend across components (ablation)"},
        {"model.monolithic", Bool, "false", "single label-conditioned latent for all components (baseline)"},

        {"disc.base_width", Int, "64", "channels of the first discriminator stage"},
        {"disc.max_width", Int, "256", "channel cap"},

        {"train.steps", Int, "20000", "total optimizer steps"},
        {"train.batch", Int, "16", "batch size"},
        {"train.g_lr", Float, "0.0025", "generator learning rate"},
        {"train.d_lr", Float, "0.0025", "discriminator learning rate"},
        {"train.beta1", Float, "0", "Adam beta1"},
        {"train.beta2", Float, "0.99", "Adam beta2"},
        {"train.r1_weight", Float, "1", "R1 penalty weight"},
        {"train.r1_interval", Int, "16", "lazy R1 period in steps"},
        {"train.mixing_prob", Float, "0.2", "probability of resampling one component latent"},
        {"train.light_reg_weight", Float, "1", "light-consistency loss weight"},
        {"train.light_target", Float, "0.3", "perceptual distance below which the light loss is inactive"},
        {"train.light_batch", Int, "4", "samples per step used by the light loss"},
        {"train.ema_geom_weight", Float, "1", "EMA face-geometry loss weight"},
        {"train.ema_decay", Float, "0.999", "EMA face-geometry decay"},
        {"train.g_ema_decay", Float, "0.999", "generator weight EMA decay"},
        {"train.w_mean_decay", Float, "0.995", "running truncation-anchor decay"},
        {"train.log_every", Int, "50", "metrics CSV period"},
        {"train.checkpoint_every", Int, "1000", "checkpoint period"},
        {"train.fid_every", Int, "1000", "desk-FID period; 0 disables"},
        {"train.fid_samples", Int, "1000", "generated and real images per desk-FID"},

        {"eval.samples", Int, "1000", "samples per evaluation protocol"},
        {"eval.psi", Float, "1", "truncation during evaluation"},
        {"eval.pca_samples", Int, "100000", "mapped latents per PCA"},
        {"eval.pca_k", Int, "4", "principal directions per component"},

        {"serve.addr", String, "127.0.0.1:8080", "bind address"},
        {"serve.checkpoint_dir", String, ".", "directory resolving checkpoint names"},
        {"serve.max_sessions", Int, "100", "concurrent session cap"},
        {"serve.psi", Float, "0.8", "default session truncation"},
    };
}

bool is_model_key(const std::string& k) {
    return k.rfind("model.", 0) == 0 || k.rfind("disc.", 0) == 0 || k == "data.resolution";
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Parses and canonicalizes a value; throws ConfigError on mismatch.
std::string normalize(const ConfigKey& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto fail = [&] { throw Error(ErrorCode::ConfigError, "bad value for " + key.name + ": '" + raw + "'"); };
    switch (key.type) {
        case KeyType::Int: {
            std::int64_t x = 0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
            if (ec != std::errc() || p != v.data() + v.size() || v.empty()) fail();
            return std::to_string(x);
        }
        case KeyType::Float: {
            double x = 0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
            if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(x)) fail();
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", x);
            return buf;
        }
        case KeyType::Bool:
            if (v == "true" || v == "1" || v == "yes") return "true";
            if (v == "false" || v == "0" || v == "no") return "false";
            fail();
            break;
        case KeyType::String:
            return v;
    }
    return v;
}

const char* type_name(KeyType t) {
    switch (t) {
        case KeyType::Int: return "int";
        case KeyType::Float: return "float";
        case KeyType::Bool: return "bool";
        case KeyType::String: return "string";
    }
    return "?";
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = build_schema();
    return schema;
}

std::string config_help() {
    std::ostringstream os;
    os << "Config keys (file lines 'key = value', overrides '--set key=value'):\n";
    for (const auto& k : config_schema()) {
        char line[256];
        std::snprintf(line, sizeof line, "  %-28s %-7s %-16s %s\n", k.name.c_str(), type_name(k.type),
                      k.default_value.empty() ? "\"\"" : k.default_value.c_str(), k.doc.c_str());
        os << line;
    }
    return os.str();
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

RunConfig::RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = normalize(k, k.default_value);
}

const ConfigKey& RunConfig::key(const std::string& name) const {
    const auto& s = config_schema();
    auto it = std::find_if(s.begin(), s.end(), [&](const ConfigKey& k) { return k.name == name; });
    if (it == s.end()) throw Error(ErrorCode::ConfigError, "unknown config key '" + name + "'");
    return *it;
}

void RunConfig::set(const std::string& name, const std::string& value) {
    values_[name] = normalize(key(name), value);
}

void RunConfig::merge_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
        }
        set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
    }
    merge_text(text);
}

std::int64_t RunConfig::get_int(const std::string& k) const {
    if (key(k).type != KeyType::Int) throw Error(ErrorCode::ConfigError, k + " is not an int");
    return std::stoll(values_.at(k));
}

double RunConfig::get_float(const std::string& k) const {
    if (key(k).type != KeyType::Float) throw Error(ErrorCode::ConfigError, k + " is not a float");
    return std::stod(values_.at(k));
}

bool RunConfig::get_bool(const std::string& k) const {
    if (key(k).type != KeyType::Bool) throw Error(ErrorCode::ConfigError, k + " is not a bool");
    return values_.at(k) == "true";
}

std::string RunConfig::get_string(const std::string& k) const {
    if (key(k).type != KeyType::String) throw Error(ErrorCode::ConfigError, k + " is not a string");
    return values_.at(k);
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";  // std::map is sorted
    return out;
}

std::uint64_t RunConfig::digest() const { return fnv1a64(canonical()); }

std::uint64_t RunConfig::model_digest() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        if (is_model_key(k)) out += k + "=" + v + "\n";
    }
    return fnv1a64(out);
}

GeneratorConfig RunConfig::generator() const {
    GeneratorConfig g;
    g.z_dim = static_cast<int>(get_int("model.z_dim"));
    g.w_dim = static_cast<int>(get_int("model.w_dim"));
    g.mapping_hidden = g.w_dim;
    g.mapping_lr_mul = static_cast<float>(get_float("model.mapping_lr_mul"));
    g.token_dim = static_cast<int>(get_int("model.token_dim"));
    g.backbone_depth = static_cast<int>(get_int("model.backbone_depth"));
    g.heads = static_cast<int>(get_int("model.heads"));
    for (auto c : kComponents) {
        const std::string n(component_name(c));
        g.anchors[index_of(c)] = static_cast<int>(get_int("model.anchors_" + n));
        g.children[index_of(c)] = static_cast<int>(get_int("model.children_" + n));
    }
    g.point_dim = static_cast<int>(get_int("model.point_dim"));
    g.cross_block_attention = get_bool("model.cross_block_attention");
    g.monolithic = get_bool("model.monolithic");
    return g;
}

DiscriminatorConfig RunConfig::discriminator() const {
    DiscriminatorConfig d;
    d.resolution = static_cast<int>(get_int("data.resolution"));
    d.base_width = static_cast<int>(get_int("disc.base_width"));
    d.max_width = static_cast<int>(get_int("disc.max_width"));
    return d;
}

DatasetConfig RunConfig::dataset() const {
    DatasetConfig d;
    d.seed = static_cast<std::uint64_t>(get_int("seed"));
    d.resolution = static_cast<int>(get_int("data.resolution"));
    d.shrink_radius = static_cast<int>(get_int("data.shrink_radius"));
    d.palette.glasses_rate = get_float("data.glasses_rate");
    d.corpus_dir = get_string("data.corpus");
    return d;
}

void RunConfig::validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
    for (const char* p : {"train.mixing_prob", "data.glasses_rate", "train.ema_decay", "train.g_ema_decay",
                          "train.w_mean_decay", "train.beta1", "train.beta2", "eval.psi", "serve.psi"}) {
        const double v = get_float(p);
        if (v < 0.0 || v > 1.0) bad(std::string(p) + " must lie in [0, 1]");
    }
    for (const char* w : {"train.r1_weight", "train.light_reg_weight", "train.ema_geom_weight", "train.light_target",
                          "train.g_lr", "train.d_lr", "model.mapping_lr_mul"}) {
        if (get_float(w) < 0.0) bad(std::string(w) + " must be >= 0");
    }
    const auto res = get_int("data.resolution");
    if (res < 8 || res > 512 || (res & (res - 1)) != 0) bad("data.resolution must be a power of two in [8, 512]");
    for (const char* k : {"train.batch", "train.r1_interval", "model.z_dim", "model.w_dim", "model.token_dim",
                          "model.heads", "model.point_dim", "disc.base_width", "disc.max_width", "eval.samples",
                          "eval.pca_k", "serve.max_sessions", "threads", "train.log_every",
                          "train.checkpoint_every", "train.light_batch"}) {
        if (get_int(k) <= 0) bad(std::string(k) + " must be > 0");
    }
    if (get_int("train.steps") < 0 || get_int("train.fid_every") < 0) bad("step counts must be >= 0");
    for (auto c : kComponents) {
        const std::string n(component_name(c));
        if (get_int("model.anchors_" + n) <= 0 || get_int("model.children_" + n) < 0) {
            bad("anchor/children counts for " + n + " out of range");
        }
    }
    if (get_int("model.token_dim") % get_int("model.heads") != 0) bad("model.token_dim must divide by model.heads");
    if (get_int("eval.pca_k") > get_int("model.w_dim")) bad("eval.pca_k exceeds model.w_dim");
}

}  // namespace cosy
