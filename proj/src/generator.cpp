#include "cosy/generator.hpp"

#include <cmath>
#include <sstream>

#include "cosy/error.hpp"

namespace cosy {

namespace {

namespace F = torch::nn::functional;

constexpr double kLreluSlope = 0.2;
const double kLreluGain = std::sqrt(2.0);

torch::Tensor lrelu(const torch::Tensor& x) {
    return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kLreluSlope));
}

torch::Tensor lrelu_gain(const torch::Tensor& x) { return lrelu(x) * kLreluGain; }

// Deterministic init from a std RNG so weights do not depend on torch's
// global generator state.
torch::Tensor uniform_points(std::mt19937_64& rng, int n, const std::array<double, 3>& center,
                             const std::array<double, 3>& half, bool ellipsoid) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto t = torch::empty({n, 3});
    auto acc = t.accessor<float, 2>();
    for (int i = 0; i < n; ++i) {
        double p[3];
        do {
            for (double& v : p) v = u(rng);
        } while (ellipsoid && p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > 1.0);
        for (int k = 0; k < 3; ++k) acc[i][k] = static_cast<float>(center[k] + half[k] * p[k]);
    }
    return t;
}

struct ComponentLayout {
    std::array<double, 3> center;
    std::array<double, 3> half;
    bool ellipsoid;
    float anchor_radius;
    float child_radius;
    float anchor_scale;
    float child_scale;
};

ComponentLayout layout(Component c) {
    switch (c) {
        case Component::Face: return {{0.0, 0.0, 0.0}, {0.40, 0.52, 0.43}, true, 0.15f, 0.12f, 0.06f, 0.03f};
        case Component::Hair: return {{0.0, 0.08, -0.05}, {0.45, 0.57, 0.47}, true, 0.15f, 0.12f, 0.06f, 0.03f};
        case Component::Glasses:
            return {{0.0, 0.05, 0.46}, {0.28, 0.08, 0.02}, false, 0.08f, 0.05f, 0.025f, 0.012f};
        case Component::Torso: return {{0.0, -0.98, -0.05}, {0.58, 0.30, 0.25}, false, 0.15f, 0.12f, 0.06f, 0.03f};
    }
    return {};
}

void init_linear(torch::nn::Linear& l, double gain = 1.0, double bias = 0.0) {
    torch::NoGradGuard ng;
    const auto fan_in = l->weight.size(1);
    l->weight.normal_(0.0, gain / std::sqrt(double(fan_in)));
    if (l->bias.defined()) l->bias.fill_(bias);
}

}  // namespace

int GeneratorConfig::total_primitives() const {
    int n = 0;
    for (auto c : kComponents) n += primitives(c);
    return n;
}

std::string GeneratorConfig::describe() const {
    std::ostringstream os;
    os << "z" << z_dim << " w" << w_dim << " map" << mapping_hidden << " tok" << token_dim << "x" << backbone_depth
       << " heads" << heads << " anchors";
    for (int i = 0; i < 4; ++i) os << (i ? "," : "") << anchors[i] << "x" << children[i];
    os << " point" << point_dim << " pos" << position_hidden << " col" << color_hidden << " hist" << hist_embed
       << (cross_block_attention ? " cross" : "") << (monolithic ? " monolithic" : "");
    return os.str();
}

torch::Tensor randn_from(std::mt19937_64& rng, int64_t rows, int64_t dim) {
    std::normal_distribution<float> g;
    auto t = torch::empty({rows, dim});
    float* p = t.data_ptr<float>();
    for (int64_t i = 0; i < rows * dim; ++i) p[i] = g(rng);
    return t;
}

LatentBundle LatentBundle::clone() const {
    LatentBundle b;
    for (int i = 0; i < 4; ++i) b.z[i] = z[i].clone();
    b.z_shape = z_shape.clone();
    b.z_light = z_light.clone();
    return b;
}

LatentBundle LatentBundle::sample(int64_t batch, int z_dim, std::mt19937_64& rng) {
    LatentBundle b;
    for (int i = 0; i < 4; ++i) b.z[i] = randn_from(rng, batch, z_dim);
    b.z_shape = randn_from(rng, batch, z_dim);
    b.z_light = randn_from(rng, batch, z_dim);
    return b;
}

std::optional<torch::Tensor> ConditioningBatch::histogram(Component c) const {
    switch (c) {
        case Component::Face: return skin;
        case Component::Hair: return hair;
        case Component::Torso: return torso;
        case Component::Glasses: return std::nullopt;
    }
    return std::nullopt;
}

torch::Tensor ConditioningBatch::labels() const { return torch::cat({hair, skin, torso, glasses.unsqueeze(1)}, 1); }

ConditioningBatch ConditioningBatch::from(const std::vector<ColorConditioning>& items) {
    const auto n = static_cast<int64_t>(items.size());
    ConditioningBatch c;
    c.hair = torch::empty({n, kHistDim});
    c.skin = torch::empty({n, kHistDim});
    c.torso = torch::empty({n, kHistDim});
    c.glasses = torch::empty({n});
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(c.hair[i].data_ptr<float>(), items[i].hair.data(), sizeof(float) * kHistDim);
        std::memcpy(c.skin[i].data_ptr<float>(), items[i].skin.data(), sizeof(float) * kHistDim);
        std::memcpy(c.torso[i].data_ptr<float>(), items[i].torso.data(), sizeof(float) * kHistDim);
        c.glasses[i] = items[i].glasses_flag;
    }
    return c;
}

ColorConditioning ConditioningBatch::item(int64_t index) const {
    ColorConditioning c;
    const auto copy = [&](const torch::Tensor& t, Histogram& h) {
        const auto row = t[index].contiguous();
        std::memcpy(h.data(), row.data_ptr<float>(), sizeof(float) * kHistDim);
    };
    copy(hair, c.hair);
    copy(skin, c.skin);
    copy(torso, c.torso);
    c.glasses_flag = glasses[index].item<float>();
    return c;
}

EqualLinearImpl::EqualLinearImpl(int in, int out, float lr_mul_, float bias_init, float gain)
    : scale(gain * lr_mul_ / std::sqrt(float(in))), lr_mul(lr_mul_) {
    weight = register_parameter("weight", torch::randn({out, in}) / lr_mul_);
    bias = register_parameter("bias", torch::full({out}, bias_init / lr_mul_));
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
    return torch::nn::functional::linear(x, weight * scale, bias * lr_mul);
}

torch::Tensor normalize_2nd_moment(const torch::Tensor& x, double eps) {
    return x * (x.square().mean(-1, true) + eps).rsqrt();
}

MappingNetworkImpl::MappingNetworkImpl(int in_dim, int context_dim_, int hidden, int out_dim, float lr_mul)
    : context_dim(context_dim_) {
    fc0 = register_module("fc0", EqualLinear(in_dim + context_dim_, hidden, lr_mul));
    fc1 = register_module("fc1", EqualLinear(hidden, out_dim, lr_mul));
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z, const torch::Tensor& context) {
    auto x = normalize_2nd_moment(z);
    if (context_dim > 0) x = torch::cat({x, normalize_2nd_moment(context)}, 1);
    x = lrelu_gain(fc0(x));
    return lrelu_gain(fc1(x));
}

torch::Tensor truncate(const torch::Tensor& w, const torch::Tensor& w_mean, double psi) {
    if (psi < 0.0 || psi > 1.0) throw Error(ErrorCode::ConfigError, "truncation psi must be in [0, 1]");
    if (psi == 1.0) return w;
    return w_mean + psi * (w - w_mean);
}

ModulatedBlockImpl::ModulatedBlockImpl(int dim_, int heads_, int w_dim) : dim(dim_), heads(heads_) {
    mod = register_module("mod", EqualLinear(w_dim, 4 * dim_, 1.0f, 0.0f, 0.25f));
    qkv = register_module("qkv", torch::nn::Linear(dim_, 3 * dim_));
    proj = register_module("proj", torch::nn::Linear(dim_, dim_));
    fc1 = register_module("fc1", torch::nn::Linear(dim_, 2 * dim_));
    fc2 = register_module("fc2", torch::nn::Linear(2 * dim_, dim_));
    init_linear(qkv);
    init_linear(proj, 0.5);
    init_linear(fc1, std::sqrt(2.0));
    init_linear(fc2, 0.5);
}

torch::Tensor ModulatedBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
    const auto b = x.size(0), t = x.size(1);
    const auto m = mod(w).chunk(4, -1);
    auto h = F::layer_norm(x, F::LayerNormFuncOptions({dim})) * (1 + m[0]) + m[1];
    auto q = qkv(h).view({b, t, 3, heads, dim / heads}).permute({2, 0, 3, 1, 4});
    auto att = at::scaled_dot_product_attention(q[0], q[1], q[2]);
    auto y = x + proj(att.permute({0, 2, 1, 3}).reshape({b, t, dim}));
    h = F::layer_norm(y, F::LayerNormFuncOptions({dim})) * (1 + m[2]) + m[3];
    return y + fc2(F::gelu(fc1(h)));
}

BackboneImpl::BackboneImpl(const GeneratorConfig& cfg_) : cfg(cfg_) {
    std::mt19937_64 rng(0x70c3);
    for (auto c : kComponents) {
        const int i = index_of(c);
        tokens[i] = register_parameter("tokens_" + std::string(component_name(c)),
                                       randn_from(rng, cfg.anchors[i], cfg.token_dim));
    }
    for (int d = 0; d < cfg.backbone_depth; ++d) blocks->push_back(ModulatedBlock(cfg.token_dim, cfg.heads, cfg.w_dim));
    register_module("blocks", blocks);
}

torch::Tensor BackboneImpl::block(Component c, const torch::Tensor& w) {
    if (cfg.cross_block_attention) throw Error(ErrorCode::ShapeMismatch, "blocks are coupled by cross-block attention");
    const int i = index_of(c);
    auto x = tokens[i].unsqueeze(0).expand({w.size(0), -1, -1});
    const auto wi = w.unsqueeze(1);
    for (auto& blk : *blocks) x = blk->as<ModulatedBlock>()->forward(x, wi);
    return x;
}

std::array<torch::Tensor, 4> BackboneImpl::forward(const std::array<torch::Tensor, 4>& w) {
    const auto b = w[0].size(0);
    std::array<torch::Tensor, 4> out;
    if (!cfg.cross_block_attention) {
        for (auto c : kComponents) out[index_of(c)] = block(c, w[index_of(c)]);
        return out;
    }
    std::vector<torch::Tensor> xs, ws;
    for (int i = 0; i < 4; ++i) {
        xs.push_back(tokens[i].unsqueeze(0).expand({b, -1, -1}));
        ws.push_back(w[i].unsqueeze(1).expand({b, cfg.anchors[i], -1}));
    }
    auto x = torch::cat(xs, 1);
    const auto wt = torch::cat(ws, 1);
    for (auto& blk : *blocks) x = blk->as<ModulatedBlock>()->forward(x, wt);
    const auto parts = x.split_with_sizes({cfg.anchors[0], cfg.anchors[1], cfg.anchors[2], cfg.anchors[3]}, 1);
    for (int i = 0; i < 4; ++i) out[i] = parts[i];
    return out;
}

SubGeneratorImpl::SubGeneratorImpl(const GeneratorConfig& cfg_, Component tag_)
    : cfg(cfg_), tag(tag_), n_anchor(cfg_.anchors[index_of(tag_)]), n_child(cfg_.children[index_of(tag_)]) {
    const int p = cfg.point_dim;
    const auto lay = layout(tag);
    std::mt19937_64 rng(0xa11c + index_of(tag));

    anchor_feat = register_module("anchor_feat", torch::nn::Linear(cfg.token_dim, p));
    child_in = register_module("child_in", torch::nn::Linear(p, p));
    child_out = register_module("child_out", torch::nn::Linear(p, p));
    child_mod = register_module("child_mod", EqualLinear(cfg.w_dim, p, 1.0f, 0.0f, 0.25f));
    init_linear(anchor_feat, std::sqrt(2.0));
    init_linear(child_in, std::sqrt(2.0));
    init_linear(child_out, std::sqrt(2.0));
    child_embed = register_parameter("child_embed", randn_from(rng, int64_t(n_anchor) * n_child, p)
                                                        .view({n_anchor, n_child, p}));

    anchor_base = register_parameter("anchor_base", uniform_points(rng, n_anchor, lay.center, lay.half, lay.ellipsoid));
    child_base = register_parameter(
        "child_base", uniform_points(rng, n_anchor * n_child, {0, 0, 0}, {1, 1, 1}, true).view({n_anchor, n_child, 3}));
    anchor_radius = lay.anchor_radius;
    child_radius = lay.child_radius;

    const int ph = cfg.position_hidden;
    pos_anchor_in = register_module("pos_anchor_in", torch::nn::Linear(p, ph));
    pos_anchor_out = register_module("pos_anchor_out", torch::nn::Linear(ph, 3));
    pos_child_in = register_module("pos_child_in", torch::nn::Linear(p, ph));
    pos_child_out = register_module("pos_child_out", torch::nn::Linear(ph, 3));
    init_linear(pos_anchor_in, std::sqrt(2.0));
    init_linear(pos_child_in, std::sqrt(2.0));
    init_linear(pos_anchor_out, 0.01);
    init_linear(pos_child_out, 0.01);
    shape_mod = register_module("shape_mod", EqualLinear(cfg.w_dim, 2 * ph, 1.0f, 0.0f, 0.25f));

    anchor_log_scale_range = {std::log(lay.anchor_scale / 6.0f), std::log(lay.anchor_scale * 3.0f)};
    child_log_scale_range = {std::log(lay.child_scale / 6.0f), std::log(lay.child_scale * 3.0f)};
    rot = register_module("rot", torch::nn::Linear(p, 4));
    log_scale = register_module("log_scale", torch::nn::Linear(p, 3));
    opacity = register_module("opacity", torch::nn::Linear(p, 1));
    init_linear(rot, 0.1);
    init_linear(log_scale, 0.1);
    init_linear(opacity, 0.1, 1.0);

    const int ch = cfg.color_hidden;
    color_feat = register_module("color_feat", torch::nn::Linear(p, ch));
    color_out = register_module("color_out", torch::nn::Linear(ch, 3));
    init_linear(color_feat, std::sqrt(2.0));
    init_linear(color_out, 0.5);
    if (!cfg.monolithic && tag != Component::Glasses) {
        hist_embed = register_module("hist_embed", torch::nn::Linear(kHistDim, cfg.hist_embed));
        hist_gamma = register_module("hist_gamma", torch::nn::Linear(cfg.hist_embed, ch));
        hist_beta = register_module("hist_beta", torch::nn::Linear(cfg.hist_embed, ch));
        init_linear(hist_embed, std::sqrt(2.0) * 3.0);
        init_linear(hist_gamma, 0.25);
        init_linear(hist_beta, 1.0);
    }
}

torch::Tensor SubGeneratorImpl::features(const torch::Tensor& tokens, const torch::Tensor& w) {
    const auto b = tokens.size(0);
    const int p = cfg.point_dim;
    auto a = lrelu(anchor_feat(tokens));  // [B, L, P]
    auto x = child_in(a).unsqueeze(2) + child_embed.unsqueeze(0);  // [B, L, k, P]
    x = lrelu(x * (1 + child_mod(w)).view({b, 1, 1, p}));
    x = lrelu(child_out(x)).reshape({b, int64_t(n_anchor) * n_child, p});
    return torch::cat({a, x}, 1);
}

torch::Tensor SubGeneratorImpl::geometry(const torch::Tensor& feats, const torch::Tensor& w_shape) {
    const auto b = feats.size(0);
    const int ph = cfg.position_hidden;
    const auto fa = feats.narrow(1, 0, n_anchor);
    const auto fc = feats.narrow(1, n_anchor, int64_t(n_anchor) * n_child);
    const auto m = shape_mod(w_shape).view({b, 1, 2 * ph}).chunk(2, -1);

    const auto oa = pos_anchor_out(lrelu(pos_anchor_in(fa) * (1 + m[0]) + m[1]));
    const auto anchor_pos = anchor_base.unsqueeze(0) + anchor_radius * oa;  // [B, L, 3]
    const auto oc = pos_child_out(lrelu(pos_child_in(fc) * (1 + m[0]) + m[1])).view({b, n_anchor, n_child, 3});
    const auto child_pos = anchor_pos.unsqueeze(2) + child_radius * (child_base.unsqueeze(0) + oc);
    const auto pos = torch::cat({anchor_pos, child_pos.reshape({b, -1, 3})}, 1);

    const auto identity = torch::tensor({1.0f, 0.0f, 0.0f, 0.0f});
    const auto q = rot(feats) + identity;

    auto bounded = [](const torch::Tensor& raw, const std::array<float, 2>& range) {
        const float mid = 0.5f * (range[0] + range[1]);
        const float half = 0.5f * (range[1] - range[0]);
        return mid + half * torch::tanh(raw);
    };
    const auto ls_raw = log_scale(feats);
    const auto ls = torch::cat({bounded(ls_raw.narrow(1, 0, n_anchor), anchor_log_scale_range),
                                bounded(ls_raw.narrow(1, n_anchor, ls_raw.size(1) - n_anchor), child_log_scale_range)},
                               1);
    const auto op = opacity(feats);
    return torch::cat({pos, q, ls, op}, -1);
}

torch::Tensor SubGeneratorImpl::colors(const torch::Tensor& feats, const std::optional<torch::Tensor>& hist) {
    const bool wants_hist = !cfg.monolithic && tag != Component::Glasses;
    if (wants_hist && !hist) {
        throw Error(ErrorCode::MissingColorConditioning,
                    std::string(component_name(tag)) + " requires a color histogram");
    }
    if (!wants_hist && hist) {
        throw Error(ErrorCode::UnexpectedColorConditioning,
                    std::string(component_name(tag)) + " takes no color histogram");
    }
    auto cf = color_feat(feats);
    if (hist) {
        const auto b = feats.size(0);
        const auto e = lrelu(hist_embed(*hist));
        cf = cf * (1 + hist_gamma(e).view({b, 1, -1})) + hist_beta(e).view({b, 1, -1});
    }
    return torch::sigmoid(color_out(lrelu(cf)));
}

torch::Tensor SubGeneratorImpl::forward(const torch::Tensor& tokens, const torch::Tensor& w,
                                        const torch::Tensor& w_shape, const std::optional<torch::Tensor>& hist) {
    const auto f = features(tokens, w);
    return torch::cat({geometry(f, w_shape), colors(f, hist)}, -1);
}

torch::Tensor hide_where_inactive(const torch::Tensor& glasses_packed, const torch::Tensor& flag) {
    const auto shift = (1.0f - flag).view({-1, 1}) * kHideSuppression;
    auto parts = glasses_packed.split_with_sizes({attr::Opacity, 1, kPrimitiveFloats - attr::Opacity - 1}, -1);
    return torch::cat({parts[0], parts[1] - shift.unsqueeze(-1), parts[2]}, -1);
}

GeneratorImpl::GeneratorImpl(GeneratorConfig cfg_) : cfg(std::move(cfg_)) {
    if (cfg.monolithic) {
        mapping[0] = register_module("mapping", MappingNetwork(cfg.z_dim, kLabelDim, cfg.mapping_hidden, cfg.w_dim,
                                                                cfg.mapping_lr_mul));
    } else {
        for (auto c : kComponents) {
            mapping[index_of(c)] = register_module(
                "mapping_" + std::string(component_name(c)),
                MappingNetwork(cfg.z_dim, cfg.w_dim, cfg.mapping_hidden, cfg.w_dim, cfg.mapping_lr_mul));
        }
        shape_head = register_module("shape_head",
                                     MappingNetwork(cfg.z_dim, 0, cfg.w_dim, cfg.w_dim, cfg.mapping_lr_mul));
        light_head = register_module("light_head",
                                     MappingNetwork(cfg.z_dim, 0, cfg.w_dim, cfg.w_dim, cfg.mapping_lr_mul));
    }
    backbone = register_module("backbone", Backbone(cfg));
    for (auto c : kComponents) {
        sub[index_of(c)] = register_module("sub_" + std::string(component_name(c)), SubGenerator(cfg, c));
    }
    static const char* names[6] = {"face", "hair", "glasses", "torso", "shape", "light"};
    for (int i = 0; i < 6; ++i) w_mean[i] = register_buffer(std::string("w_mean_") + names[i], torch::zeros({cfg.w_dim}));
}

torch::Tensor GeneratorImpl::map_latent(Component c, const torch::Tensor& z, const torch::Tensor& w_light) {
    if (cfg.monolithic) throw Error(ErrorCode::ConfigError, "monolithic generator has no component mappings");
    return mapping[index_of(c)]->forward(z, w_light);
}

torch::Tensor GeneratorImpl::map_shape(const torch::Tensor& z_shape) { return shape_head->forward(z_shape, {}); }

torch::Tensor GeneratorImpl::map_light(const torch::Tensor& z_light) { return light_head->forward(z_light, {}); }

ComponentLatents GeneratorImpl::map(const LatentBundle& bundle, const torch::Tensor& labels) {
    ComponentLatents out;
    if (cfg.monolithic) {
        if (!labels.defined()) throw Error(ErrorCode::ShapeMismatch, "monolithic mapping needs the label vector");
        const auto w = mapping[0]->forward(bundle.z[0], labels);
        for (auto& wi : out.w) wi = w;
        out.w_shape = w;
        out.w_light = torch::zeros_like(w);
        return out;
    }
    out.w_light = map_light(bundle.z_light);
    out.w_shape = map_shape(bundle.z_shape);
    for (auto c : kComponents) out.w[index_of(c)] = map_latent(c, bundle.z[index_of(c)], out.w_light);
    return out;
}

ComponentLatents GeneratorImpl::truncated(const ComponentLatents& w, double psi) const {
    ComponentLatents out;
    for (int i = 0; i < 4; ++i) out.w[i] = truncate(w.w[i], w_mean[i], psi);
    if (cfg.monolithic) {
        out.w_shape = out.w[0];
        out.w_light = w.w_light;
        return out;
    }
    out.w_shape = truncate(w.w_shape, w_mean[4], psi);
    out.w_light = truncate(w.w_light, w_mean[5], psi);
    return out;
}

torch::Tensor GeneratorImpl::generate_component(Component c, const torch::Tensor& tokens, const torch::Tensor& w,
                                                const torch::Tensor& w_shape,
                                                const std::optional<torch::Tensor>& hist) {
    return sub[index_of(c)]->forward(tokens, w, w_shape, hist);
}

SynthesisOutput GeneratorImpl::synthesize_from_w(const ComponentLatents& w, const ConditioningBatch& cond) {
    SynthesisOutput out;
    out.latents = w;
    const auto blocks = backbone->forward(w.w);
    for (auto c : kComponents) {
        const int i = index_of(c);
        const auto hist = cfg.monolithic ? std::nullopt : cond.histogram(c);
        out.components[i] = generate_component(c, blocks[i], w.w[i], w.w_shape, hist);
    }
    auto glasses = out.components[index_of(Component::Glasses)];
    if (!cfg.monolithic) glasses = hide_where_inactive(glasses, cond.glasses);
    out.scene = torch::cat({out.components[0], out.components[1], glasses, out.components[3]}, 1);
    return out;
}

SynthesisOutput GeneratorImpl::synthesize(const LatentBundle& bundle, const ConditioningBatch& cond, double psi) {
    const auto w = map(bundle, cfg.monolithic ? cond.labels() : torch::Tensor());
    return synthesize_from_w(psi == 1.0 ? w : truncated(w, psi), cond);
}

void GeneratorImpl::update_w_mean(const ComponentLatents& w, double beta) {
    torch::NoGradGuard ng;
    const torch::Tensor* src[6] = {&w.w[0], &w.w[1], &w.w[2], &w.w[3], &w.w_shape, &w.w_light};
    for (int i = 0; i < 6; ++i) w_mean[i].copy_(torch::lerp(src[i]->detach().mean(0), w_mean[i], beta));
}

torch::Tensor GeneratorImpl::estimate_w_mean(Component c, int64_t samples, std::uint64_t seed) {
    torch::NoGradGuard ng;
    std::mt19937_64 rng(seed);
    auto sum = torch::zeros({cfg.w_dim}, torch::kFloat64);
    const int64_t chunk = 4096;
    for (int64_t done = 0; done < samples; done += chunk) {
        const auto n = std::min(chunk, samples - done);
        const auto z = randn_from(rng, n, cfg.z_dim);
        torch::Tensor w;
        if (cfg.monolithic) {
            throw Error(ErrorCode::ConfigError, "w-mean estimation needs component mappings");
        }
        w = map_latent(c, z, map_light(randn_from(rng, n, cfg.z_dim)));
        sum += w.to(torch::kFloat64).sum(0);
    }
    return (sum / double(samples)).to(torch::kFloat32);
}

void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src) {
    torch::NoGradGuard ng;
    auto sp = src.named_parameters(true);
    for (auto& p : dst.named_parameters(true)) p.value().copy_(sp[p.key()]);
    auto sb = src.named_buffers(true);
    for (auto& b : dst.named_buffers(true)) b.value().copy_(sb[b.key()]);
}

void ema_update(torch::nn::Module& dst, const torch::nn::Module& src, double beta) {
    torch::NoGradGuard ng;
    auto sp = src.named_parameters(true);
    for (auto& p : dst.named_parameters(true)) p.value().copy_(torch::lerp(sp[p.key()], p.value(), beta));
    auto sb = src.named_buffers(true);
    for (auto& b : dst.named_buffers(true)) b.value().copy_(sb[b.key()]);
}

GaussianSet to_gaussian_set(Component c, const torch::Tensor& packed_entry) {
    const auto t = packed_entry.detach().contiguous();
    return GaussianSet::from_packed(c, std::span<const float>(t.data_ptr<float>(), t.numel()));
}

}  // namespace cosy
