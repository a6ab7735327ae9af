#pragma once

// Compositional Gaussian generator: four per-component mapping networks that
// share a light latent, a token backbone partitioned into per-component
// blocks, and one hierarchical point sub-generator per component. The shape
// latent reaches only the position decoders; color histograms reach only the
// color decoders.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cosy/splat.hpp"
#include "cosy/toyset.hpp"

namespace cosy {

struct GeneratorConfig {
    int z_dim = 512;
    int w_dim = 512;
    int mapping_hidden = 512;
    float mapping_lr_mul = 0.01f;
    int token_dim = 128;
    int backbone_depth = 2;
    int heads = 4;
    std::array<int, 4> anchors{64, 64, 16, 64};   // face, hair, glasses, torso
    std::array<int, 4> children{16, 16, 8, 16};
    int point_dim = 64;      // per-primitive feature width
    int position_hidden = 64;
    int color_hidden = 64;
    int hist_embed = 64;
    bool cross_block_attention = false;
    /// Single shared latent conditioned on the label vector, no histograms,
    /// no hiding: the monolithic conditional baseline.
    bool monolithic = false;

    int primitives(Component c) const {
        const int i = index_of(c);
        return anchors[i] * (1 + children[i]);
    }
    int total_primitives() const;
    std::string describe() const;
};

/// Six latents, each [B, z_dim].
struct LatentBundle {
    std::array<torch::Tensor, 4> z;  // face, hair, glasses, torso
    torch::Tensor z_shape;
    torch::Tensor z_light;

    int64_t batch() const { return z_shape.size(0); }
    LatentBundle clone() const;
    static LatentBundle sample(int64_t batch, int z_dim, std::mt19937_64& rng);
};

/// Fills a [rows, dim] tensor with standard normals from `rng`.
torch::Tensor randn_from(std::mt19937_64& rng, int64_t rows, int64_t dim);

struct ComponentLatents {
    std::array<torch::Tensor, 4> w;
    torch::Tensor w_shape;
    torch::Tensor w_light;
};

/// Batched color conditioning: three [B, 30] histograms and a [B] flag.
struct ConditioningBatch {
    torch::Tensor hair;
    torch::Tensor skin;
    torch::Tensor torso;
    torch::Tensor glasses;

    int64_t batch() const { return glasses.size(0); }
    /// The histogram a component's color decoder receives (none for glasses).
    std::optional<torch::Tensor> histogram(Component c) const;
    /// [B, 91] hair || skin || torso || flag.
    torch::Tensor labels() const;
    static ConditioningBatch from(const std::vector<ColorConditioning>& items);
    ColorConditioning item(int64_t index) const;
};

/// Equalized-learning-rate linear layer.
struct EqualLinearImpl : torch::nn::Module {
    EqualLinearImpl(int in, int out, float lr_mul = 1.0f, float bias_init = 0.0f, float gain = 1.0f);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight;
    torch::Tensor bias;
    float scale;
    float lr_mul;
};
TORCH_MODULE(EqualLinear);

torch::Tensor normalize_2nd_moment(const torch::Tensor& x, double eps = 1e-8);

/// Two-layer mapping on concat(normalize(z), normalize(context)).
struct MappingNetworkImpl : torch::nn::Module {
    MappingNetworkImpl(int in_dim, int context_dim, int hidden, int out_dim, float lr_mul);
    torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& context);

    EqualLinear fc0{nullptr}, fc1{nullptr};
    int context_dim;
};
TORCH_MODULE(MappingNetwork);

/// w' = w_mean + psi (w - w_mean).
torch::Tensor truncate(const torch::Tensor& w, const torch::Tensor& w_mean, double psi);

/// One transformer layer with per-token adaptive layer-norm modulation.
struct ModulatedBlockImpl : torch::nn::Module {
    ModulatedBlockImpl(int dim, int heads, int w_dim);
    /// x [B, T, C]; w [B, T, w_dim] per-token modulating latent.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

    int dim, heads;
    EqualLinear mod{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(ModulatedBlock);

struct BackboneImpl : torch::nn::Module {
    BackboneImpl(const GeneratorConfig& cfg);
    /// Per-component token features [B, L_c, C]. With block isolation, block c
    /// depends only on w[c].
    std::array<torch::Tensor, 4> forward(const std::array<torch::Tensor, 4>& w);
    /// One isolated block; throws ShapeMismatch with cross-block attention.
    torch::Tensor block(Component c, const torch::Tensor& w);

    GeneratorConfig cfg;
    std::array<torch::Tensor, 4> tokens;
    torch::nn::ModuleList blocks;
};
TORCH_MODULE(Backbone);

/// Hierarchical point generator of one component: anchors plus children.
struct SubGeneratorImpl : torch::nn::Module {
    SubGeneratorImpl(const GeneratorConfig& cfg, Component tag);

    /// Per-primitive features [B, N, point_dim] (anchors first, then children
    /// in anchor-major order). Depends on tokens and w only.
    torch::Tensor features(const torch::Tensor& tokens, const torch::Tensor& w);
    /// Position, rotation, log-scale and opacity logit [B, N, 11]. Positions
    /// are the only outputs that read w_shape.
    torch::Tensor geometry(const torch::Tensor& feats, const torch::Tensor& w_shape);
    /// Activated colors [B, N, 3] from features and the region histogram.
    torch::Tensor colors(const torch::Tensor& feats, const std::optional<torch::Tensor>& hist);
    /// Packed [B, N, 14].
    torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& w, const torch::Tensor& w_shape,
                          const std::optional<torch::Tensor>& hist);

    GeneratorConfig cfg;
    Component tag;
    int n_anchor, n_child;
    torch::nn::Linear anchor_feat{nullptr}, child_in{nullptr}, child_out{nullptr};
    EqualLinear child_mod{nullptr};
    torch::Tensor child_embed;
    torch::Tensor anchor_base, child_base;
    // position decoders (shape modulated)
    torch::nn::Linear pos_anchor_in{nullptr}, pos_anchor_out{nullptr}, pos_child_in{nullptr},
        pos_child_out{nullptr};
    EqualLinear shape_mod{nullptr};
    torch::nn::Linear rot{nullptr}, log_scale{nullptr}, opacity{nullptr};
    // color-mod decoder
    torch::nn::Linear color_feat{nullptr}, color_out{nullptr};
    torch::nn::Linear hist_embed{nullptr}, hist_gamma{nullptr}, hist_beta{nullptr};
    float anchor_radius, child_radius;
    std::array<float, 2> anchor_log_scale_range, child_log_scale_range;
};
TORCH_MODULE(SubGenerator);

struct SynthesisOutput {
    std::array<torch::Tensor, 4> components;  // packed [B, N_c, 14], glasses unhidden
    torch::Tensor scene;                      // packed [B, N, 14], glasses hidden where flag is 0
    ComponentLatents latents;
};

struct GeneratorImpl : torch::nn::Module {
    explicit GeneratorImpl(GeneratorConfig cfg);

    /// z -> w for one component.
    torch::Tensor map_latent(Component c, const torch::Tensor& z, const torch::Tensor& w_light);
    torch::Tensor map_shape(const torch::Tensor& z_shape);
    torch::Tensor map_light(const torch::Tensor& z_light);
    /// All six w (no truncation). `labels` [B, 91] is consumed only in
    /// monolithic mode.
    ComponentLatents map(const LatentBundle& bundle, const torch::Tensor& labels = {});
    ComponentLatents truncated(const ComponentLatents& w, double psi) const;

    /// Packed component from its token block.
    torch::Tensor generate_component(Component c, const torch::Tensor& tokens, const torch::Tensor& w,
                                     const torch::Tensor& w_shape, const std::optional<torch::Tensor>& hist);
    SynthesisOutput synthesize_from_w(const ComponentLatents& w, const ConditioningBatch& cond);
    SynthesisOutput synthesize(const LatentBundle& bundle, const ConditioningBatch& cond, double psi = 1.0);

    /// Tracks the truncation anchors as a running mean of mapped latents.
    void update_w_mean(const ComponentLatents& w, double beta = 0.995);
    /// Monte-Carlo estimate of the mean mapped latent of one component.
    torch::Tensor estimate_w_mean(Component c, int64_t samples, std::uint64_t seed);

    GeneratorConfig cfg;
    std::array<MappingNetwork, 4> mapping{nullptr, nullptr, nullptr, nullptr};
    MappingNetwork shape_head{nullptr}, light_head{nullptr};
    Backbone backbone{nullptr};
    std::array<SubGenerator, 4> sub{nullptr, nullptr, nullptr, nullptr};
    // w_mean buffers: face, hair, glasses, torso, shape, light
    std::array<torch::Tensor, 6> w_mean;
};
TORCH_MODULE(Generator);

/// Glasses logits shifted by the suppression where the flag is 0.
torch::Tensor hide_where_inactive(const torch::Tensor& glasses_packed, const torch::Tensor& flag);

/// Copies parameters and buffers of `src` into `dst` (same architecture).
void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src);
/// dst = beta * dst + (1 - beta) * src on parameters; buffers copied.
void ema_update(torch::nn::Module& dst, const torch::nn::Module& src, double beta);

/// Converts packed [N, 14] rows of one batch entry into a GaussianSet.
GaussianSet to_gaussian_set(Component c, const torch::Tensor& packed_entry);

}  // namespace cosy
