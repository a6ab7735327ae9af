#pragma once

#include <torch/torch.h>

#include "cosy/generator.hpp"

namespace cosy {

struct DiscriminatorConfig {
    int resolution = 64;
    int base_width = 64;
    int max_width = 256;
    int feature_dim = 256;
    int cond_dim = kConditioningDim;
};

/// Equalized-learning-rate convolution.
struct EqualConvImpl : torch::nn::Module {
    EqualConvImpl(int in, int out, int kernel, int stride);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight, bias;
    float scale;
    int stride, padding;
};
TORCH_MODULE(EqualConv);

/// Strided conv pyramid down to 4x4, a feature vector f, then
///   score = head(f) + sum(f * proj(cond)) / sqrt(dim).
struct DiscriminatorImpl : torch::nn::Module {
    explicit DiscriminatorImpl(DiscriminatorConfig cfg);

    /// image [B, 3, H, W] in [0, 1]; cond [B, 116]. Returns logits [B].
    torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& cond);
    torch::Tensor features(const torch::Tensor& image);
    torch::Tensor unconditional(const torch::Tensor& f);
    torch::Tensor projection(const torch::Tensor& f, const torch::Tensor& cond);

    DiscriminatorConfig cfg;
    EqualConv from_rgb{nullptr};
    torch::nn::ModuleList stages;
    EqualLinear fc{nullptr}, head{nullptr};
    torch::Tensor proj_weight;  // [feature_dim, cond_dim], no bias
    float proj_scale;
};
TORCH_MODULE(Discriminator);

/// Frozen, seeded random multi-scale conv features: the perceptual distance
/// and the evaluation embedding. Three scales, 32 channels each.
struct PerceptualExtractorImpl : torch::nn::Module {
    explicit PerceptualExtractorImpl(std::uint64_t seed = 20240601, int channels = 32);

    /// Per-scale feature maps of an image batch in [0, 1].
    std::vector<torch::Tensor> feature_maps(const torch::Tensor& image);
    /// Mean over scales of the spatially averaged squared distance between
    /// channel-normalized features. `mask` [B, 1, H, W] restricts the average.
    torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask = {});
    /// 256-d pooled embedding for Fréchet statistics.
    torch::Tensor embed(const torch::Tensor& image);

    std::vector<torch::Tensor> weights;
    std::vector<torch::Tensor> biases;
    int channels;
    static constexpr int kScales = 3;
    static constexpr int kEmbedDim = 256;
};
TORCH_MODULE(PerceptualExtractor);

}  // namespace cosy
