#include "cosy/discriminator.hpp"

#include <cmath>
#include <random>

#include "cosy/error.hpp"

namespace cosy {

namespace {

namespace F = torch::nn::functional;

torch::Tensor lrelu(const torch::Tensor& x) {
    return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)) * std::sqrt(2.0);
}

}  // namespace

EqualConvImpl::EqualConvImpl(int in, int out, int kernel, int stride_)
    : scale(1.0f / std::sqrt(float(in * kernel * kernel))), stride(stride_), padding(kernel / 2) {
    weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
    bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqualConvImpl::forward(const torch::Tensor& x) {
    return F::conv2d(x, weight * scale, F::Conv2dFuncOptions().bias(bias).stride(stride).padding(padding));
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig cfg_) : cfg(cfg_) {
    if (cfg.resolution < 8 || (cfg.resolution & (cfg.resolution - 1)) != 0) {
        throw Error(ErrorCode::ConfigError, "discriminator resolution must be a power of two >= 8");
    }
    int width = cfg.base_width;
    from_rgb = register_module("from_rgb", EqualConv(3, width, 1, 1));
    for (int res = cfg.resolution; res > 4; res /= 2) {
        const int next = std::min(width * 2, cfg.max_width);
        stages->push_back(EqualConv(width, res == cfg.resolution ? width : next, 3, 2));
        if (res != cfg.resolution) width = next;
    }
    register_module("stages", stages);
    fc = register_module("fc", EqualLinear(width * 16, cfg.feature_dim));
    head = register_module("head", EqualLinear(cfg.feature_dim, 1));
    proj_weight = register_parameter("proj_weight", torch::randn({cfg.feature_dim, cfg.cond_dim}));
    proj_scale = 1.0f / std::sqrt(float(cfg.cond_dim));
}

torch::Tensor DiscriminatorImpl::features(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != cfg.resolution || image.size(3) != cfg.resolution) {
        throw Error(ErrorCode::ShapeMismatch, "discriminator expects [B, 3, " + std::to_string(cfg.resolution) + ", " +
                                                  std::to_string(cfg.resolution) + "] images");
    }
    auto x = lrelu(from_rgb(image * 2.0 - 1.0));
    for (auto& s : *stages) x = lrelu(s->as<EqualConv>()->forward(x));
    return lrelu(fc(x.flatten(1)));
}

torch::Tensor DiscriminatorImpl::unconditional(const torch::Tensor& f) { return head(f).squeeze(1); }

torch::Tensor DiscriminatorImpl::projection(const torch::Tensor& f, const torch::Tensor& cond) {
    if (cond.dim() != 2 || cond.size(1) != cfg.cond_dim) {
        throw Error(ErrorCode::ShapeMismatch, "conditioning must be [B, " + std::to_string(cfg.cond_dim) + "]");
    }
    const auto p = torch::matmul(cond, proj_weight.t()) * proj_scale;
    return (f * p).sum(1) / std::sqrt(double(cfg.feature_dim));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image, const torch::Tensor& cond) {
    const auto f = features(image);
    return unconditional(f) + projection(f, cond);
}

PerceptualExtractorImpl::PerceptualExtractorImpl(std::uint64_t seed, int channels_) : channels(channels_) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    int in = 3;
    for (int s = 0; s < kScales; ++s) {
        auto w = torch::empty({channels, in, 3, 3});
        const float std = std::sqrt(2.0f / float(in * 9));
        float* p = w.data_ptr<float>();
        for (int64_t i = 0; i < w.numel(); ++i) p[i] = g(rng) * std;
        auto b = torch::empty({channels});
        for (int64_t i = 0; i < channels; ++i) b[i] = 0.1f * g(rng);
        weights.push_back(register_buffer("w" + std::to_string(s), w));
        biases.push_back(register_buffer("b" + std::to_string(s), b));
        in = channels;
    }
}

std::vector<torch::Tensor> PerceptualExtractorImpl::feature_maps(const torch::Tensor& image) {
    std::vector<torch::Tensor> maps;
    auto x = image * 2.0 - 1.0;
    for (int s = 0; s < kScales; ++s) {
        if (s > 0) x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
        x = F::leaky_relu(F::conv2d(x, weights[s], F::Conv2dFuncOptions().bias(biases[s]).padding(1)),
                          F::LeakyReLUFuncOptions().negative_slope(0.2));
        maps.push_back(x);
    }
    return maps;
}

torch::Tensor PerceptualExtractorImpl::distance(const torch::Tensor& a, const torch::Tensor& b,
                                                const torch::Tensor& mask) {
    const auto fa = feature_maps(a), fb = feature_maps(b);
    auto total = torch::zeros({a.size(0)});
    auto m = mask;
    for (int s = 0; s < kScales; ++s) {
        const auto na = fa[s] * (fa[s].square().sum(1, true) + 1e-10).rsqrt();
        const auto nb = fb[s] * (fb[s].square().sum(1, true) + 1e-10).rsqrt();
        const auto d = (na - nb).square().sum(1, true);  // [B, 1, h, w]
        if (!m.defined()) {
            total = total + d.mean({1, 2, 3});
        } else {
            if (s > 0) m = F::avg_pool2d(m, F::AvgPool2dFuncOptions(2));
            total = total + (d * m).sum({1, 2, 3}) / m.sum({1, 2, 3}).clamp_min(1e-8);
        }
    }
    return total / double(kScales);
}

torch::Tensor PerceptualExtractorImpl::embed(const torch::Tensor& image) {
    const auto maps = feature_maps(image);
    std::vector<torch::Tensor> parts;
    for (int s = 0; s < 2; ++s) {
        parts.push_back(maps[s].mean({2, 3}));
        parts.push_back(maps[s].std({2, 3}));
    }
    parts.push_back(F::adaptive_avg_pool2d(maps[2], F::AdaptiveAvgPool2dFuncOptions(2)).flatten(1));
    return torch::cat(parts, 1);
}

}  // namespace cosy
