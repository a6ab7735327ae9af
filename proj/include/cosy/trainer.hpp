#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "cosy/checkpoint.hpp"
#include "cosy/config.hpp"
#include "cosy/discriminator.hpp"
#include "cosy/generator.hpp"
#include "cosy/toyset.hpp"

namespace cosy {

struct TrainConfig {
    std::int64_t steps = 20000;
    std::int64_t batch = 16;
    double g_lr = 2.5e-3, d_lr = 2.5e-3;
    double beta1 = 0.0, beta2 = 0.99;
    double r1_weight = 1.0;
    std::int64_t r1_interval = 16;
    double mixing_prob = 0.2;
    double light_reg_weight = 1.0;
    double light_target = 0.3;
    double ema_geom_weight = 1.0;
    double ema_decay = 0.999;
    double g_ema_decay = 0.999;
    double w_mean_decay = 0.995;
    std::int64_t light_batch = 4;

    static TrainConfig from(const RunConfig& cfg);
};

struct MixResult {
    LatentBundle bundle;
    std::vector<int> mixed;  // per sample: component index, or -1
};

/// Per sample, with probability p resamples exactly one uniformly chosen
/// component latent. z_shape and z_light are never touched.
MixResult mix_latents(const LatentBundle& bundle, double p, std::mt19937_64& rng);

/// Replaces the conditioning of each mixed component with a fresh draw from
/// the dataset's label distribution (glasses: a fresh flag at `glasses_rate`).
void resample_mixed_labels(std::vector<ColorConditioning>& labels, const std::vector<int>& mixed,
                           DatasetIterator& data, double glasses_rate, std::mt19937_64& rng);

/// Hinge on the perceptual distance between renders under two light latents:
/// mean over pairs of max(0, d - target)^2, plus the mean distance.
struct LightLoss {
    torch::Tensor loss;
    double mean_distance = 0.0;
};
LightLoss light_consistency_loss(Generator& g, PerceptualExtractor& percep, const LatentBundle& bundle,
                                 const ConditioningBatch& cond, const std::vector<Camera>& cameras,
                                 double target, std::mt19937_64& rng);

struct EmaFaceGeometry {
    torch::Tensor xyz;      // [N, 3]
    torch::Tensor opacity;  // [N] activated
    bool initialized = false;
};

/// Mean over the batch of the per-sample MSE over the 4N xyz and opacity
/// terms. face: packed [B, N, 14]. Zero (and no graph) before initialization.
torch::Tensor ema_geometry_loss(const torch::Tensor& face, const EmaFaceGeometry& ema);
/// ema = decay * ema + (1 - decay) * batch mean of the detached face geometry;
/// the first call initializes to the batch mean.
void ema_geometry_update(const torch::Tensor& face, EmaFaceGeometry& ema, double decay);

/// Images composited over a white background, [B, 3, H, W].
torch::Tensor render_images(const torch::Tensor& scene, const std::vector<Camera>& cameras);

struct StepScalars {
    std::int64_t step = 0;
    double d_loss = 0, d_real = 0, d_fake = 0, r1 = 0;
    double g_adv = 0, g_light = 0, g_ema = 0, g_total = 0;
    double g_grad_norm = 0, d_grad_norm = 0;
    double light_distance = 0;
    double mixed_fraction = 0;
};

/// Generator, its weight EMA, discriminator, optimizers and loss buffers.
class Trainer {
public:
    explicit Trainer(const RunConfig& cfg);
    /// Rebuilds the exact training state stored in a checkpoint.
    static std::unique_ptr<Trainer> resume(const Checkpoint& ckpt);

    StepScalars step();
    Checkpoint checkpoint() const;

    const RunConfig& config() const { return cfg_; }
    const TrainConfig& train_config() const { return tc_; }
    std::int64_t current_step() const { return step_; }
    Generator& generator() { return g_; }
    Generator& generator_ema() { return g_ema_; }
    Discriminator& discriminator() { return d_; }
    DatasetIterator& data() { return *data_; }
    const EmaFaceGeometry& ema_geometry() const { return ema_; }

    struct RealBatch {
        torch::Tensor images;  // [B, 3, H, W]
        torch::Tensor cond;    // [B, 116]
        std::vector<ColorConditioning> labels;
    };
    struct FakeBatch {
        LatentBundle bundle;
        std::vector<ColorConditioning> labels;
        std::vector<Camera> cameras;
        ConditioningBatch cond;
        torch::Tensor cond_vec;  // [B, 116], what D sees
        std::vector<int> mixed;
    };
    RealBatch real_batch();
    /// Latents (mixed with the configured probability), labels drawn from the
    /// data distribution (the real labels rotated by one), dataset cameras.
    FakeBatch fake_batch(const std::vector<ColorConditioning>& real_labels, double mixing_prob,
                         std::mt19937_64& rng);
    torch::optim::Adam& optimizer_g() { return *opt_g_; }
    torch::optim::Adam& optimizer_d() { return *opt_d_; }

private:
    void restore(const Checkpoint& ckpt);
    void apply_r1(const torch::Tensor& real, const torch::Tensor& cond, StepScalars& s);

    RunConfig cfg_;
    TrainConfig tc_;
    Generator g_{nullptr}, g_ema_{nullptr};
    Discriminator d_{nullptr};
    PerceptualExtractor percep_{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
    std::unique_ptr<DatasetIterator> data_;
    EmaFaceGeometry ema_;
    std::int64_t step_ = 0;
};

/// Drives a trainer to its configured step count, writing metrics.csv,
/// periodic checkpoints and desk-FID rows into `out_dir`. Throws
/// Error(NonFiniteLoss) after dumping the offending scalars.
struct TrainHooks {
    std::function<void(const StepScalars&)> on_step;
    std::function<double(Trainer&)> fid;  // returns desk-FID of the EMA generator
};
void run_training(Trainer& trainer, const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

}  // namespace cosy
