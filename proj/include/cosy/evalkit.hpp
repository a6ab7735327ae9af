#pragma once

// Evaluation protocols on a trained generator: desk-FID variants, masked
// edit stability, glasses recall, light-context distance and per-component
// PCA directions.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "cosy/checkpoint.hpp"
#include "cosy/discriminator.hpp"
#include "cosy/generator.hpp"
#include "cosy/metrics.hpp"
#include "cosy/toyset.hpp"

namespace cosy {

/// Image -> feature rows. Images [B, 3, H, W] in [0, 1].
using FeatureFn = std::function<torch::Tensor(const torch::Tensor&)>;
FeatureFn default_features(PerceptualExtractor extractor);

/// Features of `n` real images taken in order from an iterator seeded with
/// `seed` (a seeded shuffle for corpora).
Eigen::MatrixXd real_features(const DatasetConfig& data, int n, std::uint64_t seed, const FeatureFn& features);

enum class FidMode { Fid, Fid3d, FidMix };
FidMode fid_mode_from_name(const std::string& name);

/// Fakes: labels drawn from the dataset, latents from `seed`, synthesis
/// without the camera, render camera drawn independently from the dataset
/// camera distribution. FidMix forces latent mixing on every bundle.
Eigen::MatrixXd fake_features(Generator& g, DatasetIterator& data, int n, FidMode mode, double psi,
                              std::uint64_t seed, const FeatureFn& features);

/// Per-pixel five-way region classifier trained on corpus masks; the shared
/// mask source when comparing generators that do not expose components.
struct ToyParserImpl : torch::nn::Module {
    ToyParserImpl();
    /// Logits [B, 5, H, W].
    torch::Tensor forward(const torch::Tensor& image);
    /// Region ids [B, H, W].
    torch::Tensor predict(const torch::Tensor& image);

    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(ToyParser);

struct ParserReport {
    double train_accuracy = 0.0;
    double holdout_accuracy = 0.0;
};
ParserReport train_parser(ToyParser& parser, const DatasetConfig& data, int steps, int batch, std::uint64_t seed);
void save_parser(const std::filesystem::path& path, ToyParser& parser);
void load_parser(const std::filesystem::path& path, ToyParser& parser);

enum class EditKind { Hair, Glasses };
EditKind edit_kind_from_name(const std::string& name);

enum class MaskSource {
    Parser,       // regions predicted on the pre- and post-edit renders
    Attribution,  // composited weight of the edited component's primitives
};

struct StabilityOptions {
    EditKind edit = EditKind::Hair;
    MaskSource masks = MaskSource::Parser;
    int pairs = 1000;
    double psi = 1.0;
    std::uint64_t seed = 1;
    int dilate = 1;  // px grown around the edited region
};

/// Mean over pairs of the perceptual distance restricted to pixels outside
/// the edited region (the union over both renders, dilated).
///   hair:    component generator: new hair latent and new hair histogram;
///            monolithic: new hair histogram (its only hair control)
///   glasses: flag 0 -> 1 on samples drawn without glasses
/// `edit_none` re-renders the same bundle instead (sanity: 0).
double edit_stability(Generator& g, DatasetIterator& data, PerceptualExtractor& percep, ToyParser* parser,
                      const StabilityOptions& opt, bool edit_none = false);

/// Fraction of frontal renders detected as wearing glasses after switching
/// the flag on for `n` samples drawn without glasses.
double glasses_recall(Generator& g, DatasetIterator& data, int n, double psi, std::uint64_t seed,
                      const std::function<bool(std::span<const float>, int, int)>& detector);

/// Mean perceptual distance between renders that differ only in z_light.
double light_distance(Generator& g, DatasetIterator& data, PerceptualExtractor& percep, int n, std::uint64_t seed);

/// Principal directions of one component's mapped latents (context latent
/// sampled alongside), from streamed moments over `samples` draws.
PcaResult pca_directions(Generator& g, Component c, int64_t samples, int k, std::uint64_t seed);

/// PCA sidecar.
///   "CSYP" | version u32 | checkpoint digest u64 | k u32 | dim u32
///   per component (face, hair, glasses, torso):
///     mean f32[dim] | directions f32[k*dim] | stddev f32[k]
struct PcaSidecar {
    std::uint64_t checkpoint_digest = 0;
    std::array<PcaResult, 4> components;
};
std::string encode_pca_sidecar(const PcaSidecar& s);
PcaSidecar decode_pca_sidecar(const std::string& bytes);

/// Builds the generator stored under `prefix` ("G_ema." or "G.").
Generator generator_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "G_ema.");
/// FNV-1a 64 over the encoded checkpoint; ties sidecars to checkpoints.
std::uint64_t checkpoint_content_digest(const Checkpoint& ckpt);

/// Renders a batch with one camera per sample, over white, no grad.
torch::Tensor render_no_grad(const torch::Tensor& scene, const std::vector<Camera>& cameras);

}  // namespace cosy
