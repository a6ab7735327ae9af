#pragma once

// Procedural toy heads: an ellipsoid head with neck, a hair cap, a box torso
// and optional planar glasses frames, Lambertian-shaded over a white
// background, plus the region-histogram label pipeline.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cosy/camera.hpp"

namespace cosy {

inline constexpr int kHistBins = 10;
inline constexpr int kHistDim = 3 * kHistBins;  // R || G || B
inline constexpr int kCameraDim = 25;
inline constexpr int kLabelDim = 3 * kHistDim + 1;          // hair, skin, torso, glasses flag
inline constexpr int kConditioningDim = kCameraDim + kLabelDim;  // 116

using Histogram = std::array<float, kHistDim>;

/// Region ids used in mask maps.
enum class Region : std::uint8_t { Background = 0, Skin = 1, Hair = 2, Torso = 3, Glasses = 4 };

struct ColorConditioning {
    Histogram hair{};
    Histogram skin{};
    Histogram torso{};
    float glasses_flag = 0.0f;

    /// hair || skin || torso || flag (91 values).
    std::array<float, kLabelDim> flatten() const;
    static ColorConditioning unflatten(std::span<const float> labels);
    bool operator==(const ColorConditioning&) const = default;
};

/// True when every channel of `h` is non-negative and sums to 1 within tol.
bool histogram_is_simplex(std::span<const float> h, float tol = 1e-5f);

/// Camera || labels, 116 values; the discriminator's conditioning input.
std::array<float, kConditioningDim> conditioning_vector(const Camera& camera, const ColorConditioning& labels);

/// Rebuilds a camera from its 25-d flattened form.
Camera camera_from_flat(std::span<const float> flat, int width, int height);

struct PaletteConfig {
    double glasses_rate = 0.3;
    /// Probability that hair color is drawn conditioned on skin tone.
    double hair_skin_correlation = 0.7;
    double ambient = 0.35;
    double yaw_range_deg = 60.0;
    double pitch_range_deg = 20.0;
};

/// Sampled scene parameters. All geometry is in world units, y up, the
/// head centered at the origin and facing +z.
struct ToyScene {
    Eigen::Vector3d head_radii;
    Eigen::Vector3d neck_center;
    Eigen::Vector3d neck_radii;
    Eigen::Vector3d hair_radii;
    double fringe_height = 0.0;  // hair covers y above this on the front
    double hair_length = 0.0;    // hair reaches down to -hair_length at the back
    Eigen::Vector3d torso_center;
    Eigen::Vector3d torso_half;
    bool glasses = false;
    double lens_radius = 0.1;
    double frame_width = 0.035;
    double lens_spacing = 0.17;
    double eye_height = 0.05;
    Eigen::Vector3d skin_albedo;
    Eigen::Vector3d hair_albedo;
    Eigen::Vector3d torso_albedo;
    Eigen::Vector3d light_dir;  // unit, world space, points toward the light
    double ambient = 0.35;
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
};

inline const Eigen::Vector3d kFrameAlbedo{0.06, 0.08, 0.45};

/// Lambertian shading factor for a unit normal.
double lambert(const ToyScene& scene, const Eigen::Vector3d& normal);

struct ToySample {
    int width = 0;
    int height = 0;
    std::vector<float> image;          // H*W*3, values k/255
    std::vector<std::uint8_t> regions;  // H*W Region ids
    Camera camera;
    ColorConditioning labels;
    ToyScene scene;

    std::vector<bool> mask(Region r) const;
};

ToyScene sample_toy_scene(std::mt19937_64& rng, const PaletteConfig& palette);

/// Ray-casts the scene. Regions are the first surface hit per pixel.
ToySample render_toy(const ToyScene& scene, const Camera& camera);

Camera toy_camera(double yaw_deg, double pitch_deg, int resolution);

inline constexpr int kDefaultShrink = 2;

/// Draws scenes until every labelled region survives erosion, then labels.
ToySample generate_sample(std::mt19937_64& rng, const PaletteConfig& palette, int resolution = 64,
                          int shrink_radius = kDefaultShrink);

/// Square (Chebyshev) erosion; pixels outside the image count as unset.
std::vector<bool> erode(const std::vector<bool>& mask, int width, int height, int radius);

/// Per-channel 10-bin histogram of masked pixels after erosion, each channel
/// normalized to sum 1. Bin k covers [k/10, (k+1)/10); 1.0 falls in bin 9.
/// Throws Error(EmptyRegion) if erosion empties the mask.
Histogram color_histogram(std::span<const float> image, const std::vector<bool>& mask, int width, int height,
                          int shrink_radius = kDefaultShrink);

/// Labels recomputed from a sample's own image and masks.
ColorConditioning extract_labels(const ToySample& sample, int shrink_radius = kDefaultShrink);

struct DatasetItem {
    std::vector<float> image;  // H*W*3
    std::array<float, kCameraDim> camera_flat{};
    ColorConditioning labels;
    std::array<float, kConditioningDim> conditioning() const;
};

struct DatasetConfig {
    std::uint64_t seed = 7;
    int resolution = 64;
    int shrink_radius = kDefaultShrink;
    PaletteConfig palette;
    /// Directory of an on-disk corpus; empty streams procedurally.
    std::filesystem::path corpus_dir;
};

/// On-disk corpus.
///
///   meta:        header  "CSYD" | version u32 | count u32 | width u32 | height u32 | shrink u32
///                records count x { camera f32[25] | labels f32[91] | image_offset u64 | mask_offset u64 }
///   images.bin:  u8 RGB, H*W*3 per sample, at image_offset
///   masks.bin:   u8 Region ids, H*W per sample, at mask_offset
class ToyCorpus {
public:
    static void write(const std::filesystem::path& dir, std::uint64_t seed, int count, const DatasetConfig& cfg,
                      const std::function<void(int)>& progress = {});
    static ToyCorpus load(const std::filesystem::path& dir);

    int size() const { return count_; }
    int width() const { return width_; }
    int height() const { return height_; }
    DatasetItem item(int index) const;
    std::vector<std::uint8_t> regions(int index) const;

private:
    int count_ = 0;
    int width_ = 0;
    int height_ = 0;
    std::vector<float> meta_;  // count * (25 + 91)
    std::vector<std::uint8_t> images_;
    std::vector<std::uint8_t> masks_;
};

/// Deterministic sample stream: procedural (sample i seeded from (seed, i))
/// or cycling through a corpus in a seeded shuffled order.
class DatasetIterator {
public:
    explicit DatasetIterator(DatasetConfig cfg);

    DatasetItem next();
    /// Draws a full label set from the dataset's label distribution.
    ColorConditioning sample_labels(std::mt19937_64& rng);
    /// Draws a region histogram from the dataset's label distribution.
    Histogram sample_region_label(Region region, std::mt19937_64& rng);
    /// Draws a camera from the dataset camera distribution.
    Camera sample_camera(std::mt19937_64& rng);
    const DatasetConfig& config() const { return cfg_; }
    std::uint64_t position() const { return position_; }
    /// Continues the stream from sample `position`.
    void seek(std::uint64_t position) {
        position_ = position;
        order_.clear();
    }

private:
    DatasetItem procedural(std::uint64_t index) const;

    DatasetConfig cfg_;
    std::uint64_t position_ = 0;
    std::shared_ptr<const ToyCorpus> corpus_;
    std::vector<int> order_;
    std::vector<ColorConditioning> label_pool_;
};

/// Frame-colour pixel test inside the eye band of a frontal render.
struct GlassesDetector {
    static constexpr int kVersion = 1;
    double min_blue_excess = 0.12;  // b - max(r, g)
    double max_blue = 0.6;
    double min_fraction = 0.02;     // of eye-band pixels

    bool operator()(std::span<const float> image, int width, int height) const;
};

}  // namespace cosy
