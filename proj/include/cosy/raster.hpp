#pragma once

// Tile-based differentiable Gaussian splatting.
//
// Forward: EWA projection of every primitive, global depth sort, per-tile
// front-to-back alpha compositing over a constant background. Backward is
// derived by hand; it recomputes each pixel's contributor chain instead of
// storing it, then walks it back to front.
//
// Instantiated for float (training) and double (gradient checks).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cosy/camera.hpp"
#include "cosy/splat.hpp"

namespace cosy {

struct RasterSettings {
    std::array<double, 3> background{1.0, 1.0, 1.0};
    double cov_floor = 0.3;          // px^2 added to the 2D covariance diagonal
    double alpha_min = 1.0 / 255.0;  // contributions fade out below 2 * alpha_min
    double alpha_max = 0.99;
    double transmittance_min = 1e-4;
    int tile_size = 16;
    int threads = 1;
};

template <class T>
struct ProjectedGaussian {
    std::array<T, 2> mean{};   // px
    std::array<T, 3> cov{};    // xx, xy, yy (px^2, floor included)
    std::array<T, 3> conic{};  // inverse covariance, same layout
    T depth{};
    T opacity{};
    std::array<T, 3> color{};
    int radius = 0;
    std::array<int, 4> tile_rect{};  // x0, y0, x1, y1 (exclusive)
    bool visible = false;
};

/// Per-call state the backward pass consumes.
template <class T>
struct RenderAux {
    std::uint64_t scene_hash = 0;
    std::vector<ProjectedGaussian<T>> projected;
    std::vector<std::uint32_t> depth_order;  // visible primitives, front to back
    std::vector<std::uint32_t> tile_offsets;  // tiles + 1 entries into tile_lists
    std::vector<std::uint32_t> tile_lists;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::uint32_t> contributors;  // per pixel, for diagnostics
};

template <class T>
struct RenderOutput {
    int width = 0;
    int height = 0;
    std::vector<T> rgb;    // H*W*3, row-major
    std::vector<T> alpha;  // H*W
    RenderAux<T> aux;
};

/// Throws Error(Culled) when the primitive is at or behind the near plane or
/// its 3-sigma footprint misses the image.
template <class T>
ProjectedGaussian<T> project(std::span<const T, kPrimitiveFloats> primitive, const Camera& camera,
                             const RasterSettings& settings = {});

ProjectedGaussian<float> project(const GaussianPrimitive& primitive, const Camera& camera,
                                 const RasterSettings& settings = {});

/// `packed` holds kPrimitiveFloats per primitive (see splat.hpp).
template <class T>
RenderOutput<T> render(std::span<const T> packed, const Camera& camera, const RasterSettings& settings = {});

RenderOutput<float> render(const ComposedScene& scene, const Camera& camera, const RasterSettings& settings = {});

/// Gradients of a scalar loss with respect to every packed attribute, given
/// dL/drgb (H*W*3) and dL/dalpha (H*W). Throws Error(StaleAux) if `aux` was
/// produced for a different scene or camera.
template <class T>
std::vector<T> render_backward(std::span<const T> packed, const Camera& camera, const RenderAux<T>& aux,
                               std::span<const T> grad_rgb, std::span<const T> grad_alpha,
                               const RasterSettings& settings = {});

template <class T>
std::uint64_t scene_hash(std::span<const T> packed, const Camera& camera);

}  // namespace cosy
