#pragma once

#include <vector>

#include <torch/torch.h>

#include "cosy/camera.hpp"
#include "cosy/raster.hpp"

namespace cosy {

struct RenderedBatch {
    torch::Tensor rgb;    // [B, 3, H, W]
    torch::Tensor alpha;  // [B, 1, H, W]
};

/// Differentiable batch render of packed scenes [B, N, 14] (float32, CPU),
/// one camera per batch entry. Gradients flow to every packed attribute
/// through the hand-written backward.
RenderedBatch render_batch(const torch::Tensor& packed, const std::vector<Camera>& cameras,
                           const RasterSettings& settings = {});

}  // namespace cosy
