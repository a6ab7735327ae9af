#include "cosy/torch_raster.hpp"

#include "cosy/error.hpp"

namespace cosy {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

struct AuxHolder : torch::CustomClassHolder {
    std::vector<Camera> cameras;
    std::vector<RenderAux<float>> aux;
    RasterSettings settings;
};

struct RasterFunction : torch::autograd::Function<RasterFunction> {
    static variable_list forward(AutogradContext* ctx, torch::Tensor packed, const std::vector<Camera>& cameras,
                                 const RasterSettings& settings) {
        const auto batch = packed.size(0);
        const int h = cameras.front().height, w = cameras.front().width;
        auto rgb = torch::empty({batch, h, w, 3}, torch::kFloat32);
        auto alpha = torch::empty({batch, h, w}, torch::kFloat32);
        auto holder = c10::make_intrusive<AuxHolder>();
        holder->cameras = cameras;
        holder->settings = settings;
        holder->aux.resize(batch);
        const auto contiguous = packed.contiguous();
        for (int64_t b = 0; b < batch; ++b) {
            const auto scene = contiguous[b];
            std::span<const float> data(scene.data_ptr<float>(), scene.numel());
            auto out = render<float>(data, cameras[b], settings);
            std::memcpy(rgb[b].data_ptr<float>(), out.rgb.data(), out.rgb.size() * sizeof(float));
            std::memcpy(alpha[b].data_ptr<float>(), out.alpha.data(), out.alpha.size() * sizeof(float));
            holder->aux[b] = std::move(out.aux);
        }
        ctx->save_for_backward({contiguous});
        ctx->saved_data["aux"] = c10::IValue::make_capsule(holder);
        return {rgb, alpha};
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        const auto packed = ctx->get_saved_variables()[0];
        auto holder = c10::static_intrusive_pointer_cast<AuxHolder>(ctx->saved_data["aux"].toCapsule());
        const auto batch = packed.size(0);
        const int h = holder->cameras.front().height, w = holder->cameras.front().width;
        auto grad_rgb = grads[0].defined() ? grads[0].contiguous() : torch::zeros({batch, h, w, 3});
        auto grad_alpha = grads[1].defined() ? grads[1].contiguous() : torch::zeros({batch, h, w});
        auto grad_packed = torch::empty_like(packed);
        for (int64_t b = 0; b < batch; ++b) {
            const auto scene = packed[b];
            const auto gr = grad_rgb[b];
            const auto ga = grad_alpha[b];
            const auto g = render_backward<float>(
                std::span<const float>(scene.data_ptr<float>(), scene.numel()), holder->cameras[b], holder->aux[b],
                std::span<const float>(gr.data_ptr<float>(), gr.numel()),
                std::span<const float>(ga.data_ptr<float>(), ga.numel()), holder->settings);
            std::memcpy(grad_packed[b].data_ptr<float>(), g.data(), g.size() * sizeof(float));
        }
        return {grad_packed, torch::Tensor(), torch::Tensor()};
    }
};

}  // namespace

RenderedBatch render_batch(const torch::Tensor& packed, const std::vector<Camera>& cameras,
                           const RasterSettings& settings) {
    if (packed.dim() != 3 || packed.size(2) != kPrimitiveFloats || packed.scalar_type() != torch::kFloat32) {
        throw Error(ErrorCode::ShapeMismatch, "packed scenes must be float32 [B, N, 14]");
    }
    if (static_cast<std::size_t>(packed.size(0)) != cameras.size() || cameras.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "one camera per scene required");
    }
    for (const auto& c : cameras) {
        if (c.width != cameras.front().width || c.height != cameras.front().height) {
            throw Error(ErrorCode::ShapeMismatch, "cameras in a batch must share a resolution");
        }
    }
    auto outs = RasterFunction::apply(packed, cameras, settings);
    return {outs[0].permute({0, 3, 1, 2}), outs[1].unsqueeze(1)};
}

}  // namespace cosy
