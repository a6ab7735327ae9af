#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "cosy/checkpoint.hpp"
#include "cosy/config.hpp"
#include "cosy/generator.hpp"

namespace cosy::fixtures {

inline RunConfig small_model_config(int resolution = 32) {
    RunConfig c;
    c.merge_text(R"(
        model.z_dim = 64
        model.w_dim = 64
        model.token_dim = 32
        model.anchors_face = 8
        model.anchors_hair = 8
        model.anchors_glasses = 4
        model.anchors_torso = 8
        model.children_face = 4
        model.children_hair = 4
        model.children_glasses = 2
        model.children_torso = 4
        model.point_dim = 32
        eval.pca_samples = 2000
        eval.pca_k = 3
    )");
    c.set("data.resolution", std::to_string(resolution));
    return c;
}

/// Freshly initialized generator stored as G and G_ema, with a non-trivial
/// truncation anchor so psi matters.
inline Checkpoint model_checkpoint(const RunConfig& cfg, std::uint64_t seed = 5) {
    torch::manual_seed(seed);
    Generator g(cfg.generator());
    if (!cfg.get_bool("model.monolithic")) {
        for (auto c : kComponents) g->w_mean[index_of(c)].copy_(g->estimate_w_mean(c, 512, seed));
    }
    Checkpoint ckpt;
    ckpt.config = cfg;
    append_module(ckpt.tensors, "G.", *g);
    append_module(ckpt.tensors, "G_ema.", *g);
    return ckpt;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cosy_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace cosy::fixtures
