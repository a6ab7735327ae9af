#pragma once

// Checkpoint container.
//
// Layout (little-endian):
//   "CSYW" | version u32 | config digest u64 | step u64 | data position u64
//   config text: length u32 + bytes (canonical key=value lines)
//   tensor count u32, then per tensor:
//     name length u32 + bytes | ndim u32 | dims i64[ndim] | f32 data
// The digest must equal the digest of the embedded config text.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "cosy/config.hpp"

namespace cosy {

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'Y', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorTable = std::vector<std::pair<std::string, torch::Tensor>>;

struct Checkpoint {
    RunConfig config;
    std::uint64_t step = 0;
    std::uint64_t data_position = 0;
    TensorTable tensors;

    /// Throws CheckpointInvalid when the name is missing.
    const torch::Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws Error(CheckpointInvalid) on bad magic, version, digest or layout.
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every parameter and buffer of `module` as prefix + name.
void append_module(TensorTable& table, const std::string& prefix, const torch::nn::Module& module);
/// Copies tensors named prefix + name into the module; every parameter and
/// buffer must be present with a matching shape.
void restore_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module);

}  // namespace cosy
