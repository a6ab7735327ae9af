#pragma once

// Binary splat export.
//
// Layout (little-endian), one block per component set:
//   header, 16 bytes: magic "CSY1" | version u32 | count u32 | component_tag u32
//   count records of 14 f32: position xyz, quaternion wxyz, log_scale xyz,
//   opacity_logit, rgb
// A composed scene is written as its four blocks back to back in component
// order; hidden glasses keep their suppressed logits.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cosy/splat.hpp"

namespace cosy {

inline constexpr char kSplatMagic[4] = {'C', 'S', 'Y', '1'};
inline constexpr std::uint32_t kSplatVersion = 1;

std::string encode_splat(const GaussianSet& set);
std::string encode_splat(const ComposedScene& scene);

/// Decodes every block in the buffer. Throws Error(FormatError).
std::vector<GaussianSet> decode_splat(const std::string& bytes);
/// Decodes a four-block file back into a scene. glasses_active is recovered
/// from the caller since the format stores logits only.
ComposedScene decode_scene(const std::string& bytes, bool glasses_active);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace cosy
