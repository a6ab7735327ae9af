#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cosy {

/// 8-bit RGB PNG of an H*W*3 float image in [0, 1] (values are clamped and
/// rounded). Returns the encoded bytes.
std::string encode_png(std::span<const float> rgb, int width, int height);

struct DecodedPng {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // H*W*3
};
/// Throws Error(FormatError) on anything but 8-bit RGB.
DecodedPng decode_png(const std::string& bytes);

}  // namespace cosy
