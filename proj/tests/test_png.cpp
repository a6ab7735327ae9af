#include <doctest.h>

#include <cmath>
#include <vector>

#include "cosy/error.hpp"
#include "cosy/png.hpp"

using namespace cosy;

TEST_CASE("png round-trip at 8 bits") {
    const int w = 7, h = 5;
    std::vector<float> img(w * h * 3);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 256) / 255.0f;
    const auto bytes = encode_png(img, w, h);
    CHECK(bytes.substr(1, 3) == "PNG");
    const auto back = decode_png(bytes);
    CHECK(back.width == w);
    CHECK(back.height == h);
    REQUIRE(back.rgb.size() == img.size());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.rgb[i] == static_cast<std::uint8_t>(i % 256));
}

TEST_CASE("png clamps out-of-range values") {
    const std::vector<float> img{-1.0f, 2.0f, 0.5f};
    const auto back = decode_png(encode_png(img, 1, 1));
    CHECK(back.rgb[0] == 0);
    CHECK(back.rgb[1] == 255);
    CHECK(back.rgb[2] == 128);
}

TEST_CASE("png rejects junk and size mismatch") {
    CHECK_THROWS_AS(decode_png("not a png"), Error);
    const std::vector<float> img(12, 0.5f);
    CHECK_THROWS_AS(encode_png(img, 3, 3), Error);
}
