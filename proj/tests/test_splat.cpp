#include <doctest.h>

#include <cmath>
#include <random>

#include "cosy/error.hpp"
#include "cosy/raster.hpp"
#include "cosy/splat.hpp"
#include "cosy/splat_io.hpp"
#include "scene_fixtures.hpp"

using namespace cosy;

namespace {

GaussianSet random_set(std::mt19937_64& rng, Component tag, int n) {
    const auto packed = testing::random_packed_scene<float>(rng, n);
    return GaussianSet::from_packed(tag, packed);
}

}  // namespace

TEST_CASE("hide_component shifts logits and nothing else") {
    std::mt19937_64 rng(1);
    auto set = random_set(rng, Component::Glasses, 4);
    set.primitives[0].opacity_logit = 2.0f;
    const auto hidden = hide_component(set, 100.0f);
    REQUIRE(hidden.size() == set.size());
    CHECK(hidden.primitives[0].opacity_logit == -98.0f);
    CHECK(hidden.primitives[0].opacity() < 1e-40f);
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(hidden.primitives[i].position == set.primitives[i].position);
        CHECK(hidden.primitives[i].color == set.primitives[i].color);
    }
    CHECK(hide_component(set, 0.0f) == set);
}

TEST_CASE("hiding is reversible") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> steps(-(1 << 20), 1 << 20);
    // Logits on the float grid at magnitude ~100 (2^-17) come back bit-exact.
    GaussianSet set = random_set(rng, Component::Glasses, 256);
    for (auto& g : set.primitives) g.opacity_logit = std::ldexp(float(steps(rng)), -17);
    auto back = hide_component(set, kHideSuppression);
    for (auto& g : back.primitives) g.opacity_logit += kHideSuppression;
    CHECK(back == set);

    // Arbitrary logits are restored to within half an ulp at 100.
    const auto raw = random_set(rng, Component::Glasses, 256);
    auto raw_back = hide_component(raw, kHideSuppression);
    for (auto& g : raw_back.primitives) g.opacity_logit += kHideSuppression;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        CHECK(std::abs(raw_back.primitives[i].opacity_logit - raw.primitives[i].opacity_logit) <=
              std::ldexp(1.0f, -18));
    }
}

TEST_CASE("compose keeps counts, order and untouched components") {
    std::mt19937_64 rng(3);
    const auto face = random_set(rng, Component::Face, 1000);
    const auto hair = random_set(rng, Component::Hair, 800);
    const auto glasses = random_set(rng, Component::Glasses, 200);
    const auto torso = random_set(rng, Component::Torso, 500);
    const auto on = compose(face, hair, glasses, torso, true);
    CHECK(on.primitive_count() == 2500);
    const auto off = compose(face, hair, glasses, torso, false);
    CHECK(off.primitive_count() == 2500);
    CHECK(off.set(Component::Face) == face);
    CHECK(off.set(Component::Hair) == hair);
    CHECK(off.set(Component::Torso) == torso);
    for (std::size_t i = 0; i < glasses.size(); ++i) {
        CHECK(off.set(Component::Glasses).primitives[i].opacity_logit ==
              glasses.primitives[i].opacity_logit - 100.0f);
    }
    CHECK(compose(face, hair, glasses, torso, false) == off);
}

TEST_CASE("compose rejects empty components") {
    std::mt19937_64 rng(4);
    const auto face = random_set(rng, Component::Face, 3);
    GaussianSet empty;
    try {
        compose(face, face, empty, face, true);
        FAIL("expected EmptyComponent");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyComponent);
    }
}

TEST_CASE("hidden glasses render like removed glasses") {
    std::mt19937_64 rng(5);
    const auto face = random_set(rng, Component::Face, 1);
    const auto hair = random_set(rng, Component::Hair, 1);
    const auto glasses = random_set(rng, Component::Glasses, 1);
    const auto torso = random_set(rng, Component::Torso, 1);
    const auto scene = compose(face, hair, glasses, torso, false);
    std::vector<float> removed;
    for (const auto* s : {&face, &hair, &torso}) {
        const auto p = s->packed();
        removed.insert(removed.end(), p.begin(), p.end());
    }
    const auto cam = testing::random_camera(rng, 32);
    const auto a = render(scene, cam);
    const auto b = render<float>(std::span<const float>(removed), cam);
    float max_diff = 0.0f;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) max_diff = std::max(max_diff, std::abs(a.rgb[i] - b.rgb[i]));
    for (std::size_t i = 0; i < a.alpha.size(); ++i)
        max_diff = std::max(max_diff, std::abs(a.alpha[i] - b.alpha[i]));
    CHECK(max_diff < 1e-6f);
}

TEST_CASE("splat export round-trips and carries the documented header") {
    std::mt19937_64 rng(6);
    const auto scene = compose(random_set(rng, Component::Face, 7), random_set(rng, Component::Hair, 5),
                               random_set(rng, Component::Glasses, 3), random_set(rng, Component::Torso, 2), false);
    const auto bytes = encode_splat(scene);
    CHECK(bytes.substr(0, 4) == "CSY1");
    CHECK(bytes.size() == 4 * 16 + scene.primitive_count() * kPrimitiveFloats * 4);
    const auto back = decode_scene(bytes, false);
    CHECK(back == scene);
    CHECK(encode_splat(back) == bytes);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_splat(bad), Error);
    CHECK_THROWS_AS(decode_splat(bytes.substr(0, bytes.size() - 3)), Error);
}

TEST_CASE("normalize_rotation yields unit quaternions") {
    std::mt19937_64 rng(7);
    std::normal_distribution<float> n(0.0f, 3.0f);
    for (int i = 0; i < 100; ++i) {
        GaussianPrimitive g;
        g.rotation = {n(rng), n(rng), n(rng), n(rng)};
        g.normalize_rotation();
        double norm = 0.0;
        for (float v : g.rotation) norm += double(v) * v;
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
        for (float s : g.scale()) CHECK(s > 0.0f);
        CHECK(g.opacity() > 0.0f);
        CHECK(g.opacity() < 1.0f);
    }
}
