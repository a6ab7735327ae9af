#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <Eigen/Dense>

#include "cosy/error.hpp"
#include "cosy/toyset.hpp"

using namespace cosy;

namespace {

std::vector<float> constant_image(int w, int h, float r, float g, float b) {
    std::vector<float> img(std::size_t(w) * h * 3);
    for (std::size_t i = 0; i < img.size(); i += 3) {
        img[i] = r;
        img[i + 1] = g;
        img[i + 2] = b;
    }
    return img;
}

}  // namespace

TEST_CASE("histogram of a pure red region") {
    const int w = 12, h = 12;
    const auto img = constant_image(w, h, 1.0f, 0.0f, 0.0f);
    std::vector<bool> mask(w * h, true);
    const auto hist = color_histogram(img, mask, w, h, 2);
    for (int i = 0; i < kHistDim; ++i) {
        const float expect = (i == 9 || i == 10 || i == 20) ? 1.0f : 0.0f;
        CHECK(hist[i] == expect);
    }
}

TEST_CASE("histogram of a two-gray region matches pixel counts") {
    // Left half 0.15, right half 0.85; erosion removes the same number of
    // columns on both sides, so the split stays 50/50.
    const int w = 20, h = 10;
    std::vector<float> img(w * h * 3);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            for (int c = 0; c < 3; ++c) img[(v * w + u) * 3 + c] = u < w / 2 ? 0.15f : 0.85f;
    std::vector<bool> mask(w * h, true);
    const auto hist = color_histogram(img, mask, w, h, 2);

    // Oracle: count surviving pixels directly.
    int low = 0, high = 0;
    for (int v = 2; v < h - 2; ++v)
        for (int u = 2; u < w - 2; ++u) (u < w / 2 ? low : high)++;
    REQUIRE(low == high);
    for (int c = 0; c < 3; ++c) {
        for (int b = 0; b < kHistBins; ++b) {
            const float expect = (b == 1 || b == 8) ? 0.5f : 0.0f;
            CHECK(hist[c * kHistBins + b] == expect);
        }
    }
}

TEST_CASE("histogram bin edges") {
    std::vector<bool> mask(1, true);
    for (auto [value, bin] : {std::pair{0.0f, 0}, {0.0999f, 0}, {0.1f, 1}, {0.95f, 9}, {1.0f, 9}}) {
        const auto img = constant_image(1, 1, value, value, value);
        const auto hist = color_histogram(img, mask, 1, 1, 0);
        CHECK(hist[bin] == 1.0f);
    }
}

TEST_CASE("erosion larger than the region raises EmptyRegion") {
    const int w = 16, h = 16;
    const auto img = constant_image(w, h, 0.5f, 0.5f, 0.5f);
    std::vector<bool> mask(w * h, false);
    for (int v = 5; v < 9; ++v)
        for (int u = 5; u < 9; ++u) mask[v * w + u] = true;
    CHECK_NOTHROW(color_histogram(img, mask, w, h, 1));
    try {
        color_histogram(img, mask, w, h, 2);
        FAIL("expected EmptyRegion");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyRegion);
    }
}

TEST_CASE("generate_sample is deterministic") {
    PaletteConfig pal;
    std::mt19937_64 a(42), b(42);
    const auto s1 = generate_sample(a, pal);
    const auto s2 = generate_sample(b, pal);
    CHECK(s1.image == s2.image);
    CHECK(s1.regions == s2.regions);
    CHECK(s1.labels == s2.labels);
}

TEST_CASE("masks are disjoint, labels self-consistent, glasses mask follows flag") {
    PaletteConfig pal;
    std::mt19937_64 rng(9);
    int with = 0, without = 0;
    for (int i = 0; i < 40; ++i) {
        const auto s = generate_sample(rng, pal);
        REQUIRE(s.regions.size() == std::size_t(s.width * s.height));
        for (auto r : s.regions) CHECK(r <= static_cast<std::uint8_t>(Region::Glasses));
        CHECK(extract_labels(s) == s.labels);
        CHECK(histogram_is_simplex(s.labels.hair));
        CHECK(histogram_is_simplex(s.labels.skin));
        CHECK(histogram_is_simplex(s.labels.torso));
        const auto g = s.mask(Region::Glasses);
        const bool any = std::find(g.begin(), g.end(), true) != g.end();
        if (s.scene.glasses) {
            ++with;
            CHECK(s.labels.glasses_flag == 1.0f);
        } else {
            ++without;
            CHECK_FALSE(any);
            CHECK(s.labels.glasses_flag == 0.0f);
        }
    }
    CHECK(with > 0);
    CHECK(without > 0);
}

TEST_CASE("skin shading matches a Lambertian oracle") {
    // Independent oracle: cast each skin pixel's ray against the head and neck
    // ellipsoids, shade the analytic normal, average.
    PaletteConfig pal;
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto s = generate_sample(rng, pal);
        const auto& sc = s.scene;
        const Eigen::Matrix3d rt = s.camera.rotation().transpose();
        const Eigen::Vector3d eye = s.camera.center();
        Eigen::Vector3d mean_color = Eigen::Vector3d::Zero();
        double mean_shade = 0.0;
        int n = 0;
        for (int v = 0; v < s.height; ++v) {
            for (int u = 0; u < s.width; ++u) {
                const std::size_t pix = std::size_t(v) * s.width + u;
                if (s.regions[pix] != static_cast<std::uint8_t>(Region::Skin)) continue;
                const Eigen::Vector3d d =
                    (rt * Eigen::Vector3d((u - s.camera.cx) / s.camera.fx, (v - s.camera.cy) / s.camera.fy, 1.0))
                        .normalized();
                double best = 1e30;
                Eigen::Vector3d normal;
                for (auto [c, r] : {std::pair{Eigen::Vector3d::Zero().eval(), sc.head_radii},
                                    std::pair{sc.neck_center, sc.neck_radii}}) {
                    const Eigen::Vector3d o = (eye - c).cwiseQuotient(r), dd = d.cwiseQuotient(r);
                    const double A = dd.dot(dd), B = 2 * o.dot(dd), C = o.dot(o) - 1;
                    const double disc = B * B - 4 * A * C;
                    if (disc < 0) continue;
                    const double t = (-B - std::sqrt(disc)) / (2 * A);
                    if (t > 0 && t < best) {
                        best = t;
                        normal = (eye + t * d - c).cwiseQuotient(r.cwiseProduct(r)).normalized();
                    }
                }
                if (best == 1e30) continue;
                mean_shade += sc.ambient + (1 - sc.ambient) * std::max(0.0, normal.dot(sc.light_dir));
                mean_color += Eigen::Vector3d(s.image[pix * 3], s.image[pix * 3 + 1], s.image[pix * 3 + 2]);
                ++n;
            }
        }
        REQUIRE(n > 50);
        mean_color /= n;
        mean_shade /= n;
        for (int c = 0; c < 3; ++c) CHECK(std::abs(mean_color[c] - sc.skin_albedo[c] * mean_shade) < 0.05);
    }
}

TEST_CASE("dataset iterator: determinism, conditioning length, glasses rate") {
    DatasetConfig cfg;
    cfg.seed = 11;
    DatasetIterator a(cfg), b(cfg);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next(), y = b.next();
        REQUIRE(x.image == y.image);
        REQUIRE(x.camera_flat == y.camera_flat);
        REQUIRE(x.labels == y.labels);
        CHECK(x.conditioning().size() == 116);
    }

    // 3-sigma binomial band at n = 1e4: 3 * sqrt(0.3 * 0.7 / 1e4) = 0.0137.
    DatasetConfig small = cfg;
    small.resolution = 32;
    small.shrink_radius = 1;
    DatasetIterator it(small);
    int glasses = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) glasses += it.next().labels.glasses_flag > 0.5f;
    CHECK(std::abs(glasses / double(n) - 0.3) <= 0.014);
}

TEST_CASE("camera flatten round trip") {
    const Camera cam = toy_camera(23.0, -7.0, 64);
    const auto flat = cam.flatten();
    const Camera back = camera_from_flat(flat, 64, 64);
    CHECK((back.world_to_camera - cam.world_to_camera).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(back.fx == doctest::Approx(cam.fx));
    CHECK(back.cx == doctest::Approx(cam.cx));
}

TEST_CASE("corpus write/load round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "cosy_test_corpus";
    std::filesystem::remove_all(dir);
    DatasetConfig cfg;
    cfg.resolution = 32;
    cfg.shrink_radius = 1;
    ToyCorpus::write(dir, 3, 12, cfg);
    const auto corpus = ToyCorpus::load(dir);
    REQUIRE(corpus.size() == 12);
    DatasetIterator proc(DatasetConfig{.seed = 3, .resolution = 32, .shrink_radius = 1});
    for (int i = 0; i < 12; ++i) {
        const auto stored = corpus.item(i);
        const auto fresh = proc.next();
        CHECK(stored.labels == fresh.labels);
        CHECK(stored.camera_flat == fresh.camera_flat);
        for (std::size_t k = 0; k < fresh.image.size(); ++k) REQUIRE(stored.image[k] == fresh.image[k]);
    }
    DatasetConfig from_disk = cfg;
    from_disk.corpus_dir = dir;
    DatasetIterator a(from_disk), b(from_disk);
    for (int i = 0; i < 30; ++i) CHECK(a.next().labels == b.next().labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("glasses detector separates rendered frames") {
    PaletteConfig pal;
    std::mt19937_64 rng(77);
    GlassesDetector detect;
    int tp = 0, fp = 0, pos = 0, neg = 0;
    for (int i = 0; i < 200; ++i) {
        ToyScene scene = sample_toy_scene(rng, pal);
        const auto s = render_toy(scene, toy_camera(0.0, 0.0, 64));
        const bool hit = detect(s.image, 64, 64);
        if (scene.glasses) {
            ++pos;
            tp += hit;
        } else {
            ++neg;
            fp += hit;
        }
    }
    CHECK(tp >= 0.98 * pos);
    CHECK(fp == 0);
}
