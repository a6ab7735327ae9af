#include <torch/torch.h>
#undef CHECK
#include <doctest.h>

#include <cmath>

#include "cosy/error.hpp"
#include "cosy/evalkit.hpp"
#include "cosy/trainer.hpp"
#include "model_fixtures.hpp"

using namespace cosy;

namespace {

DatasetConfig data32() {
    DatasetConfig d;
    d.resolution = 32;
    d.seed = 3;
    return d;
}

Generator small_generator() {
    const auto ckpt = fixtures::model_checkpoint(fixtures::small_model_config());
    return generator_from_checkpoint(ckpt);
}

}  // namespace

TEST_CASE("render_images composites over a white background once") {
    auto scene = torch::zeros({2, 3, kPrimitiveFloats});
    scene.select(2, attr::Rotation).fill_(1.0f);
    scene.select(2, attr::Opacity).fill_(-30.0f);
    std::vector<Camera> cams{toy_camera(0, 0, 16), toy_camera(30, 10, 16)};
    const auto hidden = render_images(scene, cams);
    CHECK(hidden.sizes() == torch::IntArrayRef{2, 3, 16, 16});
    CHECK((hidden - 1.0f).abs().max().item<float>() < 1e-6f);

    scene.select(2, attr::Opacity).fill_(6.0f);
    scene.narrow(2, attr::Color, 3).fill_(0.2f);
    const auto shown = render_images(scene, cams);
    CHECK(shown.max().item<float>() <= 1.0f + 1e-5f);
    CHECK(shown.min().item<float>() < 0.5f);
}

TEST_CASE("feature FID: replayed reals score zero, fresh reals beat an untrained generator") {
    torch::NoGradGuard ng;
    PerceptualExtractor percep;
    const auto features = default_features(percep);
    const auto data = data32();
    const auto a = real_features(data, 300, 1, features);
    const auto a2 = real_features(data, 300, 1, features);
    const auto b = real_features(data, 300, 2, features);
    CHECK(a.rows() == 300);
    CHECK(a.cols() == PerceptualExtractorImpl::kEmbedDim);
    CHECK(frechet_distance(a, a2) < 1e-6);

    auto g = small_generator();
    DatasetIterator it(data);
    const auto fakes = fake_features(g, it, 300, FidMode::Fid, 1.0, 5, features);
    CHECK(fakes.rows() == 300);
    const double real_real = frechet_distance(a, b);
    const double real_fake = frechet_distance(a, fakes);
    MESSAGE("real/real " << real_real << "  real/fake " << real_fake);
    CHECK(std::isfinite(real_fake));
    CHECK(real_real < real_fake);

    CHECK(fid_mode_from_name("fid3d") == FidMode::Fid3d);
    CHECK_THROWS_AS(fid_mode_from_name("kid"), Error);
}

TEST_CASE("glasses recall with constant detectors") {
    torch::NoGradGuard ng;
    auto g = small_generator();
    DatasetIterator it(data32());
    CHECK(glasses_recall(g, it, 20, 1.0, 4, [](std::span<const float>, int, int) { return true; }) == 1.0);
    CHECK(glasses_recall(g, it, 20, 1.0, 4, [](std::span<const float>, int, int) { return false; }) == 0.0);
    int calls = 0;
    glasses_recall(g, it, 7, 1.0, 4, [&](std::span<const float> img, int w, int h) {
        CHECK(img.size() == static_cast<std::size_t>(w * h * 3));
        ++calls;
        return true;
    });
    CHECK(calls == 7);
}

TEST_CASE("edit stability: a null edit scores zero") {
    torch::NoGradGuard ng;
    auto g = small_generator();
    PerceptualExtractor percep;
    ToyParser parser;
    StabilityOptions opt;
    opt.pairs = 8;
    for (auto masks : {MaskSource::Parser, MaskSource::Attribution}) {
        for (auto edit : {EditKind::Hair, EditKind::Glasses}) {
            opt.masks = masks;
            opt.edit = edit;
            DatasetIterator it(data32());
            CHECK(edit_stability(g, it, percep, &parser, opt, true) < 1e-9);
        }
    }
    opt.masks = MaskSource::Attribution;
    opt.edit = EditKind::Hair;
    opt.dilate = 0;
    DatasetIterator it(data32());
    const double d = edit_stability(g, it, percep, nullptr, opt);
    CHECK(std::isfinite(d));
    CHECK(d >= 0.0);
    CHECK(edit_kind_from_name("glasses") == EditKind::Glasses);
}

TEST_CASE("light distance is finite and positive") {
    torch::NoGradGuard ng;
    auto g = small_generator();
    PerceptualExtractor percep;
    DatasetIterator it(data32());
    const double d = light_distance(g, it, percep, 8, 2);
    CHECK(std::isfinite(d));
    CHECK(d > 0.0);
}

TEST_CASE("pca directions are orthonormal and ordered") {
    torch::NoGradGuard ng;
    auto g = small_generator();
    const auto r = pca_directions(g, Component::Hair, 3000, 4, 9);
    REQUIRE(r.directions.rows() == 4);
    CHECK(r.directions.cols() == 64);
    const Eigen::MatrixXd gram = r.directions * r.directions.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
    for (int i = 1; i < 4; ++i) CHECK(r.variances[i] <= r.variances[i - 1]);
    CHECK(r.variances[3] > 0.0);

    // seeded: the same call gives the same subspace
    const auto again = pca_directions(g, Component::Hair, 3000, 4, 9);
    CHECK(max_principal_angle(r.directions, again.directions) < 1e-6);
}

TEST_CASE("pca sidecar round-trip and rejection") {
    PcaSidecar s;
    s.checkpoint_digest = 0x0123456789abcdefULL;
    for (int c = 0; c < 4; ++c) {
        s.components[c].mean = Eigen::VectorXd::LinSpaced(6, c, c + 1);
        s.components[c].directions = Eigen::MatrixXd::Identity(2, 6);
        s.components[c].variances = Eigen::Vector2d(2.0 + c, 1.0);
    }
    const auto bytes = encode_pca_sidecar(s);
    const auto back = decode_pca_sidecar(bytes);
    CHECK(back.checkpoint_digest == s.checkpoint_digest);
    for (int c = 0; c < 4; ++c) {
        CHECK(back.components[c].mean.isApprox(s.components[c].mean, 1e-6));
        CHECK(back.components[c].directions.isApprox(s.components[c].directions, 1e-6));
        CHECK(back.components[c].variances.isApprox(s.components[c].variances, 1e-6));
    }
    CHECK_THROWS_AS(decode_pca_sidecar(bytes.substr(0, bytes.size() - 3)), Error);
    CHECK_THROWS_AS(decode_pca_sidecar("XXXX" + bytes.substr(4)), Error);
}

TEST_CASE("generator restored from a checkpoint and content digest") {
    torch::NoGradGuard ng;
    const auto cfg = fixtures::small_model_config();
    auto ckpt = fixtures::model_checkpoint(cfg);
    auto g1 = generator_from_checkpoint(ckpt);
    auto g2 = generator_from_checkpoint(ckpt, "G.");
    std::mt19937_64 rng(1);
    const auto bundle = LatentBundle::sample(2, 64, rng);
    DatasetIterator it(data32());
    std::vector<ColorConditioning> labels;
    for (int i = 0; i < 2; ++i) labels.push_back(it.sample_labels(rng));
    const auto cond = ConditioningBatch::from(labels);
    const auto a = g1->synthesize(bundle, cond).scene;
    const auto b = g2->synthesize(bundle, cond).scene;
    CHECK(torch::equal(a, b));
    for (const auto& p : g1->parameters()) CHECK_FALSE(p.requires_grad());

    const auto d0 = checkpoint_content_digest(ckpt);
    CHECK(d0 == checkpoint_content_digest(ckpt));
    ckpt.tensors.front().second.view(-1)[0] += 1.0f;
    CHECK(d0 != checkpoint_content_digest(ckpt));
    CHECK_THROWS_AS(generator_from_checkpoint(ckpt, "D."), Error);
}

TEST_CASE("parser save and load reproduce predictions") {
    torch::NoGradGuard ng;
    ToyParser a;
    const auto dir = fixtures::temp_dir("parser");
    save_parser(dir / "p.bin", a);
    ToyParser b;
    load_parser(dir / "p.bin", b);
    const auto img = torch::rand({2, 3, 32, 32});
    CHECK(torch::equal(a->forward(img), b->forward(img)));
    CHECK(a->predict(img).sizes() == torch::IntArrayRef{2, 32, 32});
    CHECK_THROWS_AS(load_parser(dir / "missing.bin", b), Error);
}

TEST_CASE("parser training reaches useful accuracy") {
    ToyParser p;
    const auto r = train_parser(p, data32(), 60, 8, 2);
    MESSAGE("train " << r.train_accuracy << " holdout " << r.holdout_accuracy);
    CHECK(r.holdout_accuracy > 0.7);
}
