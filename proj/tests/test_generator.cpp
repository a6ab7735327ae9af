// torch defines a logging CHECK macro; include it first so doctest's wins.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>

#include <random>

#include "cosy/discriminator.hpp"
#include "cosy/error.hpp"
#include "cosy/generator.hpp"
#include "cosy/torch_raster.hpp"
#include "scene_fixtures.hpp"

using namespace cosy;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig cfg;
    cfg.anchors = {16, 16, 8, 16};
    cfg.children = {4, 4, 4, 4};
    return cfg;
}

ConditioningBatch random_conditioning(std::mt19937_64& rng, int64_t batch, float flag) {
    std::vector<ColorConditioning> items;
    PaletteConfig pal;
    for (int64_t i = 0; i < batch; ++i) {
        auto s = generate_sample(rng, pal, 32, 1);
        s.labels.glasses_flag = flag;
        items.push_back(s.labels);
    }
    return ConditioningBatch::from(items);
}

bool same(const torch::Tensor& a, const torch::Tensor& b) { return torch::equal(a, b); }

std::vector<Camera> frontal(int64_t n, int res) { return std::vector<Camera>(n, toy_camera(0.0, 0.0, res)); }

}  // namespace

TEST_CASE("mapping: determinism and light context") {
    torch::manual_seed(1);
    Generator g(small_config());
    std::mt19937_64 rng(2);
    const auto z = randn_from(rng, 3, 512);
    const auto l1 = g->map_light(randn_from(rng, 3, 512));
    const auto l2 = g->map_light(randn_from(rng, 3, 512));
    CHECK(same(g->map_latent(Component::Hair, z, l1), g->map_latent(Component::Hair, z, l1)));
    CHECK_FALSE(same(g->map_latent(Component::Hair, z, l1), g->map_latent(Component::Hair, z, l2)));
}

TEST_CASE("truncation endpoints") {
    std::mt19937_64 rng(3);
    const auto w = randn_from(rng, 4, 512), mean = randn_from(rng, 1, 512).squeeze(0);
    CHECK(same(truncate(w, mean, 1.0), w));
    CHECK((truncate(w, mean, 0.0) - mean).abs().max().item<float>() == 0.0f);
    const auto t = truncate(w, mean, 0.8);
    CHECK(torch::allclose(t, mean + 0.8 * (w - mean)));
    CHECK_THROWS_AS(truncate(w, mean, 1.5), Error);
}

TEST_CASE("w-mean estimate converges to the truncation anchor") {
    torch::manual_seed(4);
    Generator g(small_config());
    torch::NoGradGuard ng;
    const auto a = g->estimate_w_mean(Component::Face, 50000, 1);
    const auto b = g->estimate_w_mean(Component::Face, 50000, 2);
    // Two independent Monte-Carlo estimates agree to O(1/sqrt(n)).
    CHECK((a - b).abs().max().item<float>() < 0.05f);
    g->w_mean[0].copy_(a);
    std::mt19937_64 rng(5);
    LatentBundle bundle = LatentBundle::sample(2, 512, rng);
    const auto w = g->map(bundle);
    const auto t = g->truncated(w, 0.0);
    CHECK(same(t.w[0][0], a));
}

TEST_CASE("backbone blocks are isolated") {
    torch::manual_seed(6);
    Generator g(small_config());
    torch::NoGradGuard ng;
    std::mt19937_64 rng(7);
    std::array<torch::Tensor, 4> w1, w2;
    for (int i = 0; i < 4; ++i) w1[i] = randn_from(rng, 2, 512);
    w2 = w1;
    w2[1] = randn_from(rng, 2, 512);
    const auto b1 = g->backbone->forward(w1), b2 = g->backbone->forward(w2);
    CHECK(same(b1[0], b2[0]));
    CHECK_FALSE(same(b1[1], b2[1]));
    CHECK(same(b1[2], b2[2]));
    CHECK(same(b1[3], b2[3]));
    int total = 0;
    for (int i = 0; i < 4; ++i) total += b1[i].size(1);
    CHECK(total == 16 + 16 + 8 + 16);

    auto cfg = small_config();
    cfg.cross_block_attention = true;
    torch::manual_seed(6);
    Generator gx(cfg);
    const auto c1 = gx->backbone->forward(w1), c2 = gx->backbone->forward(w2);
    CHECK_FALSE(same(c1[0], c2[0]));
}

TEST_CASE("resampling one component leaves the others bit-identical") {
    torch::manual_seed(8);
    Generator g(small_config());
    torch::NoGradGuard ng;
    std::mt19937_64 rng(9);
    const auto cond = random_conditioning(rng, 2, 1.0f);
    for (auto c : kComponents) {
        auto a = LatentBundle::sample(2, 512, rng);
        auto b = a.clone();
        b.z[index_of(c)] = randn_from(rng, 2, 512);
        const auto sa = g->synthesize(a, cond, 0.8), sb = g->synthesize(b, cond, 0.8);
        for (auto o : kComponents) {
            if (o == c) {
                CHECK_FALSE(same(sa.components[index_of(o)], sb.components[index_of(o)]));
            } else {
                CHECK(same(sa.components[index_of(o)], sb.components[index_of(o)]));
            }
        }
    }
}

TEST_CASE("shape context moves positions only; histograms change colors only") {
    torch::manual_seed(10);
    Generator g(small_config());
    torch::NoGradGuard ng;
    std::mt19937_64 rng(11);
    const auto cond = random_conditioning(rng, 2, 1.0f);
    auto a = LatentBundle::sample(2, 512, rng);
    auto b = a.clone();
    b.z_shape = randn_from(rng, 2, 512);
    const auto sa = g->synthesize(a, cond), sb = g->synthesize(b, cond);
    for (auto c : kComponents) {
        const auto pa = sa.components[index_of(c)], pb = sb.components[index_of(c)];
        CHECK_FALSE(same(pa.narrow(2, attr::Position, 3), pb.narrow(2, attr::Position, 3)));
        CHECK(same(pa.narrow(2, attr::Rotation, 11), pb.narrow(2, attr::Rotation, 11)));
    }

    auto cond2 = cond;
    cond2.hair = torch::zeros_like(cond.hair);
    // Pure green: R bin 0, G bin 9, B bin 0.
    cond2.hair.index_put_({torch::indexing::Slice(), 0}, 1.0f);
    cond2.hair.index_put_({torch::indexing::Slice(), 19}, 1.0f);
    cond2.hair.index_put_({torch::indexing::Slice(), 20}, 1.0f);
    const auto sc = g->synthesize(a, cond2);
    const auto hair_a = sa.components[1], hair_c = sc.components[1];
    CHECK(same(hair_a.narrow(2, 0, 11), hair_c.narrow(2, 0, 11)));
    CHECK_FALSE(same(hair_a.narrow(2, attr::Color, 3), hair_c.narrow(2, attr::Color, 3)));
    CHECK(hair_c.isfinite().all().item<bool>());
    CHECK(same(sa.components[0], sc.components[0]));
}

TEST_CASE("color conditioning contract") {
    torch::manual_seed(12);
    Generator g(small_config());
    torch::NoGradGuard ng;
    std::mt19937_64 rng(13);
    const auto w = randn_from(rng, 1, 512);
    const auto tokens = g->backbone->forward({w, w, w, w});
    const auto hist = torch::full({1, kHistDim}, 0.1f);
    try {
        g->generate_component(Component::Hair, tokens[1], w, w, std::nullopt);
        FAIL("expected MissingColorConditioning");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingColorConditioning);
    }
    try {
        g->generate_component(Component::Glasses, tokens[2], w, w, hist);
        FAIL("expected UnexpectedColorConditioning");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnexpectedColorConditioning);
    }
}

TEST_CASE("hidden glasses: render independent of the glasses latent") {
    torch::manual_seed(14);
    Generator g(small_config());
    torch::NoGradGuard ng;
    std::mt19937_64 rng(15);
    const auto cond = random_conditioning(rng, 2, 0.0f);
    auto a = LatentBundle::sample(2, 512, rng);
    auto b = a.clone();
    b.z[2] = randn_from(rng, 2, 512);
    const auto ra = render_batch(g->synthesize(a, cond).scene, frontal(2, 32));
    const auto rb = render_batch(g->synthesize(b, cond).scene, frontal(2, 32));
    CHECK((ra.rgb - rb.rgb).abs().max().item<float>() < 1e-6f);
    const auto packed = g->synthesize(a, cond).scene;
    CHECK(packed.size(1) == small_config().total_primitives());
}

TEST_CASE("raster bridge gradients equal the core backward") {
    std::mt19937_64 rng(16);
    const auto data = testing::random_packed_scene<float>(rng, 6);
    auto packed = torch::from_blob(const_cast<float*>(data.data()), {1, 6, kPrimitiveFloats}).clone();
    packed.set_requires_grad(true);
    const Camera cam = testing::random_camera(rng, 24);
    const auto out = render_batch(packed, {cam});
    const auto wr = torch::randn_like(out.rgb), wa = torch::randn_like(out.alpha);
    ((out.rgb * wr).sum() + (out.alpha * wa).sum()).backward();

    const auto core = render<float>(data, cam);
    const auto gr = wr.permute({0, 2, 3, 1}).contiguous();
    const auto ga = wa.contiguous();
    const auto expect = render_backward<float>(data, cam, core.aux,
                                               std::span<const float>(gr.data_ptr<float>(), gr.numel()),
                                               std::span<const float>(ga.data_ptr<float>(), ga.numel()));
    const auto got = packed.grad().contiguous();
    for (std::size_t i = 0; i < expect.size(); ++i) REQUIRE(got.data_ptr<float>()[i] == expect[i]);
}

TEST_CASE("discriminator conditioning and gradients") {
    torch::manual_seed(17);
    Discriminator d(DiscriminatorConfig{.resolution = 32});
    auto img = torch::rand({2, 3, 32, 32}).requires_grad_(true);
    auto cond = torch::rand({2, kConditioningDim}).requires_grad_(true);
    const auto s = d->forward(img, cond);
    auto flipped = cond.detach().clone();
    flipped.index_put_({torch::indexing::Slice(), kConditioningDim - 1}, 1.0f - flipped.index({torch::indexing::Slice(), kConditioningDim - 1}));
    CHECK_FALSE(same(d->forward(img, flipped), s));
    const auto zero = torch::zeros({2, kConditioningDim});
    CHECK(same(d->forward(img, zero), d->unconditional(d->features(img))));

    s.sum().backward();
    CHECK(img.grad().abs().sum().item<float>() > 0.0f);
    CHECK(cond.grad().abs().sum().item<float>() > 0.0f);

    auto real = torch::rand({2, 3, 32, 32}).requires_grad_(true);
    const auto logits = d->forward(real, cond.detach());
    const auto grad = torch::autograd::grad({logits.sum()}, {real}, {}, true, true)[0];
    const auto r1 = grad.square().sum({1, 2, 3});
    CHECK(r1.isfinite().all().item<bool>());
    CHECK_THROWS_AS(d->forward(torch::rand({1, 3, 16, 16}), zero.narrow(0, 0, 1)), Error);
}

TEST_CASE("perceptual distance basics") {
    PerceptualExtractor p;
    const auto a = torch::rand({2, 3, 32, 32}), b = torch::rand({2, 3, 32, 32});
    CHECK(p->distance(a, a).abs().max().item<float>() == 0.0f);
    const auto d = p->distance(a, b);
    CHECK((d > 0).all().item<bool>());
    CHECK(torch::allclose(d, p->distance(b, a)));
    CHECK(p->embed(a).size(1) == PerceptualExtractorImpl::kEmbedDim);
    PerceptualExtractor q;
    CHECK(same(p->embed(a), q->embed(a)));
    const auto mask = torch::ones({2, 1, 32, 32});
    CHECK(torch::allclose(p->distance(a, b, mask), d, 1e-5, 1e-6));
}
