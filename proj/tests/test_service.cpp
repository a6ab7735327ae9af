#include <torch/torch.h>
#undef CHECK
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <thread>

#include "cosy/error.hpp"
#include "cosy/png.hpp"
#include "cosy/raster.hpp"
#include "cosy/service.hpp"
#include "cosy/splat_io.hpp"
#include "model_fixtures.hpp"

using namespace cosy;
using nlohmann::json;

namespace {

struct Served {
    std::filesystem::path dir;
    std::unique_ptr<EditService> service;
};

Served make_service(const std::string& name, const RunConfig& cfg, int max_sessions = 100) {
    Served s;
    s.dir = fixtures::temp_dir(name);
    save_checkpoint(s.dir / "model.ckpt", fixtures::model_checkpoint(cfg));
    ServiceOptions opt;
    opt.checkpoint_dir = s.dir;
    opt.max_sessions = max_sessions;
    s.service = std::make_unique<EditService>(opt);
    s.service->load_checkpoint("model.ckpt");
    return s;
}

bool same_attrs(const GaussianSet& a, const GaussianSet& b, int first, int count) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto pa = a.primitives[i].pack(), pb = b.primitives[i].pack();
        if (std::memcmp(pa.data() + first, pb.data() + first, sizeof(float) * count) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("soft histogram kernel over bin centers") {
    const auto h = soft_histogram({0.5f, 0.0f, 1.0f});
    CHECK(histogram_is_simplex(h));
    // 0.5 sits between the centers of bins 4 and 5, one half bin from each
    CHECK(h[4] == doctest::Approx(h[5]).epsilon(1e-6));
    double total = 0.0;
    for (int k = 0; k < kHistBins; ++k) {
        const double d = (0.5 - (k + 0.5) / 10.0) / 0.05;
        total += std::exp(-0.5 * d * d);
    }
    CHECK(h[4] == doctest::Approx(std::exp(-0.5) / total).epsilon(1e-6));
    CHECK(h[kHistBins + 0] > 0.8f);      // green channel of 0.0 -> first bin
    CHECK(h[2 * kHistBins + 9] > 0.8f);  // blue channel of 1.0 -> last bin
}

TEST_CASE("session creation is deterministic and matches the batch generator") {
    auto cfg = fixtures::small_model_config();
    auto s = make_service("svc_det", cfg);
    auto a = s.service->create_session(11);
    auto b = s.service->create_session(11);
    auto c = s.service->create_session(12);
    CHECK(a->id() != b->id());
    CHECK(a->frame().rgb == b->frame().rgb);
    CHECK(a->frame().rgb != c->frame().rgb);
    CHECK(a->psi() == 0.8);
    CHECK(a->frame().width == 32);

    // Replays the session's draws through the batched synthesis path.
    const auto& m = a->model();
    std::mt19937_64 rng(11);
    const auto bundle = LatentBundle::sample(1, m.generator->cfg.z_dim, rng);
    const auto data = m.config.dataset();
    const auto labels = generate_sample(rng, data.palette, data.resolution, data.shrink_radius).labels;
    CHECK(labels == a->labels());
    torch::NoGradGuard ng;
    const auto out = m.generator->synthesize(bundle, ConditioningBatch::from({labels}), 0.8);
    for (auto comp : kComponents) {
        const auto ref = to_gaussian_set(comp, out.components[index_of(comp)][0]);
        const auto& got = a->scene().set(comp);
        if (comp == Component::Glasses && !a->scene().glasses_active) {
            CHECK(got == hide_component(ref));
        } else {
            CHECK(got == ref);
        }
    }
}

TEST_CASE("latent edit regenerates only its own component") {
    auto s = make_service("svc_latent", fixtures::small_model_config());
    auto sess = s.service->create_session(3);
    const auto before = sess->content_hashes();
    const auto counters = sess->counters();
    s.service->edit(sess->id(), json{{"op", "set_component_latent"}, {"component", "hair"}, {"seed", 99}});
    const auto after = sess->content_hashes();
    const auto& now = sess->counters();
    for (auto comp : kComponents) {
        const int i = index_of(comp);
        if (comp == Component::Hair) {
            CHECK(after[i] != before[i]);
            CHECK(now.features[i].misses == counters.features[i].misses + 1);
        } else {
            CHECK(after[i] == before[i]);
            CHECK(now.features[i].hits == counters.features[i].hits + 1);
            CHECK(now.features[i].misses == counters.features[i].misses);
            CHECK(now.geometry[i].misses == counters.geometry[i].misses);
            CHECK(now.colors[i].misses == counters.colors[i].misses);
        }
    }
    // the same z by value reproduces the seeded edit
    std::mt19937_64 rng(99);
    const auto z = randn_from(rng, 1, 64);
    std::vector<float> v(z.data_ptr<float>(), z.data_ptr<float>() + 64);
    auto twin = s.service->create_session(3);
    s.service->edit(twin->id(), json{{"op", "set_component_latent"}, {"component", "hair"}, {"vector", v}});
    CHECK(twin->content_hashes() == after);
    CHECK(twin->frame().rgb == sess->frame().rgb);
}

TEST_CASE("color edit keeps geometry and touches only the region's colors") {
    auto s = make_service("svc_color", fixtures::small_model_config());
    auto sess = s.service->create_session(4);
    const auto scene0 = sess->scene();
    const auto c0 = sess->counters();
    const auto f = s.service->edit(sess->id(), json{{"op", "set_color"}, {"region", "hair"}, {"rgb", {0.0, 1.0, 0.0}}});
    const auto& scene1 = sess->scene();
    CHECK(scene1.set(Component::Hair).geometry_hash() == scene0.set(Component::Hair).geometry_hash());
    CHECK(same_attrs(scene1.set(Component::Hair), scene0.set(Component::Hair), 0, attr::Color));
    CHECK_FALSE(same_attrs(scene1.set(Component::Hair), scene0.set(Component::Hair), attr::Color, 3));
    for (auto comp : {Component::Face, Component::Glasses, Component::Torso}) CHECK(scene1.set(comp) == scene0.set(comp));
    const int h = index_of(Component::Hair);
    CHECK(sess->counters().features[h].misses == c0.features[h].misses);
    CHECK(sess->counters().geometry[h].misses == c0.geometry[h].misses);
    CHECK(sess->counters().colors[h].misses == c0.colors[h].misses + 1);
    CHECK(sess->labels().hair == soft_histogram({0.0f, 1.0f, 0.0f}));
    CHECK(f.id == 1);

    // skin maps to the face component; explicit histograms are accepted
    Histogram flat{};
    flat.fill(0.1f);
    s.service->edit(sess->id(), json{{"op", "set_color"}, {"region", "skin"}, {"histogram", flat}});
    CHECK(sess->labels().skin == flat);
    CHECK(sess->scene().set(Component::Face).geometry_hash() == scene0.set(Component::Face).geometry_hash());
}

TEST_CASE("glasses toggle restores the exact pre-toggle frame") {
    auto s = make_service("svc_glasses", fixtures::small_model_config());
    auto sess = s.service->create_session(5);
    s.service->edit(sess->id(), json{{"op", "set_glasses"}, {"value", false}});
    const auto base = sess->frame().rgb;
    const auto hashes = sess->content_hashes();
    const auto c0 = sess->counters();
    s.service->edit(sess->id(), json{{"op", "set_glasses"}, {"value", true}});
    CHECK(sess->scene().glasses_active);
    CHECK(sess->frame().rgb != base);
    s.service->edit(sess->id(), json{{"op", "set_glasses"}, {"value", false}});
    CHECK(sess->frame().rgb == base);
    CHECK(sess->content_hashes() == hashes);
    for (int i = 0; i < 4; ++i) {
        CHECK(sess->counters().geometry[i].misses == c0.geometry[i].misses);
        CHECK(sess->counters().colors[i].misses == c0.colors[i].misses);
    }
}

TEST_CASE("shape edit moves positions only; light edit remaps every component") {
    auto s = make_service("svc_shape", fixtures::small_model_config());
    auto sess = s.service->create_session(6);
    const auto scene0 = sess->scene();
    const auto c0 = sess->counters();
    s.service->edit(sess->id(), json{{"op", "set_shape"}, {"seed", 17}});
    for (auto comp : kComponents) {
        const int i = index_of(comp);
        CHECK(same_attrs(sess->scene().set(comp), scene0.set(comp), attr::Rotation, kPrimitiveFloats - attr::Rotation));
        CHECK_FALSE(same_attrs(sess->scene().set(comp), scene0.set(comp), attr::Position, 3));
        CHECK(sess->counters().features[i].misses == c0.features[i].misses);
        CHECK(sess->counters().colors[i].misses == c0.colors[i].misses);
        CHECK(sess->counters().geometry[i].misses == c0.geometry[i].misses + 1);
    }
    const auto c1 = sess->counters();
    s.service->edit(sess->id(), json{{"op", "set_light"}, {"seed", 18}});
    for (int i = 0; i < 4; ++i) CHECK(sess->counters().features[i].misses == c1.features[i].misses + 1);
}

TEST_CASE("truncation to zero collapses latents onto the anchors") {
    auto s = make_service("svc_psi", fixtures::small_model_config());
    auto a = s.service->create_session(1);
    auto b = s.service->create_session(2);
    for (auto& id : {a->id(), b->id()}) s.service->edit(id, json{{"op", "set_truncation"}, {"psi", 0.0}});
    for (auto comp : kComponents) {
        CHECK(a->scene().set(comp).geometry_hash() == b->scene().set(comp).geometry_hash());
    }
    CHECK(a->psi() == 0.0);
}

TEST_CASE("camera edit re-renders without regenerating") {
    auto s = make_service("svc_cam", fixtures::small_model_config());
    auto sess = s.service->create_session(7);
    const auto f0 = sess->frame().rgb;
    const auto c0 = sess->counters();
    s.service->edit(sess->id(), json{{"op", "set_camera"}, {"yaw", 30.0}, {"pitch", 5.0}});
    CHECK(sess->frame().rgb != f0);
    for (int i = 0; i < 4; ++i) {
        CHECK(sess->counters().geometry[i].misses == c0.geometry[i].misses);
        CHECK(sess->counters().colors[i].misses == c0.colors[i].misses);
    }
    s.service->edit(sess->id(), json{{"op", "set_camera"}, {"yaw", 0.0}, {"pitch", 0.0}});
    CHECK(sess->frame().rgb == f0);
}

TEST_CASE("export round-trips to the live frame") {
    auto s = make_service("svc_export", fixtures::small_model_config());
    auto sess = s.service->create_session(8);
    for (bool glasses : {false, true}) {
        s.service->edit(sess->id(), json{{"op", "set_glasses"}, {"value", glasses}});
        s.service->edit(sess->id(), json{{"op", "set_camera"}, {"yaw", glasses ? -20.0 : 25.0}});
        const auto bytes = sess->export_splat();
        CHECK(bytes.substr(0, 4) == "CSY1");
        const auto scene = decode_scene(bytes, glasses);
        CHECK(scene.primitive_count() == sess->scene().primitive_count());
        const auto out = render(scene, sess->camera());
        double worst = 0.0;
        for (std::size_t i = 0; i < out.rgb.size(); ++i) {
            worst = std::max(worst, double(std::abs(out.rgb[i] - sess->frame().rgb[i])));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("frame stream message layout") {
    auto s = make_service("svc_frame", fixtures::small_model_config());
    auto sess = s.service->create_session(9);
    s.service->edit(sess->id(), json{{"op", "set_glasses"}, {"value", true}});
    const auto msg = sess->frame().stream_message();
    std::uint32_t id;
    std::uint16_t w, h;
    std::memcpy(&id, msg.data(), 4);
    std::memcpy(&w, msg.data() + 4, 2);
    std::memcpy(&h, msg.data() + 6, 2);
    CHECK(id == 1);
    CHECK(w == 32);
    CHECK(h == 32);
    const auto png = decode_png(msg.substr(8));
    CHECK(png.width == 32);
    CHECK(png.height == 32);
    for (std::size_t i = 0; i < png.rgb.size(); ++i) {
        const auto expect = std::lround(std::clamp(sess->frame().rgb[i], 0.0f, 1.0f) * 255.0f);
        REQUIRE(png.rgb[i] == expect);
    }
}

TEST_CASE("bad edits and unknown sessions") {
    auto s = make_service("svc_bad", fixtures::small_model_config());
    auto sess = s.service->create_session(1);
    const auto id = sess->id();
    auto code = [&](const json& e) {
        try {
            s.service->edit(id, e);
        } catch (const Error& err) {
            return err.code();
        }
        return ErrorCode::Culled;  // sentinel: no error
    };
    CHECK(code(json{{"op", "paint"}}) == ErrorCode::BadEdit);
    CHECK(code(json::array()) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_color"}, {"region", "hair"}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_color"}, {"region", "hair"}, {"rgb", {1.5, 0, 0}}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_color"}, {"region", "glasses"}, {"rgb", {1, 0, 0}}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_color"}, {"region", "hair"}, {"rgb", {1, 0}}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_color"}, {"region", "hair"}, {"histogram", std::vector<float>(30, 0.5f)}}) ==
          ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_component_latent"}, {"component", "hat"}, {"seed", 1}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_component_latent"}, {"component", "hair"}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_component_latent"}, {"component", "hair"}, {"seed", "x"}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_component_latent"}, {"component", "hair"}, {"pca", {1.0}}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_glasses"}, {"value", 1}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_truncation"}, {"psi", 1.5}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_camera"}, {"radius", 0.1}}) == ErrorCode::BadEdit);
    CHECK(code(json{{"op", "set_camera"}, {"pitch", 90}}) == ErrorCode::BadEdit);
    // failed edits leave the session untouched
    CHECK(sess->frame().id == 0);
    CHECK(code(json{{"op", "set_glasses"}, {"value", true}}) == ErrorCode::Culled);

    CHECK_THROWS_WITH_AS(s.service->edit("nope", json{{"op", "set_glasses"}, {"value", true}}),
                         doctest::Contains("UnknownSession"), Error);
    s.service->close_session(id);
    CHECK_THROWS_AS(s.service->session(id), Error);
}

TEST_CASE("session limit and isolation across 100 sessions") {
    auto s = make_service("svc_many", fixtures::small_model_config(), 100);
    std::vector<std::shared_ptr<Session>> all;
    for (int i = 0; i < 100; ++i) all.push_back(s.service->create_session(1000 + i));
    CHECK(s.service->session_count() == 100);
    try {
        s.service->create_session(1);
        FAIL("expected the session limit");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SessionLimit);
    }
    std::vector<std::array<std::uint64_t, 4>> before;
    for (auto& x : all) before.push_back(x->content_hashes());

    // concurrent edits on distinct sessions
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (int i = t; i < 100; i += 4) {
                s.service->edit(all[i]->id(), json{{"op", "set_component_latent"}, {"component", "torso"}, {"seed", i}});
            }
        });
    }
    for (auto& th : threads) th.join();
    for (int i = 0; i < 100; ++i) {
        const auto h = all[i]->content_hashes();
        CHECK(h[0] == before[i][0]);
        CHECK(h[1] == before[i][1]);
        CHECK(h[2] == before[i][2]);
        CHECK(h[3] != before[i][3]);
    }
    s.service->close_session(all[0]->id());
    // a fresh session replaying the same edit serially lands on the same state
    auto again = s.service->create_session(1000);
    s.service->edit(again->id(), json{{"op", "set_component_latent"}, {"component", "torso"}, {"seed", 0}});
    CHECK(again->content_hashes() == all[0]->content_hashes());
    CHECK(s.service->latency(EditClass::Latent).count == 101);
}

TEST_CASE("PCA sidecar edits and digest refusal") {
    auto cfg = fixtures::small_model_config();
    const auto dir = fixtures::temp_dir("svc_pca");
    const auto ckpt = fixtures::model_checkpoint(cfg);
    const auto bytes = encode_checkpoint(ckpt);
    write_file(dir / "model.ckpt", bytes);
    auto g = generator_from_checkpoint(ckpt);
    PcaSidecar side;
    side.checkpoint_digest = fnv1a64(bytes);
    for (auto c : kComponents) side.components[index_of(c)] = pca_directions(g, c, 2000, 3, 1);
    write_file(dir / "model.ckpt.pca", encode_pca_sidecar(side));

    ServiceOptions opt;
    opt.checkpoint_dir = dir;
    EditService service(opt);
    service.load_checkpoint("model.ckpt");
    auto sess = service.create_session(2);
    const auto before = sess->content_hashes();
    service.edit(sess->id(), json{{"op", "set_component_latent"}, {"component", "hair"}, {"pca", {0.0}}});
    auto mid = sess->content_hashes();
    CHECK(mid[0] == before[0]);
    CHECK(mid[1] != before[1]);
    service.edit(sess->id(), json{{"op", "set_component_latent"}, {"component", "hair"}, {"pca", {2.0, -1.0}}});
    CHECK(sess->content_hashes()[1] != mid[1]);
    CHECK(sess->content_hashes()[3] == before[3]);
    // a light edit does not move a component pinned by PCA coordinates
    const auto pinned = sess->content_hashes()[1];
    const auto c0 = sess->counters();
    service.edit(sess->id(), json{{"op", "set_light"}, {"seed", 4}});
    CHECK(sess->counters().features[1].misses == c0.features[1].misses);
    CHECK(sess->content_hashes()[1] == pinned);
    CHECK_THROWS_AS(service.edit(sess->id(), json{{"op", "set_component_latent"}, {"component", "hair"}, {"pca", {0, 0, 0, 0}}}),
                    Error);
}

TEST_CASE("mismatched PCA sidecars and bad checkpoints are refused") {
    auto cfg = fixtures::small_model_config();
    const auto dir = fixtures::temp_dir("svc_refuse");
    const auto ckpt = fixtures::model_checkpoint(cfg);
    write_file(dir / "model.ckpt", encode_checkpoint(ckpt));
    auto g = generator_from_checkpoint(ckpt);
    PcaSidecar side;
    side.checkpoint_digest = 12345;
    for (auto c : kComponents) side.components[index_of(c)] = pca_directions(g, c, 500, 2, 1);
    write_file(dir / "model.ckpt.pca", encode_pca_sidecar(side));
    CHECK_THROWS_WITH_AS(load_model(dir / "model.ckpt", "m"), doctest::Contains("CheckpointInvalid"), Error);

    write_file(dir / "junk.ckpt", "not a checkpoint");
    CHECK_THROWS_WITH_AS(load_model(dir / "junk.ckpt", "j"), doctest::Contains("CheckpointInvalid"), Error);
    CHECK_THROWS_WITH_AS(load_model(dir / "missing.ckpt", "x"), doctest::Contains("CheckpointInvalid"), Error);

    auto mono = cfg;
    mono.set("model.monolithic", "true");
    write_file(dir / "mono.ckpt", encode_checkpoint(fixtures::model_checkpoint(mono)));
    CHECK_THROWS_WITH_AS(load_model(dir / "mono.ckpt", "mono"), doctest::Contains("CheckpointInvalid"), Error);
}

TEST_CASE("cross-block attention couples every component's cache") {
    auto cfg = fixtures::small_model_config();
    cfg.set("model.cross_block_attention", "true");
    auto s = make_service("svc_cross", cfg);
    auto sess = s.service->create_session(3);
    const auto c0 = sess->counters();
    s.service->edit(sess->id(), json{{"op", "set_component_latent"}, {"component", "hair"}, {"seed", 5}});
    for (int i = 0; i < 4; ++i) CHECK(sess->counters().features[i].misses == c0.features[i].misses + 1);
}

TEST_CASE("edit latency at 64x64 with the default model") {
    RunConfig cfg;  // default architecture, 3408 primitives
    auto s = make_service("svc_latency", cfg);
    auto sess = s.service->create_session(1);
    const auto id = sess->id();
    for (int i = 0; i < 9; ++i) {
        s.service->edit(id, json{{"op", "set_color"}, {"region", "hair"}, {"rgb", {0.1 * i, 0.5, 0.2}}});
        s.service->edit(id, json{{"op", "set_glasses"}, {"value", i % 2 == 0}});
        s.service->edit(id, json{{"op", "set_component_latent"}, {"component", "hair"}, {"seed", i}});
    }
    const auto appearance = s.service->latency(EditClass::Appearance);
    const auto latent = s.service->latency(EditClass::Latent);
    MESSAGE("appearance median ms " << appearance.median_ms << ", latent median ms " << latent.median_ms);
    CHECK(appearance.count == 18);
    CHECK(appearance.median_ms < 50.0);
    CHECK(latent.median_ms < 200.0);
    const auto m = s.service->metrics();
    CHECK(m["latency"]["latent"]["count"] == 9);
}
