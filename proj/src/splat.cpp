#include "cosy/splat.hpp"

#include <cstring>

#include "cosy/error.hpp"

namespace cosy {

namespace {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string_view component_name(Component c) {
    switch (c) {
        case Component::Face: return "face";
        case Component::Hair: return "hair";
        case Component::Glasses: return "glasses";
        case Component::Torso: return "torso";
    }
    return "unknown";
}

Component component_from_name(std::string_view name) {
    for (Component c : kComponents) {
        if (component_name(c) == name) return c;
    }
    // "skin" is the dataset's name for the face region.
    if (name == "skin") return Component::Face;
    throw Error(ErrorCode::BadEdit, "unknown component '" + std::string(name) + "'");
}

void GaussianPrimitive::normalize_rotation() {
    float n2 = 0.0f;
    for (float v : rotation) n2 += v * v;
    if (n2 <= 0.0f || !std::isfinite(n2)) {
        rotation = {1.0f, 0.0f, 0.0f, 0.0f};
        return;
    }
    const float inv = 1.0f / std::sqrt(n2);
    for (float& v : rotation) v *= inv;
}

std::array<float, 3> GaussianPrimitive::scale() const {
    return {std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])};
}

float GaussianPrimitive::opacity() const { return sigmoid(opacity_logit); }

std::array<float, kPrimitiveFloats> GaussianPrimitive::pack() const {
    std::array<float, kPrimitiveFloats> r{};
    std::copy(position.begin(), position.end(), r.begin() + attr::Position);
    std::copy(rotation.begin(), rotation.end(), r.begin() + attr::Rotation);
    std::copy(log_scale.begin(), log_scale.end(), r.begin() + attr::LogScale);
    r[attr::Opacity] = opacity_logit;
    std::copy(color.begin(), color.end(), r.begin() + attr::Color);
    return r;
}

GaussianPrimitive GaussianPrimitive::unpack(std::span<const float, kPrimitiveFloats> rec) {
    GaussianPrimitive g;
    std::copy_n(rec.begin() + attr::Position, 3, g.position.begin());
    std::copy_n(rec.begin() + attr::Rotation, 4, g.rotation.begin());
    std::copy_n(rec.begin() + attr::LogScale, 3, g.log_scale.begin());
    g.opacity_logit = rec[attr::Opacity];
    std::copy_n(rec.begin() + attr::Color, 3, g.color.begin());
    return g;
}

std::vector<float> GaussianSet::packed() const {
    std::vector<float> out;
    out.reserve(primitives.size() * kPrimitiveFloats);
    for (const auto& g : primitives) {
        const auto r = g.pack();
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

GaussianSet GaussianSet::from_packed(Component tag, std::span<const float> data) {
    if (data.size() % kPrimitiveFloats != 0) {
        throw Error(ErrorCode::FormatError, "packed buffer is not a whole number of records");
    }
    GaussianSet set;
    set.tag = tag;
    set.primitives.reserve(data.size() / kPrimitiveFloats);
    for (std::size_t i = 0; i < data.size(); i += kPrimitiveFloats) {
        set.primitives.push_back(
            GaussianPrimitive::unpack(std::span<const float, kPrimitiveFloats>(data.data() + i, kPrimitiveFloats)));
    }
    return set;
}

std::uint64_t GaussianSet::content_hash() const {
    const auto p = packed();
    std::uint64_t h = fnv1a(&tag, sizeof(tag));
    return fnv1a(p.data(), p.size() * sizeof(float), h);
}

std::uint64_t GaussianSet::geometry_hash() const {
    std::uint64_t h = fnv1a(&tag, sizeof(tag));
    for (const auto& g : primitives) h = fnv1a(g.position.data(), sizeof(g.position), h);
    return h;
}

std::size_t ComposedScene::primitive_count() const {
    std::size_t n = 0;
    for (const auto& s : sets) n += s.size();
    return n;
}

std::vector<float> ComposedScene::packed() const {
    std::vector<float> out;
    out.reserve(primitive_count() * kPrimitiveFloats);
    for (const auto& s : sets) {
        const auto p = s.packed();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

GaussianSet hide_component(const GaussianSet& set, float suppression) {
    GaussianSet out = set;
    for (auto& g : out.primitives) g.opacity_logit -= suppression;
    return out;
}

ComposedScene compose(const GaussianSet& face, const GaussianSet& hair, const GaussianSet& glasses,
                      const GaussianSet& torso, bool glasses_active) {
    const std::array<const GaussianSet*, 4> in = {&face, &hair, &glasses, &torso};
    ComposedScene scene;
    scene.glasses_active = glasses_active;
    for (int i = 0; i < kNumComponents; ++i) {
        if (in[i]->empty()) {
            throw Error(ErrorCode::EmptyComponent,
                        std::string(component_name(kComponents[i])) + " set has no primitives");
        }
        scene.sets[i] = *in[i];
        scene.sets[i].tag = kComponents[i];
    }
    if (!glasses_active) scene.sets[index_of(Component::Glasses)] = hide_component(glasses);
    return scene;
}

}  // namespace cosy
