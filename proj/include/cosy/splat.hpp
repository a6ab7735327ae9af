#pragma once

// Gaussian primitives, per-component sets and composed scenes.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace cosy {

enum class Component : std::uint32_t { Face = 0, Hair = 1, Glasses = 2, Torso = 3 };

inline constexpr std::array<Component, 4> kComponents = {Component::Face, Component::Hair,
                                                         Component::Glasses, Component::Torso};
inline constexpr int kNumComponents = 4;

std::string_view component_name(Component c);
// Throws Error(BadEdit) on unknown names.
Component component_from_name(std::string_view name);

inline constexpr int index_of(Component c) { return static_cast<int>(c); }

/// Number of floats in one packed primitive record:
/// position(3) quaternion(4, w first) log_scale(3) opacity_logit(1) rgb(3).
inline constexpr int kPrimitiveFloats = 14;

/// Offsets into a packed record.
namespace attr {
inline constexpr int Position = 0;
inline constexpr int Rotation = 3;
inline constexpr int LogScale = 7;
inline constexpr int Opacity = 10;
inline constexpr int Color = 11;
}  // namespace attr

/// Opacity-logit shift used to hide additive components.
inline constexpr float kHideSuppression = 100.0f;

struct GaussianPrimitive {
    std::array<float, 3> position{};
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f};  // (w, x, y, z)
    std::array<float, 3> log_scale{};
    float opacity_logit = 0.0f;
    std::array<float, 3> color{};  // activated linear RGB in [0,1]

    /// Rescales the quaternion to unit norm (identity if degenerate).
    void normalize_rotation();
    std::array<float, 3> scale() const;
    float opacity() const;

    std::array<float, kPrimitiveFloats> pack() const;
    static GaussianPrimitive unpack(std::span<const float, kPrimitiveFloats> rec);

    bool operator==(const GaussianPrimitive&) const = default;
};

struct GaussianSet {
    Component tag = Component::Face;
    std::vector<GaussianPrimitive> primitives;

    std::size_t size() const { return primitives.size(); }
    bool empty() const { return primitives.empty(); }
    bool operator==(const GaussianSet&) const = default;

    /// Packed records, kPrimitiveFloats per primitive, in primitive order.
    std::vector<float> packed() const;
    static GaussianSet from_packed(Component tag, std::span<const float> data);

    /// FNV-1a over the raw bytes of the packed attributes.
    std::uint64_t content_hash() const;
    /// Hash over positions only.
    std::uint64_t geometry_hash() const;
};

struct ComposedScene {
    std::array<GaussianSet, 4> sets;  // face, hair, glasses, torso
    bool glasses_active = true;

    std::size_t primitive_count() const;
    const GaussianSet& set(Component c) const { return sets[index_of(c)]; }
    bool operator==(const ComposedScene&) const = default;

    /// All primitives flattened in component order.
    std::vector<float> packed() const;
};

GaussianSet hide_component(const GaussianSet& set, float suppression = kHideSuppression);

/// Throws Error(EmptyComponent) if any set is empty. The glasses set is hidden
/// when glasses_active is false; the other sets pass through untouched.
ComposedScene compose(const GaussianSet& face, const GaussianSet& hair, const GaussianSet& glasses,
                      const GaussianSet& torso, bool glasses_active);

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace cosy
