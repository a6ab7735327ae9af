#pragma once

// Random scenes and the finite-difference oracle shared by the rasterizer
// unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cosy/camera.hpp"
#include "cosy/raster.hpp"
#include "cosy/splat.hpp"

namespace cosy::testing {

template <class T>
std::vector<T> random_packed_scene(std::mt19937_64& rng, int count, double extent = 0.4) {
    std::uniform_real_distribution<double> pos(-extent, extent);
    std::uniform_real_distribution<double> logs(std::log(0.06), std::log(0.2));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> logit(-2.0, 2.0);
    std::uniform_real_distribution<double> col(0.1, 0.9);
    std::vector<T> out;
    for (int i = 0; i < count; ++i) {
        const double rec[kPrimitiveFloats] = {pos(rng),    pos(rng),    pos(rng),    normal(rng), normal(rng),
                                              normal(rng), normal(rng), logs(rng),   logs(rng),   logs(rng),
                                              logit(rng),  col(rng),    col(rng),    col(rng)};
        for (double v : rec) out.push_back(T(v));
    }
    return out;
}

inline Camera random_camera(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<double> yaw(-60.0, 60.0), pitch(-20.0, 20.0);
    return Camera::orbit(yaw(rng), pitch(rng), 3.0, Eigen::Vector3d::Zero(), 1.9, size, size);
}

/// Weighted sum of all image outputs; the weights define the upstream gradient.
struct LinearProbe {
    std::vector<double> w_rgb;
    std::vector<double> w_alpha;

    LinearProbe(std::mt19937_64& rng, int width, int height) {
        std::normal_distribution<double> n;
        w_rgb.resize(std::size_t(width) * height * 3);
        w_alpha.resize(std::size_t(width) * height);
        for (auto& v : w_rgb) v = n(rng);
        for (auto& v : w_alpha) v = n(rng);
    }

    double eval(const RenderOutput<double>& out) const {
        double s = 0.0;
        for (std::size_t i = 0; i < w_rgb.size(); ++i) s += w_rgb[i] * out.rgb[i];
        for (std::size_t i = 0; i < w_alpha.size(); ++i) s += w_alpha[i] * out.alpha[i];
        return s;
    }
};

struct GradcheckResult {
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
    int worst_index = -1;
};

/// Central differences on every packed attribute, compared elementwise
/// against the analytic backward: |a - n| / max(|n|, floor).
inline GradcheckResult gradcheck(const std::vector<double>& packed, const Camera& cam, const LinearProbe& probe,
                                 double eps = 1e-5, double floor = 1e-6, const RasterSettings& settings = {}) {
    const auto fwd = render<double>(std::span<const double>(packed), cam, settings);
    const auto analytic = render_backward<double>(std::span<const double>(packed), cam, fwd.aux,
                                                  std::span<const double>(probe.w_rgb),
                                                  std::span<const double>(probe.w_alpha), settings);
    GradcheckResult res;
    auto x = packed;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double lp = probe.eval(render<double>(std::span<const double>(x), cam, settings));
        x[i] = orig - eps;
        const double lm = probe.eval(render<double>(std::span<const double>(x), cam, settings));
        x[i] = orig;
        const double numeric = (lp - lm) / (2.0 * eps);
        const double rel = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), floor);
        res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(analytic[i]));
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = static_cast<int>(i);
        }
    }
    return res;
}

}  // namespace cosy::testing
