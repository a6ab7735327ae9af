#include "cosy/raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

#include <Eigen/Core>

#include "cosy/error.hpp"

namespace cosy {

namespace {

template <class T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using Mat23 = Eigen::Matrix<T, 2, 3>;
template <class T>
using Mat2 = Eigen::Matrix<T, 2, 2>;

template <class T>
struct CameraT {
    Mat3<T> rot;
    Vec3<T> trans;
    T fx, fy, cx, cy, near_plane;
    int width, height;

    explicit CameraT(const Camera& c)
        : rot(c.rotation().cast<T>()),
          trans(c.translation().cast<T>()),
          fx(T(c.fx)),
          fy(T(c.fy)),
          cx(T(c.cx)),
          cy(T(c.cy)),
          near_plane(T(c.near_plane)),
          width(c.width),
          height(c.height) {}
};

template <class T>
Mat3<T> quat_to_rot(T w, T x, T y, T z) {
    Mat3<T> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Intermediate quantities shared by forward projection and its backward.
template <class T>
struct ProjectionTerms {
    std::array<T, 4> qn{};
    T qnorm{};
    Vec3<T> scale;
    Mat3<T> rot;
    Mat3<T> m;  // rot * diag(scale)
    Mat3<T> cov3;
    Vec3<T> tc;  // camera-space point
    Mat23<T> jw;
    Mat2<T> cov2;
};

template <class T>
bool project_terms(const T* rec, const CameraT<T>& cam, const RasterSettings& settings, ProjectionTerms<T>& pt,
                   ProjectedGaussian<T>& out) {
    out = ProjectedGaussian<T>{};
    const Vec3<T> p(rec[attr::Position], rec[attr::Position + 1], rec[attr::Position + 2]);
    pt.tc = cam.rot * p + cam.trans;
    out.depth = pt.tc.z();
    if (!(pt.tc.z() > cam.near_plane)) return false;

    const T* q = rec + attr::Rotation;
    pt.qnorm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (pt.qnorm > T(0)) {
        for (int i = 0; i < 4; ++i) pt.qn[i] = q[i] / pt.qnorm;
    } else {
        pt.qn = {T(1), T(0), T(0), T(0)};
    }
    pt.rot = quat_to_rot(pt.qn[0], pt.qn[1], pt.qn[2], pt.qn[3]);
    for (int i = 0; i < 3; ++i) pt.scale[i] = std::exp(rec[attr::LogScale + i]);
    pt.m = pt.rot * pt.scale.asDiagonal();
    pt.cov3 = pt.m * pt.m.transpose();

    const T tx = pt.tc.x(), ty = pt.tc.y(), tz = pt.tc.z();
    Mat23<T> j;
    j << cam.fx / tz, T(0), -cam.fx * tx / (tz * tz),  //
        T(0), cam.fy / tz, -cam.fy * ty / (tz * tz);
    pt.jw = j * cam.rot;
    pt.cov2 = pt.jw * pt.cov3 * pt.jw.transpose();
    pt.cov2(0, 0) += T(settings.cov_floor);
    pt.cov2(1, 1) += T(settings.cov_floor);

    const T a = pt.cov2(0, 0), b = T(0.5) * (pt.cov2(0, 1) + pt.cov2(1, 0)), c = pt.cov2(1, 1);
    const T det = a * c - b * b;
    if (!(det > T(0))) return false;
    out.mean = {cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy};
    out.cov = {a, b, c};
    out.conic = {c / det, -b / det, a / det};
    out.opacity = T(1) / (T(1) + std::exp(-rec[attr::Opacity]));
    out.color = {rec[attr::Color], rec[attr::Color + 1], rec[attr::Color + 2]};

    // Footprint: the larger of 3 sigma and the distance at which the
    // contribution drops under alpha_min, so the tile lists never drop a
    // pixel the compositor would keep.
    const T mid = T(0.5) * (a + c);
    const double lambda = static_cast<double>(mid + std::sqrt(std::max(mid * mid - det, T(0))));
    const double cutoff = 2.0 * std::log(std::max(1.0, static_cast<double>(out.opacity) / settings.alpha_min));
    out.radius = static_cast<int>(std::ceil(std::sqrt(lambda * std::max(9.0, cutoff))));

    const int ts = settings.tile_size;
    const int tiles_x = (cam.width + ts - 1) / ts;
    const int tiles_y = (cam.height + ts - 1) / ts;
    const double mx = static_cast<double>(out.mean[0]);
    const double my = static_cast<double>(out.mean[1]);
    const int x0 = std::max(0, static_cast<int>(std::floor((mx - out.radius) / ts)));
    const int y0 = std::max(0, static_cast<int>(std::floor((my - out.radius) / ts)));
    const int x1 = std::min(tiles_x, static_cast<int>(std::floor((mx + out.radius) / ts)) + 1);
    const int y1 = std::min(tiles_y, static_cast<int>(std::floor((my + out.radius) / ts)) + 1);
    if (!std::isfinite(mx) || !std::isfinite(my) || x0 >= x1 || y0 >= y1) return false;
    out.tile_rect = {x0, y0, x1, y1};
    out.visible = true;
    return true;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// Stable LSD radix sort of indices by 32-bit keys.
void radix_sort(std::vector<std::uint32_t>& keys, std::vector<std::uint32_t>& values) {
    std::vector<std::uint32_t> k2(keys.size()), v2(values.size());
    for (int shift = 0; shift < 32; shift += 8) {
        std::array<std::size_t, 257> count{};
        for (auto k : keys) ++count[((k >> shift) & 0xffu) + 1];
        for (int i = 0; i < 256; ++i) count[i + 1] += count[i];
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const auto slot = count[(keys[i] >> shift) & 0xffu]++;
            k2[slot] = keys[i];
            v2[slot] = values[i];
        }
        keys.swap(k2);
        values.swap(v2);
    }
}

template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (int i = t; i < n; i += threads) fn(i);
        });
    }
}

template <class T>
struct PreparedScene {
    std::vector<ProjectedGaussian<T>> projected;
    std::vector<std::uint32_t> order;
    std::vector<std::uint32_t> tile_offsets;
    std::vector<std::uint32_t> tile_lists;
    int tiles_x = 0;
    int tiles_y = 0;
};

template <class T>
PreparedScene<T> prepare(std::span<const T> packed, const CameraT<T>& cam, const RasterSettings& settings) {
    const std::size_t n = packed.size() / kPrimitiveFloats;
    PreparedScene<T> ps;
    ps.projected.resize(n);
    std::vector<std::uint32_t> keys;
    for (std::size_t i = 0; i < n; ++i) {
        ProjectionTerms<T> pt;
        if (project_terms(packed.data() + i * kPrimitiveFloats, cam, settings, pt, ps.projected[i])) {
            ps.order.push_back(static_cast<std::uint32_t>(i));
            keys.push_back(std::bit_cast<std::uint32_t>(static_cast<float>(ps.projected[i].depth)));
        }
    }
    radix_sort(keys, ps.order);

    const int ts = settings.tile_size;
    ps.tiles_x = (cam.width + ts - 1) / ts;
    ps.tiles_y = (cam.height + ts - 1) / ts;
    const int ntiles = ps.tiles_x * ps.tiles_y;
    ps.tile_offsets.assign(ntiles + 1, 0);
    for (auto idx : ps.order) {
        const auto& r = ps.projected[idx].tile_rect;
        for (int ty = r[1]; ty < r[3]; ++ty)
            for (int tx = r[0]; tx < r[2]; ++tx) ++ps.tile_offsets[ty * ps.tiles_x + tx + 1];
    }
    for (int i = 0; i < ntiles; ++i) ps.tile_offsets[i + 1] += ps.tile_offsets[i];
    ps.tile_lists.resize(ps.tile_offsets[ntiles]);
    std::vector<std::uint32_t> fill(ps.tile_offsets.begin(), ps.tile_offsets.end() - 1);
    for (auto idx : ps.order) {
        const auto& r = ps.projected[idx].tile_rect;
        for (int ty = r[1]; ty < r[3]; ++ty)
            for (int tx = r[0]; tx < r[2]; ++tx) ps.tile_lists[fill[ty * ps.tiles_x + tx]++] = idx;
    }
    return ps;
}

// Contributions fade in between alpha_min and 2 * alpha_min with a C1
// smoothstep so the image stays differentiable at the cutoff. Returns the
// effective alpha; `slope` receives d(effective)/d(raw).
template <class T>
inline T gate_alpha(T a, T alpha_min, T& slope) {
    if (a >= T(2) * alpha_min) {
        slope = T(1);
        return a;
    }
    const T t = (a - alpha_min) / alpha_min;
    const T s = t * t * (T(3) - T(2) * t);
    const T ds = T(6) * t * (T(1) - t) / alpha_min;
    slope = s + a * ds;
    return a * s;
}

template <class T>
struct PixelGrad {
    std::array<T, 2> mean{};
    std::array<T, 3> conic{};
    T opacity{};
    std::array<T, 3> color{};
};

template <class T>
struct ChainEntry {
    std::uint32_t slot;  // position in the tile list
    T alpha;
    T transmittance;  // before this contribution
    T gauss;
    T gate_slope;  // zero when the alpha_max clamp is active
};

// Tile-local copy of what the pixel loops read, in depth order. `cut` is
// log(alpha_min / opacity): any power at or below it is under the cutoff.
template <class T>
struct TileSplat {
    T mx, my;
    T c0, c1, c2;
    T opacity;
    T cut;
    T color[3];
};

template <class T>
void gather_tile(const std::vector<ProjectedGaussian<T>>& projected, const std::vector<std::uint32_t>& lists,
                 std::uint32_t begin, std::uint32_t end, T alpha_min, std::vector<TileSplat<T>>& out) {
    out.resize(end - begin);
    for (auto k = begin; k < end; ++k) {
        const auto& g = projected[lists[k]];
        auto& t = out[k - begin];
        t.mx = g.mean[0];
        t.my = g.mean[1];
        t.c0 = g.conic[0];
        t.c1 = g.conic[1];
        t.c2 = g.conic[2];
        t.opacity = g.opacity;
        t.cut = g.opacity > T(0) ? std::log(alpha_min / g.opacity) : std::numeric_limits<T>::infinity();
        for (int ch = 0; ch < 3; ++ch) t.color[ch] = g.color[ch];
    }
}

template <class T>
inline T splat_power(const TileSplat<T>& g, T dx, T dy) {
    return T(-0.5) * (g.c0 * dx * dx + g.c2 * dy * dy) - g.c1 * dx * dy;
}

}  // namespace

template <class T>
std::uint64_t scene_hash(std::span<const T> packed, const Camera& camera) {
    std::uint64_t h = fnv1a(packed.data(), packed.size_bytes(), 1469598103934665603ull);
    h = fnv1a(camera.world_to_camera.data(), sizeof(double) * 16, h);
    const double intr[5] = {camera.fx, camera.fy, camera.cx, camera.cy, camera.near_plane};
    h = fnv1a(intr, sizeof(intr), h);
    const int res[2] = {camera.width, camera.height};
    return fnv1a(res, sizeof(res), h);
}

template <class T>
ProjectedGaussian<T> project(std::span<const T, kPrimitiveFloats> primitive, const Camera& camera,
                             const RasterSettings& settings) {
    const CameraT<T> cam(camera);
    ProjectionTerms<T> pt;
    ProjectedGaussian<T> out;
    if (!project_terms(primitive.data(), cam, settings, pt, out)) {
        throw Error(ErrorCode::Culled, out.depth <= cam.near_plane ? "primitive is behind the near plane"
                                                                   : "primitive footprint is off-image");
    }
    return out;
}

ProjectedGaussian<float> project(const GaussianPrimitive& primitive, const Camera& camera,
                                 const RasterSettings& settings) {
    const auto rec = primitive.pack();
    return project<float>(std::span<const float, kPrimitiveFloats>(rec), camera, settings);
}

template <class T>
RenderOutput<T> render(std::span<const T> packed, const Camera& camera, const RasterSettings& settings) {
    camera.validate();
    if (packed.size() % kPrimitiveFloats != 0) {
        throw Error(ErrorCode::ShapeMismatch, "packed scene is not a whole number of primitives");
    }
    const CameraT<T> cam(camera);
    PreparedScene<T> ps = prepare(packed, cam, settings);

    RenderOutput<T> out;
    out.width = camera.width;
    out.height = camera.height;
    const std::size_t npix = std::size_t(out.width) * out.height;
    out.rgb.assign(npix * 3, T(0));
    out.alpha.assign(npix, T(0));
    out.aux.contributors.assign(npix, 0);

    const int ts = settings.tile_size;
    const T bg[3] = {T(settings.background[0]), T(settings.background[1]), T(settings.background[2])};
    const T alpha_min = T(settings.alpha_min), alpha_max = T(settings.alpha_max);
    const T t_min = T(settings.transmittance_min);

    parallel_for(ps.tiles_x * ps.tiles_y, settings.threads, [&](int tile) {
        const int tx = tile % ps.tiles_x, ty = tile / ps.tiles_x;
        std::vector<TileSplat<T>> splats;
        gather_tile(ps.projected, ps.tile_lists, ps.tile_offsets[tile], ps.tile_offsets[tile + 1], alpha_min,
                    splats);
        for (int v = ty * ts; v < std::min((ty + 1) * ts, out.height); ++v) {
            for (int u = tx * ts; u < std::min((tx + 1) * ts, out.width); ++u) {
                T trans(1);
                T c[3] = {T(0), T(0), T(0)};
                std::uint32_t used = 0;
                for (const auto& g : splats) {
                    const T dx = T(u) - g.mx, dy = T(v) - g.my;
                    const T power = splat_power(g, dx, dy);
                    if (power > T(0) || power <= g.cut) continue;
                    const T raw = std::min(alpha_max, g.opacity * std::exp(power));
                    if (raw <= alpha_min) continue;
                    T slope;
                    const T a = gate_alpha(raw, alpha_min, slope);
                    const T next = trans * (T(1) - a);
                    if (next < t_min) break;
                    for (int ch = 0; ch < 3; ++ch) c[ch] += g.color[ch] * a * trans;
                    trans = next;
                    ++used;
                }
                const std::size_t pix = std::size_t(v) * out.width + u;
                for (int ch = 0; ch < 3; ++ch) out.rgb[pix * 3 + ch] = c[ch] + trans * bg[ch];
                out.alpha[pix] = T(1) - trans;
                out.aux.contributors[pix] = used;
            }
        }
    });

    out.aux.scene_hash = scene_hash(packed, camera);
    out.aux.projected = std::move(ps.projected);
    out.aux.depth_order = std::move(ps.order);
    out.aux.tile_offsets = std::move(ps.tile_offsets);
    out.aux.tile_lists = std::move(ps.tile_lists);
    out.aux.tiles_x = ps.tiles_x;
    out.aux.tiles_y = ps.tiles_y;
    return out;
}

RenderOutput<float> render(const ComposedScene& scene, const Camera& camera, const RasterSettings& settings) {
    const auto packed = scene.packed();
    return render<float>(std::span<const float>(packed), camera, settings);
}

template <class T>
std::vector<T> render_backward(std::span<const T> packed, const Camera& camera, const RenderAux<T>& aux,
                               std::span<const T> grad_rgb, std::span<const T> grad_alpha,
                               const RasterSettings& settings) {
    if (aux.scene_hash != scene_hash(packed, camera)) {
        throw Error(ErrorCode::StaleAux, "render aux does not belong to this scene/camera");
    }
    const int width = camera.width, height = camera.height;
    const std::size_t npix = std::size_t(width) * height;
    if (grad_rgb.size() != npix * 3 || grad_alpha.size() != npix) {
        throw Error(ErrorCode::ShapeMismatch, "output gradient size does not match the image");
    }
    const std::size_t n = packed.size() / kPrimitiveFloats;
    const int ts = settings.tile_size;
    const int ntiles = aux.tiles_x * aux.tiles_y;
    const T bg[3] = {T(settings.background[0]), T(settings.background[1]), T(settings.background[2])};
    const T alpha_min = T(settings.alpha_min), alpha_max = T(settings.alpha_max);
    const T t_min = T(settings.transmittance_min);

    // Per-tile accumulators indexed like tile_lists; reduced in tile order
    // afterwards so the result does not depend on the thread count.
    std::vector<PixelGrad<T>> tile_grads(aux.tile_lists.size());

    parallel_for(ntiles, settings.threads, [&](int tile) {
        const int tx = tile % aux.tiles_x, ty = tile / aux.tiles_x;
        const auto begin = aux.tile_offsets[tile], end = aux.tile_offsets[tile + 1];
        std::vector<ChainEntry<T>> chain;
        std::vector<TileSplat<T>> splats;
        gather_tile(aux.projected, aux.tile_lists, begin, end, alpha_min, splats);
        for (int v = ty * ts; v < std::min((ty + 1) * ts, height); ++v) {
            for (int u = tx * ts; u < std::min((tx + 1) * ts, width); ++u) {
                const std::size_t pix = std::size_t(v) * width + u;
                const T g_rgb[3] = {grad_rgb[pix * 3], grad_rgb[pix * 3 + 1], grad_rgb[pix * 3 + 2]};
                const T g_alpha = grad_alpha[pix];
                if (g_rgb[0] == T(0) && g_rgb[1] == T(0) && g_rgb[2] == T(0) && g_alpha == T(0)) continue;

                chain.clear();
                T trans(1);
                for (auto k = begin; k < end; ++k) {
                    const auto& g = splats[k - begin];
                    const T dx = T(u) - g.mx, dy = T(v) - g.my;
                    const T power = splat_power(g, dx, dy);
                    if (power > T(0) || power <= g.cut) continue;
                    const T gauss = std::exp(power);
                    const T raw = g.opacity * gauss;
                    const T clamped = std::min(alpha_max, raw);
                    if (clamped <= alpha_min) continue;
                    T slope;
                    const T a = gate_alpha(clamped, alpha_min, slope);
                    const T next = trans * (T(1) - a);
                    if (next < t_min) break;
                    chain.push_back({k, a, trans, gauss, raw > alpha_max ? T(0) : slope});
                    trans = next;
                }

                // Composited color and alpha behind the current entry.
                T behind[3] = {bg[0], bg[1], bg[2]};
                T behind_alpha(0);
                for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
                    const auto& g = splats[it->slot - begin];
                    auto& acc = tile_grads[it->slot];
                    const T wgt = it->alpha * it->transmittance;
                    T d_alpha = g_alpha * (T(1) - behind_alpha);
                    for (int ch = 0; ch < 3; ++ch) {
                        acc.color[ch] += g_rgb[ch] * wgt;
                        d_alpha += g_rgb[ch] * (g.color[ch] - behind[ch]);
                    }
                    d_alpha *= it->transmittance;
                    for (int ch = 0; ch < 3; ++ch) {
                        behind[ch] = g.color[ch] * it->alpha + (T(1) - it->alpha) * behind[ch];
                    }
                    behind_alpha = it->alpha + (T(1) - it->alpha) * behind_alpha;
                    d_alpha *= it->gate_slope;
                    if (d_alpha == T(0)) continue;

                    acc.opacity += d_alpha * it->gauss;
                    const T d_power = d_alpha * g.opacity * it->gauss;
                    const T dx = T(u) - g.mx, dy = T(v) - g.my;
                    acc.mean[0] += d_power * (g.c0 * dx + g.c1 * dy);
                    acc.mean[1] += d_power * (g.c1 * dx + g.c2 * dy);
                    acc.conic[0] += d_power * T(-0.5) * dx * dx;
                    acc.conic[1] += d_power * -dx * dy;
                    acc.conic[2] += d_power * T(-0.5) * dy * dy;
                }
            }
        }
    });

    std::vector<PixelGrad<T>> grads2d(n);
    for (std::size_t k = 0; k < aux.tile_lists.size(); ++k) {
        auto& dst = grads2d[aux.tile_lists[k]];
        const auto& src = tile_grads[k];
        for (int i = 0; i < 2; ++i) dst.mean[i] += src.mean[i];
        for (int i = 0; i < 3; ++i) dst.conic[i] += src.conic[i];
        dst.opacity += src.opacity;
        for (int i = 0; i < 3; ++i) dst.color[i] += src.color[i];
    }

    const CameraT<T> cam(camera);
    std::vector<T> grads(packed.size(), T(0));
    for (auto idx : aux.depth_order) {
        const T* rec = packed.data() + std::size_t(idx) * kPrimitiveFloats;
        T* out = grads.data() + std::size_t(idx) * kPrimitiveFloats;
        const auto& g2 = grads2d[idx];
        ProjectionTerms<T> pt;
        ProjectedGaussian<T> proj;
        project_terms(rec, cam, settings, pt, proj);

        for (int ch = 0; ch < 3; ++ch) out[attr::Color + ch] = g2.color[ch];
        out[attr::Opacity] = g2.opacity * proj.opacity * (T(1) - proj.opacity);

        // conic -> 2D covariance: dL/dcov = -K dL/dK K, with the off-diagonal
        // conic parameter shared by both symmetric entries.
        Mat2<T> k;
        k << proj.conic[0], proj.conic[1], proj.conic[1], proj.conic[2];
        Mat2<T> dk;
        dk << g2.conic[0], T(0.5) * g2.conic[1], T(0.5) * g2.conic[1], g2.conic[2];
        const Mat2<T> dcov2 = -k * dk * k;

        const Mat3<T> dcov3 = pt.jw.transpose() * dcov2 * pt.jw;
        const Mat23<T> djw = T(2) * dcov2 * pt.jw * pt.cov3;
        const Mat23<T> dj = djw * cam.rot.transpose();

        const T tx = pt.tc.x(), ty = pt.tc.y(), tz = pt.tc.z();
        const T tz2 = tz * tz, tz3 = tz2 * tz;
        Vec3<T> dtc;
        dtc.x() = g2.mean[0] * cam.fx / tz - dj(0, 2) * cam.fx / tz2;
        dtc.y() = g2.mean[1] * cam.fy / tz - dj(1, 2) * cam.fy / tz2;
        dtc.z() = -g2.mean[0] * cam.fx * tx / tz2 - g2.mean[1] * cam.fy * ty / tz2  //
                  - dj(0, 0) * cam.fx / tz2 + dj(0, 2) * T(2) * cam.fx * tx / tz3   //
                  - dj(1, 1) * cam.fy / tz2 + dj(1, 2) * T(2) * cam.fy * ty / tz3;
        const Vec3<T> dpos = cam.rot.transpose() * dtc;
        for (int i = 0; i < 3; ++i) out[attr::Position + i] = dpos[i];

        const Mat3<T> dm = T(2) * dcov3 * pt.m;
        Mat3<T> drot;
        for (int j = 0; j < 3; ++j) {
            drot.col(j) = dm.col(j) * pt.scale[j];
            out[attr::LogScale + j] = dm.col(j).dot(pt.rot.col(j)) * pt.scale[j];
        }

        const T w = pt.qn[0], x = pt.qn[1], y = pt.qn[2], z = pt.qn[3];
        const auto& G = drot;
        std::array<T, 4> dqn;
        dqn[0] = T(2) * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
        dqn[1] = T(2) * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - T(2) * x * G(1, 1) - w * G(1, 2) +
                         z * G(2, 0) + w * G(2, 1) - T(2) * x * G(2, 2));
        dqn[2] = T(2) * (-T(2) * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) -
                         w * G(2, 0) + z * G(2, 1) - T(2) * y * G(2, 2));
        dqn[3] = T(2) * (-T(2) * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - T(2) * z * G(1, 1) +
                         y * G(1, 2) + x * G(2, 0) + y * G(2, 1));
        if (pt.qnorm > T(0)) {
            T dot(0);
            for (int i = 0; i < 4; ++i) dot += pt.qn[i] * dqn[i];
            for (int i = 0; i < 4; ++i) out[attr::Rotation + i] = (dqn[i] - pt.qn[i] * dot) / pt.qnorm;
        }
    }
    return grads;
}

#define COSY_INSTANTIATE_RASTER(T)                                                                         \
    template std::uint64_t scene_hash<T>(std::span<const T>, const Camera&);                              \
    template ProjectedGaussian<T> project<T>(std::span<const T, kPrimitiveFloats>, const Camera&,          \
                                             const RasterSettings&);                                       \
    template RenderOutput<T> render<T>(std::span<const T>, const Camera&, const RasterSettings&);          \
    template std::vector<T> render_backward<T>(std::span<const T>, const Camera&, const RenderAux<T>&,     \
                                               std::span<const T>, std::span<const T>, const RasterSettings&);

COSY_INSTANTIATE_RASTER(float)
COSY_INSTANTIATE_RASTER(double)

#undef COSY_INSTANTIATE_RASTER

}  // namespace cosy
