#include "cosy/toyset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/Geometry>

#include "cosy/error.hpp"
#include "cosy/splat_io.hpp"

namespace cosy {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Ray {
    Eigen::Vector3d origin;
    Eigen::Vector3d dir;
};

struct Hit {
    double t = kInf;
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    Region region = Region::Background;
};

// Near and far roots of a ray against an axis-aligned ellipsoid.
bool ellipsoid_roots(const Ray& ray, const Eigen::Vector3d& center, const Eigen::Vector3d& radii, double& t0,
                     double& t1) {
    const Eigen::Vector3d o = (ray.origin - center).cwiseQuotient(radii);
    const Eigen::Vector3d d = ray.dir.cwiseQuotient(radii);
    const double a = d.squaredNorm();
    const double b = o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    const double disc = b * b - a * c;
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    t0 = (-b - sq) / a;
    t1 = (-b + sq) / a;
    return true;
}

Eigen::Vector3d ellipsoid_normal(const Eigen::Vector3d& p, const Eigen::Vector3d& center,
                                 const Eigen::Vector3d& radii) {
    return (p - center).cwiseQuotient(radii.cwiseProduct(radii)).normalized();
}

bool box_hit(const Ray& ray, const Eigen::Vector3d& center, const Eigen::Vector3d& half, double& t,
             Eigen::Vector3d& normal) {
    double tmin = -kInf, tmax = kInf;
    int axis = -1;
    double sign = 1.0;
    for (int i = 0; i < 3; ++i) {
        const double lo = center[i] - half[i], hi = center[i] + half[i];
        if (std::abs(ray.dir[i]) < 1e-12) {
            if (ray.origin[i] < lo || ray.origin[i] > hi) return false;
            continue;
        }
        double ta = (lo - ray.origin[i]) / ray.dir[i];
        double tb = (hi - ray.origin[i]) / ray.dir[i];
        double s = -1.0;
        if (ta > tb) {
            std::swap(ta, tb);
            s = 1.0;
        }
        if (ta > tmin) {
            tmin = ta;
            axis = i;
            sign = s;
        }
        tmax = std::min(tmax, tb);
    }
    if (axis < 0 || tmin > tmax || tmin <= 0.0) return false;
    t = tmin;
    normal = Eigen::Vector3d::Zero();
    normal[axis] = sign;
    return true;
}

bool in_hair_region(const ToyScene& s, const Eigen::Vector3d& p) {
    return p.y() > s.fringe_height || (p.z() < -0.05 && p.y() > -s.hair_length);
}

double glasses_plane_z(const ToyScene& s) { return s.head_radii.z() * 0.97 + 0.04; }

bool on_frame(const ToyScene& s, double x, double y) {
    for (double sx : {-1.0, 1.0}) {
        const double r = std::hypot(x - sx * s.lens_spacing, y - s.eye_height);
        if (r >= s.lens_radius && r <= s.lens_radius + s.frame_width) return true;
    }
    const double bridge = s.lens_spacing - s.lens_radius;
    return std::abs(x) < bridge && std::abs(y - s.eye_height - 0.02) < 0.012;
}

Hit trace(const ToyScene& s, const Ray& ray) {
    Hit best;
    auto consider = [&](double t, const Eigen::Vector3d& n, Region r) {
        if (t > 1e-9 && t < best.t) {
            best.t = t;
            best.normal = n;
            best.region = r;
        }
    };
    const Eigen::Vector3d zero = Eigen::Vector3d::Zero();
    double t0, t1;
    if (ellipsoid_roots(ray, zero, s.head_radii, t0, t1)) {
        const Eigen::Vector3d p = ray.origin + t0 * ray.dir;
        consider(t0, ellipsoid_normal(p, zero, s.head_radii), Region::Skin);
    }
    if (ellipsoid_roots(ray, s.neck_center, s.neck_radii, t0, t1)) {
        const Eigen::Vector3d p = ray.origin + t0 * ray.dir;
        consider(t0, ellipsoid_normal(p, s.neck_center, s.neck_radii), Region::Skin);
    }
    if (ellipsoid_roots(ray, zero, s.hair_radii, t0, t1)) {
        const Eigen::Vector3d p0 = ray.origin + t0 * ray.dir;
        if (in_hair_region(s, p0)) consider(t0, ellipsoid_normal(p0, zero, s.hair_radii), Region::Hair);
        const Eigen::Vector3d p1 = ray.origin + t1 * ray.dir;
        if (in_hair_region(s, p1)) consider(t1, -ellipsoid_normal(p1, zero, s.hair_radii), Region::Hair);
    }
    double tb;
    Eigen::Vector3d nb;
    if (box_hit(ray, s.torso_center, s.torso_half, tb, nb)) consider(tb, nb, Region::Torso);
    if (s.glasses && std::abs(ray.dir.z()) > 1e-9) {
        const double zg = glasses_plane_z(s);
        const double t = (zg - ray.origin.z()) / ray.dir.z();
        const Eigen::Vector3d p = ray.origin + t * ray.dir;
        if (t > 0.0 && on_frame(s, p.x(), p.y())) {
            // Two-sided thin frame: shade the side facing the viewer.
            const Eigen::Vector3d n(0.0, 0.0, ray.dir.z() < 0.0 ? 1.0 : -1.0);
            consider(t, n, Region::Glasses);
        }
    }
    return best;
}

float quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(hh);
    const double f = hh - i;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

Eigen::Vector3d clamp01(const Eigen::Vector3d& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

const std::array<Eigen::Vector3d, 6>& hair_palette() {
    static const std::array<Eigen::Vector3d, 6> p = {
        Eigen::Vector3d{0.08, 0.07, 0.06},  // black
        Eigen::Vector3d{0.25, 0.15, 0.08},  // dark brown
        Eigen::Vector3d{0.45, 0.30, 0.15},  // brown
        Eigen::Vector3d{0.85, 0.72, 0.45},  // blond
        Eigen::Vector3d{0.60, 0.22, 0.10},  // red
        Eigen::Vector3d{0.65, 0.65, 0.65},  // gray
    };
    return p;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

std::array<float, kLabelDim> ColorConditioning::flatten() const {
    std::array<float, kLabelDim> out{};
    std::copy(hair.begin(), hair.end(), out.begin());
    std::copy(skin.begin(), skin.end(), out.begin() + kHistDim);
    std::copy(torso.begin(), torso.end(), out.begin() + 2 * kHistDim);
    out[3 * kHistDim] = glasses_flag;
    return out;
}

ColorConditioning ColorConditioning::unflatten(std::span<const float> labels) {
    if (labels.size() != kLabelDim) throw Error(ErrorCode::ShapeMismatch, "labels must have 91 values");
    ColorConditioning c;
    std::copy_n(labels.begin(), kHistDim, c.hair.begin());
    std::copy_n(labels.begin() + kHistDim, kHistDim, c.skin.begin());
    std::copy_n(labels.begin() + 2 * kHistDim, kHistDim, c.torso.begin());
    c.glasses_flag = labels[3 * kHistDim];
    return c;
}

bool histogram_is_simplex(std::span<const float> h, float tol) {
    if (h.size() != kHistDim) return false;
    for (int ch = 0; ch < 3; ++ch) {
        double sum = 0.0;
        for (int b = 0; b < kHistBins; ++b) {
            const float v = h[ch * kHistBins + b];
            if (!(v >= 0.0f)) return false;
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
}

std::array<float, kConditioningDim> conditioning_vector(const Camera& camera, const ColorConditioning& labels) {
    std::array<float, kConditioningDim> out{};
    const auto cam = camera.flatten();
    const auto lab = labels.flatten();
    std::copy(cam.begin(), cam.end(), out.begin());
    std::copy(lab.begin(), lab.end(), out.begin() + kCameraDim);
    return out;
}

Camera camera_from_flat(std::span<const float> flat, int width, int height) {
    if (flat.size() != kCameraDim) throw Error(ErrorCode::ShapeMismatch, "camera must have 25 values");
    Eigen::Matrix4d c2w;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) c2w(r, c) = flat[r * 4 + c];
    // Re-orthonormalize the rotation lost to f32 storage.
    Eigen::Matrix3d rot = c2w.topLeftCorner<3, 3>();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
    rot = svd.matrixU() * svd.matrixV().transpose();
    Camera cam;
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = rot.transpose();
    cam.world_to_camera.topRightCorner<3, 1>() = -rot.transpose() * c2w.topRightCorner<3, 1>();
    cam.fx = flat[16] * width;
    cam.cx = flat[18] * width;
    cam.fy = flat[20] * height;
    cam.cy = flat[21] * height;
    cam.width = width;
    cam.height = height;
    return cam;
}

double lambert(const ToyScene& scene, const Eigen::Vector3d& normal) {
    return scene.ambient + (1.0 - scene.ambient) * std::max(0.0, normal.dot(scene.light_dir));
}

std::vector<bool> ToySample::mask(Region r) const {
    std::vector<bool> m(regions.size());
    for (std::size_t i = 0; i < regions.size(); ++i) m[i] = regions[i] == static_cast<std::uint8_t>(r);
    return m;
}

Camera toy_camera(double yaw_deg, double pitch_deg, int resolution) {
    return Camera::orbit(yaw_deg, pitch_deg, OrbitDefaults::kRadius, OrbitDefaults::kTarget, OrbitDefaults::kFocal,
                         resolution, resolution);
}

ToyScene sample_toy_scene(std::mt19937_64& rng, const PaletteConfig& palette) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    ToyScene s;
    s.head_radii = {uni(0.36, 0.44), uni(0.48, 0.56), uni(0.40, 0.46)};
    s.neck_center = {0.0, -0.85 * s.head_radii.y(), -0.03};
    s.neck_radii = {0.15, 0.30, 0.15};
    const double volume = uni(0.5, 1.5);
    s.hair_radii = s.head_radii * 1.07 + Eigen::Vector3d(0.02, 0.03, 0.02) * volume;
    s.fringe_height = uni(0.05, 0.35) * s.head_radii.y();
    s.hair_length = uni(-0.2, 0.5);
    s.torso_center = {0.0, -s.head_radii.y() - 0.45, -0.05};
    s.torso_half = {uni(0.50, 0.65), 0.30, uni(0.22, 0.28)};

    s.glasses = u(rng) < palette.glasses_rate;
    s.lens_radius = uni(0.07, 0.12);
    s.lens_spacing = uni(0.15, 0.18);
    s.eye_height = uni(0.02, 0.08);

    const double tone = u(rng);
    const Eigen::Vector3d light_skin(0.95, 0.78, 0.66), dark_skin(0.42, 0.27, 0.18);
    s.skin_albedo = clamp01(light_skin + tone * (dark_skin - light_skin) +
                            0.02 * Eigen::Vector3d(n(rng), n(rng), n(rng)));
    const auto& hp = hair_palette();
    int hair_idx;
    if (u(rng) < palette.hair_skin_correlation && tone > 0.5) {
        hair_idx = u(rng) < 0.6 ? 0 : 1;
    } else {
        hair_idx = std::min(5, static_cast<int>(u(rng) * 6.0));
    }
    s.hair_albedo = clamp01(hp[hair_idx] + 0.03 * Eigen::Vector3d(n(rng), n(rng), n(rng)));
    s.torso_albedo = hsv_to_rgb(u(rng), uni(0.2, 0.8), uni(0.25, 0.9));

    s.light_dir = Eigen::Vector3d(uni(-1.0, 1.0), uni(-0.2, 1.0), uni(0.3, 1.2)).normalized();
    s.ambient = palette.ambient;
    s.yaw_deg = uni(-palette.yaw_range_deg, palette.yaw_range_deg);
    s.pitch_deg = uni(-palette.pitch_range_deg, palette.pitch_range_deg);
    return s;
}

ToySample render_toy(const ToyScene& scene, const Camera& camera) {
    ToySample out;
    out.width = camera.width;
    out.height = camera.height;
    out.camera = camera;
    out.scene = scene;
    const std::size_t npix = std::size_t(out.width) * out.height;
    out.image.assign(npix * 3, 1.0f);
    out.regions.assign(npix, static_cast<std::uint8_t>(Region::Background));
    const Eigen::Matrix3d rt = camera.rotation().transpose();
    const Eigen::Vector3d origin = camera.center();
    for (int v = 0; v < out.height; ++v) {
        for (int u = 0; u < out.width; ++u) {
            const Eigen::Vector3d dc((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
            const Ray ray{origin, (rt * dc).normalized()};
            const Hit hit = trace(scene, ray);
            if (hit.region == Region::Background) continue;
            const Eigen::Vector3d* albedo = nullptr;
            switch (hit.region) {
                case Region::Skin: albedo = &scene.skin_albedo; break;
                case Region::Hair: albedo = &scene.hair_albedo; break;
                case Region::Torso: albedo = &scene.torso_albedo; break;
                case Region::Glasses: albedo = &kFrameAlbedo; break;
                default: break;
            }
            const double shade = lambert(scene, hit.normal);
            const std::size_t pix = std::size_t(v) * out.width + u;
            for (int ch = 0; ch < 3; ++ch) out.image[pix * 3 + ch] = quantize((*albedo)[ch] * shade);
            out.regions[pix] = static_cast<std::uint8_t>(hit.region);
        }
    }
    return out;
}

std::vector<bool> erode(const std::vector<bool>& mask, int width, int height, int radius) {
    if (radius <= 0) return mask;
    std::vector<bool> out(mask.size(), false);
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            bool keep = true;
            for (int dv = -radius; dv <= radius && keep; ++dv) {
                for (int du = -radius; du <= radius; ++du) {
                    const int x = u + du, y = v + dv;
                    if (x < 0 || y < 0 || x >= width || y >= height || !mask[std::size_t(y) * width + x]) {
                        keep = false;
                        break;
                    }
                }
            }
            out[std::size_t(v) * width + u] = keep;
        }
    }
    return out;
}

Histogram color_histogram(std::span<const float> image, const std::vector<bool>& mask, int width, int height,
                          int shrink_radius) {
    if (image.size() != std::size_t(width) * height * 3 || mask.size() != std::size_t(width) * height) {
        throw Error(ErrorCode::ShapeMismatch, "image/mask size mismatch");
    }
    const auto eroded = erode(mask, width, height, shrink_radius);
    std::array<std::int64_t, kHistDim> counts{};
    std::int64_t n = 0;
    for (std::size_t pix = 0; pix < eroded.size(); ++pix) {
        if (!eroded[pix]) continue;
        ++n;
        for (int ch = 0; ch < 3; ++ch) {
            const float v = std::clamp(image[pix * 3 + ch], 0.0f, 1.0f);
            const int bin = std::min(kHistBins - 1, static_cast<int>(v * kHistBins));
            ++counts[ch * kHistBins + bin];
        }
    }
    if (n == 0) throw Error(ErrorCode::EmptyRegion, "region is empty after shrinking");
    Histogram h{};
    for (int i = 0; i < kHistDim; ++i) h[i] = static_cast<float>(double(counts[i]) / double(n));
    return h;
}

ColorConditioning extract_labels(const ToySample& sample, int shrink_radius) {
    ColorConditioning c;
    c.hair = color_histogram(sample.image, sample.mask(Region::Hair), sample.width, sample.height, shrink_radius);
    c.skin = color_histogram(sample.image, sample.mask(Region::Skin), sample.width, sample.height, shrink_radius);
    c.torso = color_histogram(sample.image, sample.mask(Region::Torso), sample.width, sample.height, shrink_radius);
    c.glasses_flag = sample.scene.glasses ? 1.0f : 0.0f;
    return c;
}

ToySample generate_sample(std::mt19937_64& rng, const PaletteConfig& palette, int resolution, int shrink_radius) {
    for (;;) {
        const ToyScene scene = sample_toy_scene(rng, palette);
        ToySample sample = render_toy(scene, toy_camera(scene.yaw_deg, scene.pitch_deg, resolution));
        try {
            sample.labels = extract_labels(sample, shrink_radius);
            return sample;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyRegion) throw;
        }
    }
}

std::array<float, kConditioningDim> DatasetItem::conditioning() const {
    std::array<float, kConditioningDim> out{};
    const auto lab = labels.flatten();
    std::copy(camera_flat.begin(), camera_flat.end(), out.begin());
    std::copy(lab.begin(), lab.end(), out.begin() + kCameraDim);
    return out;
}

namespace {

constexpr char kCorpusMagic[4] = {'C', 'S', 'Y', 'D'};
constexpr std::uint32_t kCorpusVersion = 1;
constexpr int kMetaFloats = kCameraDim + kLabelDim;

template <class V>
void put(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(const std::string& buf, std::size_t& off) {
    if (off + sizeof(V) > buf.size()) throw Error(ErrorCode::DataError, "truncated corpus meta");
    V v;
    std::memcpy(&v, buf.data() + off, sizeof(V));
    off += sizeof(V);
    return v;
}

}  // namespace

void ToyCorpus::write(const std::filesystem::path& dir, std::uint64_t seed, int count, const DatasetConfig& cfg,
                      const std::function<void(int)>& progress) {
    std::filesystem::create_directories(dir);
    std::ofstream meta(dir / "meta", std::ios::binary);
    std::ofstream images(dir / "images.bin", std::ios::binary);
    std::ofstream masks(dir / "masks.bin", std::ios::binary);
    if (!meta || !images || !masks) throw Error(ErrorCode::DataError, "cannot create corpus in " + dir.string());
    meta.write(kCorpusMagic, 4);
    put(meta, kCorpusVersion);
    put(meta, static_cast<std::uint32_t>(count));
    put(meta, static_cast<std::uint32_t>(cfg.resolution));
    put(meta, static_cast<std::uint32_t>(cfg.resolution));
    put(meta, static_cast<std::uint32_t>(cfg.shrink_radius));
    std::uint64_t image_off = 0, mask_off = 0;
    std::vector<std::uint8_t> pixels;
    for (int i = 0; i < count; ++i) {
        auto rng = sample_rng(seed, static_cast<std::uint64_t>(i));
        const ToySample s = generate_sample(rng, cfg.palette, cfg.resolution, cfg.shrink_radius);
        for (float v : s.camera.flatten()) put(meta, v);
        for (float v : s.labels.flatten()) put(meta, v);
        put(meta, image_off);
        put(meta, mask_off);
        pixels.resize(s.image.size());
        for (std::size_t k = 0; k < s.image.size(); ++k)
            pixels[k] = static_cast<std::uint8_t>(std::lround(s.image[k] * 255.0f));
        images.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        masks.write(reinterpret_cast<const char*>(s.regions.data()), static_cast<std::streamsize>(s.regions.size()));
        image_off += pixels.size();
        mask_off += s.regions.size();
        if (progress) progress(i + 1);
    }
    if (!meta || !images || !masks) throw Error(ErrorCode::DataError, "failed writing corpus");
}

ToyCorpus ToyCorpus::load(const std::filesystem::path& dir) {
    const std::string meta = read_file(dir / "meta");
    std::size_t off = 0;
    if (meta.size() < 24 || std::memcmp(meta.data(), kCorpusMagic, 4) != 0) {
        throw Error(ErrorCode::DataError, "bad corpus meta in " + dir.string());
    }
    off = 4;
    if (get<std::uint32_t>(meta, off) != kCorpusVersion) throw Error(ErrorCode::DataError, "unsupported corpus");
    ToyCorpus c;
    c.count_ = static_cast<int>(get<std::uint32_t>(meta, off));
    c.width_ = static_cast<int>(get<std::uint32_t>(meta, off));
    c.height_ = static_cast<int>(get<std::uint32_t>(meta, off));
    get<std::uint32_t>(meta, off);  // shrink radius, informational
    c.meta_.resize(std::size_t(c.count_) * kMetaFloats);
    const std::size_t npix = std::size_t(c.width_) * c.height_;
    for (int i = 0; i < c.count_; ++i) {
        for (int k = 0; k < kMetaFloats; ++k) c.meta_[std::size_t(i) * kMetaFloats + k] = get<float>(meta, off);
        const auto io = get<std::uint64_t>(meta, off);
        const auto mo = get<std::uint64_t>(meta, off);
        if (io != std::uint64_t(i) * npix * 3 || mo != std::uint64_t(i) * npix) {
            throw Error(ErrorCode::DataError, "corpus blobs are not densely packed");
        }
    }
    const std::string images = read_file(dir / "images.bin");
    const std::string masks = read_file(dir / "masks.bin");
    if (images.size() != std::size_t(c.count_) * npix * 3 || masks.size() != std::size_t(c.count_) * npix) {
        throw Error(ErrorCode::DataError, "corpus blob size mismatch");
    }
    c.images_.assign(images.begin(), images.end());
    c.masks_.assign(masks.begin(), masks.end());
    return c;
}

DatasetItem ToyCorpus::item(int index) const {
    if (index < 0 || index >= count_) throw Error(ErrorCode::DataError, "corpus index out of range");
    DatasetItem it;
    const std::size_t npix = std::size_t(width_) * height_;
    it.image.resize(npix * 3);
    const std::uint8_t* px = images_.data() + std::size_t(index) * npix * 3;
    for (std::size_t k = 0; k < npix * 3; ++k) it.image[k] = static_cast<float>(px[k]) / 255.0f;
    const float* m = meta_.data() + std::size_t(index) * kMetaFloats;
    std::copy_n(m, kCameraDim, it.camera_flat.begin());
    it.labels = ColorConditioning::unflatten(std::span<const float>(m + kCameraDim, kLabelDim));
    return it;
}

std::vector<std::uint8_t> ToyCorpus::regions(int index) const {
    const std::size_t npix = std::size_t(width_) * height_;
    const auto* p = masks_.data() + std::size_t(index) * npix;
    return {p, p + npix};
}

DatasetIterator::DatasetIterator(DatasetConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.corpus_dir.empty()) {
        corpus_ = std::make_shared<const ToyCorpus>(ToyCorpus::load(cfg_.corpus_dir));
        cfg_.resolution = corpus_->width();
    }
}

DatasetItem DatasetIterator::procedural(std::uint64_t index) const {
    auto rng = sample_rng(cfg_.seed, index);
    const ToySample s = generate_sample(rng, cfg_.palette, cfg_.resolution, cfg_.shrink_radius);
    DatasetItem it;
    it.image = s.image;
    it.camera_flat = s.camera.flatten();
    it.labels = s.labels;
    return it;
}

DatasetItem DatasetIterator::next() {
    const std::uint64_t i = position_++;
    if (!corpus_) return procedural(i);
    const auto n = static_cast<std::uint64_t>(corpus_->size());
    const std::uint64_t epoch = i / n;
    if (order_.empty() || i % n == 0) {
        order_.resize(n);
        for (std::uint64_t k = 0; k < n; ++k) order_[k] = static_cast<int>(k);
        auto rng = sample_rng(cfg_.seed ^ 0x5eed5eedull, epoch);
        std::shuffle(order_.begin(), order_.end(), rng);
    }
    return corpus_->item(order_[i % n]);
}

ColorConditioning DatasetIterator::sample_labels(std::mt19937_64& rng) {
    if (corpus_) {
        std::uniform_int_distribution<int> pick(0, corpus_->size() - 1);
        return corpus_->item(pick(rng)).labels;
    }
    if (label_pool_.empty()) {
        // Labels of a fixed block of samples disjoint from the training stream.
        for (std::uint64_t k = 0; k < 512; ++k) label_pool_.push_back(procedural((1ull << 62) + k).labels);
    }
    std::uniform_int_distribution<std::size_t> pick(0, label_pool_.size() - 1);
    return label_pool_[pick(rng)];
}

Histogram DatasetIterator::sample_region_label(Region region, std::mt19937_64& rng) {
    const ColorConditioning labels = sample_labels(rng);
    switch (region) {
        case Region::Hair: return labels.hair;
        case Region::Skin: return labels.skin;
        case Region::Torso: return labels.torso;
        default: throw Error(ErrorCode::DataError, "region has no color label");
    }
}

Camera DatasetIterator::sample_camera(std::mt19937_64& rng) {
    if (corpus_) {
        std::uniform_int_distribution<int> pick(0, corpus_->size() - 1);
        const auto it = corpus_->item(pick(rng));
        return camera_from_flat(it.camera_flat, corpus_->width(), corpus_->height());
    }
    std::uniform_real_distribution<double> yaw(-cfg_.palette.yaw_range_deg, cfg_.palette.yaw_range_deg);
    std::uniform_real_distribution<double> pitch(-cfg_.palette.pitch_range_deg, cfg_.palette.pitch_range_deg);
    const double y = yaw(rng);
    return toy_camera(y, pitch(rng), cfg_.resolution);
}

bool GlassesDetector::operator()(std::span<const float> image, int width, int height) const {
    // Eye band of the canonical frontal view: rows spanning lens heights,
    // columns spanning both lenses, projected at the glasses plane.
    const Camera cam = toy_camera(0.0, 0.0, width);
    auto project = [&](double x, double y) {
        const Eigen::Vector3d p = cam.rotation() * Eigen::Vector3d(x, y, 0.46) + cam.translation();
        return Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    };
    const Eigen::Vector2d lo = project(-0.34, 0.23);
    const Eigen::Vector2d hi = project(0.34, -0.09);
    const int u0 = std::max(0, static_cast<int>(std::floor(std::min(lo.x(), hi.x()))));
    const int u1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(lo.x(), hi.x()))));
    const int v0 = std::max(0, static_cast<int>(std::floor(std::min(lo.y(), hi.y()))));
    const int v1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(lo.y(), hi.y()))));
    int total = 0, hits = 0;
    for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
            const std::size_t pix = std::size_t(v) * width + u;
            const double r = image[pix * 3], g = image[pix * 3 + 1], b = image[pix * 3 + 2];
            ++total;
            if (b - std::max(r, g) >= min_blue_excess && b <= max_blue) ++hits;
        }
    }
    return total > 0 && hits >= min_fraction * total;
}

}  // namespace cosy
