#pragma once

#include <array>

#include <Eigen/Core>

namespace cosy {

/// Pinhole camera, OpenCV axes (x right, y down, z forward).
/// Pixel (u, v) samples image coordinates (u, v).
struct Camera {
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    double near_plane = 0.05;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

    /// Throws Error(ShapeMismatch) unless the rotation block is orthonormal to
    /// 1e-5, focal lengths are positive and the resolution is non-empty.
    void validate() const;

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, double focal_px, int width, int height);

    /// Orbit around `target` at the given yaw/pitch (degrees) and radius.
    /// yaw = pitch = 0 looks at the target along world -z; positive yaw moves
    /// the eye toward +x, positive pitch moves it up.
    static Camera orbit(double yaw_deg, double pitch_deg, double radius, const Eigen::Vector3d& target,
                        double focal_normalized, int width, int height);

    /// 25-d EG3D layout: camera-to-world 4x4 row-major, then the 3x3
    /// intrinsics normalized by the image size.
    std::array<float, 25> flatten() const;

    /// World offset applied to the camera (translation-equivariance helper).
    Camera translated(const Eigen::Vector3d& offset) const;
};

/// Orbit parameters the toy data and the editor share.
struct OrbitDefaults {
    static constexpr double kRadius = 3.0;
    static constexpr double kFocal = 1.6;  // focal length / image width
    static inline const Eigen::Vector3d kTarget{0.0, -0.1, 0.0};
};

}  // namespace cosy
