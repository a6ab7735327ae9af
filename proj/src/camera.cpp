#include "cosy/camera.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "cosy/error.hpp"

namespace cosy {

void Camera::validate() const {
    const Eigen::Matrix3d r = rotation();
    if (!(((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-5)) {
        throw Error(ErrorCode::ShapeMismatch, "camera rotation block is not orthonormal");
    }
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::ShapeMismatch, "focal length must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorCode::ShapeMismatch, "empty camera resolution");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double focal_px, int width, int height) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();

    Camera cam;
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    cam.fx = cam.fy = focal_px;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    return cam;
}

Camera Camera::orbit(double yaw_deg, double pitch_deg, double radius, const Eigen::Vector3d& target,
                     double focal_normalized, int width, int height) {
    const double yaw = yaw_deg * std::numbers::pi / 180.0;
    const double pitch = pitch_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d dir(std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch));
    return look_at(target + radius * dir, target, Eigen::Vector3d::UnitY(), focal_normalized * width, width,
                   height);
}

std::array<float, 25> Camera::flatten() const {
    std::array<float, 25> out{};
    const Eigen::Matrix4d c2w = world_to_camera.inverse();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) out[r * 4 + c] = static_cast<float>(c2w(r, c));
    const double w = width;
    const double h = height;
    const double k[9] = {fx / w, 0.0, cx / w, 0.0, fy / h, cy / h, 0.0, 0.0, 1.0};
    for (int i = 0; i < 9; ++i) out[16 + i] = static_cast<float>(k[i]);
    return out;
}

Camera Camera::translated(const Eigen::Vector3d& offset) const {
    Camera cam = *this;
    cam.world_to_camera.topRightCorner<3, 1>() = translation() - rotation() * offset;
    return cam;
}

}  // namespace cosy
