#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "adpsplit/error_partition.hpp"
#include "adpsplit/scene_model.hpp"

namespace adpsplit {

struct ChildProposal {
    Vec3 mu = Vec3::Zero();
    Mat3 rot = Mat3::Identity();  // columns: u_hat1, u_hat2, camera forward
    Vec3 scale = Vec3::Ones();    // (s1, s2, s2)
    double opacity = 0.5;
    Vec3 rgb = Vec3::Zero();
    int parent = -1;
    int view = -1;
    int region_area = 0;
    /// Number of the four in-plane components whose clip was active.
    int clamped_components = 0;

    Mat3 covariance() const { return rot * scale.cwiseAbs2().asDiagonal() * rot.transpose(); }
};

struct PixelRay {
    Vec3 origin;
    Vec3 dir;             // unit, world space
    double dir_cam_norm;  // |((x-px)/fx, (y-py)/fy, 1)|
};

inline PixelRay pixel_ray(const Camera& cam, double x, double y) {
    const Vec3 d_cam((x - cam.px) / cam.fx, (y - cam.py) / cam.fy, 1.0);
    const Vec3 d_world = cam.r_c2w * d_cam;
    return {cam.center, d_world.normalized(), d_cam.norm()};
}

struct RayDepth {
    double t;
    /// false when t <= 0: the proposal carries no usable depth and is dropped.
    bool positive;
};

/// Closed-form minimizer of (o + t d - mu)^T cov^-1 (o + t d - mu) over t,
/// with eps added to the denominator.
inline RayDepth optimal_t(const Vec3& mu_p, const Mat3& cov_p, const Vec3& origin, const Vec3& dir, double eps) {
    const Eigen::LDLT<Mat3> ldlt(cov_p);
    const Vec3 a_dir = ldlt.solve(dir);
    const double denom = dir.dot(a_dir);
    if (!(denom >= 1e-18)) throw DegenerateRay("optimal_t: ray direction has vanishing Mahalanobis norm");
    const double t = (mu_p - origin).dot(a_dir) / (denom + eps);
    return {t, t > 0.0};
}

struct UnprojectedAxes {
    Vec3 a1;
    Vec3 a2;
    int clamped_components;
};

namespace child_detail {
inline double clip(double x, double limit, int& fired) {
    if (std::abs(x) > limit) {
        ++fired;
        return std::copysign(limit, x);
    }
    return x;
}
} // namespace child_detail

/// World-space in-plane axes of a region at depth t_star along its ray. Each
/// image-axis component is scaled by depth/focal and clipped to
/// s_max_parent * |component|.
inline UnprojectedAxes unproject_axes(const ErrorRegion& region, const Camera& cam, double t_star,
                                      double dir_cam_norm, double s_max_parent) {
    using child_detail::clip;
    const double tz = t_star / dir_cam_norm;
    int fired = 0;
    const double w1x = clip(region.e1.x() * region.sigma1 * tz / cam.fx, s_max_parent * std::abs(region.e1.x()), fired);
    const double w1y = clip(region.e1.y() * region.sigma1 * tz / cam.fy, s_max_parent * std::abs(region.e1.y()), fired);
    const double w2x = clip(region.e2.x() * region.sigma2 * tz / cam.fx, s_max_parent * std::abs(region.e2.x()), fired);
    const double w2y = clip(region.e2.y() * region.sigma2 * tz / cam.fy, s_max_parent * std::abs(region.e2.y()), fired);
    return {w1x * cam.right() + w1y * cam.down(), w2x * cam.right() + w2y * cam.down(), fired};
}

/// Gram-Schmidt on two vectors. Throws DegenerateAxes when a2 is (nearly)
/// parallel to a1.
inline std::pair<Vec3, Vec3> orthonormalize(const Vec3& a1, const Vec3& a2) {
    const double n1 = a1.norm();
    if (!(n1 > 0.0)) throw DegenerateAxes("orthonormalize: first axis is zero");
    const Vec3 u1 = a1 / n1;
    const Vec3 rej = a2 - a2.dot(u1) * u1;
    const double n2 = rej.norm();
    if (!(n2 >= 1e-12)) throw DegenerateAxes("orthonormalize: axes are parallel");
    return {u1, rej / n2};
}

/// One child from one completed error region, or nullopt when the Mahalanobis
/// depth along the centroid ray is not positive.
inline std::optional<ChildProposal> init_child(const Gaussian3D& parent, const ErrorRegion& region,
                                               const Camera& cam, const AdpSplitConfig& cfg, int parent_index = -1,
                                               int view_index = -1) {
    const PixelRay ray = pixel_ray(cam, region.centroid.x(), region.centroid.y());
    const RayDepth depth = optimal_t(parent.mu, covariance(parent), ray.origin, ray.dir, cfg.eps);
    if (!depth.positive) return std::nullopt;

    const UnprojectedAxes axes =
        unproject_axes(region, cam, depth.t, ray.dir_cam_norm, parent.scale.maxCoeff());
    const Vec3 forward = cam.forward();
    Vec3 u1, u2;
    try {
        std::tie(u1, u2) = orthonormalize(axes.a1, axes.a2);
    } catch (const DegenerateAxes&) {
        u1 = axes.a1.normalized();
        u2 = forward.cross(u1).normalized();
    }
    Mat3 rot;
    rot.col(0) = u1;
    rot.col(1) = u2;
    rot.col(2) = forward;
    if (rot.determinant() < 0.0) rot.col(1) = -u2;

    ChildProposal child;
    child.mu = ray.origin + depth.t * ray.dir;
    child.rot = rot;
    child.scale = Vec3(axes.a1.norm(), axes.a2.norm(), axes.a2.norm());
    child.opacity = parent.opacity;
    child.rgb = region.gt_rgb;
    child.parent = parent_index;
    child.view = view_index;
    child.region_area = region.area;
    child.clamped_components = axes.clamped_components;
    if (!child.mu.allFinite() || !(child.scale.minCoeff() > 0.0) || !child.scale.allFinite()) return std::nullopt;
    return child;
}

} // namespace adpsplit
