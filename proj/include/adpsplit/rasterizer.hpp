#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "adpsplit/grid.hpp"
#include "adpsplit/scene_model.hpp"

namespace adpsplit {

constexpr double kAlphaCap = 0.99;
constexpr double kAlphaMin = 1.0 / 255.0;
/// Added to both diagonal entries of every projected footprint (pixels^2).
constexpr double kCov2dFloor = 0.3;
/// Camera-space depth below which a Gaussian counts as behind the camera.
constexpr double kNearDepth = 0.01;
constexpr std::int32_t kNoGaussian = -1;
/// psnr() of identical images.
constexpr double kPsnrCap = 100.0;

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    std::size_t source_index = 0;
};

struct RenderOutput {
    Image image;
    Grid<std::int32_t> dominant_map;
    Vec3 background = Vec3::Zero();
    /// visible[i] != 0 iff Gaussian i can reach at least one pixel of the view.
    std::vector<char> visible;
};

struct GradOutput {
    std::vector<Vec3> mu;
    std::vector<Vec3> scale;
    std::vector<Eigen::Vector4d> rot;  // (w, x, y, z)
    std::vector<double> opacity;
    std::vector<Vec3> sh_dc;
    std::vector<std::vector<Vec3>> sh_rest;
    /// dL / d(projected mean), pixels^-1.
    std::vector<Vec2> viewspace_grad;
    std::vector<char> visible;

    explicit GradOutput(const Scene& scene = {}) { resize(scene); }

    void resize(const Scene& scene) {
        const std::size_t n = scene.size();
        mu.assign(n, Vec3::Zero());
        scale.assign(n, Vec3::Zero());
        rot.assign(n, Eigen::Vector4d::Zero());
        opacity.assign(n, 0.0);
        sh_dc.assign(n, Vec3::Zero());
        sh_rest.resize(n);
        for (std::size_t i = 0; i < n; ++i) sh_rest[i].assign(scene.gaussians[i].sh_rest.size(), Vec3::Zero());
        viewspace_grad.assign(n, Vec2::Zero());
        visible.assign(n, 0);
    }
};

// ---------------------------------------------------------------------------
// Projection

template <class T>
struct ProjectionT {
    Eigen::Matrix<T, 2, 1> mean;
    Eigen::Matrix<T, 2, 2> cov;  // regularized
    T depth;
};

/// Perspective projection with the local affine (EWA) Jacobian. No depth check.
template <class T>
ProjectionT<T> project_generic(const Eigen::Matrix<T, 3, 1>& mu, const Eigen::Matrix<T, 3, 1>& scale,
                               const Eigen::Matrix<T, 4, 1>& quat, const Camera& cam) {
    using M3 = Eigen::Matrix<T, 3, 3>;
    using V3 = Eigen::Matrix<T, 3, 1>;
    const M3 w2c = cam.r_c2w.transpose().template cast<T>();
    const V3 t = w2c * (mu - cam.center.template cast<T>());

    const M3 r = rotation_from_quat<T>(quat[0], quat[1], quat[2], quat[3]);
    M3 rs = r;
    for (int k = 0; k < 3; ++k) rs.col(k) *= scale[k];
    const M3 sigma_cam = w2c * (rs * rs.transpose()) * w2c.transpose();

    const T inv_z = T(1) / t.z();
    Eigen::Matrix<T, 2, 3> jac;
    jac << T(cam.fx) * inv_z, T(0), -T(cam.fx) * t.x() * inv_z * inv_z,
           T(0), T(cam.fy) * inv_z, -T(cam.fy) * t.y() * inv_z * inv_z;

    ProjectionT<T> out;
    out.mean << T(cam.fx) * t.x() * inv_z + T(cam.px), T(cam.fy) * t.y() * inv_z + T(cam.py);
    out.cov = jac * sigma_cam * jac.transpose();
    out.cov(0, 0) += T(kCov2dFloor);
    out.cov(1, 1) += T(kCov2dFloor);
    // exact symmetry for downstream inversion
    out.cov(1, 0) = out.cov(0, 1);
    out.depth = t.z();
    return out;
}

inline Splat2D project(const Gaussian3D& g, const Camera& cam, std::size_t source_index = 0) {
    const double z = cam.to_camera(g.mu).z();
    if (!(z > kNearDepth)) throw BehindCamera("gaussian " + std::to_string(source_index) + " is behind the camera");
    const Eigen::Vector4d q(g.rot.w(), g.rot.x(), g.rot.y(), g.rot.z());
    const auto p = project_generic<double>(g.mu, g.scale, q, cam);
    return Splat2D{p.mean, p.cov, p.depth, source_index};
}

/// View direction used for SH evaluation: from the camera center to the mean.
inline Vec3 view_direction(const Gaussian3D& g, const Camera& cam) { return (g.mu - cam.center).normalized(); }

// ---------------------------------------------------------------------------
// Shared forward setup

namespace raster_detail {

constexpr int kTile = 4;

struct PreparedSplat {
    std::size_t source;
    Vec2 mean;
    Mat2 conic;  // inverse of the regularized 2D covariance
    double depth;
    double opacity;
    Vec3 color;
    int x0, x1, y0, y1;  // inclusive pixel bounds where alpha can reach kAlphaMin
};

struct Prepared {
    std::vector<PreparedSplat> splats;  // front-to-back
    std::vector<char> visible;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> bins;  // per tile, indices into splats, depth order
};

inline Prepared prepare(const Scene& scene, const Camera& cam) {
    Prepared out;
    out.visible.assign(scene.size(), 0);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene.gaussians[i];
        if (g.opacity < kAlphaMin) continue;
        if (!(cam.to_camera(g.mu).z() > kNearDepth)) continue;
        const Splat2D s = project(g, cam, i);
        // alpha >= kAlphaMin needs q <= 2 ln(o / alpha_min); the ellipse q <= r^2
        // spans r * sqrt(cov_xx) horizontally and r * sqrt(cov_yy) vertically.
        const double r = std::sqrt(std::max(0.0, 2.0 * std::log(g.opacity / kAlphaMin)));
        const double hx = r * std::sqrt(s.cov2d(0, 0)) + 1e-6;
        const double hy = r * std::sqrt(s.cov2d(1, 1)) + 1e-6;
        const double fx0 = std::ceil(s.mean2d.x() - hx), fx1 = std::floor(s.mean2d.x() + hx);
        const double fy0 = std::ceil(s.mean2d.y() - hy), fy1 = std::floor(s.mean2d.y() + hy);
        if (fx1 < 0.0 || fy1 < 0.0 || fx0 > cam.width - 1.0 || fy0 > cam.height - 1.0) continue;
        PreparedSplat p;
        p.source = i;
        p.mean = s.mean2d;
        p.conic = s.cov2d.inverse();
        p.depth = s.depth;
        p.opacity = g.opacity;
        p.color = sh_to_rgb(g, view_direction(g, cam));
        p.x0 = static_cast<int>(std::max(0.0, fx0));
        p.x1 = static_cast<int>(std::min(cam.width - 1.0, fx1));
        p.y0 = static_cast<int>(std::max(0.0, fy0));
        p.y1 = static_cast<int>(std::min(cam.height - 1.0, fy1));
        out.splats.push_back(p);
        out.visible[i] = 1;
    }
    std::stable_sort(out.splats.begin(), out.splats.end(), [](const PreparedSplat& a, const PreparedSplat& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.source < b.source);
    });
    out.tiles_x = (cam.width + kTile - 1) / kTile;
    out.tiles_y = (cam.height + kTile - 1) / kTile;
    out.bins.assign(static_cast<std::size_t>(out.tiles_x * out.tiles_y), {});
    for (std::size_t k = 0; k < out.splats.size(); ++k) {
        const auto& p = out.splats[k];
        for (int ty = p.y0 / kTile; ty <= p.y1 / kTile; ++ty)
            for (int tx = p.x0 / kTile; tx <= p.x1 / kTile; ++tx)
                out.bins[static_cast<std::size_t>(ty * out.tiles_x + tx)].push_back(static_cast<std::uint32_t>(k));
    }
    return out;
}

/// Alpha of a prepared splat at pixel (x, y); 0 when below the alpha floor.
/// Also returns the Gaussian falloff and whether the cap was active.
struct AlphaEval {
    double alpha;
    double falloff;
    bool capped;
};

inline AlphaEval alpha_at(const PreparedSplat& p, double x, double y) {
    const double dx = x - p.mean.x(), dy = y - p.mean.y();
    const double q = p.conic(0, 0) * dx * dx + 2.0 * p.conic(0, 1) * dx * dy + p.conic(1, 1) * dy * dy;
    const double falloff = std::exp(-0.5 * q);
    const double raw = p.opacity * falloff;
    if (raw < kAlphaMin) return {0.0, falloff, false};
    if (raw > kAlphaCap) return {kAlphaCap, falloff, true};
    return {raw, falloff, false};
}

} // namespace raster_detail

/// Front-to-back alpha compositing over a global per-view depth sort.
inline RenderOutput render(const Scene& scene, const Camera& cam, const Vec3& background) {
    using namespace raster_detail;
    const Prepared prep = prepare(scene, cam);
    RenderOutput out;
    out.image = Image(cam.width, cam.height, background);
    out.dominant_map = Grid<std::int32_t>(cam.width, cam.height, kNoGaussian);
    out.background = background;
    out.visible = prep.visible;

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const auto& bin = prep.bins[static_cast<std::size_t>((y / kTile) * prep.tiles_x + x / kTile)];
            double transmittance = 1.0;
            Vec3 color = Vec3::Zero();
            double best = 0.0;
            std::int32_t best_index = kNoGaussian;
            for (std::uint32_t k : bin) {
                const auto& p = prep.splats[k];
                if (x < p.x0 || x > p.x1 || y < p.y0 || y > p.y1) continue;
                const AlphaEval a = alpha_at(p, x, y);
                if (a.alpha == 0.0) continue;
                const double weight = transmittance * a.alpha;
                color += weight * p.color;
                if (weight > best) {
                    best = weight;
                    best_index = static_cast<std::int32_t>(p.source);
                }
                transmittance *= 1.0 - a.alpha;
            }
            out.image(x, y) = color + transmittance * background;
            out.dominant_map(x, y) = best_index;
        }
    }
    return out;
}

/// Gradients of L = sum(dL_dI * I) with respect to every Gaussian parameter.
/// Scale and opacity gradients are with respect to the stored (activated)
/// values; rotation gradients are with respect to the raw quaternion
/// components, through the normalization inside rotation_from_quat.
inline GradOutput render_backward(const Scene& scene, const Camera& cam, const Vec3& background,
                                  const Image& dL_dI) {
    using namespace raster_detail;
    if (dL_dI.width != cam.width || dL_dI.height != cam.height)
        throw DimensionMismatch("render_backward: cotangent image does not match camera size");
    const Prepared prep = prepare(scene, cam);
    GradOutput grads(scene);
    grads.visible = prep.visible;

    // Per prepared splat: dL/dmean2d, dL/dcov2d (full symmetric matrix), dL/dopacity, dL/dcolor.
    const std::size_t n = prep.splats.size();
    std::vector<Vec2> g_mean(n, Vec2::Zero());
    std::vector<Mat2> g_cov(n, Mat2::Zero());
    std::vector<double> g_opacity(n, 0.0);
    std::vector<Vec3> g_color(n, Vec3::Zero());

    struct Contribution {
        std::uint32_t k;
        double alpha;
        double falloff;
        double transmittance;
        bool capped;
    };
    std::vector<Contribution> contrib;

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec3& dl_dc = dL_dI(x, y);
            if (dl_dc.isZero(0.0)) continue;
            const auto& bin = prep.bins[static_cast<std::size_t>((y / kTile) * prep.tiles_x + x / kTile)];
            contrib.clear();
            double transmittance = 1.0;
            for (std::uint32_t k : bin) {
                const auto& p = prep.splats[k];
                if (x < p.x0 || x > p.x1 || y < p.y0 || y > p.y1) continue;
                const AlphaEval a = alpha_at(p, x, y);
                if (a.alpha == 0.0) continue;
                contrib.push_back({k, a.alpha, a.falloff, transmittance, a.capped});
                transmittance *= 1.0 - a.alpha;
            }
            // suffix = sum_{j > k} T_j alpha_j c_j + T_final * background
            Vec3 suffix = transmittance * background;
            for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
                const auto& p = prep.splats[it->k];
                const double weight = it->transmittance * it->alpha;
                g_color[it->k] += weight * dl_dc;
                const double dl_dalpha =
                    dl_dc.dot(it->transmittance * p.color - suffix / (1.0 - it->alpha));
                suffix += weight * p.color;
                if (it->capped) continue;
                g_opacity[it->k] += dl_dalpha * it->falloff;
                // alpha = o exp(-q/2), q = d^T A d, d = u - mean
                const double dl_dq = -0.5 * p.opacity * it->falloff * dl_dalpha;
                const Vec2 d(x - p.mean.x(), y - p.mean.y());
                const Vec2 v = p.conic * d;
                g_mean[it->k] += -2.0 * dl_dq * v;
                g_cov[it->k] += -dl_dq * (v * v.transpose());
            }
        }
    }

    // Chain the image-space gradients to the 3D parameters.
    using Deriv = Eigen::Matrix<double, 10, 1>;
    using AD = Eigen::AutoDiffScalar<Deriv>;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& p = prep.splats[k];
        const std::size_t i = p.source;
        const auto& g = scene.gaussians[i];
        Eigen::Matrix<AD, 3, 1> mu, scale;
        Eigen::Matrix<AD, 4, 1> quat;
        for (int c = 0; c < 3; ++c) {
            mu[c] = AD(g.mu[c], 10, c);
            scale[c] = AD(g.scale[c], 10, 3 + c);
        }
        const double qv[4] = {g.rot.w(), g.rot.x(), g.rot.y(), g.rot.z()};
        for (int c = 0; c < 4; ++c) quat[c] = AD(qv[c], 10, 6 + c);

        const auto proj = project_generic<AD>(mu, scale, quat, cam);
        Deriv total = Deriv::Zero();
        total += g_mean[k].x() * proj.mean.x().derivatives() + g_mean[k].y() * proj.mean.y().derivatives();
        total += g_cov[k](0, 0) * proj.cov(0, 0).derivatives() +
                 (g_cov[k](0, 1) + g_cov[k](1, 0)) * proj.cov(0, 1).derivatives() +
                 g_cov[k](1, 1) * proj.cov(1, 1).derivatives();

        // Color: clamp mask, SH coefficients, and the view direction's dependence on mu.
        const Eigen::Matrix<AD, 3, 1> offset = mu - cam.center.cast<AD>();
        const Eigen::Matrix<AD, 3, 1> dir = offset / offset.norm();
        const auto rgb = sh_to_rgb_unclamped<AD>(g, dir);
        Vec3 dl_drgb = g_color[k];
        for (int c = 0; c < 3; ++c)
            if (rgb[c].value() < 0.0 || rgb[c].value() > 1.0) dl_drgb[c] = 0.0;
        for (int c = 0; c < 3; ++c) total += dl_drgb[c] * rgb[c].derivatives();
        grads.sh_dc[i] = sh::kC0 * dl_drgb;
        const int degree = g.sh_degree();
        if (degree > 0) {
            const Vec3 dv = view_direction(g, cam);
            const auto basis = sh::rest_basis<double>(degree, dv.x(), dv.y(), dv.z());
            for (std::size_t b = 0; b < basis.size(); ++b) grads.sh_rest[i][b] = basis[b] * dl_drgb;
        }

        grads.mu[i] = total.segment<3>(0);
        grads.scale[i] = total.segment<3>(3);
        grads.rot[i] = total.segment<4>(6);
        grads.opacity[i] = g_opacity[k];
        grads.viewspace_grad[i] = g_mean[k];
    }
    return grads;
}

/// 10 log10(1 / MSE) over all pixels and channels; kPsnrCap when MSE is 0.
inline double psnr(const Image& image, const Image& gt) {
    require_same_size(image, gt, "psnr");
    double sum = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) sum += (image.values[i] - gt.values[i]).squaredNorm();
    const double mse = sum / (3.0 * static_cast<double>(std::max<std::size_t>(1, image.size())));
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

} // namespace adpsplit
