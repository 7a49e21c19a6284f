#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "adpsplit/errors.hpp"

namespace adpsplit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

constexpr int kMaxShDegree = 3;

/// Coefficient count (excluding DC) for SH degree d: (d+1)^2 - 1.
constexpr int sh_rest_count(int degree) { return (degree + 1) * (degree + 1) - 1; }

struct Gaussian3D {
    Vec3 mu = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Quat rot = Quat::Identity();
    double opacity = 0.5;
    Vec3 sh_dc = Vec3::Zero();
    std::vector<Vec3> sh_rest;

    int sh_degree() const {
        for (int d = 0; d <= kMaxShDegree; ++d)
            if (static_cast<int>(sh_rest.size()) == sh_rest_count(d)) return d;
        return -1;
    }

    bool operator==(const Gaussian3D& o) const {
        return mu == o.mu && scale == o.scale && rot.coeffs() == o.rot.coeffs() && opacity == o.opacity &&
               sh_dc == o.sh_dc && sh_rest == o.sh_rest;
    }
};

/// Pinhole camera. Camera axes are x right, y down, z forward; the columns of
/// r_c2w are those axes expressed in world coordinates.
struct Camera {
    Mat3 r_c2w = Mat3::Identity();
    Vec3 center = Vec3::Zero();
    double fx = 1.0;
    double fy = 1.0;
    double px = 0.0;
    double py = 0.0;
    int width = 1;
    int height = 1;

    Vec3 right() const { return r_c2w.col(0); }
    Vec3 down() const { return r_c2w.col(1); }
    Vec3 forward() const { return r_c2w.col(2); }
    Vec3 to_camera(const Vec3& world) const { return r_c2w.transpose() * (world - center); }

    bool operator==(const Camera&) const = default;
};

struct Scene {
    std::vector<Gaussian3D> gaussians;
    double extent = 1.0;

    std::size_t size() const { return gaussians.size(); }
    bool operator==(const Scene&) const = default;
};

struct AdpSplitConfig {
    double tau_l1 = 0.1;
    int r_erode = 2;
    int m_min = 5;
    int l_bands = 3;
    int n_max = 19;
    int v_views = 20;
    double gamma_d = 2.0;
    double gamma_c = 0.15;
    double tau_g = 0.0002;
    double tau_s = 0.01;
    double eta = 1.6;
    int t_interval = 100;
    double eps = 1e-9;

    void validate() const {
        auto fail = [](const char* what) { throw InvariantError(std::string("AdpSplitConfig: ") + what); };
        if (!(tau_l1 > 0.0 && tau_l1 < 1.0)) fail("tau_l1 must lie in (0,1)");
        if (r_erode < 0) fail("r_erode must be >= 0");
        if (m_min < 1) fail("m_min must be >= 1");
        if (l_bands < 1) fail("l_bands must be >= 1");
        if (n_max < 1) fail("n_max must be >= 1");
        if (v_views < 1) fail("v_views must be >= 1");
        if (!(gamma_d >= 0.0) || !(gamma_c >= 0.0)) fail("gamma_d and gamma_c must be >= 0");
        if (!(eta > 0.0)) fail("eta must be > 0");
        if (!(eps > 0.0)) fail("eps must be > 0");
        if (t_interval < 1) fail("t_interval must be >= 1");
    }

    bool operator==(const AdpSplitConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Invariants

inline void validate(const Gaussian3D& g, std::size_t index = 0) {
    auto fail = [&](const std::string& what) {
        throw InvariantError("gaussian " + std::to_string(index) + ": " + what);
    };
    if (!g.mu.allFinite()) fail("non-finite mean");
    if (std::abs(g.rot.norm() - 1.0) > 1e-9) fail("rotation quaternion is not unit length");
    for (int k = 0; k < 3; ++k)
        if (!(g.scale[k] > 0.0) || !std::isfinite(g.scale[k])) fail("scale components must be positive");
    if (!(g.opacity > 0.0 && g.opacity < 1.0)) fail("opacity must lie strictly inside (0,1)");
    if (!g.sh_dc.allFinite()) fail("non-finite sh_dc");
    if (g.sh_degree() < 0) fail("sh_rest length does not match an SH degree <= 3");
}

inline void validate(const Camera& cam) {
    auto fail = [](const std::string& what) { throw InvariantError("camera: " + what); };
    const Mat3 gram = cam.r_c2w.transpose() * cam.r_c2w - Mat3::Identity();
    if (!(gram.cwiseAbs().maxCoeff() < 1e-8)) fail("r_c2w is not orthonormal");
    if (!(cam.fx > 0.0 && cam.fy > 0.0)) fail("focal lengths must be positive");
    if (cam.width < 1 || cam.height < 1) fail("image size must be positive");
    if (!(cam.px >= 0.0 && cam.px < cam.width && cam.py >= 0.0 && cam.py < cam.height))
        fail("principal point outside the image");
}

inline void validate(const Scene& scene) {
    if (!(scene.extent > 0.0)) throw InvariantError("scene extent must be positive");
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) validate(scene.gaussians[i], i);
}

// ---------------------------------------------------------------------------
// Geometry

/// Rotation matrix of a (possibly non-unit) quaternion, normalized first.
/// Templated so the rasterizer can push dual numbers through it.
template <class T>
Eigen::Matrix<T, 3, 3> rotation_from_quat(const T& w0, const T& x0, const T& y0, const T& z0) {
    using std::sqrt;
    const T n = sqrt(w0 * w0 + x0 * x0 + y0 * y0 + z0 * z0);
    const T w = w0 / n, x = x0 / n, y = y0 / n, z = z0 / n;
    Eigen::Matrix<T, 3, 3> r;
    r(0, 0) = T(1) - T(2) * (y * y + z * z);
    r(0, 1) = T(2) * (x * y - w * z);
    r(0, 2) = T(2) * (x * z + w * y);
    r(1, 0) = T(2) * (x * y + w * z);
    r(1, 1) = T(1) - T(2) * (x * x + z * z);
    r(1, 2) = T(2) * (y * z - w * x);
    r(2, 0) = T(2) * (x * z - w * y);
    r(2, 1) = T(2) * (y * z + w * x);
    r(2, 2) = T(1) - T(2) * (x * x + y * y);
    return r;
}

inline Mat3 rotation_matrix(const Quat& q) { return rotation_from_quat(q.w(), q.x(), q.y(), q.z()); }

/// Sigma = R S S^T R^T.
inline Mat3 covariance(const Gaussian3D& g) {
    const Mat3 rs = rotation_matrix(g.rot) * g.scale.asDiagonal();
    return rs * rs.transpose();
}

/// Unit quaternion with w >= 0 for a proper rotation matrix.
inline Quat quat_from_rotation(const Mat3& r) {
    Quat q(r);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    return q;
}

// ---------------------------------------------------------------------------
// Spherical harmonics (real basis, degree <= 3, same sign convention as the
// reference splatting rasterizer).

namespace sh {
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                       -1.0925484305920792, 0.5462742152960396};
constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                       0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                       -0.5900435899266435};

/// Basis values 1..(d+1)^2-1 (DC excluded) at a unit direction.
template <class T>
std::vector<T> rest_basis(int degree, const T& x, const T& y, const T& z) {
    std::vector<T> b;
    b.reserve(sh_rest_count(degree));
    if (degree < 1) return b;
    b.push_back(-kC1 * y);
    b.push_back(kC1 * z);
    b.push_back(-kC1 * x);
    if (degree < 2) return b;
    const T xx = x * x, yy = y * y, zz = z * z;
    b.push_back(kC2[0] * x * y);
    b.push_back(kC2[1] * y * z);
    b.push_back(kC2[2] * (T(2) * zz - xx - yy));
    b.push_back(kC2[3] * x * z);
    b.push_back(kC2[4] * (xx - yy));
    if (degree < 3) return b;
    b.push_back(kC3[0] * y * (T(3) * xx - yy));
    b.push_back(kC3[1] * x * y * z);
    b.push_back(kC3[2] * y * (T(4) * zz - xx - yy));
    b.push_back(kC3[3] * z * (T(2) * zz - T(3) * xx - T(3) * yy));
    b.push_back(kC3[4] * x * (T(4) * zz - xx - yy));
    b.push_back(kC3[5] * z * (xx - yy));
    b.push_back(kC3[6] * x * (xx - T(3) * yy));
    return b;
}
} // namespace sh

/// 0.5 + sum_k basis_k(dir) coeff_k, before clamping.
template <class T>
Eigen::Matrix<T, 3, 1> sh_to_rgb_unclamped(const Gaussian3D& g, const Eigen::Matrix<T, 3, 1>& dir) {
    Eigen::Matrix<T, 3, 1> rgb;
    for (int c = 0; c < 3; ++c) rgb[c] = T(0.5 + sh::kC0 * g.sh_dc[c]);
    const int degree = g.sh_degree();
    if (degree > 0) {
        const auto basis = sh::rest_basis<T>(degree, dir.x(), dir.y(), dir.z());
        for (std::size_t k = 0; k < basis.size(); ++k)
            for (int c = 0; c < 3; ++c) rgb[c] += basis[k] * g.sh_rest[k][c];
    }
    return rgb;
}

inline Vec3 sh_to_rgb(const Gaussian3D& g, const Vec3& dir) {
    return sh_to_rgb_unclamped<double>(g, dir).cwiseMax(0.0).cwiseMin(1.0);
}

inline Vec3 rgb_to_dc(const Vec3& rgb) { return (rgb.array() - 0.5).matrix() / sh::kC0; }

// ---------------------------------------------------------------------------
// Text I/O
//
// Scene file:
//   adpsplit-scene v1
//   extent <e>
//   gaussians <n> sh_rest <k>
//   n records: mu(3) scale(3) quat(w x y z) opacity sh_dc(3) sh_rest(3k)
//
// Camera file:
//   adpsplit-cameras v1
//   cameras <n>
//   n records: r_c2w(9, row-major) center(3) fx fy px py width height
//
// Doubles are written in shortest round-trip form, so save/load is bit-exact.

namespace io_detail {

inline void put(std::string& out, double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), end);
}

inline void put(std::string& out, long long v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), end);
}

inline std::vector<std::string_view> tokens(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class T>
T parse_number(std::string_view tok, std::size_t line) {
    T v{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError("bad number '" + std::string(tok) + "'", line);
    return v;
}

class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    /// Next non-empty line, tokenized. Throws on EOF.
    std::vector<std::string_view> next(const char* expecting) {
        while (std::getline(in_, buffer_)) {
            ++line_;
            auto toks = tokens(buffer_);
            if (!toks.empty()) return toks;
        }
        throw ParseError(std::string("unexpected end of file, expected ") + expecting, line_ + 1);
    }
    std::size_t line() const { return line_; }

    bool at_end() {
        std::string rest;
        while (std::getline(in_, rest)) {
            ++line_;
            if (!tokens(rest).empty()) return false;
        }
        return true;
    }

private:
    std::istream& in_;
    std::string buffer_;
    std::size_t line_ = 0;
};

inline void expect_keyword(const std::vector<std::string_view>& toks, std::size_t idx, std::string_view kw,
                           std::size_t line) {
    if (toks.size() <= idx || toks[idx] != kw)
        throw ParseError("expected '" + std::string(kw) + "'", line);
}

} // namespace io_detail

inline std::string scene_to_string(const Scene& scene) {
    using io_detail::put;
    const std::size_t rest = scene.gaussians.empty() ? 0 : scene.gaussians.front().sh_rest.size();
    std::string out = "adpsplit-scene v1\nextent ";
    put(out, scene.extent);
    out += "\ngaussians ";
    put(out, static_cast<long long>(scene.gaussians.size()));
    out += " sh_rest ";
    put(out, static_cast<long long>(rest));
    out += '\n';
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        const auto& g = scene.gaussians[i];
        if (g.sh_rest.size() != rest)
            throw InvariantError("gaussian " + std::to_string(i) + ": mixed SH degrees in one scene");
        auto field = [&](double v) {
            put(out, v);
            out += ' ';
        };
        for (int k = 0; k < 3; ++k) field(g.mu[k]);
        for (int k = 0; k < 3; ++k) field(g.scale[k]);
        field(g.rot.w());
        field(g.rot.x());
        field(g.rot.y());
        field(g.rot.z());
        field(g.opacity);
        for (int k = 0; k < 3; ++k) field(g.sh_dc[k]);
        for (const auto& c : g.sh_rest)
            for (int k = 0; k < 3; ++k) field(c[k]);
        out.back() = '\n';
    }
    return out;
}

/// Parses a whole scene; either returns a validated scene or throws.
inline Scene scene_from_stream(std::istream& in) {
    using namespace io_detail;
    LineReader reader(in);
    auto header = reader.next("header");
    if (header.size() != 2 || header[0] != "adpsplit-scene" || header[1] != "v1")
        throw ParseError("expected header 'adpsplit-scene v1'", reader.line());
    Scene scene;
    auto ext = reader.next("extent");
    expect_keyword(ext, 0, "extent", reader.line());
    if (ext.size() != 2) throw ParseError("extent line needs one value", reader.line());
    scene.extent = parse_number<double>(ext[1], reader.line());

    auto counts = reader.next("gaussian count");
    expect_keyword(counts, 0, "gaussians", reader.line());
    expect_keyword(counts, 2, "sh_rest", reader.line());
    if (counts.size() != 4) throw ParseError("malformed count line", reader.line());
    const auto n = parse_number<long long>(counts[1], reader.line());
    const auto rest = parse_number<long long>(counts[3], reader.line());
    if (n < 0 || rest < 0) throw ParseError("negative count", reader.line());
    const std::size_t width = 14 + 3 * static_cast<std::size_t>(rest);

    scene.gaussians.reserve(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        auto rec = reader.next("gaussian record");
        if (rec.size() != width)
            throw ParseError("gaussian record " + std::to_string(i) + " has " + std::to_string(rec.size()) +
                                 " fields, expected " + std::to_string(width),
                             reader.line());
        std::vector<double> v(width);
        for (std::size_t k = 0; k < width; ++k) v[k] = parse_number<double>(rec[k], reader.line());
        Gaussian3D g;
        g.mu = Vec3(v[0], v[1], v[2]);
        g.scale = Vec3(v[3], v[4], v[5]);
        g.rot = Quat(v[6], v[7], v[8], v[9]);
        g.opacity = v[10];
        g.sh_dc = Vec3(v[11], v[12], v[13]);
        for (long long k = 0; k < rest; ++k)
            g.sh_rest.emplace_back(v[14 + 3 * k], v[15 + 3 * k], v[16 + 3 * k]);
        scene.gaussians.push_back(std::move(g));
    }
    if (!reader.at_end()) throw ParseError("trailing data after last gaussian record", reader.line());
    validate(scene);
    return scene;
}

inline Scene scene_from_string(const std::string& text) {
    std::istringstream in(text);
    return scene_from_stream(in);
}

inline void save_scene(const Scene& scene, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << scene_to_string(scene);
    if (!out) throw Error("write failed: " + path.string());
}

inline Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return scene_from_stream(in);
}

inline std::string cameras_to_string(const std::vector<Camera>& cams) {
    using io_detail::put;
    std::string out = "adpsplit-cameras v1\ncameras ";
    put(out, static_cast<long long>(cams.size()));
    out += '\n';
    for (const auto& c : cams) {
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) {
                put(out, c.r_c2w(r, k));
                out += ' ';
            }
        for (int k = 0; k < 3; ++k) {
            put(out, c.center[k]);
            out += ' ';
        }
        for (double v : {c.fx, c.fy, c.px, c.py}) {
            put(out, v);
            out += ' ';
        }
        put(out, static_cast<long long>(c.width));
        out += ' ';
        put(out, static_cast<long long>(c.height));
        out += '\n';
    }
    return out;
}

inline std::vector<Camera> cameras_from_stream(std::istream& in) {
    using namespace io_detail;
    LineReader reader(in);
    auto header = reader.next("header");
    if (header.size() != 2 || header[0] != "adpsplit-cameras" || header[1] != "v1")
        throw ParseError("expected header 'adpsplit-cameras v1'", reader.line());
    auto counts = reader.next("camera count");
    expect_keyword(counts, 0, "cameras", reader.line());
    if (counts.size() != 2) throw ParseError("malformed count line", reader.line());
    const auto n = parse_number<long long>(counts[1], reader.line());
    if (n < 0) throw ParseError("negative count", reader.line());
    std::vector<Camera> cams;
    for (long long i = 0; i < n; ++i) {
        auto rec = reader.next("camera record");
        if (rec.size() != 18)
            throw ParseError("camera record " + std::to_string(i) + " needs 18 fields", reader.line());
        Camera c;
        for (int k = 0; k < 9; ++k) c.r_c2w(k / 3, k % 3) = parse_number<double>(rec[k], reader.line());
        for (int k = 0; k < 3; ++k) c.center[k] = parse_number<double>(rec[9 + k], reader.line());
        c.fx = parse_number<double>(rec[12], reader.line());
        c.fy = parse_number<double>(rec[13], reader.line());
        c.px = parse_number<double>(rec[14], reader.line());
        c.py = parse_number<double>(rec[15], reader.line());
        c.width = parse_number<int>(rec[16], reader.line());
        c.height = parse_number<int>(rec[17], reader.line());
        try {
            validate(c);
        } catch (const InvariantError& e) {
            throw InvariantError("camera " + std::to_string(i) + ": " + e.what());
        }
        cams.push_back(c);
    }
    if (!reader.at_end()) throw ParseError("trailing data after last camera record", reader.line());
    return cams;
}

inline void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << cameras_to_string(cams);
}

inline std::vector<Camera> load_cameras(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return cameras_from_stream(in);
}

} // namespace adpsplit
