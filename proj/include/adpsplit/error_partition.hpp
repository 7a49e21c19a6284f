#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "adpsplit/grid.hpp"
#include "adpsplit/scene_model.hpp"

namespace adpsplit {

constexpr int kNoBand = -1;
/// Floor on the minor standard deviation of a region, pixels.
constexpr double kMinRegionSigma = 0.5;

struct ErrorMaps {
    Grid<double> e;          // min-max normalized L1 error
    Grid<std::uint8_t> m;    // thresholded and eroded
    Grid<int> b;             // band index, kNoBand where e <= tau_l1
};

struct ErrorRegion {
    std::int32_t candidate = -1;
    int view = -1;
    std::vector<std::pair<int, int>> pixels;  // (x, y), row-major order
    int area = 0;
    Vec2 centroid = Vec2::Zero();
    Vec2 e1 = Vec2::UnitX();
    Vec2 e2 = Vec2::UnitY();
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    int band = kNoBand;
    Vec3 gt_rgb = Vec3::Zero();
};

/// Per-pixel channel-summed |rendered - gt|, min-max normalized. A constant
/// raw map (max == min) yields all zeros.
inline Grid<double> error_map(const Image& rendered, const Image& gt) {
    require_same_size(rendered, gt, "error_map");
    Grid<double> out(rendered.width, rendered.height, 0.0);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = (rendered.values[i] - gt.values[i]).cwiseAbs().sum();
    if (out.values.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(out.values.begin(), out.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        std::fill(out.values.begin(), out.values.end(), 0.0);
        return out;
    }
    for (auto& v : out.values) v = (v - lo) / (hi - lo);
    return out;
}

inline Grid<std::uint8_t> metric_map(const Grid<double>& e, double tau_l1) {
    Grid<std::uint8_t> out(e.width, e.height, 0);
    for (std::size_t i = 0; i < e.size(); ++i) out.values[i] = e.values[i] > tau_l1 ? 1 : 0;
    return out;
}

/// Binary erosion with a side x side square footprint. Offsets run over
/// [-(side/2), side - 1 - side/2], so even sides lean toward the top-left.
/// Footprint cells outside the image are ignored.
inline Grid<std::uint8_t> erode(const Grid<std::uint8_t>& m, int side) {
    if (side <= 1) return m;
    const int lo = -(side / 2);
    const int hi = lo + side - 1;
    // separable: a pixel survives iff every row-window and then column-window is all ones
    Grid<std::uint8_t> rows(m.width, m.height, 0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool all = true;
            for (int dx = std::max(lo, -x); dx <= std::min(hi, m.width - 1 - x) && all; ++dx) all = m(x + dx, y) != 0;
            rows(x, y) = all ? 1 : 0;
        }
    Grid<std::uint8_t> out(m.width, m.height, 0);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool all = true;
            for (int dy = std::max(lo, -y); dy <= std::min(hi, m.height - 1 - y) && all; ++dy)
                all = rows(x, y + dy) != 0;
            out(x, y) = (all && m(x, y)) ? 1 : 0;
        }
    return out;
}

/// Equal-width bands over (tau_l1, 1], upper-clamped to l_bands - 1.
inline int band_of(double e, double tau_l1, int l_bands) {
    if (!(e > tau_l1)) return kNoBand;
    const int b = static_cast<int>(std::floor((e - tau_l1) / (1.0 - tau_l1) * l_bands));
    return std::clamp(b, 0, l_bands - 1);
}

inline Grid<int> band_map(const Grid<double>& e, double tau_l1, int l_bands) {
    Grid<int> out(e.width, e.height, kNoBand);
    for (std::size_t i = 0; i < e.size(); ++i) out.values[i] = band_of(e.values[i], tau_l1, l_bands);
    return out;
}

/// Bands are computed from e before erosion; erosion only clears pixels.
inline ErrorMaps build_error_maps(const Image& rendered, const Image& gt, const AdpSplitConfig& cfg) {
    ErrorMaps maps;
    maps.e = error_map(rendered, gt);
    maps.b = band_map(maps.e, cfg.tau_l1, cfg.l_bands);
    maps.m = erode(metric_map(maps.e, cfg.tau_l1), cfg.r_erode);
    return maps;
}

namespace partition_detail {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a > b) std::swap(a, b);
        parent[b] = a;  // smallest (row-major first) pixel is the root
    }
};

} // namespace partition_detail

/// Maximal 8-connected groups of marked pixels that share a dominant
/// candidate and a band. Regions below m_min are discarded. Output is ordered
/// by each region's first pixel in row-major order. `is_candidate` has one
/// entry per Gaussian index.
inline std::vector<ErrorRegion> partition(const ErrorMaps& maps, const Grid<std::int32_t>& dominant,
                                          const std::vector<char>& is_candidate, int m_min, int view = -1) {
    require_same_size(maps.m, dominant, "partition");
    require_same_size(maps.m, maps.b, "partition");
    const int w = maps.m.width, h = maps.m.height;
    auto eligible = [&](int x, int y) {
        const std::int32_t d = dominant(x, y);
        return maps.m(x, y) != 0 && d >= 0 && static_cast<std::size_t>(d) < is_candidate.size() &&
               is_candidate[static_cast<std::size_t>(d)] && maps.b(x, y) != kNoBand;
    };
    auto same = [&](int x0, int y0, int x1, int y1) {
        return dominant(x0, y0) == dominant(x1, y1) && maps.b(x0, y0) == maps.b(x1, y1);
    };

    // one pass over causal neighbors (W, NW, N, NE) with union-find
    partition_detail::UnionFind uf(maps.m.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!eligible(x, y)) continue;
            const int self = static_cast<int>(maps.m.index(x, y));
            constexpr int kOffsets[4][2] = {{-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
            for (const auto& o : kOffsets) {
                const int nx = x + o[0], ny = y + o[1];
                if (!maps.m.contains(nx, ny) || !eligible(nx, ny) || !same(x, y, nx, ny)) continue;
                uf.unite(self, static_cast<int>(maps.m.index(nx, ny)));
            }
        }

    std::vector<int> slot(maps.m.size(), -1);
    std::vector<ErrorRegion> regions;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!eligible(x, y)) continue;
            const int root = uf.find(static_cast<int>(maps.m.index(x, y)));
            if (slot[static_cast<std::size_t>(root)] < 0) {
                slot[static_cast<std::size_t>(root)] = static_cast<int>(regions.size());
                ErrorRegion r;
                r.candidate = dominant(x, y);
                r.band = maps.b(x, y);
                r.view = view;
                regions.push_back(std::move(r));
            }
            regions[static_cast<std::size_t>(slot[static_cast<std::size_t>(root)])].pixels.emplace_back(x, y);
        }

    std::vector<ErrorRegion> kept;
    for (auto& r : regions) {
        r.area = static_cast<int>(r.pixels.size());
        if (r.area >= m_min) kept.push_back(std::move(r));
    }
    return kept;
}

/// Principal axes of a symmetric 2x2 matrix [[a, b], [b, c]] in closed form.
/// Returns (lambda_major, lambda_minor, major direction with x >= 0).
inline std::pair<Vec2, Vec2> symmetric_eigen2(double a, double b, double c) {
    const double mean = 0.5 * (a + c);
    const double diff = 0.5 * (a - c);
    const double radius = std::hypot(diff, b);
    const double angle = 0.5 * std::atan2(2.0 * b, a - c);
    Vec2 dir(std::cos(angle), std::sin(angle));
    if (dir.x() < 0.0 || (dir.x() == 0.0 && dir.y() < 0.0)) dir = -dir;
    return {Vec2(mean + radius, mean - radius), dir};
}

/// Fills centroid, principal axes, standard deviations (population
/// covariance, minor axis floored at kMinRegionSigma) and the ground-truth
/// color at the pixel nearest the centroid.
inline ErrorRegion region_stats(ErrorRegion region, const Image& gt) {
    if (region.pixels.empty()) throw InvariantError("region_stats: empty region");
    const double n = static_cast<double>(region.pixels.size());
    Vec2 mean = Vec2::Zero();
    for (auto [x, y] : region.pixels) mean += Vec2(x, y);
    mean /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (auto [x, y] : region.pixels) {
        const double dx = x - mean.x(), dy = y - mean.y();
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    const auto [lambda, e1] = symmetric_eigen2(sxx / n, sxy / n, syy / n);
    region.area = static_cast<int>(region.pixels.size());
    region.centroid = mean;
    region.e1 = e1;
    region.e2 = Vec2(-e1.y(), e1.x());
    region.sigma1 = std::sqrt(std::max(0.0, lambda[0]));
    region.sigma2 = std::sqrt(std::max(0.0, lambda[1]));
    region.sigma2 = std::max(region.sigma2, kMinRegionSigma);
    region.sigma1 = std::max(region.sigma1, region.sigma2);
    const int gx = std::clamp(static_cast<int>(std::lround(mean.x())), 0, gt.width - 1);
    const int gy = std::clamp(static_cast<int>(std::lround(mean.y())), 0, gt.height - 1);
    region.gt_rgb = gt(gx, gy);
    return region;
}

} // namespace adpsplit
