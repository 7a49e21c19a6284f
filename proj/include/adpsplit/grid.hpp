#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "adpsplit/errors.hpp"

namespace adpsplit {

/// Row-major H x W raster. Pixel (x, y) sits at integer image coordinate (x, y).
template <class T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int w, int h, const T& fill = T{})
        : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    T& operator()(int x, int y) { return values[index(x, y)]; }
    const T& operator()(int x, int y) const { return values[index(x, y)]; }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    }
    std::size_t size() const { return values.size(); }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    bool operator==(const Grid&) const = default;
};

using Image = Grid<Eigen::Vector3d>;

template <class A, class B>
void require_same_size(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw DimensionMismatch(std::string(what) + ": " + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height));
}

} // namespace adpsplit
