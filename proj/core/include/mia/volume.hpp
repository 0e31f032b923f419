#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mia/geometry.hpp"

namespace mia {

/// Dense 3D scalar grid with physical spacing and origin (mm). 2D images are
/// volumes with dims[2] == 1. Data is row-major, x fastest, one double per
/// voxel regardless of the on-disk element type.
struct ScalarVolume {
    Dims3 dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::vector<double> data;

    std::size_t size() const { return data.size(); }
    std::size_t index(int x, int y, int z) const { return linear_index(dims, x, y, z); }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }

    /// physical(p) = origin + p ⊙ spacing
    Vec3 physical(const Vec3& voxel) const { return origin + voxel.cwiseMul(spacing); }
    Vec3 to_voxel(const Vec3& mm) const { return (mm - origin).cwiseDiv(spacing); }

    bool same_grid(const ScalarVolume& o) const {
        return dims == o.dims && same_physical(o.spacing, o.origin);
    }
    bool same_physical(const Vec3& sp, const Vec3& org) const {
        return spacing.x == sp.x && spacing.y == sp.y && spacing.z == sp.z &&
               origin.x == org.x && origin.y == org.y && origin.z == org.z;
    }
};

/// Integer tissue/class map on the same kind of grid. Values must stay below
/// class_count; background is class 0.
struct LabelVolume {
    Dims3 dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::vector<std::uint8_t> data;
    int class_count = 2;

    std::size_t size() const { return data.size(); }
    std::size_t index(int x, int y, int z) const { return linear_index(dims, x, y, z); }
    std::uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
    std::uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }

    Vec3 physical(const Vec3& voxel) const { return origin + voxel.cwiseMul(spacing); }

    bool same_grid(const LabelVolume& o) const {
        return dims == o.dims && spacing.x == o.spacing.x && spacing.y == o.spacing.y &&
               spacing.z == o.spacing.z && origin.x == o.origin.x && origin.y == o.origin.y &&
               origin.z == o.origin.z;
    }
    bool matches_geometry(const ScalarVolume& v) const {
        return dims == v.dims && spacing.x == v.spacing.x && spacing.y == v.spacing.y &&
               spacing.z == v.spacing.z && origin.x == v.origin.x && origin.y == v.origin.y &&
               origin.z == v.origin.z;
    }
};

/// Interleaved 8-bit RGB image.
struct ColorImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // r,g,b per pixel, row-major

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::uint8_t channel(int x, int y, int c) const {
        return data[3 * (static_cast<std::size_t>(y) * width + x) + c];
    }
    std::uint8_t& channel(int x, int y, int c) {
        return data[3 * (static_cast<std::size_t>(y) * width + x) + c];
    }
};

/// Ordered 3D points in 0-based voxel index units (fractional allowed), with
/// the spacing needed to convert to mm. Corresponded sets match by order.
struct LandmarkSet {
    std::vector<Vec3> points;
    Vec3 spacing{1.0, 1.0, 1.0};

    std::size_t size() const { return points.size(); }
    Vec3 to_mm(std::size_t i) const { return points[i].cwiseMul(spacing); }
};

inline ScalarVolume make_volume(const Dims3& dims, const Vec3& spacing = {1, 1, 1},
                                const Vec3& origin = {0, 0, 0}, double fill = 0.0) {
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw std::invalid_argument("volume dims must be positive");
    if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0)
        throw std::invalid_argument("volume spacing must be positive");
    ScalarVolume v;
    v.dims = dims;
    v.spacing = spacing;
    v.origin = origin;
    v.data.assign(voxel_count(dims), fill);
    return v;
}

inline LabelVolume make_labels(const Dims3& dims, int class_count = 2,
                               const Vec3& spacing = {1, 1, 1}, const Vec3& origin = {0, 0, 0}) {
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw std::invalid_argument("label dims must be positive");
    if (class_count < 1) throw std::invalid_argument("class_count must be >= 1");
    LabelVolume l;
    l.dims = dims;
    l.spacing = spacing;
    l.origin = origin;
    l.class_count = class_count;
    l.data.assign(voxel_count(dims), 0);
    return l;
}

/// 2D convenience: a dims = {w, h, 1} volume.
inline ScalarVolume make_image2d(int w, int h, double fill = 0.0) {
    return make_volume({w, h, 1}, {1, 1, 1}, {0, 0, 0}, fill);
}

}  // namespace mia
