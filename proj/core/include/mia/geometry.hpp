#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace mia {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 cwiseMul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
    Vec3 cwiseDiv(const Vec3& o) const { return {x / o.x, y / o.y, z / o.z}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

using Dims3 = std::array<int, 3>;

inline std::size_t voxel_count(const Dims3& d) {
    return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) *
           static_cast<std::size_t>(d[2]);
}

/// Row-major linear index, x fastest.
inline std::size_t linear_index(const Dims3& d, int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(d[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(z));
}

}  // namespace mia
