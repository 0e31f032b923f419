#pragma once

#include <string>
#include <variant>
#include <vector>

#include "mia/volume.hpp"

namespace mia {

/// Maps fixed-space mm points to moving-space mm points: M(p - c) + c + t.
struct AffineTransform {
    double matrix[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    Vec3 translation{0, 0, 0};
    Vec3 center{0, 0, 0};

    Vec3 apply(const Vec3& p) const {
        Vec3 d = p - center;
        return Vec3{matrix[0][0] * d.x + matrix[0][1] * d.y + matrix[0][2] * d.z,
                    matrix[1][0] * d.x + matrix[1][1] * d.y + matrix[1][2] * d.z,
                    matrix[2][0] * d.x + matrix[2][1] * d.y + matrix[2][2] * d.z} +
               center + translation;
    }

    double det() const;
    AffineTransform inverse() const;

    static AffineTransform identity() { return {}; }
    static AffineTransform translation_mm(const Vec3& t);
    /// Euler rotation (degrees, applied x then y then z) about `center`.
    static AffineTransform rotation_deg(double rx, double ry, double rz, const Vec3& center);
    AffineTransform compose_after(const AffineTransform& first) const;  // this ∘ first
};

/// Cubic B-spline free-form deformation: p + interpolated displacement.
/// Displacement is zero wherever the full 4^3 control support is unavailable.
struct BsplineTransform {
    Dims3 grid_dims{4, 4, 4};
    Vec3 grid_spacing{1, 1, 1};
    Vec3 grid_origin{0, 0, 0};
    std::vector<double> coefficients;  // [cp_index * 3 + component], mm

    std::size_t control_point_count() const { return voxel_count(grid_dims); }
    std::size_t coeff_index(int i, int j, int k, int comp) const {
        return 3 * linear_index(grid_dims, i, j, k) + comp;
    }

    Vec3 displacement(const Vec3& p_mm) const;
    Vec3 apply(const Vec3& p) const { return p + displacement(p); }

    /// Grid covering the volume extent with one cell of margin on every side
    /// so all voxels have full support. Coefficients start at zero.
    static BsplineTransform for_volume(const ScalarVolume& vol, const Vec3& spacing_mm);
};

using TransformStage = std::variant<AffineTransform, BsplineTransform>;

/// Ordered stages applied fixed -> moving, left to right.
struct TransformChain {
    std::vector<TransformStage> stages;

    Vec3 apply(const Vec3& p) const;
    bool empty() const { return stages.empty(); }
};

Vec3 transform_point(const TransformChain& chain, const Vec3& p_mm);

enum class Interp { Nearest, Linear };

/// output(x) = moving sampled at chain(physical(x)); out of bounds -> 0.
ScalarVolume resample(const ScalarVolume& moving, const TransformChain& chain,
                      const ScalarVolume& fixed_geometry, Interp interp = Interp::Linear);

/// Labels resample with nearest-neighbor only.
LabelVolume resample_labels(const LabelVolume& moving, const TransformChain& chain,
                            const LabelVolume& fixed_geometry);

/// Fixed landmarks (voxel units) -> moving landmarks (voxel units of
/// moving_spacing), mapped through the chain in mm.
LandmarkSet transform_landmarks(const TransformChain& chain, const LandmarkSet& fixed_lms,
                                const Vec3& moving_spacing);

/// Mean over the sample grid of the squared second spatial derivatives of the
/// displacement field (dxx² + dyy² + dzz² + 2dxy² + 2dxz² + 2dyz², summed
/// over components), evaluated analytically from the B-spline basis.
double bending_energy(const BsplineTransform& t, const ScalarVolume& sample_geometry);

/// JSON (de)serialization, so saved chains can be replayed on landmark files.
std::string chain_to_json(const TransformChain& chain);
TransformChain chain_from_json(const std::string& json_text);
void save_chain(const TransformChain& chain, const std::string& path);
TransformChain load_chain(const std::string& path);

}  // namespace mia
