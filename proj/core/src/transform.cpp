#include "mia/transform.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mia {

namespace {

constexpr double kPi = 3.14159265358979323846;

// cubic B-spline basis and derivatives on t in [0,1)
inline void bspline_weights(double t, double* b) {
    double t2 = t * t, t3 = t2 * t;
    b[0] = (1 - 3 * t + 3 * t2 - t3) / 6.0;
    b[1] = (4 - 6 * t2 + 3 * t3) / 6.0;
    b[2] = (1 + 3 * t + 3 * t2 - 3 * t3) / 6.0;
    b[3] = t3 / 6.0;
}
inline void bspline_dweights(double t, double* b) {
    double t2 = t * t;
    b[0] = -(1 - t) * (1 - t) / 2.0;
    b[1] = (3 * t2 - 4 * t) / 2.0;
    b[2] = (-3 * t2 + 2 * t + 1) / 2.0;
    b[3] = t2 / 2.0;
}
inline void bspline_ddweights(double t, double* b) {
    b[0] = 1 - t;
    b[1] = 3 * t - 2;
    b[2] = -3 * t + 1;
    b[3] = t;
}

}  // namespace

double AffineTransform::det() const {
    const auto& m = matrix;
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

AffineTransform AffineTransform::inverse() const {
    double d = det();
    if (std::abs(d) < 1e-12) throw std::runtime_error("affine matrix is singular");
    const auto& m = matrix;
    AffineTransform inv;
    inv.matrix[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
    inv.matrix[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
    inv.matrix[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
    inv.matrix[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
    inv.matrix[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
    inv.matrix[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
    inv.matrix[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
    inv.matrix[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
    inv.matrix[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
    inv.center = center;
    // y = M(x-c)+c+t  =>  x = M⁻¹(y-c-t)+c = M⁻¹(y-c)+c + (-M⁻¹ t)
    Vec3 mt{inv.matrix[0][0] * translation.x + inv.matrix[0][1] * translation.y +
                inv.matrix[0][2] * translation.z,
            inv.matrix[1][0] * translation.x + inv.matrix[1][1] * translation.y +
                inv.matrix[1][2] * translation.z,
            inv.matrix[2][0] * translation.x + inv.matrix[2][1] * translation.y +
                inv.matrix[2][2] * translation.z};
    inv.translation = Vec3{0, 0, 0} - mt;
    return inv;
}

AffineTransform AffineTransform::translation_mm(const Vec3& t) {
    AffineTransform a;
    a.translation = t;
    return a;
}

AffineTransform AffineTransform::rotation_deg(double rx, double ry, double rz,
                                              const Vec3& center) {
    double ax = rx * kPi / 180.0, ay = ry * kPi / 180.0, az = rz * kPi / 180.0;
    double cx = std::cos(ax), sx = std::sin(ax);
    double cy = std::cos(ay), sy = std::sin(ay);
    double cz = std::cos(az), sz = std::sin(az);
    // Rz * Ry * Rx
    AffineTransform a;
    a.matrix[0][0] = cz * cy;
    a.matrix[0][1] = cz * sy * sx - sz * cx;
    a.matrix[0][2] = cz * sy * cx + sz * sx;
    a.matrix[1][0] = sz * cy;
    a.matrix[1][1] = sz * sy * sx + cz * cx;
    a.matrix[1][2] = sz * sy * cx - cz * sx;
    a.matrix[2][0] = -sy;
    a.matrix[2][1] = cy * sx;
    a.matrix[2][2] = cy * cx;
    a.center = center;
    return a;
}

AffineTransform AffineTransform::compose_after(const AffineTransform& first) const {
    // (this ∘ first)(p) = this(first(p)); express with center of *this*
    AffineTransform out;
    out.center = center;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            out.matrix[r][c] = 0.0;
            for (int k = 0; k < 3; ++k) out.matrix[r][c] += matrix[r][k] * first.matrix[k][c];
        }
    // this(first(p)) = M2(M1(p-c1)+c1+t1-c2)+c2+t2
    //               = (M2 M1)(p-c2) + c2 + [M2(M1(c2-c1)+c1+t1-c2) + t2]
    Vec3 q = first.apply(center);
    Vec3 lin;  // M2 (q - c2)
    Vec3 d = q - center;
    lin.x = matrix[0][0] * d.x + matrix[0][1] * d.y + matrix[0][2] * d.z;
    lin.y = matrix[1][0] * d.x + matrix[1][1] * d.y + matrix[1][2] * d.z;
    lin.z = matrix[2][0] * d.x + matrix[2][1] * d.y + matrix[2][2] * d.z;
    out.translation = lin + translation;
    return out;
}

Vec3 BsplineTransform::displacement(const Vec3& p_mm) const {
    double u[3] = {(p_mm.x - grid_origin.x) / grid_spacing.x,
                   (p_mm.y - grid_origin.y) / grid_spacing.y,
                   (p_mm.z - grid_origin.z) / grid_spacing.z};
    int base[3];
    double w[3][4];
    for (int a = 0; a < 3; ++a) {
        double fl = std::floor(u[a]);
        int i = static_cast<int>(fl);
        if (i - 1 < 0 || i + 2 > grid_dims[a] - 1) return {0, 0, 0};  // no full support
        base[a] = i - 1;
        bspline_weights(u[a] - fl, w[a]);
    }
    Vec3 d{0, 0, 0};
    for (int c = 0; c < 4; ++c)
        for (int b = 0; b < 4; ++b) {
            double wyz = w[1][b] * w[2][c];
            for (int a = 0; a < 4; ++a) {
                double weight = w[0][a] * wyz;
                std::size_t idx =
                    3 * linear_index(grid_dims, base[0] + a, base[1] + b, base[2] + c);
                d.x += weight * coefficients[idx];
                d.y += weight * coefficients[idx + 1];
                d.z += weight * coefficients[idx + 2];
            }
        }
    return d;
}

BsplineTransform BsplineTransform::for_volume(const ScalarVolume& vol, const Vec3& spacing_mm) {
    if (spacing_mm.x <= 0 || spacing_mm.y <= 0 || spacing_mm.z <= 0)
        throw std::invalid_argument("grid spacing must be positive");
    BsplineTransform t;
    t.grid_spacing = spacing_mm;
    t.grid_origin = vol.origin - spacing_mm;
    for (int a = 0; a < 3; ++a) {
        double extent = (vol.dims[a] - 1) * vol.spacing[a];
        t.grid_dims[a] = static_cast<int>(std::ceil(extent / spacing_mm[a] - 1e-9)) + 4;
        t.grid_dims[a] = std::max(t.grid_dims[a], 4);
    }
    t.coefficients.assign(3 * t.control_point_count(), 0.0);
    return t;
}

Vec3 TransformChain::apply(const Vec3& p) const {
    Vec3 q = p;
    for (const auto& s : stages)
        q = std::visit([&](const auto& stage) { return stage.apply(q); }, s);
    return q;
}

Vec3 transform_point(const TransformChain& chain, const Vec3& p_mm) { return chain.apply(p_mm); }

namespace {

// Per-axis sampling weights with explicit validity; axes of extent 1 (2D
// images) collapse to index 0.
struct SampleLoc {
    bool valid = false;
    int i0[3];
    double f[3];
};

SampleLoc locate(const ScalarVolume& vol, const Vec3& voxel) {
    SampleLoc s;
    double vc[3] = {voxel.x, voxel.y, voxel.z};
    for (int a = 0; a < 3; ++a) {
        if (vol.dims[a] == 1) {
            if (vc[a] < -0.5 || vc[a] > 0.5) return s;
            s.i0[a] = 0;
            s.f[a] = 0.0;
            continue;
        }
        if (vc[a] < 0.0 || vc[a] > vol.dims[a] - 1) return s;
        double fl = std::floor(vc[a]);
        int i = static_cast<int>(fl);
        if (i >= vol.dims[a] - 1) {
            i = vol.dims[a] - 2;
            fl = i;
        }
        s.i0[a] = i;
        s.f[a] = vc[a] - fl;
    }
    s.valid = true;
    return s;
}

double sample_linear(const ScalarVolume& vol, const SampleLoc& s) {
    double acc = 0.0;
    for (int c = 0; c < 2; ++c) {
        int zi = std::min(s.i0[2] + c, vol.dims[2] - 1);
        double wz = c ? s.f[2] : 1.0 - s.f[2];
        if (wz == 0.0) continue;
        for (int b = 0; b < 2; ++b) {
            int yi = std::min(s.i0[1] + b, vol.dims[1] - 1);
            double wy = b ? s.f[1] : 1.0 - s.f[1];
            if (wy == 0.0) continue;
            for (int a = 0; a < 2; ++a) {
                int xi = std::min(s.i0[0] + a, vol.dims[0] - 1);
                double wx = a ? s.f[0] : 1.0 - s.f[0];
                if (wx == 0.0) continue;
                acc += wx * wy * wz * vol.at(xi, yi, zi);
            }
        }
    }
    return acc;
}

}  // namespace

ScalarVolume resample(const ScalarVolume& moving, const TransformChain& chain,
                      const ScalarVolume& fixed_geometry, Interp interp) {
    ScalarVolume out = make_volume(fixed_geometry.dims, fixed_geometry.spacing,
                                   fixed_geometry.origin);
    for (int z = 0; z < out.dims[2]; ++z)
        for (int y = 0; y < out.dims[1]; ++y)
            for (int x = 0; x < out.dims[0]; ++x) {
                Vec3 p = out.physical({static_cast<double>(x), static_cast<double>(y),
                                       static_cast<double>(z)});
                Vec3 vm = moving.to_voxel(chain.apply(p));
                if (interp == Interp::Nearest) {
                    int xi = static_cast<int>(std::lround(vm.x));
                    int yi = static_cast<int>(std::lround(vm.y));
                    int zi = static_cast<int>(std::lround(vm.z));
                    if (xi >= 0 && xi < moving.dims[0] && yi >= 0 && yi < moving.dims[1] &&
                        zi >= 0 && zi < moving.dims[2])
                        out.at(x, y, z) = moving.at(xi, yi, zi);
                } else {
                    SampleLoc s = locate(moving, vm);
                    if (s.valid) out.at(x, y, z) = sample_linear(moving, s);
                }
            }
    return out;
}

LabelVolume resample_labels(const LabelVolume& moving, const TransformChain& chain,
                            const LabelVolume& fixed_geometry) {
    LabelVolume out = make_labels(fixed_geometry.dims, moving.class_count, fixed_geometry.spacing,
                                  fixed_geometry.origin);
    for (int z = 0; z < out.dims[2]; ++z)
        for (int y = 0; y < out.dims[1]; ++y)
            for (int x = 0; x < out.dims[0]; ++x) {
                Vec3 p = out.physical({static_cast<double>(x), static_cast<double>(y),
                                       static_cast<double>(z)});
                Vec3 q = chain.apply(p);
                Vec3 vm{(q.x - moving.origin.x) / moving.spacing.x,
                        (q.y - moving.origin.y) / moving.spacing.y,
                        (q.z - moving.origin.z) / moving.spacing.z};
                int xi = static_cast<int>(std::lround(vm.x));
                int yi = static_cast<int>(std::lround(vm.y));
                int zi = static_cast<int>(std::lround(vm.z));
                if (xi >= 0 && xi < moving.dims[0] && yi >= 0 && yi < moving.dims[1] && zi >= 0 &&
                    zi < moving.dims[2])
                    out.at(x, y, z) = moving.at(xi, yi, zi);
            }
    return out;
}

LandmarkSet transform_landmarks(const TransformChain& chain, const LandmarkSet& fixed_lms,
                                const Vec3& moving_spacing) {
    LandmarkSet out;
    out.spacing = moving_spacing;
    out.points.reserve(fixed_lms.size());
    for (const auto& p : fixed_lms.points) {
        Vec3 mm = p.cwiseMul(fixed_lms.spacing);
        Vec3 q = chain.apply(mm);
        out.points.push_back(q.cwiseDiv(moving_spacing));
    }
    return out;
}

double bending_energy(const BsplineTransform& t, const ScalarVolume& sample_geometry) {
    double total = 0.0;
    std::size_t n = 0;
    const Vec3& gs = t.grid_spacing;
    for (int z = 0; z < sample_geometry.dims[2]; ++z)
        for (int y = 0; y < sample_geometry.dims[1]; ++y)
            for (int x = 0; x < sample_geometry.dims[0]; ++x) {
                Vec3 p = sample_geometry.physical(
                    {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
                double u[3] = {(p.x - t.grid_origin.x) / gs.x, (p.y - t.grid_origin.y) / gs.y,
                               (p.z - t.grid_origin.z) / gs.z};
                int base[3];
                double w[3][4], dw[3][4], ddw[3][4];
                bool supported = true;
                for (int a = 0; a < 3; ++a) {
                    double fl = std::floor(u[a]);
                    int i = static_cast<int>(fl);
                    if (i - 1 < 0 || i + 2 > t.grid_dims[a] - 1) {
                        supported = false;
                        break;
                    }
                    base[a] = i - 1;
                    double frac = u[a] - fl;
                    bspline_weights(frac, w[a]);
                    bspline_dweights(frac, dw[a]);
                    bspline_ddweights(frac, ddw[a]);
                }
                ++n;
                if (!supported) continue;  // zero displacement, zero curvature

                // second derivatives of each displacement component
                double dxx[3] = {0, 0, 0}, dyy[3] = {0, 0, 0}, dzz[3] = {0, 0, 0};
                double dxy[3] = {0, 0, 0}, dxz[3] = {0, 0, 0}, dyz[3] = {0, 0, 0};
                for (int c = 0; c < 4; ++c)
                    for (int b = 0; b < 4; ++b)
                        for (int a = 0; a < 4; ++a) {
                            std::size_t idx = 3 * linear_index(t.grid_dims, base[0] + a,
                                                               base[1] + b, base[2] + c);
                            double wxx = ddw[0][a] * w[1][b] * w[2][c] / (gs.x * gs.x);
                            double wyy = w[0][a] * ddw[1][b] * w[2][c] / (gs.y * gs.y);
                            double wzz = w[0][a] * w[1][b] * ddw[2][c] / (gs.z * gs.z);
                            double wxy = dw[0][a] * dw[1][b] * w[2][c] / (gs.x * gs.y);
                            double wxz = dw[0][a] * w[1][b] * dw[2][c] / (gs.x * gs.z);
                            double wyz = w[0][a] * dw[1][b] * dw[2][c] / (gs.y * gs.z);
                            for (int comp = 0; comp < 3; ++comp) {
                                double cf = t.coefficients[idx + comp];
                                dxx[comp] += wxx * cf;
                                dyy[comp] += wyy * cf;
                                dzz[comp] += wzz * cf;
                                dxy[comp] += wxy * cf;
                                dxz[comp] += wxz * cf;
                                dyz[comp] += wyz * cf;
                            }
                        }
                for (int comp = 0; comp < 3; ++comp)
                    total += dxx[comp] * dxx[comp] + dyy[comp] * dyy[comp] +
                             dzz[comp] * dzz[comp] +
                             2 * (dxy[comp] * dxy[comp] + dxz[comp] * dxz[comp] +
                                  dyz[comp] * dyz[comp]);
            }
    return n ? total / static_cast<double>(n) : 0.0;
}

namespace {

using nlohmann::json;

json affine_to_json(const AffineTransform& a) {
    json j;
    j["kind"] = "affine";
    j["matrix"] = {a.matrix[0][0], a.matrix[0][1], a.matrix[0][2],
                   a.matrix[1][0], a.matrix[1][1], a.matrix[1][2],
                   a.matrix[2][0], a.matrix[2][1], a.matrix[2][2]};
    j["translation"] = {a.translation.x, a.translation.y, a.translation.z};
    j["center"] = {a.center.x, a.center.y, a.center.z};
    return j;
}

json bspline_to_json(const BsplineTransform& b) {
    json j;
    j["kind"] = "bspline";
    j["grid_dims"] = {b.grid_dims[0], b.grid_dims[1], b.grid_dims[2]};
    j["grid_spacing"] = {b.grid_spacing.x, b.grid_spacing.y, b.grid_spacing.z};
    j["grid_origin"] = {b.grid_origin.x, b.grid_origin.y, b.grid_origin.z};
    j["coefficients"] = b.coefficients;
    return j;
}

}  // namespace

std::string chain_to_json(const TransformChain& chain) {
    json stages = json::array();
    for (const auto& s : chain.stages) {
        if (std::holds_alternative<AffineTransform>(s))
            stages.push_back(affine_to_json(std::get<AffineTransform>(s)));
        else
            stages.push_back(bspline_to_json(std::get<BsplineTransform>(s)));
    }
    json j;
    j["stages"] = stages;
    return j.dump(2);
}

TransformChain chain_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    TransformChain chain;
    for (const auto& js : j.at("stages")) {
        std::string kind = js.at("kind");
        if (kind == "affine") {
            AffineTransform a;
            auto m = js.at("matrix");
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) a.matrix[r][c] = m.at(r * 3 + c);
            auto tr = js.at("translation");
            a.translation = {tr.at(0), tr.at(1), tr.at(2)};
            auto ce = js.at("center");
            a.center = {ce.at(0), ce.at(1), ce.at(2)};
            chain.stages.push_back(a);
        } else if (kind == "bspline") {
            BsplineTransform b;
            auto gd = js.at("grid_dims");
            b.grid_dims = {gd.at(0), gd.at(1), gd.at(2)};
            auto gs = js.at("grid_spacing");
            b.grid_spacing = {gs.at(0), gs.at(1), gs.at(2)};
            auto go = js.at("grid_origin");
            b.grid_origin = {go.at(0), go.at(1), go.at(2)};
            b.coefficients = js.at("coefficients").get<std::vector<double>>();
            if (b.coefficients.size() != 3 * b.control_point_count())
                throw std::runtime_error("bspline coefficient count mismatch");
            chain.stages.push_back(b);
        } else {
            throw std::runtime_error("unknown transform kind '" + kind + "'");
        }
    }
    return chain;
}

void save_chain(const TransformChain& chain, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << chain_to_json(chain) << "\n";
}

TransformChain load_chain(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return chain_from_json(text);
}

}  // namespace mia
