#include "mia/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mia/rng.hpp"

namespace mia {

namespace {
constexpr double kPi = 3.14159265358979323846;

// slight axis anisotropy so the phantom is not rotation-symmetric
constexpr double kAxisScale[3] = {1.0, 0.92, 0.85};
}  // namespace

BrainPhantom gen_brain_phantom(const BrainPhantomConfig& cfg) {
    if (!(cfg.wm_frac < cfg.gm_frac && cfg.gm_frac < cfg.head_frac))
        throw std::invalid_argument("radius fractions must increase wm < gm < head");
    if (!(cfg.mean_csf < cfg.mean_gm && cfg.mean_gm < cfg.mean_wm))
        throw std::invalid_argument("class means must be strictly increasing");
    if (cfg.noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");

    BrainPhantom out;
    out.intensity = make_volume(cfg.dims);
    out.labels = make_labels(cfg.dims, 4);
    out.bias = make_volume(cfg.dims, {1, 1, 1}, {0, 0, 0}, 1.0);

    Rng rng(cfg.seed);

    // bias field: random polynomial over normalized coords, scaled to ±amplitude
    std::vector<double> coeffs;
    if (cfg.bias_amplitude > 0) {
        for (int i = 0; i <= cfg.bias_order; ++i)
            for (int j = 0; j + i <= cfg.bias_order; ++j)
                for (int k = 0; k + j + i <= cfg.bias_order; ++k) {
                    if (i == 0 && j == 0 && k == 0) {
                        coeffs.push_back(0.0);
                        continue;
                    }
                    coeffs.push_back(rng.uniform(-1.0, 1.0));
                }
    }

    auto coord = [&](int i, int d) {
        return cfg.dims[d] > 1 ? 2.0 * i / (cfg.dims[d] - 1) - 1.0 : 0.0;
    };
    auto poly = [&](double x, double y, double z) {
        double v = 0.0;
        std::size_t t = 0;
        for (int i = 0; i <= cfg.bias_order; ++i)
            for (int j = 0; j + i <= cfg.bias_order; ++j)
                for (int k = 0; k + j + i <= cfg.bias_order; ++k)
                    v += coeffs[t++] * std::pow(x, i) * std::pow(y, j) * std::pow(z, k);
        return v;
    };

    double poly_max = 0.0;
    if (cfg.bias_amplitude > 0) {
        for (int z = 0; z < cfg.dims[2]; ++z)
            for (int y = 0; y < cfg.dims[1]; ++y)
                for (int x = 0; x < cfg.dims[0]; ++x)
                    poly_max = std::max(poly_max,
                                        std::abs(poly(coord(x, 0), coord(y, 1), coord(z, 2))));
        if (poly_max <= 0) poly_max = 1.0;
    }

    const double half[3] = {(cfg.dims[0] - 1) / 2.0, (cfg.dims[1] - 1) / 2.0,
                            (cfg.dims[2] - 1) / 2.0};
    const double means[4] = {0.0, cfg.mean_csf, cfg.mean_gm, cfg.mean_wm};

    for (int z = 0; z < cfg.dims[2]; ++z)
        for (int y = 0; y < cfg.dims[1]; ++y)
            for (int x = 0; x < cfg.dims[0]; ++x) {
                double dx = (x - half[0]) / (half[0] * kAxisScale[0]);
                double dy = (y - half[1]) / (half[1] * kAxisScale[1]);
                double dz = (z - half[2]) / (half[2] * kAxisScale[2]);
                double q = std::sqrt(dx * dx + dy * dy + dz * dz);

                int label = 0;
                if (q <= cfg.wm_frac)
                    label = 3;
                else if (q <= cfg.gm_frac)
                    label = 2;
                else if (q <= cfg.head_frac)
                    label = 1;

                std::size_t idx = out.intensity.index(x, y, z);
                out.labels.data[idx] = static_cast<std::uint8_t>(label);

                double v = means[label];
                if (cfg.noise_sigma > 0) v += rng.normal(0.0, cfg.noise_sigma);
                double field = 1.0;
                if (cfg.bias_amplitude > 0)
                    field = 1.0 + cfg.bias_amplitude *
                                      poly(coord(x, 0), coord(y, 1), coord(z, 2)) / poly_max;
                out.bias.data[idx] = field;
                out.intensity.data[idx] = v * field;
            }
    return out;
}

std::vector<PopulationMember> gen_atlas_population(const BrainPhantom& base,
                                                   const AtlasPopulationConfig& cfg) {
    if (cfg.members < 1) throw std::invalid_argument("members must be >= 1");
    Rng rng(cfg.seed);
    Vec3 center = base.intensity.physical({(base.intensity.dims[0] - 1) / 2.0,
                                           (base.intensity.dims[1] - 1) / 2.0,
                                           (base.intensity.dims[2] - 1) / 2.0});
    std::vector<PopulationMember> members;
    members.reserve(cfg.members);
    for (int m = 0; m < cfg.members; ++m) {
        double rx = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
        double ry = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
        double rz = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
        AffineTransform a = AffineTransform::rotation_deg(rx, ry, rz, center);
        for (int d = 0; d < 3; ++d)
            a.translation[d] = rng.uniform(-cfg.max_translation_voxels, cfg.max_translation_voxels) *
                               base.intensity.spacing[d];

        PopulationMember member;
        member.true_chain.stages.push_back(a);
        member.intensity = resample(base.intensity, member.true_chain, base.intensity,
                                    Interp::Linear);
        LabelVolume geom = make_labels(base.labels.dims, base.labels.class_count,
                                       base.labels.spacing, base.labels.origin);
        member.labels = resample_labels(base.labels, member.true_chain, geom);
        members.push_back(std::move(member));
    }
    return members;
}

LungSlice gen_lung_slice(const LungSliceConfig& cfg) {
    if (cfg.size < 32) throw std::invalid_argument("slice size too small");
    if (cfg.ring_radius * cfg.size / 2.0 <=
        std::max(cfg.body_a, cfg.body_b) * cfg.size / 2.0)
        throw std::invalid_argument("ring must lie outside the body ellipse");

    LungSlice out;
    out.image = make_image2d(cfg.size, cfg.size);
    out.body = make_labels({cfg.size, cfg.size, 1}, 2);
    out.lungs = make_labels({cfg.size, cfg.size, 1}, 2);
    out.ring = make_labels({cfg.size, cfg.size, 1}, 2);

    Rng rng(cfg.seed);
    const double half = (cfg.size - 1) / 2.0;
    for (int y = 0; y < cfg.size; ++y)
        for (int x = 0; x < cfg.size; ++x) {
            double dx = (x - half) / half, dy = (y - half) / half;
            double r = std::sqrt(dx * dx + dy * dy);

            double body_q = std::sqrt((dx / cfg.body_a) * (dx / cfg.body_a) +
                                      (dy / cfg.body_b) * (dy / cfg.body_b));
            double lung_l = std::sqrt(std::pow((dx + cfg.lung_offset) / cfg.lung_a, 2) +
                                      std::pow(dy / cfg.lung_b, 2));
            double lung_r = std::sqrt(std::pow((dx - cfg.lung_offset) / cfg.lung_a, 2) +
                                      std::pow(dy / cfg.lung_b, 2));

            double ring_half_w = cfg.ring_thickness_px / 2.0 / half;
            bool in_ring = std::abs(r - cfg.ring_radius) <= ring_half_w;
            bool in_body = body_q <= 1.0;
            bool in_lung = in_body && (lung_l <= 1.0 || lung_r <= 1.0);

            double level = cfg.background_level;
            if (in_ring)
                level = cfg.ring_level;
            else if (in_lung)
                level = cfg.lung_level;
            else if (in_body)
                level = cfg.body_level;

            double v = level + (cfg.noise_sigma > 0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0);
            std::size_t idx = out.image.index(x, y, 0);
            out.image.data[idx] = std::clamp(v, 0.0, 1.0);
            out.body.data[idx] = in_body ? 1 : 0;
            out.lungs.data[idx] = in_lung ? 1 : 0;
            out.ring.data[idx] = in_ring ? 1 : 0;
        }
    return out;
}

namespace {

void hsv_to_rgb(double h_deg, double s, double v, double rgb[3]) {
    h_deg = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0);
    double c = v * s;
    double hp = h_deg / 60.0;
    double xx = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = xx;
    } else if (hp < 2) {
        r = xx; g = c;
    } else if (hp < 3) {
        g = c; b = xx;
    } else if (hp < 4) {
        g = xx; b = c;
    } else if (hp < 5) {
        r = xx; b = c;
    } else {
        r = c; b = xx;
    }
    double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

}  // namespace

ScalarVolume gen_structured_volume(int size, std::uint64_t seed) {
    if (size < 8) throw std::invalid_argument("structured volume size too small");
    ScalarVolume v = make_volume({size, size, size});
    Rng rng(seed);
    struct Blob {
        double cx, cy, cz, w, a;
    };
    std::vector<Blob> blobs;
    for (int i = 0; i < 30; ++i)
        blobs.push_back({rng.uniform(0.15, 0.85) * size, rng.uniform(0.15, 0.85) * size,
                         rng.uniform(0.15, 0.85) * size, rng.uniform(2.5, 7.0),
                         rng.uniform(0.3, 1.0)});
    for (int z = 0; z < size; ++z)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double s = 0.0;
                for (const auto& b : blobs) {
                    double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy) +
                                (z - b.cz) * (z - b.cz);
                    s += b.a * std::exp(-d2 / (2 * b.w * b.w));
                }
                v.at(x, y, z) = s + 0.001 * x + 0.002 * rng.uniform();
            }
    return v;
}

LesionDataset gen_lesion_dataset(const LesionDatasetConfig& cfg) {
    if (cfg.counts.empty() || cfg.counts.size() > cfg.knobs.size())
        throw std::invalid_argument("counts/knobs mismatch");
    for (int c : cfg.counts)
        if (c < 4) throw std::invalid_argument("counts must be >= 4 per class");
    for (std::size_t a = 0; a < cfg.counts.size(); ++a)
        for (std::size_t b = a + 1; b < cfg.counts.size(); ++b)
            if (cfg.knobs[a].hue_deg == cfg.knobs[b].hue_deg &&
                cfg.knobs[a].border_amp == cfg.knobs[b].border_amp &&
                cfg.knobs[a].texture_freq == cfg.knobs[b].texture_freq)
                throw std::invalid_argument("class knobs must be pairwise distinct");

    LesionDataset out;
    Rng rng(cfg.seed);
    const int n = cfg.image_size;
    const double half = (n - 1) / 2.0;

    for (std::size_t cls = 0; cls < cfg.counts.size(); ++cls) {
        const LesionClassKnobs& knobs = cfg.knobs[cls];
        for (int s = 0; s < cfg.counts[cls]; ++s) {
            double hue = knobs.hue_deg + rng.normal(0.0, cfg.hue_jitter_deg);
            double lesion_s = 0.55 + rng.uniform(-0.05, 0.05);
            double lesion_v = 0.42 + rng.uniform(-0.05, 0.05);
            double r0 = (0.28 + rng.uniform(-0.04, 0.04)) * n;
            double aspect = 1.0 + rng.uniform(0.0, 0.35);
            double tilt = rng.uniform(0.0, kPi);
            double a3 = rng.uniform(0.5, 1.0), p3 = rng.uniform(0.0, 2 * kPi);
            double a5 = rng.uniform(0.5, 1.0), p5 = rng.uniform(0.0, 2 * kPi);
            double tex_phase_x = rng.uniform(0.0, 2 * kPi);
            double tex_phase_y = rng.uniform(0.0, 2 * kPi);
            double cx = half + rng.uniform(-0.05, 0.05) * n;
            double cy = half + rng.uniform(-0.05, 0.05) * n;

            ColorImage img;
            img.width = n;
            img.height = n;
            img.data.resize(static_cast<std::size_t>(n) * n * 3);
            LabelVolume mask = make_labels({n, n, 1}, 2);

            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    double dx = x - cx, dy = y - cy;
                    double ct = std::cos(tilt), st = std::sin(tilt);
                    double ex = (ct * dx + st * dy);
                    double ey = (-st * dx + ct * dy) * aspect;
                    double rr = std::sqrt(ex * ex + ey * ey);
                    double theta = std::atan2(ey, ex);
                    double boundary = r0 * (1.0 + knobs.border_amp *
                                                      (a3 * std::sin(3 * theta + p3) +
                                                       a5 * std::sin(5 * theta + p5)));
                    bool inside = rr <= boundary;

                    double rgb[3];
                    if (inside) {
                        double tex = 1.0 + 0.12 *
                                               std::sin(knobs.texture_freq * x + tex_phase_x) *
                                               std::sin(knobs.texture_freq * y + tex_phase_y);
                        hsv_to_rgb(hue, lesion_s, std::clamp(lesion_v * tex, 0.0, 1.0), rgb);
                    } else {
                        hsv_to_rgb(22.0, 0.24, 0.90, rgb);  // skin tone
                    }
                    for (int c = 0; c < 3; ++c) {
                        double byte = rgb[c] * 255.0 +
                                      (cfg.noise > 0 ? rng.normal(0.0, cfg.noise) : 0.0);
                        img.channel(x, y, c) = static_cast<std::uint8_t>(
                            std::lround(std::clamp(byte, 0.0, 255.0)));
                    }
                    mask.at(x, y, 0) = inside ? 1 : 0;
                }
            out.images.push_back(std::move(img));
            out.masks.push_back(std::move(mask));
            out.labels.push_back(static_cast<int>(cls));
        }
    }
    return out;
}

}  // namespace mia
