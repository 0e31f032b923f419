#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mia/volume.hpp"

namespace mia {

struct GlcmConfig {
    std::vector<int> distances = {2, 5, 7, 10, 15};
    std::vector<int> angles = {0, 45, 90, 135};  // degrees
    int levels = 32;
    bool symmetric = true;
    bool normalized = true;
};

struct LbpConfig {
    std::vector<int> radii = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    int points_for(int radius) const { return 8 * radius; }  // P = 8·radius
    int bins_for(int radius) const { return 8 * radius + 2; }  // uniform mapping
    int total_bins() const {
        int t = 0;
        for (int r : radii) t += bins_for(r);
        return t;
    }
};

struct FeatureVector {
    std::vector<double> values;
    std::vector<std::string> names;
    int label = -1;
};

struct AugmentOp {
    enum Kind { CentralCrop, Rescale, Contrast, Zoom, FlipH, FlipV };
    Kind kind = FlipH;
    double a = 1.0;  // fraction / factor / gain / zoom lower bound
    double b = 1.0;  // zoom upper bound
};

struct AugmentSpec {
    std::vector<AugmentOp> ops;
    std::uint64_t seed = 0;
    int copies = 1;
};

/// Hexcone RGB -> HSV with all channels scaled to 0..255 (H wraps at 255≡360°).
ColorImage rgb_to_hsv(const ColorImage& img);

/// 42 values: for each of R,G,B,H,S,V over masked pixels — mean, sample std,
/// min, max, skewness m3/m2^1.5, excess kurtosis m4/m2²-3, and base-2 entropy
/// of the 256-bin histogram. Zero-variance channels report skew/kurtosis 0.
std::vector<double> color_stats(const ColorImage& img, const LabelVolume& mask);

/// Gaussian blur, Sobel gradients, 4-direction non-maximum suppression,
/// double-threshold hysteresis (8-connected). low/high are fractions of the
/// maximum gradient magnitude.
LabelVolume canny(const ScalarVolume& gray, double sigma, double low, double high);

/// 11 values: area px², Moore-contour perimeter (diagonals √2), circularity
/// 4πA/P² (clamped to 1.05), compactness P²/A, and 7 log-scaled Hu moments
/// sign(h)·log10(|h|+1e-30). Multi-component masks use the largest component.
std::vector<double> shape_features(const LabelVolume& mask);

/// 80 values (5 distances × 4 angles × {contrast, homogeneity, energy,
/// correlation}), distance-major, from symmetric normalized co-occurrence
/// matrices over masked pixel pairs quantized to cfg.levels.
std::vector<double> glcm_features(const ScalarVolume& gray, const LabelVolume& mask,
                                  const GlcmConfig& cfg = {});

/// 378 values: per radius r, P=8r bilinear circular samples, bit set when
/// neighbor >= center, uniform mapping (P+1 uniform bins + 1 non-uniform),
/// histogram normalized over eligible masked pixels.
std::vector<double> lbp_features(const ScalarVolume& gray, const LabelVolume& mask,
                                 const LbpConfig& cfg = {});

/// color(42) ++ shape(11) ++ glcm(80, on 0.299R+0.587G+0.114B luminance)
/// ++ lbp(378) = 511 named values.
FeatureVector extract_feature_vector(const ColorImage& img, const LabelVolume& lesion_mask);

/// Otsu split, darker/interior side kept, largest component, holes filled.
LabelVolume lesion_mask_from_image(const ColorImage& img);

std::vector<ColorImage> augment(const ColorImage& img, const AugmentSpec& spec);

/// Luminance image (0..255 doubles) used for the texture features.
ScalarVolume luminance(const ColorImage& img);

}  // namespace mia
