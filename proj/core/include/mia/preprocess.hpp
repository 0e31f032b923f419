#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mia/volume.hpp"

namespace mia {

/// Lung-CT artifact removal chain settings. k_fov/k_nofov are fixed at 3/2.
struct CtPreprocessConfig {
    int corner_window = 10;         // pixels per corner patch
    double corner_threshold = 0.05; // relative to image max
    int k_fov = 3;
    int k_nofov = 2;
    int clahe_tiles = 8;            // tiles per axis
    double clahe_clip = 2.0;        // relative clip limit, >= 1
    int morph_radius = 2;
};

struct ExtractionConfig {
    int patch_size = 32;
    double min_foreground_fraction = 0.25;
};

struct BiasFieldConfig {
    int polynomial_order = 3;  // total degree, in [1, 4]
    double epsilon = 1e-6;     // floor added before the log
};

/// Otsu threshold over a 256-bin histogram of [min, max]. The threshold is
/// the lower edge of the best split bin (lowest bin on ties); the mask keeps
/// values strictly above it. Throws "degenerate histogram" on constant input.
std::pair<double, LabelVolume> otsu_threshold(const ScalarVolume& vol);

/// (v - min) / (max - min) with the statistics taken over the mask when one
/// is given, clamped to [0, 1]. Constant range maps to all zeros.
ScalarVolume minmax_normalize(const ScalarVolume& vol, const LabelVolume* mask = nullptr);

/// Log-domain polynomial bias-field surrogate: least-squares fit of a 3D
/// polynomial to log(v + eps) over masked voxels. Returns (corrected, field);
/// corrected preserves the masked mean and equals the input outside the mask.
std::pair<ScalarVolume, ScalarVolume> correct_bias(const ScalarVolume& vol,
                                                   const LabelVolume& mask,
                                                   const BiasFieldConfig& cfg = {});

struct SlicePair {
    ScalarVolume image;   // dims {x, y, 1}
    LabelVolume labels;   // empty data when no labels were supplied
    int slice_index = 0;
};

/// Axial slices whose non-zero fraction meets the threshold, ascending order.
std::vector<SlicePair> extract_slices(const ScalarVolume& vol, const LabelVolume* labels,
                                      const ExtractionConfig& cfg = {});

/// Non-overlapping tiles from (0,0), row-major, incomplete edge tiles
/// dropped, kept when the non-zero fraction meets the threshold.
std::vector<ScalarVolume> extract_patches(const ScalarVolume& slice,
                                          const ExtractionConfig& cfg = {});

/// FOV present iff >= 3 corner windows have mean intensity below
/// corner_threshold * max. Returns (has_fov, k).
std::pair<bool, int> detect_fov(const ScalarVolume& image, const CtPreprocessConfig& cfg = {});

struct KmeansResult {
    LabelVolume labels;             // renumbered so centroids ascend
    std::vector<double> centroids;  // in original intensity units, ascending
};

/// Lloyd k-means on inverted intensities (max - v), k-means++ start, run to
/// an assignment fixpoint (or 300 iterations).
KmeansResult kmeans_segment(const ScalarVolume& image, int k, std::uint64_t seed);

struct ChestMask {
    LabelVolume filled;
    std::vector<std::pair<int, int>> chest_contour;  // Moore-neighbor trace, (x, y)
};

/// Largest 8-connected component, interior holes filled, closed with a disk
/// of cfg.morph_radius, boundary traced on the result.
ChestMask fill_chest_holes(const LabelVolume& mask, const CtPreprocessConfig& cfg = {});

/// out = image ⊙ filled
ScalarVolume remove_gantry(const ScalarVolume& image, const LabelVolume& filled);

/// Contrast-limited adaptive histogram equalization on a 256-level
/// quantization, per-tile clipped histograms, bilinear blending between tile
/// centers, output rescaled to the input range.
ScalarVolume clahe(const ScalarVolume& image, const CtPreprocessConfig& cfg = {});

}  // namespace mia
