#pragma once

#include <cstdint>
#include <vector>

#include "mia/transform.hpp"
#include "mia/volume.hpp"

namespace mia {

/// Nested-ellipsoid brain phantom. Class radius fractions are relative to the
/// head half-extent; intensities are generator parameters in [0,1].
struct BrainPhantomConfig {
    Dims3 dims{64, 64, 64};
    double mean_csf = 0.25, mean_gm = 0.55, mean_wm = 0.85;
    double noise_sigma = 0.02;
    int bias_order = 2;
    double bias_amplitude = 0.10;
    double head_frac = 0.84;  // head ellipsoid semi-axis fraction of the half-extent
    double gm_frac = 0.60;    // CSF/GM interface
    double wm_frac = 0.42;    // GM/WM interface
    std::uint64_t seed = 0;
};

struct BrainPhantom {
    ScalarVolume intensity;
    LabelVolume labels;  // 0 background, 1 CSF, 2 GM, 3 WM
    ScalarVolume bias;
};

BrainPhantom gen_brain_phantom(const BrainPhantomConfig& cfg);

struct AtlasPopulationConfig {
    int members = 5;
    double max_rotation_deg = 5.0;
    double max_translation_voxels = 5.0;
    std::uint64_t seed = 0;
};

struct PopulationMember {
    ScalarVolume intensity;
    LabelVolume labels;
    TransformChain true_chain;  // maps member space onto base space
};

/// Members are the base phantom resampled under random small affines, each
/// with its ground-truth chain recorded.
std::vector<PopulationMember> gen_atlas_population(const BrainPhantom& base,
                                                   const AtlasPopulationConfig& cfg);

/// 2D chest slice with a bright body ellipse, dark lungs, dark FOV corners
/// and a bright gantry ring outside the body.
struct LungSliceConfig {
    int size = 256;
    double body_a = 0.62, body_b = 0.50;      // body semi-axes, fraction of half-size
    double lung_a = 0.20, lung_b = 0.28;      // per-lung semi-axes
    double lung_offset = 0.26;                // lung center x offset, fraction of half-size
    double ring_radius = 0.88;                // fraction of half-size
    double ring_thickness_px = 4.0;
    double background_level = 0.02, lung_level = 0.12, body_level = 0.55, ring_level = 0.85;
    double noise_sigma = 0.004;
    std::uint64_t seed = 0;
};

struct LungSlice {
    ScalarVolume image;
    LabelVolume body;   // chest region including lungs
    LabelVolume lungs;
    LabelVolume ring;
};

LungSlice gen_lung_slice(const LungSliceConfig& cfg);

struct LesionClassKnobs {
    double hue_deg = 20.0;       // lesion hue center
    double border_amp = 0.05;    // boundary irregularity amplitude
    double texture_freq = 0.25;  // radians per pixel
};

struct LesionDatasetConfig {
    std::vector<int> counts = {40, 30, 10};             // per class
    int image_size = 128;
    // hue centers sit away from the 0/360 wrap so per-image mean hue is stable
    std::vector<LesionClassKnobs> knobs = {{30.0, 0.02, 0.15},
                                           {90.0, 0.10, 0.40},
                                           {150.0, 0.20, 0.70}};
    double hue_jitter_deg = 4.0;
    double noise = 3.0;  // per-channel byte noise
    std::uint64_t seed = 0;
};

struct LesionDataset {
    std::vector<ColorImage> images;
    std::vector<LabelVolume> masks;
    std::vector<int> labels;
};

LesionDataset gen_lesion_dataset(const LesionDatasetConfig& cfg);

/// Asymmetric random-blob volume (Gaussian bumps over a gradient). Unlike the
/// nested-ellipsoid brain phantom this has no rotational symmetry, so it pins
/// down every affine degree of freedom in registration tests.
ScalarVolume gen_structured_volume(int size, std::uint64_t seed);

}  // namespace mia
