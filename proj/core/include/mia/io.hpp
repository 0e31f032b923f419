#pragma once

#include <string>

#include "mia/volume.hpp"

namespace mia {

/// MetaImage (.mha/.mhd) subset. Header is ASCII `Key = Value` lines; the raw
/// little-endian payload either follows the header (ElementDataFile = LOCAL)
/// or lives in the named sibling file. Supported element types: MET_UCHAR,
/// MET_SHORT, MET_FLOAT, MET_DOUBLE. Direction cosines are fixed to identity.
ScalarVolume read_volume(const std::string& path);

/// Same header handling, but the payload is validated and stored as labels.
/// class_count is set to max(label) + 1 unless the caller passes a larger one.
LabelVolume read_label_volume(const std::string& path, int min_class_count = 0);

/// Writes MET_DOUBLE payload (bit-exact round trip through read_volume).
void write_volume(const ScalarVolume& vol, const std::string& path);

/// Writes the smallest sufficient integer type (MET_UCHAR, or MET_SHORT when
/// a label exceeds 255 after widening -- not reachable with uint8 storage).
void write_volume(const LabelVolume& vol, const std::string& path);

/// Plain-text landmarks: one `x y z` triple per line, 0-based voxel indices.
/// one_based subtracts 1 from every coordinate on load, for corpora that
/// index landmarks from 1.
LandmarkSet read_landmarks(const std::string& path, const Vec3& spacing,
                           bool one_based = false);
void write_landmarks(const LandmarkSet& lms, const std::string& path);

/// Binary PNM: P6 (8-bit RGB) and P5 (8-bit grayscale), maxval 255.
ColorImage read_image(const std::string& path);
ScalarVolume read_gray_image(const std::string& path);
void write_image(const ColorImage& img, const std::string& path);
void write_gray_image(const ScalarVolume& img, const std::string& path);

}  // namespace mia
