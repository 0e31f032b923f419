#pragma once

#include <string>
#include <vector>

#include "mia/registration.hpp"
#include "mia/volume.hpp"

namespace mia {

/// Tissue classes follow the table convention: background 0, CSF 1, GM 2, WM 3.
inline constexpr int kTissueClasses = 4;

struct TrainingPair {
    ScalarVolume intensity;
    LabelVolume labels;
    std::string id;
};

/// Per-class prior volumes on the reference grid plus the mean-intensity
/// accumulator and the argmax (topological) label map.
struct ProbabilisticAtlas {
    std::vector<ScalarVolume> class_priors;  // CSF, GM, WM
    ScalarVolume mean_intensity;
    LabelVolume topological;
    int contributing_count = 0;
};

/// Per-class intensity PDFs over normalized [0,1] intensities.
struct TissueModel {
    int bins = 64;
    std::vector<std::vector<double>> pdfs;  // [class-1][bin], classes 1..3
    double bin_width() const { return 1.0 / bins; }
    int bin_of(double v) const;
};

struct AtlasEntry {
    ScalarVolume registered_intensity;
    LabelVolume propagated_labels;
    std::string source_id;
};

/// Registers every training pair onto the reference and aggregates priors,
/// the normalized mean intensity, and the topological argmax map.
ProbabilisticAtlas build_probabilistic_atlas(const ScalarVolume& reference,
                                             const std::vector<TrainingPair>& training,
                                             const std::vector<ParameterMap>& maps,
                                             std::uint64_t seed);

/// Aggregation step alone, for callers that already hold registered entries.
ProbabilisticAtlas aggregate_atlas(const ScalarVolume& reference,
                                   const std::vector<AtlasEntry>& entries);

/// Class-conditional intensity histograms from already-normalized inputs.
/// Empty classes fall back to a uniform PDF (with a stderr warning).
TissueModel build_tissue_models(const std::vector<TrainingPair>& atlas_inputs, int bins = 64);

/// Register one training image onto the target and carry its labels along.
AtlasEntry segment_label_propagation(const ScalarVolume& target, const TrainingPair& training,
                                     const std::vector<ParameterMap>& maps, std::uint64_t seed);

/// argmax_c PDF_c(intensity) inside the mask; ties to the lowest class.
LabelVolume segment_tissue_model(const ScalarVolume& target_norm, const TissueModel& model,
                                 const LabelVolume& brain_mask);

/// argmax_c prior_c(x) * PDF_c(intensity(x)); zero posterior everywhere -> 0.
LabelVolume segment_posterior(const ScalarVolume& target_norm, const ProbabilisticAtlas& atlas,
                              const TissueModel& model);

/// Per-voxel most frequent propagated label, ties to the lowest class index.
LabelVolume fuse_majority(const std::vector<AtlasEntry>& entries);

/// Votes weighted by each atlas's MI with the target over the target
/// foreground (Otsu mask); all-zero weights fall back to majority voting.
LabelVolume fuse_mi_weighted(const std::vector<AtlasEntry>& entries, const ScalarVolume& target,
                             int mi_bins = 64);

/// Directory persistence: prior_csf/gm/wm.mha, mean.mha, topological.mha and
/// an atlas.json manifest.
void save_atlas(const ProbabilisticAtlas& atlas, const std::string& dir);
ProbabilisticAtlas load_atlas(const std::string& dir);

/// TissueModel persistence as JSON (bin edges + per-class PDFs).
std::string tissue_model_to_json(const TissueModel& model);
TissueModel tissue_model_from_json(const std::string& text);

}  // namespace mia
