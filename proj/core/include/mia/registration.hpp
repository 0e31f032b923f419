#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mia/transform.hpp"
#include "mia/volume.hpp"

namespace mia {

enum class Metric { MSE, NCC, MI };
enum class TransformKind { Affine, Bspline };

std::string metric_name(Metric m);
Metric metric_from_name(const std::string& name);

/// One registration stage: transform model, similarity metric, pyramid and
/// optimizer settings. Costs are oriented for minimization (MSE, -NCC, -MI).
struct ParameterMap {
    TransformKind transform_kind = TransformKind::Affine;
    Metric metric = Metric::MSE;
    int pyramid_levels = 3;
    std::vector<int> pyramid_schedule = {4, 2, 1};   // non-increasing, ends at 1
    std::vector<int> iterations_per_level = {80, 50, 30};
    double grid_spacing_mm = 16.0;                    // bspline stages only
    int mi_bins = 64;
    double bending_weight = 0.0;
    double step_init = 4.0;
    double step_min = 0.005;
    bool sampler_full = true;
    std::size_t sample_count = 8192;                  // random sampler only
    std::uint64_t sampler_seed = 0;

    void validate() const;
};

std::string parameter_map_to_json(const ParameterMap& map);
ParameterMap parameter_map_from_json(const std::string& json_text);
std::string parameter_maps_to_json(const std::vector<ParameterMap>& maps);
std::vector<ParameterMap> parameter_maps_from_json(const std::string& json_text);

/// Named stage sequences mirroring the parameter-file strategy: plain affine
/// runs, single B-spline presets, and the combined affine + B-spline +
/// fine-grid B-spline sequence.
class PresetLibrary {
  public:
    static const std::vector<std::string>& names();
    static bool has(const std::string& name);
    static std::vector<ParameterMap> get(const std::string& name);
};

/// Lower-is-better similarity: MSE, or -NCC / -MI.
double similarity(const ScalarVolume& fixed, const ScalarVolume& warped, Metric metric,
                  int mi_bins = 64, const LabelVolume* mask = nullptr);

struct RegistrationResult {
    TransformChain chain;
    std::vector<double> per_stage_costs;  // final cost of each stage at full resolution
};

/// Sequential stage optimization: Gaussian pyramid per stage, central
/// finite-difference gradient descent with step halving, monotone acceptance
/// (a step is taken only when it lowers the cost).
RegistrationResult register_images(const ScalarVolume& fixed, const ScalarVolume& moving,
                                   const std::vector<ParameterMap>& maps, std::uint64_t seed);

}  // namespace mia
