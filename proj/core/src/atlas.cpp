#include "mia/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "mia/io.hpp"
#include "mia/preprocess.hpp"
#include "mia/rng.hpp"

namespace mia {

int TissueModel::bin_of(double v) const {
    int b = static_cast<int>(v * bins);
    return std::clamp(b, 0, bins - 1);
}

ProbabilisticAtlas build_probabilistic_atlas(const ScalarVolume& reference,
                                             const std::vector<TrainingPair>& training,
                                             const std::vector<ParameterMap>& maps,
                                             std::uint64_t seed) {
    if (training.empty()) throw std::invalid_argument("no training pairs");
    std::vector<AtlasEntry> entries;
    entries.reserve(training.size());
    Rng seeder(seed);
    for (const auto& pair : training) {
        try {
            entries.push_back(segment_label_propagation(reference, pair, maps, seeder.fork_seed()));
        } catch (const std::exception& e) {
            throw std::runtime_error("registration failed for case '" + pair.id +
                                     "': " + e.what());
        }
    }
    return aggregate_atlas(reference, entries);
}

ProbabilisticAtlas aggregate_atlas(const ScalarVolume& reference,
                                   const std::vector<AtlasEntry>& entries) {
    if (entries.empty()) throw std::invalid_argument("no atlas entries");

    ProbabilisticAtlas atlas;
    atlas.contributing_count = static_cast<int>(entries.size());
    for (int c = 1; c < kTissueClasses; ++c)
        atlas.class_priors.push_back(make_volume(reference.dims, reference.spacing,
                                                 reference.origin));
    atlas.mean_intensity = make_volume(reference.dims, reference.spacing, reference.origin);
    std::vector<double> tissue_contributors(reference.data.size(), 0.0);

    for (const auto& entry : entries) {
        ScalarVolume norm = minmax_normalize(entry.registered_intensity);
        for (std::size_t i = 0; i < reference.data.size(); ++i) {
            atlas.mean_intensity.data[i] += norm.data[i];
            int label = entry.propagated_labels.data[i];
            if (label >= 1 && label < kTissueClasses) {
                tissue_contributors[i] += 1.0;
                atlas.class_priors[label - 1].data[i] += 1.0;
            }
        }
    }

    for (std::size_t i = 0; i < reference.data.size(); ++i) {
        atlas.mean_intensity.data[i] /= entries.size();
        if (tissue_contributors[i] > 0)
            for (auto& prior : atlas.class_priors) prior.data[i] /= tissue_contributors[i];
    }

    atlas.topological = make_labels(reference.dims, kTissueClasses, reference.spacing,
                                    reference.origin);
    for (std::size_t i = 0; i < reference.data.size(); ++i) {
        if (tissue_contributors[i] == 0) continue;
        int best = 1;
        double best_p = atlas.class_priors[0].data[i];
        for (int c = 2; c < kTissueClasses; ++c)
            if (atlas.class_priors[c - 1].data[i] > best_p) {
                best_p = atlas.class_priors[c - 1].data[i];
                best = c;
            }
        atlas.topological.data[i] = static_cast<std::uint8_t>(best);
    }
    return atlas;
}

TissueModel build_tissue_models(const std::vector<TrainingPair>& atlas_inputs, int bins) {
    if (bins < 2) throw std::invalid_argument("bins must be >= 2");
    TissueModel model;
    model.bins = bins;
    model.pdfs.assign(kTissueClasses - 1, std::vector<double>(bins, 0.0));
    std::vector<double> totals(kTissueClasses - 1, 0.0);

    bool any = false;
    for (const auto& pair : atlas_inputs) {
        if (pair.intensity.data.size() != pair.labels.data.size())
            throw std::invalid_argument("intensity/label size mismatch");
        for (std::size_t i = 0; i < pair.intensity.data.size(); ++i) {
            int label = pair.labels.data[i];
            if (label < 1 || label >= kTissueClasses) continue;
            any = true;
            model.pdfs[label - 1][model.bin_of(pair.intensity.data[i])] += 1.0;
            totals[label - 1] += 1.0;
        }
    }
    if (!any) throw std::runtime_error("no labeled voxels for tissue models");

    for (int c = 0; c < kTissueClasses - 1; ++c) {
        if (totals[c] == 0.0) {
            std::cerr << "warning: tissue class " << c + 1
                      << " has no voxels, using a uniform PDF\n";
            std::fill(model.pdfs[c].begin(), model.pdfs[c].end(), 1.0 / bins);
        } else {
            for (double& v : model.pdfs[c]) v /= totals[c];
        }
    }
    return model;
}

AtlasEntry segment_label_propagation(const ScalarVolume& target, const TrainingPair& training,
                                     const std::vector<ParameterMap>& maps, std::uint64_t seed) {
    RegistrationResult reg = register_images(target, training.intensity, maps, seed);
    AtlasEntry entry;
    entry.source_id = training.id;
    entry.registered_intensity = resample(training.intensity, reg.chain, target, Interp::Linear);
    LabelVolume target_geom = make_labels(target.dims, training.labels.class_count,
                                          target.spacing, target.origin);
    entry.propagated_labels = resample_labels(training.labels, reg.chain, target_geom);
    return entry;
}

LabelVolume segment_tissue_model(const ScalarVolume& target_norm, const TissueModel& model,
                                 const LabelVolume& brain_mask) {
    if (!brain_mask.matches_geometry(target_norm))
        throw std::invalid_argument("mask geometry mismatch");
    LabelVolume out = make_labels(target_norm.dims, kTissueClasses, target_norm.spacing,
                                  target_norm.origin);
    for (std::size_t i = 0; i < target_norm.data.size(); ++i) {
        if (!brain_mask.data[i]) continue;
        int bin = model.bin_of(target_norm.data[i]);
        int best = 1;
        double best_p = model.pdfs[0][bin];
        for (int c = 2; c < kTissueClasses; ++c)
            if (model.pdfs[c - 1][bin] > best_p) {
                best_p = model.pdfs[c - 1][bin];
                best = c;
            }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

LabelVolume segment_posterior(const ScalarVolume& target_norm, const ProbabilisticAtlas& atlas,
                              const TissueModel& model) {
    if (atlas.mean_intensity.dims != target_norm.dims)
        throw std::invalid_argument("atlas is not on the target grid");
    LabelVolume out = make_labels(target_norm.dims, kTissueClasses, target_norm.spacing,
                                  target_norm.origin);
    for (std::size_t i = 0; i < target_norm.data.size(); ++i) {
        int bin = model.bin_of(target_norm.data[i]);
        int best = 0;
        double best_p = 0.0;
        for (int c = 1; c < kTissueClasses; ++c) {
            double p = atlas.class_priors[c - 1].data[i] * model.pdfs[c - 1][bin];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

namespace {

LabelVolume fuse_weighted(const std::vector<AtlasEntry>& entries,
                          const std::vector<double>& weights) {
    const auto& geom = entries.front().propagated_labels;
    LabelVolume out = make_labels(geom.dims, kTissueClasses, geom.spacing, geom.origin);
    std::vector<double> votes(kTissueClasses);
    for (std::size_t i = 0; i < geom.data.size(); ++i) {
        std::fill(votes.begin(), votes.end(), 0.0);
        for (std::size_t e = 0; e < entries.size(); ++e) {
            int label = entries[e].propagated_labels.data[i];
            if (label >= 0 && label < kTissueClasses) votes[label] += weights[e];
        }
        int best = 0;
        double best_v = votes[0];
        for (int c = 1; c < kTissueClasses; ++c)
            if (votes[c] > best_v + 1e-12) {
                best_v = votes[c];
                best = c;
            }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

void check_entries(const std::vector<AtlasEntry>& entries) {
    if (entries.empty()) throw std::invalid_argument("no atlas entries");
    for (const auto& e : entries)
        if (!e.propagated_labels.same_grid(entries.front().propagated_labels))
            throw std::invalid_argument("geometry mismatch between atlas entries");
}

}  // namespace

LabelVolume fuse_majority(const std::vector<AtlasEntry>& entries) {
    check_entries(entries);
    return fuse_weighted(entries, std::vector<double>(entries.size(), 1.0));
}

LabelVolume fuse_mi_weighted(const std::vector<AtlasEntry>& entries, const ScalarVolume& target,
                             int mi_bins) {
    check_entries(entries);
    auto [threshold, foreground] = otsu_threshold(target);
    (void)threshold;

    std::vector<double> weights(entries.size(), 0.0);
    double total = 0.0;
    for (std::size_t e = 0; e < entries.size(); ++e) {
        double mi = -similarity(target, entries[e].registered_intensity, Metric::MI, mi_bins,
                                &foreground);
        weights[e] = std::max(mi, 0.0);
        total += weights[e];
    }
    if (total <= 0.0) {
        std::cerr << "warning: all MI weights are zero, falling back to majority voting\n";
        return fuse_majority(entries);
    }
    for (double& w : weights) w /= total;
    return fuse_weighted(entries, weights);
}

void save_atlas(const ProbabilisticAtlas& atlas, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const char* prior_names[] = {"prior_csf.mha", "prior_gm.mha", "prior_wm.mha"};
    for (int c = 0; c < kTissueClasses - 1; ++c)
        write_volume(atlas.class_priors[c], (fs::path(dir) / prior_names[c]).string());
    write_volume(atlas.mean_intensity, (fs::path(dir) / "mean.mha").string());
    write_volume(atlas.topological, (fs::path(dir) / "topological.mha").string());

    nlohmann::json j;
    j["contributing_count"] = atlas.contributing_count;
    j["priors"] = {prior_names[0], prior_names[1], prior_names[2]};
    j["mean"] = "mean.mha";
    j["topological"] = "topological.mha";
    std::ofstream out(fs::path(dir) / "atlas.json");
    out << j.dump(2) << "\n";
}

ProbabilisticAtlas load_atlas(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "atlas.json");
    if (!in) throw std::runtime_error(dir + ": missing atlas.json");
    nlohmann::json j;
    in >> j;

    ProbabilisticAtlas atlas;
    atlas.contributing_count = j.at("contributing_count");
    for (const auto& name : j.at("priors"))
        atlas.class_priors.push_back(read_volume((fs::path(dir) / name.get<std::string>()).string()));
    atlas.mean_intensity = read_volume((fs::path(dir) / j.at("mean").get<std::string>()).string());
    atlas.topological = read_label_volume(
        (fs::path(dir) / j.at("topological").get<std::string>()).string(), kTissueClasses);
    return atlas;
}

std::string tissue_model_to_json(const TissueModel& model) {
    nlohmann::json j;
    j["bins"] = model.bins;
    std::vector<double> edges(model.bins + 1);
    for (int b = 0; b <= model.bins; ++b) edges[b] = static_cast<double>(b) / model.bins;
    j["bin_edges"] = edges;
    j["pdfs"]["csf"] = model.pdfs[0];
    j["pdfs"]["gm"] = model.pdfs[1];
    j["pdfs"]["wm"] = model.pdfs[2];
    return j.dump(2);
}

TissueModel tissue_model_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TissueModel model;
    model.bins = j.at("bins");
    model.pdfs = {j.at("pdfs").at("csf").get<std::vector<double>>(),
                  j.at("pdfs").at("gm").get<std::vector<double>>(),
                  j.at("pdfs").at("wm").get<std::vector<double>>()};
    for (const auto& pdf : model.pdfs)
        if (static_cast<int>(pdf.size()) != model.bins)
            throw std::runtime_error("tissue model PDF length mismatch");
    return model;
}

}  // namespace mia
