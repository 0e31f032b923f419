#include "mia/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mia/atlas.hpp"
#include "mia/feature_matrix.hpp"
#include "mia/features.hpp"
#include "mia/io.hpp"
#include "mia/metrics.hpp"
#include "mia/ml.hpp"
#include "mia/phantom.hpp"
#include "mia/preprocess.hpp"
#include "mia/registration.hpp"
#include "mia/report.hpp"
#include "mia/rng.hpp"
#include "mia/transform.hpp"

namespace mia {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config plumbing
// ---------------------------------------------------------------------------

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::runtime_error(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::runtime_error("unknown key '" + it.key() + "' in " + where);
}

struct Context {
    json config;       // resolved (seed/out_dir folded in)
    std::string out_dir;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool one_based = false;

    fs::path out(const std::string& name) const { return fs::path(out_dir) / name; }
};

Context make_context(json config, const std::string& pipeline, const CliOptions& opts) {
    if (config.contains("pipeline") && config.at("pipeline") != pipeline)
        throw std::runtime_error("config pipeline '" +
                                 config.at("pipeline").get<std::string>() +
                                 "' does not match subcommand '" + pipeline + "'");
    Context ctx;
    ctx.seed = opts.seed_set ? opts.seed : config.value("seed", std::uint64_t{0});
    ctx.out_dir = !opts.out_dir.empty() ? opts.out_dir : config.value("out_dir", std::string{});
    if (ctx.out_dir.empty()) throw std::runtime_error("no out_dir given (config or --out-dir)");
    ctx.jobs = std::max(1, opts.jobs);
    ctx.one_based = opts.one_based || config.value("one_based", false);
    config["pipeline"] = pipeline;
    config["seed"] = ctx.seed;
    config["out_dir"] = ctx.out_dir;
    if (ctx.one_based) config["one_based"] = true;
    ctx.config = std::move(config);
    fs::create_directories(ctx.out_dir);
    return ctx;
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

json report_header(const Context& ctx) {
    json j;
    j["config"] = ctx.config;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(ctx.config.dump())));
    j["config_hash"] = buf;
    j["seed"] = ctx.seed;
    j["versions"] = {{"mia", kMiaVersion}};
    return j;
}

json table_to_json(const Table& t) {
    json j;
    j["name"] = t.name;
    j["columns"] = t.columns;
    j["rows"] = t.rows;
    return j;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    std::size_t workers = std::min(static_cast<std::size_t>(jobs), n);
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

std::string case_name(const std::string& stem, int i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d%s", stem.c_str(), i, ext);
    return buf;
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

BrainPhantomConfig brain_config(const json& j, std::uint64_t seed) {
    check_keys(j, {"dims", "mean_csf", "mean_gm", "mean_wm", "noise_sigma", "bias_order",
                   "bias_amplitude", "head_frac", "gm_frac", "wm_frac"},
               "phantom.brain");
    BrainPhantomConfig cfg;
    if (j.contains("dims")) {
        auto d = j.at("dims");
        cfg.dims = {d.at(0), d.at(1), d.at(2)};
    }
    cfg.mean_csf = j.value("mean_csf", cfg.mean_csf);
    cfg.mean_gm = j.value("mean_gm", cfg.mean_gm);
    cfg.mean_wm = j.value("mean_wm", cfg.mean_wm);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.bias_order = j.value("bias_order", cfg.bias_order);
    cfg.bias_amplitude = j.value("bias_amplitude", cfg.bias_amplitude);
    cfg.head_frac = j.value("head_frac", cfg.head_frac);
    cfg.gm_frac = j.value("gm_frac", cfg.gm_frac);
    cfg.wm_frac = j.value("wm_frac", cfg.wm_frac);
    cfg.seed = seed;
    return cfg;
}

LesionDatasetConfig lesion_config(const json& j, std::uint64_t seed) {
    check_keys(j, {"counts", "image_size", "hue_jitter_deg", "noise", "knobs"}, "phantom.lesion");
    LesionDatasetConfig cfg;
    if (j.contains("counts")) cfg.counts = j.at("counts").get<std::vector<int>>();
    cfg.image_size = j.value("image_size", cfg.image_size);
    cfg.hue_jitter_deg = j.value("hue_jitter_deg", cfg.hue_jitter_deg);
    cfg.noise = j.value("noise", cfg.noise);
    if (j.contains("knobs")) {
        cfg.knobs.clear();
        for (const auto& k : j.at("knobs")) {
            check_keys(k, {"hue_deg", "border_amp", "texture_freq"}, "phantom.lesion.knobs");
            cfg.knobs.push_back({k.at("hue_deg"), k.at("border_amp"), k.at("texture_freq")});
        }
    }
    cfg.seed = seed;
    return cfg;
}

void write_label_pgm(const LabelVolume& mask, const fs::path& path) {
    ScalarVolume img = make_image2d(mask.dims[0], mask.dims[1]);
    for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 255.0 : 0.0;
    write_gray_image(img, path.string());
}

LabelVolume read_label_pgm(const std::string& path) {
    ScalarVolume img = read_gray_image(path);
    LabelVolume mask = make_labels(img.dims, 2);
    for (std::size_t i = 0; i < img.data.size(); ++i) mask.data[i] = img.data[i] > 127 ? 1 : 0;
    return mask;
}

void run_phantom(const Context& ctx) {
    check_keys(ctx.config, {"pipeline", "seed", "out_dir", "one_based", "kind", "cases", "brain",
                            "lung", "lesion", "population", "pair"},
               "phantom config");
    std::string kind = ctx.config.at("kind");
    json manifest;
    manifest["kind"] = kind;

    if (kind == "brain") {
        int cases = ctx.config.value("cases", 1);
        json case_list = json::array();
        for (int i = 0; i < cases; ++i) {
            BrainPhantomConfig cfg = brain_config(ctx.config.value("brain", json::object()),
                                                  Rng::splitmix64(ctx.seed ^ (i + 1)));
            BrainPhantom ph = gen_brain_phantom(cfg);
            json entry;
            entry["intensity"] = case_name("case", i, ".mha");
            entry["labels"] = case_name("case", i, "_labels.mha");
            entry["bias"] = case_name("case", i, "_bias.mha");
            write_volume(ph.intensity, ctx.out(entry["intensity"]).string());
            write_volume(ph.labels, ctx.out(entry["labels"]).string());
            write_volume(ph.bias, ctx.out(entry["bias"]).string());
            case_list.push_back(entry);
        }
        manifest["cases"] = case_list;
    } else if (kind == "lung") {
        int cases = ctx.config.value("cases", 1);
        LungSliceConfig base;
        if (ctx.config.contains("lung")) {
            const json& j = ctx.config.at("lung");
            check_keys(j, {"size", "ring_radius", "ring_thickness_px", "noise_sigma"},
                       "phantom.lung");
            base.size = j.value("size", base.size);
            base.ring_radius = j.value("ring_radius", base.ring_radius);
            base.ring_thickness_px = j.value("ring_thickness_px", base.ring_thickness_px);
            base.noise_sigma = j.value("noise_sigma", base.noise_sigma);
        }
        json case_list = json::array();
        for (int i = 0; i < cases; ++i) {
            LungSliceConfig cfg = base;
            cfg.seed = Rng::splitmix64(ctx.seed ^ (i + 1));
            LungSlice slice = gen_lung_slice(cfg);
            json entry;
            entry["image"] = case_name("slice", i, ".mha");
            entry["body"] = case_name("slice", i, "_body.mha");
            entry["lungs"] = case_name("slice", i, "_lungs.mha");
            entry["ring"] = case_name("slice", i, "_ring.mha");
            write_volume(slice.image, ctx.out(entry["image"]).string());
            write_volume(slice.body, ctx.out(entry["body"]).string());
            write_volume(slice.lungs, ctx.out(entry["lungs"]).string());
            write_volume(slice.ring, ctx.out(entry["ring"]).string());
            case_list.push_back(entry);
        }
        manifest["cases"] = case_list;
    } else if (kind == "lesion") {
        LesionDatasetConfig cfg = lesion_config(ctx.config.value("lesion", json::object()),
                                                ctx.seed);
        LesionDataset ds = gen_lesion_dataset(cfg);
        json samples = json::array();
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
            json entry;
            entry["image"] = case_name("img", static_cast<int>(i), ".ppm");
            entry["mask"] = case_name("mask", static_cast<int>(i), ".pgm");
            entry["label"] = ds.labels[i];
            write_image(ds.images[i], ctx.out(entry["image"]).string());
            write_label_pgm(ds.masks[i], ctx.out(entry["mask"]));
            samples.push_back(entry);
        }
        manifest["samples"] = samples;
    } else if (kind == "registration-pair") {
        // structured volume pair with a known transform and landmark truth,
        // ready to drive the register pipeline end to end
        int size = 64;
        double rot[3] = {4.0, -3.0, 5.0};
        double trans[3] = {4.0, -3.0, 2.0};
        std::string deformation = "none";
        double amplitude = 3.0, wavelength = 48.0;
        int grid = 5;
        if (ctx.config.contains("pair")) {
            const json& j = ctx.config.at("pair");
            check_keys(j, {"size", "rotation_deg", "translation", "deformation", "amplitude",
                           "wavelength", "landmark_grid"},
                       "phantom.pair");
            size = j.value("size", size);
            if (j.contains("rotation_deg"))
                for (int a = 0; a < 3; ++a) rot[a] = j.at("rotation_deg").at(a);
            if (j.contains("translation"))
                for (int a = 0; a < 3; ++a) trans[a] = j.at("translation").at(a);
            deformation = j.value("deformation", deformation);
            amplitude = j.value("amplitude", amplitude);
            wavelength = j.value("wavelength", wavelength);
            grid = j.value("landmark_grid", grid);
        }

        ScalarVolume moving = gen_structured_volume(size, Rng::splitmix64(ctx.seed ^ 0x9a17ULL));
        Vec3 center{(size - 1) / 2.0, (size - 1) / 2.0, (size - 1) / 2.0};
        TransformChain truth;
        if (deformation == "none") {
            AffineTransform a = AffineTransform::rotation_deg(rot[0], rot[1], rot[2], center);
            a.translation = {trans[0], trans[1], trans[2]};
            truth.stages.push_back(a);
        } else if (deformation == "sinusoid") {
            BsplineTransform t = BsplineTransform::for_volume(moving, {16, 16, 16});
            for (int k = 0; k < t.grid_dims[2]; ++k)
                for (int j = 0; j < t.grid_dims[1]; ++j)
                    for (int i = 0; i < t.grid_dims[0]; ++i) {
                        double gx = t.grid_origin.x + i * t.grid_spacing.x;
                        double gy = t.grid_origin.y + j * t.grid_spacing.y;
                        double gz = t.grid_origin.z + k * t.grid_spacing.z;
                        constexpr double kTau = 6.283185307179586;
                        t.coefficients[t.coeff_index(i, j, k, 0)] =
                            amplitude * std::sin(kTau * gy / wavelength);
                        t.coefficients[t.coeff_index(i, j, k, 1)] =
                            amplitude * std::sin(kTau * gz / wavelength + 1.0);
                        t.coefficients[t.coeff_index(i, j, k, 2)] =
                            amplitude * 0.7 * std::sin(kTau * gx / wavelength + 2.0);
                    }
            truth.stages.push_back(t);
        } else {
            throw std::runtime_error("unknown deformation '" + deformation + "'");
        }
        ScalarVolume fixed = resample(moving, truth, moving, Interp::Linear);

        LandmarkSet fixed_lms, moving_lms;
        fixed_lms.spacing = moving_lms.spacing = {1, 1, 1};
        int lo = size / 4, hi = 3 * size / 4;
        for (int zi = 0; zi < grid; ++zi)
            for (int yi = 0; yi < grid; ++yi)
                for (int xi = 0; xi < grid; ++xi) {
                    Vec3 p{lo + (hi - lo) * xi / double(grid - 1),
                           lo + (hi - lo) * yi / double(grid - 1),
                           lo + (hi - lo) * zi / double(grid - 1)};
                    fixed_lms.points.push_back(p);
                    moving_lms.points.push_back(truth.apply(p));
                }

        write_volume(fixed, ctx.out("fixed.mha").string());
        write_volume(moving, ctx.out("moving.mha").string());
        write_landmarks(fixed_lms, ctx.out("fixed_landmarks.txt").string());
        write_landmarks(moving_lms, ctx.out("truth_moving_landmarks.txt").string());
        save_chain(truth, ctx.out("truth_chain.json").string());
        manifest["cases"] = json::array({{{"name", "case1"},
                                          {"fixed", "fixed.mha"},
                                          {"moving", "moving.mha"},
                                          {"fixed_landmarks", "fixed_landmarks.txt"},
                                          {"truth_moving_landmarks",
                                           "truth_moving_landmarks.txt"}}});
    } else if (kind == "atlas-population") {
        BrainPhantomConfig bcfg = brain_config(ctx.config.value("brain", json::object()),
                                               Rng::splitmix64(ctx.seed ^ 0xb5a1eULL));
        BrainPhantom base = gen_brain_phantom(bcfg);
        AtlasPopulationConfig pcfg;
        if (ctx.config.contains("population")) {
            const json& j = ctx.config.at("population");
            check_keys(j, {"members", "max_rotation_deg", "max_translation_voxels"},
                       "phantom.population");
            pcfg.members = j.value("members", pcfg.members);
            pcfg.max_rotation_deg = j.value("max_rotation_deg", pcfg.max_rotation_deg);
            pcfg.max_translation_voxels =
                j.value("max_translation_voxels", pcfg.max_translation_voxels);
        }
        pcfg.seed = Rng::splitmix64(ctx.seed ^ 0x9090ULL);
        auto members = gen_atlas_population(base, pcfg);

        manifest["target"] = "target.mha";
        manifest["target_labels"] = "target_labels.mha";
        write_volume(base.intensity, ctx.out("target.mha").string());
        write_volume(base.labels, ctx.out("target_labels.mha").string());
        json member_list = json::array();
        for (std::size_t i = 0; i < members.size(); ++i) {
            json entry;
            entry["intensity"] = case_name("member", static_cast<int>(i), ".mha");
            entry["labels"] = case_name("member", static_cast<int>(i), "_labels.mha");
            entry["chain"] = case_name("member", static_cast<int>(i), "_chain.json");
            write_volume(members[i].intensity, ctx.out(entry["intensity"]).string());
            write_volume(members[i].labels, ctx.out(entry["labels"]).string());
            save_chain(members[i].true_chain, ctx.out(entry["chain"]).string());
            member_list.push_back(entry);
        }
        manifest["members"] = member_list;
    } else {
        throw std::runtime_error("unknown phantom kind '" + kind + "'");
    }

    json report = report_header(ctx);
    report["manifest"] = manifest;
    write_json_file(manifest, ctx.out("manifest.json"));
    write_json_file(report, ctx.out("report.json"));
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

CtPreprocessConfig ct_config(const json& j) {
    check_keys(j, {"corner_window", "corner_threshold", "clahe_tiles", "clahe_clip",
                   "morph_radius"},
               "preprocess.ct");
    CtPreprocessConfig cfg;
    cfg.corner_window = j.value("corner_window", cfg.corner_window);
    cfg.corner_threshold = j.value("corner_threshold", cfg.corner_threshold);
    cfg.clahe_tiles = j.value("clahe_tiles", cfg.clahe_tiles);
    cfg.clahe_clip = j.value("clahe_clip", cfg.clahe_clip);
    cfg.morph_radius = j.value("morph_radius", cfg.morph_radius);
    return cfg;
}

ScalarVolume load_2d_input(const std::string& path) {
    if (path.size() > 4 && (path.substr(path.size() - 4) == ".pgm")) return read_gray_image(path);
    ScalarVolume v = read_volume(path);
    if (v.dims[2] != 1) throw std::runtime_error(path + ": expected a 2D input");
    return v;
}

void run_preprocess_brain(const Context& ctx) {
    ScalarVolume vol = read_volume(ctx.config.at("input"));
    LabelVolume labels;
    bool have_labels = ctx.config.contains("labels");
    if (have_labels) labels = read_label_volume(ctx.config.at("labels"));

    BiasFieldConfig bias_cfg;
    if (ctx.config.contains("bias")) {
        const json& j = ctx.config.at("bias");
        check_keys(j, {"polynomial_order", "epsilon"}, "preprocess.bias");
        bias_cfg.polynomial_order = j.value("polynomial_order", bias_cfg.polynomial_order);
        bias_cfg.epsilon = j.value("epsilon", bias_cfg.epsilon);
    }
    ExtractionConfig ext_cfg;
    if (ctx.config.contains("extraction")) {
        const json& j = ctx.config.at("extraction");
        check_keys(j, {"patch_size", "min_foreground_fraction"}, "preprocess.extraction");
        ext_cfg.patch_size = j.value("patch_size", ext_cfg.patch_size);
        ext_cfg.min_foreground_fraction =
            j.value("min_foreground_fraction", ext_cfg.min_foreground_fraction);
    }

    auto [threshold, mask] = otsu_threshold(vol);
    auto [corrected, field] = correct_bias(vol, mask, bias_cfg);
    ScalarVolume normalized = minmax_normalize(corrected);

    write_volume(mask, ctx.out("brain_mask.mha").string());
    write_volume(corrected, ctx.out("corrected.mha").string());
    write_volume(field, ctx.out("bias_field.mha").string());
    write_volume(normalized, ctx.out("normalized.mha").string());

    auto slices = extract_slices(normalized, have_labels ? &labels : nullptr, ext_cfg);
    json slice_list = json::array();
    std::size_t total_patches = 0;
    for (const auto& sp : slices) {
        auto patches = extract_patches(sp.image, ext_cfg);
        total_patches += patches.size();
        slice_list.push_back({{"index", sp.slice_index}, {"patches", patches.size()}});
    }

    json report = report_header(ctx);
    report["otsu_threshold"] = threshold;
    report["kept_slices"] = slice_list;
    report["total_patches"] = total_patches;
    write_json_file(report, ctx.out("report.json"));
}

void run_preprocess(const Context& ctx) {
    check_keys(ctx.config, {"pipeline", "seed", "out_dir", "one_based", "task", "input",
                            "labels", "ct", "bias", "extraction"},
               "preprocess config");
    std::string task = ctx.config.value("task", std::string("ct"));
    if (task == "brain") {
        run_preprocess_brain(ctx);
        return;
    }
    if (task != "ct") throw std::runtime_error("unknown preprocess task '" + task + "'");
    ScalarVolume image = load_2d_input(ctx.config.at("input"));
    CtPreprocessConfig cfg = ct_config(ctx.config.value("ct", json::object()));

    auto [has_fov, k] = detect_fov(image, cfg);
    KmeansResult km = kmeans_segment(image, k, Rng::splitmix64(ctx.seed ^ 0x4bULL));

    // darkest cluster is air/background; everything brighter seeds the chest mask
    LabelVolume bright = make_labels(image.dims, 2, image.spacing, image.origin);
    for (std::size_t i = 0; i < km.labels.data.size(); ++i)
        bright.data[i] = km.labels.data[i] >= 1 ? 1 : 0;
    ChestMask chest = fill_chest_holes(bright, cfg);
    ScalarVolume cleaned = remove_gantry(image, chest.filled);
    ScalarVolume enhanced = clahe(cleaned, cfg);

    write_volume(km.labels, ctx.out("kmeans_labels.mha").string());
    write_volume(chest.filled, ctx.out("chest_mask.mha").string());
    write_volume(cleaned, ctx.out("cleaned.mha").string());
    write_volume(enhanced, ctx.out("clahe.mha").string());

    json report = report_header(ctx);
    report["fov"] = {{"has_fov", has_fov}, {"k", k}};
    report["kmeans_centroids"] = km.centroids;
    report["chest_contour_points"] = chest.chest_contour.size();
    write_json_file(report, ctx.out("report.json"));
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

std::vector<ParameterMap> maps_from_config(const Context& ctx) {
    if (ctx.config.contains("maps"))
        return parameter_maps_from_json(ctx.config.at("maps").dump());
    std::string preset = ctx.config.value("preset", std::string("affine-mi"));
    if (!PresetLibrary::has(preset)) throw std::runtime_error("unknown preset '" + preset + "'");
    return PresetLibrary::get(preset);
}

struct SegDataset {
    ScalarVolume target;
    LabelVolume truth;
    std::vector<TrainingPair> training;
};

SegDataset load_seg_dataset(const Context& ctx) {
    SegDataset ds;
    std::string manifest_path = ctx.config.at("manifest");
    fs::path dir = fs::path(manifest_path).parent_path();
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error(manifest_path + ": cannot open");
    json m;
    in >> m;
    ds.target = read_volume((dir / m.at("target").get<std::string>()).string());
    ds.truth = read_label_volume((dir / m.at("target_labels").get<std::string>()).string(),
                                 kTissueClasses);
    int idx = 0;
    for (const auto& e : m.at("members")) {
        TrainingPair pair;
        pair.intensity = read_volume((dir / e.at("intensity").get<std::string>()).string());
        pair.labels = read_label_volume((dir / e.at("labels").get<std::string>()).string(),
                                        kTissueClasses);
        pair.id = "member_" + std::to_string(idx++);
        ds.training.push_back(std::move(pair));
    }
    if (ds.training.empty()) throw std::runtime_error("manifest has no members");
    return ds;
}

void run_segment(const Context& ctx) {
    check_keys(ctx.config,
               {"pipeline", "seed", "out_dir", "one_based", "manifest", "methods", "preset",
                "maps", "bias_correction", "mi_bins", "pdf_bins"},
               "segment config");
    SegDataset ds = load_seg_dataset(ctx);
    std::vector<std::string> methods =
        ctx.config.value("methods", std::vector<std::string>{"label-propagation", "tissue-model",
                                                             "posterior", "multiatlas-majority",
                                                             "multiatlas-mi"});
    int mi_bins = ctx.config.value("mi_bins", 64);
    int pdf_bins = ctx.config.value("pdf_bins", 64);
    auto maps = maps_from_config(ctx);

    // target preprocessing: mask, optional bias correction, normalization
    auto [otsu_t, brain_mask] = otsu_threshold(ds.target);
    (void)otsu_t;
    ScalarVolume target_work = ds.target;
    if (ctx.config.value("bias_correction", false))
        target_work = correct_bias(ds.target, brain_mask).first;
    ScalarVolume target_norm = minmax_normalize(target_work);

    bool needs_registration = false;
    for (const auto& m : methods)
        if (m != "tissue-model") needs_registration = true;

    std::vector<AtlasEntry> entries(ds.training.size());
    if (needs_registration) {
        std::vector<std::uint64_t> seeds(ds.training.size());
        for (std::size_t i = 0; i < seeds.size(); ++i)
            seeds[i] = Rng::splitmix64(ctx.seed ^ (0x5e6 + i));
        parallel_for(ds.training.size(), ctx.jobs, [&](std::size_t i) {
            entries[i] = segment_label_propagation(target_norm, ds.training[i], maps, seeds[i]);
        });
    }

    // tissue models come from the training images in native space
    std::vector<TrainingPair> normalized_training;
    for (const auto& pair : ds.training) {
        TrainingPair np;
        np.intensity = minmax_normalize(pair.intensity);
        np.labels = pair.labels;
        np.id = pair.id;
        normalized_training.push_back(std::move(np));
    }
    TissueModel model = build_tissue_models(normalized_training, pdf_bins);

    ProbabilisticAtlas atlas;
    bool have_atlas = false;

    Table table;
    table.name = "segmentation";
    table.columns = {"METHOD", "CLASS", "DSC", "HD", "AVD"};
    static const char* kClassNames[] = {"", "CSF", "GM", "WM"};

    json per_method = json::object();
    for (const auto& method : methods) {
        LabelVolume pred;
        if (method == "label-propagation") {
            pred = entries.front().propagated_labels;
        } else if (method == "tissue-model") {
            pred = segment_tissue_model(target_norm, model, brain_mask);
        } else if (method == "posterior") {
            if (!have_atlas) {
                atlas = aggregate_atlas(target_norm, entries);
                have_atlas = true;
            }
            pred = segment_posterior(target_norm, atlas, model);
        } else if (method == "multiatlas-majority") {
            pred = fuse_majority(entries);
        } else if (method == "multiatlas-mi") {
            pred = fuse_mi_weighted(entries, target_norm, mi_bins);
        } else {
            throw std::runtime_error("unknown segmentation method '" + method + "'");
        }
        write_volume(pred, ctx.out("seg_" + method + ".mha").string());

        SegScore score = segmentation_score(pred, ds.truth);
        for (int c = 1; c < kTissueClasses; ++c)
            table.add_row({method, kClassNames[c], format_double(score.dice[c - 1]),
                           format_double(score.hausdorff[c - 1]),
                           format_double(score.avd[c - 1])});
        table.add_row({method, "AVERAGE", format_double(score.mean_dice),
                       format_double(score.mean_hausdorff), format_double(score.mean_avd)});
        per_method[method] = {{"mean_dice", score.mean_dice},
                              {"mean_hd", score.mean_hausdorff},
                              {"mean_avd", score.mean_avd},
                              {"dice", score.dice}};
    }

    if (have_atlas) save_atlas(atlas, ctx.out("atlas").string());
    {
        std::ofstream out(ctx.out("tissue_model.json"));
        out << tissue_model_to_json(model) << "\n";
    }
    write_table_csv(table, ctx.out("segmentation.csv").string());

    json report = report_header(ctx);
    report["tables"] = json::array({table_to_json(table)});
    report["per_method"] = per_method;
    write_json_file(report, ctx.out("report.json"));
}

// ---------------------------------------------------------------------------
// register
// ---------------------------------------------------------------------------

void run_register(const Context& ctx) {
    check_keys(ctx.config, {"pipeline", "seed", "out_dir", "one_based", "cases", "presets",
                            "maps"},
               "register config");
    struct Case {
        std::string name;
        ScalarVolume fixed, moving;
        LandmarkSet fixed_lms;
        bool has_truth = false;
        LandmarkSet truth;
    };
    std::vector<Case> cases;
    for (const auto& jc : ctx.config.at("cases")) {
        check_keys(jc, {"name", "fixed", "moving", "fixed_landmarks", "truth_moving_landmarks"},
                   "register case");
        Case c;
        c.name = jc.at("name");
        c.fixed = read_volume(jc.at("fixed"));
        c.moving = read_volume(jc.at("moving"));
        if (jc.contains("fixed_landmarks"))
            c.fixed_lms = read_landmarks(jc.at("fixed_landmarks"), c.fixed.spacing,
                                         ctx.one_based);
        if (jc.contains("truth_moving_landmarks")) {
            c.truth = read_landmarks(jc.at("truth_moving_landmarks"), c.moving.spacing,
                                     ctx.one_based);
            c.has_truth = true;
        }
        cases.push_back(std::move(c));
    }
    if (cases.empty()) throw std::runtime_error("no registration cases");

    std::vector<std::pair<std::string, std::vector<ParameterMap>>> presets;
    if (ctx.config.contains("presets"))
        for (const auto& name : ctx.config.at("presets")) {
            if (!PresetLibrary::has(name))
                throw std::runtime_error("unknown preset '" + name.get<std::string>() + "'");
            presets.emplace_back(name, PresetLibrary::get(name));
        }
    if (ctx.config.contains("maps"))
        for (auto it = ctx.config.at("maps").begin(); it != ctx.config.at("maps").end(); ++it)
            presets.emplace_back(it.key(), parameter_maps_from_json(it.value().dump()));
    if (presets.empty()) presets.emplace_back("combined-best", PresetLibrary::get("combined-best"));

    struct Job {
        std::size_t case_idx, preset_idx;
        TransformChain chain;
        std::vector<double> stage_costs;
        TreResult tre_after;
        bool has_tre = false;
        bool failed = false;
        std::string error;
    };
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < presets.size(); ++p)
        for (std::size_t c = 0; c < cases.size(); ++c)
            jobs.push_back({c, p, {}, {}, {}, false, false, {}});

    std::vector<std::uint64_t> seeds(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) seeds[i] = Rng::splitmix64(ctx.seed ^ (i + 17));

    // per-job failures are recorded, not fatal: the report enumerates them
    parallel_for(jobs.size(), ctx.jobs, [&](std::size_t i) {
        Job& job = jobs[i];
        const Case& c = cases[job.case_idx];
        try {
            RegistrationResult res =
                register_images(c.fixed, c.moving, presets[job.preset_idx].second, seeds[i]);
            job.chain = res.chain;
            job.stage_costs = res.per_stage_costs;
            if (c.fixed_lms.size() > 0 && c.has_truth) {
                LandmarkSet predicted =
                    transform_landmarks(res.chain, c.fixed_lms, c.moving.spacing);
                job.tre_after = tre(predicted, c.truth, c.moving.spacing);
                job.has_tre = true;
            }
        } catch (const std::exception& e) {
            job.failed = true;
            job.error = e.what();
        }
    });

    Table table;
    table.name = "tre";
    table.columns = {"PARAMETER(S)"};
    for (const auto& c : cases) table.columns.push_back(c.name);
    table.columns.push_back("Average");

    // before-registration row: fixed landmarks against the truth as-is
    {
        std::vector<std::string> row = {"identity"};
        double sum = 0;
        int n = 0;
        for (const auto& c : cases) {
            if (c.fixed_lms.size() > 0 && c.has_truth) {
                TreResult before = tre(c.fixed_lms, c.truth, c.moving.spacing);
                row.push_back(format_mean_std(before.mean_mm, before.std_mm));
                sum += before.mean_mm;
                ++n;
            } else {
                row.push_back("-");
            }
        }
        row.push_back(n ? format_double(sum / n, 2) : "-");
        table.add_row(std::move(row));
    }

    json per_job = json::array();
    for (std::size_t p = 0; p < presets.size(); ++p) {
        std::vector<std::string> row = {presets[p].first};
        double sum = 0;
        int n = 0;
        for (std::size_t c = 0; c < cases.size(); ++c) {
            const Job& job = jobs[p * cases.size() + c];
            if (job.failed) {
                row.push_back("FAILED");
            } else if (job.has_tre) {
                row.push_back(format_mean_std(job.tre_after.mean_mm, job.tre_after.std_mm));
                sum += job.tre_after.mean_mm;
                ++n;
            } else {
                row.push_back("-");
            }
        }
        row.push_back(n ? format_double(sum / n, 2) : "-");
        table.add_row(std::move(row));
    }

    json failed_cases = json::array();
    for (const Job& job : jobs) {
        const Case& c = cases[job.case_idx];
        const std::string& preset_name = presets[job.preset_idx].first;
        json jj;
        jj["case"] = c.name;
        jj["preset"] = preset_name;
        if (job.failed) {
            jj["error"] = job.error;
            failed_cases.push_back({{"case", c.name}, {"preset", preset_name},
                                    {"error", job.error}});
            per_job.push_back(std::move(jj));
            continue;
        }
        std::string stem = c.name + "_" + preset_name;
        save_chain(job.chain, ctx.out("chain_" + stem + ".json").string());
        ScalarVolume warped = resample(c.moving, job.chain, c.fixed, Interp::Linear);
        write_volume(warped, ctx.out("warped_" + stem + ".mha").string());
        if (c.fixed_lms.size() > 0) {
            LandmarkSet predicted = transform_landmarks(job.chain, c.fixed_lms, c.moving.spacing);
            write_landmarks(predicted, ctx.out("landmarks_" + stem + ".txt").string());
        }
        jj["stage_costs"] = job.stage_costs;
        if (job.has_tre) {
            jj["tre_mean_mm"] = job.tre_after.mean_mm;
            jj["tre_std_mm"] = job.tre_after.std_mm;
        }
        per_job.push_back(std::move(jj));
    }

    write_table_csv(table, ctx.out("tre.csv").string());
    json report = report_header(ctx);
    report["tables"] = json::array({table_to_json(table)});
    report["runs"] = per_job;
    if (!failed_cases.empty()) report["failed_cases"] = failed_cases;
    write_json_file(report, ctx.out("report.json"));
    if (!failed_cases.empty())
        throw std::runtime_error(std::to_string(failed_cases.size()) +
                                 " registration case(s) failed; see report.json");
}

// ---------------------------------------------------------------------------
// transform-points
// ---------------------------------------------------------------------------

void run_transform_points(const Context& ctx) {
    check_keys(ctx.config, {"pipeline", "seed", "out_dir", "one_based", "chain", "landmarks",
                            "fixed_spacing", "moving_spacing", "out"},
               "transform-points config");
    TransformChain chain = load_chain(ctx.config.at("chain"));
    Vec3 fixed_spacing{1, 1, 1}, moving_spacing{1, 1, 1};
    if (ctx.config.contains("fixed_spacing")) {
        auto s = ctx.config.at("fixed_spacing");
        fixed_spacing = {s.at(0), s.at(1), s.at(2)};
    }
    if (ctx.config.contains("moving_spacing")) {
        auto s = ctx.config.at("moving_spacing");
        moving_spacing = {s.at(0), s.at(1), s.at(2)};
    }
    LandmarkSet lms = read_landmarks(ctx.config.at("landmarks"), fixed_spacing, ctx.one_based);
    LandmarkSet mapped = transform_landmarks(chain, lms, moving_spacing);
    std::string out_name = ctx.config.value("out", std::string("transformed_points.txt"));
    write_landmarks(mapped, ctx.out(out_name).string());

    json report = report_header(ctx);
    report["points"] = mapped.size();
    report["output"] = out_name;
    write_json_file(report, ctx.out("report.json"));
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

struct LesionFiles {
    std::vector<std::string> images, masks;
    std::vector<int> labels;
};

LesionFiles load_lesion_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error(manifest_path + ": cannot open");
    json m;
    in >> m;
    fs::path dir = fs::path(manifest_path).parent_path();
    LesionFiles files;
    for (const auto& s : m.at("samples")) {
        files.images.push_back((dir / s.at("image").get<std::string>()).string());
        files.masks.push_back(s.contains("mask")
                                  ? (dir / s.at("mask").get<std::string>()).string()
                                  : std::string{});
        files.labels.push_back(s.at("label"));
    }
    if (files.images.empty()) throw std::runtime_error("manifest has no samples");
    return files;
}

FeatureMatrix extract_features(const LesionFiles& files, const std::string& mask_source,
                               int jobs) {
    std::vector<FeatureVector> vectors(files.images.size());
    parallel_for(files.images.size(), jobs, [&](std::size_t i) {
        ColorImage img = read_image(files.images[i]);
        LabelVolume mask;
        if (mask_source == "file" && !files.masks[i].empty())
            mask = read_label_pgm(files.masks[i]);
        else
            mask = lesion_mask_from_image(img);
        vectors[i] = extract_feature_vector(img, mask);
        vectors[i].label = files.labels[i];
    });
    FeatureMatrix m;
    m.rows = vectors.size();
    m.cols = vectors.front().values.size();
    m.names = vectors.front().names;
    m.data.reserve(m.rows * m.cols);
    for (const auto& v : vectors) {
        m.data.insert(m.data.end(), v.values.begin(), v.values.end());
        m.labels.push_back(v.label);
    }
    m.validate();
    return m;
}

void run_features(const Context& ctx) {
    check_keys(ctx.config, {"pipeline", "seed", "out_dir", "one_based", "manifest",
                            "mask_source", "out"},
               "features config");
    LesionFiles files = load_lesion_manifest(ctx.config.at("manifest"));
    std::string mask_source = ctx.config.value("mask_source", std::string("file"));
    FeatureMatrix m = extract_features(files, mask_source, ctx.jobs);
    std::string out_name = ctx.config.value("out", std::string("features.csv"));
    write_feature_csv(m, ctx.out(out_name).string());

    json report = report_header(ctx);
    report["samples"] = m.rows;
    report["features"] = m.cols;
    report["output"] = out_name;
    write_json_file(report, ctx.out("report.json"));
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

struct ClassifierConfig {
    std::string name;
    bool is_ensemble = false;
    std::vector<std::string> members;
    ClassifierSpec spec;
};

std::vector<ClassifierConfig> classifier_configs(const json& list) {
    std::vector<ClassifierConfig> out;
    for (const auto& j : list) {
        check_keys(j, {"name", "kind", "k", "hidden", "epochs", "learning_rate", "trees",
                       "max_depth", "members"},
                   "classifier spec");
        ClassifierConfig cfg;
        std::string kind = j.at("kind");
        cfg.name = j.value("name", kind);
        if (kind == "ensemble") {
            cfg.is_ensemble = true;
            cfg.members = j.at("members").get<std::vector<std::string>>();
        } else if (kind == "knn") {
            cfg.spec.kind = ClassifierSpec::Knn;
            cfg.spec.k = j.value("k", 5);
        } else if (kind == "mlp") {
            cfg.spec.kind = ClassifierSpec::Mlp;
            cfg.spec.hidden = j.value("hidden", 64);
            cfg.spec.epochs = j.value("epochs", 400);
            cfg.spec.learning_rate = j.value("learning_rate", 0.05);
        } else if (kind == "forest") {
            cfg.spec.kind = ClassifierSpec::Forest;
            cfg.spec.trees = j.value("trees", 100);
            cfg.spec.max_depth = j.value("max_depth", 0);
        } else {
            throw std::runtime_error("unknown classifier kind '" + kind + "'");
        }
        out.push_back(std::move(cfg));
    }
    if (out.empty()) throw std::runtime_error("no classifiers configured");
    return out;
}

struct PipelineSettings {
    bool standardize = true;
    std::size_t pca_components = 70;
    std::string resampling = "none";
    int smote_k = 5;
};

// Image-level augmentation pool: synthetic feature rows for the minority
// classes, each tagged with the original row it was derived from so folds can
// stay leak-free (a synthetic joins the training side only when its source
// row is in training).
struct AugmentPool {
    FeatureMatrix rows;
    std::vector<std::size_t> sources;  // original (global) row per synthetic
};

AugmentPool build_augment_pool(const LesionFiles& files, const FeatureMatrix& all, int jobs,
                               std::uint64_t seed) {
    auto counts = all.class_counts();
    std::size_t target = *std::max_element(counts.begin(), counts.end());
    std::vector<std::vector<std::size_t>> by_class(counts.size());
    for (std::size_t r = 0; r < all.rows; ++r) by_class[all.labels[r]].push_back(r);

    struct Plan {
        std::size_t source;
        int label;
        std::uint64_t seed;
        int variant;
    };
    std::vector<Plan> plan;
    for (std::size_t c = 0; c < counts.size(); ++c)
        for (std::size_t k = counts[c]; k < target; ++k) {
            std::size_t src = by_class[c][k % by_class[c].size()];
            plan.push_back({src, static_cast<int>(c),
                            Rng::splitmix64(seed ^ (plan.size() + 1)),
                            static_cast<int>(k % 4)});
        }

    std::vector<FeatureVector> vectors(plan.size());
    parallel_for(plan.size(), jobs, [&](std::size_t i) {
        ColorImage img = read_image(files.images[plan[i].source]);
        AugmentSpec spec;
        spec.ops.push_back({AugmentOp::Zoom, 0.85, 1.15});
        spec.ops.push_back({AugmentOp::CentralCrop, 0.92, 0});
        spec.ops.push_back({AugmentOp::Contrast, 1.1, 0});
        if (plan[i].variant % 2) spec.ops.push_back({AugmentOp::FlipH, 0, 0});
        if (plan[i].variant >= 2) spec.ops.push_back({AugmentOp::FlipV, 0, 0});
        spec.copies = 1;
        spec.seed = plan[i].seed;
        ColorImage augmented = augment(img, spec).front();
        LabelVolume mask = lesion_mask_from_image(augmented);
        vectors[i] = extract_feature_vector(augmented, mask);
        vectors[i].label = plan[i].label;
    });

    AugmentPool pool;
    pool.rows.cols = all.cols;
    pool.rows.names = all.names;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        pool.rows.data.insert(pool.rows.data.end(), vectors[i].values.begin(),
                              vectors[i].values.end());
        pool.rows.labels.push_back(vectors[i].label);
        ++pool.rows.rows;
        pool.sources.push_back(plan[i].source);
    }
    return pool;
}

// originals plus the eligible synthetics (source in the training set),
// appended per class until the class counts balance
FeatureMatrix with_augmented(const FeatureMatrix& train_set,
                             const std::vector<std::size_t>& train_globals,
                             const AugmentPool& pool) {
    FeatureMatrix out = train_set;
    std::set<std::size_t> in_train(train_globals.begin(), train_globals.end());
    auto counts = train_set.class_counts();
    std::size_t target = *std::max_element(counts.begin(), counts.end());
    std::vector<std::size_t> still_needed(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) still_needed[c] = target - counts[c];
    for (std::size_t i = 0; i < pool.rows.rows; ++i) {
        int label = pool.rows.labels[i];
        if (static_cast<std::size_t>(label) >= still_needed.size()) continue;
        if (still_needed[label] == 0 || !in_train.count(pool.sources[i])) continue;
        out.data.insert(out.data.end(), pool.rows.data.begin() + i * pool.rows.cols,
                        pool.rows.data.begin() + (i + 1) * pool.rows.cols);
        out.labels.push_back(label);
        ++out.rows;
        --still_needed[label];
    }
    return out;
}

// fit scaler+PCA on train, optionally resample, train every classifier, and
// return per-classifier probabilities on the evaluation set
struct FittedModels {
    std::vector<std::unique_ptr<Classifier>> models;
    std::vector<std::vector<double>> eval_proba;  // per classifier config
    int classes = 0;
};

FittedModels fit_and_predict(const FeatureMatrix& train_set,
                             const std::vector<std::size_t>& train_globals,
                             const FeatureMatrix& eval_set, const AugmentPool* pool,
                             const std::vector<ClassifierConfig>& configs,
                             const PipelineSettings& ps, std::uint64_t seed) {
    FeatureMatrix tr = train_set, ev = eval_set;
    if (pool && ps.resampling == "augment") tr = with_augmented(tr, train_globals, *pool);
    if (ps.standardize) {
        Scaler scaler = standardize_fit(tr);
        tr = standardize_apply(scaler, tr);
        ev = standardize_apply(scaler, ev);
    }
    if (ps.pca_components > 0 && ps.pca_components < tr.cols) {
        std::size_t k = std::min(ps.pca_components, std::min(tr.rows - 1, tr.cols));
        PcaModel pca = pca_fit(tr, k);
        tr = pca_project(pca, tr);
        ev = pca_project(pca, ev);
    }
    std::vector<double> weights;
    if (ps.resampling == "smote")
        tr = smote(tr, ps.smote_k, Rng::splitmix64(seed ^ 0x505eULL));
    else if (ps.resampling == "class-weights")
        weights = class_weights(tr.labels);

    FittedModels out;
    out.classes = *std::max_element(tr.labels.begin(), tr.labels.end()) + 1;
    std::vector<const Classifier*> by_name_order;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (configs[i].is_ensemble) {
            std::vector<const Classifier*> members;
            for (const auto& name : configs[i].members) {
                const Classifier* found = nullptr;
                for (std::size_t k = 0; k < i; ++k)
                    if (configs[k].name == name && !configs[k].is_ensemble)
                        found = out.models[k].get();
                if (!found)
                    throw std::runtime_error("ensemble member '" + name +
                                             "' must be defined earlier in the list");
                members.push_back(found);
            }
            out.models.push_back(nullptr);
            out.eval_proba.push_back(ensemble_soft_vote(members, ev));
        } else {
            ClassifierSpec spec = configs[i].spec;
            spec.seed = Rng::splitmix64(seed ^ fnv1a64(configs[i].name));
            if (spec.kind == ClassifierSpec::Mlp && !weights.empty())
                spec.mlp_class_weights = weights;
            out.models.push_back(train(spec, tr));
            out.eval_proba.push_back(out.models.back()->predict_proba(ev));
        }
    }
    return out;
}

std::vector<int> argmax_labels(const std::vector<double>& proba, std::size_t rows, int classes) {
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        int best = 0;
        double bp = proba[r * classes];
        for (int c = 1; c < classes; ++c)
            if (proba[r * classes + c] > bp) {
                bp = proba[r * classes + c];
                best = c;
            }
        out[r] = best;
    }
    return out;
}

struct ClassifyTables {
    Table cv;
    Table holdout;
    json rocs = json::array();
};

ClassifyTables classify_run(const Context& ctx, const FeatureMatrix& all,
                            const AugmentPool* pool,
                            const std::vector<ClassifierConfig>& configs,
                            const PipelineSettings& ps, int cv_folds, double holdout_fraction,
                            const std::vector<std::string>& class_names,
                            const std::string& tag) {
    // holdout split, then k-fold CV inside the training portion
    SplitConfig hold_cfg;
    hold_cfg.scheme = SplitConfig::StratifiedShuffle;
    hold_cfg.train_fraction = 1.0 - holdout_fraction;
    hold_cfg.seed = ctx.seed;
    SplitResult hold = split(all.labels, hold_cfg);
    FeatureMatrix train_all = all.select_rows(hold.train);
    FeatureMatrix holdout = all.select_rows(hold.folds.front());

    SplitConfig fold_cfg;
    fold_cfg.scheme = SplitConfig::StratifiedKFold;
    fold_cfg.k = cv_folds;
    fold_cfg.seed = Rng::splitmix64(ctx.seed ^ 0xf01d5ULL);
    SplitResult folds = split(train_all.labels, fold_cfg);

    static const char* kFoldNames[] = {"Onefold", "Twofold", "Threefold", "Fourfold", "Fivefold",
                                       "Sixfold", "Sevenfold", "Eightfold", "Ninefold",
                                       "Tenfold"};

    ClassifyTables out;
    out.cv.name = "cv" + tag;
    out.cv.columns = {"FOLDS"};
    for (const auto& c : configs) out.cv.columns.push_back(c.name);

    std::vector<std::vector<double>> fold_acc(configs.size());
    struct FoldJob {
        std::vector<double> acc;  // per classifier
    };
    std::vector<FoldJob> fold_jobs(cv_folds);
    std::vector<std::uint64_t> fold_seeds(cv_folds);
    for (int f = 0; f < cv_folds; ++f) fold_seeds[f] = Rng::splitmix64(ctx.seed ^ (0xf0 + f));

    parallel_for(cv_folds, ctx.jobs, [&](std::size_t f) {
        std::vector<std::size_t> tr_idx;
        for (int g = 0; g < cv_folds; ++g)
            if (g != static_cast<int>(f))
                tr_idx.insert(tr_idx.end(), folds.folds[g].begin(), folds.folds[g].end());
        std::sort(tr_idx.begin(), tr_idx.end());
        FeatureMatrix ftr = train_all.select_rows(tr_idx);
        FeatureMatrix fva = train_all.select_rows(folds.folds[f]);
        std::vector<std::size_t> fold_globals;
        for (std::size_t j : tr_idx) fold_globals.push_back(hold.train[j]);
        FittedModels fit = fit_and_predict(ftr, fold_globals, fva, pool, configs, ps,
                                           fold_seeds[f]);
        fold_jobs[f].acc.resize(configs.size());
        for (std::size_t ci = 0; ci < configs.size(); ++ci) {
            auto pred = argmax_labels(fit.eval_proba[ci], fva.rows, fit.classes);
            auto cm = ConfusionMatrix::from_predictions(fva.labels, pred, fit.classes);
            fold_jobs[f].acc[ci] = classification_report(cm).accuracy;
        }
    });

    for (int f = 0; f < cv_folds; ++f) {
        std::vector<std::string> row = {f < 10 ? kFoldNames[f] : "Fold" + std::to_string(f + 1)};
        for (std::size_t ci = 0; ci < configs.size(); ++ci) {
            row.push_back(format_double(fold_jobs[f].acc[ci], 4));
            fold_acc[ci].push_back(fold_jobs[f].acc[ci]);
        }
        out.cv.add_row(std::move(row));
    }
    {
        std::vector<std::string> row = {"Average"};
        for (std::size_t ci = 0; ci < configs.size(); ++ci) {
            double mean = 0;
            for (double a : fold_acc[ci]) mean += a;
            row.push_back(format_double(mean / cv_folds, 4));
        }
        out.cv.add_row(std::move(row));
    }

    // held-out metric grid
    FittedModels fit = fit_and_predict(train_all, hold.train, holdout, pool, configs, ps,
                                       Rng::splitmix64(ctx.seed ^ 0x401dULL));
    int classes = fit.classes;
    bool binary = classes == 2;
    out.holdout.name = "holdout" + tag;
    out.holdout.columns = {"METRICS"};
    for (const auto& c : configs) out.holdout.columns.push_back(c.name);

    std::vector<ClassificationReport> reports;
    std::vector<double> aucs(configs.size(), 0.0);
    for (std::size_t ci = 0; ci < configs.size(); ++ci) {
        auto pred = argmax_labels(fit.eval_proba[ci], holdout.rows, classes);
        auto cm = ConfusionMatrix::from_predictions(holdout.labels, pred, classes);
        reports.push_back(classification_report(cm));
        if (binary) {
            std::vector<double> scores(holdout.rows);
            for (std::size_t r = 0; r < holdout.rows; ++r)
                scores[r] = fit.eval_proba[ci][r * classes + 1];
            RocResult roc = roc_auc(scores, holdout.labels);
            aucs[ci] = roc.auc;
            std::string fname = "roc_" + configs[ci].name + tag + ".svg";
            write_roc_svg(roc, configs[ci].name + tag, ctx.out(fname).string());
            out.rocs.push_back({{"classifier", configs[ci].name}, {"auc", roc.auc},
                                {"file", fname}});
        } else {
            // one-vs-rest ROC per class
            for (int c = 0; c < classes; ++c) {
                std::vector<double> scores(holdout.rows);
                std::vector<int> bin(holdout.rows);
                for (std::size_t r = 0; r < holdout.rows; ++r) {
                    scores[r] = fit.eval_proba[ci][r * classes + c];
                    bin[r] = holdout.labels[r] == c ? 1 : 0;
                }
                RocResult roc = roc_auc(scores, bin);
                std::string cname = c < static_cast<int>(class_names.size())
                                        ? class_names[c]
                                        : "class" + std::to_string(c);
                std::string fname = "roc_" + configs[ci].name + "_" + cname + tag + ".svg";
                write_roc_svg(roc, configs[ci].name + " " + cname + tag,
                              ctx.out(fname).string());
                out.rocs.push_back({{"classifier", configs[ci].name}, {"class", cname},
                                    {"auc", roc.auc}, {"file", fname}});
            }
        }
    }

    auto add_metric_row = [&](const std::string& name,
                              const std::function<double(std::size_t)>& get) {
        std::vector<std::string> row = {name};
        for (std::size_t ci = 0; ci < configs.size(); ++ci)
            row.push_back(format_double(get(ci), 4));
        out.holdout.add_row(std::move(row));
    };
    add_metric_row("ACC", [&](std::size_t ci) { return reports[ci].accuracy; });
    add_metric_row("PRC", [&](std::size_t ci) { return reports[ci].macro_precision; });
    add_metric_row("REC", [&](std::size_t ci) { return reports[ci].macro_recall; });
    add_metric_row("F1-score", [&](std::size_t ci) { return reports[ci].macro_f1; });
    if (binary) {
        add_metric_row("AUC", [&](std::size_t ci) { return aucs[ci]; });
        add_metric_row("BACC", [&](std::size_t ci) { return reports[ci].balanced_accuracy; });
    } else {
        add_metric_row("BMA", [&](std::size_t ci) { return reports[ci].balanced_accuracy; });
        add_metric_row("KAPPA", [&](std::size_t ci) { return reports[ci].kappa; });
    }
    return out;
}

void run_classify(const Context& ctx) {
    check_keys(ctx.config,
               {"pipeline", "seed", "out_dir", "one_based", "features", "manifest",
                "mask_source", "resampling", "smote_k", "classifiers", "standardize",
                "pca_components", "cv_folds", "holdout_fraction", "one_vs_all", "class_names"},
               "classify config");

    PipelineSettings ps;
    ps.standardize = ctx.config.value("standardize", true);
    ps.pca_components = ctx.config.value("pca_components", 70);
    ps.resampling = ctx.config.value("resampling", std::string("none"));
    ps.smote_k = ctx.config.value("smote_k", 5);

    FeatureMatrix all;
    AugmentPool pool;
    bool have_pool = false;
    if (ctx.config.contains("manifest")) {
        LesionFiles files = load_lesion_manifest(ctx.config.at("manifest"));
        all = extract_features(files, ctx.config.value("mask_source", std::string("file")),
                               ctx.jobs);
        if (ps.resampling == "augment") {
            pool = build_augment_pool(files, all, ctx.jobs,
                                      Rng::splitmix64(ctx.seed ^ 0xa06ULL));
            have_pool = true;
        }
    } else if (ctx.config.contains("features")) {
        if (ps.resampling == "augment")
            throw std::runtime_error(
                "resampling 'augment' works at the image level and needs a 'manifest' input");
        all = read_feature_csv(ctx.config.at("features"));
    } else {
        throw std::runtime_error("classify needs 'features' or 'manifest'");
    }

    auto configs = classifier_configs(ctx.config.value(
        "classifiers",
        json::array({{{"name", "mlp"}, {"kind", "mlp"}},
                     {{"name", "forest"}, {"kind", "forest"}},
                     {{"name", "knn"}, {"kind", "knn"}}})));
    int cv_folds = ctx.config.value("cv_folds", 5);
    double holdout_fraction = ctx.config.value("holdout_fraction", 0.2);
    std::vector<std::string> class_names =
        ctx.config.value("class_names", std::vector<std::string>{});

    std::string tag = ps.resampling == "none" ? "" : "_" + ps.resampling;
    json report = report_header(ctx);
    report["resampling"] = ps.resampling;
    json tables = json::array();

    if (ctx.config.value("one_vs_all", false)) {
        int classes = all.class_count();
        for (int c = 0; c < classes; ++c) {
            FeatureMatrix bin = all;
            bin.labels = one_vs_all(all.labels, c);
            AugmentPool bin_pool;
            if (have_pool) {
                bin_pool = pool;
                for (auto& l : bin_pool.rows.labels) l = l == c ? 1 : 0;
            }
            std::string cname = c < static_cast<int>(class_names.size())
                                    ? class_names[c]
                                    : "class" + std::to_string(c);
            std::string bin_tag = tag + "_" + cname + "_vs_others";
            ClassifyTables t = classify_run(ctx, bin, have_pool ? &bin_pool : nullptr, configs,
                                            ps, cv_folds, holdout_fraction,
                                            {std::string("others"), cname}, bin_tag);
            write_table_csv(t.cv, ctx.out("cv" + bin_tag + ".csv").string());
            write_table_csv(t.holdout, ctx.out("holdout" + bin_tag + ".csv").string());
            tables.push_back(table_to_json(t.cv));
            tables.push_back(table_to_json(t.holdout));
            for (const auto& r : t.rocs) report["rocs"].push_back(r);
        }
    } else {
        ClassifyTables t = classify_run(ctx, all, have_pool ? &pool : nullptr, configs, ps,
                                        cv_folds, holdout_fraction, class_names, tag);
        write_table_csv(t.cv, ctx.out("cv" + tag + ".csv").string());
        write_table_csv(t.holdout, ctx.out("holdout" + tag + ".csv").string());
        tables.push_back(table_to_json(t.cv));
        tables.push_back(table_to_json(t.holdout));
        report["rocs"] = t.rocs;
    }
    report["tables"] = tables;
    write_json_file(report, ctx.out("report.json"));
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void run_evaluate(const Context& ctx) {
    check_keys(ctx.config, {"pipeline", "seed", "out_dir", "one_based", "kind", "pred", "ref",
                            "absolute_avd", "spacing"},
               "evaluate config");
    std::string kind = ctx.config.at("kind");
    json report = report_header(ctx);

    if (kind == "segmentation") {
        LabelVolume pred = read_label_volume(ctx.config.at("pred"));
        LabelVolume ref = read_label_volume(ctx.config.at("ref"));
        bool absolute = ctx.config.value("absolute_avd", false);
        int classes = std::max(pred.class_count, ref.class_count);

        Table table;
        table.name = "evaluation";
        table.columns = {"CLASS", "DSC", "HD", "AVD"};
        json per_class = json::array();
        double mean_dice = 0, mean_hd = 0, mean_avd = 0;
        for (int c = 1; c < classes; ++c) {
            double d = dice(pred, ref, c);
            double h = hausdorff(pred, ref, c);
            double a = avd(pred, ref, c, absolute);
            table.add_row({std::to_string(c), format_double(d), format_double(h),
                           format_double(a)});
            per_class.push_back({{"class", c}, {"dice", d}, {"hausdorff_mm", h}, {"avd", a}});
            mean_dice += d;
            mean_hd += h;
            mean_avd += a;
        }
        int n = classes - 1;
        table.add_row({"AVERAGE", format_double(mean_dice / n), format_double(mean_hd / n),
                       format_double(mean_avd / n)});
        write_table_csv(table, ctx.out("evaluation.csv").string());
        report["tables"] = json::array({table_to_json(table)});
        report["per_class"] = per_class;
    } else if (kind == "landmarks") {
        Vec3 spacing{1, 1, 1};
        if (ctx.config.contains("spacing")) {
            auto s = ctx.config.at("spacing");
            spacing = {s.at(0), s.at(1), s.at(2)};
        }
        LandmarkSet pred = read_landmarks(ctx.config.at("pred"), spacing, ctx.one_based);
        LandmarkSet ref = read_landmarks(ctx.config.at("ref"), spacing, ctx.one_based);
        TreResult r = tre(pred, ref, spacing);
        report["tre"] = {{"mean_mm", r.mean_mm},
                         {"std_mm", r.std_mm},
                         {"formatted", format_mean_std(r.mean_mm, r.std_mm)},
                         {"points", r.per_point_mm.size()}};
    } else {
        throw std::runtime_error("unknown evaluate kind '" + kind + "'");
    }
    write_json_file(report, ctx.out("report.json"));
}

}  // namespace

int run_pipeline(const std::string& subcommand, const std::string& config_text,
                 const CliOptions& opts) {
    try {
        json config = json::parse(config_text);
        Context ctx = make_context(std::move(config), subcommand, opts);
        if (subcommand == "phantom")
            run_phantom(ctx);
        else if (subcommand == "preprocess")
            run_preprocess(ctx);
        else if (subcommand == "segment")
            run_segment(ctx);
        else if (subcommand == "register")
            run_register(ctx);
        else if (subcommand == "transform-points")
            run_transform_points(ctx);
        else if (subcommand == "features")
            run_features(ctx);
        else if (subcommand == "classify")
            run_classify(ctx);
        else if (subcommand == "evaluate")
            run_evaluate(ctx);
        else
            throw std::runtime_error("unknown subcommand '" + subcommand + "'");
        return 0;
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        err["pipeline"] = subcommand;
        std::cerr << err.dump(2) << std::endl;
        return 1;
    }
}

int run_pipeline_file(const std::string& subcommand, const std::string& config_path,
                      const CliOptions& opts) {
    std::ifstream in(config_path);
    if (!in) {
        json err;
        err["error"] = config_path + ": cannot open config";
        std::cerr << err.dump(2) << std::endl;
        return 1;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return run_pipeline(subcommand, text, opts);
}

}  // namespace mia
