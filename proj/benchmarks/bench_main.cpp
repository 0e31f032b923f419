#include <benchmark/benchmark.h>

#include "mia/atlas.hpp"
#include "mia/features.hpp"
#include "mia/metrics.hpp"
#include "mia/ml.hpp"
#include "mia/phantom.hpp"
#include "mia/preprocess.hpp"
#include "mia/registration.hpp"
#include "mia/rng.hpp"
#include "mia/transform.hpp"

using namespace mia;

namespace {

const BrainPhantom& brain32() {
    static BrainPhantom ph = [] {
        BrainPhantomConfig cfg;
        cfg.dims = {32, 32, 32};
        cfg.seed = 1;
        return gen_brain_phantom(cfg);
    }();
    return ph;
}

const ScalarVolume& structured48() {
    static ScalarVolume v = gen_structured_volume(48, 2);
    return v;
}

ScalarVolume random_image2d(int n, std::uint64_t seed) {
    ScalarVolume img = make_image2d(n, n);
    Rng rng(seed);
    for (auto& v : img.data) v = rng.uniform(0, 255);
    return img;
}

LabelVolume full_mask2d(int n) {
    LabelVolume m = make_labels({n, n, 1}, 2);
    std::fill(m.data.begin(), m.data.end(), 1);
    return m;
}

}  // namespace

static void BM_ResampleLinear(benchmark::State& state) {
    const ScalarVolume& vol = structured48();
    TransformChain chain;
    AffineTransform a = AffineTransform::rotation_deg(3, -2, 4, {23.5, 23.5, 23.5});
    a.translation = {1.5, -2.0, 0.5};
    chain.stages.push_back(a);
    for (auto _ : state) benchmark::DoNotOptimize(resample(vol, chain, vol, Interp::Linear));
}
BENCHMARK(BM_ResampleLinear)->Unit(benchmark::kMillisecond);

static void BM_Similarity(benchmark::State& state) {
    Metric metric = static_cast<Metric>(state.range(0));
    const ScalarVolume& a = structured48();
    static ScalarVolume b = [] {
        TransformChain shift;
        shift.stages.push_back(AffineTransform::translation_mm({1, 0, 0}));
        return resample(structured48(), shift, structured48(), Interp::Linear);
    }();
    for (auto _ : state) benchmark::DoNotOptimize(similarity(a, b, metric, 64));
}
BENCHMARK(BM_Similarity)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void BM_RegisterAffine(benchmark::State& state) {
    const ScalarVolume& moving = structured48();
    static ScalarVolume fixed = [] {
        TransformChain chain;
        AffineTransform a = AffineTransform::rotation_deg(2, -1, 3, {23.5, 23.5, 23.5});
        a.translation = {2, -1, 1};
        chain.stages.push_back(a);
        return resample(structured48(), chain, structured48(), Interp::Linear);
    }();
    ParameterMap map;
    map.transform_kind = TransformKind::Affine;
    map.metric = Metric::MSE;
    map.pyramid_levels = 2;
    map.pyramid_schedule = {2, 1};
    map.iterations_per_level = {25, 15};
    map.step_init = 2.0;
    map.step_min = 0.01;
    for (auto _ : state) benchmark::DoNotOptimize(register_images(fixed, moving, {map}, 7));
}
BENCHMARK(BM_RegisterAffine)->Unit(benchmark::kMillisecond)->Iterations(3);

static void BM_Otsu(benchmark::State& state) {
    const ScalarVolume& vol = brain32().intensity;
    for (auto _ : state) benchmark::DoNotOptimize(otsu_threshold(vol));
}
BENCHMARK(BM_Otsu)->Unit(benchmark::kMicrosecond);

static void BM_Clahe(benchmark::State& state) {
    static ScalarVolume img = random_image2d(256, 3);
    for (auto _ : state) benchmark::DoNotOptimize(clahe(img));
}
BENCHMARK(BM_Clahe)->Unit(benchmark::kMillisecond);

static void BM_KmeansSegment(benchmark::State& state) {
    static LungSlice slice = [] {
        LungSliceConfig cfg;
        cfg.seed = 4;
        return gen_lung_slice(cfg);
    }();
    for (auto _ : state) benchmark::DoNotOptimize(kmeans_segment(slice.image, 3, 5));
}
BENCHMARK(BM_KmeansSegment)->Unit(benchmark::kMillisecond);

static void BM_GlcmFeatures(benchmark::State& state) {
    static ScalarVolume img = random_image2d(128, 6);
    static LabelVolume mask = full_mask2d(128);
    for (auto _ : state) benchmark::DoNotOptimize(glcm_features(img, mask));
}
BENCHMARK(BM_GlcmFeatures)->Unit(benchmark::kMillisecond);

static void BM_LbpFeatures(benchmark::State& state) {
    static ScalarVolume img = random_image2d(128, 7);
    static LabelVolume mask = full_mask2d(128);
    for (auto _ : state) benchmark::DoNotOptimize(lbp_features(img, mask));
}
BENCHMARK(BM_LbpFeatures)->Unit(benchmark::kMillisecond);

static void BM_FeatureVector(benchmark::State& state) {
    static LesionDataset ds = [] {
        LesionDatasetConfig cfg;
        cfg.counts = {4};
        cfg.knobs = {{40, 0.05, 0.3}};
        cfg.seed = 8;
        return gen_lesion_dataset(cfg);
    }();
    for (auto _ : state)
        benchmark::DoNotOptimize(extract_feature_vector(ds.images[0], ds.masks[0]));
}
BENCHMARK(BM_FeatureVector)->Unit(benchmark::kMillisecond);

static void BM_MlpTrain(benchmark::State& state) {
    static FeatureMatrix data = [] {
        Rng rng(9);
        FeatureMatrix m;
        m.cols = 70;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 50; ++i) {
                for (std::size_t d = 0; d < m.cols; ++d)
                    m.data.push_back(c * 2.0 + rng.normal(0, 1));
                m.labels.push_back(c);
                ++m.rows;
            }
        return m;
    }();
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Mlp;
    spec.epochs = 100;
    spec.seed = 3;
    for (auto _ : state) benchmark::DoNotOptimize(train(spec, data));
}
BENCHMARK(BM_MlpTrain)->Unit(benchmark::kMillisecond)->Iterations(3);

static void BM_Hausdorff(benchmark::State& state) {
    const BrainPhantom& ph = brain32();
    static LabelVolume shifted = [] {
        TransformChain chain;
        chain.stages.push_back(AffineTransform::translation_mm({2, 0, 0}));
        LabelVolume geom = make_labels(brain32().labels.dims, 4);
        return resample_labels(brain32().labels, chain, geom);
    }();
    for (auto _ : state) benchmark::DoNotOptimize(hausdorff(ph.labels, shifted, 2));
}
BENCHMARK(BM_Hausdorff)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
