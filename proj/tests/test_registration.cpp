#include <doctest.h>

#include <cmath>

#include "mia/registration.hpp"
#include "mia/rng.hpp"

using namespace mia;

namespace {

ScalarVolume blob_volume(int n, std::uint64_t seed = 5) {
    // smooth structured volume: two gaussian blobs plus a gradient
    ScalarVolume v = make_volume({n, n, n});
    Rng rng(seed);
    double cx1 = n * 0.35, cy1 = n * 0.4, cz1 = n * 0.5;
    double cx2 = n * 0.65, cy2 = n * 0.6, cz2 = n * 0.45;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double d1 = ((x - cx1) * (x - cx1) + (y - cy1) * (y - cy1) +
                             (z - cz1) * (z - cz1)) /
                            (n * n * 0.02);
                double d2 = ((x - cx2) * (x - cx2) + (y - cy2) * (y - cy2) +
                             (z - cz2) * (z - cz2)) /
                            (n * n * 0.01);
                v.at(x, y, z) = std::exp(-d1) + 0.7 * std::exp(-d2) + 0.001 * x +
                                0.002 * rng.uniform();
            }
    return v;
}

std::vector<ParameterMap> quick_affine(Metric metric) {
    ParameterMap m;
    m.transform_kind = TransformKind::Affine;
    m.metric = metric;
    m.pyramid_levels = 2;
    m.pyramid_schedule = {2, 1};
    m.iterations_per_level = {40, 25};
    m.step_init = 2.0;
    m.step_min = 0.002;
    m.sampler_full = true;
    return {m};
}

}  // namespace

TEST_CASE("similarity: identical volumes give MSE 0 and NCC 1") {
    ScalarVolume v = blob_volume(12);
    CHECK(similarity(v, v, Metric::MSE) == doctest::Approx(0.0));
    CHECK(similarity(v, v, Metric::NCC) == doctest::Approx(-1.0));
}

TEST_CASE("similarity: additive offset keeps NCC at 1 and MSE at offset^2") {
    ScalarVolume v = blob_volume(10);
    ScalarVolume w = v;
    for (auto& x : w.data) x += 2.5;
    CHECK(similarity(v, w, Metric::NCC) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(similarity(v, w, Metric::MSE) == doctest::Approx(6.25).epsilon(1e-12));
}

TEST_CASE("similarity: two-level self-comparison carries 1 bit of MI") {
    ScalarVolume v = make_volume({8, 8, 1});
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = i % 2 ? 1.0 : 0.0;
    double cost = similarity(v, v, Metric::MI, 64);
    CHECK(-cost == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("similarity error paths: empty mask and zero variance") {
    ScalarVolume v = blob_volume(8);
    LabelVolume mask = make_labels(v.dims, 2, v.spacing, v.origin);
    CHECK_THROWS_WITH_AS(similarity(v, v, Metric::MSE, 64, &mask),
                         doctest::Contains("empty"), std::runtime_error);
    ScalarVolume flat = make_volume(v.dims, {1, 1, 1}, {0, 0, 0}, 1.0);
    CHECK_THROWS_WITH_AS(similarity(v, flat, Metric::NCC), doctest::Contains("zero-variance"),
                         std::runtime_error);
}

TEST_CASE("NCC is invariant to positive affine intensity maps") {
    ScalarVolume v = blob_volume(10);
    ScalarVolume w = blob_volume(10, 77);
    double base = similarity(v, w, Metric::NCC);
    ScalarVolume v2 = v;
    for (auto& x : v2.data) x = 3.7 * x + 11.0;
    ScalarVolume w2 = w;
    for (auto& x : w2.data) x = 0.4 * x - 2.0;
    CHECK(similarity(v2, w, Metric::NCC) == doctest::Approx(base).epsilon(1e-9));
    CHECK(similarity(v, w2, Metric::NCC) == doctest::Approx(base).epsilon(1e-9));
    CHECK(similarity(v2, w2, Metric::NCC) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("MI of a structured volume peaks at zero shift and is non-negative") {
    ScalarVolume v = blob_volume(16);
    double self_mi = -similarity(v, v, Metric::MI);
    CHECK(self_mi >= 0.0);
    TransformChain chain;
    for (double shift : {1.0, 2.0, 4.0}) {
        chain.stages.clear();
        chain.stages.push_back(AffineTransform::translation_mm({shift, 0, 0}));
        ScalarVolume shifted = resample(v, chain, v, Interp::Linear);
        double shifted_mi = -similarity(v, shifted, Metric::MI);
        CHECK(shifted_mi >= 0.0);
        CHECK(self_mi >= shifted_mi);
    }
}

TEST_CASE("registering a volume to itself stays near the identity") {
    ScalarVolume v = blob_volume(16);
    RegistrationResult res = register_images(v, v, quick_affine(Metric::MSE), 1);
    REQUIRE(res.chain.stages.size() == 1);
    const auto& a = std::get<AffineTransform>(res.chain.stages[0]);
    CHECK(std::abs(a.translation.x) < 0.1);
    CHECK(std::abs(a.translation.y) < 0.1);
    CHECK(std::abs(a.translation.z) < 0.1);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(a.matrix[r][c] - (r == c ? 1.0 : 0.0)) < 0.02);
}

TEST_CASE("known 4-voxel translation is recovered within half a voxel") {
    ScalarVolume fixed = blob_volume(24);
    AffineTransform truth = AffineTransform::translation_mm({4, 0, 0});
    TransformChain make_moving;
    make_moving.stages.push_back(truth.inverse());
    ScalarVolume moving = resample(fixed, make_moving, fixed, Interp::Linear);
    // now moving(y) = fixed(y - 4): registering fixed->moving should find +4

    RegistrationResult res = register_images(fixed, moving, quick_affine(Metric::MSE), 2);
    const auto& a = std::get<AffineTransform>(res.chain.stages[0]);
    Vec3 probe = a.apply({12, 12, 12}) - Vec3{12, 12, 12};
    CHECK(probe.x == doctest::Approx(4.0).epsilon(0.125));
    CHECK(std::abs(probe.y) < 0.5);
    CHECK(std::abs(probe.z) < 0.5);
}

TEST_CASE("registration is deterministic for a fixed seed") {
    ScalarVolume fixed = blob_volume(16);
    TransformChain shift;
    shift.stages.push_back(AffineTransform::translation_mm({-2, 1, 0}));
    ScalarVolume moving = resample(fixed, shift, fixed, Interp::Linear);

    auto maps = quick_affine(Metric::NCC);
    RegistrationResult r1 = register_images(fixed, moving, maps, 42);
    RegistrationResult r2 = register_images(fixed, moving, maps, 42);
    const auto& a1 = std::get<AffineTransform>(r1.chain.stages[0]);
    const auto& a2 = std::get<AffineTransform>(r2.chain.stages[0]);
    CHECK(a1.translation.x == a2.translation.x);
    CHECK(a1.matrix[0][1] == a2.matrix[0][1]);
    CHECK(r1.per_stage_costs == r2.per_stage_costs);
}

TEST_CASE("per-stage final cost does not exceed the identity-start cost") {
    ScalarVolume fixed = blob_volume(16);
    TransformChain shift;
    shift.stages.push_back(AffineTransform::translation_mm({2, -1, 1}));
    ScalarVolume moving = resample(fixed, shift, fixed, Interp::Linear);
    RegistrationResult res = register_images(fixed, moving, quick_affine(Metric::MSE), 3);
    double identity_cost = similarity(fixed, moving, Metric::MSE);
    CHECK(res.per_stage_costs[0] <= identity_cost + 1e-12);
}

TEST_CASE("constant volumes are rejected") {
    ScalarVolume flat = make_volume({8, 8, 8}, {1, 1, 1}, {0, 0, 0}, 1.0);
    ScalarVolume v = blob_volume(8);
    CHECK_THROWS(register_images(flat, v, quick_affine(Metric::MSE), 0));
    CHECK_THROWS(register_images(v, flat, quick_affine(Metric::MSE), 0));
}

TEST_CASE("parameter maps serialize to JSON and back") {
    ParameterMap m;
    m.transform_kind = TransformKind::Bspline;
    m.metric = Metric::MI;
    m.pyramid_levels = 2;
    m.pyramid_schedule = {2, 1};
    m.iterations_per_level = {15, 10};
    m.grid_spacing_mm = 12.0;
    m.mi_bins = 32;
    m.bending_weight = 0.01;
    m.step_init = 1.5;
    m.step_min = 0.01;
    m.sampler_full = false;
    m.sample_count = 2048;
    m.sampler_seed = 9;

    ParameterMap back = parameter_map_from_json(parameter_map_to_json(m));
    CHECK(back.transform_kind == TransformKind::Bspline);
    CHECK(back.metric == Metric::MI);
    CHECK(back.pyramid_schedule == std::vector<int>{2, 1});
    CHECK(back.grid_spacing_mm == 12.0);
    CHECK(back.mi_bins == 32);
    CHECK(back.bending_weight == 0.01);
    CHECK(back.sample_count == 2048);
    CHECK(back.sampler_seed == 9);

    auto seq = parameter_maps_from_json(parameter_maps_to_json({m, m}));
    CHECK(seq.size() == 2);
}

TEST_CASE("parameter map validation rejects bad schedules") {
    ParameterMap m;
    m.pyramid_schedule = {1, 2, 4};  // increasing
    CHECK_THROWS(m.validate());
    m = ParameterMap{};
    m.pyramid_schedule = {4, 2, 2};  // does not end at 1
    CHECK_THROWS(m.validate());
    m = ParameterMap{};
    m.mi_bins = 4;
    CHECK_THROWS(m.validate());
}

TEST_CASE("preset library exposes the documented names") {
    for (const char* name : {"affine-mse", "affine-mi", "bspline-mi", "bspline-ncc",
                             "bspline-mattes", "combined-best"}) {
        CHECK(PresetLibrary::has(name));
        auto maps = PresetLibrary::get(name);
        CHECK(!maps.empty());
        for (const auto& m : maps) m.validate();
    }
    CHECK(PresetLibrary::get("combined-best").size() == 3);
    CHECK_FALSE(PresetLibrary::has("nope"));
}

TEST_CASE("bspline stage with bending weight still optimizes monotonically") {
    ScalarVolume fixed = blob_volume(12);
    TransformChain shift;
    shift.stages.push_back(AffineTransform::translation_mm({1.5, 0, 0}));
    ScalarVolume moving = resample(fixed, shift, fixed, Interp::Linear);

    ParameterMap m;
    m.transform_kind = TransformKind::Bspline;
    m.metric = Metric::MSE;
    m.pyramid_levels = 1;
    m.pyramid_schedule = {1};
    m.iterations_per_level = {8};
    m.grid_spacing_mm = 6.0;
    m.bending_weight = 1e-3;
    m.step_init = 1.0;
    m.step_min = 0.02;
    m.sampler_full = true;

    RegistrationResult res = register_images(fixed, moving, {m}, 7);
    double identity_cost = similarity(fixed, moving, Metric::MSE);
    CHECK(res.per_stage_costs[0] <= identity_cost + 1e-12);
    CHECK(std::isfinite(res.per_stage_costs[0]));
}
