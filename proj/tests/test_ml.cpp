#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mia/ml.hpp"
#include "mia/rng.hpp"

using namespace mia;

namespace {

FeatureMatrix matrix_from(const std::vector<std::vector<double>>& rows,
                          const std::vector<int>& labels) {
    FeatureMatrix m;
    m.rows = rows.size();
    m.cols = rows.empty() ? 0 : rows[0].size();
    m.labels = labels;
    for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
    return m;
}

FeatureMatrix random_blobs(int per_class, int classes, int dims, double spread,
                           std::uint64_t seed) {
    Rng rng(seed);
    FeatureMatrix m;
    m.cols = dims;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            for (int d = 0; d < dims; ++d)
                m.data.push_back(c * 4.0 + (d % (c + 1)) + rng.normal(0.0, spread));
            m.labels.push_back(c);
            ++m.rows;
        }
    return m;
}

}  // namespace

TEST_CASE("standardize: train set becomes zero-mean unit-variance") {
    FeatureMatrix m = random_blobs(20, 2, 5, 1.0, 4);
    Scaler s = standardize_fit(m);
    FeatureMatrix z = standardize_apply(s, m);
    for (std::size_t c = 0; c < z.cols; ++c) {
        double mean = 0;
        for (std::size_t r = 0; r < z.rows; ++r) mean += z.at(r, c);
        mean /= z.rows;
        CHECK(std::abs(mean) < 1e-9);
        double var = 0;
        for (std::size_t r = 0; r < z.rows; ++r) var += z.at(r, c) * z.at(r, c);
        var /= (z.rows - 1);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("standardize: constant columns center to zero; the mean row maps to zero") {
    FeatureMatrix m = matrix_from({{5, 1}, {5, 3}, {5, 5}}, {0, 0, 1});
    Scaler s = standardize_fit(m);
    FeatureMatrix z = standardize_apply(s, m);
    for (std::size_t r = 0; r < 3; ++r) CHECK(z.at(r, 0) == 0.0);

    FeatureMatrix mean_row = matrix_from({{5, 3}}, {0});
    FeatureMatrix zm = standardize_apply(s, mean_row);
    CHECK(zm.at(0, 0) == 0.0);
    CHECK(zm.at(0, 1) == 0.0);
}

TEST_CASE("pca on a line finds the line direction") {
    Rng rng(8);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 50; ++i) {
        double t = rng.uniform(-3, 3);
        rows.push_back({t, 2 * t});
    }
    FeatureMatrix m = matrix_from(rows, std::vector<int>(50, 0));
    PcaModel pca = pca_fit(m, 2);
    double inv_sqrt5 = 1.0 / std::sqrt(5.0);
    CHECK(std::abs(pca.components[0]) == doctest::Approx(inv_sqrt5).epsilon(1e-9));
    CHECK(std::abs(pca.components[1]) == doctest::Approx(2 * inv_sqrt5).epsilon(1e-9));
    CHECK(pca.components[1] > 0);  // sign convention: largest coordinate positive
    CHECK(pca.explained_variance[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("pca components are orthonormal with non-increasing variances") {
    FeatureMatrix m = random_blobs(30, 3, 12, 1.5, 9);
    PcaModel pca = pca_fit(m, 8);
    for (std::size_t i = 0; i < pca.k; ++i)
        for (std::size_t j = 0; j < pca.k; ++j) {
            double dot = 0;
            for (std::size_t d = 0; d < pca.d; ++d)
                dot += pca.components[i * pca.d + d] * pca.components[j * pca.d + d];
            CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
        }
    for (std::size_t i = 1; i < pca.k; ++i)
        CHECK(pca.explained_variance[i] <= pca.explained_variance[i - 1] + 1e-12);
}

TEST_CASE("full-rank pca reconstructs the data") {
    FeatureMatrix m = random_blobs(20, 2, 6, 1.0, 10);
    PcaModel pca = pca_fit(m, 6);
    FeatureMatrix proj = pca_project(pca, m);
    double rms = 0;
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t d = 0; d < m.cols; ++d) {
            double rec = pca.mean[d];
            for (std::size_t k = 0; k < pca.k; ++k)
                rec += proj.at(r, k) * pca.components[k * pca.d + d];
            rms += (rec - m.at(r, d)) * (rec - m.at(r, d));
        }
    CHECK(std::sqrt(rms / (m.rows * m.cols)) < 1e-8);
}

TEST_CASE("pca rejects too many components") {
    FeatureMatrix m = random_blobs(5, 1, 8, 1.0, 11);
    CHECK_THROWS(pca_fit(m, 7));  // k must be <= n-1 = 4
}

TEST_CASE("smote balances all classes to the majority count") {
    FeatureMatrix m = random_blobs(10, 1, 3, 1.0, 12);
    FeatureMatrix minority = random_blobs(3, 1, 3, 1.0, 13);
    for (std::size_t r = 0; r < minority.rows; ++r) {
        for (std::size_t c = 0; c < 3; ++c) m.data.push_back(minority.at(r, c) + 10);
        m.labels.push_back(1);
        ++m.rows;
    }
    FeatureMatrix out = smote(m, 5, 42);
    auto counts = out.class_counts();
    CHECK(counts[0] == 10);
    CHECK(counts[1] == 10);
    // originals preserved and ordered first
    for (std::size_t r = 0; r < m.rows; ++r) {
        CHECK(out.labels[r] == m.labels[r]);
        for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(r, c) == m.at(r, c));
    }
}

TEST_CASE("smote with a 2-point minority stays on their segment") {
    FeatureMatrix m = random_blobs(8, 1, 4, 0.5, 14);
    std::vector<double> p = {10, 10, 10, 10}, q = {12, 14, 10, 8};
    for (double v : p) m.data.push_back(v);
    m.labels.push_back(1);
    ++m.rows;
    for (double v : q) m.data.push_back(v);
    m.labels.push_back(1);
    ++m.rows;

    FeatureMatrix out = smote(m, 5, 7);
    for (std::size_t r = m.rows; r < out.rows; ++r) {
        REQUIRE(out.labels[r] == 1);
        // residual from the p-q segment
        double t = (out.at(r, 1) - p[1]) / (q[1] - p[1]);
        for (std::size_t c = 0; c < 4; ++c) {
            double expect = p[c] + t * (q[c] - p[c]);
            CHECK(std::abs(out.at(r, c) - expect) < 1e-9);
        }
        CHECK(t >= -1e-12);
        CHECK(t <= 1.0 + 1e-12);
    }
}

TEST_CASE("smote synthetics stay inside the minority bounding box") {
    Rng rng(15);
    FeatureMatrix m = random_blobs(20, 1, 5, 2.0, 16);
    for (int i = 0; i < 6; ++i) {
        for (int c = 0; c < 5; ++c) m.data.push_back(rng.uniform(50, 60));
        m.labels.push_back(1);
        ++m.rows;
    }
    FeatureMatrix out = smote(m, 3, 99);
    std::vector<double> lo(5, 1e300), hi(5, -1e300);
    for (std::size_t r = 0; r < m.rows; ++r) {
        if (m.labels[r] != 1) continue;
        for (int c = 0; c < 5; ++c) {
            lo[c] = std::min(lo[c], m.at(r, c));
            hi[c] = std::max(hi[c], m.at(r, c));
        }
    }
    for (std::size_t r = m.rows; r < out.rows; ++r)
        for (int c = 0; c < 5; ++c) {
            CHECK(out.at(r, c) >= lo[c] - 1e-9);
            CHECK(out.at(r, c) <= hi[c] + 1e-9);
        }
}

TEST_CASE("smote rejects singleton minority classes") {
    FeatureMatrix m = random_blobs(5, 1, 2, 1.0, 17);
    m.data.push_back(0);
    m.data.push_back(0);
    m.labels.push_back(1);
    ++m.rows;
    CHECK_THROWS(smote(m, 5, 0));
}

TEST_CASE("class_weights follows the balanced rule") {
    auto w = class_weights({0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == doctest::Approx(1.0));

    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(0);
    for (int i = 0; i < 10; ++i) labels.push_back(1);
    auto w2 = class_weights(labels);
    CHECK(w2[0] == doctest::Approx(40.0 / (2 * 30)));
    CHECK(w2[1] == doctest::Approx(2.0));
    // weighted sample count identity
    CHECK(30 * w2[0] + 10 * w2[1] == doctest::Approx(40.0));
}

TEST_CASE("stratified 5-fold split of 60/40 gives 12/8 per fold") {
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) labels.push_back(0);
    for (int i = 0; i < 40; ++i) labels.push_back(1);
    SplitConfig cfg;
    cfg.scheme = SplitConfig::StratifiedKFold;
    cfg.k = 5;
    cfg.seed = 3;
    SplitResult res = split(labels, cfg);
    REQUIRE(res.folds.size() == 5);
    std::vector<int> seen(100, 0);
    for (const auto& fold : res.folds) {
        int c0 = 0, c1 = 0;
        for (auto i : fold) {
            ++seen[i];
            (labels[i] == 0 ? c0 : c1)++;
        }
        CHECK(c0 == 12);
        CHECK(c1 == 8);
    }
    for (int s : seen) CHECK(s == 1);  // disjoint and covering
}

TEST_CASE("stratified shuffle split takes 80% of each class") {
    std::vector<int> labels;
    for (int i = 0; i < 50; ++i) labels.push_back(0);
    for (int i = 0; i < 50; ++i) labels.push_back(1);
    SplitConfig cfg;
    cfg.scheme = SplitConfig::StratifiedShuffle;
    cfg.train_fraction = 0.8;
    cfg.seed = 1;
    SplitResult res = split(labels, cfg);
    int c0 = 0, c1 = 0;
    for (auto i : res.train) (labels[i] == 0 ? c0 : c1)++;
    CHECK(c0 == 40);
    CHECK(c1 == 40);
    CHECK(res.folds.front().size() == 20);
}

TEST_CASE("splits are deterministic under a fixed seed") {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 3);
    SplitConfig cfg;
    cfg.scheme = SplitConfig::StratifiedKFold;
    cfg.k = 4;
    cfg.seed = 77;
    auto a = split(labels, cfg);
    auto b = split(labels, cfg);
    CHECK(a.folds == b.folds);
}

TEST_CASE("split rejects classes smaller than k") {
    std::vector<int> labels = {0, 0, 0, 0, 1};
    SplitConfig cfg;
    cfg.scheme = SplitConfig::StratifiedKFold;
    cfg.k = 3;
    CHECK_THROWS(split(labels, cfg));
}

TEST_CASE("knn with k=1 memorizes its training set") {
    FeatureMatrix m = random_blobs(10, 3, 4, 0.5, 20);
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Knn;
    spec.k = 1;
    auto model = train(spec, m);
    auto pred = predict_labels(*model, m);
    CHECK(pred == m.labels);
}

TEST_CASE("single-tree forest memorizes distinct training points") {
    FeatureMatrix m = random_blobs(8, 3, 4, 0.5, 21);
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Forest;
    spec.trees = 40;  // bootstrap misses some rows, a small ensemble covers them
    spec.seed = 5;
    auto model = train(spec, m);
    auto pred = predict_labels(*model, m);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == m.labels[i];
    CHECK(static_cast<double>(correct) / pred.size() >= 0.95);
}

TEST_CASE("all predict_proba rows sum to one") {
    FeatureMatrix m = random_blobs(12, 3, 5, 1.0, 22);
    for (auto kind : {ClassifierSpec::Knn, ClassifierSpec::Mlp, ClassifierSpec::Forest}) {
        ClassifierSpec spec;
        spec.kind = kind;
        spec.epochs = 50;
        spec.trees = 20;
        spec.seed = 3;
        auto model = train(spec, m);
        auto proba = model->predict_proba(m);
        for (std::size_t r = 0; r < m.rows; ++r) {
            double sum = 0;
            for (int c = 0; c < model->classes(); ++c) {
                double p = proba[r * model->classes() + c];
                CHECK(p >= 0.0);
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("MLP analytic gradient matches central finite differences") {
    FeatureMatrix m = random_blobs(5, 2, 4, 1.0, 23);  // 10-sample toy set
    std::vector<double> weights = {1.0, 1.5};
    MlpGradientCheck check = mlp_gradient_at(m, 8, 7, weights);

    double max_rel = 0.0;
    const double h = 1e-5;
    for (std::size_t j = 0; j < check.params.size(); ++j) {
        std::vector<double> p = check.params;
        p[j] += h;
        double lp = mlp_loss_at(m, 8, weights, p);
        p[j] -= 2 * h;
        double lm = mlp_loss_at(m, 8, weights, p);
        double fd = (lp - lm) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(check.analytic_gradient[j]), 1e-8});
        max_rel = std::max(max_rel, std::abs(fd - check.analytic_gradient[j]) / denom);
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("MLP training loss is non-increasing under the halving schedule") {
    FeatureMatrix m = random_blobs(15, 3, 6, 1.2, 24);
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Mlp;
    spec.epochs = 40;
    spec.learning_rate = 0.5;  // intentionally aggressive
    spec.seed = 11;
    auto model = train(spec, m);
    // the final loss must not exceed the loss of the untrained network
    ClassifierSpec fresh = spec;
    fresh.epochs = 0;
    auto untrained = train(fresh, m);
    CHECK(mlp_final_loss(*model) <= mlp_final_loss(*untrained) + 1e-12);
}

TEST_CASE("MLP separates well-separated blobs") {
    FeatureMatrix m = random_blobs(20, 3, 6, 0.8, 25);
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Mlp;
    spec.epochs = 300;
    spec.learning_rate = 0.1;
    spec.seed = 2;
    auto model = train(spec, m);
    auto pred = predict_labels(*model, m);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == m.labels[i];
    CHECK(static_cast<double>(correct) / pred.size() >= 0.95);
}

TEST_CASE("training and prediction are bit-reproducible for fixed seeds") {
    FeatureMatrix m = random_blobs(10, 2, 5, 1.0, 26);
    for (auto kind : {ClassifierSpec::Mlp, ClassifierSpec::Forest}) {
        ClassifierSpec spec;
        spec.kind = kind;
        spec.epochs = 30;
        spec.trees = 15;
        spec.seed = 12345;
        auto m1 = train(spec, m);
        auto m2 = train(spec, m);
        CHECK(m1->predict_proba(m) == m2->predict_proba(m));
        CHECK(m1->to_json() == m2->to_json());
    }
}

TEST_CASE("classifiers serialize to JSON and reload with identical predictions") {
    FeatureMatrix m = random_blobs(8, 2, 3, 1.0, 27);
    for (auto kind : {ClassifierSpec::Knn, ClassifierSpec::Mlp, ClassifierSpec::Forest}) {
        ClassifierSpec spec;
        spec.kind = kind;
        spec.epochs = 20;
        spec.trees = 10;
        spec.seed = 9;
        auto model = train(spec, m);
        auto back = classifier_from_json(model->to_json());
        CHECK(back->predict_proba(m) == model->predict_proba(m));
    }
}

TEST_CASE("soft-vote ensemble averages member probabilities") {
    FeatureMatrix m = random_blobs(10, 2, 4, 1.0, 28);
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Forest;
    spec.trees = 10;
    spec.seed = 1;
    auto a = train(spec, m);
    spec.seed = 2;
    auto b = train(spec, m);

    auto pa = a->predict_proba(m);
    auto pb = b->predict_proba(m);
    auto mean = ensemble_soft_vote({a.get(), b.get()}, m);
    for (std::size_t i = 0; i < mean.size(); ++i)
        CHECK(mean[i] == doctest::Approx((pa[i] + pb[i]) / 2).epsilon(1e-12));

    auto solo = ensemble_soft_vote({a.get()}, m);
    CHECK(solo == pa);

    auto same = ensemble_soft_vote({a.get(), a.get()}, m);
    for (std::size_t i = 0; i < same.size(); ++i)
        CHECK(same[i] == doctest::Approx(pa[i]).epsilon(1e-12));
}

TEST_CASE("one_vs_all binarizes labels") {
    std::vector<int> labels = {0, 1, 2, 1, 0};
    CHECK(one_vs_all(labels, 0) == std::vector<int>{1, 0, 0, 0, 1});
    CHECK(one_vs_all(labels, 2) == std::vector<int>{0, 0, 1, 0, 0});
    CHECK(one_vs_all({1, 1}, 1) == std::vector<int>{1, 1});
    CHECK_THROWS(one_vs_all(labels, 5));
}
