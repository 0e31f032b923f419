#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mia/metrics.hpp"
#include "mia/rng.hpp"

using namespace mia;

namespace {

LabelVolume mask_of(const std::vector<std::uint8_t>& data, Dims3 dims,
                    const Vec3& spacing = {1, 1, 1}) {
    LabelVolume l = make_labels(dims, 2, spacing);
    l.data = data;
    return l;
}

// pairwise-comparison AUC oracle with half credit for ties
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double num = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            pairs += 1;
            if (scores[i] > scores[j])
                num += 1;
            else if (scores[i] == scores[j])
                num += 0.5;
        }
    return num / pairs;
}

}  // namespace

TEST_CASE("dice basics") {
    LabelVolume a = mask_of({1, 1, 0, 0, 1, 1, 0, 0}, {8, 1, 1});
    CHECK(dice(a, a, 1) == 1.0);
    LabelVolume b = mask_of({0, 0, 1, 1, 0, 0, 1, 1}, {8, 1, 1});
    CHECK(dice(a, b, 1) == 0.0);
    LabelVolume c = mask_of({1, 1, 1, 1, 0, 0, 0, 0}, {8, 1, 1});
    LabelVolume d = mask_of({0, 0, 1, 1, 1, 1, 0, 0}, {8, 1, 1});
    CHECK(dice(c, d, 1) == 0.5);  // |A|=|B|=4, overlap 2
    LabelVolume e = mask_of({0, 0, 0, 0, 0, 0, 0, 0}, {8, 1, 1});
    CHECK(dice(e, e, 1) == 1.0);  // both empty
}

TEST_CASE("dice is symmetric and matches 2J/(1+J) on random masks") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        LabelVolume a = make_labels({6, 6, 6}, 2);
        LabelVolume b = make_labels({6, 6, 6}, 2);
        for (auto& v : a.data) v = rng.uniform() < 0.4;
        for (auto& v : b.data) v = rng.uniform() < 0.4;
        double dab = dice(a, b, 1), dba = dice(b, a, 1);
        CHECK(dab == dba);
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            inter += a.data[i] && b.data[i];
            uni += a.data[i] || b.data[i];
        }
        if (uni > 0) {
            double jaccard = static_cast<double>(inter) / uni;
            CHECK(dab == doctest::Approx(2 * jaccard / (1 + jaccard)).epsilon(1e-12));
        }
        CHECK(dab >= 0.0);
        CHECK(dab <= 1.0);
    }
}

TEST_CASE("hausdorff on single voxels equals the point distance") {
    LabelVolume a = make_labels({8, 8, 8}, 2);
    LabelVolume b = make_labels({8, 8, 8}, 2);
    a.at(0, 0, 0) = 1;
    b.at(3, 4, 0) = 1;
    CHECK(hausdorff(a, b, 1) == doctest::Approx(5.0));
    CHECK(hausdorff(a, a, 1) == 0.0);
}

TEST_CASE("hausdorff takes the directed max") {
    LabelVolume a = make_labels({16, 4, 4}, 2);
    LabelVolume b = make_labels({16, 4, 4}, 2);
    a.at(0, 0, 0) = 1;
    a.at(10, 0, 0) = 1;
    b.at(0, 0, 0) = 1;
    CHECK(hausdorff(a, b, 1) == doctest::Approx(10.0));
    CHECK(hausdorff(b, a, 1) == doctest::Approx(10.0));
}

TEST_CASE("hausdorff respects spacing and rejects empty masks") {
    LabelVolume a = make_labels({8, 8, 1}, 2, {2, 2, 2});
    LabelVolume b = make_labels({8, 8, 1}, 2, {2, 2, 2});
    a.at(0, 0, 0) = 1;
    b.at(3, 0, 0) = 1;
    CHECK(hausdorff(a, b, 1) == doctest::Approx(6.0));
    LabelVolume empty = make_labels({8, 8, 1}, 2, {2, 2, 2});
    CHECK_THROWS(hausdorff(a, empty, 1));
}

TEST_CASE("avd is signed with an absolute option") {
    LabelVolume ref = make_labels({12, 12, 1}, 2);
    LabelVolume pred = make_labels({12, 12, 1}, 2);
    for (int i = 0; i < 100; ++i) ref.data[i] = 1;
    for (int i = 0; i < 110; ++i) pred.data[i] = 1;
    CHECK(avd(pred, ref, 1) == doctest::Approx(0.10));
    for (int i = 90; i < 110; ++i) pred.data[i] = 0;
    CHECK(avd(pred, ref, 1) == doctest::Approx(-0.10));
    CHECK(avd(pred, ref, 1, true) == doctest::Approx(0.10));
    CHECK(avd(ref, ref, 1) == 0.0);
    LabelVolume empty = make_labels({12, 12, 1}, 2);
    CHECK_THROWS(avd(pred, empty, 1));
}

TEST_CASE("tre: identical, offset, and spacing-scaled sets") {
    LandmarkSet a, b;
    a.spacing = b.spacing = {1, 1, 1};
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        Vec3 p{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(0, 50)};
        a.points.push_back(p);
        b.points.push_back(p);
    }
    TreResult same = tre(a, b, {1, 1, 1});
    CHECK(same.mean_mm == 0.0);
    CHECK(same.std_mm == 0.0);

    LandmarkSet c = a;
    for (auto& p : c.points) p = p + Vec3{3, 4, 0};
    TreResult off = tre(c, a, {1, 1, 1});
    CHECK(off.mean_mm == doctest::Approx(5.0));
    CHECK(off.std_mm == doctest::Approx(0.0));

    TreResult scaled = tre(c, a, {2, 2, 2});
    CHECK(scaled.mean_mm == doctest::Approx(10.0));

    LandmarkSet wrong;
    wrong.points = {{0, 0, 0}};
    CHECK_THROWS(tre(wrong, a, {1, 1, 1}));
}

TEST_CASE("classification report on a diagonal matrix") {
    ConfusionMatrix cm;
    cm.class_count = 3;
    cm.counts = {5, 0, 0, 0, 7, 0, 0, 0, 9};
    ClassificationReport rep = classification_report(cm);
    CHECK(rep.accuracy == 1.0);
    CHECK(rep.kappa == doctest::Approx(1.0));
    CHECK(rep.balanced_accuracy == doctest::Approx(1.0));
}

TEST_CASE("classification report matches the worked 2x2 example") {
    ConfusionMatrix cm;
    cm.class_count = 2;
    cm.counts = {40, 10, 20, 30};
    ClassificationReport rep = classification_report(cm);
    CHECK(rep.accuracy == doctest::Approx(0.7));
    CHECK(rep.kappa == doctest::Approx(0.4));  // p_o = 0.7, p_e = 0.5
    CHECK(rep.recall[0] == doctest::Approx(0.8));
    CHECK(rep.recall[1] == doctest::Approx(0.6));
    CHECK(rep.balanced_accuracy == doctest::Approx(0.7));
    CHECK(rep.precision[0] == doctest::Approx(40.0 / 60.0));
    CHECK(rep.f1[0] == doctest::Approx(2 * (2.0 / 3) * 0.8 / ((2.0 / 3) + 0.8)));
}

TEST_CASE("kappa vanishes when predictions are independent of truth") {
    ConfusionMatrix cm;
    cm.class_count = 3;
    cm.counts.assign(9, 0);
    std::size_t rows[3] = {10, 20, 30};
    std::size_t cols[3] = {6, 3, 1};
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) cm.at(t, p) = rows[t] * cols[p];
    ClassificationReport rep = classification_report(cm);
    CHECK(std::abs(rep.kappa) < 1e-12);
}

TEST_CASE("report formulas match direct evaluation on random confusion matrices") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        int k = 2 + static_cast<int>(rng.below(3));
        ConfusionMatrix cm;
        cm.class_count = k;
        cm.counts.resize(k * k);
        for (auto& c : cm.counts) c = rng.below(30);
        if (cm.total() == 0) cm.counts[0] = 1;
        ClassificationReport rep = classification_report(cm);

        double n = static_cast<double>(cm.total());
        double diag = 0, pe = 0, recall_sum = 0, f1_sum = 0;
        for (int c = 0; c < k; ++c) {
            double row = 0, col = 0;
            for (int j = 0; j < k; ++j) {
                row += cm.at(c, j);
                col += cm.at(j, c);
            }
            diag += cm.at(c, c);
            pe += row * col / (n * n);
            double rec = row > 0 ? cm.at(c, c) / row : 0.0;
            double prc = col > 0 ? cm.at(c, c) / col : 0.0;
            recall_sum += rec;
            f1_sum += (prc + rec) > 0 ? 2 * prc * rec / (prc + rec) : 0.0;
        }
        CHECK(rep.accuracy == doctest::Approx(diag / n).epsilon(1e-12));
        CHECK(rep.balanced_accuracy == doctest::Approx(recall_sum / k).epsilon(1e-12));
        CHECK(rep.macro_f1 == doctest::Approx(f1_sum / k).epsilon(1e-12));
        if (pe < 1.0)
            CHECK(rep.kappa == doctest::Approx((diag / n - pe) / (1.0 - pe)).epsilon(1e-9));
        bool diagonal = diag == n;
        if (diagonal)
            CHECK(rep.kappa == doctest::Approx(1.0));
        else
            CHECK(rep.kappa < 1.0);
    }
}

TEST_CASE("confusion counts are invariant to sample order") {
    std::vector<int> truth = {0, 1, 1, 0, 2, 1, 0, 2};
    std::vector<int> pred = {0, 1, 0, 0, 2, 1, 1, 2};
    auto cm1 = ConfusionMatrix::from_predictions(truth, pred, 3);
    std::vector<std::size_t> perm = {7, 2, 5, 0, 4, 6, 1, 3};
    std::vector<int> t2, p2;
    for (auto i : perm) {
        t2.push_back(truth[i]);
        p2.push_back(pred[i]);
    }
    auto cm2 = ConfusionMatrix::from_predictions(t2, p2, 3);
    CHECK(cm1.counts == cm2.counts);
}

TEST_CASE("roc_auc: separable, constant, and random-vs-oracle") {
    std::vector<double> sep = {0.9, 0.8, 0.2, 0.1};
    std::vector<int> lab = {1, 1, 0, 0};
    CHECK(roc_auc(sep, lab).auc == doctest::Approx(1.0));

    std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
    CHECK(roc_auc(flat, lab).auc == doctest::Approx(0.5));

    Rng rng(13);
    for (int trial = 0; trial < 25; ++trial) {
        std::size_t n = 20 + rng.below(40);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::round(rng.uniform() * 10) / 10.0;  // force ties
            labels[i] = rng.uniform() < 0.5 ? 0 : 1;
            (labels[i] ? has1 : has0) = true;
        }
        if (!has0) labels[0] = 0;
        if (!has1) labels[1] = 1;
        RocResult r = roc_auc(scores, labels);
        CHECK(r.auc == doctest::Approx(auc_oracle(scores, labels)).epsilon(1e-12));

        std::vector<double> neg(n);
        for (std::size_t i = 0; i < n; ++i) neg[i] = -scores[i];
        CHECK(roc_auc(neg, labels).auc == doctest::Approx(1.0 - r.auc).epsilon(1e-12));
    }
}

TEST_CASE("roc_auc rejects single-class labels") {
    CHECK_THROWS(roc_auc({0.1, 0.2}, {1, 1}));
}

TEST_CASE("segmentation_score aggregates per-class metrics") {
    LabelVolume ref = make_labels({10, 10, 1}, 3);
    LabelVolume pred = make_labels({10, 10, 1}, 3);
    for (int i = 0; i < 30; ++i) ref.data[i] = 1;
    for (int i = 30; i < 60; ++i) ref.data[i] = 2;
    pred.data = ref.data;
    SegScore s = segmentation_score(pred, ref);
    CHECK(s.dice.size() == 2);
    CHECK(s.mean_dice == doctest::Approx(1.0));
    CHECK(s.mean_hausdorff == doctest::Approx(0.0));
}
