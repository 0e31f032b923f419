#include "mia/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mia {

std::size_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ConfusionMatrix ConfusionMatrix::from_predictions(const std::vector<int>& truth,
                                                  const std::vector<int>& pred,
                                                  int class_count) {
    if (truth.size() != pred.size()) throw std::invalid_argument("length mismatch");
    ConfusionMatrix cm;
    cm.class_count = class_count;
    cm.counts.assign(static_cast<std::size_t>(class_count) * class_count, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= class_count || pred[i] < 0 || pred[i] >= class_count)
            throw std::invalid_argument("class id out of range");
        ++cm.at(truth[i], pred[i]);
    }
    return cm;
}

double dice(const LabelVolume& a, const LabelVolume& b, int class_id) {
    if (!a.same_grid(b)) throw std::invalid_argument("geometry mismatch");
    std::size_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        bool in_a = a.data[i] == class_id;
        bool in_b = b.data[i] == class_id;
        na += in_a;
        nb += in_b;
        ni += in_a && in_b;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

namespace {

std::vector<Vec3> boundary_mm(const LabelVolume& v, int class_id) {
    std::vector<Vec3> pts;
    const int dx[] = {1, -1, 0, 0, 0, 0};
    const int dy[] = {0, 0, 1, -1, 0, 0};
    const int dz[] = {0, 0, 0, 0, 1, -1};
    for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
            for (int x = 0; x < v.dims[0]; ++x) {
                if (v.at(x, y, z) != class_id) continue;
                bool boundary = false;
                for (int d = 0; d < 6 && !boundary; ++d) {
                    int nx = x + dx[d], ny = y + dy[d], nz = z + dz[d];
                    if (nx < 0 || nx >= v.dims[0] || ny < 0 || ny >= v.dims[1] || nz < 0 ||
                        nz >= v.dims[2] || v.at(nx, ny, nz) != class_id)
                        boundary = true;
                }
                if (boundary)
                    pts.push_back(v.physical({static_cast<double>(x), static_cast<double>(y),
                                              static_cast<double>(z)}));
            }
    return pts;
}

double directed_hd(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double worst = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            Vec3 d = p - q;
            best = std::min(best, d.dot(d));
            if (best == 0.0) break;
        }
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

}  // namespace

double hausdorff(const LabelVolume& a, const LabelVolume& b, int class_id) {
    if (!a.same_grid(b)) throw std::invalid_argument("geometry mismatch");
    auto pa = boundary_mm(a, class_id);
    auto pb = boundary_mm(b, class_id);
    if (pa.empty() || pb.empty()) throw std::runtime_error("empty mask in hausdorff");
    return std::max(directed_hd(pa, pb), directed_hd(pb, pa));
}

double avd(const LabelVolume& pred, const LabelVolume& ref, int class_id, bool absolute) {
    if (!pred.same_grid(ref)) throw std::invalid_argument("geometry mismatch");
    std::size_t vp = 0, vr = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        vp += pred.data[i] == class_id;
        vr += ref.data[i] == class_id;
    }
    if (vr == 0) throw std::runtime_error("empty reference class in avd");
    double v = (static_cast<double>(vp) - static_cast<double>(vr)) / static_cast<double>(vr);
    return absolute ? std::abs(v) : v;
}

SegScore segmentation_score(const LabelVolume& pred, const LabelVolume& ref) {
    SegScore s;
    int classes = std::max(pred.class_count, ref.class_count);
    for (int c = 1; c < classes; ++c) {
        s.dice.push_back(dice(pred, ref, c));
        s.hausdorff.push_back(hausdorff(pred, ref, c));
        s.avd.push_back(avd(pred, ref, c));
    }
    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    };
    s.mean_dice = mean(s.dice);
    s.mean_hausdorff = mean(s.hausdorff);
    s.mean_avd = mean(s.avd);
    return s;
}

TreResult tre(const LandmarkSet& predicted, const LandmarkSet& truth, const Vec3& spacing) {
    if (predicted.size() != truth.size()) throw std::invalid_argument("landmark length mismatch");
    if (predicted.size() == 0) throw std::invalid_argument("empty landmark sets");
    TreResult r;
    r.per_point_mm.reserve(predicted.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        Vec3 d = (predicted.points[i] - truth.points[i]).cwiseMul(spacing);
        double e = d.norm();
        r.per_point_mm.push_back(e);
        sum += e;
    }
    r.mean_mm = sum / predicted.size();
    double ss = 0.0;
    for (double e : r.per_point_mm) ss += (e - r.mean_mm) * (e - r.mean_mm);
    r.std_mm = predicted.size() > 1 ? std::sqrt(ss / (predicted.size() - 1)) : 0.0;
    return r;
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
    std::size_t n = cm.total();
    if (n == 0) throw std::invalid_argument("empty confusion matrix");
    const int k = cm.class_count;
    ClassificationReport rep;
    rep.precision.assign(k, 0.0);
    rep.recall.assign(k, 0.0);
    rep.f1.assign(k, 0.0);
    rep.undefined.assign(k, false);

    double diag = 0.0, pe = 0.0;
    for (int c = 0; c < k; ++c) {
        std::size_t tp = cm.at(c, c);
        std::size_t row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        diag += static_cast<double>(tp);
        pe += (static_cast<double>(row) / n) * (static_cast<double>(col) / n);
        if (col == 0) {
            rep.undefined[c] = true;
        } else {
            rep.precision[c] = static_cast<double>(tp) / col;
        }
        if (row == 0) {
            rep.undefined[c] = true;
        } else {
            rep.recall[c] = static_cast<double>(tp) / row;
        }
        double denom = rep.precision[c] + rep.recall[c];
        rep.f1[c] = denom > 0 ? 2.0 * rep.precision[c] * rep.recall[c] / denom : 0.0;
    }
    rep.accuracy = diag / n;
    auto mean = [&](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / k;
    };
    rep.macro_precision = mean(rep.precision);
    rep.macro_recall = mean(rep.recall);
    rep.macro_f1 = mean(rep.f1);
    rep.balanced_accuracy = rep.macro_recall;
    rep.kappa = pe < 1.0 ? (rep.accuracy - pe) / (1.0 - pe) : 1.0;
    return rep;
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("length mismatch");
    std::size_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw std::runtime_error("single-class labels in roc_auc");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocResult r;
    r.points.push_back({0.0, 0.0});
    double tp = 0, fp = 0, auc = 0, prev_tpr = 0, prev_fpr = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        double s = scores[order[i]];
        // all samples tied at this score cross the threshold together
        while (i < order.size() && scores[order[i]] == s) {
            if (labels[order[i]])
                tp += 1;
            else
                fp += 1;
            ++i;
        }
        double tpr = tp / pos, fpr = fp / neg;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        r.points.push_back({fpr, tpr});
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    r.auc = auc;
    return r;
}

}  // namespace mia
