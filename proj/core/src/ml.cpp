#include "mia/ml.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "mia/rng.hpp"

namespace mia {

Scaler standardize_fit(const FeatureMatrix& train) {
    train.validate();
    if (train.rows < 2) throw std::invalid_argument("standardize_fit needs >= 2 rows");
    Scaler s;
    s.mean.assign(train.cols, 0.0);
    s.std.assign(train.cols, 1.0);
    for (std::size_t r = 0; r < train.rows; ++r)
        for (std::size_t c = 0; c < train.cols; ++c) s.mean[c] += train.at(r, c);
    for (double& m : s.mean) m /= train.rows;
    for (std::size_t c = 0; c < train.cols; ++c) {
        double ss = 0.0;
        for (std::size_t r = 0; r < train.rows; ++r) {
            double d = train.at(r, c) - s.mean[c];
            ss += d * d;
        }
        double var = ss / (train.rows - 1);
        s.std[c] = var > 1e-24 ? std::sqrt(var) : 1.0;  // constant columns center only
    }
    return s;
}

FeatureMatrix standardize_apply(const Scaler& s, const FeatureMatrix& x) {
    if (x.cols != s.mean.size()) throw std::invalid_argument("scaler dimension mismatch");
    FeatureMatrix out = x;
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c)
            out.at(r, c) = (x.at(r, c) - s.mean[c]) / s.std[c];
    return out;
}

PcaModel pca_fit(const FeatureMatrix& train, std::size_t k) {
    train.validate();
    const std::size_t n = train.rows, d = train.cols;
    if (n < 2) throw std::invalid_argument("pca_fit needs >= 2 rows");
    if (k > std::min(n - 1, d)) throw std::invalid_argument("k too large for pca_fit");

    PcaModel model;
    model.k = k;
    model.d = d;
    model.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) model.mean[c] += train.at(r, c);
    for (double& m : model.mean) m /= n;

    Eigen::MatrixXd xc(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) xc(r, c) = train.at(r, c) - model.mean[c];
    Eigen::MatrixXd cov = xc.transpose() * xc / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    // eigenvalues ascend; take the top k in descending order
    model.components.resize(k * d);
    model.explained_variance.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::Index col = static_cast<Eigen::Index>(d - 1 - i);
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        // sign convention: largest-magnitude coordinate positive
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index j = 0; j < v.size(); ++j)
            if (std::abs(v[j]) > best) {
                best = std::abs(v[j]);
                arg = j;
            }
        if (v[arg] < 0) v = -v;
        for (std::size_t j = 0; j < d; ++j) model.components[i * d + j] = v[j];
        model.explained_variance[i] = std::max(solver.eigenvalues()[col], 0.0);
    }
    return model;
}

FeatureMatrix pca_project(const PcaModel& model, const FeatureMatrix& x) {
    if (x.cols != model.d) throw std::invalid_argument("pca dimension mismatch");
    FeatureMatrix out;
    out.rows = x.rows;
    out.cols = model.k;
    out.labels = x.labels;
    out.data.assign(x.rows * model.k, 0.0);
    for (std::size_t i = 0; i < model.k; ++i) out.names.push_back("pc" + std::to_string(i + 1));
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t i = 0; i < model.k; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < model.d; ++c)
                acc += (x.at(r, c) - model.mean[c]) * model.components[i * model.d + c];
            out.at(r, i) = acc;
        }
    return out;
}

FeatureMatrix smote(const FeatureMatrix& x, int k_neighbors, std::uint64_t seed) {
    x.validate();
    if (k_neighbors < 1) throw std::invalid_argument("k_neighbors must be >= 1");
    auto counts = x.class_counts();
    std::size_t majority = *std::max_element(counts.begin(), counts.end());
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] < majority && counts[c] < 2)
            throw std::runtime_error("smote: class " + std::to_string(c) + " has 1 sample");

    FeatureMatrix out = x;
    Rng rng(seed);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] >= majority) continue;
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < x.rows; ++r)
            if (x.labels[r] == static_cast<int>(c)) rows.push_back(r);

        // k nearest same-class neighbors per original (ties by row order)
        int k = std::min<std::size_t>(k_neighbors, rows.size() - 1);
        std::vector<std::vector<std::size_t>> nn(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::vector<std::pair<double, std::size_t>> dist;
            for (std::size_t j = 0; j < rows.size(); ++j) {
                if (i == j) continue;
                double d2 = 0.0;
                for (std::size_t f = 0; f < x.cols; ++f) {
                    double d = x.at(rows[i], f) - x.at(rows[j], f);
                    d2 += d * d;
                }
                dist.emplace_back(d2, j);
            }
            std::stable_sort(dist.begin(), dist.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            for (int t = 0; t < k; ++t) nn[i].push_back(dist[t].second);
        }

        for (std::size_t need = majority - counts[c]; need > 0; --need) {
            std::size_t bi = rng.below(rows.size());
            std::size_t ni = nn[bi][rng.below(nn[bi].size())];
            double lambda = rng.uniform();
            for (std::size_t f = 0; f < x.cols; ++f) {
                double base = x.at(rows[bi], f);
                double nbr = x.at(rows[ni], f);
                out.data.push_back(base + lambda * (nbr - base));
            }
            out.labels.push_back(static_cast<int>(c));
            ++out.rows;
        }
    }
    return out;
}

std::vector<double> class_weights(const std::vector<int>& labels) {
    if (labels.empty()) throw std::invalid_argument("empty labels");
    int classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<double> counts(classes, 0.0);
    for (int l : labels) counts[l] += 1.0;
    std::vector<double> w(classes);
    for (int c = 0; c < classes; ++c) {
        if (counts[c] == 0.0) throw std::runtime_error("empty class " + std::to_string(c));
        w[c] = static_cast<double>(labels.size()) / (classes * counts[c]);
    }
    return w;
}

SplitResult split(const std::vector<int>& labels, const SplitConfig& cfg) {
    if (labels.empty()) throw std::invalid_argument("empty labels");
    int classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    Rng rng(cfg.seed);
    auto shuffle = [&](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[rng.below(i)]);
    };

    SplitResult res;
    if (cfg.scheme == SplitConfig::StratifiedKFold) {
        if (cfg.k < 2) throw std::invalid_argument("k must be >= 2");
        res.folds.assign(cfg.k, {});
        for (int c = 0; c < classes; ++c) {
            if (static_cast<int>(by_class[c].size()) < cfg.k)
                throw std::runtime_error("class " + std::to_string(c) + " smaller than k");
            shuffle(by_class[c]);
            for (std::size_t i = 0; i < by_class[c].size(); ++i)
                res.folds[i % cfg.k].push_back(by_class[c][i]);
        }
        for (auto& f : res.folds) std::sort(f.begin(), f.end());
    } else {
        if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0)
            throw std::invalid_argument("train_fraction must be in (0,1)");
        std::vector<std::size_t> test;
        for (int c = 0; c < classes; ++c) {
            shuffle(by_class[c]);
            std::size_t n_train = static_cast<std::size_t>(
                std::llround(cfg.train_fraction * by_class[c].size()));
            n_train = std::min(n_train, by_class[c].size());
            for (std::size_t i = 0; i < by_class[c].size(); ++i)
                (i < n_train ? res.train : test).push_back(by_class[c][i]);
        }
        std::sort(res.train.begin(), res.train.end());
        std::sort(test.begin(), test.end());
        res.folds.push_back(std::move(test));
    }
    return res;
}

// ---------------------------------------------------------------------------
// classifiers
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

int count_classes(const std::vector<int>& labels) {
    int classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<bool> seen(classes, false);
    for (int l : labels) seen[l] = true;
    for (int c = 0; c < classes; ++c)
        if (!seen[c]) throw std::invalid_argument("class " + std::to_string(c) + " absent");
    if (classes < 2) throw std::invalid_argument("single-class training set");
    return classes;
}

class KnnClassifier final : public Classifier {
  public:
    KnnClassifier(const FeatureMatrix& train, int k)
        : train_(train), k_(std::min<std::size_t>(std::max(k, 1), train.rows)) {
        classes_ = count_classes(train.labels);
    }
    explicit KnnClassifier(const json& j) {
        k_ = j.at("k");
        classes_ = j.at("classes");
        train_.rows = j.at("rows");
        train_.cols = j.at("cols");
        train_.data = j.at("data").get<std::vector<double>>();
        train_.labels = j.at("labels").get<std::vector<int>>();
    }

    int classes() const override { return classes_; }

    std::vector<double> predict_proba(const FeatureMatrix& x) const override {
        if (x.cols != train_.cols) throw std::invalid_argument("feature dimension mismatch");
        std::vector<double> proba(x.rows * classes_, 0.0);
        std::vector<std::pair<double, std::size_t>> dist(train_.rows);
        for (std::size_t r = 0; r < x.rows; ++r) {
            for (std::size_t t = 0; t < train_.rows; ++t) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < x.cols; ++c) {
                    double d = x.at(r, c) - train_.at(t, c);
                    d2 += d * d;
                }
                dist[t] = {d2, t};
            }
            // distance ties break toward the lower training index
            std::partial_sort(dist.begin(), dist.begin() + k_, dist.end());
            for (std::size_t i = 0; i < k_; ++i)
                proba[r * classes_ + train_.labels[dist[i].second]] += 1.0 / k_;
        }
        return proba;
    }

    std::string to_json() const override {
        json j;
        j["kind"] = "knn";
        j["k"] = k_;
        j["classes"] = classes_;
        j["rows"] = train_.rows;
        j["cols"] = train_.cols;
        j["data"] = train_.data;
        j["labels"] = train_.labels;
        return j.dump();
    }

  private:
    FeatureMatrix train_;
    std::size_t k_;
    int classes_ = 0;
};

// One hidden ReLU layer, softmax output, weighted cross-entropy, full-batch
// gradient descent with the halve-on-increase schedule.
class MlpClassifier final : public Classifier {
  public:
    MlpClassifier(const FeatureMatrix& train, const ClassifierSpec& spec) {
        classes_ = count_classes(train.labels);
        d_ = train.cols;
        hidden_ = spec.hidden;
        weights_ = spec.mlp_class_weights;
        if (weights_.empty()) weights_.assign(classes_, 1.0);
        if (static_cast<int>(weights_.size()) != classes_)
            throw std::invalid_argument("class weight count mismatch");
        params_ = init_params(d_, hidden_, classes_, spec.seed);

        std::vector<double> grad(params_.size());
        double lr = spec.learning_rate;
        double loss = loss_and_grad(train, params_, &grad);
        for (int epoch = 0; epoch < spec.epochs && lr > 1e-12; ++epoch) {
            std::vector<double> cand(params_.size());
            while (lr > 1e-12) {
                for (std::size_t i = 0; i < params_.size(); ++i)
                    cand[i] = params_[i] - lr * grad[i];
                double cand_loss = loss_and_grad(train, cand, nullptr);
                if (cand_loss <= loss) {
                    params_.swap(cand);
                    loss = cand_loss;
                    break;
                }
                lr /= 2;  // halve on any increase, then retry the epoch
            }
            if (lr <= 1e-12) break;
            loss = loss_and_grad(train, params_, &grad);
        }
        final_loss_ = loss;
    }

    explicit MlpClassifier(const json& j) {
        classes_ = j.at("classes");
        d_ = j.at("inputs");
        hidden_ = j.at("hidden");
        params_ = j.at("params").get<std::vector<double>>();
        weights_ = j.at("class_weights").get<std::vector<double>>();
        final_loss_ = j.at("final_loss");
    }

    int classes() const override { return classes_; }
    double final_loss() const { return final_loss_; }

    std::vector<double> predict_proba(const FeatureMatrix& x) const override {
        if (x.cols != d_) throw std::invalid_argument("feature dimension mismatch");
        std::vector<double> proba(x.rows * classes_);
        std::vector<double> hid(hidden_), out(classes_);
        for (std::size_t r = 0; r < x.rows; ++r) {
            forward(x.row(r), params_, hid, out);
            for (int c = 0; c < classes_; ++c) proba[r * classes_ + c] = out[c];
        }
        return proba;
    }

    std::string to_json() const override {
        json j;
        j["kind"] = "mlp";
        j["classes"] = classes_;
        j["inputs"] = d_;
        j["hidden"] = hidden_;
        j["params"] = params_;
        j["class_weights"] = weights_;
        j["final_loss"] = final_loss_;
        return j.dump();
    }

    static std::vector<double> init_params(std::size_t d, int hidden, int classes,
                                           std::uint64_t seed) {
        Rng rng(Rng::splitmix64(seed) ^ 0x6d6c70ULL);
        std::size_t n = (d + 1) * hidden + (hidden + 1) * classes;
        std::vector<double> p(n);
        double s1 = std::sqrt(6.0 / (d + hidden));
        double s2 = std::sqrt(6.0 / (hidden + static_cast<double>(classes)));
        std::size_t i = 0;
        for (std::size_t w = 0; w < d * hidden; ++w) p[i++] = rng.uniform(-s1, s1);
        for (int b = 0; b < hidden; ++b) p[i++] = 0.0;
        for (int w = 0; w < hidden * classes; ++w) p[i++] = rng.uniform(-s2, s2);
        for (int b = 0; b < classes; ++b) p[i++] = 0.0;
        return p;
    }

    // loss (and optionally gradient) of the weighted cross-entropy
    double loss_and_grad(const FeatureMatrix& x, const std::vector<double>& params,
                         std::vector<double>* grad) const {
        const std::size_t d = d_;
        const int H = hidden_, C = classes_;
        const double* w1 = params.data();
        const double* b1 = w1 + d * H;
        const double* w2 = b1 + H;
        const double* b2 = w2 + static_cast<std::size_t>(H) * C;
        double* g1 = nullptr;
        double* gb1 = nullptr;
        double* g2 = nullptr;
        double* gb2 = nullptr;
        if (grad) {
            std::fill(grad->begin(), grad->end(), 0.0);
            g1 = grad->data();
            gb1 = g1 + d * H;
            g2 = gb1 + H;
            gb2 = g2 + static_cast<std::size_t>(H) * C;
        }

        double weight_total = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) weight_total += weights_[x.labels[r]];

        std::vector<double> hid(H), out(C), dout(C), dhid(H);
        double loss = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* xi = x.row(r);
            for (int j = 0; j < H; ++j) {
                double a = b1[j];
                for (std::size_t c = 0; c < d; ++c) a += w1[j * d + c] * xi[c];
                hid[j] = a > 0 ? a : 0.0;
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < C; ++k) {
                double a = b2[k];
                for (int j = 0; j < H; ++j) a += w2[k * H + j] * hid[j];
                out[k] = a;
                mx = std::max(mx, a);
            }
            double z = 0.0;
            for (int k = 0; k < C; ++k) {
                out[k] = std::exp(out[k] - mx);
                z += out[k];
            }
            for (int k = 0; k < C; ++k) out[k] /= z;

            int y = x.labels[r];
            double sw = weights_[y] / weight_total;
            loss -= sw * std::log(std::max(out[y], 1e-300));

            if (grad) {
                for (int k = 0; k < C; ++k) dout[k] = sw * (out[k] - (k == y ? 1.0 : 0.0));
                for (int k = 0; k < C; ++k) {
                    gb2[k] += dout[k];
                    for (int j = 0; j < H; ++j) g2[k * H + j] += dout[k] * hid[j];
                }
                for (int j = 0; j < H; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < C; ++k) acc += dout[k] * w2[k * H + j];
                    dhid[j] = hid[j] > 0 ? acc : 0.0;
                }
                for (int j = 0; j < H; ++j) {
                    gb1[j] += dhid[j];
                    if (dhid[j] != 0.0)
                        for (std::size_t c = 0; c < d; ++c) g1[j * d + c] += dhid[j] * xi[c];
                }
            }
        }
        return loss;
    }

  private:
    void forward(const double* xi, const std::vector<double>& params, std::vector<double>& hid,
                 std::vector<double>& out) const {
        const std::size_t d = d_;
        const int H = hidden_, C = classes_;
        const double* w1 = params.data();
        const double* b1 = w1 + d * H;
        const double* w2 = b1 + H;
        const double* b2 = w2 + static_cast<std::size_t>(H) * C;
        for (int j = 0; j < H; ++j) {
            double a = b1[j];
            for (std::size_t c = 0; c < d; ++c) a += w1[j * d + c] * xi[c];
            hid[j] = a > 0 ? a : 0.0;
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < C; ++k) {
            double a = b2[k];
            for (int j = 0; j < H; ++j) a += w2[k * H + j] * hid[j];
            out[k] = a;
            mx = std::max(mx, a);
        }
        double z = 0.0;
        for (int k = 0; k < C; ++k) {
            out[k] = std::exp(out[k] - mx);
            z += out[k];
        }
        for (int k = 0; k < C; ++k) out[k] /= z;
    }

    std::size_t d_ = 0;
    int hidden_ = 0, classes_ = 0;
    std::vector<double> params_;
    std::vector<double> weights_;
    double final_loss_ = 0.0;
};

// Bootstrap CART forest with Gini splits over sqrt(d) feature candidates.
class ForestClassifier final : public Classifier {
  public:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1, right = -1;
        std::vector<double> dist;
    };

    ForestClassifier(const FeatureMatrix& train, const ClassifierSpec& spec) {
        classes_ = count_classes(train.labels);
        if (spec.trees < 1) throw std::invalid_argument("trees must be >= 1");
        int mtry = std::max(1, static_cast<int>(std::floor(std::sqrt(
                                   static_cast<double>(train.cols)))));
        trees_.resize(spec.trees);
        for (int t = 0; t < spec.trees; ++t) {
            Rng rng(Rng::splitmix64(spec.seed) ^ Rng::splitmix64(t + 1));
            std::vector<std::size_t> sample(train.rows);
            for (auto& s : sample) s = rng.below(train.rows);
            build(trees_[t], train, sample, mtry, spec.max_depth, 0, rng);
        }
    }

    explicit ForestClassifier(const json& j) {
        classes_ = j.at("classes");
        for (const auto& jt : j.at("trees")) {
            std::vector<Node> tree;
            for (const auto& jn : jt) {
                Node n;
                n.feature = jn.at("f");
                n.threshold = jn.at("t");
                n.left = jn.at("l");
                n.right = jn.at("r");
                if (jn.contains("d")) n.dist = jn.at("d").get<std::vector<double>>();
                tree.push_back(std::move(n));
            }
            trees_.push_back(std::move(tree));
        }
    }

    int classes() const override { return classes_; }

    std::vector<double> predict_proba(const FeatureMatrix& x) const override {
        std::vector<double> proba(x.rows * classes_, 0.0);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* xi = x.row(r);
            for (const auto& tree : trees_) {
                int node = 0;
                while (tree[node].feature >= 0)
                    node = xi[tree[node].feature] <= tree[node].threshold ? tree[node].left
                                                                          : tree[node].right;
                for (int c = 0; c < classes_; ++c)
                    proba[r * classes_ + c] += tree[node].dist[c] / trees_.size();
            }
        }
        return proba;
    }

    std::string to_json() const override {
        json jt = json::array();
        for (const auto& tree : trees_) {
            json nodes = json::array();
            for (const auto& n : tree) {
                json jn;
                jn["f"] = n.feature;
                jn["t"] = n.threshold;
                jn["l"] = n.left;
                jn["r"] = n.right;
                if (!n.dist.empty()) jn["d"] = n.dist;
                nodes.push_back(std::move(jn));
            }
            jt.push_back(std::move(nodes));
        }
        json j;
        j["kind"] = "forest";
        j["classes"] = classes_;
        j["trees"] = jt;
        return j.dump();
    }

  private:
    int build(std::vector<Node>& tree, const FeatureMatrix& train,
              const std::vector<std::size_t>& rows, int mtry, int max_depth, int depth,
              Rng& rng) {
        int id = static_cast<int>(tree.size());
        tree.emplace_back();

        std::vector<double> counts(classes_, 0.0);
        for (std::size_t r : rows) counts[train.labels[r]] += 1.0;
        bool pure = std::count_if(counts.begin(), counts.end(),
                                  [](double c) { return c > 0; }) <= 1;
        if (pure || rows.size() < 2 || (max_depth > 0 && depth >= max_depth)) {
            make_leaf(tree[id], counts, rows.size());
            return id;
        }

        // draw mtry distinct candidate features
        std::vector<std::size_t> feats(train.cols);
        std::iota(feats.begin(), feats.end(), 0);
        for (int i = 0; i < mtry; ++i)
            std::swap(feats[i], feats[i + rng.below(train.cols - i)]);

        double parent_gini = gini(counts, rows.size());
        double best_gini = parent_gini - 1e-12;
        int best_f = -1;
        double best_t = 0.0;
        std::vector<std::pair<double, int>> vals;
        for (int fi = 0; fi < mtry; ++fi) {
            std::size_t f = feats[fi];
            vals.clear();
            for (std::size_t r : rows) vals.emplace_back(train.at(r, f), train.labels[r]);
            std::sort(vals.begin(), vals.end());
            std::vector<double> left(classes_, 0.0), right = counts;
            double nl = 0, nr = static_cast<double>(rows.size());
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                left[vals[i].second] += 1;
                right[vals[i].second] -= 1;
                ++nl;
                --nr;
                if (vals[i].first == vals[i + 1].first) continue;
                double g = (nl * gini(left, nl) + nr * gini(right, nr)) / rows.size();
                if (g < best_gini) {
                    best_gini = g;
                    best_f = static_cast<int>(f);
                    best_t = (vals[i].first + vals[i + 1].first) / 2.0;
                }
            }
        }
        if (best_f < 0) {
            make_leaf(tree[id], counts, rows.size());
            return id;
        }

        std::vector<std::size_t> lrows, rrows;
        for (std::size_t r : rows)
            (train.at(r, best_f) <= best_t ? lrows : rrows).push_back(r);
        tree[id].feature = best_f;
        tree[id].threshold = best_t;
        int l = build(tree, train, lrows, mtry, max_depth, depth + 1, rng);
        int r = build(tree, train, rrows, mtry, max_depth, depth + 1, rng);
        tree[id].left = l;
        tree[id].right = r;
        return id;
    }

    void make_leaf(Node& n, const std::vector<double>& counts, std::size_t total) {
        n.feature = -1;
        n.dist.resize(classes_);
        for (int c = 0; c < classes_; ++c) n.dist[c] = counts[c] / total;
    }

    double gini(const std::vector<double>& counts, double n) const {
        if (n <= 0) return 0.0;
        double g = 1.0;
        for (double c : counts) g -= (c / n) * (c / n);
        return g;
    }

    int classes_ = 0;
    std::vector<std::vector<Node>> trees_;
};

}  // namespace

std::unique_ptr<Classifier> train(const ClassifierSpec& spec, const FeatureMatrix& x) {
    x.validate();
    switch (spec.kind) {
        case ClassifierSpec::Knn: return std::make_unique<KnnClassifier>(x, spec.k);
        case ClassifierSpec::Mlp: return std::make_unique<MlpClassifier>(x, spec);
        default: return std::make_unique<ForestClassifier>(x, spec);
    }
}

std::unique_ptr<Classifier> classifier_from_json(const std::string& text) {
    json j = json::parse(text);
    std::string kind = j.at("kind");
    if (kind == "knn") return std::make_unique<KnnClassifier>(j);
    if (kind == "mlp") return std::make_unique<MlpClassifier>(j);
    if (kind == "forest") return std::make_unique<ForestClassifier>(j);
    throw std::runtime_error("unknown classifier kind '" + kind + "'");
}

std::vector<int> predict_labels(const Classifier& model, const FeatureMatrix& x) {
    auto proba = model.predict_proba(x);
    int classes = model.classes();
    std::vector<int> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
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

std::vector<double> ensemble_soft_vote(const std::vector<const Classifier*>& models,
                                       const FeatureMatrix& x) {
    if (models.empty()) throw std::invalid_argument("no ensemble members");
    int classes = models.front()->classes();
    for (const auto* m : models)
        if (m->classes() != classes) throw std::invalid_argument("class-count mismatch");
    std::vector<double> mean(x.rows * classes, 0.0);
    for (const auto* m : models) {
        auto p = m->predict_proba(x);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p[i] / models.size();
    }
    return mean;
}

std::vector<int> one_vs_all(const std::vector<int>& labels, int positive_class) {
    bool present = false;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[i] = labels[i] == positive_class ? 1 : 0;
        present = present || labels[i] == positive_class;
    }
    if (!present) throw std::invalid_argument("positive class absent");
    return out;
}

double mlp_final_loss(const Classifier& model) {
    const auto* mlp = dynamic_cast<const MlpClassifier*>(&model);
    if (!mlp) throw std::invalid_argument("not an MLP model");
    return mlp->final_loss();
}

MlpGradientCheck mlp_gradient_at(const FeatureMatrix& x, int hidden, std::uint64_t seed,
                                 const std::vector<double>& weights,
                                 const std::vector<double>* params) {
    x.validate();
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Mlp;
    spec.hidden = hidden;
    spec.epochs = 0;
    spec.seed = seed;
    spec.mlp_class_weights = weights;
    MlpClassifier model(x, spec);

    MlpGradientCheck check;
    int classes = count_classes(x.labels);
    check.params = params ? *params
                          : MlpClassifier::init_params(x.cols, hidden, classes, seed);
    check.analytic_gradient.assign(check.params.size(), 0.0);
    check.loss = model.loss_and_grad(x, check.params, &check.analytic_gradient);
    return check;
}

double mlp_loss_at(const FeatureMatrix& x, int hidden, const std::vector<double>& weights,
                   const std::vector<double>& params) {
    ClassifierSpec spec;
    spec.kind = ClassifierSpec::Mlp;
    spec.hidden = hidden;
    spec.epochs = 0;
    spec.mlp_class_weights = weights;
    MlpClassifier model(x, spec);
    return model.loss_and_grad(x, params, nullptr);
}

}  // namespace mia
