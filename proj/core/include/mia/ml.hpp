#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mia/feature_matrix.hpp"

namespace mia {

struct Scaler {
    std::vector<double> mean;
    std::vector<double> std;  // 1.0 for zero-variance columns (pass-through centering)
};

Scaler standardize_fit(const FeatureMatrix& train);
FeatureMatrix standardize_apply(const Scaler& s, const FeatureMatrix& x);

struct PcaModel {
    std::vector<double> mean;                // d
    std::vector<double> components;          // k x d, row-major, orthonormal
    std::vector<double> explained_variance;  // k, non-increasing
    std::size_t k = 0, d = 0;
};

/// Top-k eigenvectors of the train covariance; deterministic sign convention
/// (largest-magnitude coordinate positive).
PcaModel pca_fit(const FeatureMatrix& train, std::size_t k);
FeatureMatrix pca_project(const PcaModel& model, const FeatureMatrix& x);

/// Upsamples every minority class to the majority count by interpolating
/// toward one of the k nearest same-class neighbors; originals come first.
FeatureMatrix smote(const FeatureMatrix& x, int k_neighbors, std::uint64_t seed);

/// Balanced rule: w_c = n / (class_count * n_c).
std::vector<double> class_weights(const std::vector<int>& labels);

struct SplitConfig {
    enum Scheme { StratifiedShuffle, StratifiedKFold };
    Scheme scheme = StratifiedKFold;
    double train_fraction = 0.8;  // shuffle scheme
    int k = 5;                    // k-fold scheme
    std::uint64_t seed = 0;
};

struct SplitResult {
    // shuffle: one fold = {train, test}; k-fold: folds[i] = test indices of fold i
    std::vector<std::vector<std::size_t>> folds;
    std::vector<std::size_t> train;  // shuffle scheme only
};

SplitResult split(const std::vector<int>& labels, const SplitConfig& cfg);

struct ClassifierSpec {
    enum Kind { Knn, Mlp, Forest };
    Kind kind = Knn;
    // knn
    int k = 5;
    // mlp
    int hidden = 64;
    int epochs = 400;
    double learning_rate = 0.05;
    std::vector<double> mlp_class_weights;  // empty = unweighted
    // forest
    int trees = 100;
    int max_depth = 0;  // 0 = unlimited
    std::uint64_t seed = 0;
};

class Classifier {
  public:
    virtual ~Classifier() = default;
    virtual std::vector<double> predict_proba(const FeatureMatrix& x) const = 0;  // n x classes
    virtual int classes() const = 0;
    virtual std::string to_json() const = 0;
};

std::unique_ptr<Classifier> train(const ClassifierSpec& spec, const FeatureMatrix& x);
std::unique_ptr<Classifier> classifier_from_json(const std::string& text);

std::vector<int> predict_labels(const Classifier& model, const FeatureMatrix& x);

/// Unweighted mean of the member probability matrices.
std::vector<double> ensemble_soft_vote(const std::vector<const Classifier*>& models,
                                       const FeatureMatrix& x);

/// positive -> 1, everything else -> 0.
std::vector<int> one_vs_all(const std::vector<int>& labels, int positive_class);

/// Final training loss of an MLP model (exposed for convergence checks).
double mlp_final_loss(const Classifier& model);

/// Analytic MLP loss gradient at a given flat parameter vector (test hook for
/// the finite-difference oracle).
struct MlpGradientCheck {
    std::vector<double> params;
    std::vector<double> analytic_gradient;
    double loss = 0.0;
};
MlpGradientCheck mlp_gradient_at(const FeatureMatrix& x, int hidden, std::uint64_t seed,
                                 const std::vector<double>& weights,
                                 const std::vector<double>* params = nullptr);
double mlp_loss_at(const FeatureMatrix& x, int hidden, const std::vector<double>& weights,
                   const std::vector<double>& params);

}  // namespace mia
