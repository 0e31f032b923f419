#pragma once

#include <string>
#include <vector>

namespace mia {

/// Row-per-sample feature table with class labels and named columns.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major
    std::vector<int> labels;
    std::vector<std::string> names;

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    int class_count() const;
    std::vector<std::size_t> class_counts() const;
    void validate() const;  // finite entries, consistent sizes, labels in range
    FeatureMatrix select_rows(const std::vector<std::size_t>& idx) const;
};

/// CSV: header of column names plus a final `label` column, '.' decimal
/// separator, %.17g values.
void write_feature_csv(const FeatureMatrix& m, const std::string& path);
FeatureMatrix read_feature_csv(const std::string& path);

}  // namespace mia
