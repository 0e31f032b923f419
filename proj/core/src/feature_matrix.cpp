#include "mia/feature_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mia {

int FeatureMatrix::class_count() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
}

std::vector<std::size_t> FeatureMatrix::class_counts() const {
    std::vector<std::size_t> counts(class_count(), 0);
    for (int l : labels) ++counts[l];
    return counts;
}

void FeatureMatrix::validate() const {
    if (data.size() != rows * cols) throw std::invalid_argument("feature data size mismatch");
    if (labels.size() != rows) throw std::invalid_argument("label count mismatch");
    if (!names.empty() && names.size() != cols)
        throw std::invalid_argument("column name count mismatch");
    for (double v : data)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature entry");
    for (int l : labels)
        if (l < 0) throw std::invalid_argument("negative label");
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<std::size_t>& idx) const {
    FeatureMatrix out;
    out.rows = idx.size();
    out.cols = cols;
    out.names = names;
    out.data.reserve(idx.size() * cols);
    out.labels.reserve(idx.size());
    for (std::size_t r : idx) {
        out.data.insert(out.data.end(), data.begin() + r * cols, data.begin() + (r + 1) * cols);
        out.labels.push_back(labels[r]);
    }
    return out;
}

void write_feature_csv(const FeatureMatrix& m, const std::string& path) {
    m.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    for (std::size_t c = 0; c < m.cols; ++c) {
        out << (m.names.empty() ? "f" + std::to_string(c) : m.names[c]);
        out << ",";
    }
    out << "label\n";
    char buf[40];
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.at(r, c));
            out << buf << ",";
        }
        out << m.labels[r] << "\n";
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

FeatureMatrix read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");

    FeatureMatrix m;
    {
        std::stringstream header(line);
        std::string cell;
        while (std::getline(header, cell, ',')) m.names.push_back(cell);
        if (m.names.empty() || m.names.back() != "label")
            throw std::runtime_error(path + ": last column must be 'label'");
        m.names.pop_back();
        m.cols = m.names.size();
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != m.cols + 1)
            throw std::runtime_error(path + ": row arity mismatch at data row " +
                                     std::to_string(m.rows + 1));
        m.data.insert(m.data.end(), vals.begin(), vals.end() - 1);
        m.labels.push_back(static_cast<int>(vals.back()));
        ++m.rows;
    }
    m.validate();
    return m;
}

}  // namespace mia
