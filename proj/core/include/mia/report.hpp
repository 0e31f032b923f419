#pragma once

#include <string>
#include <vector>

#include "mia/metrics.hpp"

namespace mia {

/// Simple named table: one header row plus string cells, written as CSV and
/// embedded into report JSON.
struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> cells);
};

void write_table_csv(const Table& t, const std::string& path);

std::string format_double(double v, int decimals = 6);
/// "m.mm ± s.ss" cells used by the registration tables.
std::string format_mean_std(double mean, double std_dev);

/// Minimal SVG polyline plot of the ROC curve (with the chance diagonal).
void write_roc_svg(const RocResult& roc, const std::string& title, const std::string& path);

/// FNV-1a 64-bit, used to stamp reports with their resolved config.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace mia
