#include "mia/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mia {

void Table::add_row(std::vector<std::string> cells) {
    if (cells.size() != columns.size())
        throw std::invalid_argument("table row arity mismatch in '" + name + "'");
    rows.push_back(std::move(cells));
}

void write_table_csv(const Table& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    for (std::size_t c = 0; c < t.columns.size(); ++c)
        out << t.columns[c] << (c + 1 < t.columns.size() ? "," : "\n");
    for (const auto& row : t.rows)
        for (std::size_t c = 0; c < row.size(); ++c)
            out << row[c] << (c + 1 < row.size() ? "," : "\n");
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::string format_double(double v, int decimals) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

std::string format_mean_std(double mean, double std_dev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean, std_dev);
    return buf;
}

void write_roc_svg(const RocResult& roc, const std::string& title, const std::string& path) {
    const int w = 480, h = 480, margin = 48;
    const int plot = w - 2 * margin;
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
        << title << "</text>\n";
    out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot
        << "\" height=\"" << plot << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin + plot << "\" x2=\"" << margin + plot
        << "\" y2=\"" << margin
        << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    char buf[64];
    for (const auto& p : roc.points) {
        double x = margin + p.fpr * plot;
        double y = margin + (1.0 - p.tpr) * plot;
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
        out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof(buf), "AUC = %.4f", roc.auc);
    out << "<text x=\"" << margin + 12 << "\" y=\"" << margin + plot - 12
        << "\" font-size=\"13\">" << buf << "</text>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
        << "\" text-anchor=\"middle\" font-size=\"12\">false positive rate</text>\n";
    out << "<text x=\"14\" y=\"" << h / 2
        << "\" font-size=\"12\" transform=\"rotate(-90 14 " << h / 2
        << ")\" text-anchor=\"middle\">true positive rate</text>\n";
    out << "</svg>\n";
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

}  // namespace mia
