#include "mia/preprocess.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "mia/rng.hpp"

namespace mia {
namespace {

std::pair<double, double> data_range(const std::vector<double>& data) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

int bin_of(double v, double lo, double hi, int bins) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::clamp(b, 0, bins - 1);
}

}  // namespace

std::pair<double, LabelVolume> otsu_threshold(const ScalarVolume& vol) {
    auto [lo, hi] = data_range(vol.data);
    if (!(hi > lo)) throw std::runtime_error("degenerate histogram");

    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : vol.data) hist[bin_of(v, lo, hi, kBins)] += 1.0;

    std::array<double, kBins> level{};
    for (int b = 0; b < kBins; ++b) level[b] = static_cast<double>(b);

    double total = static_cast<double>(vol.data.size());
    double total_mean = 0.0;
    for (int b = 0; b < kBins; ++b) total_mean += hist[b] * level[b];
    total_mean /= total;

    int best_bin = 0;
    double best_var = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < kBins; ++t) {
        w0 += hist[t];
        sum0 += hist[t] * level[t];
        double w1 = total - w0;
        if (w0 <= 0.0 || w1 <= 0.0) continue;
        double mu0 = sum0 / w0;
        double mu1 = (total_mean * total - sum0) / w1;
        double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var + 1e-12 * std::max(1.0, best_var)) {
            best_var = var;
            best_bin = t;
        }
    }
    if (best_var < 0.0) throw std::runtime_error("degenerate histogram");

    double threshold = lo + best_bin * (hi - lo) / kBins;
    LabelVolume mask = make_labels(vol.dims, 2, vol.spacing, vol.origin);
    for (std::size_t i = 0; i < vol.data.size(); ++i)
        mask.data[i] = vol.data[i] > threshold ? 1 : 0;
    return {threshold, mask};
}

ScalarVolume minmax_normalize(const ScalarVolume& vol, const LabelVolume* mask) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        if (mask && !mask->data[i]) continue;
        lo = std::min(lo, vol.data[i]);
        hi = std::max(hi, vol.data[i]);
    }
    ScalarVolume out = vol;
    if (!(hi > lo)) {
        std::fill(out.data.begin(), out.data.end(), 0.0);
        return out;
    }
    double inv = 1.0 / (hi - lo);
    for (double& v : out.data) v = std::clamp((v - lo) * inv, 0.0, 1.0);
    return out;
}

namespace {

// Monomial exponents of total degree <= order in 3 variables.
std::vector<std::array<int, 3>> monomials(int order) {
    std::vector<std::array<int, 3>> m;
    for (int i = 0; i <= order; ++i)
        for (int j = 0; j + i <= order; ++j)
            for (int k = 0; k + j + i <= order; ++k) m.push_back({i, j, k});
    return m;
}

}  // namespace

std::pair<ScalarVolume, ScalarVolume> correct_bias(const ScalarVolume& vol,
                                                   const LabelVolume& mask,
                                                   const BiasFieldConfig& cfg) {
    if (cfg.polynomial_order < 1 || cfg.polynomial_order > 4)
        throw std::invalid_argument("polynomial_order must be in [1, 4]");
    if (!mask.matches_geometry(vol)) throw std::invalid_argument("mask geometry mismatch");

    auto terms = monomials(cfg.polynomial_order);
    const int nt = static_cast<int>(terms.size());

    std::size_t masked = 0;
    for (auto m : mask.data) masked += m ? 1 : 0;
    if (masked == 0) throw std::runtime_error("empty mask");
    if (masked < static_cast<std::size_t>(nt))
        throw std::runtime_error("mask too small for polynomial order (singular normal equations)");

    // coordinates normalized to [-1, 1] per axis for conditioning
    auto coord = [&](int i, int d) {
        return vol.dims[d] > 1 ? 2.0 * i / (vol.dims[d] - 1) - 1.0 : 0.0;
    };

    Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(nt, nt);
    Eigen::VectorXd atb = Eigen::VectorXd::Zero(nt);
    Eigen::VectorXd row(nt);
    for (int z = 0; z < vol.dims[2]; ++z)
        for (int y = 0; y < vol.dims[1]; ++y)
            for (int x = 0; x < vol.dims[0]; ++x) {
                std::size_t idx = vol.index(x, y, z);
                if (!mask.data[idx]) continue;
                double cx = coord(x, 0), cy = coord(y, 1), cz = coord(z, 2);
                for (int t = 0; t < nt; ++t)
                    row[t] = std::pow(cx, terms[t][0]) * std::pow(cy, terms[t][1]) *
                             std::pow(cz, terms[t][2]);
                double b = std::log(vol.data[idx] + cfg.epsilon);
                ata.selfadjointView<Eigen::Lower>().rankUpdate(row);
                atb += b * row;
            }
    ata = ata.selfadjointView<Eigen::Lower>();

    Eigen::LDLT<Eigen::MatrixXd> solver(ata);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("singular normal equations in bias fit");
    Eigen::VectorXd coef = solver.solve(atb);
    if (!coef.allFinite()) throw std::runtime_error("singular normal equations in bias fit");

    ScalarVolume field = make_volume(vol.dims, vol.spacing, vol.origin, 1.0);
    for (int z = 0; z < vol.dims[2]; ++z)
        for (int y = 0; y < vol.dims[1]; ++y)
            for (int x = 0; x < vol.dims[0]; ++x) {
                double cx = coord(x, 0), cy = coord(y, 1), cz = coord(z, 2);
                double fit = 0.0;
                for (int t = 0; t < nt; ++t)
                    fit += coef[t] * std::pow(cx, terms[t][0]) * std::pow(cy, terms[t][1]) *
                           std::pow(cz, terms[t][2]);
                field.data[vol.index(x, y, z)] = std::exp(fit);
            }

    ScalarVolume corrected = vol;
    double mean_in = 0.0, mean_out = 0.0;
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        if (!mask.data[i]) continue;
        corrected.data[i] = vol.data[i] / field.data[i];
        mean_in += vol.data[i];
        mean_out += corrected.data[i];
    }
    double scale = mean_out != 0.0 ? mean_in / mean_out : 1.0;
    for (std::size_t i = 0; i < vol.data.size(); ++i)
        if (mask.data[i]) corrected.data[i] *= scale;
    return {corrected, field};
}

std::vector<SlicePair> extract_slices(const ScalarVolume& vol, const LabelVolume* labels,
                                      const ExtractionConfig& cfg) {
    if (labels && !labels->matches_geometry(vol))
        throw std::invalid_argument("label geometry mismatch");
    std::vector<SlicePair> out;
    std::size_t slice_voxels = static_cast<std::size_t>(vol.dims[0]) * vol.dims[1];
    for (int z = 0; z < vol.dims[2]; ++z) {
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < slice_voxels; ++i)
            if (vol.data[slice_voxels * z + i] != 0.0) ++nonzero;
        if (static_cast<double>(nonzero) < cfg.min_foreground_fraction * slice_voxels) continue;

        SlicePair sp;
        sp.slice_index = z;
        sp.image = make_volume({vol.dims[0], vol.dims[1], 1}, vol.spacing, vol.origin);
        std::copy_n(vol.data.begin() + slice_voxels * z, slice_voxels, sp.image.data.begin());
        if (labels) {
            sp.labels = make_labels({vol.dims[0], vol.dims[1], 1}, labels->class_count,
                                    vol.spacing, vol.origin);
            std::copy_n(labels->data.begin() + slice_voxels * z, slice_voxels,
                        sp.labels.data.begin());
        }
        out.push_back(std::move(sp));
    }
    return out;
}

std::vector<ScalarVolume> extract_patches(const ScalarVolume& slice, const ExtractionConfig& cfg) {
    if (cfg.patch_size < 1) throw std::invalid_argument("patch_size must be >= 1");
    std::vector<ScalarVolume> out;
    const int ps = cfg.patch_size;
    for (int py = 0; py + ps <= slice.dims[1]; py += ps)
        for (int px = 0; px + ps <= slice.dims[0]; px += ps) {
            std::size_t nonzero = 0;
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x)
                    if (slice.at(px + x, py + y, 0) != 0.0) ++nonzero;
            if (static_cast<double>(nonzero) < cfg.min_foreground_fraction * ps * ps) continue;
            ScalarVolume patch = make_volume({ps, ps, 1}, slice.spacing, slice.origin);
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x) patch.at(x, y, 0) = slice.at(px + x, py + y, 0);
            out.push_back(std::move(patch));
        }
    return out;
}

std::pair<bool, int> detect_fov(const ScalarVolume& image, const CtPreprocessConfig& cfg) {
    if (cfg.k_fov != 3 || cfg.k_nofov != 2)
        throw std::invalid_argument("k_fov/k_nofov are fixed at 3/2");
    const int w = cfg.corner_window;
    if (image.dims[0] < 2 * w || image.dims[1] < 2 * w)
        throw std::invalid_argument("image too small for corner windows");
    auto [lo, hi] = data_range(image.data);
    (void)lo;
    double threshold = cfg.corner_threshold * hi;

    auto corner_mean = [&](int x0, int y0) {
        double s = 0.0;
        for (int y = 0; y < w; ++y)
            for (int x = 0; x < w; ++x) s += image.at(x0 + x, y0 + y, 0);
        return s / (w * w);
    };
    int dark = 0;
    int xs[2] = {0, image.dims[0] - w};
    int ys[2] = {0, image.dims[1] - w};
    for (int cy : ys)
        for (int cx : xs)
            if (corner_mean(cx, cy) < threshold) ++dark;

    bool has_fov = dark >= 3;
    return {has_fov, has_fov ? cfg.k_fov : cfg.k_nofov};
}

KmeansResult kmeans_segment(const ScalarVolume& image, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("k must be >= 2");
    auto [lo, hi] = data_range(image.data);
    (void)lo;

    std::vector<double> inv(image.data.size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = hi - image.data[i];

    std::vector<double> uniq = inv;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (static_cast<int>(uniq.size()) < k)
        throw std::runtime_error("fewer distinct values than k");

    // k-means++ seeding
    Rng rng(seed);
    std::vector<double> centers;
    centers.push_back(inv[rng.below(inv.size())]);
    std::vector<double> d2(inv.size());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < inv.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (inv[i] - c) * (inv[i] - c));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            // all points coincide with a center; add the nearest unused value
            for (double u : uniq)
                if (std::find(centers.begin(), centers.end(), u) == centers.end()) {
                    centers.push_back(u);
                    break;
                }
            continue;
        }
        double target = rng.uniform() * total;
        double acc = 0.0;
        std::size_t pick = inv.size() - 1;
        for (std::size_t i = 0; i < inv.size(); ++i) {
            acc += d2[i];
            if (acc >= target) {
                pick = i;
                break;
            }
        }
        centers.push_back(inv[pick]);
    }

    std::vector<int> assign(inv.size(), -1);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < inv.size(); ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                double d = (inv[i] - centers[c]) * (inv[i] - centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < inv.size(); ++i) {
            sum[assign[i]] += inv[i];
            ++cnt[assign[i]];
        }
        for (int c = 0; c < k; ++c)
            if (cnt[c] > 0) centers[c] = sum[c] / cnt[c];
        if (!changed) break;
    }

    // report centroids in original units, ascending, labels renumbered to match
    std::vector<std::pair<double, int>> order(k);
    for (int c = 0; c < k; ++c) order[c] = {hi - centers[c], c};
    std::sort(order.begin(), order.end());
    std::vector<int> relabel(k);
    KmeansResult res;
    res.centroids.resize(k);
    for (int rank = 0; rank < k; ++rank) {
        relabel[order[rank].second] = rank;
        res.centroids[rank] = order[rank].first;
    }
    res.labels = make_labels(image.dims, k, image.spacing, image.origin);
    for (std::size_t i = 0; i < inv.size(); ++i)
        res.labels.data[i] = static_cast<std::uint8_t>(relabel[assign[i]]);
    return res;
}

namespace {

struct Grid2d {
    int w, h;
    const LabelVolume& m;
    bool fg(int x, int y) const {
        return x >= 0 && x < w && y >= 0 && y < h && m.at(x, y, 0) != 0;
    }
};

LabelVolume largest_component_8(const LabelVolume& mask) {
    const int w = mask.dims[0], h = mask.dims[1];
    std::vector<int> comp(static_cast<std::size_t>(w) * h, -1);
    int n_comp = 0;
    std::vector<std::size_t> best_cells;
    std::vector<std::size_t> cells;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            std::size_t si = static_cast<std::size_t>(sy) * w + sx;
            if (!mask.data[si] || comp[si] >= 0) continue;
            cells.clear();
            std::deque<std::pair<int, int>> q{{sx, sy}};
            comp[si] = n_comp;
            while (!q.empty()) {
                auto [x, y] = q.front();
                q.pop_front();
                cells.push_back(static_cast<std::size_t>(y) * w + x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        int nx = x + dx, ny = y + dy;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (mask.data[ni] && comp[ni] < 0) {
                            comp[ni] = n_comp;
                            q.emplace_back(nx, ny);
                        }
                    }
            }
            if (cells.size() > best_cells.size()) best_cells = cells;
            ++n_comp;
        }
    LabelVolume out = make_labels(mask.dims, 2, mask.spacing, mask.origin);
    for (std::size_t i : best_cells) out.data[i] = 1;
    return out;
}

void fill_holes_inplace(LabelVolume& mask) {
    const int w = mask.dims[0], h = mask.dims[1];
    std::vector<std::uint8_t> outside(static_cast<std::size_t>(w) * h, 0);
    std::deque<std::pair<int, int>> q;
    auto push = [&](int x, int y) {
        std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!mask.data[i] && !outside[i]) {
            outside[i] = 1;
            q.emplace_back(x, y);
        }
    };
    for (int x = 0; x < w; ++x) {
        push(x, 0);
        push(x, h - 1);
    }
    for (int y = 0; y < h; ++y) {
        push(0, y);
        push(w - 1, y);
    }
    while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop_front();
        const int dx4[] = {1, -1, 0, 0};
        const int dy4[] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
            int nx = x + dx4[d], ny = y + dy4[d];
            if (nx >= 0 && nx < w && ny >= 0 && ny < h) push(nx, ny);
        }
    }
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        if (!outside[i]) mask.data[i] = 1;
}

LabelVolume morph_close(const LabelVolume& mask, int radius) {
    if (radius <= 0) return mask;
    const int w = mask.dims[0], h = mask.dims[1];
    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dx, dy);

    LabelVolume dil = make_labels(mask.dims, 2, mask.spacing, mask.origin);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y, 0)) continue;
            for (auto [dx, dy] : disk) {
                int nx = x + dx, ny = y + dy;
                if (nx >= 0 && nx < w && ny >= 0 && ny < h) dil.at(nx, ny, 0) = 1;
            }
        }
    LabelVolume ero = make_labels(mask.dims, 2, mask.spacing, mask.origin);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool all = true;
            for (auto [dx, dy] : disk) {
                int nx = x + dx, ny = y + dy;
                // pixels beyond the border count as set so closing cannot
                // erode the image frame
                if (nx >= 0 && nx < w && ny >= 0 && ny < h && !dil.at(nx, ny, 0)) {
                    all = false;
                    break;
                }
            }
            ero.at(x, y, 0) = all ? 1 : 0;
        }
    return ero;
}

std::vector<std::pair<int, int>> moore_trace(const LabelVolume& mask) {
    const int w = mask.dims[0], h = mask.dims[1];
    Grid2d g{w, h, mask};
    // start: first foreground pixel in scan order
    int sx = -1, sy = -1;
    for (int y = 0; y < h && sx < 0; ++y)
        for (int x = 0; x < w; ++x)
            if (g.fg(x, y)) {
                sx = x;
                sy = y;
                break;
            }
    std::vector<std::pair<int, int>> contour;
    if (sx < 0) return contour;

    // Moore neighborhood, clockwise starting west
    const int nx8[] = {-1, -1, 0, 1, 1, 1, 0, -1};
    const int ny8[] = {0, -1, -1, -1, 0, 1, 1, 1};
    int cx = sx, cy = sy;
    int backtrack = 0;  // came from west (outside, since start is first in scan order)
    contour.emplace_back(cx, cy);
    for (std::size_t guard = 0; guard < mask.data.size() * 8 + 8; ++guard) {
        bool moved = false;
        for (int i = 0; i < 8; ++i) {
            int dir = (backtrack + 1 + i) % 8;
            int nx = cx + nx8[dir], ny = cy + ny8[dir];
            if (g.fg(nx, ny)) {
                // new backtrack points at the previously checked (empty) cell
                int prev = (dir + 7) % 8;
                int px = cx + nx8[prev], py = cy + ny8[prev];
                cx = nx;
                cy = ny;
                // direction from new cell back to that empty cell
                backtrack = 0;
                for (int d = 0; d < 8; ++d)
                    if (cx + nx8[d] == px && cy + ny8[d] == py) {
                        backtrack = d;
                        break;
                    }
                moved = true;
                break;
            }
        }
        if (!moved) break;  // isolated pixel
        if (cx == sx && cy == sy) break;
        contour.emplace_back(cx, cy);
    }
    return contour;
}

}  // namespace

ChestMask fill_chest_holes(const LabelVolume& mask, const CtPreprocessConfig& cfg) {
    if (mask.dims[2] != 1) throw std::invalid_argument("fill_chest_holes needs a 2D mask");
    bool any = false;
    for (auto v : mask.data)
        if (v) {
            any = true;
            break;
        }
    if (!any) throw std::runtime_error("empty mask");

    ChestMask out;
    out.filled = largest_component_8(mask);
    fill_holes_inplace(out.filled);
    out.filled = morph_close(out.filled, cfg.morph_radius);
    fill_holes_inplace(out.filled);
    out.chest_contour = moore_trace(out.filled);
    return out;
}

ScalarVolume remove_gantry(const ScalarVolume& image, const LabelVolume& filled) {
    if (!filled.matches_geometry(image)) throw std::invalid_argument("dims mismatch");
    ScalarVolume out = image;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (!filled.data[i]) out.data[i] = 0.0;
    return out;
}

ScalarVolume clahe(const ScalarVolume& image, const CtPreprocessConfig& cfg) {
    if (image.dims[2] != 1) throw std::invalid_argument("clahe needs a 2D image");
    if (cfg.clahe_tiles < 1 || cfg.clahe_clip < 1.0)
        throw std::invalid_argument("invalid clahe config");
    const int w = image.dims[0], h = image.dims[1];
    auto [lo, hi] = data_range(image.data);
    ScalarVolume out = image;
    if (!(hi > lo)) return out;  // constant image is unchanged

    constexpr int kLevels = 256;
    const int tiles = std::min({cfg.clahe_tiles, w, h});
    std::vector<int> q(image.data.size());
    for (std::size_t i = 0; i < image.data.size(); ++i)
        q[i] = bin_of(image.data[i], lo, hi, kLevels);

    // tile t covers pixels [t*dim/tiles, (t+1)*dim/tiles)
    auto tile_lo = [&](int t, int dim) { return t * dim / tiles; };
    auto tile_hi = [&](int t, int dim) { return (t + 1) * dim / tiles; };

    // per-tile clipped, equalized mapping: level -> [0, 255]
    std::vector<std::array<double, kLevels>> mapping(static_cast<std::size_t>(tiles) * tiles);
    std::vector<double> centers_x(tiles), centers_y(tiles);
    for (int ty = 0; ty < tiles; ++ty)
        for (int tx = 0; tx < tiles; ++tx) {
            int x0 = tile_lo(tx, w), x1 = tile_hi(tx, w);
            int y0 = tile_lo(ty, h), y1 = tile_hi(ty, h);
            std::array<long long, kLevels> hist{};
            long long n = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    ++hist[q[image.index(x, y, 0)]];
                    ++n;
                }
            centers_x[tx] = 0.5 * (x0 + x1 - 1);
            centers_y[ty] = 0.5 * (y0 + y1 - 1);

            long long limit = static_cast<long long>(cfg.clahe_clip * n / kLevels);
            limit = std::max<long long>(limit, 1);
            long long excess = 0;
            for (auto& c : hist)
                if (c > limit) {
                    excess += c - limit;
                    c = limit;
                }
            long long add = excess / kLevels, residue = excess % kLevels;
            for (int b = 0; b < kLevels; ++b) hist[b] += add + (b < residue ? 1 : 0);

            // cdf-min normalization keeps the extremes anchored
            long long cdf = 0, cdf_min = -1;
            auto& map = mapping[static_cast<std::size_t>(ty) * tiles + tx];
            for (int b = 0; b < kLevels; ++b) {
                cdf += hist[b];
                if (cdf_min < 0 && cdf > 0) cdf_min = cdf;
                double denom = static_cast<double>(n - cdf_min);
                map[b] = denom > 0 ? 255.0 * (cdf - cdf_min) / denom : 0.0;
            }
        }

    for (int y = 0; y < h; ++y) {
        // bracketing tile rows
        int ty1 = 0;
        while (ty1 + 1 < tiles && centers_y[ty1 + 1] <= y) ++ty1;
        int ty2 = std::min(ty1 + 1, tiles - 1);
        if (y < centers_y[ty1]) ty2 = ty1;
        double fy = (ty2 > ty1) ? (y - centers_y[ty1]) / (centers_y[ty2] - centers_y[ty1]) : 0.0;
        fy = std::clamp(fy, 0.0, 1.0);
        for (int x = 0; x < w; ++x) {
            int tx1 = 0;
            while (tx1 + 1 < tiles && centers_x[tx1 + 1] <= x) ++tx1;
            int tx2 = std::min(tx1 + 1, tiles - 1);
            if (x < centers_x[tx1]) tx2 = tx1;
            double fx =
                (tx2 > tx1) ? (x - centers_x[tx1]) / (centers_x[tx2] - centers_x[tx1]) : 0.0;
            fx = std::clamp(fx, 0.0, 1.0);

            int level = q[image.index(x, y, 0)];
            double m11 = mapping[static_cast<std::size_t>(ty1) * tiles + tx1][level];
            double m12 = mapping[static_cast<std::size_t>(ty1) * tiles + tx2][level];
            double m21 = mapping[static_cast<std::size_t>(ty2) * tiles + tx1][level];
            double m22 = mapping[static_cast<std::size_t>(ty2) * tiles + tx2][level];
            double blended = (1 - fy) * ((1 - fx) * m11 + fx * m12) +
                             fy * ((1 - fx) * m21 + fx * m22);
            out.data[image.index(x, y, 0)] = lo + blended / 255.0 * (hi - lo);
        }
    }
    return out;
}

}  // namespace mia
