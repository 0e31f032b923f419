#include "mia/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "mia/preprocess.hpp"
#include "mia/rng.hpp"

namespace mia {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

ColorImage rgb_to_hsv(const ColorImage& img) {
    ColorImage out = img;
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        double r = img.data[3 * p] / 255.0;
        double g = img.data[3 * p + 1] / 255.0;
        double b = img.data[3 * p + 2] / 255.0;
        double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        double delta = mx - mn;
        double h = 0.0;
        if (delta > 0) {
            if (mx == r)
                h = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
            else if (mx == g)
                h = 60.0 * ((b - r) / delta + 2.0);
            else
                h = 60.0 * ((r - g) / delta + 4.0);
        }
        double s = mx > 0 ? delta / mx : 0.0;
        out.data[3 * p] = static_cast<std::uint8_t>(std::lround(h / 360.0 * 255.0));
        out.data[3 * p + 1] = static_cast<std::uint8_t>(std::lround(s * 255.0));
        out.data[3 * p + 2] = static_cast<std::uint8_t>(std::lround(mx * 255.0));
    }
    return out;
}

std::vector<double> color_stats(const ColorImage& img, const LabelVolume& mask) {
    if (mask.dims[0] != img.width || mask.dims[1] != img.height || mask.dims[2] != 1)
        throw std::invalid_argument("mask size mismatch");
    ColorImage hsv = rgb_to_hsv(img);
    const ColorImage* sources[2] = {&img, &hsv};

    std::vector<double> out;
    out.reserve(42);
    std::vector<double> vals;
    for (const ColorImage* src : sources)
        for (int c = 0; c < 3; ++c) {
            vals.clear();
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    if (mask.at(x, y, 0)) vals.push_back(src->channel(x, y, c));
            if (vals.empty()) throw std::runtime_error("empty mask in color_stats");
            double n = static_cast<double>(vals.size());
            double mean = 0, mn = 255, mx = 0;
            for (double v : vals) {
                mean += v;
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            mean /= n;
            double m2 = 0, m3 = 0, m4 = 0;
            for (double v : vals) {
                double d = v - mean;
                m2 += d * d;
                m3 += d * d * d;
                m4 += d * d * d * d;
            }
            m2 /= n;
            m3 /= n;
            m4 /= n;
            double sstd = n > 1 ? std::sqrt(m2 * n / (n - 1)) : 0.0;
            double skew = m2 > 1e-12 ? m3 / std::pow(m2, 1.5) : 0.0;
            double kurt = m2 > 1e-12 ? m4 / (m2 * m2) - 3.0 : 0.0;
            std::array<double, 256> hist{};
            for (double v : vals) hist[static_cast<int>(v)] += 1.0;
            double entropy = 0.0;
            for (double h : hist)
                if (h > 0) {
                    double p = h / n;
                    entropy -= p * std::log2(p);
                }
            out.insert(out.end(), {mean, sstd, mn, mx, skew, kurt, entropy});
        }
    return out;
}

LabelVolume canny(const ScalarVolume& gray, double sigma, double low, double high) {
    if (gray.dims[2] != 1) throw std::invalid_argument("canny needs a 2D image");
    if (high < low || low <= 0 || high > 1)
        throw std::invalid_argument("thresholds must satisfy 0 < low <= high <= 1");
    const int w = gray.dims[0], h = gray.dims[1];

    // separable gaussian blur
    ScalarVolume blurred = gray;
    if (sigma > 0) {
        int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
        std::vector<double> kernel(2 * radius + 1);
        double sum = 0;
        for (int i = -radius; i <= radius; ++i) {
            kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
            sum += kernel[i + radius];
        }
        for (double& k : kernel) k /= sum;
        ScalarVolume tmp = gray;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * gray.at(std::clamp(x + k, 0, w - 1), y, 0);
                tmp.at(x, y, 0) = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * tmp.at(x, std::clamp(y + k, 0, h - 1), 0);
                blurred.at(x, y, 0) = acc;
            }
    }

    // Sobel gradients
    std::vector<double> mag(static_cast<std::size_t>(w) * h, 0.0);
    std::vector<int> dir(static_cast<std::size_t>(w) * h, 0);  // 0°,45°,90°,135°
    double max_mag = 0.0;
    auto px = [&](int x, int y) {
        return blurred.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1), 0);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
            double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
            double m = std::sqrt(gx * gx + gy * gy);
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            mag[i] = m;
            max_mag = std::max(max_mag, m);
            double angle = std::atan2(gy, gx) * 180.0 / kPi;
            if (angle < 0) angle += 180.0;
            if (angle < 22.5 || angle >= 157.5)
                dir[i] = 0;
            else if (angle < 67.5)
                dir[i] = 1;
            else if (angle < 112.5)
                dir[i] = 2;
            else
                dir[i] = 3;
        }

    LabelVolume edges = make_labels(gray.dims, 2, gray.spacing, gray.origin);
    if (max_mag <= 0) return edges;

    // non-maximum suppression then hysteresis
    double t_high = high * max_mag, t_low = low * max_mag;
    std::vector<std::uint8_t> state(mag.size(), 0);  // 1 weak, 2 strong
    const int ndx[4] = {1, 1, 0, -1};
    const int ndy[4] = {0, 1, 1, 1};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (mag[i] < t_low) continue;
            int dx = ndx[dir[i]], dy = ndy[dir[i]];
            double m1 = 0, m2 = 0;
            if (x + dx >= 0 && x + dx < w && y + dy >= 0 && y + dy < h)
                m1 = mag[static_cast<std::size_t>(y + dy) * w + (x + dx)];
            if (x - dx >= 0 && x - dx < w && y - dy >= 0 && y - dy < h)
                m2 = mag[static_cast<std::size_t>(y - dy) * w + (x - dx)];
            // strict on the forward side so exact ties keep a single pixel
            if (!(mag[i] > m1 && mag[i] >= m2)) continue;
            state[i] = mag[i] >= t_high ? 2 : 1;
        }

    std::deque<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (state[static_cast<std::size_t>(y) * w + x] == 2) {
                edges.at(x, y, 0) = 1;
                q.emplace_back(x, y);
            }
    while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop_front();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int nx = x + dx, ny = y + dy;
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                std::size_t i = static_cast<std::size_t>(ny) * w + nx;
                if (state[i] == 1 && !edges.at(nx, ny, 0)) {
                    edges.at(nx, ny, 0) = 1;
                    q.emplace_back(nx, ny);
                }
            }
    }
    return edges;
}

namespace {

LabelVolume largest_component(const LabelVolume& mask) {
    const int w = mask.dims[0], h = mask.dims[1];
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(w) * h, 0);
    std::vector<std::size_t> best, cells;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            std::size_t si = static_cast<std::size_t>(sy) * w + sx;
            if (!mask.data[si] || seen[si]) continue;
            cells.clear();
            std::deque<std::pair<int, int>> q{{sx, sy}};
            seen[si] = 1;
            while (!q.empty()) {
                auto [x, y] = q.front();
                q.pop_front();
                cells.push_back(static_cast<std::size_t>(y) * w + x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = x + dx, ny = y + dy;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (mask.data[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            q.emplace_back(nx, ny);
                        }
                    }
            }
            if (cells.size() > best.size()) best = cells;
        }
    LabelVolume out = make_labels(mask.dims, 2, mask.spacing, mask.origin);
    for (std::size_t i : best) out.data[i] = 1;
    return out;
}

double moore_perimeter(const LabelVolume& mask) {
    const int w = mask.dims[0], h = mask.dims[1];
    auto fg = [&](int x, int y) {
        return x >= 0 && x < w && y >= 0 && y < h && mask.at(x, y, 0) != 0;
    };
    int sx = -1, sy = -1;
    for (int y = 0; y < h && sx < 0; ++y)
        for (int x = 0; x < w; ++x)
            if (fg(x, y)) {
                sx = x;
                sy = y;
                break;
            }
    if (sx < 0) return 0.0;

    const int nx8[] = {-1, -1, 0, 1, 1, 1, 0, -1};
    const int ny8[] = {0, -1, -1, -1, 0, 1, 1, 1};
    const double steplen[] = {1, std::sqrt(2.0), 1, std::sqrt(2.0),
                              1, std::sqrt(2.0), 1, std::sqrt(2.0)};
    int cx = sx, cy = sy, backtrack = 0;
    double perimeter = 0.0;
    for (std::size_t guard = 0; guard < mask.data.size() * 8 + 8; ++guard) {
        bool moved = false;
        for (int i = 0; i < 8; ++i) {
            int dir = (backtrack + 1 + i) % 8;
            int nx = cx + nx8[dir], ny = cy + ny8[dir];
            if (fg(nx, ny)) {
                int prev = (dir + 7) % 8;
                int px = cx + nx8[prev], py = cy + ny8[prev];
                perimeter += steplen[dir];
                cx = nx;
                cy = ny;
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
        if (!moved) return 1.0;  // isolated pixel
        if (cx == sx && cy == sy) break;
    }
    return perimeter;
}

}  // namespace

std::vector<double> shape_features(const LabelVolume& mask) {
    bool any = false;
    for (auto v : mask.data)
        if (v) {
            any = true;
            break;
        }
    if (!any) throw std::runtime_error("empty mask in shape_features");

    LabelVolume comp = largest_component(mask);
    double area = 0;
    for (auto v : comp.data) area += v ? 1.0 : 0.0;
    double perimeter = moore_perimeter(comp);
    double circularity = perimeter > 0 ? std::min(4.0 * kPi * area / (perimeter * perimeter), 1.05)
                                       : 1.05;
    double compactness = area > 0 ? perimeter * perimeter / area : 0.0;

    // raw moments up to order 3
    double m00 = 0, m10 = 0, m01 = 0;
    for (int y = 0; y < comp.dims[1]; ++y)
        for (int x = 0; x < comp.dims[0]; ++x)
            if (comp.at(x, y, 0)) {
                m00 += 1;
                m10 += x;
                m01 += y;
            }
    double cx = m10 / m00, cy = m01 / m00;
    double mu[4][4] = {};
    for (int y = 0; y < comp.dims[1]; ++y)
        for (int x = 0; x < comp.dims[0]; ++x)
            if (comp.at(x, y, 0)) {
                double dx = x - cx, dy = y - cy;
                double dxp[4] = {1, dx, dx * dx, dx * dx * dx};
                double dyp[4] = {1, dy, dy * dy, dy * dy * dy};
                for (int p = 0; p <= 3; ++p)
                    for (int q = 0; q + p <= 3; ++q) mu[p][q] += dxp[p] * dyp[q];
            }
    auto eta = [&](int p, int q) { return mu[p][q] / std::pow(m00, 1.0 + (p + q) / 2.0); };
    double n20 = eta(2, 0), n02 = eta(0, 2), n11 = eta(1, 1);
    double n30 = eta(3, 0), n03 = eta(0, 3), n21 = eta(2, 1), n12 = eta(1, 2);

    double hu[7];
    hu[0] = n20 + n02;
    hu[1] = (n20 - n02) * (n20 - n02) + 4 * n11 * n11;
    hu[2] = (n30 - 3 * n12) * (n30 - 3 * n12) + (3 * n21 - n03) * (3 * n21 - n03);
    hu[3] = (n30 + n12) * (n30 + n12) + (n21 + n03) * (n21 + n03);
    hu[4] = (n30 - 3 * n12) * (n30 + n12) *
                ((n30 + n12) * (n30 + n12) - 3 * (n21 + n03) * (n21 + n03)) +
            (3 * n21 - n03) * (n21 + n03) *
                (3 * (n30 + n12) * (n30 + n12) - (n21 + n03) * (n21 + n03));
    hu[5] = (n20 - n02) * ((n30 + n12) * (n30 + n12) - (n21 + n03) * (n21 + n03)) +
            4 * n11 * (n30 + n12) * (n21 + n03);
    hu[6] = (3 * n21 - n03) * (n30 + n12) *
                ((n30 + n12) * (n30 + n12) - 3 * (n21 + n03) * (n21 + n03)) -
            (n30 - 3 * n12) * (n21 + n03) *
                (3 * (n30 + n12) * (n30 + n12) - (n21 + n03) * (n21 + n03));

    std::vector<double> out = {area, perimeter, circularity, compactness};
    for (double h : hu) {
        double sign = h > 0 ? 1.0 : (h < 0 ? -1.0 : 0.0);
        out.push_back(sign * std::log10(std::abs(h) + 1e-30));
    }
    return out;
}

std::vector<double> glcm_features(const ScalarVolume& gray, const LabelVolume& mask,
                                  const GlcmConfig& cfg) {
    if (gray.dims[2] != 1) throw std::invalid_argument("glcm needs a 2D image");
    if (!mask.matches_geometry(gray)) throw std::invalid_argument("mask geometry mismatch");
    if (cfg.levels < 2) throw std::invalid_argument("levels must be >= 2");
    for (int d : cfg.distances)
        if (d < 1) throw std::invalid_argument("distances must be >= 1");

    // quantize over masked range
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < gray.data.size(); ++i)
        if (mask.data[i]) {
            lo = std::min(lo, gray.data[i]);
            hi = std::max(hi, gray.data[i]);
        }
    if (!std::isfinite(lo)) throw std::runtime_error("empty mask in glcm_features");
    std::vector<int> q(gray.data.size(), 0);
    if (hi > lo)
        for (std::size_t i = 0; i < gray.data.size(); ++i)
            q[i] = std::min(cfg.levels - 1,
                            static_cast<int>((gray.data[i] - lo) / (hi - lo) * cfg.levels));

    const int w = gray.dims[0], h = gray.dims[1], L = cfg.levels;
    std::vector<double> cm(static_cast<std::size_t>(L) * L);
    std::vector<double> out;
    out.reserve(cfg.distances.size() * cfg.angles.size() * 4);
    int empty_blocks = 0;

    for (int d : cfg.distances)
        for (int angle : cfg.angles) {
            int dx, dy;
            switch (angle) {
                case 0: dx = d; dy = 0; break;
                case 45: dx = d; dy = -d; break;
                case 90: dx = 0; dy = -d; break;
                case 135: dx = -d; dy = -d; break;
                default: throw std::invalid_argument("angles must be in {0,45,90,135}");
            }
            std::fill(cm.begin(), cm.end(), 0.0);
            double total = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (!mask.at(x, y, 0)) continue;
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h || !mask.at(nx, ny, 0)) continue;
                    int a = q[gray.index(x, y, 0)], b = q[gray.index(nx, ny, 0)];
                    cm[static_cast<std::size_t>(a) * L + b] += 1.0;
                    cm[static_cast<std::size_t>(b) * L + a] += 1.0;  // symmetric
                    total += 2.0;
                }
            double contrast = 0, homogeneity = 0, energy = 0, correlation = 0;
            if (total > 0) {
                for (auto& v : cm) v /= total;
                double mu_i = 0, mu_j = 0;
                for (int i = 0; i < L; ++i)
                    for (int j = 0; j < L; ++j) {
                        double p = cm[static_cast<std::size_t>(i) * L + j];
                        contrast += p * (i - j) * (i - j);
                        homogeneity += p / (1.0 + (i - j) * (i - j));
                        energy += p * p;
                        mu_i += i * p;
                        mu_j += j * p;
                    }
                double var_i = 0, var_j = 0, cov = 0;
                for (int i = 0; i < L; ++i)
                    for (int j = 0; j < L; ++j) {
                        double p = cm[static_cast<std::size_t>(i) * L + j];
                        var_i += (i - mu_i) * (i - mu_i) * p;
                        var_j += (j - mu_j) * (j - mu_j) * p;
                        cov += (i - mu_i) * (j - mu_j) * p;
                    }
                correlation = (var_i > 1e-12 && var_j > 1e-12)
                                  ? cov / std::sqrt(var_i * var_j)
                                  : 0.0;
            } else {
                ++empty_blocks;
            }
            out.insert(out.end(), {contrast, homogeneity, energy, correlation});
        }
    if (empty_blocks > 0)
        std::cerr << "warning: glcm: " << empty_blocks
                  << " (distance,angle) blocks had no valid pixel pairs, emitting zeros\n";
    return out;
}

std::vector<double> lbp_features(const ScalarVolume& gray, const LabelVolume& mask,
                                 const LbpConfig& cfg) {
    if (gray.dims[2] != 1) throw std::invalid_argument("lbp needs a 2D image");
    if (!mask.matches_geometry(gray)) throw std::invalid_argument("mask geometry mismatch");
    for (int r : cfg.radii)
        if (r < 1) throw std::invalid_argument("radii must be >= 1");
    bool any = false;
    for (auto v : mask.data)
        if (v) {
            any = true;
            break;
        }
    if (!any) throw std::runtime_error("empty mask in lbp_features");

    const int w = gray.dims[0], h = gray.dims[1];
    // corner-plus-differences form: exact on locally constant patches
    auto bilinear = [&](double x, double y) {
        int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        double fx = x - x0, fy = y - y0;
        int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        x0 = std::clamp(x0, 0, w - 1);
        y0 = std::clamp(y0, 0, h - 1);
        double v00 = gray.at(x0, y0, 0), v10 = gray.at(x1, y0, 0);
        double v01 = gray.at(x0, y1, 0), v11 = gray.at(x1, y1, 0);
        return v00 + fx * (v10 - v00) + fy * (v01 - v00) + fx * fy * (v00 + v11 - v10 - v01);
    };

    std::vector<double> out;
    out.reserve(cfg.total_bins());
    std::vector<int> bits;
    for (int r : cfg.radii) {
        const int P = cfg.points_for(r);
        std::vector<double> hist(cfg.bins_for(r), 0.0);
        double count = 0.0;
        bits.assign(P, 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!mask.at(x, y, 0)) continue;
                if (x - r < 0 || x + r > w - 1 || y - r < 0 || y + r > h - 1) continue;
                double center = gray.at(x, y, 0);
                int ones = 0, transitions = 0;
                for (int k = 0; k < P; ++k) {
                    double theta = 2.0 * kPi * k / P;
                    double sx = x + r * std::cos(theta);
                    double sy = y - r * std::sin(theta);
                    bits[k] = bilinear(sx, sy) >= center ? 1 : 0;
                    ones += bits[k];
                }
                for (int k = 0; k < P; ++k) transitions += bits[k] != bits[(k + 1) % P];
                int bin = transitions <= 2 ? ones : P + 1;
                hist[bin] += 1.0;
                count += 1.0;
            }
        if (count > 0)
            for (double& v : hist) v /= count;
        else
            std::fill(hist.begin(), hist.end(), 1.0 / hist.size());
        out.insert(out.end(), hist.begin(), hist.end());
    }
    return out;
}

ScalarVolume luminance(const ColorImage& img) {
    ScalarVolume g = make_image2d(img.width, img.height);
    for (std::size_t p = 0; p < img.pixel_count(); ++p)
        g.data[p] = 0.299 * img.data[3 * p] + 0.587 * img.data[3 * p + 1] +
                    0.114 * img.data[3 * p + 2];
    return g;
}

FeatureVector extract_feature_vector(const ColorImage& img, const LabelVolume& lesion_mask) {
    FeatureVector fv;
    auto color = color_stats(img, lesion_mask);
    auto shape = shape_features(lesion_mask);
    ScalarVolume gray = luminance(img);
    auto glcm = glcm_features(gray, lesion_mask);
    auto lbp = lbp_features(gray, lesion_mask);

    fv.values.reserve(color.size() + shape.size() + glcm.size() + lbp.size());
    fv.values.insert(fv.values.end(), color.begin(), color.end());
    fv.values.insert(fv.values.end(), shape.begin(), shape.end());
    fv.values.insert(fv.values.end(), glcm.begin(), glcm.end());
    fv.values.insert(fv.values.end(), lbp.begin(), lbp.end());

    static const char* kChannels[] = {"r", "g", "b", "h", "s", "v"};
    static const char* kStats[] = {"mean", "std", "min", "max", "skew", "kurt", "entropy"};
    for (const char* ch : kChannels)
        for (const char* st : kStats)
            fv.names.push_back(std::string("color_") + ch + "_" + st);
    for (const char* n : {"area", "perimeter", "circularity", "compactness"})
        fv.names.push_back(std::string("shape_") + n);
    for (int i = 1; i <= 7; ++i) fv.names.push_back("shape_hu" + std::to_string(i));
    GlcmConfig gcfg;
    for (int d : gcfg.distances)
        for (int a : gcfg.angles)
            for (const char* f : {"contrast", "homogeneity", "energy", "correlation"})
                fv.names.push_back("glcm_d" + std::to_string(d) + "_a" + std::to_string(a) + "_" +
                                   f);
    LbpConfig lcfg;
    for (int r : lcfg.radii)
        for (int b = 0; b < lcfg.bins_for(r); ++b)
            fv.names.push_back("lbp_r" + std::to_string(r) + "_b" + std::to_string(b));

    for (double v : fv.values)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite feature value");
    return fv;
}

LabelVolume lesion_mask_from_image(const ColorImage& img) {
    ScalarVolume gray = luminance(img);
    auto [threshold, above] = otsu_threshold(gray);
    (void)threshold;

    // lesion = the Otsu side with less border contact (interior object)
    const int w = above.dims[0], h = above.dims[1];
    std::size_t border_above = 0, border_total = 0;
    for (int x = 0; x < w; ++x) {
        border_above += above.at(x, 0, 0) + above.at(x, h - 1, 0);
        border_total += 2;
    }
    for (int y = 0; y < h; ++y) {
        border_above += above.at(0, y, 0) + above.at(w - 1, y, 0);
        border_total += 2;
    }
    LabelVolume lesion = above;
    if (border_above * 2 > border_total)  // bright side touches the border more
        for (auto& v : lesion.data) v = v ? 0 : 1;

    CtPreprocessConfig cfg;
    cfg.morph_radius = 1;
    return fill_chest_holes(lesion, cfg).filled;
}

namespace {

ColorImage resize_bilinear(const ColorImage& img, int nw, int nh) {
    ColorImage out;
    out.width = nw;
    out.height = nh;
    out.data.resize(static_cast<std::size_t>(nw) * nh * 3);
    double sx = static_cast<double>(img.width) / nw;
    double sy = static_cast<double>(img.height) / nh;
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) {
            double u = (x + 0.5) * sx - 0.5;
            double v = (y + 0.5) * sy - 0.5;
            int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
            double fx = u - x0, fy = v - y0;
            int x1 = std::clamp(x0 + 1, 0, img.width - 1);
            int y1 = std::clamp(y0 + 1, 0, img.height - 1);
            x0 = std::clamp(x0, 0, img.width - 1);
            y0 = std::clamp(y0, 0, img.height - 1);
            for (int c = 0; c < 3; ++c) {
                double val = (1 - fx) * (1 - fy) * img.channel(x0, y0, c) +
                             fx * (1 - fy) * img.channel(x1, y0, c) +
                             (1 - fx) * fy * img.channel(x0, y1, c) +
                             fx * fy * img.channel(x1, y1, c);
                out.channel(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 255.0)));
            }
        }
    return out;
}

ColorImage central_crop(const ColorImage& img, double fraction) {
    int cw = std::max(1, static_cast<int>(std::lround(img.width * fraction)));
    int ch = std::max(1, static_cast<int>(std::lround(img.height * fraction)));
    if (cw >= img.width && ch >= img.height) return img;
    int x0 = (img.width - cw) / 2, y0 = (img.height - ch) / 2;
    ColorImage out;
    out.width = cw;
    out.height = ch;
    out.data.resize(static_cast<std::size_t>(cw) * ch * 3);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < 3; ++c) out.channel(x, y, c) = img.channel(x0 + x, y0 + y, c);
    return out;
}

}  // namespace

std::vector<ColorImage> augment(const ColorImage& img, const AugmentSpec& spec) {
    if (spec.copies < 0) throw std::invalid_argument("copies must be >= 0");
    Rng rng(spec.seed);
    std::vector<ColorImage> out;
    out.reserve(spec.copies);
    for (int copy = 0; copy < spec.copies; ++copy) {
        ColorImage cur = img;
        for (const auto& op : spec.ops) {
            switch (op.kind) {
                case AugmentOp::CentralCrop: {
                    if (op.a <= 0 || op.a > 1)
                        throw std::invalid_argument("crop fraction must be in (0,1]");
                    if (op.a < 1.0)
                        cur = resize_bilinear(central_crop(cur, op.a), img.width, img.height);
                    break;
                }
                case AugmentOp::Rescale: {
                    int nw = std::max(1, static_cast<int>(std::lround(cur.width * op.a)));
                    int nh = std::max(1, static_cast<int>(std::lround(cur.height * op.a)));
                    cur = resize_bilinear(resize_bilinear(cur, nw, nh), img.width, img.height);
                    break;
                }
                case AugmentOp::Contrast: {
                    for (auto& v : cur.data)
                        v = static_cast<std::uint8_t>(
                            std::clamp(std::lround(128.0 + op.a * (v - 128.0)), 0L, 255L));
                    break;
                }
                case AugmentOp::Zoom: {
                    if (op.a <= 0.5 || op.b >= 1.5 || op.a > op.b)
                        throw std::invalid_argument("zoom range must lie in (0.5, 1.5)");
                    double factor = rng.uniform(op.a, op.b);
                    double fraction = std::min(1.0, 1.0 / factor);
                    cur = resize_bilinear(central_crop(cur, fraction), img.width, img.height);
                    break;
                }
                case AugmentOp::FlipH: {
                    ColorImage flipped = cur;
                    for (int y = 0; y < cur.height; ++y)
                        for (int x = 0; x < cur.width; ++x)
                            for (int c = 0; c < 3; ++c)
                                flipped.channel(x, y, c) =
                                    cur.channel(cur.width - 1 - x, y, c);
                    cur = flipped;
                    break;
                }
                case AugmentOp::FlipV: {
                    ColorImage flipped = cur;
                    for (int y = 0; y < cur.height; ++y)
                        for (int x = 0; x < cur.width; ++x)
                            for (int c = 0; c < 3; ++c)
                                flipped.channel(x, y, c) =
                                    cur.channel(x, cur.height - 1 - y, c);
                    cur = flipped;
                    break;
                }
            }
        }
        out.push_back(std::move(cur));
    }
    return out;
}

}  // namespace mia
