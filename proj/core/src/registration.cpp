#include "mia/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "mia/rng.hpp"

namespace mia {

std::string metric_name(Metric m) {
    switch (m) {
        case Metric::MSE: return "MSE";
        case Metric::NCC: return "NCC";
        default: return "MI";
    }
}

Metric metric_from_name(const std::string& name) {
    if (name == "MSE") return Metric::MSE;
    if (name == "NCC") return Metric::NCC;
    if (name == "MI") return Metric::MI;
    throw std::invalid_argument("unknown metric '" + name + "'");
}

void ParameterMap::validate() const {
    if (pyramid_levels < 1) throw std::invalid_argument("pyramid_levels must be >= 1");
    if (static_cast<int>(pyramid_schedule.size()) != pyramid_levels ||
        static_cast<int>(iterations_per_level.size()) != pyramid_levels)
        throw std::invalid_argument("pyramid schedule/iteration length mismatch");
    for (std::size_t i = 0; i < pyramid_schedule.size(); ++i) {
        if (pyramid_schedule[i] < 1) throw std::invalid_argument("pyramid factors must be >= 1");
        if (i > 0 && pyramid_schedule[i] > pyramid_schedule[i - 1])
            throw std::invalid_argument("pyramid factors must be non-increasing");
        if (iterations_per_level[i] < 1) throw std::invalid_argument("iterations must be >= 1");
    }
    if (pyramid_schedule.back() != 1)
        throw std::invalid_argument("pyramid schedule must end at full resolution");
    if (mi_bins < 8) throw std::invalid_argument("mi_bins must be >= 8");
    if (bending_weight < 0) throw std::invalid_argument("bending_weight must be >= 0");
    if (grid_spacing_mm <= 0) throw std::invalid_argument("grid_spacing_mm must be positive");
    if (step_init <= 0 || step_min <= 0 || step_min > step_init)
        throw std::invalid_argument("invalid optimizer steps");
    if (!sampler_full && sample_count < 64)
        throw std::invalid_argument("random sampler needs >= 64 samples");
}

namespace {
using nlohmann::json;

json map_to_json_obj(const ParameterMap& m) {
    json j;
    j["transform_kind"] = m.transform_kind == TransformKind::Affine ? "affine" : "bspline";
    j["metric"] = metric_name(m.metric);
    j["pyramid_levels"] = m.pyramid_levels;
    j["pyramid_schedule"] = m.pyramid_schedule;
    j["iterations_per_level"] = m.iterations_per_level;
    j["grid_spacing_mm"] = m.grid_spacing_mm;
    j["mi_bins"] = m.mi_bins;
    j["bending_weight"] = m.bending_weight;
    j["step_init"] = m.step_init;
    j["step_min"] = m.step_min;
    j["sampler"] = m.sampler_full ? "full" : "random";
    if (!m.sampler_full) {
        j["sample_count"] = m.sample_count;
        j["sampler_seed"] = m.sampler_seed;
    }
    return j;
}

ParameterMap map_from_json_obj(const json& j) {
    ParameterMap m;
    std::string kind = j.at("transform_kind");
    if (kind == "affine")
        m.transform_kind = TransformKind::Affine;
    else if (kind == "bspline")
        m.transform_kind = TransformKind::Bspline;
    else
        throw std::invalid_argument("unknown transform_kind '" + kind + "'");
    m.metric = metric_from_name(j.at("metric"));
    m.pyramid_levels = j.at("pyramid_levels");
    m.pyramid_schedule = j.at("pyramid_schedule").get<std::vector<int>>();
    m.iterations_per_level = j.at("iterations_per_level").get<std::vector<int>>();
    if (j.contains("grid_spacing_mm")) m.grid_spacing_mm = j.at("grid_spacing_mm");
    if (j.contains("mi_bins")) m.mi_bins = j.at("mi_bins");
    if (j.contains("bending_weight")) m.bending_weight = j.at("bending_weight");
    if (j.contains("step_init")) m.step_init = j.at("step_init");
    if (j.contains("step_min")) m.step_min = j.at("step_min");
    std::string sampler = j.value("sampler", "full");
    m.sampler_full = sampler == "full";
    if (!m.sampler_full) {
        m.sample_count = j.value("sample_count", std::size_t{8192});
        m.sampler_seed = j.value("sampler_seed", std::uint64_t{0});
    }
    m.validate();
    return m;
}
}  // namespace

std::string parameter_map_to_json(const ParameterMap& map) { return map_to_json_obj(map).dump(2); }

ParameterMap parameter_map_from_json(const std::string& text) {
    return map_from_json_obj(json::parse(text));
}

std::string parameter_maps_to_json(const std::vector<ParameterMap>& maps) {
    json arr = json::array();
    for (const auto& m : maps) arr.push_back(map_to_json_obj(m));
    return arr.dump(2);
}

std::vector<ParameterMap> parameter_maps_from_json(const std::string& text) {
    json arr = json::parse(text);
    std::vector<ParameterMap> maps;
    for (const auto& j : arr) maps.push_back(map_from_json_obj(j));
    return maps;
}

namespace {

ParameterMap affine_preset(Metric metric) {
    ParameterMap m;
    m.transform_kind = TransformKind::Affine;
    m.metric = metric;
    m.pyramid_levels = 3;
    m.pyramid_schedule = {4, 2, 1};
    m.iterations_per_level = {80, 50, 30};
    m.step_init = 4.0;
    m.step_min = 0.005;
    m.sampler_full = true;
    return m;
}

ParameterMap bspline_preset(Metric metric, double spacing_mm) {
    ParameterMap m;
    m.transform_kind = TransformKind::Bspline;
    m.metric = metric;
    m.pyramid_levels = 3;
    m.pyramid_schedule = {4, 2, 1};
    m.iterations_per_level = {40, 30, 20};
    m.grid_spacing_mm = spacing_mm;
    m.step_init = 2.0;
    m.step_min = 0.01;
    m.sampler_full = false;
    m.sample_count = 8192;
    return m;
}

}  // namespace

const std::vector<std::string>& PresetLibrary::names() {
    static const std::vector<std::string> kNames = {"affine-mse",  "affine-mi",
                                                    "bspline-mi",  "bspline-ncc",
                                                    "bspline-mattes", "combined-best"};
    return kNames;
}

bool PresetLibrary::has(const std::string& name) {
    const auto& n = names();
    return std::find(n.begin(), n.end(), name) != n.end();
}

std::vector<ParameterMap> PresetLibrary::get(const std::string& name) {
    if (name == "affine-mse") return {affine_preset(Metric::MSE)};
    if (name == "affine-mi") return {affine_preset(Metric::MI)};
    if (name == "bspline-mi") return {bspline_preset(Metric::MI, 16.0)};
    if (name == "bspline-ncc") return {bspline_preset(Metric::NCC, 16.0)};
    // Mattes-style preset runs plain joint-histogram MI (documented substitute)
    if (name == "bspline-mattes") return {bspline_preset(Metric::MI, 16.0)};
    if (name == "combined-best")
        return {affine_preset(Metric::MI), bspline_preset(Metric::NCC, 16.0),
                bspline_preset(Metric::NCC, 8.0)};
    throw std::invalid_argument("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// metric accumulators
// ---------------------------------------------------------------------------

namespace {

constexpr double kHugeCost = 1e30;

// Σ k·log2(k) lookup for integer histogram counts.
class XLog2Table {
  public:
    explicit XLog2Table(std::size_t max_count) : values_(max_count + 1) {
        values_[0] = 0.0;
        for (std::size_t k = 1; k < values_.size(); ++k)
            values_[k] = static_cast<double>(k) * std::log2(static_cast<double>(k));
    }
    double operator()(double c) const { return values_[static_cast<std::size_t>(c + 0.5)]; }

  private:
    std::vector<double> values_;
};

class MetricAcc {
  public:
    MetricAcc(Metric metric, int bins, const XLog2Table* lut)
        : metric_(metric), bins_(bins), lut_(lut) {
        if (metric_ == Metric::MI) {
            hist_.assign(static_cast<std::size_t>(bins_) * bins_, 0.0);
            row_.assign(bins_, 0.0);
            col_.assign(bins_, 0.0);
        }
    }

    void clear() {
        n_ = 0;
        sum_sq_ = sf_ = sw_ = sff_ = sww_ = sfw_ = 0.0;
        if (metric_ == Metric::MI) {
            std::fill(hist_.begin(), hist_.end(), 0.0);
            std::fill(row_.begin(), row_.end(), 0.0);
            std::fill(col_.begin(), col_.end(), 0.0);
            s_joint_ = s_row_ = s_col_ = 0.0;
        }
    }

    void add(double f, int fbin, double w, int wbin) { update(f, fbin, w, wbin, +1.0); }
    void remove(double f, int fbin, double w, int wbin) { update(f, fbin, w, wbin, -1.0); }

    double cost() const {
        switch (metric_) {
            case Metric::MSE:
                return n_ > 0 ? sum_sq_ / n_ : kHugeCost;
            case Metric::NCC: {
                if (n_ < 2) return kHugeCost;
                double vf = n_ * sff_ - sf_ * sf_;
                double vw = n_ * sww_ - sw_ * sw_;
                double denom = vf * vw;
                if (denom <= 1e-24) return 0.0;  // no correlation information
                return -(n_ * sfw_ - sf_ * sw_) / std::sqrt(denom);
            }
            default: {
                if (n_ <= 0) return kHugeCost;
                double mi = (s_joint_ - s_row_ - s_col_) / n_ + std::log2(n_);
                return -mi;
            }
        }
    }

  private:
    void update(double f, int fbin, double w, int wbin, double sign) {
        n_ += sign;
        switch (metric_) {
            case Metric::MSE:
                sum_sq_ += sign * (f - w) * (f - w);
                break;
            case Metric::NCC:
                sf_ += sign * f;
                sw_ += sign * w;
                sff_ += sign * f * f;
                sww_ += sign * w * w;
                sfw_ += sign * f * w;
                break;
            default: {
                const XLog2Table& lut = *lut_;
                double& h = hist_[static_cast<std::size_t>(fbin) * bins_ + wbin];
                s_joint_ += lut(h + sign) - lut(h);
                h += sign;
                double& r = row_[fbin];
                s_row_ += lut(r + sign) - lut(r);
                r += sign;
                double& c = col_[wbin];
                s_col_ += lut(c + sign) - lut(c);
                c += sign;
            }
        }
    }

    Metric metric_;
    int bins_;
    const XLog2Table* lut_;
    double n_ = 0;
    double sum_sq_ = 0, sf_ = 0, sw_ = 0, sff_ = 0, sww_ = 0, sfw_ = 0;
    std::vector<double> hist_, row_, col_;
    double s_joint_ = 0, s_row_ = 0, s_col_ = 0;
};

struct Range {
    double lo = 0, hi = 1;
};

Range finite_range(const std::vector<double>& data) {
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (double v : data) {
        r.lo = std::min(r.lo, v);
        r.hi = std::max(r.hi, v);
    }
    if (!(r.hi > r.lo)) r.hi = r.lo + 1.0;
    return r;
}

int range_bin(double v, const Range& r, int bins) {
    int b = static_cast<int>((v - r.lo) / (r.hi - r.lo) * bins);
    return std::clamp(b, 0, bins - 1);
}

// trilinear sample of moving at a physical point; false when out of bounds
bool sample_moving(const ScalarVolume& vol, const Vec3& mm, double& value) {
    double vc[3] = {(mm.x - vol.origin.x) / vol.spacing.x, (mm.y - vol.origin.y) / vol.spacing.y,
                    (mm.z - vol.origin.z) / vol.spacing.z};
    int i0[3];
    double fr[3];
    for (int a = 0; a < 3; ++a) {
        if (vol.dims[a] == 1) {
            if (vc[a] < -0.5 || vc[a] > 0.5) return false;
            i0[a] = 0;
            fr[a] = 0.0;
            continue;
        }
        if (vc[a] < 0.0 || vc[a] > vol.dims[a] - 1) return false;
        double fl = std::floor(vc[a]);
        int i = static_cast<int>(fl);
        if (i >= vol.dims[a] - 1) {
            i = vol.dims[a] - 2;
            fl = i;
        }
        i0[a] = i;
        fr[a] = vc[a] - fl;
    }
    double acc = 0.0;
    for (int c = 0; c < 2; ++c) {
        int zi = std::min(i0[2] + c, vol.dims[2] - 1);
        double wz = c ? fr[2] : 1.0 - fr[2];
        if (wz == 0.0) continue;
        for (int b = 0; b < 2; ++b) {
            int yi = std::min(i0[1] + b, vol.dims[1] - 1);
            double wy = b ? fr[1] : 1.0 - fr[1];
            if (wy == 0.0) continue;
            for (int a = 0; a < 2; ++a) {
                int xi = std::min(i0[0] + a, vol.dims[0] - 1);
                double wx = a ? fr[0] : 1.0 - fr[0];
                if (wx == 0.0) continue;
                acc += wx * wy * wz * vol.at(xi, yi, zi);
            }
        }
    }
    value = acc;
    return true;
}

}  // namespace

double similarity(const ScalarVolume& fixed, const ScalarVolume& warped, Metric metric,
                  int mi_bins, const LabelVolume* mask) {
    if (!fixed.same_grid(warped)) throw std::invalid_argument("geometry mismatch");
    if (mask && !mask->matches_geometry(fixed)) throw std::invalid_argument("mask mismatch");

    std::vector<double> fv, wv;
    fv.reserve(fixed.data.size());
    wv.reserve(fixed.data.size());
    for (std::size_t i = 0; i < fixed.data.size(); ++i) {
        if (mask && !mask->data[i]) continue;
        fv.push_back(fixed.data[i]);
        wv.push_back(warped.data[i]);
    }
    if (fv.empty()) throw std::runtime_error("empty overlap/mask in similarity");

    switch (metric) {
        case Metric::MSE: {
            double s = 0.0;
            for (std::size_t i = 0; i < fv.size(); ++i) s += (fv[i] - wv[i]) * (fv[i] - wv[i]);
            return s / fv.size();
        }
        case Metric::NCC: {
            double n = static_cast<double>(fv.size());
            double sf = 0, sw = 0, sff = 0, sww = 0, sfw = 0;
            for (std::size_t i = 0; i < fv.size(); ++i) {
                sf += fv[i];
                sw += wv[i];
                sff += fv[i] * fv[i];
                sww += wv[i] * wv[i];
                sfw += fv[i] * wv[i];
            }
            double vf = n * sff - sf * sf, vw = n * sww - sw * sw;
            if (vf <= 0 || vw <= 0) throw std::runtime_error("zero-variance input for NCC");
            return -(n * sfw - sf * sw) / std::sqrt(vf * vw);
        }
        default: {
            Range rf = finite_range(fv), rw = finite_range(wv);
            XLog2Table lut(fv.size());
            MetricAcc acc(Metric::MI, mi_bins, &lut);
            for (std::size_t i = 0; i < fv.size(); ++i)
                acc.add(fv[i], range_bin(fv[i], rf, mi_bins), wv[i],
                        range_bin(wv[i], rw, mi_bins));
            return acc.cost();
        }
    }
}

// ---------------------------------------------------------------------------
// pyramid
// ---------------------------------------------------------------------------

namespace {

ScalarVolume gaussian_smooth(const ScalarVolume& v, double sigma) {
    if (sigma <= 0) return v;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) k /= sum;

    ScalarVolume cur = v;
    ScalarVolume tmp = v;
    for (int axis = 0; axis < 3; ++axis) {
        if (v.dims[axis] == 1) continue;
        int step[3] = {0, 0, 0};
        step[axis] = 1;
        for (int z = 0; z < v.dims[2]; ++z)
            for (int y = 0; y < v.dims[1]; ++y)
                for (int x = 0; x < v.dims[0]; ++x) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        int xi = x + k * step[0], yi = y + k * step[1], zi = z + k * step[2];
                        xi = std::clamp(xi, 0, v.dims[0] - 1);
                        yi = std::clamp(yi, 0, v.dims[1] - 1);
                        zi = std::clamp(zi, 0, v.dims[2] - 1);
                        acc += kernel[k + radius] * cur.at(xi, yi, zi);
                    }
                    tmp.at(x, y, z) = acc;
                }
        std::swap(cur, tmp);
    }
    return cur;
}

ScalarVolume downsample(const ScalarVolume& v, int factor) {
    if (factor <= 1) return v;
    Dims3 nd;
    for (int a = 0; a < 3; ++a) nd[a] = std::max(1, (v.dims[a] + factor - 1) / factor);
    ScalarVolume out = make_volume(nd,
                                   {v.spacing.x * factor, v.spacing.y * factor,
                                    v.spacing.z * factor},
                                   v.origin);
    for (int z = 0; z < nd[2]; ++z)
        for (int y = 0; y < nd[1]; ++y)
            for (int x = 0; x < nd[0]; ++x)
                out.at(x, y, z) = v.at(std::min(x * factor, v.dims[0] - 1),
                                       std::min(y * factor, v.dims[1] - 1),
                                       std::min(z * factor, v.dims[2] - 1));
    return out;
}

ScalarVolume pyramid_level(const ScalarVolume& v, int factor) {
    if (factor <= 1) return v;
    return downsample(gaussian_smooth(v, 0.5 * factor), factor);
}

// ---------------------------------------------------------------------------
// stage models
// ---------------------------------------------------------------------------

struct AffineModel {
    double radius_mm = 1.0;  // scales matrix entries so one unit ~ 1 mm at the boundary
    Vec3 center{0, 0, 0};
    std::vector<double> x = std::vector<double>(12, 0.0);

    AffineTransform transform() const {
        AffineTransform a;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                a.matrix[r][c] = (r == c ? 1.0 : 0.0) + x[3 * r + c] / radius_mm;
        a.translation = {x[9], x[10], x[11]};
        a.center = center;
        return a;
    }
    AffineTransform transform_with(int j, double delta) const {
        AffineModel m = *this;
        m.x[j] += delta;
        return m.transform();
    }
};

struct BsplineModel {
    BsplineTransform t;
};

// ---------------------------------------------------------------------------
// cost engine (one stage at one pyramid level)
// ---------------------------------------------------------------------------

struct Sample {
    Vec3 q;       // frozen-chain image of the fixed-voxel physical point
    double f;     // fixed value
    int fbin;
    // cached state under current parameters
    double w = 0;
    int wbin = 0;
    bool valid = false;
    // bspline support (fixed, since displacement is evaluated at q)
    int base[3] = {0, 0, 0};
    double wx[4], wy[4], wz[4];
    bool supported = false;
    Vec3 disp{0, 0, 0};  // current displacement at q (bspline stages)
};

inline void cubic_weights(double t, double* b) {
    double t2 = t * t, t3 = t2 * t;
    b[0] = (1 - 3 * t + 3 * t2 - t3) / 6.0;
    b[1] = (4 - 6 * t2 + 3 * t3) / 6.0;
    b[2] = (1 + 3 * t + 3 * t2 - 3 * t3) / 6.0;
    b[3] = t3 / 6.0;
}

class CostEngine {
  public:
    CostEngine(const ScalarVolume& fixed_level, const ScalarVolume& moving_level,
               const ParameterMap& map, const TransformChain& frozen, std::uint64_t sample_seed)
        : moving_(moving_level), metric_(map.metric), bins_(map.mi_bins) {
        // sample positions
        std::size_t total = fixed_level.data.size();
        std::vector<std::size_t> chosen;
        if (map.sampler_full || map.sample_count >= total) {
            chosen.resize(total);
            std::iota(chosen.begin(), chosen.end(), 0);
        } else {
            // partial Fisher-Yates for a deterministic sample without replacement
            std::vector<std::size_t> idx(total);
            std::iota(idx.begin(), idx.end(), 0);
            Rng rng(sample_seed);
            chosen.reserve(map.sample_count);
            for (std::size_t i = 0; i < map.sample_count; ++i) {
                std::size_t j = i + rng.below(total - i);
                std::swap(idx[i], idx[j]);
                chosen.push_back(idx[i]);
            }
            std::sort(chosen.begin(), chosen.end());
        }

        Range rf = finite_range(fixed_level.data);
        rw_ = finite_range(moving_level.data);
        lut_ = std::make_unique<XLog2Table>(chosen.size());

        samples_.reserve(chosen.size());
        const int dx = fixed_level.dims[0], dy = fixed_level.dims[1];
        for (std::size_t lin : chosen) {
            int x = static_cast<int>(lin % dx);
            int y = static_cast<int>((lin / dx) % dy);
            int z = static_cast<int>(lin / (static_cast<std::size_t>(dx) * dy));
            Sample s;
            s.q = frozen.apply(fixed_level.physical(
                {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)}));
            s.f = fixed_level.data[lin];
            s.fbin = range_bin(s.f, rf, bins_);
            samples_.push_back(s);
        }
    }

    std::size_t sample_count() const { return samples_.size(); }

    void attach_bspline(const BsplineTransform& t) {
        grid_dims_ = t.grid_dims;
        grid_spacing_ = t.grid_spacing;
        grid_origin_ = t.grid_origin;
        cp_samples_.assign(t.control_point_count(), {});
        for (std::size_t si = 0; si < samples_.size(); ++si) {
            Sample& s = samples_[si];
            s.supported = true;
            double u[3] = {(s.q.x - grid_origin_.x) / grid_spacing_.x,
                           (s.q.y - grid_origin_.y) / grid_spacing_.y,
                           (s.q.z - grid_origin_.z) / grid_spacing_.z};
            for (int a = 0; a < 3; ++a) {
                double fl = std::floor(u[a]);
                int i = static_cast<int>(fl);
                if (i - 1 < 0 || i + 2 > grid_dims_[a] - 1) {
                    s.supported = false;
                    break;
                }
                s.base[a] = i - 1;
                double frac = u[a] - fl;
                if (a == 0)
                    cubic_weights(frac, s.wx);
                else if (a == 1)
                    cubic_weights(frac, s.wy);
                else
                    cubic_weights(frac, s.wz);
            }
            if (!s.supported) continue;
            for (int c = 0; c < 4; ++c)
                for (int b = 0; b < 4; ++b)
                    for (int a = 0; a < 4; ++a)
                        cp_samples_[linear_index(grid_dims_, s.base[0] + a, s.base[1] + b,
                                                 s.base[2] + c)]
                            .push_back(static_cast<int>(si));
        }
    }

    double cp_weight(const Sample& s, int ci, int cj, int ck) const {
        int a = ci - s.base[0], b = cj - s.base[1], c = ck - s.base[2];
        if (a < 0 || a > 3 || b < 0 || b > 3 || c < 0 || c > 3) return 0.0;
        return s.wx[a] * s.wy[b] * s.wz[c];
    }

    // pure evaluation for an affine candidate
    double eval_affine(const AffineTransform& t) const {
        MetricAcc acc(metric_, bins_, lut_.get());
        for (const Sample& s : samples_) {
            double w;
            if (sample_moving(moving_, t.apply(s.q), w))
                acc.add(s.f, s.fbin, w, range_bin(w, rw_, bins_));
        }
        return acc.cost();
    }

    // pure evaluation for a bspline candidate (coefficients given)
    double eval_bspline(const std::vector<double>& coeffs) const {
        MetricAcc acc(metric_, bins_, lut_.get());
        for (const Sample& s : samples_) {
            Vec3 pos = s.q + bspline_disp(s, coeffs);
            double w;
            if (sample_moving(moving_, pos, w))
                acc.add(s.f, s.fbin, w, range_bin(w, rw_, bins_));
        }
        return acc.cost();
    }

    // refresh caches (and the working accumulator) for the current parameters
    double refresh_affine(const AffineTransform& t) {
        acc_ = std::make_unique<MetricAcc>(metric_, bins_, lut_.get());
        for (Sample& s : samples_) {
            double w;
            s.valid = sample_moving(moving_, t.apply(s.q), w);
            if (s.valid) {
                s.w = w;
                s.wbin = range_bin(w, rw_, bins_);
                acc_->add(s.f, s.fbin, s.w, s.wbin);
            }
        }
        return acc_->cost();
    }

    double refresh_bspline(const std::vector<double>& coeffs) {
        acc_ = std::make_unique<MetricAcc>(metric_, bins_, lut_.get());
        for (Sample& s : samples_) {
            s.disp = bspline_disp(s, coeffs);
            double w;
            s.valid = sample_moving(moving_, s.q + s.disp, w);
            if (s.valid) {
                s.w = w;
                s.wbin = range_bin(w, rw_, bins_);
                acc_->add(s.f, s.fbin, s.w, s.wbin);
            }
        }
        return acc_->cost();
    }

    // delta evaluation: one bspline coefficient (cp, comp) changed by `delta`;
    // uses and restores the cached accumulator
    double eval_bspline_delta(std::size_t cp, int comp, double delta) {
        const auto& affected = cp_samples_[cp];
        struct Undo {
            int si;
            double w;
            int wbin;
            bool valid;
        };
        undo_.clear();
        int ci = static_cast<int>(cp % grid_dims_[0]);
        int cj = static_cast<int>((cp / grid_dims_[0]) % grid_dims_[1]);
        int ck = static_cast<int>(cp / (static_cast<std::size_t>(grid_dims_[0]) * grid_dims_[1]));
        for (int si : affected) {
            Sample& s = samples_[si];
            double wgt = cp_weight(s, ci, cj, ck);
            Vec3 pos = s.q + s.disp;
            pos[comp] += delta * wgt;
            double w;
            bool valid = sample_moving(moving_, pos, w);
            if (valid == s.valid && valid && w == s.w) continue;
            undo_.push_back({si, s.w, s.wbin, s.valid});
            if (s.valid) acc_->remove(s.f, s.fbin, s.w, s.wbin);
            if (valid) {
                s.w = w;
                s.wbin = range_bin(w, rw_, bins_);
                s.valid = true;
                acc_->add(s.f, s.fbin, s.w, s.wbin);
            } else {
                s.valid = false;
            }
        }
        double c = acc_->cost();
        // roll back
        for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) {
            Sample& s = samples_[it->si];
            if (s.valid) acc_->remove(s.f, s.fbin, s.w, s.wbin);
            s.w = it->w;
            s.wbin = it->wbin;
            s.valid = it->valid;
            if (s.valid) acc_->add(s.f, s.fbin, s.w, s.wbin);
        }
        return c;
    }

    Vec3 bspline_disp(const Sample& s, const std::vector<double>& coeffs) const {
        if (!s.supported) return {0, 0, 0};
        Vec3 d{0, 0, 0};
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b) {
                double wyz = s.wy[b] * s.wz[c];
                for (int a = 0; a < 4; ++a) {
                    double wgt = s.wx[a] * wyz;
                    std::size_t idx = 3 * linear_index(grid_dims_, s.base[0] + a, s.base[1] + b,
                                                       s.base[2] + c);
                    d.x += wgt * coeffs[idx];
                    d.y += wgt * coeffs[idx + 1];
                    d.z += wgt * coeffs[idx + 2];
                }
            }
        return d;
    }

    const std::vector<std::vector<int>>& cp_sample_lists() const { return cp_samples_; }

  private:
    const ScalarVolume& moving_;
    Metric metric_;
    int bins_;
    Range rw_;
    std::unique_ptr<XLog2Table> lut_;
    std::vector<Sample> samples_;
    std::unique_ptr<MetricAcc> acc_;
    std::vector<std::vector<int>> cp_samples_;
    Dims3 grid_dims_{0, 0, 0};
    Vec3 grid_spacing_{1, 1, 1};
    Vec3 grid_origin_{0, 0, 0};
    struct UndoRec {
        int si;
        double w;
        int wbin;
        bool valid;
    };
    std::vector<UndoRec> undo_;
};

// Control-grid curvature term: analytic bending energy sampled at interior
// cell centers, maintained incrementally (quadratic in the coefficients).
class BendingTerm {
  public:
    BendingTerm(const BsplineTransform& t) : t_(&t) {
        for (int a = 0; a < 3; ++a) n_[a] = std::max(0, t.grid_dims[a] - 3);
        pts_ = static_cast<std::size_t>(n_[0]) * n_[1] * n_[2];
        cubic_at_half(w_, dw_, ddw_);
    }

    double energy(const std::vector<double>& coeffs) const {
        if (pts_ == 0) return 0.0;
        double total = 0.0;
        for (int k = 0; k < n_[2]; ++k)
            for (int j = 0; j < n_[1]; ++j)
                for (int i = 0; i < n_[0]; ++i) total += point_energy(coeffs, i + 1, j + 1, k + 1);
        return total / static_cast<double>(pts_);
    }

  private:
    static void cubic_at_half(double* w, double* dw, double* ddw) {
        double t = 0.5, t2 = t * t, t3 = t2 * t;
        w[0] = (1 - 3 * t + 3 * t2 - t3) / 6;
        w[1] = (4 - 6 * t2 + 3 * t3) / 6;
        w[2] = (1 + 3 * t + 3 * t2 - 3 * t3) / 6;
        w[3] = t3 / 6;
        dw[0] = -(1 - t) * (1 - t) / 2;
        dw[1] = (3 * t2 - 4 * t) / 2;
        dw[2] = (-3 * t2 + 2 * t + 1) / 2;
        dw[3] = t2 / 2;
        ddw[0] = 1 - t;
        ddw[1] = 3 * t - 2;
        ddw[2] = -3 * t + 1;
        ddw[3] = t;
    }

    double point_energy(const std::vector<double>& coeffs, int ci, int cj, int ck) const {
        const Vec3& gs = t_->grid_spacing;
        double d2[3][6] = {};
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b)
                for (int a = 0; a < 4; ++a) {
                    std::size_t idx = 3 * linear_index(t_->grid_dims, ci - 1 + a, cj - 1 + b,
                                                       ck - 1 + c);
                    double wxx = ddw_[a] * w_[b] * w_[c] / (gs.x * gs.x);
                    double wyy = w_[a] * ddw_[b] * w_[c] / (gs.y * gs.y);
                    double wzz = w_[a] * w_[b] * ddw_[c] / (gs.z * gs.z);
                    double wxy = dw_[a] * dw_[b] * w_[c] / (gs.x * gs.y);
                    double wxz = dw_[a] * w_[b] * dw_[c] / (gs.x * gs.z);
                    double wyz = w_[a] * dw_[b] * dw_[c] / (gs.y * gs.z);
                    for (int comp = 0; comp < 3; ++comp) {
                        double cf = coeffs[idx + comp];
                        d2[comp][0] += wxx * cf;
                        d2[comp][1] += wyy * cf;
                        d2[comp][2] += wzz * cf;
                        d2[comp][3] += wxy * cf;
                        d2[comp][4] += wxz * cf;
                        d2[comp][5] += wyz * cf;
                    }
                }
        double e = 0.0;
        for (int comp = 0; comp < 3; ++comp)
            e += d2[comp][0] * d2[comp][0] + d2[comp][1] * d2[comp][1] + d2[comp][2] * d2[comp][2] +
                 2 * (d2[comp][3] * d2[comp][3] + d2[comp][4] * d2[comp][4] +
                      d2[comp][5] * d2[comp][5]);
        return e;
    }

    const BsplineTransform* t_;
    int n_[3];
    std::size_t pts_ = 0;
    double w_[4], dw_[4], ddw_[4];
};

// Monotone descent on one pyramid level: per finite-difference gradient, walk
// along the descent direction with doubling steps while the cost improves;
// halve on a non-improving step; stop at step_min or the iteration cap.
void optimize_level(int max_iters, double& step, double step_init, double step_min,
                    std::vector<double>& x, double& cost, std::size_t stage_idx,
                    const std::function<void(double, std::vector<double>&)>& fd_gradient,
                    const std::function<double(const std::vector<double>&)>& eval,
                    const std::function<double(const std::vector<double>&)>& commit) {
    std::vector<double> grad(x.size()), cand(x.size());
    for (int iter = 0; iter < max_iters; ++iter) {
        double h = std::clamp(0.25 * step, 1e-4, 2.0);
        fd_gradient(h, grad);
        double gnorm = 0.0;
        for (double g : grad) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        if (!(gnorm > 1e-14)) return;

        bool moved = false;
        while (step >= step_min) {
            for (std::size_t j = 0; j < x.size(); ++j) cand[j] = x[j] - step / gnorm * grad[j];
            double c = eval(cand);
            if (!std::isfinite(c))
                throw std::runtime_error("optimizer divergence at stage " +
                                         std::to_string(stage_idx));
            if (c < cost) {
                x = cand;
                cost = commit(x);
                moved = true;
                step = std::min(step * 2.0, step_init);
            } else if (moved) {
                break;  // direction exhausted at this scale, fetch a new gradient
            } else {
                step /= 2;
            }
        }
        if (!moved) return;
    }
}

}  // namespace

RegistrationResult register_images(const ScalarVolume& fixed, const ScalarVolume& moving,
                                   const std::vector<ParameterMap>& maps, std::uint64_t seed) {
    if (maps.empty()) throw std::invalid_argument("no parameter maps");
    for (const auto& m : maps) m.validate();
    {
        auto [flo, fhi] = std::minmax_element(fixed.data.begin(), fixed.data.end());
        if (!(*fhi > *flo)) throw std::invalid_argument("fixed volume is constant");
        auto [mlo, mhi] = std::minmax_element(moving.data.begin(), moving.data.end());
        if (!(*mhi > *mlo)) throw std::invalid_argument("moving volume is constant");
    }

    Vec3 center = fixed.physical({(fixed.dims[0] - 1) / 2.0, (fixed.dims[1] - 1) / 2.0,
                                  (fixed.dims[2] - 1) / 2.0});
    double radius = 0.0;
    for (int a = 0; a < 3; ++a)
        radius = std::max(radius, (fixed.dims[a] - 1) * fixed.spacing[a] / 2.0);
    radius = std::max(radius, 1.0);

    RegistrationResult result;
    for (std::size_t stage_idx = 0; stage_idx < maps.size(); ++stage_idx) {
        const ParameterMap& map = maps[stage_idx];
        AffineModel affine;
        affine.center = center;
        affine.radius_mm = radius;
        BsplineModel bspline;
        if (map.transform_kind == TransformKind::Bspline) {
            bspline.t = BsplineTransform::for_volume(
                fixed, {map.grid_spacing_mm, map.grid_spacing_mm, map.grid_spacing_mm});
            if (fixed.dims[2] == 1) {
                // keep 2D problems 2D: a single-cell z extent with margin
                bspline.t.grid_spacing.z = std::max(1.0, fixed.spacing.z);
            }
        }
        BendingTerm bending(bspline.t);
        double stage_cost = 0.0;

        for (int level = 0; level < map.pyramid_levels; ++level) {
            int factor = map.pyramid_schedule[level];
            ScalarVolume fixed_l = pyramid_level(fixed, factor);
            ScalarVolume moving_l = pyramid_level(moving, factor);
            std::uint64_t sample_seed =
                Rng::splitmix64(seed ^ map.sampler_seed ^ (stage_idx * 131 + level + 1));
            CostEngine engine(fixed_l, moving_l, map, result.chain, sample_seed);

            double step = map.step_init;
            double cost;

            if (map.transform_kind == TransformKind::Affine) {
                cost = engine.refresh_affine(affine.transform());
                auto eval = [&](const std::vector<double>& x) {
                    AffineModel m = affine;
                    m.x = x;
                    return engine.eval_affine(m.transform());
                };
                auto commit = [&](const std::vector<double>& x) {
                    affine.x = x;
                    return engine.refresh_affine(affine.transform());
                };
                auto fd_gradient = [&](double h, std::vector<double>& grad) {
                    for (int j = 0; j < 12; ++j) {
                        double cp = engine.eval_affine(affine.transform_with(j, +h));
                        double cm = engine.eval_affine(affine.transform_with(j, -h));
                        grad[j] = (cp - cm) / (2 * h);
                    }
                };
                optimize_level(map.iterations_per_level[level], step, map.step_init,
                               map.step_min, affine.x, cost, stage_idx, fd_gradient, eval,
                               commit);
            } else {
                engine.attach_bspline(bspline.t);
                auto& coeffs = bspline.t.coefficients;
                const std::size_t ncp = bspline.t.control_point_count();
                cost = engine.refresh_bspline(coeffs);
                if (map.bending_weight > 0) cost += map.bending_weight * bending.energy(coeffs);

                auto eval = [&](const std::vector<double>& x) {
                    double c = engine.eval_bspline(x);
                    if (map.bending_weight > 0) c += map.bending_weight * bending.energy(x);
                    return c;
                };
                auto commit = [&](const std::vector<double>& x) {
                    // x aliases coeffs through optimize_level's assignment
                    double c = engine.refresh_bspline(x);
                    if (map.bending_weight > 0) c += map.bending_weight * bending.energy(x);
                    return c;
                };
                auto fd_gradient = [&](double h, std::vector<double>& grad) {
                    const auto& lists = engine.cp_sample_lists();
                    for (std::size_t cp = 0; cp < ncp; ++cp) {
                        if (lists[cp].empty()) {
                            grad[3 * cp] = grad[3 * cp + 1] = grad[3 * cp + 2] = 0.0;
                            continue;
                        }
                        for (int comp = 0; comp < 3; ++comp) {
                            double cpv = engine.eval_bspline_delta(cp, comp, +h);
                            double cmv = engine.eval_bspline_delta(cp, comp, -h);
                            grad[3 * cp + comp] = (cpv - cmv) / (2 * h);
                        }
                    }
                    if (map.bending_weight > 0) {
                        // central differences of the quadratic curvature term
                        for (std::size_t j = 0; j < coeffs.size(); ++j) {
                            if (lists[j / 3].empty()) continue;
                            double orig = coeffs[j];
                            coeffs[j] = orig + h;
                            double bp = bending.energy(coeffs);
                            coeffs[j] = orig - h;
                            double bm = bending.energy(coeffs);
                            coeffs[j] = orig;
                            grad[j] += map.bending_weight * (bp - bm) / (2 * h);
                        }
                    }
                };
                optimize_level(map.iterations_per_level[level], step, map.step_init,
                               map.step_min, coeffs, cost, stage_idx, fd_gradient, eval,
                               commit);
            }
            stage_cost = cost;
        }

        if (map.transform_kind == TransformKind::Affine)
            result.chain.stages.push_back(affine.transform());
        else
            result.chain.stages.push_back(bspline.t);
        result.per_stage_costs.push_back(stage_cost);
    }
    return result;
}

}  // namespace mia
