#include "mia/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mia {
namespace {

struct MetaHeader {
    Dims3 dims{0, 0, 0};
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    std::string element_type;
    std::string data_file;  // "LOCAL" or a filename
    std::streampos payload_start = 0;
};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

MetaHeader parse_meta_header(std::istream& in, const std::string& path) {
    MetaHeader h;
    bool have_dims = false, have_type = false;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ": malformed header line '" + trim(line) + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key == "ObjectType") {
            if (value != "Image") throw std::runtime_error(path + ": ObjectType must be Image");
        } else if (key == "NDims") {
            if (value != "3") throw std::runtime_error(path + ": NDims must be 3");
        } else if (key == "DimSize") {
            std::istringstream vs(value);
            if (!(vs >> h.dims[0] >> h.dims[1] >> h.dims[2]))
                throw std::runtime_error(path + ": bad DimSize");
            have_dims = true;
        } else if (key == "ElementSpacing") {
            std::istringstream vs(value);
            if (!(vs >> h.spacing.x >> h.spacing.y >> h.spacing.z))
                throw std::runtime_error(path + ": bad ElementSpacing");
        } else if (key == "Offset") {
            std::istringstream vs(value);
            if (!(vs >> h.origin.x >> h.origin.y >> h.origin.z))
                throw std::runtime_error(path + ": bad Offset");
        } else if (key == "ElementType") {
            h.element_type = value;
            have_type = true;
        } else if (key == "ElementDataFile") {
            h.data_file = value;
            h.payload_start = in.tellg();
            break;  // payload (or nothing) follows
        } else {
            throw std::runtime_error(path + ": unknown header key '" + key + "'");
        }
    }
    if (!have_dims || !have_type || h.data_file.empty())
        throw std::runtime_error(path + ": missing required header keys");
    if (h.dims[0] <= 0 || h.dims[1] <= 0 || h.dims[2] <= 0)
        throw std::runtime_error(path + ": non-positive DimSize");
    if (h.spacing.x <= 0 || h.spacing.y <= 0 || h.spacing.z <= 0)
        throw std::runtime_error(path + ": non-positive spacing");
    return h;
}

std::size_t element_size(const std::string& type, const std::string& path) {
    if (type == "MET_UCHAR") return 1;
    if (type == "MET_SHORT") return 2;
    if (type == "MET_FLOAT") return 4;
    if (type == "MET_DOUBLE") return 8;
    throw std::runtime_error(path + ": unsupported ElementType '" + type + "'");
}

std::vector<char> read_payload(const std::string& header_path, const MetaHeader& h) {
    std::size_t n = voxel_count(h.dims) * element_size(h.element_type, header_path);
    std::vector<char> buf(n);
    if (h.data_file == "LOCAL") {
        std::ifstream in(header_path, std::ios::binary);
        in.seekg(h.payload_start);
        in.read(buf.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw std::runtime_error(header_path + ": payload size mismatch");
        char extra;
        if (in.read(&extra, 1))
            throw std::runtime_error(header_path + ": payload size mismatch");
    } else {
        auto dir = std::filesystem::path(header_path).parent_path();
        auto raw_path = (dir / h.data_file).string();
        std::ifstream in(raw_path, std::ios::binary);
        if (!in) throw std::runtime_error(raw_path + ": cannot open raw payload");
        in.read(buf.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw std::runtime_error(raw_path + ": payload size mismatch");
        char extra;
        if (in.read(&extra, 1))
            throw std::runtime_error(raw_path + ": payload size mismatch");
    }
    return buf;
}

// Payload is little-endian on disk; this code assumes a little-endian host.
template <typename T>
void decode(const std::vector<char>& buf, std::vector<double>& out) {
    std::size_t n = buf.size() / sizeof(T);
    out.resize(n);
    const T* src = reinterpret_cast<const T*>(buf.data());
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(src[i]);
}

MetaHeader load_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    return parse_meta_header(in, path);
}

void write_meta(const std::string& path, const Dims3& dims, const Vec3& spacing,
                const Vec3& origin, const std::string& element_type, const char* payload,
                std::size_t payload_bytes) {
    std::ostringstream header;
    header << "ObjectType = Image\n";
    header << "NDims = 3\n";
    header << "DimSize = " << dims[0] << " " << dims[1] << " " << dims[2] << "\n";
    header << "ElementType = " << element_type << "\n";
    header.precision(17);
    header << "ElementSpacing = " << spacing.x << " " << spacing.y << " " << spacing.z << "\n";
    header << "Offset = " << origin.x << " " << origin.y << " " << origin.z << "\n";

    bool local = path.size() >= 4 && path.substr(path.size() - 4) == ".mha";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    if (local) {
        header << "ElementDataFile = LOCAL\n";
        out << header.str();
        out.write(payload, static_cast<std::streamsize>(payload_bytes));
    } else {
        auto raw_name = std::filesystem::path(path).filename().replace_extension(".raw").string();
        header << "ElementDataFile = " << raw_name << "\n";
        out << header.str();
        auto raw_path = std::filesystem::path(path).replace_extension(".raw").string();
        std::ofstream raw(raw_path, std::ios::binary);
        if (!raw) throw std::runtime_error(raw_path + ": cannot open for writing");
        raw.write(payload, static_cast<std::streamsize>(payload_bytes));
        if (!raw) throw std::runtime_error(raw_path + ": write failed");
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

ScalarVolume read_volume(const std::string& path) {
    MetaHeader h = load_meta(path);
    auto buf = read_payload(path, h);
    ScalarVolume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.origin = h.origin;
    if (h.element_type == "MET_UCHAR")
        decode<std::uint8_t>(buf, v.data);
    else if (h.element_type == "MET_SHORT")
        decode<std::int16_t>(buf, v.data);
    else if (h.element_type == "MET_FLOAT")
        decode<float>(buf, v.data);
    else
        decode<double>(buf, v.data);
    return v;
}

LabelVolume read_label_volume(const std::string& path, int min_class_count) {
    ScalarVolume v = read_volume(path);
    LabelVolume l;
    l.dims = v.dims;
    l.spacing = v.spacing;
    l.origin = v.origin;
    l.data.resize(v.data.size());
    int max_label = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        double d = v.data[i];
        if (d < 0 || d > 255 || d != std::floor(d))
            throw std::runtime_error(path + ": value " + std::to_string(d) +
                                     " is not a small non-negative integer label");
        l.data[i] = static_cast<std::uint8_t>(d);
        max_label = std::max(max_label, static_cast<int>(l.data[i]));
    }
    l.class_count = std::max(max_label + 1, std::max(min_class_count, 1));
    return l;
}

void write_volume(const ScalarVolume& vol, const std::string& path) {
    if (vol.data.size() != voxel_count(vol.dims))
        throw std::invalid_argument("volume data length does not match dims");
    write_meta(path, vol.dims, vol.spacing, vol.origin, "MET_DOUBLE",
               reinterpret_cast<const char*>(vol.data.data()), vol.data.size() * sizeof(double));
}

void write_volume(const LabelVolume& vol, const std::string& path) {
    if (vol.data.size() != voxel_count(vol.dims))
        throw std::invalid_argument("label data length does not match dims");
    write_meta(path, vol.dims, vol.spacing, vol.origin, "MET_UCHAR",
               reinterpret_cast<const char*>(vol.data.data()), vol.data.size());
}

LandmarkSet read_landmarks(const std::string& path, const Vec3& spacing, bool one_based) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    LandmarkSet lms;
    lms.spacing = spacing;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p.x >> p.y >> p.z))
            throw std::runtime_error(path + ": malformed line " + std::to_string(line_no));
        std::string rest;
        if (ls >> rest)
            throw std::runtime_error(path + ": wrong arity on line " + std::to_string(line_no));
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw std::runtime_error(path + ": non-finite coordinate on line " +
                                     std::to_string(line_no));
        if (one_based) p = p - Vec3{1, 1, 1};
        lms.points.push_back(p);
    }
    if (lms.points.empty()) throw std::runtime_error(path + ": no landmarks");
    return lms;
}

void write_landmarks(const LandmarkSet& lms, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.precision(17);
    for (const auto& p : lms.points) out << p.x << " " << p.y << " " << p.z << "\n";
    if (!out) throw std::runtime_error(path + ": write failed");
}

namespace {

int read_pnm_token(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments between header tokens
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF) throw std::runtime_error(path + ": truncated PNM header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error(path + ": bad PNM header token");
    return value;
}

void read_pnm(const std::string& path, int expected_kind, int& w, int& h,
              std::vector<std::uint8_t>& bytes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw std::runtime_error(path + ": not a binary PNM (P5/P6) file");
    int kind = magic[1] - '0';
    if (kind != expected_kind)
        throw std::runtime_error(path + ": expected P" + std::to_string(expected_kind) +
                                 ", found P" + std::to_string(kind));
    w = read_pnm_token(in, path);
    h = read_pnm_token(in, path);
    int maxval = read_pnm_token(in, path);
    if (w <= 0 || h <= 0) throw std::runtime_error(path + ": non-positive PNM size");
    if (maxval != 255) throw std::runtime_error(path + ": only maxval 255 is supported");
    // exactly one whitespace byte separates maxval from the payload; the
    // token reader already consumed it
    std::size_t n = static_cast<std::size_t>(w) * h * (kind == 6 ? 3 : 1);
    bytes.resize(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw std::runtime_error(path + ": truncated PNM payload");
}

}  // namespace

ColorImage read_image(const std::string& path) {
    ColorImage img;
    read_pnm(path, 6, img.width, img.height, img.data);
    return img;
}

ScalarVolume read_gray_image(const std::string& path) {
    int w = 0, h = 0;
    std::vector<std::uint8_t> bytes;
    read_pnm(path, 5, w, h, bytes);
    ScalarVolume v = make_image2d(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) v.data[i] = bytes[i];
    return v;
}

void write_image(const ColorImage& img, const std::string& path) {
    if (img.data.size() != img.pixel_count() * 3)
        throw std::invalid_argument("color image data length mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

void write_gray_image(const ScalarVolume& img, const std::string& path) {
    if (img.dims[2] != 1) throw std::invalid_argument("write_gray_image needs a 2D volume");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "P5\n" << img.dims[0] << " " << img.dims[1] << "\n255\n";
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = std::clamp(img.data[i], 0.0, 255.0);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace mia
