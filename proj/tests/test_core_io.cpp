#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mia/io.hpp"
#include "mia/rng.hpp"

using namespace mia;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        auto d = fs::temp_directory_path() / "mia_io_tests";
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string tmp(const std::string& name) { return (temp_dir() / name).string(); }

}  // namespace

TEST_CASE("read_volume decodes a small MET_UCHAR file") {
    std::string path = tmp("tiny.mha");
    {
        std::ofstream out(path, std::ios::binary);
        out << "ObjectType = Image\nNDims = 3\nDimSize = 2 2 1\nElementType = MET_UCHAR\n"
               "ElementSpacing = 1 1 1\nElementDataFile = LOCAL\n";
        const unsigned char bytes[] = {0, 1, 2, 3};
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
    ScalarVolume v = read_volume(path);
    CHECK(v.dims == Dims3{2, 2, 1});
    CHECK(v.data == std::vector<double>{0, 1, 2, 3});
}

TEST_CASE("read_volume rejects a short payload") {
    std::string path = tmp("short.mha");
    {
        std::ofstream out(path, std::ios::binary);
        out << "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementType = MET_UCHAR\n"
               "ElementSpacing = 1 1 1\nElementDataFile = LOCAL\n";
        std::vector<char> bytes(63, 7);
        out.write(bytes.data(), 63);
    }
    CHECK_THROWS_WITH_AS(read_volume(path), doctest::Contains("payload size mismatch"),
                         std::runtime_error);
}

TEST_CASE("read_volume rejects unknown keys and bad spacing") {
    std::string path = tmp("bad_key.mha");
    {
        std::ofstream out(path, std::ios::binary);
        out << "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nBogusKey = 1\n"
               "ElementType = MET_UCHAR\nElementDataFile = LOCAL\n";
        out.put(0);
    }
    CHECK_THROWS(read_volume(path));

    std::string path2 = tmp("bad_spacing.mha");
    {
        std::ofstream out(path2, std::ios::binary);
        out << "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\n"
               "ElementSpacing = 0 1 1\nElementDataFile = LOCAL\n";
        out.put(0);
    }
    CHECK_THROWS_WITH_AS(read_volume(path2), doctest::Contains("non-positive spacing"),
                         std::runtime_error);
}

TEST_CASE("volume round trip is exact for random volumes") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        ScalarVolume v = make_volume({8, 8, 8}, {0.5, 1.0, 2.0}, {1.5, -3.0, 0.25});
        for (auto& x : v.data) x = rng.uniform(-100.0, 100.0);
        std::string path = tmp("rt" + std::to_string(trial) + ".mha");
        write_volume(v, path);
        ScalarVolume r = read_volume(path);
        CHECK(r.dims == v.dims);
        CHECK(r.spacing.x == v.spacing.x);
        CHECK(r.origin.z == v.origin.z);
        CHECK(r.data == v.data);  // MET_DOUBLE payload is bit-exact
    }
}

TEST_CASE("label volumes use the smallest sufficient element type") {
    LabelVolume l = make_labels({3, 2, 1}, 4);
    l.data = {0, 1, 2, 3, 1, 0};
    std::string path = tmp("labels.mha");
    write_volume(l, path);
    {
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        CHECK(text.find("ElementType = MET_UCHAR") != std::string::npos);
    }
    LabelVolume r = read_label_volume(path);
    CHECK(r.data == l.data);
    CHECK(r.class_count == 4);
}

TEST_CASE("mhd header with external raw payload round trips") {
    ScalarVolume v = make_volume({4, 3, 2});
    Rng rng(7);
    for (auto& x : v.data) x = rng.uniform();
    std::string path = tmp("split.mhd");
    write_volume(v, path);
    CHECK(fs::exists(tmp("split.raw")));
    ScalarVolume r = read_volume(path);
    CHECK(r.data == v.data);
}

TEST_CASE("all-zero 1x1x1 label volume writes a 1-byte payload") {
    LabelVolume l = make_labels({1, 1, 1}, 2);
    std::string path = tmp("one.mhd");
    write_volume(l, path);
    CHECK(fs::file_size(tmp("one.raw")) == 1);
}

TEST_CASE("landmark files parse in order") {
    std::string path = tmp("lms.txt");
    {
        std::ofstream out(path);
        out << "0 0 0\n3 4 0\n";
    }
    LandmarkSet lms = read_landmarks(path, {1, 1, 1});
    REQUIRE(lms.size() == 2);
    CHECK(lms.points[1].x == 3.0);
    CHECK(lms.points[1].y == 4.0);
}

TEST_CASE("empty landmark file is an error") {
    std::string path = tmp("empty.txt");
    std::ofstream(path).close();
    CHECK_THROWS_WITH_AS(read_landmarks(path, {1, 1, 1}), doctest::Contains("no landmarks"),
                         std::runtime_error);
}

TEST_CASE("malformed and wrong-arity landmark lines are errors") {
    std::string path = tmp("bad_lms.txt");
    {
        std::ofstream out(path);
        out << "1 2\n";
    }
    CHECK_THROWS(read_landmarks(path, {1, 1, 1}));
    {
        std::ofstream out(path);
        out << "1 2 3 4\n";
    }
    CHECK_THROWS_WITH_AS(read_landmarks(path, {1, 1, 1}), doctest::Contains("wrong arity"),
                         std::runtime_error);
}

TEST_CASE("a 300-line landmark file keeps all points in order") {
    std::string path = tmp("bigcase.txt");
    {
        std::ofstream out(path);
        for (int i = 0; i < 300; ++i) out << i << " " << 2 * i << " " << i % 7 << "\n";
    }
    LandmarkSet lms = read_landmarks(path, {1, 1, 1});
    REQUIRE(lms.size() == 300);
    for (int i = 0; i < 300; ++i) CHECK(lms.points[i].x == doctest::Approx(i));
}

TEST_CASE("one-based flag shifts landmark coordinates down by one") {
    std::string path = tmp("onebased.txt");
    {
        std::ofstream out(path);
        out << "1 1 1\n10 20 30\n";
    }
    LandmarkSet lms = read_landmarks(path, {1, 1, 1}, true);
    CHECK(lms.points[0].x == 0.0);
    CHECK(lms.points[1].z == 29.0);
}

TEST_CASE("P6 single red pixel decodes") {
    std::string path = tmp("red.ppm");
    {
        std::ofstream out(path, std::ios::binary);
        out << "P6\n1 1\n255\n";
        const unsigned char px[] = {255, 0, 0};
        out.write(reinterpret_cast<const char*>(px), 3);
    }
    ColorImage img = read_image(path);
    CHECK(img.width == 1);
    CHECK(img.channel(0, 0, 0) == 255);
    CHECK(img.channel(0, 0, 1) == 0);
}

TEST_CASE("P5 grayscale decodes to a 2D volume") {
    std::string path = tmp("gray.pgm");
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n2 2\n255\n";
        const unsigned char px[] = {0, 85, 170, 255};
        out.write(reinterpret_cast<const char*>(px), 4);
    }
    ScalarVolume v = read_gray_image(path);
    CHECK(v.dims == Dims3{2, 2, 1});
    CHECK(v.data == std::vector<double>{0, 85, 170, 255});
}

TEST_CASE("random P6 image round trips exactly") {
    Rng rng(99);
    ColorImage img;
    img.width = 32;
    img.height = 32;
    img.data.resize(32 * 32 * 3);
    for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
    std::string path = tmp("rt.ppm");
    write_image(img, path);
    ColorImage r = read_image(path);
    CHECK(r.width == img.width);
    CHECK(r.data == img.data);
}

TEST_CASE("non-PNM magic and truncated payloads are errors") {
    std::string path = tmp("not_pnm.ppm");
    {
        std::ofstream out(path, std::ios::binary);
        out << "JUNK";
    }
    CHECK_THROWS(read_image(path));

    std::string path2 = tmp("trunc.ppm");
    {
        std::ofstream out(path2, std::ios::binary);
        out << "P6\n4 4\n255\n";
        out.put(1);
    }
    CHECK_THROWS_WITH_AS(read_image(path2), doctest::Contains("truncated"), std::runtime_error);
}

TEST_CASE("physical coordinate conversion is origin + p * spacing") {
    ScalarVolume v = make_volume({4, 4, 4}, {2, 3, 4}, {10, 20, 30});
    Vec3 p = v.physical({1, 1, 1});
    CHECK(p.x == 12.0);
    CHECK(p.y == 23.0);
    CHECK(p.z == 34.0);
    ScalarVolume ident = make_volume({4, 4, 4});
    Vec3 q = ident.physical({1, 2, 3});
    CHECK(q.x == 1.0);
    CHECK(q.y == 2.0);
    CHECK(q.z == 3.0);
}

TEST_CASE("portable rng reproduces across instances") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(124);
    CHECK(Rng(123).next_u64() != c.next_u64());
    Rng u(5);
    for (int i = 0; i < 1000; ++i) {
        double x = u.uniform();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
}
